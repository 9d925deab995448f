#include "scvae/config.hpp"

#include <fstream>
#include <sstream>

namespace scvae {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_num(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("invalid numeric value \"" + v + "\" for key " + key);
    }
}

int parse_int(const std::string& key, const std::string& v) {
    const double d = parse_num(key, v);
    const int i = static_cast<int>(d);
    if (static_cast<double>(i) != d) throw ConfigError("expected an integer for key " + key + ", got " + v);
    return i;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("expected a boolean for key " + key + ", got " + v);
}

}  // namespace

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    model.validate();
}

TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected `key = value`, got \"" + line + "\"");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "learning_rate") {
            cfg.learning_rate = parse_num(key, val);
        } else if (key == "batch_size") {
            cfg.batch_size = parse_int(key, val);
        } else if (key == "epochs") {
            cfg.epochs = parse_int(key, val);
        } else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(std::stoull(val));
        } else if (key == "adam_beta1") {
            cfg.adam_beta1 = parse_num(key, val);
        } else if (key == "adam_beta2") {
            cfg.adam_beta2 = parse_num(key, val);
        } else if (key == "adam_eps") {
            cfg.adam_eps = parse_num(key, val);
        } else if (key == "checkpoint_every") {
            cfg.checkpoint_every = parse_int(key, val);
        } else if (key == "data_dir") {
            cfg.data_dir = val;
        } else if (key == "model.image_size") {
            cfg.model.image_size = parse_int(key, val);
        } else if (key == "model.channels") {
            cfg.model.channels = parse_int(key, val);
        } else if (key == "model.downsample_blocks") {
            cfg.model.downsample_blocks = parse_int(key, val);
        } else if (key == "model.latent_dim") {
            cfg.model.latent_dim = parse_int(key, val);
        } else if (key == "model.dict_atoms") {
            cfg.model.dict_atoms = parse_int(key, val);
        } else if (key == "model.lista_steps") {
            cfg.model.lista_steps = parse_int(key, val);
        } else if (key == "model.alpha") {
            cfg.model.alpha = parse_num(key, val);
        } else if (key == "model.base_channels") {
            cfg.model.base_channels = parse_int(key, val);
        } else if (key == "model.mid_channels") {
            cfg.model.mid_channels = parse_int(key, val);
        } else if (key == "model.use_nonlocal") {
            cfg.model.use_nonlocal = parse_bool(key, val);
        } else {
            throw ConfigError("unknown key \"" + key + "\" on line " + std::to_string(line_no));
        }
    }
    return cfg;
}

TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_train_config_text(ss.str());
}

std::string serialize_train_config(const TrainConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "learning_rate = " << cfg.learning_rate << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "adam_beta1 = " << cfg.adam_beta1 << "\n";
    os << "adam_beta2 = " << cfg.adam_beta2 << "\n";
    os << "adam_eps = " << cfg.adam_eps << "\n";
    os << "checkpoint_every = " << cfg.checkpoint_every << "\n";
    os << "data_dir = " << cfg.data_dir << "\n";
    os << "model.image_size = " << cfg.model.image_size << "\n";
    os << "model.channels = " << cfg.model.channels << "\n";
    os << "model.downsample_blocks = " << cfg.model.downsample_blocks << "\n";
    os << "model.latent_dim = " << cfg.model.latent_dim << "\n";
    os << "model.dict_atoms = " << cfg.model.dict_atoms << "\n";
    os << "model.lista_steps = " << cfg.model.lista_steps << "\n";
    os << "model.alpha = " << cfg.model.alpha << "\n";
    os << "model.base_channels = " << cfg.model.base_channels << "\n";
    os << "model.mid_channels = " << cfg.model.mid_channels << "\n";
    os << "model.use_nonlocal = " << (cfg.model.use_nonlocal ? "true" : "false") << "\n";
    return os.str();
}

}  // namespace scvae
