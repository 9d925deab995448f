#ifndef SCVAE_CONFIG_HPP
#define SCVAE_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "scvae/model.hpp"

namespace scvae {

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 16;
    int epochs = 10;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int checkpoint_every = 0;  // steps; 0 disables periodic snapshots
    std::string data_dir;
    ModelConfig model;

    void validate() const;
};

// Config files are UTF-8 text, one `key = value` per line, `#` comments.
// Keys are the field names above, with `model.` prefixes for the nested
// model settings. Unknown keys are config errors.
TrainConfig parse_train_config_text(const std::string& text);
TrainConfig parse_train_config(const std::filesystem::path& path);

// Canonical textual form (round-trips through the parser).
std::string serialize_train_config(const TrainConfig& cfg);

}  // namespace scvae

#endif
