#include "scvae/trainer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "scvae/dataset.hpp"
#include "scvae/rng.hpp"

namespace scvae {

namespace {

struct RunningMeta {
    double best_total = std::numeric_limits<double>::infinity();
    double best_step = 0.0;
    double sum_total = 0.0;
    double sum_rec = 0.0;
    double sum_latent = 0.0;
    double sum_hoyer = 0.0;
    double count = 0.0;
};

void put_meta(Checkpoint& ck, std::int64_t step, const RunningMeta& m) {
    ck.set_scalar("meta.step", static_cast<double>(step));
    ck.set_scalar("meta.best_total", m.best_total);
    ck.set_scalar("meta.best_step", m.best_step);
    ck.set_scalar("meta.epoch_sum_total", m.sum_total);
    ck.set_scalar("meta.epoch_sum_rec", m.sum_rec);
    ck.set_scalar("meta.epoch_sum_latent", m.sum_latent);
    ck.set_scalar("meta.epoch_sum_hoyer", m.sum_hoyer);
    ck.set_scalar("meta.epoch_count", m.count);
}

RunningMeta get_meta(const Checkpoint& ck) {
    RunningMeta m;
    m.best_total = ck.scalar("meta.best_total");
    m.best_step = ck.scalar("meta.best_step");
    m.sum_total = ck.scalar("meta.epoch_sum_total");
    m.sum_rec = ck.scalar("meta.epoch_sum_rec");
    m.sum_latent = ck.scalar("meta.epoch_sum_latent");
    m.sum_hoyer = ck.scalar("meta.epoch_sum_hoyer");
    m.count = ck.scalar("meta.epoch_count");
    return m;
}

const Tensor& require_entry(const Checkpoint& ck, const std::string& name) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw FormatError("checkpoint is missing tensor \"" + name + "\"");
    return it->second;
}

// Fields that must agree between a checkpoint's config and the resuming
// config; epochs and data_dir may legitimately change.
std::string resume_signature(const TrainConfig& cfg) {
    TrainConfig c = cfg;
    c.epochs = 1;
    c.data_dir.clear();
    c.checkpoint_every = 0;
    return serialize_train_config(c);
}

Checkpoint snapshot(Model& model, Adam* adam, const TrainConfig& cfg, std::int64_t step, const RunningMeta& meta) {
    Checkpoint ck = model_to_checkpoint(model, adam, cfg, step);
    put_meta(ck, step, meta);
    return ck;
}

void write_losses_csv(const std::filesystem::path& path, const std::vector<LossReport>& reports, int first_epoch) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "epoch,mean_total,mean_rec,mean_latent,mean_hoyer\n";
    char buf[256];
    for (std::size_t i = 0; i < reports.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", first_epoch + static_cast<int>(i),
                      reports[i].total, reports[i].rec, reports[i].latent, reports[i].sparsity_hoyer);
        f << buf;
    }
}

}  // namespace

Checkpoint model_to_checkpoint(Model& model, Adam* adam, const TrainConfig& cfg, std::int64_t step) {
    Checkpoint ck;
    for_each_param(model.weights, [&](const std::string& name, Tensor& t, bool) { ck.tensors[name] = t.clone(); });
    if (adam) {
        adam->for_each_state([&](const std::string& name, Tensor& t) { ck.tensors[name] = t.clone(); });
        ck.set_scalar("adam.t", static_cast<double>(adam->steps_taken()));
    }
    ck.tensors["dictionary.atoms"] = model.dict.atoms.clone();
    ck.set_scalar("dictionary.lipschitz", model.dict.lipschitz_bound);
    ck.set_scalar("meta.step", static_cast<double>(step));
    ck.set_text("config.text", serialize_train_config(cfg));
    return ck;
}

LoadedModel model_from_checkpoint(const Checkpoint& ckpt) {
    LoadedModel lm;
    lm.cfg = parse_train_config_text(ckpt.text("config.text"));
    const Tensor& atoms = require_entry(ckpt, "dictionary.atoms");
    Dictionary dict;
    dict.atoms = atoms.clone();
    dict.n = atoms.dim(0);
    dict.K = atoms.dim(1);
    dict.lipschitz_bound = ckpt.scalar("dictionary.lipschitz");
    const Dtype dtype = require_entry(ckpt, "enc.in_conv.weight").dtype();
    lm.model = init_model(lm.cfg.model, dict, lm.cfg.seed, dtype);
    for_each_param(lm.model.weights, [&](const std::string& name, Tensor& t, bool) {
        t.copy_from(require_entry(ckpt, name));
    });
    lm.step = static_cast<std::int64_t>(ckpt.scalar("meta.step"));
    return lm;
}

TrainResult train(const TrainConfig& cfg, const std::optional<Checkpoint>& resume,
                  const std::filesystem::path& out_dir) {
    cfg.validate();
    Dataset ds = load_dataset(cfg.data_dir, cfg.model.image_size, cfg.model.channels);
    const std::int64_t n_images = static_cast<std::int64_t>(ds.images.size());
    if (n_images < cfg.batch_size) {
        throw IoError("dataset has " + std::to_string(n_images) + " images, need at least one batch of " +
                      std::to_string(cfg.batch_size));
    }

    Model model;
    RunningMeta meta;
    std::int64_t step = 0;
    if (resume) {
        LoadedModel lm = model_from_checkpoint(*resume);
        if (resume_signature(lm.cfg) != resume_signature(cfg)) {
            throw ConfigError("resume checkpoint was trained with an incompatible config");
        }
        model = std::move(lm.model);
        step = lm.step;
        meta = get_meta(*resume);
    } else {
        Dictionary dict = build_dct_dictionary(cfg.model.latent_dim, cfg.model.dict_atoms);
        model = init_model(cfg.model, dict, cfg.seed, Dtype::F32);
    }

    Adam adam({cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    for_each_param(model.weights, [&](const std::string& name, Tensor& t, bool clamp_nonneg) {
        adam.register_param(name, t, clamp_nonneg);
    });
    if (resume) {
        adam.for_each_state(
            [&](const std::string& name, Tensor& t) { t.copy_from(require_entry(*resume, name)); });
        adam.set_steps_taken(static_cast<std::int64_t>(resume->scalar("adam.t")));
    }

    // Images cast once to the training dtype.
    std::vector<Tensor> pool;
    pool.reserve(static_cast<std::size_t>(n_images));
    for (const Tensor& img : ds.images) pool.push_back(img.astype(model.dtype));

    const std::int64_t bsz = cfg.batch_size;
    const std::int64_t c = cfg.model.channels, hw = cfg.model.image_size;
    const std::int64_t steps_per_epoch = n_images / bsz;
    const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;

    TrainResult result;
    const int first_epoch = static_cast<int>(step / steps_per_epoch);
    std::int64_t perm_epoch = -1;
    std::vector<std::size_t> perm;
    Tensor batch({bsz, c, hw, hw}, model.dtype);
    const std::size_t img_bytes = static_cast<std::size_t>(c * hw * hw) * dtype_size(model.dtype);

    while (step < total_steps) {
        const std::int64_t epoch = step / steps_per_epoch;
        const std::int64_t pos = step % steps_per_epoch;
        if (epoch != perm_epoch) {
            perm = Rng(mix_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(epoch))).permutation(
                static_cast<std::size_t>(n_images));
            perm_epoch = epoch;
        }
        for (std::int64_t b = 0; b < bsz; ++b) {
            const Tensor& img = pool[perm[static_cast<std::size_t>(pos * bsz + b)]];
            std::memcpy(batch.impl()->data.data() + static_cast<std::size_t>(b) * img_bytes,
                        img.impl()->data.data(), img_bytes);
        }

        Tape tape;
        LossReport report;
        try {
            ForwardResult fr = model_forward(&tape, model, batch);
            report = fr.loss.report;
            tape.backward(fr.loss.total);
        } catch (const NumericError& e) {
            throw NumericError("training step " + std::to_string(step) + ": " + e.what());
        }
        adam.step();
        adam.zero_grad();

        meta.sum_total += report.total;
        meta.sum_rec += report.rec;
        meta.sum_latent += report.latent;
        meta.sum_hoyer += report.sparsity_hoyer;
        meta.count += 1.0;
        ++step;

        if (step % steps_per_epoch == 0) {
            LossReport mean;
            mean.total = meta.sum_total / meta.count;
            mean.rec = meta.sum_rec / meta.count;
            mean.latent = meta.sum_latent / meta.count;
            mean.sparsity_hoyer = meta.sum_hoyer / meta.count;
            result.epoch_reports.push_back(mean);
            meta.sum_total = meta.sum_rec = meta.sum_latent = meta.sum_hoyer = meta.count = 0.0;
            if (mean.total < meta.best_total) {
                meta.best_total = mean.total;
                meta.best_step = static_cast<double>(step);
                result.best = snapshot(model, &adam, cfg, step, meta);
                result.best_updated = true;
                if (!out_dir.empty()) save_checkpoint(result.best, out_dir / "best.scvk");
            }
        }
        if (!out_dir.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            save_checkpoint(snapshot(model, &adam, cfg, step, meta), out_dir / "last.scvk");
        }
    }

    result.last = snapshot(model, &adam, cfg, step, meta);
    if (!result.best_updated) result.best = result.last;
    if (!out_dir.empty()) {
        save_checkpoint(result.last, out_dir / "last.scvk");
        write_losses_csv(out_dir / "losses.csv", result.epoch_reports, first_epoch);
    }
    return result;
}

}  // namespace scvae
