#ifndef SCVAE_TRAINER_HPP
#define SCVAE_TRAINER_HPP

#include <filesystem>
#include <optional>
#include <vector>

#include "scvae/checkpoint.hpp"
#include "scvae/config.hpp"
#include "scvae/model.hpp"
#include "scvae/optim.hpp"

namespace scvae {

struct TrainResult {
    Checkpoint last;
    Checkpoint best;                       // lowest epoch-mean total loss
    bool best_updated = false;             // best improved during this run
    std::vector<LossReport> epoch_reports; // one mean report per completed epoch
};

// Deterministic mini-batch training. Given (seed, config, data) every
// checkpoint byte is reproducible: parameter init is seeded, the data order
// for epoch e is a pure function of (seed, e), and the last partial batch of
// each epoch is dropped. Resuming from a checkpoint at step s and training to
// step t is bit-identical to training straight to t.
//
// When out_dir is non-empty the trainer writes last.scvk (at the end and
// every checkpoint_every steps), best.scvk (on improvement) and losses.csv.
TrainResult train(const TrainConfig& cfg, const std::optional<Checkpoint>& resume = std::nullopt,
                  const std::filesystem::path& out_dir = {});

// Model/optimizer state <-> checkpoint container glue. Adam may be null when
// snapshotting an inference-only model.
Checkpoint model_to_checkpoint(Model& model, Adam* adam, const TrainConfig& cfg, std::int64_t step);

struct LoadedModel {
    Model model;
    TrainConfig cfg;
    std::int64_t step = 0;
};
LoadedModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace scvae

#endif
