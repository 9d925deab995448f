#ifndef SCVAE_MODEL_HPP
#define SCVAE_MODEL_HPP

#include <functional>
#include <optional>
#include <string>

#include "scvae/dictionary.hpp"
#include "scvae/ops.hpp"
#include "scvae/solvers.hpp"
#include "scvae/tensor.hpp"

namespace scvae {

struct ModelConfig {
    int image_size = 32;        // H = W
    int channels = 3;           // C
    int downsample_blocks = 1;  // d
    int latent_dim = 16;        // n
    int dict_atoms = 64;        // K
    int lista_steps = 8;        // s
    double alpha = 1.0;
    int base_channels = 16;     // feature width at full resolution
    int mid_channels = 32;      // feature width at the latent grid
    bool use_nonlocal = false;

    int grid_h() const { return image_size >> downsample_blocks; }
    int grid_w() const { return grid_h(); }
    void validate() const;
};

// A single image's latent grid: encoder outputs and, once sparse coding has
// run, the per-cell codes.
struct LatentGrid {
    Tensor values;  // h x w x n
    Tensor codes;   // h x w x K; undefined until sparse_code_grid
};

struct LossReport {
    double rec = 0.0;             // image-level squared error
    double latent = 0.0;          // per-cell code fit plus L1, summed
    double total = 0.0;           // rec + latent / (h*w)
    double sparsity_hoyer = 0.0;  // mean over all cells in the batch
};

// ---- layers ----

struct Conv2dLayer {
    Tensor weight;  // O x C x k x k
    Tensor bias;    // O
    int stride = 1;
    int pad = 1;
};

struct GroupNormLayer {
    Tensor gamma;
    Tensor beta;
    int groups = 1;
};

struct ResBlock {
    GroupNormLayer n1;
    Conv2dLayer c1;
    GroupNormLayer n2;
    Conv2dLayer c2;
    bool has_skip = false;
    Conv2dLayer skip;  // 1x1 projection when channel counts differ
};

struct AttnBlock {
    GroupNormLayer norm;
    Conv2dLayer q, k, v, proj;  // all 1x1
};

struct DownStage {
    ResBlock res;
    Conv2dLayer down;  // stride-2 conv
};

struct UpStage {
    ResBlock res;
    Conv2dLayer conv;  // follows nearest-neighbor 2x upsampling
};

struct EncoderWeights {
    Conv2dLayer in_conv;
    std::vector<DownStage> down;
    ResBlock mid1;
    std::optional<AttnBlock> attn;
    ResBlock mid2;
    GroupNormLayer out_norm;
    Conv2dLayer out_conv;
};

struct DecoderWeights {
    Conv2dLayer in_conv;
    ResBlock mid1;
    std::optional<AttnBlock> attn;
    ResBlock mid2;
    std::vector<UpStage> up;
    GroupNormLayer out_norm;
    Conv2dLayer out_conv;
};

struct ModelWeights {
    EncoderWeights enc;
    DecoderWeights dec;
    ListaParams lista;
};

// Encoder, decoder and LISTA weights plus the frozen dictionary.
struct Model {
    ModelConfig config;
    Dictionary dict;
    ModelWeights weights;
    Dtype dtype = Dtype::F32;
};

// Seeded He-style uniform init for convolutions, unit/zero group-norm affine,
// LISTA from the dictionary. All returned parameters require gradients.
Model init_model(const ModelConfig& config, const Dictionary& dict, std::uint64_t seed, Dtype dtype = Dtype::F32);

// Visit every trainable parameter. clamp_nonneg marks parameters that must be
// projected back to >= 0 after an optimizer step (the LISTA thresholds).
void for_each_param(ModelWeights& weights,
                    const std::function<void(const std::string&, Tensor&, bool clamp_nonneg)>& fn);

// Set every parameter to zero (test helper for the degenerate-stack cases).
void zero_all_params(ModelWeights& weights);

// ---- batched forward pieces (B x ... layout) ----

Tensor encode_batch(Tape* tape, const ModelConfig& config, const EncoderWeights& enc, const Tensor& images);
Tensor decode_batch(Tape* tape, const ModelConfig& config, const DecoderWeights& dec, const Tensor& latents);

// ---- single-image operations on the h x w grid ----

// images C x H x W with pixel values in [0, 1].
LatentGrid encode(const ModelConfig& config, const ModelWeights& weights, const Tensor& image, Tape* tape = nullptr);

// Fills codes[i,j] = lista_forward(params, values[i,j]) for every cell.
LatentGrid sparse_code_grid(const LatentGrid& latents, const ListaParams& params, Tape* tape = nullptr);

// E~_ij = Z_ij D^T per cell; the dictionary receives no gradient.
Tensor reconstruct_latents(const Tensor& codes, const Dictionary& dict, Tape* tape = nullptr);

Tensor decode(const ModelConfig& config, const ModelWeights& weights, const Tensor& latents, Tape* tape = nullptr);

// ---- losses ----

struct LossOutput {
    LossReport report;
    Tensor total;   // scalar, on tape
    Tensor rec;     // scalar, on tape
    Tensor latent;  // scalar, on tape
};

// Two-level objective. image/reconstruction are C x H x W or B x C x H x W;
// latents/codes are the matching grids, either h x w x {n,K} for a single
// image or (B*h*w) x {n,K} row-major stacks. Sums run over elements within a
// sample; batch dimension is averaged. total = rec + latent / (h*w).
LossOutput compute_losses(Tape* tape, const Tensor& image, const Tensor& reconstruction, const Tensor& latents,
                          const Tensor& codes, const Dictionary& dict, double alpha, int h, int w);

// Full training-path forward for a batch: encode, sparse-code, reconstruct
// latents, decode, losses.
struct ForwardResult {
    Tensor latents_rows;  // (B*h*w) x n
    Tensor codes_rows;    // (B*h*w) x K
    Tensor reconstruction;
    LossOutput loss;
};
ForwardResult model_forward(Tape* tape, const Model& model, const Tensor& images);

}  // namespace scvae

#endif
