#include "scvae/model.hpp"

#include <cmath>
#include <string>

#include "scvae/metrics.hpp"
#include "scvae/rng.hpp"

namespace scvae {

namespace {

constexpr double kGnEps = 1e-6;

int norm_groups(int channels) {
    for (int g = 8; g > 1; --g) {
        if (channels % g == 0) return g;
    }
    return 1;
}

Tensor conv_apply(Tape* tape, const Conv2dLayer& layer, const Tensor& x) {
    Tensor y = ops::conv2d(tape, x, layer.weight, layer.stride, layer.pad);
    return ops::add_channel_bias(tape, y, layer.bias);
}

Tensor norm_apply(Tape* tape, const GroupNormLayer& layer, const Tensor& x) {
    return ops::group_norm(tape, x, layer.groups, layer.gamma, layer.beta, kGnEps);
}

Tensor resblock_apply(Tape* tape, const ResBlock& rb, const Tensor& x) {
    Tensor h = norm_apply(tape, rb.n1, x);
    h = ops::swish(tape, h);
    h = conv_apply(tape, rb.c1, h);
    h = norm_apply(tape, rb.n2, h);
    h = ops::swish(tape, h);
    h = conv_apply(tape, rb.c2, h);
    Tensor s = rb.has_skip ? conv_apply(tape, rb.skip, x) : x;
    return ops::add(tape, h, s);
}

Tensor attn_apply(Tape* tape, const AttnBlock& at, const Tensor& x) {
    const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor h = norm_apply(tape, at.norm, x);
    Tensor q = conv_apply(tape, at.q, h);
    Tensor k = conv_apply(tape, at.k, h);
    Tensor v = conv_apply(tape, at.v, h);
    q = ops::reshape(tape, q, {B, C, H * W});
    k = ops::reshape(tape, k, {B, C, H * W});
    v = ops::reshape(tape, v, {B, C, H * W});
    // scores[b][i][j] = <q_i, k_j> / sqrt(C)
    Tensor scores = ops::bmm(tape, q, k, true, false);
    scores = ops::scale(tape, scores, 1.0 / std::sqrt(static_cast<double>(C)));
    Tensor attn = ops::softmax_lastdim(tape, scores);
    Tensor out = ops::bmm(tape, v, attn, false, true);
    out = ops::reshape(tape, out, {B, C, H, W});
    out = conv_apply(tape, at.proj, out);
    return ops::add(tape, x, out);
}

// ---- init helpers ----

struct Init {
    Rng rng;
    Dtype dtype;

    Conv2dLayer conv(int in_c, int out_c, int k, int stride, int pad) {
        Conv2dLayer l;
        l.stride = stride;
        l.pad = pad;
        l.weight = Tensor({out_c, in_c, k, k}, dtype);
        const double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * k * k));
        for (std::int64_t i = 0; i < l.weight.numel(); ++i) l.weight.set(i, rng.uniform(-bound, bound));
        l.bias = Tensor::zeros({out_c}, dtype);
        l.weight.set_requires_grad(true);
        l.bias.set_requires_grad(true);
        return l;
    }

    GroupNormLayer norm(int channels) {
        GroupNormLayer l;
        l.groups = norm_groups(channels);
        l.gamma = Tensor::full({channels}, 1.0, dtype);
        l.beta = Tensor::zeros({channels}, dtype);
        l.gamma.set_requires_grad(true);
        l.beta.set_requires_grad(true);
        return l;
    }

    ResBlock res(int in_c, int out_c) {
        ResBlock rb;
        rb.n1 = norm(in_c);
        rb.c1 = conv(in_c, out_c, 3, 1, 1);
        rb.n2 = norm(out_c);
        rb.c2 = conv(out_c, out_c, 3, 1, 1);
        // Zero second conv: each block starts as its skip connection, which
        // shortens the early optimization transient considerably.
        for (std::int64_t i = 0; i < rb.c2.weight.numel(); ++i) rb.c2.weight.set(i, 0.0);
        rb.has_skip = in_c != out_c;
        if (rb.has_skip) rb.skip = conv(in_c, out_c, 1, 1, 0);
        return rb;
    }

    AttnBlock attn(int channels) {
        AttnBlock at;
        at.norm = norm(channels);
        at.q = conv(channels, channels, 1, 1, 0);
        at.k = conv(channels, channels, 1, 1, 0);
        at.v = conv(channels, channels, 1, 1, 0);
        at.proj = conv(channels, channels, 1, 1, 0);
        return at;
    }
};

void visit_conv(const std::string& prefix, Conv2dLayer& l,
                const std::function<void(const std::string&, Tensor&, bool)>& fn) {
    fn(prefix + ".weight", l.weight, false);
    fn(prefix + ".bias", l.bias, false);
}

void visit_norm(const std::string& prefix, GroupNormLayer& l,
                const std::function<void(const std::string&, Tensor&, bool)>& fn) {
    fn(prefix + ".gamma", l.gamma, false);
    fn(prefix + ".beta", l.beta, false);
}

void visit_res(const std::string& prefix, ResBlock& rb,
               const std::function<void(const std::string&, Tensor&, bool)>& fn) {
    visit_norm(prefix + ".n1", rb.n1, fn);
    visit_conv(prefix + ".c1", rb.c1, fn);
    visit_norm(prefix + ".n2", rb.n2, fn);
    visit_conv(prefix + ".c2", rb.c2, fn);
    if (rb.has_skip) visit_conv(prefix + ".skip", rb.skip, fn);
}

void visit_attn(const std::string& prefix, AttnBlock& at,
                const std::function<void(const std::string&, Tensor&, bool)>& fn) {
    visit_norm(prefix + ".norm", at.norm, fn);
    visit_conv(prefix + ".q", at.q, fn);
    visit_conv(prefix + ".k", at.k, fn);
    visit_conv(prefix + ".v", at.v, fn);
    visit_conv(prefix + ".proj", at.proj, fn);
}

}  // namespace

void ModelConfig::validate() const {
    if (image_size < 1 || channels < 1 || downsample_blocks < 1 || latent_dim < 1 || dict_atoms < 1 ||
        lista_steps < 1 || base_channels < 1 || mid_channels < 1) {
        throw ConfigError("model config counts must all be >= 1");
    }
    if (image_size % (1 << downsample_blocks) != 0) {
        throw ConfigError("image size " + std::to_string(image_size) + " not divisible by 2^" +
                          std::to_string(downsample_blocks));
    }
    if (grid_h() < 1) throw ConfigError("latent grid collapses to zero cells");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
}

Model init_model(const ModelConfig& config, const Dictionary& dict, std::uint64_t seed, Dtype dtype) {
    config.validate();
    if (dict.n != config.latent_dim || dict.K != config.dict_atoms) {
        throw ConfigError("dictionary " + std::to_string(dict.n) + "x" + std::to_string(dict.K) +
                          " does not match model config " + std::to_string(config.latent_dim) + "x" +
                          std::to_string(config.dict_atoms));
    }
    Model m;
    m.config = config;
    m.dict = dict;
    m.dtype = dtype;

    Init init{Rng(mix_seed(seed, 0xE0)), dtype};
    const int cb = config.base_channels, cm = config.mid_channels;

    EncoderWeights& e = m.weights.enc;
    e.in_conv = init.conv(config.channels, cb, 3, 1, 1);
    for (int i = 0; i < config.downsample_blocks; ++i) {
        DownStage st;
        st.res = init.res(cb, cb);
        st.down = init.conv(cb, cb, 3, 2, 1);
        e.down.push_back(std::move(st));
    }
    e.mid1 = init.res(cb, cm);
    if (config.use_nonlocal) e.attn = init.attn(cm);
    e.mid2 = init.res(cm, cm);
    e.out_norm = init.norm(cm);
    e.out_conv = init.conv(cm, config.latent_dim, 3, 1, 1);

    DecoderWeights& d = m.weights.dec;
    d.in_conv = init.conv(config.latent_dim, cm, 3, 1, 1);
    d.mid1 = init.res(cm, cm);
    if (config.use_nonlocal) d.attn = init.attn(cm);
    d.mid2 = init.res(cm, cb);
    for (int i = 0; i < config.downsample_blocks; ++i) {
        UpStage st;
        st.res = init.res(cb, cb);
        st.conv = init.conv(cb, cb, 3, 1, 1);
        d.up.push_back(std::move(st));
    }
    d.out_norm = init.norm(cb);
    d.out_conv = init.conv(cb, config.channels, 3, 1, 1);
    // Mid-gray output at init; pixel targets live in [0, 1].
    for (std::int64_t i = 0; i < d.out_conv.bias.numel(); ++i) d.out_conv.bias.set(i, 0.5);

    ListaParams lista = lista_init_from_dictionary(dict, config.alpha, config.lista_steps);
    m.weights.lista.steps = lista.steps;
    m.weights.lista.w_e = lista.w_e.astype(dtype).set_requires_grad(true);
    m.weights.lista.s_matrix = lista.s_matrix.astype(dtype).set_requires_grad(true);
    m.weights.lista.theta = lista.theta.astype(dtype).set_requires_grad(true);
    return m;
}

void for_each_param(ModelWeights& w, const std::function<void(const std::string&, Tensor&, bool)>& fn) {
    EncoderWeights& e = w.enc;
    visit_conv("enc.in_conv", e.in_conv, fn);
    for (std::size_t i = 0; i < e.down.size(); ++i) {
        const std::string p = "enc.down" + std::to_string(i);
        visit_res(p + ".res", e.down[i].res, fn);
        visit_conv(p + ".conv", e.down[i].down, fn);
    }
    visit_res("enc.mid1", e.mid1, fn);
    if (e.attn) visit_attn("enc.attn", *e.attn, fn);
    visit_res("enc.mid2", e.mid2, fn);
    visit_norm("enc.out_norm", e.out_norm, fn);
    visit_conv("enc.out_conv", e.out_conv, fn);

    DecoderWeights& d = w.dec;
    visit_conv("dec.in_conv", d.in_conv, fn);
    visit_res("dec.mid1", d.mid1, fn);
    if (d.attn) visit_attn("dec.attn", *d.attn, fn);
    visit_res("dec.mid2", d.mid2, fn);
    for (std::size_t i = 0; i < d.up.size(); ++i) {
        const std::string p = "dec.up" + std::to_string(i);
        visit_res(p + ".res", d.up[i].res, fn);
        visit_conv(p + ".conv", d.up[i].conv, fn);
    }
    visit_norm("dec.out_norm", d.out_norm, fn);
    visit_conv("dec.out_conv", d.out_conv, fn);

    fn("lista.w_e", w.lista.w_e, false);
    fn("lista.s", w.lista.s_matrix, false);
    fn("lista.theta", w.lista.theta, true);
}

void zero_all_params(ModelWeights& weights) {
    for_each_param(weights, [](const std::string&, Tensor& t, bool) {
        for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, 0.0);
    });
}

Tensor encode_batch(Tape* tape, const ModelConfig& config, const EncoderWeights& enc, const Tensor& images) {
    if (images.rank() != 4 || images.dim(1) != config.channels || images.dim(2) != config.image_size ||
        images.dim(3) != config.image_size) {
        throw DimensionError("encoder input " + shape_str(images.shape()) + " does not match config " +
                             std::to_string(config.channels) + "x" + std::to_string(config.image_size) + "x" +
                             std::to_string(config.image_size));
    }
    Tensor h = conv_apply(tape, enc.in_conv, images);
    for (const DownStage& st : enc.down) {
        h = resblock_apply(tape, st.res, h);
        h = conv_apply(tape, st.down, h);
    }
    h = resblock_apply(tape, enc.mid1, h);
    if (enc.attn) h = attn_apply(tape, *enc.attn, h);
    h = resblock_apply(tape, enc.mid2, h);
    h = norm_apply(tape, enc.out_norm, h);
    h = ops::swish(tape, h);
    return conv_apply(tape, enc.out_conv, h);
}

Tensor decode_batch(Tape* tape, const ModelConfig& config, const DecoderWeights& dec, const Tensor& latents) {
    if (latents.rank() != 4 || latents.dim(1) != config.latent_dim || latents.dim(2) != config.grid_h() ||
        latents.dim(3) != config.grid_w()) {
        throw DimensionError("decoder input " + shape_str(latents.shape()) + " does not match latent grid " +
                             std::to_string(config.latent_dim) + "x" + std::to_string(config.grid_h()) + "x" +
                             std::to_string(config.grid_w()));
    }
    Tensor h = conv_apply(tape, dec.in_conv, latents);
    h = resblock_apply(tape, dec.mid1, h);
    if (dec.attn) h = attn_apply(tape, *dec.attn, h);
    h = resblock_apply(tape, dec.mid2, h);
    for (const UpStage& st : dec.up) {
        h = resblock_apply(tape, st.res, h);
        h = ops::upsample_nearest2x(tape, h);
        h = conv_apply(tape, st.conv, h);
    }
    h = norm_apply(tape, dec.out_norm, h);
    h = ops::swish(tape, h);
    return conv_apply(tape, dec.out_conv, h);
}

LatentGrid encode(const ModelConfig& config, const ModelWeights& weights, const Tensor& image, Tape* tape) {
    if (image.rank() != 3) throw DimensionError("encode expects CxHxW, got " + shape_str(image.shape()));
    for (std::int64_t i = 0; i < image.numel(); ++i) {
        const double v = image.at(i);
        if (v < 0.0 || v > 1.0) {
            throw DomainError("pixel value " + std::to_string(v) + " outside [0, 1] at index " + std::to_string(i));
        }
    }
    Tensor batch = ops::reshape(tape, image, {1, image.dim(0), image.dim(1), image.dim(2)});
    Tensor lat = encode_batch(tape, config, weights.enc, batch);  // 1 x n x h x w
    lat = ops::permute(tape, lat, {0, 2, 3, 1});
    LatentGrid grid;
    grid.values = ops::reshape(tape, lat, {config.grid_h(), config.grid_w(), config.latent_dim});
    return grid;
}

LatentGrid sparse_code_grid(const LatentGrid& latents, const ListaParams& params, Tape* tape) {
    if (!latents.values.defined()) throw DomainError("sparse_code_grid: latent values are unset");
    const std::int64_t h = latents.values.dim(0), w = latents.values.dim(1), n = latents.values.dim(2);
    Tensor rows = ops::reshape(tape, latents.values, {h * w, n});
    Tensor codes = lista_batch_forward(tape, params, rows);
    LatentGrid out;
    out.values = latents.values;
    out.codes = ops::reshape(tape, codes, {h, w, codes.dim(1)});
    return out;
}

Tensor reconstruct_latents(const Tensor& codes, const Dictionary& dict, Tape* tape) {
    if (codes.rank() != 3 || codes.dim(2) != dict.K) {
        throw DimensionError("codes " + shape_str(codes.shape()) + " vs dictionary K = " + std::to_string(dict.K));
    }
    const std::int64_t h = codes.dim(0), w = codes.dim(1);
    Tensor atoms = dict.atoms.astype(codes.dtype());  // constant; no gradient
    Tensor rows = ops::reshape(tape, codes, {h * w, dict.K});
    Tensor values = ops::matmul(tape, rows, atoms, false, true);
    return ops::reshape(tape, values, {h, w, dict.n});
}

Tensor decode(const ModelConfig& config, const ModelWeights& weights, const Tensor& latents, Tape* tape) {
    if (latents.rank() != 3) throw DimensionError("decode expects hxwxn, got " + shape_str(latents.shape()));
    Tensor grid = ops::reshape(tape, latents, {1, latents.dim(0), latents.dim(1), latents.dim(2)});
    grid = ops::permute(tape, grid, {0, 3, 1, 2});
    Tensor img = decode_batch(tape, config, weights.dec, grid);
    return ops::reshape(tape, img, {img.dim(1), img.dim(2), img.dim(3)});
}

LossOutput compute_losses(Tape* tape, const Tensor& image, const Tensor& reconstruction, const Tensor& latents,
                          const Tensor& codes, const Dictionary& dict, double alpha, int h, int w) {
    if (!same_shape(image, reconstruction)) {
        throw DimensionError("loss: image " + shape_str(image.shape()) + " vs reconstruction " +
                             shape_str(reconstruction.shape()));
    }
    const std::int64_t batch = image.rank() == 4 ? image.dim(0) : 1;
    const std::int64_t cells = batch * h * w;

    Tensor lat_rows = latents.rank() == 2 ? latents : ops::reshape(tape, latents, {cells, dict.n});
    Tensor code_rows = codes.rank() == 2 ? codes : ops::reshape(tape, codes, {cells, dict.K});
    if (lat_rows.dim(0) != cells || lat_rows.dim(1) != dict.n || code_rows.dim(0) != cells ||
        code_rows.dim(1) != dict.K) {
        throw DimensionError("loss: latents " + shape_str(lat_rows.shape()) + " / codes " +
                             shape_str(code_rows.shape()) + " vs " + std::to_string(cells) + " cells");
    }

    const double inv_b = 1.0 / static_cast<double>(batch);
    Tensor rec = ops::sum_squares(tape, ops::sub(tape, reconstruction, image));
    if (batch > 1) rec = ops::scale(tape, rec, inv_b);

    Tensor atoms = dict.atoms.astype(codes.dtype());
    Tensor fit = ops::matmul(tape, code_rows, atoms, false, true);
    Tensor latent = ops::add(tape, ops::sum_squares(tape, ops::sub(tape, lat_rows, fit)),
                             ops::scale(tape, ops::l1_norm(tape, code_rows), alpha));
    if (batch > 1) latent = ops::scale(tape, latent, inv_b);

    const double inv_hw = 1.0 / (static_cast<double>(h) * static_cast<double>(w));
    Tensor total = ops::add(tape, rec, ops::scale(tape, latent, inv_hw));

    LossOutput out;
    out.rec = rec;
    out.latent = latent;
    out.total = total;
    out.report.rec = rec.item();
    out.report.latent = latent.item();
    if (!std::isfinite(out.report.rec)) throw NumericError("image reconstruction loss is non-finite");
    if (!std::isfinite(out.report.latent)) throw NumericError("latent reconstruction loss is non-finite");
    out.report.total = out.report.rec + out.report.latent * inv_hw;
    if (!std::isfinite(out.report.total)) throw NumericError("total loss is non-finite");

    // The on-tape scalar must agree with the reported decomposition up to the
    // compute dtype's rounding.
    const double tape_total = total.item();
    const double tol = (total.dtype() == Dtype::F64 ? 1e-8 : 1e-4) * std::max(1.0, std::abs(out.report.total));
    if (std::abs(tape_total - out.report.total) > tol) {
        throw NumericError("total loss decomposition mismatch: " + std::to_string(tape_total) + " vs " +
                           std::to_string(out.report.total));
    }

    // Mean Hoyer sparsity over all cells (off-tape metric).
    double hoyer_sum = 0.0;
    std::vector<double> cell(static_cast<std::size_t>(dict.K));
    for (std::int64_t r = 0; r < cells; ++r) {
        for (std::int64_t k = 0; k < dict.K; ++k) cell[static_cast<std::size_t>(k)] = code_rows.at(r * dict.K + k);
        hoyer_sum += hoyer_sparsity(cell);
    }
    out.report.sparsity_hoyer = hoyer_sum / static_cast<double>(cells);
    return out;
}

ForwardResult model_forward(Tape* tape, const Model& model, const Tensor& images) {
    const ModelConfig& cfg = model.config;
    Tensor batch = images;
    if (batch.rank() == 3) batch = ops::reshape(tape, batch, {1, batch.dim(0), batch.dim(1), batch.dim(2)});
    const std::int64_t B = batch.dim(0);
    const std::int64_t h = cfg.grid_h(), w = cfg.grid_w();

    Tensor lat = encode_batch(tape, cfg, model.weights.enc, batch);           // B x n x h x w
    Tensor rows = ops::permute(tape, lat, {0, 2, 3, 1});                      // B x h x w x n
    rows = ops::reshape(tape, rows, {B * h * w, cfg.latent_dim});
    Tensor codes = lista_batch_forward(tape, model.weights.lista, rows);      // (B*h*w) x K

    Tensor atoms = model.dict.atoms.astype(model.dtype);
    Tensor fit_rows = ops::matmul(tape, codes, atoms, false, true);           // (B*h*w) x n
    Tensor fit = ops::reshape(tape, fit_rows, {B, h, w, cfg.latent_dim});
    fit = ops::permute(tape, fit, {0, 3, 1, 2});                              // B x n x h x w

    Tensor recon = decode_batch(tape, cfg, model.weights.dec, fit);

    ForwardResult r;
    r.latents_rows = rows;
    r.codes_rows = codes;
    r.reconstruction = recon;
    r.loss = compute_losses(tape, batch, recon, rows, codes, model.dict, cfg.alpha, static_cast<int>(h),
                            static_cast<int>(w));
    return r;
}

}  // namespace scvae
