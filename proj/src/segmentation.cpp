#include "scvae/segmentation.hpp"

#include <cmath>
#include <string>

namespace scvae {

Tensor manipulate_code(const Tensor& z, const CodeEdit& edit) {
    if (z.rank() != 1) throw DimensionError("manipulate_code expects a vector, got " + shape_str(z.shape()));
    if (edit.component < 0 || edit.component >= z.dim(0)) {
        throw DomainError("code component " + std::to_string(edit.component) + " out of range [0, " +
                          std::to_string(z.dim(0)) + ")");
    }
    Tensor out = z.clone();
    out.set(edit.component, edit.value);
    return out;
}

std::vector<Tensor> code_traversal(const Tensor& z, int component, double lo, double hi, int count) {
    if (count < 2) throw DomainError("code_traversal needs at least 2 samples");
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double v = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
        out.push_back(manipulate_code(z, {component, v}));
    }
    return out;
}

Tensor interpolate_codes(const Tensor& z_a, const Tensor& z_b, double t) {
    if (!same_shape(z_a, z_b) || z_a.dtype() != z_b.dtype()) {
        throw DimensionError("interpolate_codes: " + shape_str(z_a.shape()) + " vs " + shape_str(z_b.shape()));
    }
    if (t < 0.0 || t > 1.0) throw DomainError("interpolation parameter " + std::to_string(t) + " outside [0, 1]");
    if (t == 0.0) return z_a.clone();
    if (t == 1.0) return z_b.clone();
    Tensor out(z_a.shape(), z_a.dtype());
    for (std::int64_t i = 0; i < out.numel(); ++i) out.set(i, (1.0 - t) * z_a.at(i) + t * z_b.at(i));
    return out;
}

BoundarySelection boundary_connectivity_select(const std::vector<int>& labels, int h, int w, int classes,
                                               double tau) {
    if (labels.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w)) {
        throw DimensionError("label grid size does not match " + std::to_string(h) + "x" + std::to_string(w));
    }
    std::vector<std::int64_t> area(static_cast<std::size_t>(classes), 0);
    std::vector<std::int64_t> border(static_cast<std::size_t>(classes), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int c = labels[static_cast<std::size_t>(y * w + x)];
            if (c < 0 || c >= classes) throw DomainError("label " + std::to_string(c) + " outside [0, classes)");
            ++area[static_cast<std::size_t>(c)];
            if (y == 0 || y == h - 1 || x == 0 || x == w - 1) ++border[static_cast<std::size_t>(c)];
        }
    }
    BoundarySelection sel;
    sel.bndcon_per_class.resize(static_cast<std::size_t>(classes), 0.0);
    std::vector<bool> is_bg(static_cast<std::size_t>(classes), false);
    int n_bg = 0, n_fg = 0, present = 0;
    for (int c = 0; c < classes; ++c) {
        if (area[static_cast<std::size_t>(c)] == 0) continue;  // empty class, reported as BndCon 0
        ++present;
        sel.bndcon_per_class[static_cast<std::size_t>(c)] =
            static_cast<double>(border[static_cast<std::size_t>(c)]) /
            std::sqrt(static_cast<double>(area[static_cast<std::size_t>(c)]));
        if (sel.bndcon_per_class[static_cast<std::size_t>(c)] >= tau) {
            is_bg[static_cast<std::size_t>(c)] = true;
            ++n_bg;
        } else {
            ++n_fg;
        }
    }
    if (present > 1 && (n_bg == 0 || n_fg == 0)) {
        // Everything fell on one side; the most border-connected class is the
        // background, the rest foreground.
        int max_c = -1;
        double max_v = -1.0;
        for (int c = 0; c < classes; ++c) {
            if (area[static_cast<std::size_t>(c)] > 0 && sel.bndcon_per_class[static_cast<std::size_t>(c)] > max_v) {
                max_v = sel.bndcon_per_class[static_cast<std::size_t>(c)];
                max_c = c;
            }
        }
        for (int c = 0; c < classes; ++c) is_bg[static_cast<std::size_t>(c)] = (c == max_c);
    }
    sel.fg_mask.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int c = labels[i];
        sel.fg_mask[i] = (area[static_cast<std::size_t>(c)] > 0 && !is_bg[static_cast<std::size_t>(c)]) ? 1 : 0;
    }
    return sel;
}

std::vector<int> resize_labels_nearest(const std::vector<int>& labels, int h, int w, int out_h, int out_w) {
    if (labels.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w)) {
        throw DimensionError("label grid size does not match " + std::to_string(h) + "x" + std::to_string(w));
    }
    std::vector<int> out(static_cast<std::size_t>(out_h) * static_cast<std::size_t>(out_w));
    for (int y = 0; y < out_h; ++y) {
        int sy = static_cast<int>((static_cast<double>(y) + 0.5) * h / out_h);
        sy = std::min(sy, h - 1);
        for (int x = 0; x < out_w; ++x) {
            int sx = static_cast<int>((static_cast<double>(x) + 0.5) * w / out_w);
            sx = std::min(sx, w - 1);
            out[static_cast<std::size_t>(y * out_w + x)] = labels[static_cast<std::size_t>(sy * w + sx)];
        }
    }
    return out;
}

SegmentationResult segment_image(const Model& model, const Tensor& image, const SegmentOptions& opts) {
    if (opts.classes < 2) throw ConfigError("segment_image: classes must be >= 2");
    LatentGrid grid = encode(model.config, model.weights, image.astype(model.dtype));
    grid = sparse_code_grid(grid, model.weights.lista);
    const int h = model.config.grid_h(), w = model.config.grid_w();
    Tensor rows = ops::reshape(nullptr, grid.codes, {static_cast<std::int64_t>(h) * w, model.dict.K});

    SegmentationResult res;
    res.grid_h = h;
    res.grid_w = w;
    if (opts.method == SegmentMethod::Kmeans) {
        res.label_grid = kmeans(rows, opts.classes, opts.seed, 200).labels;
        res.fg_mask.assign(res.label_grid.size(), 1);
        res.bndcon_per_class.assign(static_cast<std::size_t>(opts.classes), 0.0);
        return res;
    }
    SpectralResult sr = spectral_cluster(rows, h, w, opts.classes, opts.knn, SigmaMode::Median, opts.seed,
                                         opts.spatial_weight);
    res.label_grid = sr.labels;
    res.spectral_fallback = sr.used_component_fallback;
    BoundarySelection sel = boundary_connectivity_select(res.label_grid, h, w, opts.classes, opts.tau);
    res.fg_mask = std::move(sel.fg_mask);
    res.bndcon_per_class = std::move(sel.bndcon_per_class);
    return res;
}

}  // namespace scvae
