#ifndef SCVAE_SEGMENTATION_HPP
#define SCVAE_SEGMENTATION_HPP

#include <cstdint>
#include <vector>

#include "scvae/clustering.hpp"
#include "scvae/model.hpp"

namespace scvae {

// ---- sparse-code editing ----

struct CodeEdit {
    int component = 0;  // index into [0, K)
    double value = 0.0;
};

// Copy of z with one component replaced.
Tensor manipulate_code(const Tensor& z, const CodeEdit& edit);

// Codes sweeping component `component` over [lo, hi] in `count` evenly spaced
// values (count >= 2 hits both endpoints).
std::vector<Tensor> code_traversal(const Tensor& z, int component, double lo, double hi, int count);

// (1 - t) * z_a + t * z_b for t in [0, 1].
Tensor interpolate_codes(const Tensor& z_a, const Tensor& z_b, double t);

// ---- unsupervised segmentation ----

struct SegmentationResult {
    int grid_h = 0;
    int grid_w = 0;
    std::vector<int> label_grid;       // h*w labels in [0, classes)
    std::vector<int> fg_mask;          // h*w, 1 = foreground
    std::vector<double> bndcon_per_class;
    bool spectral_fallback = false;    // labels came from graph components
};

struct BoundarySelection {
    std::vector<int> fg_mask;
    std::vector<double> bndcon_per_class;
};

// BndCon(c) = (border cells of class c) / sqrt(cells of class c); a class is
// background iff BndCon >= tau. If every class lands on one side, the single
// class with the largest BndCon becomes background and the rest foreground.
// Classes with no cells get BndCon 0 and stay out of the mask.
BoundarySelection boundary_connectivity_select(const std::vector<int>& labels, int h, int w, int classes,
                                               double tau = 1.0);

enum class SegmentMethod { Kmeans, Spectral };

struct SegmentOptions {
    int classes = 2;
    SegmentMethod method = SegmentMethod::Spectral;
    int knn = 10;
    double tau = 1.0;
    std::uint64_t seed = 0;
    double spatial_weight = 0.0;
};

// encode -> LISTA codes -> clustering over the h x w grid. The spectral path
// also runs boundary-connectivity foreground selection; the k-means path
// reports an all-foreground mask.
SegmentationResult segment_image(const Model& model, const Tensor& image, const SegmentOptions& opts);

// Nearest-neighbor resampling of an integer grid (label grids, masks).
std::vector<int> resize_labels_nearest(const std::vector<int>& labels, int h, int w, int out_h, int out_w);

}  // namespace scvae

#endif
