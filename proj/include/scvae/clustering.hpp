#ifndef SCVAE_CLUSTERING_HPP
#define SCVAE_CLUSTERING_HPP

#include <cstdint>
#include <vector>

#include "scvae/tensor.hpp"

namespace scvae {

struct KmeansResult {
    std::vector<int> labels;
    Tensor centroids;  // clusters x dim, f64
    double inertia = 0.0;
    int iterations = 0;
};

// Lloyd iterations from a k-means++ seeding, run to an assignment fixpoint or
// max_iters. Ties in assignment break toward the lower centroid index; an
// emptied cluster is re-seeded to the point farthest from its centroid.
// Deterministic given the seed. inertia_history, when given, receives the
// objective after every assignment pass (non-increasing).
KmeansResult kmeans(const Tensor& points, int clusters, std::uint64_t seed, int max_iters = 100,
                    std::vector<double>* inertia_history = nullptr);

// The `k` eigenvectors of a symmetric matrix with the smallest eigenvalues,
// assuming the spectrum lies in [0, 2] (normalized graph Laplacians).
// Subspace iteration on 2I - L with a final Rayleigh-Ritz rotation; columns
// are ordered by ascending eigenvalue. Returns N x k, f64.
Tensor laplacian_smallest_eigenvectors(const Tensor& laplacian, int k, std::uint64_t seed, int max_iters = 3000,
                                       double tol = 1e-13);

enum class SigmaMode { Median };

struct SpectralResult {
    std::vector<int> labels;
    int components = 1;           // connected components of the affinity graph
    bool used_component_fallback = false;
};

// Normalized spectral clustering of row vectors. The affinity graph keeps
// mutual k-nearest-neighbor edges (ties at the k-th distance included) with
// Gaussian weights exp(-d^2 / (2 sigma^2)), sigma = median nonzero retained
// distance. If the graph splits into more components than classes the
// components themselves become the labels (folded onto `classes` labels,
// largest components first) and a warning is printed.
SpectralResult spectral_cluster(const Tensor& codes, int grid_h, int grid_w, int classes, int knn,
                                SigmaMode sigma_mode, std::uint64_t seed, double spatial_weight = 0.0);

}  // namespace scvae

#endif
