#include "scvae/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>

#include "scvae/rng.hpp"

namespace scvae {

namespace {

using std::int64_t;

double sq_dist(const double* a, const double* b, int64_t d) {
    double s = 0.0;
    for (int64_t i = 0; i < d; ++i) {
        const double t = a[i] - b[i];
        s += t * t;
    }
    return s;
}

// ---- small symmetric eigensolver (Jacobi sweeps) ----

void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigvals, std::vector<double>& eigvecs) {
    eigvecs.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvecs[static_cast<std::size_t>(i * n + i)] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) off += a[static_cast<std::size_t>(p * n + q)] * a[static_cast<std::size_t>(p * n + q)];
        }
        if (off < 1e-30) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<std::size_t>(p * n + q)];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[static_cast<std::size_t>(p * n + p)];
                const double aqq = a[static_cast<std::size_t>(q * n + q)];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = t * cs;
                for (int i = 0; i < n; ++i) {
                    const double aip = a[static_cast<std::size_t>(i * n + p)];
                    const double aiq = a[static_cast<std::size_t>(i * n + q)];
                    a[static_cast<std::size_t>(i * n + p)] = cs * aip - sn * aiq;
                    a[static_cast<std::size_t>(i * n + q)] = sn * aip + cs * aiq;
                }
                for (int i = 0; i < n; ++i) {
                    const double api = a[static_cast<std::size_t>(p * n + i)];
                    const double aqi = a[static_cast<std::size_t>(q * n + i)];
                    a[static_cast<std::size_t>(p * n + i)] = cs * api - sn * aqi;
                    a[static_cast<std::size_t>(q * n + i)] = sn * api + cs * aqi;
                }
                for (int i = 0; i < n; ++i) {
                    const double vip = eigvecs[static_cast<std::size_t>(i * n + p)];
                    const double viq = eigvecs[static_cast<std::size_t>(i * n + q)];
                    eigvecs[static_cast<std::size_t>(i * n + p)] = cs * vip - sn * viq;
                    eigvecs[static_cast<std::size_t>(i * n + q)] = sn * vip + cs * viq;
                }
            }
        }
    }
    eigvals.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) eigvals[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i * n + i)];
}

// Modified Gram-Schmidt on the columns of v (n x k).
void orthonormalize(std::vector<double>& v, int64_t n, int k) {
    for (int j = 0; j < k; ++j) {
        for (int i = 0; i < j; ++i) {
            double dot = 0.0;
            for (int64_t r = 0; r < n; ++r) dot += v[static_cast<std::size_t>(r * k + i)] * v[static_cast<std::size_t>(r * k + j)];
            for (int64_t r = 0; r < n; ++r) v[static_cast<std::size_t>(r * k + j)] -= dot * v[static_cast<std::size_t>(r * k + i)];
        }
        double norm = 0.0;
        for (int64_t r = 0; r < n; ++r) norm += v[static_cast<std::size_t>(r * k + j)] * v[static_cast<std::size_t>(r * k + j)];
        norm = std::sqrt(norm);
        if (norm < 1e-300) {
            // Degenerate column; replace with a deterministic unit vector.
            for (int64_t r = 0; r < n; ++r) v[static_cast<std::size_t>(r * k + j)] = 0.0;
            v[static_cast<std::size_t>((static_cast<int64_t>(j) % n) * k + j)] = 1.0;
        } else {
            for (int64_t r = 0; r < n; ++r) v[static_cast<std::size_t>(r * k + j)] /= norm;
        }
    }
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    int find(int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
    }
};

}  // namespace

KmeansResult kmeans(const Tensor& points, int clusters, std::uint64_t seed, int max_iters,
                    std::vector<double>* inertia_history) {
    if (points.rank() != 2) throw DimensionError("kmeans expects MxK points, got " + shape_str(points.shape()));
    const int64_t m = points.dim(0), d = points.dim(1);
    if (clusters < 1 || clusters > m) {
        throw ConfigError("kmeans: clusters = " + std::to_string(clusters) + " with " + std::to_string(m) + " points");
    }
    Tensor pts = points.astype(Dtype::F64);
    const double* p = pts.data<double>().data();
    Rng rng(seed);

    // k-means++ seeding.
    std::vector<double> cent(static_cast<std::size_t>(clusters) * static_cast<std::size_t>(d));
    std::vector<double> best_d2(static_cast<std::size_t>(m));
    {
        const int64_t first = rng.uniform_int(m);
        std::copy(p + first * d, p + (first + 1) * d, cent.begin());
        for (int64_t i = 0; i < m; ++i) best_d2[static_cast<std::size_t>(i)] = sq_dist(p + i * d, cent.data(), d);
        for (int c = 1; c < clusters; ++c) {
            double total = 0.0;
            for (int64_t i = 0; i < m; ++i) total += best_d2[static_cast<std::size_t>(i)];
            int64_t pick = 0;
            if (total > 0.0) {
                const double target = rng.uniform() * total;
                double acc = 0.0;
                pick = m - 1;
                for (int64_t i = 0; i < m; ++i) {
                    acc += best_d2[static_cast<std::size_t>(i)];
                    if (acc >= target) {
                        pick = i;
                        break;
                    }
                }
            } else {
                pick = rng.uniform_int(m);
            }
            std::copy(p + pick * d, p + (pick + 1) * d, cent.begin() + static_cast<std::ptrdiff_t>(c) * d);
            for (int64_t i = 0; i < m; ++i) {
                best_d2[static_cast<std::size_t>(i)] =
                    std::min(best_d2[static_cast<std::size_t>(i)], sq_dist(p + i * d, cent.data() + c * d, d));
            }
        }
    }

    std::vector<int> labels(static_cast<std::size_t>(m), -1);
    std::vector<int64_t> counts(static_cast<std::size_t>(clusters));
    double inertia = 0.0;
    int it = 0;
    for (; it < max_iters; ++it) {
        bool changed = false;
        inertia = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            int best = 0;
            double bd = sq_dist(p + i * d, cent.data(), d);
            for (int c = 1; c < clusters; ++c) {
                const double dist = sq_dist(p + i * d, cent.data() + c * d, d);
                if (dist < bd) {
                    bd = dist;
                    best = c;
                }
            }
            if (labels[static_cast<std::size_t>(i)] != best) {
                labels[static_cast<std::size_t>(i)] = best;
                changed = true;
            }
            inertia += bd;
        }
        if (inertia_history) inertia_history->push_back(inertia);
        if (!changed) break;

        std::fill(cent.begin(), cent.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int64_t i = 0; i < m; ++i) {
            const int c = labels[static_cast<std::size_t>(i)];
            ++counts[static_cast<std::size_t>(c)];
            for (int64_t j = 0; j < d; ++j) cent[static_cast<std::size_t>(c * d + j)] += p[i * d + j];
        }
        for (int c = 0; c < clusters; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                for (int64_t j = 0; j < d; ++j) {
                    cent[static_cast<std::size_t>(c * d + j)] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
                }
            } else {
                // Re-seed an empty cluster at the point farthest from its
                // current centroid.
                int64_t far = 0;
                double fd = -1.0;
                for (int64_t i = 0; i < m; ++i) {
                    const double dist = sq_dist(p + i * d, cent.data() + labels[static_cast<std::size_t>(i)] * d, d);
                    if (dist > fd) {
                        fd = dist;
                        far = i;
                    }
                }
                std::copy(p + far * d, p + (far + 1) * d, cent.begin() + static_cast<std::ptrdiff_t>(c) * d);
            }
        }
    }

    KmeansResult r;
    r.labels = std::move(labels);
    r.centroids = Tensor({clusters, d}, Dtype::F64);
    std::copy(cent.begin(), cent.end(), r.centroids.data<double>().begin());
    r.inertia = inertia;
    r.iterations = it;
    return r;
}

Tensor laplacian_smallest_eigenvectors(const Tensor& laplacian, int k, std::uint64_t seed, int max_iters,
                                       double tol) {
    if (laplacian.rank() != 2 || laplacian.dim(0) != laplacian.dim(1)) {
        throw DimensionError("eigensolver expects a square matrix, got " + shape_str(laplacian.shape()));
    }
    const int64_t n = laplacian.dim(0);
    if (k < 1 || k > n) throw ConfigError("eigensolver: k out of range");
    Tensor lap = laplacian.astype(Dtype::F64);
    const double* l = lap.data<double>().data();

    // Iterate on M = 2I - L, whose top eigenvectors are L's bottom ones.
    auto apply_m = [&](const std::vector<double>& v, std::vector<double>& out) {
        for (int64_t i = 0; i < n; ++i) {
            for (int j = 0; j < k; ++j) out[static_cast<std::size_t>(i * k + j)] = 2.0 * v[static_cast<std::size_t>(i * k + j)];
            const double* row = l + i * n;
            for (int64_t r = 0; r < n; ++r) {
                const double lij = row[r];
                if (lij == 0.0) continue;
                for (int j = 0; j < k; ++j) {
                    out[static_cast<std::size_t>(i * k + j)] -= lij * v[static_cast<std::size_t>(r * k + j)];
                }
            }
        }
    };

    Rng rng(mix_seed(seed, 0xE16));
    std::vector<double> v(static_cast<std::size_t>(n) * static_cast<std::size_t>(k));
    for (auto& x : v) x = rng.normal();
    orthonormalize(v, n, k);

    std::vector<double> w(v.size());
    std::vector<double> ritz_prev(static_cast<std::size_t>(k), std::numeric_limits<double>::infinity());
    std::vector<double> small(static_cast<std::size_t>(k) * static_cast<std::size_t>(k));
    std::vector<double> eigvals, eigvecs;
    for (int it = 0; it < max_iters; ++it) {
        apply_m(v, w);
        // Ritz values from the projected operator.
        for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) {
                double dot = 0.0;
                for (int64_t r = 0; r < n; ++r) {
                    dot += v[static_cast<std::size_t>(r * k + a)] * w[static_cast<std::size_t>(r * k + b)];
                }
                small[static_cast<std::size_t>(a * k + b)] = dot;
            }
        }
        double drift = 0.0;
        for (int a = 0; a < k; ++a) {
            drift = std::max(drift, std::abs(small[static_cast<std::size_t>(a * k + a)] - ritz_prev[static_cast<std::size_t>(a)]));
            ritz_prev[static_cast<std::size_t>(a)] = small[static_cast<std::size_t>(a * k + a)];
        }
        v.swap(w);
        orthonormalize(v, n, k);
        if (it > 4 && drift < tol) break;
    }

    // Rayleigh-Ritz rotation to diagonalize within the converged subspace.
    apply_m(v, w);
    for (int a = 0; a < k; ++a) {
        for (int b = 0; b < k; ++b) {
            double dot = 0.0;
            for (int64_t r = 0; r < n; ++r) {
                dot += v[static_cast<std::size_t>(r * k + a)] * w[static_cast<std::size_t>(r * k + b)];
            }
            small[static_cast<std::size_t>(a * k + b)] = 0.5 * (dot + dot);
        }
    }
    // Symmetrize against round-off before the Jacobi sweeps.
    for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) {
            const double s = 0.5 * (small[static_cast<std::size_t>(a * k + b)] + small[static_cast<std::size_t>(b * k + a)]);
            small[static_cast<std::size_t>(a * k + b)] = s;
            small[static_cast<std::size_t>(b * k + a)] = s;
        }
    }
    jacobi_eigen(small, k, eigvals, eigvecs);

    // Order by descending Ritz value of M (= ascending Laplacian eigenvalue).
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return eigvals[static_cast<std::size_t>(a)] > eigvals[static_cast<std::size_t>(b)];
    });

    Tensor out({n, k}, Dtype::F64);
    auto o = out.data<double>();
    for (int64_t r = 0; r < n; ++r) {
        for (int j = 0; j < k; ++j) {
            double s = 0.0;
            for (int a = 0; a < k; ++a) {
                s += v[static_cast<std::size_t>(r * k + a)] *
                     eigvecs[static_cast<std::size_t>(a * k + order[static_cast<std::size_t>(j)])];
            }
            o[static_cast<std::size_t>(r * k + j)] = s;
        }
    }
    return out;
}

SpectralResult spectral_cluster(const Tensor& codes, int grid_h, int grid_w, int classes, int knn,
                                SigmaMode /*sigma_mode*/, std::uint64_t seed, double spatial_weight) {
    if (codes.rank() != 2) throw DimensionError("spectral_cluster expects MxK codes, got " + shape_str(codes.shape()));
    const int64_t m = codes.dim(0);
    if (grid_h * grid_w != m) {
        throw DimensionError("grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) + " vs " +
                             std::to_string(m) + " code rows");
    }
    if (classes < 2) throw ConfigError("spectral_cluster: classes must be >= 2");
    if (knn < 1 || knn >= m) throw ConfigError("spectral_cluster: knn must be in [1, points)");

    Tensor pts = codes.astype(Dtype::F64);
    int64_t d = pts.dim(1);
    std::vector<double> feat(static_cast<std::size_t>(m) * static_cast<std::size_t>(d + (spatial_weight > 0.0 ? 2 : 0)));
    {
        const double* src = pts.data<double>().data();
        const int64_t fd = d + (spatial_weight > 0.0 ? 2 : 0);
        for (int64_t i = 0; i < m; ++i) {
            std::copy(src + i * d, src + (i + 1) * d, feat.begin() + static_cast<std::ptrdiff_t>(i * fd));
            if (spatial_weight > 0.0) {
                feat[static_cast<std::size_t>(i * fd + d)] = spatial_weight * static_cast<double>(i / grid_w);
                feat[static_cast<std::size_t>(i * fd + d + 1)] = spatial_weight * static_cast<double>(i % grid_w);
            }
        }
        if (spatial_weight > 0.0) d = fd;
    }

    // Pairwise distances and tie-inclusive kNN sets.
    std::vector<double> dist(static_cast<std::size_t>(m) * static_cast<std::size_t>(m), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = i + 1; j < m; ++j) {
            const double d2 = sq_dist(feat.data() + i * d, feat.data() + j * d, d);
            dist[static_cast<std::size_t>(i * m + j)] = d2;
            dist[static_cast<std::size_t>(j * m + i)] = d2;
        }
    }
    std::vector<double> kth(static_cast<std::size_t>(m));
    {
        std::vector<double> row(static_cast<std::size_t>(m - 1));
        for (int64_t i = 0; i < m; ++i) {
            int64_t t = 0;
            for (int64_t j = 0; j < m; ++j) {
                if (j != i) row[static_cast<std::size_t>(t++)] = dist[static_cast<std::size_t>(i * m + j)];
            }
            std::nth_element(row.begin(), row.begin() + (knn - 1), row.end());
            kth[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(knn - 1)];
        }
    }
    auto in_knn = [&](int64_t i, int64_t j) { return dist[static_cast<std::size_t>(i * m + j)] <= kth[static_cast<std::size_t>(i)]; };

    // Mutual edges, sigma, affinity.
    std::vector<double> edge_d2;
    UnionFind uf(static_cast<int>(m));
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = i + 1; j < m; ++j) {
            if (in_knn(i, j) && in_knn(j, i)) {
                uf.unite(static_cast<int>(i), static_cast<int>(j));
                if (dist[static_cast<std::size_t>(i * m + j)] > 0.0) {
                    edge_d2.push_back(dist[static_cast<std::size_t>(i * m + j)]);
                }
            }
        }
    }
    double sigma2 = 1.0;
    if (!edge_d2.empty()) {
        std::nth_element(edge_d2.begin(), edge_d2.begin() + static_cast<std::ptrdiff_t>(edge_d2.size() / 2),
                         edge_d2.end());
        sigma2 = edge_d2[edge_d2.size() / 2];  // median of squared distances
    }

    // Connected components first; a shattered graph falls back to component
    // labels directly.
    std::vector<int> comp_of(static_cast<std::size_t>(m));
    std::vector<int> roots;
    for (int64_t i = 0; i < m; ++i) {
        const int r = uf.find(static_cast<int>(i));
        auto it = std::find(roots.begin(), roots.end(), r);
        if (it == roots.end()) {
            comp_of[static_cast<std::size_t>(i)] = static_cast<int>(roots.size());
            roots.push_back(r);
        } else {
            comp_of[static_cast<std::size_t>(i)] = static_cast<int>(it - roots.begin());
        }
    }
    SpectralResult result;
    result.components = static_cast<int>(roots.size());
    if (result.components > classes) {
        std::cerr << "warning: affinity graph has " << result.components << " components for " << classes
                  << " classes; labeling by component\n";
        // Largest components keep distinct labels; the tail folds into the
        // last label so the output stays within [0, classes).
        std::vector<int64_t> sizes(roots.size(), 0);
        for (int64_t i = 0; i < m; ++i) ++sizes[static_cast<std::size_t>(comp_of[static_cast<std::size_t>(i)])];
        std::vector<int> order(roots.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (sizes[static_cast<std::size_t>(a)] != sizes[static_cast<std::size_t>(b)]) {
                return sizes[static_cast<std::size_t>(a)] > sizes[static_cast<std::size_t>(b)];
            }
            return a < b;
        });
        std::vector<int> relabel(roots.size());
        for (std::size_t rank = 0; rank < order.size(); ++rank) {
            relabel[static_cast<std::size_t>(order[rank])] =
                static_cast<int>(std::min<std::size_t>(rank, static_cast<std::size_t>(classes - 1)));
        }
        result.labels.resize(static_cast<std::size_t>(m));
        for (int64_t i = 0; i < m; ++i) {
            result.labels[static_cast<std::size_t>(i)] = relabel[static_cast<std::size_t>(comp_of[static_cast<std::size_t>(i)])];
        }
        result.used_component_fallback = true;
        return result;
    }

    // Symmetric normalized Laplacian L = I - D^{-1/2} A D^{-1/2}.
    std::vector<double> a(static_cast<std::size_t>(m) * static_cast<std::size_t>(m), 0.0);
    std::vector<double> degree(static_cast<std::size_t>(m), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = i + 1; j < m; ++j) {
            if (in_knn(i, j) && in_knn(j, i)) {
                const double w = std::exp(-dist[static_cast<std::size_t>(i * m + j)] / (2.0 * sigma2));
                a[static_cast<std::size_t>(i * m + j)] = w;
                a[static_cast<std::size_t>(j * m + i)] = w;
                degree[static_cast<std::size_t>(i)] += w;
                degree[static_cast<std::size_t>(j)] += w;
            }
        }
    }
    Tensor lap({m, m}, Dtype::F64);
    auto l = lap.data<double>();
    for (int64_t i = 0; i < m; ++i) {
        const double di = degree[static_cast<std::size_t>(i)] > 0.0 ? 1.0 / std::sqrt(degree[static_cast<std::size_t>(i)]) : 0.0;
        for (int64_t j = 0; j < m; ++j) {
            const double dj = degree[static_cast<std::size_t>(j)] > 0.0 ? 1.0 / std::sqrt(degree[static_cast<std::size_t>(j)]) : 0.0;
            l[static_cast<std::size_t>(i * m + j)] =
                (i == j ? 1.0 : 0.0) - di * dj * a[static_cast<std::size_t>(i * m + j)];
        }
    }

    Tensor evecs = laplacian_smallest_eigenvectors(lap, classes, seed);
    // Row normalization before the final k-means.
    Tensor rows({m, classes}, Dtype::F64);
    for (int64_t i = 0; i < m; ++i) {
        double norm = 0.0;
        for (int j = 0; j < classes; ++j) norm += evecs.at(i * classes + j) * evecs.at(i * classes + j);
        norm = std::sqrt(norm);
        for (int j = 0; j < classes; ++j) {
            rows.set(i * classes + j, norm > 0.0 ? evecs.at(i * classes + j) / norm : 0.0);
        }
    }
    result.labels = kmeans(rows, classes, mix_seed(seed, 0x5C), 200).labels;
    return result;
}

}  // namespace scvae
