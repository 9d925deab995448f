#include "scvae/dictionary.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "scvae/rng.hpp"

namespace scvae {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;
constexpr double kSafetyFactor = 1.01;

std::int64_t isqrt_exact(std::int64_t v) {
    const auto r = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(v))));
    return r * r == v ? r : -1;
}

void normalize_columns(Tensor& atoms) {
    const std::int64_t n = atoms.dim(0), K = atoms.dim(1);
    auto a = atoms.data<double>();
    for (std::int64_t k = 0; k < K; ++k) {
        double s = 0.0;
        for (std::int64_t i = 0; i < n; ++i) s += a[i * K + k] * a[i * K + k];
        const double norm = std::sqrt(s);
        if (norm == 0.0) throw NumericError("dictionary atom " + std::to_string(k) + " has zero norm");
        for (std::int64_t i = 0; i < n; ++i) a[i * K + k] /= norm;
    }
}

}  // namespace

Dictionary Dictionary::from_atoms(const Tensor& atoms, bool normalize) {
    if (atoms.rank() != 2) throw DimensionError("dictionary atoms must be a matrix, got " + shape_str(atoms.shape()));
    Dictionary d;
    d.atoms = atoms.astype(Dtype::F64);
    d.n = d.atoms.dim(0);
    d.K = d.atoms.dim(1);
    if (normalize) normalize_columns(d.atoms);
    d.lipschitz_bound = estimate_lipschitz(d);
    return d;
}

Dictionary build_dct_dictionary(std::int64_t n, std::int64_t K) {
    const std::int64_t p = isqrt_exact(n);
    if (p < 0) throw ConfigError("latent dimension " + std::to_string(n) + " must be a perfect square");
    if (K < n) throw ConfigError("atom count " + std::to_string(K) + " must be >= latent dimension " + std::to_string(n));
    const auto q = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(K))));

    // 1-D cosine table at half-integer sample points; zero-frequency column
    // kept as-is, higher columns mean-centered.
    std::vector<double> m(static_cast<std::size_t>(p * q));
    for (std::int64_t j = 0; j < q; ++j) {
        double mean = 0.0;
        for (std::int64_t i = 0; i < p; ++i) {
            const double v = std::cos((static_cast<double>(i) + 0.5) * static_cast<double>(j) * kPi /
                                      static_cast<double>(q));
            m[static_cast<std::size_t>(i * q + j)] = v;
            mean += v;
        }
        if (j > 0) {
            mean /= static_cast<double>(p);
            for (std::int64_t i = 0; i < p; ++i) m[static_cast<std::size_t>(i * q + j)] -= mean;
        }
    }

    // Kronecker product of the grid with itself, truncated to the first K
    // columns, then unit-normalized.
    Dictionary d;
    d.n = n;
    d.K = K;
    d.atoms = Tensor({n, K}, Dtype::F64);
    auto a = d.atoms.data<double>();
    for (std::int64_t col = 0; col < K; ++col) {
        const std::int64_t j1 = col / q, j2 = col % q;
        for (std::int64_t i1 = 0; i1 < p; ++i1) {
            for (std::int64_t i2 = 0; i2 < p; ++i2) {
                a[(i1 * p + i2) * K + col] =
                    m[static_cast<std::size_t>(i1 * q + j1)] * m[static_cast<std::size_t>(i2 * q + j2)];
            }
        }
    }
    normalize_columns(d.atoms);
    d.lipschitz_bound = estimate_lipschitz(d);
    return d;
}

double estimate_lipschitz(const Dictionary& dict, int iters, double tol) {
    if (iters < 1) throw ConfigError("estimate_lipschitz: iters must be >= 1");
    const std::int64_t n = dict.n, K = dict.K;
    auto a = dict.atoms.data<double>();

    // Fixed-seed start vector keeps the estimate reproducible.
    Rng rng(0x11570u);
    std::vector<double> v(static_cast<std::size_t>(K));
    double norm = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;

    std::vector<double> w(static_cast<std::size_t>(n)), u(static_cast<std::size_t>(K));
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        // u = D^T (D v); the Gram matrix is never formed.
        for (std::int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::int64_t k = 0; k < K; ++k) s += a[i * K + k] * v[static_cast<std::size_t>(k)];
            w[static_cast<std::size_t>(i)] = s;
        }
        for (std::int64_t k = 0; k < K; ++k) {
            double s = 0.0;
            for (std::int64_t i = 0; i < n; ++i) s += a[i * K + k] * w[static_cast<std::size_t>(i)];
            u[static_cast<std::size_t>(k)] = s;
        }
        double rayleigh = 0.0, unorm = 0.0;
        for (std::int64_t k = 0; k < K; ++k) {
            rayleigh += v[static_cast<std::size_t>(k)] * u[static_cast<std::size_t>(k)];
            unorm += u[static_cast<std::size_t>(k)] * u[static_cast<std::size_t>(k)];
        }
        unorm = std::sqrt(unorm);
        if (unorm == 0.0) return kSafetyFactor * 0.0;
        const bool converged = it > 0 && std::abs(rayleigh - lambda) <= tol * std::max(1.0, std::abs(rayleigh));
        lambda = rayleigh;
        if (converged) return kSafetyFactor * lambda;
        for (std::int64_t k = 0; k < K; ++k) v[static_cast<std::size_t>(k)] = u[static_cast<std::size_t>(k)] / unorm;
    }
    throw NumericError("lipschitz power iteration did not converge in " + std::to_string(iters) +
                       " iterations; last estimate " + std::to_string(lambda));
}

}  // namespace scvae
