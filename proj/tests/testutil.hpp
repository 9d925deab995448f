#ifndef SCVAE_TESTUTIL_HPP
#define SCVAE_TESTUTIL_HPP

#include <filesystem>
#include <limits>
#include <functional>
#include <string>
#include <vector>

#include "scvae/ops.hpp"
#include "scvae/rng.hpp"
#include "scvae/tensor.hpp"

namespace scvae::testutil {

inline Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                            Dtype dt = Dtype::F64) {
    Tensor t(std::move(shape), dt);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
    return t;
}

// Scratch directory under the system temp root, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("scvae_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

// Max elementwise relative error between two gradients, with an absolute
// floor so near-zero entries compare sanely.
inline double grad_rel_err(const Tensor& analytic, const Tensor& fd) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < analytic.numel(); ++i) {
        const double a = analytic.at(i), f = fd.at(i);
        const double denom = std::max({std::abs(a), std::abs(f), 1e-6});
        worst = std::max(worst, std::abs(a - f) / denom);
    }
    return worst;
}

// Relative FD error for one coordinate. Retries with a smaller step when the
// first straddles a shrinkage kink; a genuinely wrong gradient stays wrong at
// every step size.
inline double fd_coord_rel_err(Tensor& p, std::int64_t i, double analytic, const std::function<double()>& loss) {
    double best = std::numeric_limits<double>::infinity();
    for (const double step : {1e-5, 1e-7}) {
        const double orig = p.at(i);
        p.set(i, orig + step);
        const double up = loss();
        p.set(i, orig - step);
        const double down = loss();
        p.set(i, orig);
        const double fd = (up - down) / (2.0 * step);
        best = std::min(best, std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-4}));
        if (best < 1e-4) break;
    }
    return best;
}

// Central finite differences of `loss` with respect to `p`, in place.
inline Tensor fd_gradient(Tensor p, const std::function<double()>& loss, double step = 1e-5) {
    Tensor g(p.shape(), Dtype::F64);
    for (std::int64_t i = 0; i < p.numel(); ++i) {
        const double orig = p.at(i);
        p.set(i, orig + step);
        const double up = loss();
        p.set(i, orig - step);
        const double down = loss();
        p.set(i, orig);
        g.set(i, (up - down) / (2.0 * step));
    }
    return g;
}

// Generic op gradient check: the scalar objective is a fixed random
// projection of fn's output. Verifies every requires_grad input against
// central finite differences.
inline double check_op_gradients(std::vector<Tensor> inputs,
                                 const std::function<Tensor(Tape*, std::vector<Tensor>&)>& fn, Rng& rng,
                                 double step = 1e-5) {
    Tape tape;
    Tensor out = fn(&tape, inputs);
    Tensor proj = random_tensor(out.shape(), rng, -1.0, 1.0, out.dtype());
    Tensor loss = ops::sum(&tape, ops::mul(&tape, out, proj));
    tape.backward(loss);

    auto loss_value = [&]() {
        Tensor o = fn(nullptr, inputs);
        double s = 0.0;
        for (std::int64_t i = 0; i < o.numel(); ++i) s += o.at(i) * proj.at(i);
        return s;
    };

    double worst = 0.0;
    for (Tensor& in : inputs) {
        if (!in.requires_grad()) continue;
        Tensor analytic = in.grad_clone();
        Tensor fd = fd_gradient(in, loss_value, step);
        worst = std::max(worst, grad_rel_err(analytic, fd));
    }
    return worst;
}

}  // namespace scvae::testutil

#endif
