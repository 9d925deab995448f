#include "scvae/solvers.hpp"

#include <cmath>
#include <deque>
#include <string>

#include "scvae/ops.hpp"

namespace scvae {

namespace {

constexpr double kDivergenceSlack = 1e-6;

void check_problem(const SparseProblem& problem) {
    if (problem.x.rank() != 1 || problem.x.dim(0) != problem.dict.n) {
        throw DimensionError("sparse problem input " + shape_str(problem.x.shape()) + " vs dictionary n = " +
                             std::to_string(problem.dict.n));
    }
    if (!all_finite(problem.x)) throw DomainError("sparse problem input contains non-finite values");
    if (problem.alpha < 0.0) throw DomainError("sparsity weight must be >= 0");
}

double inf_norm_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

// One shrinkage update z' = h_theta(pre + z S^T) on 1 x K row tensors, the
// exact op sequence lista_batch_forward uses.
Tensor ista_update(const Tensor& pre, const Tensor& z, const ListaParams& p) {
    Tensor v = ops::add(nullptr, pre, ops::matmul(nullptr, z, p.s_matrix, false, true));
    return ops::soft_threshold(nullptr, v, p.theta);
}

}  // namespace

double energy(const SparseProblem& problem, const Tensor& z) {
    check_problem(problem);
    if (z.rank() != 1 || z.dim(0) != problem.dict.K) {
        throw DimensionError("code " + shape_str(z.shape()) + " vs dictionary K = " + std::to_string(problem.dict.K));
    }
    const std::int64_t n = problem.dict.n, K = problem.dict.K;
    auto a = problem.dict.atoms.data<double>();
    double data_term = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double r = problem.x.at(i);
        for (std::int64_t k = 0; k < K; ++k) r -= a[i * K + k] * z.at(k);
        data_term += r * r;
    }
    double l1 = 0.0;
    for (std::int64_t k = 0; k < K; ++k) l1 += std::abs(z.at(k));
    return 0.5 * data_term + problem.alpha * l1;
}

ListaParams lista_init_from_dictionary(const Dictionary& dict, double alpha, int steps) {
    if (steps < 1) throw ConfigError("lista steps must be >= 1");
    if (alpha < 0.0) throw DomainError("sparsity weight must be >= 0");
    const std::int64_t n = dict.n, K = dict.K;
    const double inv_l = 1.0 / dict.lipschitz_bound;
    auto a = dict.atoms.data<double>();

    ListaParams p;
    p.steps = steps;
    p.w_e = Tensor({K, n}, Dtype::F64);
    auto w = p.w_e.data<double>();
    for (std::int64_t k = 0; k < K; ++k) {
        for (std::int64_t i = 0; i < n; ++i) w[k * n + i] = a[i * K + k] * inv_l;
    }

    // S = I - D^T D / L, via the Gram matrix.
    p.s_matrix = ops::matmul(nullptr, dict.atoms, dict.atoms, true, false);
    auto s = p.s_matrix.data<double>();
    for (std::int64_t r = 0; r < K; ++r) {
        for (std::int64_t c = 0; c < K; ++c) {
            s[r * K + c] = (r == c ? 1.0 : 0.0) - s[r * K + c] * inv_l;
        }
    }

    p.theta = Tensor::full({K}, alpha * inv_l, Dtype::F64);
    return p;
}

SparseCode ista_solve(const SparseProblem& problem, int max_iters, double tol, std::vector<double>* energy_out) {
    check_problem(problem);
    if (max_iters < 1) throw ConfigError("ista: max_iters must be >= 1");
    if (tol <= 0.0) throw ConfigError("ista: tol must be > 0");
    const std::int64_t K = problem.dict.K;
    const ListaParams p = lista_init_from_dictionary(problem.dict, problem.alpha, 1);

    Tensor xrow = ops::reshape(nullptr, problem.x.astype(Dtype::F64), {1, problem.dict.n});
    Tensor pre = ops::matmul(nullptr, xrow, p.w_e, false, true);
    Tensor z = Tensor::zeros({1, K}, Dtype::F64);

    SparseCode out;
    double last_energy = energy(problem, ops::reshape(nullptr, z, {K}));
    if (energy_out) energy_out->push_back(last_energy);
    for (int it = 1; it <= max_iters; ++it) {
        Tensor z_next = ista_update(pre, z, p);
        Tensor z_vec = ops::reshape(nullptr, z_next, {K});
        const double e = energy(problem, z_vec);
        if (energy_out) energy_out->push_back(e);
        if (e > last_energy + kDivergenceSlack) {
            throw NumericError("ista energy increased at iteration " + std::to_string(it) + " (" +
                               std::to_string(last_energy) + " -> " + std::to_string(e) + ")");
        }
        const double delta = inf_norm_diff(z_next, z);
        z = z_next;
        last_energy = e;
        out.iterations_run = it;
        if (delta < tol) break;
    }
    out.z = ops::reshape(nullptr, z, {K});
    out.final_energy = last_energy;
    return out;
}

SparseCode fista_solve(const SparseProblem& problem, int max_iters, double tol, std::vector<double>* energy_out) {
    check_problem(problem);
    if (max_iters < 1) throw ConfigError("fista: max_iters must be >= 1");
    if (tol <= 0.0) throw ConfigError("fista: tol must be > 0");
    const std::int64_t K = problem.dict.K;
    const ListaParams p = lista_init_from_dictionary(problem.dict, problem.alpha, 1);

    Tensor xrow = ops::reshape(nullptr, problem.x.astype(Dtype::F64), {1, problem.dict.n});
    Tensor pre = ops::matmul(nullptr, xrow, p.w_e, false, true);
    Tensor z = Tensor::zeros({1, K}, Dtype::F64);
    Tensor y = z.clone();
    double t_k = 1.0;

    SparseCode out;
    double last_energy = energy(problem, ops::reshape(nullptr, z, {K}));
    std::deque<double> window{last_energy};
    double best_avg = last_energy;
    if (energy_out) energy_out->push_back(last_energy);
    for (int it = 1; it <= max_iters; ++it) {
        Tensor z_next = ista_update(pre, y, p);
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_k * t_k));
        const double momentum = (t_k - 1.0) / t_next;
        // y = z_next + momentum * (z_next - z)
        Tensor diff = ops::sub(nullptr, z_next, z);
        y = ops::add(nullptr, z_next, ops::scale(nullptr, diff, momentum));
        t_k = t_next;

        const double e = energy(problem, ops::reshape(nullptr, z_next, {K}));
        if (energy_out) energy_out->push_back(e);
        window.push_back(e);
        if (window.size() > 10) window.pop_front();
        double avg = 0.0;
        for (double w : window) avg += w;
        avg /= static_cast<double>(window.size());
        // The extrapolation makes single steps non-monotone by design; an
        // invalid Lipschitz bound shows up as geometric growth of the
        // smoothed energy instead.
        if (window.size() == 10 && avg > 2.0 * best_avg + kDivergenceSlack) {
            throw NumericError("fista energy moving average increased at iteration " + std::to_string(it) + " (" +
                               std::to_string(best_avg) + " -> " + std::to_string(avg) + ")");
        }
        best_avg = std::min(best_avg, avg);

        const double delta = inf_norm_diff(z_next, z);
        z = z_next;
        last_energy = e;
        out.iterations_run = it;
        if (delta < tol) break;
    }
    out.z = ops::reshape(nullptr, z, {K});
    out.final_energy = last_energy;
    return out;
}

Tensor lista_batch_forward(Tape* tape, const ListaParams& params, const Tensor& xs) {
    const std::int64_t n = params.w_e.dim(1);
    if (xs.rank() != 2 || xs.dim(1) != n) {
        throw DimensionError("lista input " + shape_str(xs.shape()) + " vs filter matrix " +
                             shape_str(params.w_e.shape()));
    }
    Tensor pre = ops::matmul(tape, xs, params.w_e, false, true);
    Tensor z = ops::soft_threshold(tape, pre, params.theta);
    for (int t = 1; t < params.steps; ++t) {
        Tensor v = ops::add(tape, pre, ops::matmul(tape, z, params.s_matrix, false, true));
        z = ops::soft_threshold(tape, v, params.theta);
    }
    return z;
}

Tensor lista_forward(Tape* tape, const ListaParams& params, const Tensor& x) {
    if (x.rank() != 1) throw DimensionError("lista_forward expects a vector, got " + shape_str(x.shape()));
    Tensor row = ops::reshape(tape, x, {1, x.dim(0)});
    Tensor z = lista_batch_forward(tape, params, row);
    return ops::reshape(tape, z, {z.dim(1)});
}

}  // namespace scvae
