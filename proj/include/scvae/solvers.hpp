#ifndef SCVAE_SOLVERS_HPP
#define SCVAE_SOLVERS_HPP

#include <cstdint>
#include <vector>

#include "scvae/dictionary.hpp"
#include "scvae/tensor.hpp"

namespace scvae {

// One sparse-coding instance: find z minimizing
//   0.5 * ||x - D z||^2 + alpha * ||z||_1.
struct SparseProblem {
    Tensor x;          // length n, f64
    Dictionary dict;
    double alpha = 1.0;
};

struct SparseCode {
    Tensor z;                // length K, f64
    int iterations_run = 0;  // shrinkage applications performed
    double final_energy = 0.0;
};

// Unrolled shrinkage network parameters. All three tensors are trainable;
// s_matrix is shared across every rollout step.
struct ListaParams {
    Tensor w_e;      // K x n filter matrix
    Tensor s_matrix; // K x K mutual inhibition matrix
    Tensor theta;    // K thresholds, kept >= 0
    int steps = 1;   // shrinkage applications per forward pass
};

// Objective value at z (shape checks only; no solving).
double energy(const SparseProblem& problem, const Tensor& z);

// Proximal-gradient fixed-point iteration z <- h_theta(W_e x + S z) from
// z = 0, with W_e = D^T / L, S = I - D^T D / L, theta = alpha / L. Stops when
// the infinity-norm step drops below tol or max_iters is reached. The energy
// sequence is monotone for a valid Lipschitz bound; an increase above 1e-6
// raises NumericError naming the iteration. energy_out, when given, receives
// the per-iteration energies.
SparseCode ista_solve(const SparseProblem& problem, int max_iters = 1000, double tol = 1e-8,
                      std::vector<double>* energy_out = nullptr);

// Accelerated variant with the Nesterov extrapolation sequence
// t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2. Not monotone; divergence is
// detected on a 10-step moving average of the energy.
SparseCode fista_solve(const SparseProblem& problem, int max_iters = 1000, double tol = 1e-8,
                       std::vector<double>* energy_out = nullptr);

// W_e, S, theta exactly as the iteration above uses them, so a fresh network
// reproduces the classic solver step for step.
ListaParams lista_init_from_dictionary(const Dictionary& dict, double alpha, int steps);

// steps applications of the shrinkage recursion, differentiable in W_e, S,
// theta and the inputs. The single-vector form takes x of length n; the batch
// form applies the network to each row independently.
Tensor lista_forward(Tape* tape, const ListaParams& params, const Tensor& x);
Tensor lista_batch_forward(Tape* tape, const ListaParams& params, const Tensor& xs);

}  // namespace scvae

#endif
