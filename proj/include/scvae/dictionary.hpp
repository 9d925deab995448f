#ifndef SCVAE_DICTIONARY_HPP
#define SCVAE_DICTIONARY_HPP

#include <cstdint>

#include "scvae/tensor.hpp"

namespace scvae {

// Fixed analysis dictionary: an n x K matrix whose columns are atoms, plus an
// upper bound on the largest eigenvalue of D^T D. Immutable once built; it is
// never trained.
struct Dictionary {
    Tensor atoms;             // n x K, f64
    std::int64_t n = 0;       // signal dimension
    std::int64_t K = 0;       // atom count
    double lipschitz_bound = 0.0;

    // Wrap an explicit atom matrix (n x K). With normalize=true every column
    // is scaled to unit norm; the raw path exists for tests that need
    // deliberately unnormalized atoms.
    static Dictionary from_atoms(const Tensor& atoms, bool normalize = true);
};

// Separable cosine dictionary. n must be a perfect square (atoms reshape to
// sqrt(n) x sqrt(n) patches). Columns are unit norm; for K == n the result is
// an orthonormal 2-D DCT basis. For K > n a q = ceil(sqrt(K)) frequency grid
// is generated and the first K Kronecker columns are kept, which covers
// non-square atom counts such as 512.
Dictionary build_dct_dictionary(std::int64_t n, std::int64_t K);

// Power iteration on D^T D from a fixed seed vector. Returns the converged
// Rayleigh quotient times a 1.01 safety factor; throws NumericError (carrying
// the last estimate in the message) if the iteration has not converged to tol
// within iters steps.
double estimate_lipschitz(const Dictionary& dict, int iters = 1000, double tol = 1e-10);

}  // namespace scvae

#endif
