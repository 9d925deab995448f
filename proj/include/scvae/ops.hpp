#ifndef SCVAE_OPS_HPP
#define SCVAE_OPS_HPP

#include <cstdint>
#include <vector>

#include "scvae/tensor.hpp"

namespace scvae::ops {

// Differentiable tensor operations. Every op takes the tape first; pass
// nullptr for pure inference. When a tape is given and any input requires a
// gradient, the op appends one backward node and marks its output as
// gradient-bearing. Forward results are identical either way.

// out = A' * B' with A' = A or A^T, B' = B or B^T. Inputs rank 2.
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// Batched matmul over the leading dimension; inputs rank 3, equal batch.
Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// Cross-correlation. input B x C x H x W, kernel O x C x k x k.
// Output H' = floor((H + 2*pad - k)/stride) + 1, same for W'.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int pad);

// x B x C x H x W plus per-channel bias of length C.
Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& bias);

// sign(v) * max(|v| - theta, 0), elementwise. theta must be >= 0 and either
// a scalar, a vector matching the last dimension of v, or the shape of v.
// Subgradient at |v| == theta is 0 (dead-zone side).
Tensor soft_threshold(Tape* tape, const Tensor& v, const Tensor& theta);

// Group normalization over B x C x H x W with per-channel affine.
Tensor group_norm(Tape* tape, const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps);

// x * sigmoid(x), elementwise.
Tensor swish(Tape* tape, const Tensor& x);

// Elementwise (same shape).
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double c);

// Reductions to a scalar tensor.
Tensor sum(Tape* tape, const Tensor& a);
Tensor sum_squares(Tape* tape, const Tensor& a);
Tensor l1_norm(Tape* tape, const Tensor& a);

// Layout ops (materialize a copy).
Tensor reshape(Tape* tape, const Tensor& a, std::vector<std::int64_t> shape);
Tensor permute(Tape* tape, const Tensor& a, const std::vector<int>& perm);

// Nearest-neighbor 2x upsampling of B x C x H x W.
Tensor upsample_nearest2x(Tape* tape, const Tensor& a);

// Softmax over the last dimension (any rank >= 1), numerically stable.
Tensor softmax_lastdim(Tape* tape, const Tensor& a);

}  // namespace scvae::ops

#endif
