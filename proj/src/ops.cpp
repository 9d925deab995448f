#include "scvae/ops.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace scvae::ops {

namespace {

using std::int64_t;

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw DimensionError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                             dtype_name(b.dtype()));
    }
}

bool want_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

// C (m x p) = A' * B' with optional accumulation. A is stored (m x k) row
// major, or (k x m) when ta; B is (k x p), or (p x k) when tb. For every
// output element the summation over k runs in a fixed order that does not
// depend on m or p, so result rows are independent of how inputs are batched.
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t p, bool ta, bool tb, bool acc) {
    if (!acc) std::memset(c, 0, sizeof(T) * static_cast<std::size_t>(m * p));
    if (!ta && !tb) {
        for (int64_t i = 0; i < m; ++i) {
            const T* arow = a + i * k;
            T* crow = c + i * p;
            for (int64_t kk = 0; kk < k; ++kk) {
                const T aik = arow[kk];
                const T* brow = b + kk * p;
                for (int64_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
            }
        }
    } else if (!ta && tb) {
        // Both operands stream contiguously; unrolled accumulators keep the
        // reduction order fixed while letting the compiler vectorize.
        for (int64_t i = 0; i < m; ++i) {
            const T* arow = a + i * k;
            T* crow = c + i * p;
            for (int64_t j = 0; j < p; ++j) {
                const T* brow = b + j * k;
                T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
                int64_t kk = 0;
                for (; kk + 4 <= k; kk += 4) {
                    s0 += arow[kk] * brow[kk];
                    s1 += arow[kk + 1] * brow[kk + 1];
                    s2 += arow[kk + 2] * brow[kk + 2];
                    s3 += arow[kk + 3] * brow[kk + 3];
                }
                T s = (s0 + s1) + (s2 + s3);
                for (; kk < k; ++kk) s += arow[kk] * brow[kk];
                crow[j] += s;
            }
        }
    } else if (ta && !tb) {
        for (int64_t i = 0; i < m; ++i) {
            T* crow = c + i * p;
            for (int64_t kk = 0; kk < k; ++kk) {
                const T aik = a[kk * m + i];
                const T* brow = b + kk * p;
                for (int64_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
            }
        }
    } else {
        for (int64_t i = 0; i < m; ++i) {
            T* crow = c + i * p;
            for (int64_t j = 0; j < p; ++j) {
                const T* bcol = b + j * k;
                T s = 0;
                for (int64_t kk = 0; kk < k; ++kk) s += a[kk * m + i] * bcol[kk];
                crow[j] += s;
            }
        }
    }
}

template <typename T>
void gemm_t(const Tensor& a, const Tensor& b, Tensor& c, int64_t m, int64_t k, int64_t p, bool ta, bool tb,
            int64_t a_off = 0, int64_t b_off = 0, int64_t c_off = 0) {
    gemm<T>(a.data<T>().data() + a_off, b.data<T>().data() + b_off, c.data<T>().data() + c_off, m, k, p, ta, tb,
            false);
}

// Accumulate src into dst's grad buffer.
template <typename T>
void axpy(T* dst, const T* src, int64_t n) {
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename T>
T sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

struct MatDims {
    int64_t m, k, p;
};

MatDims matmul_dims(const Tensor& a, const Tensor& b, bool ta, bool tb, const char* op) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int64_t m = ta ? a.dim(1) : a.dim(0);
    const int64_t ka = ta ? a.dim(0) : a.dim(1);
    const int64_t kb = tb ? b.dim(1) : b.dim(0);
    const int64_t p = tb ? b.dim(0) : b.dim(1);
    if (ka != kb) {
        throw DimensionError(std::string(op) + ": inner dimensions disagree, " + shape_str(a.shape()) +
                             (ta ? "^T" : "") + " * " + shape_str(b.shape()) + (tb ? "^T" : ""));
    }
    return {m, ka, p};
}

template <typename T>
void matmul_backward_kernel(const Tensor& a, const Tensor& b, const Tensor& out, bool ta, bool tb, int64_t m,
                            int64_t k, int64_t p) {
    Tensor A = a;
    Tensor B = b;
    const T* g = out.grad_data<T>().data();
    if (A.requires_grad()) {
        A.ensure_grad();
        T* ga = A.grad_data<T>().data();
        // y = A'B' => dA' = G * B'^T. Map back through the storage flags.
        if (!ta) {
            // dA (m x k) = G (m x p) * B'(k x p)^T; B' rows are B or B^T.
            gemm<T>(g, B.data<T>().data(), ga, m, p, k, false, !tb, true);
        } else {
            // dA stored (k x m): dA_storage = B' * G^T... equivalently
            // dA_storage (k x m) = B'(k x p) * G^T(p x m).
            if (!tb) {
                gemm<T>(B.data<T>().data(), g, ga, k, p, m, false, true, true);
            } else {
                gemm<T>(B.data<T>().data(), g, ga, k, p, m, true, true, true);
            }
        }
    }
    if (B.requires_grad()) {
        B.ensure_grad();
        T* gb = B.grad_data<T>().data();
        if (!tb) {
            // dB (k x p) = A'^T * G = A'(m x k)^T G(m x p).
            gemm<T>(A.data<T>().data(), g, gb, k, m, p, !ta, false, true);
        } else {
            // dB stored (p x k) = G^T(p x m) * A'(m x k).
            if (!ta) {
                gemm<T>(g, A.data<T>().data(), gb, p, m, k, true, false, true);
            } else {
                gemm<T>(g, A.data<T>().data(), gb, p, m, k, true, true, true);
            }
        }
    }
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    check_same_dtype(a, b, "matmul");
    const auto [m, k, p] = matmul_dims(a, b, trans_a, trans_b, "matmul");
    Tensor out({m, p}, a.dtype());
    if (a.dtype() == Dtype::F32) {
        gemm_t<float>(a, b, out, m, k, p, trans_a, trans_b);
    } else {
        gemm_t<double>(a, b, out, m, k, p, trans_a, trans_b);
    }
    if (want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        const bool ta = trans_a, tb = trans_b;
        tape->record([ac, bc, oc, ta, tb, m = m, k = k, p = p]() {
            if (!oc.has_grad()) return;
            if (oc.dtype() == Dtype::F32) {
                matmul_backward_kernel<float>(ac, bc, oc, ta, tb, m, k, p);
            } else {
                matmul_backward_kernel<double>(ac, bc, oc, ta, tb, m, k, p);
            }
        });
    }
    return out;
}

Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    check_same_dtype(a, b, "bmm");
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
        throw DimensionError("bmm: expected equal-batch rank-3 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int64_t batch = a.dim(0);
    const int64_t m = trans_a ? a.dim(2) : a.dim(1);
    const int64_t ka = trans_a ? a.dim(1) : a.dim(2);
    const int64_t kb = trans_b ? b.dim(2) : b.dim(1);
    const int64_t p = trans_b ? b.dim(1) : b.dim(2);
    if (ka != kb) {
        throw DimensionError("bmm: inner dimensions disagree, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out({batch, m, p}, a.dtype());
    const int64_t as = a.dim(1) * a.dim(2), bs = b.dim(1) * b.dim(2), os = m * p;
    for (int64_t i = 0; i < batch; ++i) {
        if (a.dtype() == Dtype::F32) {
            gemm_t<float>(a, b, out, m, ka, p, trans_a, trans_b, i * as, i * bs, i * os);
        } else {
            gemm_t<double>(a, b, out, m, ka, p, trans_a, trans_b, i * as, i * bs, i * os);
        }
    }
    if (want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        const bool ta = trans_a, tb = trans_b;
        tape->record([ac, bc, oc, ta, tb, batch, m, k = ka, p, as, bs, os]() {
            if (!oc.has_grad()) return;
            // Reuse the 2-D backward per batch item by aliasing offsets.
            auto run = [&](auto tag) {
                using T = decltype(tag);
                Tensor A = ac, B = bc;
                if (A.requires_grad()) A.ensure_grad();
                if (B.requires_grad()) B.ensure_grad();
                const T* g = oc.grad_data<T>().data();
                for (int64_t i = 0; i < batch; ++i) {
                    const T* gi = g + i * os;
                    if (A.requires_grad()) {
                        T* ga = A.grad_data<T>().data() + i * as;
                        if (!ta) {
                            gemm<T>(gi, B.data<T>().data() + i * bs, ga, m, p, k, false, !tb, true);
                        } else if (!tb) {
                            gemm<T>(B.data<T>().data() + i * bs, gi, ga, k, p, m, false, true, true);
                        } else {
                            gemm<T>(B.data<T>().data() + i * bs, gi, ga, k, p, m, true, true, true);
                        }
                    }
                    if (B.requires_grad()) {
                        T* gb = B.grad_data<T>().data() + i * bs;
                        if (!tb) {
                            gemm<T>(A.data<T>().data() + i * as, gi, gb, k, m, p, !ta, false, true);
                        } else if (!ta) {
                            gemm<T>(gi, A.data<T>().data() + i * as, gb, p, m, k, true, false, true);
                        } else {
                            gemm<T>(gi, A.data<T>().data() + i * as, gb, p, m, k, true, true, true);
                        }
                    }
                }
            };
            if (oc.dtype() == Dtype::F32) {
                run(float{});
            } else {
                run(double{});
            }
        });
    }
    return out;
}

namespace {

struct ConvDims {
    int64_t B, C, H, W, O, k, Ho, Wo, ckk;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride, int pad) {
    if (input.rank() != 4 || kernel.rank() != 4) {
        throw DimensionError("conv2d: expected input BxCxHxW and kernel OxCxkxk, got " + shape_str(input.shape()) +
                             " and " + shape_str(kernel.shape()));
    }
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (pad < 0) throw ConfigError("conv2d: pad must be >= 0");
    ConvDims d;
    d.B = input.dim(0);
    d.C = input.dim(1);
    d.H = input.dim(2);
    d.W = input.dim(3);
    d.O = kernel.dim(0);
    d.k = kernel.dim(2);
    if (kernel.dim(1) != d.C || kernel.dim(3) != d.k) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                             shape_str(input.shape()));
    }
    if (d.k > d.H + 2 * pad || d.k > d.W + 2 * pad) {
        throw DimensionError("conv2d: kernel size " + std::to_string(d.k) + " exceeds padded input " +
                             shape_str(input.shape()) + " with pad " + std::to_string(pad));
    }
    d.Ho = (d.H + 2 * pad - d.k) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.k) / stride + 1;
    d.ckk = d.C * d.k * d.k;
    return d;
}

template <typename T>
void im2col(const T* in, T* col, const ConvDims& d, int stride, int pad) {
    // col is (C*k*k) x (Ho*Wo), one image.
    const int64_t hw = d.Ho * d.Wo;
    for (int64_t c = 0; c < d.C; ++c) {
        for (int64_t di = 0; di < d.k; ++di) {
            for (int64_t dj = 0; dj < d.k; ++dj) {
                T* dst = col + ((c * d.k + di) * d.k + dj) * hw;
                for (int64_t oy = 0; oy < d.Ho; ++oy) {
                    const int64_t iy = oy * stride + di - pad;
                    for (int64_t ox = 0; ox < d.Wo; ++ox) {
                        const int64_t ix = ox * stride + dj - pad;
                        T v = 0;
                        if (iy >= 0 && iy < d.H && ix >= 0 && ix < d.W) v = in[(c * d.H + iy) * d.W + ix];
                        dst[oy * d.Wo + ox] = v;
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_acc(const T* col, T* in_grad, const ConvDims& d, int stride, int pad) {
    const int64_t hw = d.Ho * d.Wo;
    for (int64_t c = 0; c < d.C; ++c) {
        for (int64_t di = 0; di < d.k; ++di) {
            for (int64_t dj = 0; dj < d.k; ++dj) {
                const T* src = col + ((c * d.k + di) * d.k + dj) * hw;
                for (int64_t oy = 0; oy < d.Ho; ++oy) {
                    const int64_t iy = oy * stride + di - pad;
                    if (iy < 0 || iy >= d.H) continue;
                    for (int64_t ox = 0; ox < d.Wo; ++ox) {
                        const int64_t ix = ox * stride + dj - pad;
                        if (ix < 0 || ix >= d.W) continue;
                        in_grad[(c * d.H + iy) * d.W + ix] += src[oy * d.Wo + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_forward(const Tensor& input, const Tensor& kernel, Tensor& out, const ConvDims& d, int stride, int pad) {
    const int64_t hw = d.Ho * d.Wo;
    std::vector<T> col(static_cast<std::size_t>(d.ckk * hw));
    for (int64_t b = 0; b < d.B; ++b) {
        im2col<T>(input.data<T>().data() + b * d.C * d.H * d.W, col.data(), d, stride, pad);
        gemm<T>(kernel.data<T>().data(), col.data(), out.data<T>().data() + b * d.O * hw, d.O, d.ckk, hw, false,
                false, false);
    }
}

template <typename T>
void conv_backward(const Tensor& input, const Tensor& kernel, const Tensor& out, const ConvDims& d, int stride,
                   int pad) {
    Tensor in = input;
    Tensor ker = kernel;
    const int64_t hw = d.Ho * d.Wo;
    const T* g = out.grad_data<T>().data();
    std::vector<T> col(static_cast<std::size_t>(d.ckk * hw));
    std::vector<T> dcol;
    if (in.requires_grad()) {
        in.ensure_grad();
        dcol.resize(static_cast<std::size_t>(d.ckk * hw));
    }
    if (ker.requires_grad()) ker.ensure_grad();
    for (int64_t b = 0; b < d.B; ++b) {
        const T* gi = g + b * d.O * hw;
        if (ker.requires_grad()) {
            im2col<T>(in.data<T>().data() + b * d.C * d.H * d.W, col.data(), d, stride, pad);
            // dK (O x ckk) += G (O x hw) * col^T.
            gemm<T>(gi, col.data(), ker.grad_data<T>().data(), d.O, hw, d.ckk, false, true, true);
        }
        if (in.requires_grad()) {
            // dcol (ckk x hw) = K^T (ckk x O) * G.
            gemm<T>(ker.data<T>().data(), gi, dcol.data(), d.ckk, d.O, hw, true, false, false);
            col2im_acc<T>(dcol.data(), in.grad_data<T>().data() + b * d.C * d.H * d.W, d, stride, pad);
        }
    }
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int pad) {
    check_same_dtype(input, kernel, "conv2d");
    const ConvDims d = conv_dims(input, kernel, stride, pad);
    Tensor out({d.B, d.O, d.Ho, d.Wo}, input.dtype());
    if (input.dtype() == Dtype::F32) {
        conv_forward<float>(input, kernel, out, d, stride, pad);
    } else {
        conv_forward<double>(input, kernel, out, d, stride, pad);
    }
    if (want_grad(tape, {&input, &kernel})) {
        out.set_requires_grad(true);
        Tensor ic = input, kc = kernel, oc = out;
        tape->record([ic, kc, oc, d, stride, pad]() {
            if (!oc.has_grad()) return;
            if (oc.dtype() == Dtype::F32) {
                conv_backward<float>(ic, kc, oc, d, stride, pad);
            } else {
                conv_backward<double>(ic, kc, oc, d, stride, pad);
            }
        });
    }
    return out;
}

Tensor add_channel_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
    check_same_dtype(x, bias, "add_channel_bias");
    if (x.rank() != 4 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw DimensionError("add_channel_bias: got " + shape_str(x.shape()) + " and " + shape_str(bias.shape()));
    }
    const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out(x.shape(), x.dtype());
    auto fwd = [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        const T* bv = bias.data<T>().data();
        T* o = out.data<T>().data();
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t c = 0; c < C; ++c) {
                const T bc = bv[c];
                const int64_t base = (b * C + c) * HW;
                for (int64_t i = 0; i < HW; ++i) o[base + i] = in[base + i] + bc;
            }
        }
    };
    if (x.dtype() == Dtype::F32) {
        fwd(float{});
    } else {
        fwd(double{});
    }
    if (want_grad(tape, {&x, &bias})) {
        out.set_requires_grad(true);
        Tensor xc = x, bc = bias, oc = out;
        tape->record([xc, bc, oc, B, C, HW]() {
            if (!oc.has_grad()) return;
            auto run = [&](auto tag) {
                using T = decltype(tag);
                Tensor X = xc, Bv = bc;
                const T* g = oc.grad_data<T>().data();
                if (X.requires_grad()) {
                    X.ensure_grad();
                    axpy<T>(X.grad_data<T>().data(), g, B * C * HW);
                }
                if (Bv.requires_grad()) {
                    Bv.ensure_grad();
                    T* gb = Bv.grad_data<T>().data();
                    for (int64_t b = 0; b < B; ++b) {
                        for (int64_t c = 0; c < C; ++c) {
                            const int64_t base = (b * C + c) * HW;
                            T s = 0;
                            for (int64_t i = 0; i < HW; ++i) s += g[base + i];
                            gb[c] += s;
                        }
                    }
                }
            };
            if (oc.dtype() == Dtype::F32) {
                run(float{});
            } else {
                run(double{});
            }
        });
    }
    return out;
}

namespace {

enum class ThetaKind { Scalar, LastDim, Full };

ThetaKind theta_kind(const Tensor& v, const Tensor& theta) {
    if (theta.numel() == 1) return ThetaKind::Scalar;
    if (same_shape(v, theta)) return ThetaKind::Full;
    if (theta.rank() == 1 && !v.shape().empty() && theta.dim(0) == v.shape().back()) return ThetaKind::LastDim;
    throw DimensionError("soft_threshold: theta " + shape_str(theta.shape()) + " not broadcastable to " +
                         shape_str(v.shape()));
}

}  // namespace

Tensor soft_threshold(Tape* tape, const Tensor& v, const Tensor& theta) {
    check_same_dtype(v, theta, "soft_threshold");
    const ThetaKind kind = theta_kind(v, theta);
    for (int64_t i = 0; i < theta.numel(); ++i) {
        if (theta.at(i) < 0.0) {
            throw DomainError("soft_threshold: negative threshold at index " + std::to_string(i));
        }
    }
    const int64_t n = v.numel();
    const int64_t last = kind == ThetaKind::LastDim ? v.shape().back() : 0;
    Tensor out(v.shape(), v.dtype());
    auto fwd = [&](auto tag) {
        using T = decltype(tag);
        const T* in = v.data<T>().data();
        const T* th = theta.data<T>().data();
        T* o = out.data<T>().data();
        for (int64_t i = 0; i < n; ++i) {
            const T t = kind == ThetaKind::Scalar ? th[0] : (kind == ThetaKind::Full ? th[i] : th[i % last]);
            const T x = in[i];
            const T mag = std::abs(x) - t;
            o[i] = mag > T(0) ? (x > T(0) ? mag : -mag) : T(0);
        }
    };
    if (v.dtype() == Dtype::F32) {
        fwd(float{});
    } else {
        fwd(double{});
    }
    if (want_grad(tape, {&v, &theta})) {
        out.set_requires_grad(true);
        Tensor vc = v, tc = theta, oc = out;
        tape->record([vc, tc, oc, kind, n, last]() {
            if (!oc.has_grad()) return;
            auto run = [&](auto tag) {
                using T = decltype(tag);
                Tensor V = vc, Th = tc;
                const T* g = oc.grad_data<T>().data();
                const T* in = V.data<T>().data();
                const T* th = Th.data<T>().data();
                if (V.requires_grad()) V.ensure_grad();
                if (Th.requires_grad()) Th.ensure_grad();
                T* gv = V.requires_grad() ? V.grad_data<T>().data() : nullptr;
                T* gt = Th.requires_grad() ? Th.grad_data<T>().data() : nullptr;
                for (int64_t i = 0; i < n; ++i) {
                    const int64_t ti = kind == ThetaKind::Scalar ? 0 : (kind == ThetaKind::Full ? i : i % last);
                    const T x = in[i];
                    if (std::abs(x) > th[ti]) {
                        if (gv) gv[i] += g[i];
                        if (gt) gt[ti] -= (x > T(0) ? g[i] : -g[i]);
                    }
                }
            };
            if (oc.dtype() == Dtype::F32) {
                run(float{});
            } else {
                run(double{});
            }
        });
    }
    return out;
}

namespace {

template <typename T>
void group_norm_forward(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps,
                        Tensor& out) {
    const int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const int64_t cpg = C / groups;
    const int64_t gsz = cpg * HW;
    const T* in = x.data<T>().data();
    const T* gm = gamma.data<T>().data();
    const T* bt = beta.data<T>().data();
    T* o = out.data<T>().data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t g = 0; g < groups; ++g) {
            const int64_t base = (b * C + g * cpg) * HW;
            T mean = 0;
            for (int64_t i = 0; i < gsz; ++i) mean += in[base + i];
            mean /= static_cast<T>(gsz);
            T var = 0;
            for (int64_t i = 0; i < gsz; ++i) {
                const T d = in[base + i] - mean;
                var += d * d;
            }
            var /= static_cast<T>(gsz);
            const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
            for (int64_t c = 0; c < cpg; ++c) {
                const T ga = gm[g * cpg + c];
                const T be = bt[g * cpg + c];
                const int64_t cb = base + c * HW;
                for (int64_t i = 0; i < HW; ++i) o[cb + i] = (in[cb + i] - mean) * inv * ga + be;
            }
        }
    }
}

template <typename T>
void group_norm_backward(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps,
                         const Tensor& out) {
    Tensor X = x;
    Tensor Ga = gamma;
    Tensor Be = beta;
    const int64_t B = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
    const int64_t cpg = C / groups;
    const int64_t gsz = cpg * HW;
    const T* in = X.data<T>().data();
    const T* gm = Ga.data<T>().data();
    const T* g = out.grad_data<T>().data();
    if (X.requires_grad()) X.ensure_grad();
    if (Ga.requires_grad()) Ga.ensure_grad();
    if (Be.requires_grad()) Be.ensure_grad();
    std::vector<T> xhat(static_cast<std::size_t>(gsz));
    std::vector<T> gxh(static_cast<std::size_t>(gsz));
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t grp = 0; grp < groups; ++grp) {
            const int64_t base = (b * C + grp * cpg) * HW;
            T mean = 0;
            for (int64_t i = 0; i < gsz; ++i) mean += in[base + i];
            mean /= static_cast<T>(gsz);
            T var = 0;
            for (int64_t i = 0; i < gsz; ++i) {
                const T d = in[base + i] - mean;
                var += d * d;
            }
            var /= static_cast<T>(gsz);
            const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
            for (int64_t i = 0; i < gsz; ++i) xhat[static_cast<std::size_t>(i)] = (in[base + i] - mean) * inv;
            for (int64_t c = 0; c < cpg; ++c) {
                const T ga = gm[grp * cpg + c];
                for (int64_t i = 0; i < HW; ++i) {
                    gxh[static_cast<std::size_t>(c * HW + i)] = g[base + c * HW + i] * ga;
                }
            }
            if (Ga.requires_grad() || Be.requires_grad()) {
                for (int64_t c = 0; c < cpg; ++c) {
                    T sg = 0, sgx = 0;
                    for (int64_t i = 0; i < HW; ++i) {
                        const T gy = g[base + c * HW + i];
                        sg += gy;
                        sgx += gy * xhat[static_cast<std::size_t>(c * HW + i)];
                    }
                    if (Ga.requires_grad()) Ga.grad_data<T>()[static_cast<std::size_t>(grp * cpg + c)] += sgx;
                    if (Be.requires_grad()) Be.grad_data<T>()[static_cast<std::size_t>(grp * cpg + c)] += sg;
                }
            }
            if (X.requires_grad()) {
                T mg = 0, mgx = 0;
                for (int64_t i = 0; i < gsz; ++i) {
                    mg += gxh[static_cast<std::size_t>(i)];
                    mgx += gxh[static_cast<std::size_t>(i)] * xhat[static_cast<std::size_t>(i)];
                }
                mg /= static_cast<T>(gsz);
                mgx /= static_cast<T>(gsz);
                T* gx = X.grad_data<T>().data();
                for (int64_t i = 0; i < gsz; ++i) {
                    gx[base + i] +=
                        (gxh[static_cast<std::size_t>(i)] - mg - xhat[static_cast<std::size_t>(i)] * mgx) * inv;
                }
            }
        }
    }
}

}  // namespace

Tensor group_norm(Tape* tape, const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
    check_same_dtype(x, gamma, "group_norm");
    check_same_dtype(x, beta, "group_norm");
    if (x.rank() != 4) throw DimensionError("group_norm: expected BxCxHxW, got " + shape_str(x.shape()));
    const int64_t C = x.dim(1);
    if (groups < 1 || C % groups != 0) {
        throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by groups " +
                          std::to_string(groups));
    }
    if (eps <= 0.0) throw ConfigError("group_norm: eps must be > 0");
    if (gamma.numel() != C || beta.numel() != C) {
        throw DimensionError("group_norm: affine parameters must have length " + std::to_string(C));
    }
    Tensor out(x.shape(), x.dtype());
    if (x.dtype() == Dtype::F32) {
        group_norm_forward<float>(x, groups, gamma, beta, eps, out);
    } else {
        group_norm_forward<double>(x, groups, gamma, beta, eps, out);
    }
    if (want_grad(tape, {&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gamma, bc = beta, oc = out;
        tape->record([xc, gc, bc, oc, groups, eps]() {
            if (!oc.has_grad()) return;
            if (oc.dtype() == Dtype::F32) {
                group_norm_backward<float>(xc, groups, gc, bc, eps, oc);
            } else {
                group_norm_backward<double>(xc, groups, gc, bc, eps, oc);
            }
        });
    }
    return out;
}

Tensor swish(Tape* tape, const Tensor& x) {
    Tensor out(x.shape(), x.dtype());
    const int64_t n = x.numel();
    auto fwd = [&](auto tag) {
        using T = decltype(tag);
        const T* in = x.data<T>().data();
        T* o = out.data<T>().data();
        for (int64_t i = 0; i < n; ++i) o[i] = in[i] * sigmoid<T>(in[i]);
    };
    if (x.dtype() == Dtype::F32) {
        fwd(float{});
    } else {
        fwd(double{});
    }
    if (want_grad(tape, {&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        tape->record([xc, oc, n]() {
            if (!oc.has_grad()) return;
            auto run = [&](auto tag) {
                using T = decltype(tag);
                Tensor X = xc;
                X.ensure_grad();
                const T* in = X.data<T>().data();
                const T* g = oc.grad_data<T>().data();
                T* gx = X.grad_data<T>().data();
                for (int64_t i = 0; i < n; ++i) {
                    const T s = sigmoid<T>(in[i]);
                    gx[i] += g[i] * (s + in[i] * s * (T(1) - s));
                }
            };
            if (oc.dtype() == Dtype::F32) {
                run(float{});
            } else {
                run(double{});
            }
        });
    }
    return out;
}

namespace {

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(Tape* tape, const Tensor& a, const Tensor& b, EwKind kind, const char* name) {
    check_same_dtype(a, b, name);
    if (!same_shape(a, b)) {
        throw DimensionError(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const int64_t n = a.numel();
    Tensor out(a.shape(), a.dtype());
    auto fwd = [&](auto tag) {
        using T = decltype(tag);
        const T* x = a.data<T>().data();
        const T* y = b.data<T>().data();
        T* o = out.data<T>().data();
        switch (kind) {
            case EwKind::Add:
                for (int64_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
                break;
            case EwKind::Sub:
                for (int64_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
                break;
            case EwKind::Mul:
                for (int64_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
                break;
        }
    };
    if (a.dtype() == Dtype::F32) {
        fwd(float{});
    } else {
        fwd(double{});
    }
    if (want_grad(tape, {&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        tape->record([ac, bc, oc, kind, n]() {
            if (!oc.has_grad()) return;
            auto run = [&](auto tag) {
                using T = decltype(tag);
                Tensor A = ac, B = bc;
                const T* g = oc.grad_data<T>().data();
                if (A.requires_grad()) {
                    A.ensure_grad();
                    T* ga = A.grad_data<T>().data();
                    if (kind == EwKind::Mul) {
                        const T* y = B.data<T>().data();
                        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * y[i];
                    } else {
                        axpy<T>(ga, g, n);
                    }
                }
                if (B.requires_grad()) {
                    B.ensure_grad();
                    T* gb = B.grad_data<T>().data();
                    switch (kind) {
                        case EwKind::Add:
                            axpy<T>(gb, g, n);
                            break;
                        case EwKind::Sub:
                            for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
                            break;
                        case EwKind::Mul: {
                            const T* x = A.data<T>().data();
                            for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * x[i];
                            break;
                        }
                    }
                }
            };
            if (oc.dtype() == Dtype::F32) {
                run(float{});
            } else {
                run(double{});
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) { return elementwise(tape, a, b, EwKind::Add, "add"); }
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) { return elementwise(tape, a, b, EwKind::Sub, "sub"); }
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) { return elementwise(tape, a, b, EwKind::Mul, "mul"); }

Tensor scale(Tape* tape, const Tensor& a, double c) {
    const int64_t n = a.numel();
    Tensor out(a.shape(), a.dtype());
    auto fwd = [&](auto tag) {
        using T = decltype(tag);
        const T cc = static_cast<T>(c);
        const T* x = a.data<T>().data();
        T* o = out.data<T>().data();
        for (int64_t i = 0; i < n; ++i) o[i] = x[i] * cc;
    };
    if (a.dtype() == Dtype::F32) {
        fwd(float{});
    } else {
        fwd(double{});
    }
    if (want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        tape->record([ac, oc, c, n]() {
            if (!oc.has_grad()) return;
            auto run = [&](auto tag) {
                using T = decltype(tag);
                Tensor A = ac;
                A.ensure_grad();
                const T cc = static_cast<T>(c);
                const T* g = oc.grad_data<T>().data();
                T* ga = A.grad_data<T>().data();
                for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * cc;
            };
            if (oc.dtype() == Dtype::F32) {
                run(float{});
            } else {
                run(double{});
            }
        });
    }
    return out;
}

namespace {

enum class RedKind { Sum, SumSq, L1 };

Tensor reduce(Tape* tape, const Tensor& a, RedKind kind) {
    const int64_t n = a.numel();
    Tensor out({}, a.dtype());
    auto fwd = [&](auto tag) {
        using T = decltype(tag);
        const T* x = a.data<T>().data();
        T s = 0;
        switch (kind) {
            case RedKind::Sum:
                for (int64_t i = 0; i < n; ++i) s += x[i];
                break;
            case RedKind::SumSq:
                for (int64_t i = 0; i < n; ++i) s += x[i] * x[i];
                break;
            case RedKind::L1:
                for (int64_t i = 0; i < n; ++i) s += std::abs(x[i]);
                break;
        }
        out.data<T>()[0] = s;
    };
    if (a.dtype() == Dtype::F32) {
        fwd(float{});
    } else {
        fwd(double{});
    }
    if (want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        tape->record([ac, oc, kind, n]() {
            if (!oc.has_grad()) return;
            auto run = [&](auto tag) {
                using T = decltype(tag);
                Tensor A = ac;
                A.ensure_grad();
                const T g = oc.grad_data<T>()[0];
                const T* x = A.data<T>().data();
                T* ga = A.grad_data<T>().data();
                switch (kind) {
                    case RedKind::Sum:
                        for (int64_t i = 0; i < n; ++i) ga[i] += g;
                        break;
                    case RedKind::SumSq:
                        for (int64_t i = 0; i < n; ++i) ga[i] += g * T(2) * x[i];
                        break;
                    case RedKind::L1:
                        // Subgradient 0 at x == 0.
                        for (int64_t i = 0; i < n; ++i) {
                            if (x[i] > T(0)) {
                                ga[i] += g;
                            } else if (x[i] < T(0)) {
                                ga[i] -= g;
                            }
                        }
                        break;
                }
            };
            if (oc.dtype() == Dtype::F32) {
                run(float{});
            } else {
                run(double{});
            }
        });
    }
    return out;
}

}  // namespace

Tensor sum(Tape* tape, const Tensor& a) { return reduce(tape, a, RedKind::Sum); }
Tensor sum_squares(Tape* tape, const Tensor& a) { return reduce(tape, a, RedKind::SumSq); }
Tensor l1_norm(Tape* tape, const Tensor& a) { return reduce(tape, a, RedKind::L1); }

Tensor reshape(Tape* tape, const Tensor& a, std::vector<std::int64_t> shape) {
    Tensor out(std::move(shape), a.dtype());
    if (out.numel() != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(out.shape()));
    }
    std::memcpy(out.impl()->data.data(), a.impl()->data.data(), a.impl()->data.size());
    if (want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        tape->record([ac, oc]() {
            if (!oc.has_grad()) return;
            Tensor A = ac;
            A.ensure_grad();
            const int64_t n = A.numel();
            if (A.dtype() == Dtype::F32) {
                axpy<float>(A.grad_data<float>().data(), oc.grad_data<float>().data(), n);
            } else {
                axpy<double>(A.grad_data<double>().data(), oc.grad_data<double>().data(), n);
            }
        });
    }
    return out;
}

namespace {

template <typename T>
void permute_kernel(const T* in, T* o, const std::vector<int64_t>& in_shape, const std::vector<int>& perm) {
    const std::size_t r = in_shape.size();
    std::vector<int64_t> in_strides(r, 1), out_shape(r);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[static_cast<std::size_t>(perm[i])];
    std::vector<int64_t> out_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) out_strides[i - 1] = out_strides[i] * out_shape[i];
    int64_t total = 1;
    for (auto d : in_shape) total *= d;
    std::vector<int64_t> idx(r, 0);
    for (int64_t flat = 0; flat < total; ++flat) {
        int64_t rem = flat;
        int64_t oflat = 0;
        for (std::size_t i = 0; i < r; ++i) {
            idx[i] = rem / in_strides[i];
            rem %= in_strides[i];
        }
        for (std::size_t i = 0; i < r; ++i) oflat += idx[static_cast<std::size_t>(perm[i])] * out_strides[i];
        o[oflat] = in[flat];
    }
}

}  // namespace

Tensor permute(Tape* tape, const Tensor& a, const std::vector<int>& perm) {
    const std::size_t r = a.rank();
    if (perm.size() != r) throw DimensionError("permute: rank mismatch for " + shape_str(a.shape()));
    std::vector<bool> seen(r, false);
    std::vector<int64_t> out_shape(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (perm[i] < 0 || perm[i] >= static_cast<int>(r) || seen[static_cast<std::size_t>(perm[i])]) {
            throw DimensionError("permute: invalid permutation");
        }
        seen[static_cast<std::size_t>(perm[i])] = true;
        out_shape[i] = a.dim(static_cast<std::size_t>(perm[i]));
    }
    Tensor out(out_shape, a.dtype());
    if (a.dtype() == Dtype::F32) {
        permute_kernel<float>(a.data<float>().data(), out.data<float>().data(), a.shape(), perm);
    } else {
        permute_kernel<double>(a.data<double>().data(), out.data<double>().data(), a.shape(), perm);
    }
    if (want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        std::vector<int> inv(r);
        for (std::size_t i = 0; i < r; ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
        Tensor ac = a, oc = out;
        tape->record([ac, oc, inv]() {
            if (!oc.has_grad()) return;
            Tensor A = ac;
            A.ensure_grad();
            // Permute the output gradient back and accumulate.
            Tensor tmp(A.shape(), A.dtype());
            if (A.dtype() == Dtype::F32) {
                permute_kernel<float>(oc.grad_data<float>().data(), tmp.data<float>().data(), oc.shape(), inv);
                axpy<float>(A.grad_data<float>().data(), tmp.data<float>().data(), A.numel());
            } else {
                permute_kernel<double>(oc.grad_data<double>().data(), tmp.data<double>().data(), oc.shape(), inv);
                axpy<double>(A.grad_data<double>().data(), tmp.data<double>().data(), A.numel());
            }
        });
    }
    return out;
}

Tensor upsample_nearest2x(Tape* tape, const Tensor& a) {
    if (a.rank() != 4) throw DimensionError("upsample_nearest2x: expected BxCxHxW, got " + shape_str(a.shape()));
    const int64_t B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
    Tensor out({B, C, 2 * H, 2 * W}, a.dtype());
    auto fwd = [&](auto tag) {
        using T = decltype(tag);
        const T* in = a.data<T>().data();
        T* o = out.data<T>().data();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const T* src = in + bc * H * W;
            T* dst = o + bc * 4 * H * W;
            for (int64_t y = 0; y < 2 * H; ++y) {
                const T* row = src + (y / 2) * W;
                T* orow = dst + y * 2 * W;
                for (int64_t x = 0; x < 2 * W; ++x) orow[x] = row[x / 2];
            }
        }
    };
    if (a.dtype() == Dtype::F32) {
        fwd(float{});
    } else {
        fwd(double{});
    }
    if (want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        tape->record([ac, oc, B, C, H, W]() {
            if (!oc.has_grad()) return;
            auto run = [&](auto tag) {
                using T = decltype(tag);
                Tensor A = ac;
                A.ensure_grad();
                const T* g = oc.grad_data<T>().data();
                T* ga = A.grad_data<T>().data();
                for (int64_t bc = 0; bc < B * C; ++bc) {
                    const T* src = g + bc * 4 * H * W;
                    T* dst = ga + bc * H * W;
                    for (int64_t y = 0; y < 2 * H; ++y) {
                        const T* row = src + y * 2 * W;
                        T* drow = dst + (y / 2) * W;
                        for (int64_t x = 0; x < 2 * W; ++x) drow[x / 2] += row[x];
                    }
                }
            };
            if (oc.dtype() == Dtype::F32) {
                run(float{});
            } else {
                run(double{});
            }
        });
    }
    return out;
}

Tensor softmax_lastdim(Tape* tape, const Tensor& a) {
    if (a.rank() < 1) throw DimensionError("softmax_lastdim: rank must be >= 1");
    const int64_t last = a.shape().back();
    const int64_t rows = a.numel() / last;
    Tensor out(a.shape(), a.dtype());
    auto fwd = [&](auto tag) {
        using T = decltype(tag);
        const T* in = a.data<T>().data();
        T* o = out.data<T>().data();
        for (int64_t r = 0; r < rows; ++r) {
            const T* x = in + r * last;
            T* y = o + r * last;
            T mx = x[0];
            for (int64_t i = 1; i < last; ++i) mx = std::max(mx, x[i]);
            T s = 0;
            for (int64_t i = 0; i < last; ++i) {
                y[i] = std::exp(x[i] - mx);
                s += y[i];
            }
            const T inv = T(1) / s;
            for (int64_t i = 0; i < last; ++i) y[i] *= inv;
        }
    };
    if (a.dtype() == Dtype::F32) {
        fwd(float{});
    } else {
        fwd(double{});
    }
    if (want_grad(tape, {&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        tape->record([ac, oc, rows, last]() {
            if (!oc.has_grad()) return;
            auto run = [&](auto tag) {
                using T = decltype(tag);
                Tensor A = ac;
                A.ensure_grad();
                const T* y = oc.data<T>().data();
                const T* g = oc.grad_data<T>().data();
                T* ga = A.grad_data<T>().data();
                for (int64_t r = 0; r < rows; ++r) {
                    const T* yr = y + r * last;
                    const T* gr = g + r * last;
                    T dot = 0;
                    for (int64_t i = 0; i < last; ++i) dot += gr[i] * yr[i];
                    for (int64_t i = 0; i < last; ++i) ga[r * last + i] += yr[i] * (gr[i] - dot);
                }
            };
            if (oc.dtype() == Dtype::F32) {
                run(float{});
            } else {
                run(double{});
            }
        });
    }
    return out;
}

}  // namespace scvae::ops
