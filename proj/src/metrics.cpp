#include "scvae/metrics.hpp"

#include <cmath>
#include <string>

namespace scvae {

namespace {

constexpr double kPsnrCap = 99.0;
constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

// 11-tap Gaussian, normalized to sum 1.
std::vector<double> ssim_kernel() {
    std::vector<double> k(kSsimWindow);
    const int half = kSsimWindow / 2;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = static_cast<double>(i - half);
        k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Channel-plane SSIM over the valid region (no padding).
double ssim_plane(const double* a, const double* b, std::int64_t h, std::int64_t w, double c1, double c2) {
    static const std::vector<double> kern = ssim_kernel();
    const int half = kSsimWindow / 2;
    const std::int64_t oh = h - 2 * half, ow = w - 2 * half;

    // Separable filtering: rows first, then columns, for the five moment maps.
    auto filter = [&](const std::vector<double>& src, std::vector<double>& tmp, std::vector<double>& dst) {
        // horizontal pass: (h x w) -> (h x ow)
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int t = 0; t < kSsimWindow; ++t) s += kern[static_cast<std::size_t>(t)] * src[y * w + x + t];
                tmp[static_cast<std::size_t>(y * ow + x)] = s;
            }
        }
        // vertical pass: (h x ow) -> (oh x ow)
        for (std::int64_t y = 0; y < oh; ++y) {
            for (std::int64_t x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int t = 0; t < kSsimWindow; ++t) s += kern[static_cast<std::size_t>(t)] * tmp[(y + t) * ow + x];
                dst[static_cast<std::size_t>(y * ow + x)] = s;
            }
        }
    };

    const std::size_t npx = static_cast<std::size_t>(h * w);
    std::vector<double> aa(npx), bb(npx), ab(npx);
    for (std::size_t i = 0; i < npx; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    std::vector<double> tmp(static_cast<std::size_t>(h * ow));
    std::vector<double> mu_a(static_cast<std::size_t>(oh * ow)), mu_b(mu_a.size()), m_aa(mu_a.size()),
        m_bb(mu_a.size()), m_ab(mu_a.size());
    std::vector<double> av(a, a + npx), bv(b, b + npx);
    filter(av, tmp, mu_a);
    filter(bv, tmp, mu_b);
    filter(aa, tmp, m_aa);
    filter(bb, tmp, m_bb);
    filter(ab, tmp, m_ab);

    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = m_aa[i] - ma * ma;
        const double vb = m_bb[i] - mb * mb;
        const double cov = m_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(mu_a.size());
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b, double max_val) {
    if (!same_shape(a, b)) {
        throw DimensionError("psnr: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    if (max_val <= 0.0) throw DomainError("psnr: max_val must be > 0");
    const std::int64_t n = a.numel();
    double mse = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = a.at(i) - b.at(i);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

double ssim(const Tensor& a, const Tensor& b, double max_val) {
    if (!same_shape(a, b)) {
        throw DimensionError("ssim: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    if (a.rank() != 2 && a.rank() != 3) throw DimensionError("ssim: expected HxW or CxHxW");
    if (max_val <= 0.0) throw DomainError("ssim: max_val must be > 0");
    const std::int64_t c = a.rank() == 3 ? a.dim(0) : 1;
    const std::int64_t h = a.rank() == 3 ? a.dim(1) : a.dim(0);
    const std::int64_t w = a.rank() == 3 ? a.dim(2) : a.dim(1);
    if (h < kSsimWindow || w < kSsimWindow) {
        throw DimensionError("ssim: image " + shape_str(a.shape()) + " smaller than the 11x11 window");
    }
    const double c1 = (0.01 * max_val) * (0.01 * max_val);
    const double c2 = (0.03 * max_val) * (0.03 * max_val);
    std::vector<double> pa(static_cast<std::size_t>(h * w)), pb(pa.size());
    double acc = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t i = 0; i < h * w; ++i) {
            pa[static_cast<std::size_t>(i)] = a.at(ch * h * w + i);
            pb[static_cast<std::size_t>(i)] = b.at(ch * h * w + i);
        }
        acc += ssim_plane(pa.data(), pb.data(), h, w, c1, c2);
    }
    return acc / static_cast<double>(c);
}

double hoyer_sparsity(const std::vector<double>& z) {
    const std::size_t k = z.size();
    if (k < 2) throw DomainError("hoyer: vector length must be >= 2");
    double l1 = 0.0, l2 = 0.0;
    for (double v : z) {
        l1 += std::abs(v);
        l2 += v * v;
    }
    if (l2 == 0.0) return 1.0;  // all-zero: maximally sparse by convention
    const double sk = std::sqrt(static_cast<double>(k));
    return (sk - l1 / std::sqrt(l2)) / (sk - 1.0);
}

double hoyer_sparsity(const Tensor& z) {
    std::vector<double> v(static_cast<std::size_t>(z.numel()));
    for (std::int64_t i = 0; i < z.numel(); ++i) v[static_cast<std::size_t>(i)] = z.at(i);
    return hoyer_sparsity(v);
}

std::pair<double, double> iou_dice(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) {
        throw DimensionError("iou_dice: mask sizes " + std::to_string(pred.size()) + " vs " +
                             std::to_string(truth.size()));
    }
    std::int64_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, t = truth[i] != 0;
        inter += p && t;
        a += p;
        b += t;
    }
    const std::int64_t uni = a + b - inter;
    if (uni == 0) return {1.0, 1.0};
    const double iou = static_cast<double>(inter) / static_cast<double>(uni);
    const double dice = 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
    return {iou, dice};
}

}  // namespace scvae
