#ifndef SCVAE_METRICS_HPP
#define SCVAE_METRICS_HPP

#include <utility>
#include <vector>

#include "scvae/tensor.hpp"

namespace scvae {

struct MetricReport {
    double psnr_db = 0.0;
    double ssim = 0.0;
    double hoyer = 0.0;
    double iou = -1.0;   // < 0 when not computed
    double dice = -1.0;
};

// 10 * log10(max_val^2 / MSE) over all elements, capped at 99.0 dB.
double psnr(const Tensor& a, const Tensor& b, double max_val);

// Gaussian-window SSIM (11x11, sigma 1.5, C1 = (0.01 max)^2, C2 = (0.03 max)^2),
// mean of the valid-region map, channels averaged. Inputs are H x W or
// C x H x W with H, W >= 11.
double ssim(const Tensor& a, const Tensor& b, double max_val);

// (sqrt(K) - ||z||_1 / ||z||_2) / (sqrt(K) - 1), in [0, 1]. All-zero input
// returns 1.0 by convention; K < 2 is a domain error.
double hoyer_sparsity(const std::vector<double>& z);
double hoyer_sparsity(const Tensor& z);

// Overlap scores for binary masks (nonzero = set). Empty-vs-empty returns
// (1, 1).
std::pair<double, double> iou_dice(const std::vector<int>& pred, const std::vector<int>& truth);

}  // namespace scvae

#endif
