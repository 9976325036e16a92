#pragma once

#include "softlabel/recovery.hpp"
#include "softlabel/tensor.hpp"

#include <cstddef>

namespace softlabel {

/// Σ|a_i - b_i|.
double l_r(const Tensor& recovered, const Tensor& truth);
/// |λ - λ*|.
double l_s(double lambda, double lambda_true);

struct LabelMetrics {
    double l_r = 0.0;
    bool correct = false;
    RecoveryStatus status = RecoveryStatus::Failed;
};

/// Recovery counts as correct when the status is Success or
/// DegenerateOneHotResolved, the exclusion-set indices of the recovered and
/// true labels coincide, and L_r <= tolerance.
bool is_correct(const RecoveryResult& result, const Tensor& truth, std::size_t exclusion_size,
                double tolerance = 1e-2);
LabelMetrics label_metrics(const RecoveryResult& result, const Tensor& truth, std::size_t exclusion_size,
                           double tolerance = 1e-2);

inline constexpr double kPsnrCap = 100.0;

/// 10·log10(peak²/MSE), capped at kPsnrCap when the inputs are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03, averaged over all window positions fully inside the image.
/// Accepts [H×W] or [channels×H×W] (mean over channels); a 1-D tensor is
/// treated as a single row. Images smaller than 11 pixels on a side use the
/// largest odd window that fits, with the same σ.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

struct ImageMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
};

ImageMetrics image_metrics(const Tensor& a, const Tensor& b, double peak = 1.0);

} // namespace softlabel
