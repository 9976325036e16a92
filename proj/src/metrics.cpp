#include "softlabel/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace softlabel {

double l_r(const Tensor& recovered, const Tensor& truth)
{
    if (recovered.size() != truth.size()) throw ShapeError("l_r: label length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(recovered[i] - truth[i]);
    return s;
}

double l_s(double lambda, double lambda_true) { return std::abs(lambda - lambda_true); }

bool is_correct(const RecoveryResult& result, const Tensor& truth, std::size_t exclusion_size, double tolerance)
{
    return label_metrics(result, truth, exclusion_size, tolerance).correct;
}

LabelMetrics label_metrics(const RecoveryResult& result, const Tensor& truth, std::size_t exclusion_size,
                           double tolerance)
{
    LabelMetrics m;
    m.status = result.status;
    m.l_r = result.label.size() == truth.size() ? l_r(result.label, truth) : INFINITY;
    const bool usable =
        result.status == RecoveryStatus::Success || result.status == RecoveryStatus::DegenerateOneHotResolved;
    m.correct = usable && std::isfinite(m.l_r) && m.l_r <= tolerance &&
                exclusion_set(result.label.values(), exclusion_size) == exclusion_set(truth.values(), exclusion_size);
    return m;
}

double psnr(const Tensor& a, const Tensor& b, double peak)
{
    if (a.shape() != b.shape()) throw ShapeError("psnr: shape mismatch");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= static_cast<double>(a.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

namespace {

std::vector<double> gaussian_window(std::size_t size, double sigma)
{
    std::vector<double> w(size);
    const double c = (static_cast<double>(size) - 1.0) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - c;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Separable 'valid' filtering of an h×w plane.
std::vector<double> filter_valid(const double* img, std::size_t h, std::size_t w, const std::vector<double>& k)
{
    const std::size_t n = k.size();
    const std::size_t ow = w - n + 1;
    const std::size_t oh = h - n + 1;
    std::vector<double> tmp(h * ow);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += k[i] * img[y * w + x + i];
            tmp[y * ow + x] = s;
        }
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += k[i] * tmp[(y + i) * ow + x];
            out[y * ow + x] = s;
        }
    return out;
}

double ssim_plane(const double* a, const double* b, std::size_t h, std::size_t w, double peak)
{
    std::size_t size = std::min<std::size_t>({11, h, w});
    if (size % 2 == 0) --size;
    const auto k = gaussian_window(size, 1.5);
    const std::size_t n = h * w;
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, h, w, k);
    const auto mu_b = filter_valid(b, h, w, k);
    const auto s_aa = filter_valid(aa.data(), h, w, k);
    const auto s_bb = filter_valid(bb.data(), h, w, k);
    const auto s_ab = filter_valid(ab.data(), h, w, k);
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i];
        const double mb = mu_b[i];
        const double va = s_aa[i] - ma * ma;
        const double vb = s_bb[i] - mb * mb;
        const double cov = s_ab[i] - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

} // namespace

double ssim(const Tensor& a, const Tensor& b, double peak)
{
    if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch");
    std::size_t channels = 1, h = 1, w = 1;
    switch (a.ndim()) {
    case 1: w = a.shape()[0]; break;
    case 2: h = a.shape()[0]; w = a.shape()[1]; break;
    case 3: channels = a.shape()[0]; h = a.shape()[1]; w = a.shape()[2]; break;
    default: throw ShapeError("ssim expects a 1-D, 2-D or 3-D tensor");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < channels; ++c)
        total += ssim_plane(a.data().data() + c * h * w, b.data().data() + c * h * w, h, w, peak);
    return total / static_cast<double>(channels);
}

ImageMetrics image_metrics(const Tensor& a, const Tensor& b, double peak)
{
    return {psnr(a, b, peak), ssim(a, b, peak)};
}

} // namespace softlabel
