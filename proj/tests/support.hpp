#pragma once

#include "softlabel/recovery.hpp"
#include "softlabel/robustness.hpp"
#include "softlabel/victim.hpp"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace testing {

using namespace softlabel;

inline MlpModel random_mlp(const std::vector<std::size_t>& dims, Rng& rng, bool bias = false)
{
    const std::size_t layers = dims.size() - 1;
    std::vector<Activation> acts(layers, Activation::ReLU);
    acts.back() = Activation::Identity;
    return MlpModel::random(dims, std::vector<bool>(layers, bias), acts, rng);
}

inline Tensor random_vector(std::size_t n, Rng& rng, double lo = 0.0, double hi = 1.0)
{
    Tensor t({n});
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

inline Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t({r, c});
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

/// Shifts a one-layer victim's weights along x so that W·x equals `logits`.
inline void prescribe_logits(MlpModel& model, const Tensor& x, const Tensor& logits)
{
    Tensor& w = model.mutable_layers().back().weight;
    const Tensor wx = matvec(w, x);
    const double xx = dot(x.values(), x.values());
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t k = 0; k < w.cols(); ++k) w.at(i, k) += (logits[i] - wx[i]) * x[k] / xx;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_rel_diff(double a, double b, double floor = 1e-8)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto dir = std::filesystem::temp_directory_path() / ("softlabel_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testing
