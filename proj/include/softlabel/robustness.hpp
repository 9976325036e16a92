#pragma once

#include "softlabel/recovery.hpp"
#include "softlabel/rng.hpp"
#include "softlabel/victim.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace softlabel {

enum class NoiseFamily { Gaussian, Laplace };

std::string to_string(NoiseFamily f);
NoiseFamily parse_noise_family(const std::string& name);

/// Zero-centred additive noise. `scale` is the standard deviation for
/// Gaussian noise and the scale parameter b for Laplace noise.
struct NoiseSpec {
    NoiseFamily family = NoiseFamily::Gaussian;
    double scale = 1e-4;
};

/// σ for Gaussian noise, √2·b for Laplace noise.
double noise_stddev(const NoiseSpec& spec);

/// Copy of `capture` with i.i.d. noise added to every entry of the
/// last-layer weight gradient (every weight gradient when `all_layers`).
GradientCapture perturb(const GradientCapture& capture, const NoiseSpec& spec, Rng& rng, bool all_layers = false);

/// One attack target with the ground truth needed for scoring.
struct AttackInstance {
    GradientCapture capture;
    Tensor label;     ///< y*
    Tensor residual;  ///< p - y* at the last layer, gives λ*_r = 1/residual[r]
    Tensor feature;   ///< true last-layer input
};

/// Builds an instance from a clean forward/backward pass.
AttackInstance make_instance(const MlpModel& model, const Tensor& x, const Tensor& label);

struct SweepRow {
    NoiseFamily family = NoiseFamily::Gaussian;
    double scale = 0.0;
    std::size_t instances = 0;
    double accuracy = 0.0; ///< fraction in [0, 1]
    double mean_ls = 0.0;
    double mean_lr = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;
};

struct SweepOptions {
    bool all_layers = false;
    /// L_r tolerance for counting a noisy recovery as correct.
    double correctness_tolerance = 0.1;
    std::size_t jobs = 1;
};

/// For each (family, scale): perturb every capture, recover λ with the PSO
/// search alone (told the noise level through RecoveryConfig::noise_scale)
/// and score it. Each (point, instance) pair gets its own RNG
/// stream derived from `seed`, so rows do not depend on evaluation order.
SweepReport noise_sweep(const MlpModel& model, std::span<const AttackInstance> instances,
                        std::span<const double> scales, std::span<const NoiseFamily> families,
                        const RecoveryConfig& config, std::uint64_t seed, const SweepOptions& options = {});

/// CSV with header family,scale,accuracy,mean_Ls,mean_Lr.
std::string sweep_csv(const SweepReport& report);

} // namespace softlabel
