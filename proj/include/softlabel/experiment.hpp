#pragma once

#include "softlabel/detail/parallel.hpp"
#include "softlabel/recovery.hpp"
#include "softlabel/robustness.hpp"
#include "softlabel/victim.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace softlabel {

/// Malformed or inconsistent experiment configuration.
class ConfigError : public ArgumentError {
public:
    using ArgumentError::ArgumentError;
};

struct VictimSpec {
    std::vector<std::size_t> dims{64, 32, 10}; ///< input, hidden..., classes
    bool bias = false;                        ///< applies to every layer
    Activation hidden_activation = Activation::ReLU;
    std::size_t train_epochs = 0;             ///< 0 = untrained victim
    double train_lr = 0.1;
    std::size_t train_samples = 500;
    std::size_t batch_size = 16;
};

struct ImageShape {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;

    bool empty() const noexcept { return height == 0 || width == 0; }
};

struct TraceSpec {
    std::size_t instance = 0;
    double lo = -10.0;
    double hi = 10.0;
    std::size_t steps = 2001;
};

struct SweepSpec {
    std::vector<NoiseFamily> families{NoiseFamily::Gaussian, NoiseFamily::Laplace};
    std::vector<double> scales{1e-4, 1e-3, 1e-2, 1e-1};
    bool all_layers = false;
    double correctness_tolerance = 0.1;
};

/// Everything one run needs. Missing JSON fields keep these defaults.
struct ExperimentConfig {
    VictimSpec victim;
    LabelKind kind = LabelKind::Smoothing;
    double max_epsilon = 0.5;
    std::size_t instances = 200;
    /// Blob spread of the synthetic inputs.
    double input_spread = 0.15;
    RecoveryConfig recovery = RecoveryConfig::for_kind(LabelKind::Smoothing);
    double correctness_tolerance = 1e-2;
    SweepSpec sweep;
    TraceSpec trace;
    ImageShape image;           ///< shape used for SSIM and PGM/PPM export
    bool export_images = false;
    std::uint64_t seed = 0;
    std::filesystem::path out = "out";
    std::optional<std::filesystem::path> data; ///< generated data; defaults to `out`
    std::size_t jobs = 1;

    std::filesystem::path data_dir() const { return data ? *data : out; }
    /// Throws ConfigError.
    void validate() const;
};

/// Parses a config document on top of the defaults; unknown keys are
/// rejected. Throws ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);

/// Ground truth stored alongside each capture.
struct StoredInstance {
    GradientCapture capture;
    Tensor x;       ///< network input
    Tensor feature; ///< last-layer input
    AugmentedLabel label;
};

void save_instance(const std::filesystem::path& dir, const StoredInstance& inst);
StoredInstance load_instance(const std::filesystem::path& dir);

struct GeneratedData {
    MlpModel model;
    std::vector<StoredInstance> instances;
};

/// Victim (trained when requested) plus `instances` captures. Deterministic per seed.
GeneratedData generate(const ExperimentConfig& config);
void save_generated(const std::filesystem::path& dir, const GeneratedData& data);
GeneratedData load_generated(const std::filesystem::path& dir);

struct InstanceRecord {
    std::size_t index = 0;
    RecoveryStatus status = RecoveryStatus::Failed;
    SearchEngine engine = SearchEngine::None;
    double lambda = 0.0;
    double lambda_true = 0.0;
    double loss = 0.0;
    double l_r = 0.0;
    double l_s = 0.0;
    bool correct = false;
    double feature_error = 0.0; ///< max |x̂ - x| of the last-layer feature; NaN when not recovered
    // one-hot: sign-rule baseline
    std::optional<bool> idlg_agrees;
    // mixup: coefficient estimate
    std::optional<double> mixup_error;
    // reconstruct
    std::optional<double> psnr;
    std::optional<double> ssim;
    std::optional<double> max_abs_error;
    std::optional<double> bias_attack_error;
    std::string note;
    double time_ms = 0.0;
};

struct RunReport {
    std::string command;
    std::vector<InstanceRecord> records;
    std::optional<SweepReport> sweep;
    std::vector<TracePoint> trace;
    double wall_time_s = 0.0;
};

/// Aggregates recomputed from the per-instance records.
nlohmann::json aggregates(const RunReport& report);
nlohmann::json report_json(const RunReport& report, const ExperimentConfig& config);
std::string per_instance_csv(const RunReport& report);

RunReport run_attack(const ExperimentConfig& config, const GeneratedData& data);
RunReport run_reconstruct(const ExperimentConfig& config, const GeneratedData& data);
RunReport run_sweep(const ExperimentConfig& config, const GeneratedData& data);
RunReport run_trace(const ExperimentConfig& config, const GeneratedData& data);

// Subcommands: read from config.data_dir(), write to config.out.
void cmd_gen(const ExperimentConfig& config);
void cmd_attack(const ExperimentConfig& config);
void cmd_reconstruct(const ExperimentConfig& config);
void cmd_sweep(const ExperimentConfig& config);
void cmd_trace(const ExperimentConfig& config);

} // namespace softlabel
