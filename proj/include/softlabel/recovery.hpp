#pragma once

#include "softlabel/error.hpp"
#include "softlabel/rng.hpp"
#include "softlabel/tensor.hpp"
#include "softlabel/victim.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace softlabel {

// Label recovery from the last fully-connected layer's gradients.
//
// Every row of the last-layer weight gradient is g_i = (p_i - y_i)·x, so the
// whole label follows from one unknown scalar λ = 1/(p_r - y_r) for a chosen
// row r: the feature is x = λ·g_r and y_i = softmax(W·x + b)_i - c_i/λ with
// c_i = g_i/g_r. The search looks for the λ whose pseudo-label has the shape
// of an augmented label (equal background entries).
//
// Units: every λ exposed by this API is the physical scalar above, so the
// ground truth is always λ* = 1/(p_r - y_r). The search engines work on
// t = λ/coe (the multiplier of the coe-scaled row gradient); `initial`,
// `lr`, `bound`, `interval` and `window_margin` are expressed in t.

enum class LossKind { Variance, SquareSum, NegativityPenalty };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& name);

enum class PsoSelection {
    FirstHit,        ///< return the first window whose best loss is below threshold
    BestOverWindows, ///< sweep every window and keep the overall lowest loss
};

std::string to_string(PsoSelection s);
PsoSelection parse_pso_selection(const std::string& name);

struct PsoCoefficients {
    double inertia = 0.8;
    double cognitive = 0.5;
    double social = 0.5;
};

struct RecoveryConfig {
    double initial = 1.0;
    double lr = 0.5;
    double bound = 100.0;
    int iteration = 200;
    double coe = 4.0;
    int pop = 200;
    int max_iter = 30;
    double interval = 5.0;
    double window_margin = 0.3;
    /// Local descent steps run from each PSO window's best point.
    int polish_iterations = 20;
    double loss_scale = 1000.0;
    double threshold = 1e-9;
    /// After a point is accepted, Newton steps continue until the loss is
    /// below threshold · settle_factor or stops decreasing.
    double settle_factor = 1e-6;
    int settle_iterations = 30;
    /// Standard deviation of noise known to be added to the gradients
    /// (0 = clean). Raises the acceptance level by
    /// noise_allowance · loss_scale · noise_scale² / (λ² ‖g_r‖²).
    double noise_scale = 0.0;
    double noise_allowance = 25.0;
    LossKind loss = LossKind::Variance;
    std::size_t exclusion_size = 1;
    PsoCoefficients pso;
    PsoSelection selection = PsoSelection::FirstHit;
    /// Gradient entries with magnitude at or below this are treated as zero
    /// when classifying degenerate one-hot captures.
    double zero_gradient_tol = 1e-12;
    /// Relative tolerance for g_i = -g_j in the two-row degenerate case.
    double opposite_tol = 1e-9;
    bool record_trace = false;

    /// Defaults with the exclusion-set size matching the augmentation
    /// (2 for mixup, 1 otherwise).
    static RecoveryConfig for_kind(LabelKind kind);

    /// Throws ArgumentError when an invariant is violated.
    void validate() const;
};

/// Search state derived from one capture.
struct PseudoLabelContext {
    Tensor weight;              // last-layer weight [C × I]
    std::optional<Tensor> bias; // last-layer bias [C]
    std::size_t row = 0;        // r: row with the largest L1 norm
    Tensor row_gradient;        // g_r as captured [I]
    Tensor ratios;              // c_i = <g_i, g_r>/<g_r, g_r>, c_r = 1 [C]
    Tensor row_logits;          // W·g_r, cached [C]
    double coe = 1.0;
    LossKind loss = LossKind::Variance;
    std::size_t exclusion_size = 1;
    double loss_scale = 1000.0;

    std::size_t class_count() const { return ratios.size(); }
};

/// The last-layer gradient is all zero; no context can be built.
class DegenerateGradientError : public DomainError {
public:
    using DomainError::DomainError;
};

enum class RecoveryStatus {
    Success,
    DegenerateOneHotResolved,
    DegenerateOneHotAmbiguous,
    BoundExceeded,
    Failed,
};

std::string to_string(RecoveryStatus s);

enum class SearchEngine { None, Gradient, Pso };

std::string to_string(SearchEngine e);

struct TracePoint {
    double lambda = 0.0;
    double loss = 0.0;
};

struct RecoveryResult {
    RecoveryStatus status = RecoveryStatus::Failed;
    SearchEngine engine = SearchEngine::None;
    double lambda = 0.0; ///< physical λ; meaningful on Success
    Tensor label;        ///< pseudo-label at lambda (or the resolved one-hot label)
    Tensor feature;      ///< λ·g_r, the recovered last-layer input
    double loss = 0.0;   ///< scaled loss at lambda
    std::vector<Tensor> candidates; ///< both labels for DegenerateOneHotAmbiguous
    std::vector<TracePoint> trace;  ///< filled when RecoveryConfig::record_trace

    bool success() const noexcept { return status == RecoveryStatus::Success; }
};

PseudoLabelContext build_context(const Tensor& last_weight_grad, const LayerSpec& last_layer,
                                 const RecoveryConfig& config);
PseudoLabelContext build_context(const GradientCapture& capture, const LayerSpec& last_layer,
                                 const RecoveryConfig& config);

/// ŷ_i = softmax(λ·W·g_r + b)_i - c_i/λ. Throws DomainError for λ = 0.
Tensor pseudo_label(const PseudoLabelContext& ctx, double lambda);

/// Indices of the `size` largest entries, ties broken by lower index.
std::vector<std::size_t> exclusion_set(std::span<const double> label, std::size_t size);

/// Variance / SquareSum are scaled by loss_scale; NegativityPenalty is Σ|ŷ_i| - 1.
double label_loss(std::span<const double> label, LossKind kind, std::size_t exclusion_size,
                  double loss_scale);
double label_loss(const Tensor& label, LossKind kind, std::size_t exclusion_size, double loss_scale);

/// Loss of the pseudo-label at λ using the context's loss settings.
double pseudo_label_loss(const PseudoLabelContext& ctx, double lambda);

/// Analytic d(loss)/dλ. Throws DomainError for λ = 0.
double loss_derivative(const PseudoLabelContext& ctx, double lambda);

/// Quasi-Newton descent from +initial, restarted from -initial on failure.
RecoveryResult search_gradient(const PseudoLabelContext& ctx, const RecoveryConfig& config);

/// Windowed particle-swarm search, alternating positive and negative windows.
RecoveryResult search_pso(const PseudoLabelContext& ctx, const RecoveryConfig& config, Rng& rng);

/// Full pipeline: degenerate one-hot handling, gradient search, PSO fallback.
RecoveryResult recover(const GradientCapture& capture, const MlpModel& model, const RecoveryConfig& config,
                       Rng& rng);

/// Sign-rule baseline for one-hot labels.
struct IdlgOutcome {
    bool ambiguous = false;
    std::size_t cls = 0;
    Tensor label; ///< one-hot of cls when not ambiguous
};

IdlgOutcome idlg_baseline(const GradientCapture& capture, double zero_tol = 1e-12);

struct MixupEstimate {
    std::size_t class_a = 0; ///< class with the larger share
    std::size_t class_b = 0;
    double a = 0.0;          ///< share of class_a
};

/// Thrown when a label does not look like a two-class mixture.
class IllFormedLabelError : public DomainError {
public:
    using DomainError::DomainError;
};

MixupEstimate extract_mixup(const Tensor& label);

/// Loss sampled on a uniform λ grid over [lo, hi]; λ = 0 points are skipped.
/// Throws ArgumentError when no nonzero λ remains.
std::vector<TracePoint> scan_landscape(const PseudoLabelContext& ctx, double lo, double hi, std::size_t steps);

void write_trace_csv(const std::filesystem::path& path, std::span<const TracePoint> trace);

} // namespace softlabel
