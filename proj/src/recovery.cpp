#include "softlabel/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace softlabel {

std::string to_string(LossKind k)
{
    switch (k) {
    case LossKind::Variance: return "variance";
    case LossKind::SquareSum: return "square_sum";
    case LossKind::NegativityPenalty: return "negativity";
    }
    return "?";
}

LossKind parse_loss_kind(const std::string& name)
{
    if (name == "variance") return LossKind::Variance;
    if (name == "square_sum") return LossKind::SquareSum;
    if (name == "negativity") return LossKind::NegativityPenalty;
    throw ArgumentError("unknown loss '" + name + "'");
}

std::string to_string(PsoSelection s)
{
    return s == PsoSelection::FirstHit ? "first_hit" : "best_over_windows";
}

PsoSelection parse_pso_selection(const std::string& name)
{
    if (name == "first_hit") return PsoSelection::FirstHit;
    if (name == "best_over_windows") return PsoSelection::BestOverWindows;
    throw ArgumentError("unknown PSO selection '" + name + "'");
}

std::string to_string(RecoveryStatus s)
{
    switch (s) {
    case RecoveryStatus::Success: return "success";
    case RecoveryStatus::DegenerateOneHotResolved: return "degenerate_onehot_resolved";
    case RecoveryStatus::DegenerateOneHotAmbiguous: return "degenerate_onehot_ambiguous";
    case RecoveryStatus::BoundExceeded: return "bound_exceeded";
    case RecoveryStatus::Failed: return "failed";
    }
    return "?";
}

std::string to_string(SearchEngine e)
{
    switch (e) {
    case SearchEngine::None: return "none";
    case SearchEngine::Gradient: return "gradient";
    case SearchEngine::Pso: return "pso";
    }
    return "?";
}

RecoveryConfig RecoveryConfig::for_kind(LabelKind kind)
{
    RecoveryConfig c;
    c.exclusion_size = kind == LabelKind::Mixup ? 2 : 1;
    return c;
}

void RecoveryConfig::validate() const
{
    auto fail = [](const std::string& msg) { throw ArgumentError("recovery config: " + msg); };
    if (!(std::abs(initial) > 0.0)) fail("initial must be nonzero");
    if (!(bound > std::abs(initial))) fail("bound must exceed |initial|");
    if (!(threshold >= 0.0)) fail("threshold must be >= 0");
    if (iteration < 1 || pop < 1 || max_iter < 1) fail("iteration, pop and max_iter must be >= 1");
    if (polish_iterations < 0) fail("polish_iterations must be >= 0");
    if (settle_iterations < 0) fail("settle_iterations must be >= 0");
    if (!(settle_factor >= 0.0 && settle_factor <= 1.0)) fail("settle_factor must be in [0, 1]");
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) fail("noise_scale must be >= 0");
    if (!(noise_allowance >= 0.0)) fail("noise_allowance must be >= 0");
    if (!(coe > 0.0)) fail("coe must be positive");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (!(interval > 0.0)) fail("interval must be positive");
    if (!(window_margin >= 0.0)) fail("window_margin must be >= 0");
    if (!(loss_scale > 0.0)) fail("loss_scale must be positive");
    if (exclusion_size != 1 && exclusion_size != 2) fail("exclusion size must be 1 or 2");
}

// ---- context & pseudo-labels ---------------------------------------------

PseudoLabelContext build_context(const Tensor& g, const LayerSpec& last_layer, const RecoveryConfig& config)
{
    if (g.ndim() != 2 || g.shape() != last_layer.weight.shape())
        throw ShapeError("last-layer gradient shape does not match the last layer weight");
    const std::size_t classes = g.rows();
    if (classes <= config.exclusion_size) throw ArgumentError("class count must exceed the exclusion-set size");

    std::size_t r = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < classes; ++i) {
        const double n = l1_norm(g.row(i));
        if (n > best) {
            best = n;
            r = i;
        }
    }
    if (!(best > 0.0)) throw DegenerateGradientError("last-layer gradient is all zero");

    PseudoLabelContext ctx;
    ctx.weight = last_layer.weight;
    ctx.bias = last_layer.bias;
    ctx.row = r;
    ctx.row_gradient = Tensor::vector(std::vector<double>(g.row(r).begin(), g.row(r).end()));
    ctx.coe = config.coe;
    ctx.loss = config.loss;
    ctx.exclusion_size = config.exclusion_size;
    ctx.loss_scale = config.loss_scale;

    const double rr = dot(g.row(r), g.row(r));
    ctx.ratios = Tensor({classes});
    for (std::size_t i = 0; i < classes; ++i) ctx.ratios[i] = i == r ? 1.0 : dot(g.row(i), g.row(r)) / rr;
    ctx.row_logits = matvec(ctx.weight, ctx.row_gradient);
    return ctx;
}

PseudoLabelContext build_context(const GradientCapture& capture, const LayerSpec& last_layer,
                                 const RecoveryConfig& config)
{
    return build_context(capture.last_weight_grad(), last_layer, config);
}

namespace {

struct LabelState {
    std::vector<double> label; // ŷ
    std::vector<double> slope; // dŷ/dλ
};

LabelState evaluate_label(const PseudoLabelContext& ctx, double lambda, bool with_slope)
{
    if (lambda == 0.0 || !std::isfinite(lambda)) throw DomainError("pseudo-label needs a finite nonzero λ");
    const std::size_t classes = ctx.class_count();
    std::vector<double> z(classes);
    for (std::size_t i = 0; i < classes; ++i) z[i] = lambda * ctx.row_logits[i] + (ctx.bias ? (*ctx.bias)[i] : 0.0);
    LabelState st;
    st.label = softmax(z);
    if (with_slope) {
        double mean_u = 0.0;
        for (std::size_t i = 0; i < classes; ++i) mean_u += st.label[i] * ctx.row_logits[i];
        st.slope.resize(classes);
        for (std::size_t i = 0; i < classes; ++i)
            st.slope[i] = st.label[i] * (ctx.row_logits[i] - mean_u) + ctx.ratios[i] / (lambda * lambda);
    }
    for (std::size_t i = 0; i < classes; ++i) st.label[i] -= ctx.ratios[i] / lambda;
    return st;
}

std::vector<bool> excluded_mask(std::span<const double> label, std::size_t size)
{
    std::vector<bool> mask(label.size(), false);
    for (auto i : exclusion_set(label, size)) mask[i] = true;
    return mask;
}

double loss_and_derivative(std::span<const double> y, std::span<const double> dy, LossKind kind,
                           std::size_t exclusion_size, double scale, double* derivative)
{
    const std::size_t classes = y.size();
    if (kind == LossKind::NegativityPenalty) {
        double s = 0.0;
        double d = 0.0;
        for (std::size_t i = 0; i < classes; ++i) {
            s += std::abs(y[i]);
            if (derivative) d += (y[i] > 0.0 ? 1.0 : y[i] < 0.0 ? -1.0 : 0.0) * dy[i];
        }
        if (derivative) *derivative = d;
        return s - 1.0;
    }
    if (classes <= exclusion_size) throw ArgumentError("label too short for the exclusion set");
    const auto mask = excluded_mask(y, exclusion_size);
    const double m = static_cast<double>(classes - exclusion_size);
    double mean = 0.0;
    if (kind == LossKind::Variance) {
        for (std::size_t i = 0; i < classes; ++i)
            if (!mask[i]) mean += y[i];
        mean /= m;
    }
    double s = 0.0;
    double d = 0.0;
    for (std::size_t i = 0; i < classes; ++i) {
        if (mask[i]) continue;
        const double dev = y[i] - mean;
        s += dev * dev;
        if (derivative) d += dev * dy[i];
    }
    if (derivative) *derivative = scale * 2.0 * d / m;
    return scale * s / m;
}

} // namespace

Tensor pseudo_label(const PseudoLabelContext& ctx, double lambda)
{
    return Tensor::vector(evaluate_label(ctx, lambda, false).label);
}

std::vector<std::size_t> exclusion_set(std::span<const double> label, std::size_t size)
{
    std::vector<std::size_t> idx(label.size());
    std::iota(idx.begin(), idx.end(), 0);
    size = std::min(size, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(size), idx.end(),
                      [&](std::size_t a, std::size_t b) { return label[a] > label[b] || (label[a] == label[b] && a < b); });
    idx.resize(size);
    std::sort(idx.begin(), idx.end());
    return idx;
}

double label_loss(std::span<const double> label, LossKind kind, std::size_t exclusion_size, double loss_scale)
{
    return loss_and_derivative(label, {}, kind, exclusion_size, loss_scale, nullptr);
}

double label_loss(const Tensor& label, LossKind kind, std::size_t exclusion_size, double loss_scale)
{
    return label_loss(label.values(), kind, exclusion_size, loss_scale);
}

double pseudo_label_loss(const PseudoLabelContext& ctx, double lambda)
{
    const auto st = evaluate_label(ctx, lambda, false);
    return label_loss(st.label, ctx.loss, ctx.exclusion_size, ctx.loss_scale);
}

double loss_derivative(const PseudoLabelContext& ctx, double lambda)
{
    const auto st = evaluate_label(ctx, lambda, true);
    double d = 0.0;
    loss_and_derivative(st.label, st.slope, ctx.loss, ctx.exclusion_size, ctx.loss_scale, &d);
    return d;
}

// ---- search engines ------------------------------------------------------

namespace {

/// Loss as a function of the search coordinate t = λ/coe.
class Objective {
public:
    Objective(const PseudoLabelContext& ctx, const RecoveryConfig& cfg)
        : ctx_(ctx), record_(cfg.record_trace), threshold_(cfg.threshold)
    {
        if (cfg.noise_scale > 0.0) {
            const double rr = dot(ctx.row_gradient.values(), ctx.row_gradient.values());
            noise_floor_ = cfg.noise_allowance * ctx.loss_scale * cfg.noise_scale * cfg.noise_scale / rr;
        }
    }

    /// Acceptance test. With noisy gradients each pseudo-label entry carries
    /// an error of about noise/|λ·g_r|, so the accepted loss grows by that
    /// expected floor.
    bool accepts(double t, double loss) const { return loss < level(t); }

    /// Ranking used to compare candidate points: the raw loss on clean
    /// gradients, the loss relative to the acceptance level on noisy ones,
    /// where the level itself depends on λ.
    double score(double t, double loss) const { return noise_floor_ > 0.0 ? loss / level(t) : loss; }

    double fitness(double t) { return score(t, value(t)); }

    bool noisy() const { return noise_floor_ > 0.0; }

    double value(double t)
    {
        const double lambda = t * ctx_.coe;
        if (lambda == 0.0 || !std::isfinite(lambda)) return std::numeric_limits<double>::infinity();
        const double v = pseudo_label_loss(ctx_, lambda);
        if (record_) trace_.push_back({lambda, v});
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    }

    /// Loss and dL/dt.
    std::pair<double, double> value_and_slope(double t)
    {
        const double lambda = t * ctx_.coe;
        if (lambda == 0.0 || !std::isfinite(lambda)) return {std::numeric_limits<double>::infinity(), 0.0};
        const auto st = evaluate_label(ctx_, lambda, true);
        double d = 0.0;
        const double v = loss_and_derivative(st.label, st.slope, ctx_.loss, ctx_.exclusion_size, ctx_.loss_scale, &d);
        if (record_) trace_.push_back({lambda, v});
        if (!std::isfinite(v)) return {std::numeric_limits<double>::infinity(), 0.0};
        return {v, d * ctx_.coe};
    }

    std::vector<TracePoint> take_trace() { return std::move(trace_); }

private:
    double level(double t) const
    {
        const double lambda = t * ctx_.coe;
        return threshold_ + noise_floor_ / (lambda * lambda);
    }

    const PseudoLabelContext& ctx_;
    bool record_;
    double threshold_;
    double noise_floor_ = 0.0;
    std::vector<TracePoint> trace_;
};

RecoveryResult finish(const PseudoLabelContext& ctx, RecoveryStatus status, SearchEngine engine, double t, double loss)
{
    RecoveryResult r;
    r.status = status;
    r.engine = engine;
    r.lambda = t * ctx.coe;
    r.loss = loss;
    if (r.lambda != 0.0 && std::isfinite(r.lambda)) {
        r.label = pseudo_label(ctx, r.lambda);
        r.feature = ctx.row_gradient;
        for (auto& v : r.feature.values()) v *= r.lambda;
    } else {
        r.label = Tensor({ctx.class_count()});
        r.feature = Tensor(ctx.row_gradient.shape());
    }
    return r;
}

enum class PhaseEnd { Converged, OutOfBound, Stalled, Exhausted };

struct PhaseResult {
    PhaseEnd end = PhaseEnd::Exhausted;
    double t = 0.0;
    double loss = std::numeric_limits<double>::infinity();
};

// One descent run. Steps follow the secant (1-D BFGS) curvature when it is
// positive, otherwise a clipped gradient step of length lr; each trial step
// is backtracked until the Armijo condition holds, so accepted losses never
// increase.
PhaseResult descend(Objective& f, double start, int budget, const RecoveryConfig& cfg)
{
    constexpr double kArmijo = 1e-4;
    constexpr int kMaxBacktracks = 60;

    PhaseResult out;
    double t = start;
    auto [loss, slope] = f.value_and_slope(t);
    out.t = t;
    out.loss = loss;
    bool have_prev = false;
    double prev_t = 0.0;
    double prev_slope = 0.0;

    for (int k = 0; k < budget; ++k) {
        out.t = t;
        out.loss = loss;
        if (f.accepts(t, loss)) {
            out.end = PhaseEnd::Converged;
            return out;
        }
        if (std::abs(t) > cfg.bound) {
            out.end = PhaseEnd::OutOfBound;
            return out;
        }
        if (slope == 0.0 || !std::isfinite(slope)) {
            out.end = PhaseEnd::Stalled;
            return out;
        }

        double step;
        const double ds = slope - prev_slope;
        const double dt = t - prev_t;
        if (have_prev && dt != 0.0 && ds * dt > 0.0) {
            step = -slope * dt / ds;
        } else {
            step = -cfg.lr * slope / std::max(1.0, std::abs(slope));
        }
        // Keep steps local so the descent does not hop across basins.
        const double max_step = cfg.lr * std::max(1.0, std::abs(t));
        step = std::clamp(step, -max_step, max_step);

        double alpha = 1.0;
        bool accepted = false;
        double t_new = t;
        double loss_new = loss;
        for (int b = 0; b < kMaxBacktracks; ++b) {
            t_new = t + alpha * step;
            loss_new = f.value(t_new);
            if (loss_new <= loss + kArmijo * alpha * step * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted || t_new == t) {
            out.end = PhaseEnd::Stalled;
            return out;
        }
        have_prev = true;
        prev_t = t;
        prev_slope = slope;
        t = t_new;
        std::tie(loss, slope) = f.value_and_slope(t);
    }
    out.t = t;
    out.loss = loss;
    if (f.accepts(t, loss))
        out.end = PhaseEnd::Converged;
    else if (std::abs(t) > cfg.bound)
        out.end = PhaseEnd::OutOfBound;
    else
        out.end = PhaseEnd::Exhausted;
    return out;
}

// Newton refinement of an accepted point. Curvature comes from a forward
// difference of the analytic slope; only loss-decreasing steps are taken.
PhaseResult settle(Objective& f, double t, double loss, const RecoveryConfig& cfg)
{
    PhaseResult out{PhaseEnd::Converged, t, loss};
    const double target = cfg.threshold * cfg.settle_factor;
    for (int k = 0; k < cfg.settle_iterations && out.loss > target; ++k) {
        const auto [v, slope] = f.value_and_slope(out.t);
        if (slope == 0.0 || !std::isfinite(slope)) break;
        const double h = 1e-7 * std::max(1.0, std::abs(out.t));
        const double curvature = (f.value_and_slope(out.t + h).second - slope) / h;
        if (!(curvature > 0.0)) break;
        const double max_step = cfg.lr * std::max(1.0, std::abs(out.t));
        const double step = std::clamp(-slope / curvature, -max_step, max_step);
        bool improved = false;
        for (double alpha = 1.0; alpha > 1e-3; alpha *= 0.5) {
            const double t_new = out.t + alpha * step;
            const double v_new = f.value(t_new);
            if (v_new < out.loss) {
                out.t = t_new;
                out.loss = v_new;
                improved = true;
                break;
            }
        }
        if (!improved) break;
    }
    return out;
}

struct PsoOutcome {
    double best_x = 0.0;
    double best_y = std::numeric_limits<double>::infinity(); ///< loss at best_x
    double score = std::numeric_limits<double>::infinity();  ///< Objective::score at best_x
};

// Global-best PSO over [lo, hi]: positions clipped to the box, velocities
// initialised uniformly in ±(hi - lo), per-particle random weights.
PsoOutcome run_pso(Objective& f, double lo, double hi, const RecoveryConfig& cfg, Rng& rng)
{
    const auto pop = static_cast<std::size_t>(cfg.pop);
    const double span = hi - lo;
    std::vector<double> x(pop), v(pop), pbest(pop), pbest_y(pop);
    for (std::size_t i = 0; i < pop; ++i) x[i] = rng.uniform(lo, hi);
    for (std::size_t i = 0; i < pop; ++i) v[i] = rng.uniform(-span, span);
    PsoOutcome best;
    for (std::size_t i = 0; i < pop; ++i) {
        pbest[i] = x[i];
        pbest_y[i] = f.fitness(x[i]);
        if (pbest_y[i] < best.score) {
            best.score = pbest_y[i];
            best.best_x = x[i];
        }
    }
    if (!std::isfinite(best.score)) best.best_x = x[0];

    for (int it = 0; it < cfg.max_iter; ++it) {
        for (std::size_t i = 0; i < pop; ++i) {
            const double r1 = rng.uniform();
            const double r2 = rng.uniform();
            v[i] = cfg.pso.inertia * v[i] + cfg.pso.cognitive * r1 * (pbest[i] - x[i]) +
                   cfg.pso.social * r2 * (best.best_x - x[i]);
        }
        for (std::size_t i = 0; i < pop; ++i) {
            x[i] = std::clamp(x[i] + v[i], lo, hi);
            const double y = f.fitness(x[i]);
            if (y < pbest_y[i]) {
                pbest_y[i] = y;
                pbest[i] = x[i];
            }
        }
        for (std::size_t i = 0; i < pop; ++i) {
            if (pbest_y[i] < best.score) {
                best.score = pbest_y[i];
                best.best_x = pbest[i];
            }
        }
    }
    if (std::isfinite(best.score)) best.best_y = f.noisy() ? f.value(best.best_x) : best.score;
    return best;
}

} // namespace

RecoveryResult search_gradient(const PseudoLabelContext& ctx, const RecoveryConfig& config)
{
    config.validate();
    Objective f(ctx, config);
    const int first_budget = config.iteration / 2;
    const int second_budget = config.iteration - first_budget;

    const PhaseResult a = descend(f, config.initial, first_budget, config);
    if (a.end == PhaseEnd::Converged) {
        const PhaseResult s = settle(f, a.t, a.loss, config);
        auto r = finish(ctx, RecoveryStatus::Success, SearchEngine::Gradient, s.t, s.loss);
        r.trace = f.take_trace();
        return r;
    }
    const PhaseResult b = descend(f, -config.initial, second_budget, config);
    RecoveryResult r;
    if (b.end == PhaseEnd::Converged) {
        const PhaseResult s = settle(f, b.t, b.loss, config);
        r = finish(ctx, RecoveryStatus::Success, SearchEngine::Gradient, s.t, s.loss);
    } else {
        const bool out_of_bound = a.end == PhaseEnd::OutOfBound || b.end == PhaseEnd::OutOfBound;
        const PhaseResult& best = a.loss <= b.loss ? a : b;
        r = finish(ctx, out_of_bound ? RecoveryStatus::BoundExceeded : RecoveryStatus::Failed,
                   SearchEngine::Gradient, best.t, best.loss);
    }
    r.trace = f.take_trace();
    return r;
}

RecoveryResult search_pso(const PseudoLabelContext& ctx, const RecoveryConfig& config, Rng& rng)
{
    config.validate();
    Objective f(ctx, config);
    const double start = std::abs(config.initial);
    PsoOutcome best;     // best minimum strictly inside its window
    PsoOutcome fallback; // best point overall, reported only when nothing else exists

    // Swarm positions are only as precise as the swarm's spread; a short
    // local descent from the window's best point settles the last digits.
    // A point that ends on or beyond the window edge is a slope running into
    // the boundary, not a minimum of this window; neighbouring windows overlap
    // by the margin, so a genuine minimum there is interior to the next one.
    auto consider = [&](PsoOutcome o, double lo, double hi) {
        if (!std::isfinite(o.best_y)) return false;
        if (!f.accepts(o.best_x, o.best_y)) {
            const PhaseResult p = descend(f, o.best_x, config.polish_iterations, config);
            if (p.loss < o.best_y) {
                o.best_x = p.t;
                o.best_y = p.loss;
                o.score = f.score(p.t, p.loss);
            }
        }
        if (o.score < fallback.score) fallback = o;
        if (!(o.best_x > lo && o.best_x < hi)) return false;
        if (o.score < best.score) best = o;
        return config.selection == PsoSelection::FirstHit && f.accepts(o.best_x, o.best_y);
    };

    // |p_r - y_r| <= 1, so |λ*| >= 1 and |t*| >= 1/coe: the first window
    // pair reaches down to that floor even when `initial` lies above it.
    const double floor = 1.0 / config.coe;
    bool first = true;
    for (double lower = start, upper = start + config.interval; upper < config.bound;
         lower = upper, upper += config.interval, first = false) {
        const double pos_lo = first ? std::min(lower - config.window_margin, floor) : lower - config.window_margin;
        if (consider(run_pso(f, pos_lo, upper, config, rng), pos_lo, upper)) break;
        const double neg_lo = -upper - config.window_margin;
        const double neg_hi = first ? -std::min(lower, floor) : -lower;
        if (consider(run_pso(f, neg_lo, neg_hi, config, rng), neg_lo, neg_hi)) break;
    }

    PsoOutcome pick = std::isfinite(best.best_y) ? best : fallback;
    const bool ok = std::isfinite(best.best_y) && f.accepts(best.best_x, best.best_y);
    if (ok) {
        const PhaseResult s = settle(f, pick.best_x, pick.best_y, config);
        pick.best_x = s.t;
        pick.best_y = s.loss;
    }
    RecoveryResult r = finish(ctx, ok ? RecoveryStatus::Success : RecoveryStatus::Failed, SearchEngine::Pso,
                              std::isfinite(pick.best_y) ? pick.best_x : 0.0, pick.best_y);
    r.trace = f.take_trace();
    return r;
}

RecoveryResult recover(const GradientCapture& capture, const MlpModel& model, const RecoveryConfig& config, Rng& rng)
{
    config.validate();
    const Tensor& g = capture.last_weight_grad();
    const std::size_t classes = model.class_count();
    if (g.ndim() != 2 || g.rows() != classes) throw ShapeError("capture does not match the model's last layer");

    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < classes; ++i) {
        const auto row = g.row(i);
        const bool nonzero =
            std::any_of(row.begin(), row.end(), [&](double v) { return std::abs(v) > config.zero_gradient_tol; });
        if (nonzero) live.push_back(i);
    }

    if (live.empty()) {
        RecoveryResult r;
        r.status = RecoveryStatus::DegenerateOneHotResolved;
        r.label = one_hot_label(classes, capture.predicted_class).y;
        r.feature = Tensor({g.cols()});
        return r;
    }

    if (live.size() == 2) {
        const auto gi = g.row(live[0]);
        const auto gj = g.row(live[1]);
        double scale = 0.0;
        double defect = 0.0;
        for (std::size_t k = 0; k < gi.size(); ++k) {
            scale = std::max({scale, std::abs(gi[k]), std::abs(gj[k])});
            defect = std::max(defect, std::abs(gi[k] + gj[k]));
        }
        if (defect <= config.opposite_tol * scale) {
            RecoveryResult r;
            r.status = RecoveryStatus::DegenerateOneHotAmbiguous;
            r.candidates = {one_hot_label(classes, live[0]).y, one_hot_label(classes, live[1]).y};
            r.label = r.candidates.front();
            r.feature = Tensor({g.cols()});
            return r;
        }
    }

    const PseudoLabelContext ctx = build_context(capture, model.last_layer(), config);
    RecoveryResult grad = search_gradient(ctx, config);
    if (grad.success()) return grad;
    RecoveryResult pso = search_pso(ctx, config, rng);
    if (config.record_trace) pso.trace.insert(pso.trace.begin(), grad.trace.begin(), grad.trace.end());
    if (pso.success()) return pso;
    RecoveryResult& best = grad.loss <= pso.loss ? grad : pso;
    best.status = grad.status == RecoveryStatus::BoundExceeded ? RecoveryStatus::BoundExceeded : RecoveryStatus::Failed;
    if (config.record_trace && &best == &grad) best.trace = std::move(pso.trace);
    return best;
}

// ---- baseline & helpers --------------------------------------------------

IdlgOutcome idlg_baseline(const GradientCapture& capture, double zero_tol)
{
    const Tensor& g = capture.last_weight_grad();
    const std::size_t classes = g.rows();
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < classes; ++i) {
        const auto row = g.row(i);
        if (std::any_of(row.begin(), row.end(), [&](double v) { return std::abs(v) > zero_tol; })) live.push_back(i);
    }
    IdlgOutcome out;
    if (live.empty()) {
        // Zero loss: the prediction is the label.
        out.cls = capture.predicted_class;
        out.label = one_hot_label(classes, out.cls).y;
        return out;
    }
    std::vector<std::size_t> opposing;
    for (auto i : live) {
        bool opposes_all = true;
        for (auto j : live) {
            if (j == i) continue;
            if (!(dot(g.row(i), g.row(j)) < 0.0)) {
                opposes_all = false;
                break;
            }
        }
        if (opposes_all) opposing.push_back(i);
    }
    if (opposing.size() != 1) {
        out.ambiguous = true;
        out.label = Tensor({classes});
        return out;
    }
    out.cls = opposing.front();
    out.label = one_hot_label(classes, out.cls).y;
    return out;
}

MixupEstimate extract_mixup(const Tensor& label)
{
    const auto y = label.values();
    if (y.size() < 2) throw IllFormedLabelError("mixup label needs at least two entries");
    std::vector<std::size_t> idx(y.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });

    double mean = 0.0;
    double var = 0.0;
    const std::size_t rest = y.size() - 2;
    if (rest > 0) {
        for (std::size_t k = 2; k < idx.size(); ++k) mean += y[idx[k]];
        mean /= static_cast<double>(rest);
        for (std::size_t k = 2; k < idx.size(); ++k) var += (y[idx[k]] - mean) * (y[idx[k]] - mean);
        var /= static_cast<double>(rest);
    }
    const double spread = 10.0 * std::sqrt(var);
    const double top = y[idx[0]] - mean;
    const double second = y[idx[1]] - mean;
    if (!(second > spread) || !(second > 0.0))
        throw IllFormedLabelError("top-2 entries are not separated from the background");
    MixupEstimate est{idx[0], idx[1], top};
    if (!(est.a > 0.0 && est.a < 1.0)) throw IllFormedLabelError("mixup share outside (0, 1)");
    return est;
}

std::vector<TracePoint> scan_landscape(const PseudoLabelContext& ctx, double lo, double hi, std::size_t steps)
{
    if (steps == 0) throw ArgumentError("trace needs at least one step");
    if (!(hi >= lo)) throw ArgumentError("trace range is empty");
    std::vector<TracePoint> out;
    out.reserve(steps);
    for (std::size_t k = 0; k < steps; ++k) {
        const double lambda = steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(steps - 1);
        if (lambda == 0.0) continue;
        out.push_back({lambda, pseudo_label_loss(ctx, lambda)});
    }
    if (out.empty()) throw ArgumentError("trace range contains no nonzero λ");
    return out;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TracePoint> trace)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.precision(17);
    out << "lambda,scaled_loss\n";
    for (const auto& p : trace) out << p.lambda << ',' << p.loss << '\n';
    if (!out) throw IoError("write failed for " + path.string());
}

} // namespace softlabel
