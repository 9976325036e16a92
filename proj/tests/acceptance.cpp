// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "support.hpp"

#include "softlabel/experiment.hpp"
#include "softlabel/metrics.hpp"
#include "softlabel/reconstruct.hpp"
#include "softlabel/recovery.hpp"
#include "softlabel/robustness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace softlabel;
using nlohmann::json;
using testing::random_mlp;
using testing::random_vector;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double limit_s; ///< runtime limit, 0 = none
    std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

MlpModel random_victim(Rng& rng, std::size_t input, std::size_t classes)
{
    std::vector<std::size_t> dims{input};
    const std::size_t hidden = rng.below(3);
    for (std::size_t l = 0; l < hidden; ++l) dims.push_back(16 + rng.below(113));
    dims.push_back(classes);
    return random_mlp(dims, rng);
}

AttackInstance random_smoothing_instance(const MlpModel& m, Rng& rng)
{
    const std::size_t c = m.last_layer().weight.rows();
    const Tensor y = smoothing_label(c, rng.below(c), rng.uniform(0.0, 0.5)).y;
    return make_instance(m, random_vector(m.input_dim(), rng), y);
}

ExperimentConfig base_config(std::uint64_t seed, LabelKind kind, std::size_t n, const std::string& out)
{
    ExperimentConfig c;
    c.seed = seed;
    c.kind = kind;
    c.recovery = RecoveryConfig::for_kind(kind);
    c.instances = n;
    c.jobs = worker_count();
    c.out = testing::scratch_dir(out);
    return c;
}

double get_or_nan(const json& j, const char* key)
{
    return j.contains(key) && j[key].is_number() ? j[key].get<double>() : NAN;
}

// ---------------------------------------------------------------------------

Outcome oracle_exactness()
{
    Rng rng(1001);
    std::size_t ok = 0, total = 1000;
    double worst = 0.0;
    for (std::size_t v = 0; v < total; ++v) {
        const std::size_t input = 16 + rng.below(241);
        const std::size_t classes = rng.below(2) ? 100 : 10;
        const MlpModel m = random_victim(rng, input, classes);
        const AttackInstance inst = random_smoothing_instance(m, rng);
        try {
            const PseudoLabelContext ctx = build_context(inst.capture, m.last_layer(), RecoveryConfig{});
            const double err = l_r(pseudo_label(ctx, 1.0 / inst.residual[ctx.row]), inst.label);
            worst = std::max(worst, err);
            ok += err < 1e-6 ? 1 : 0;
        } catch (const DegenerateGradientError&) {
            worst = INFINITY;
        }
    }
    return {ok == total, fmt("%zu/%zu victims with L_r < 1e-6, worst L_r %.3g", ok, total, worst)};
}

Outcome recovery_accuracy()
{
    std::string detail;
    bool pass = true;
    for (const auto kind : {LabelKind::Smoothing, LabelKind::Mixup}) {
        ExperimentConfig c = base_config(2001, kind, 500, "acc_untrained");
        const json a = aggregates(run_attack(c, generate(c)));
        const double acc = a["accuracy"].get<double>();
        const double lr = get_or_nan(a, "mean_Lr");
        pass = pass && acc >= 0.99 && lr <= 1e-3;
        detail += fmt("untrained %s acc %.3f mean L_r %.2g; ", to_string(kind).c_str(), acc, lr);
    }
    for (const auto kind : {LabelKind::Smoothing, LabelKind::Mixup}) {
        ExperimentConfig c = base_config(2002, kind, 500, "acc_trained");
        c.victim.train_epochs = 100;
        const json a = aggregates(run_attack(c, generate(c)));
        const double acc = a["accuracy"].get<double>();
        pass = pass && acc >= 0.95;
        detail += fmt("trained %s acc %.3f mean L_r %.2g; ", to_string(kind).c_str(), acc, get_or_nan(a, "mean_Lr"));
    }
    detail.resize(detail.size() - 2);
    return {pass, detail};
}

Outcome sum_identity()
{
    Rng rng(3001);
    std::size_t sum_ok = 0, deriv_ok = 0, fd_ok = 0;
    const std::size_t total = 1000;
    double worst_sum = 0.0, worst_deriv = 0.0, worst_fd = 0.0;
    for (std::size_t t = 0; t < total; ++t) {
        const MlpModel m = random_victim(rng, 16 + rng.below(49), rng.below(2) ? 100 : 10);
        const AttackInstance inst = random_smoothing_instance(m, rng);
        const PseudoLabelContext ctx = build_context(inst.capture, m.last_layer(), RecoveryConfig{});
        const double lambda = (rng.below(2) ? 1.0 : -1.0) * std::pow(10.0, rng.uniform(-1.0, 2.0));

        const Tensor y = pseudo_label(ctx, lambda);
        double s = 0.0;
        for (double v : y.values()) s += v;
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        sum_ok += std::abs(s - 1.0) < 1e-9 ? 1 : 0;

        // d/dλ Σŷ = Σ p_i (u_i - ū) + Σ c_i / λ², u = W·g_r
        Tensor logits = ctx.row_logits;
        for (auto& v : logits.values()) v *= lambda;
        if (ctx.bias)
            for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += (*ctx.bias)[i];
        const Tensor p = softmax(logits);
        double ubar = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) ubar += p[i] * ctx.row_logits[i];
        double d = 0.0, mag = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double a = p[i] * (ctx.row_logits[i] - ubar);
            const double b = ctx.ratios[i] / (lambda * lambda);
            d += a + b;
            mag += std::abs(a) + std::abs(b);
        }
        const double rel = std::abs(d) / std::max(mag, 1e-300);
        worst_deriv = std::max(worst_deriv, rel);
        deriv_ok += rel < 1e-9 ? 1 : 0;

        const double h = 1e-4 * std::abs(lambda);
        double up = 0.0, down = 0.0;
        const Tensor above = pseudo_label(ctx, lambda + h);
        const Tensor below = pseudo_label(ctx, lambda - h);
        for (double v : above.values()) up += v;
        for (double v : below.values()) down += v;
        const double fd = std::abs(up - down) / (2 * h);
        worst_fd = std::max(worst_fd, fd);
        fd_ok += fd < 1e-7 ? 1 : 0;
    }
    return {sum_ok == total && deriv_ok == total && fd_ok == total,
            fmt("|sum-1| < 1e-9 on %zu/%zu (worst %.2g); analytic d(sum)/dlambda relative < 1e-9 on %zu (worst %.2g); "
                "finite-difference d(sum)/dlambda < 1e-7 on %zu (worst %.2g)",
                sum_ok, total, worst_sum, deriv_ok, worst_deriv, fd_ok, worst_fd)};
}

Outcome onehot_compatibility()
{
    ExperimentConfig c = base_config(4001, LabelKind::OneHot, 500, "acc_onehot");
    const RunReport rep = run_attack(c, generate(c));
    std::size_t agree = 0, flagged = 0, unflagged = 0, ambiguous = 0;
    for (const auto& r : rep.records) {
        if (r.status == RecoveryStatus::DegenerateOneHotAmbiguous) ++ambiguous;
        if (r.idlg_agrees.value_or(false))
            ++agree;
        else if (r.status == RecoveryStatus::DegenerateOneHotAmbiguous)
            ++flagged;
        else
            ++unflagged;
    }
    const json a = aggregates(rep);
    return {unflagged == 0 && rep.records.size() == 500,
            fmt("%zu agree, %zu disagreements flagged ambiguous, %zu unflagged; %zu ambiguous overall; accuracy %.3f",
                agree, flagged, unflagged, ambiguous, a["accuracy"].get<double>())};
}

Outcome fcn_reconstruction()
{
    ExperimentConfig c = base_config(5001, LabelKind::Smoothing, 100, "acc_fcn");
    c.victim.dims = {4096, 512, 256, 128, 10};
    c.image = {1, 64, 64};
    const GeneratedData d = generate(c);
    const json a = aggregates(run_reconstruct(c, d));
    const double ps = get_or_nan(a, "mean_psnr");
    const double ss = get_or_nan(a, "mean_ssim");

    double worst = 0.0;
    std::size_t exact = 0, dead = 0;
    for (const auto& inst : d.instances) {
        try {
            const Reconstruction rc = reconstruct_input(d.model, inst.capture, inst.feature, inst.label.y);
            const double err = testing::max_abs_diff(rc.input, inst.x);
            worst = std::max(worst, err);
            exact += err < 1e-8 ? 1 : 0;
        } catch (const PartialReconstructionError&) {
            ++dead;
        }
    }
    const std::size_t live = d.instances.size() - dead;
    return {ps >= 45.0 && ss >= 0.99 && exact == live && live > 0,
            fmt("mean PSNR %.2f dB, mean SSIM %.5f over %zu reconstructed; exactness %zu/%zu live (max abs error "
                "%.2g), %zu dead",
                ps, ss, a["reconstructed"].get<std::size_t>(), exact, live, worst, dead)};
}

Outcome dp_sweep()
{
    ExperimentConfig c = base_config(6001, LabelKind::Smoothing, 100, "acc_sweep");
    c.victim.dims = {512, 10};
    c.sweep.scales = {1e-4, 1e-3, 1e-2, 1e-1};
    const RunReport rep = run_sweep(c, generate(c));
    bool pass = true;
    std::string detail;
    for (const auto& row : rep.sweep->rows) {
        const bool small = row.scale < 0.05;
        const bool ok = small ? row.accuracy == 1.0 && row.mean_ls <= 5 * row.scale && row.mean_ls >= row.scale / 5
                              : row.accuracy < 0.6;
        pass = pass && ok;
        detail += fmt("%s %.0e: acc %.2f L_s %.2g%s; ", to_string(row.family).c_str(), row.scale, row.accuracy,
                      row.mean_ls, ok ? "" : " (miss)");
    }
    detail.resize(detail.size() - 2);
    return {pass, detail};
}

Outcome ambiguity_intervals()
{
    ExperimentConfig c = base_config(7001, LabelKind::Smoothing, 100, "acc_ambiguity");
    const GeneratedData d = generate(c);
    std::size_t found = 0;
    for (const auto& inst : d.instances) {
        const PseudoLabelContext ctx = build_context(inst.capture, d.model.last_layer(), c.recovery);
        std::size_t run = 0;
        bool hit = false;
        for (const auto& p : scan_landscape(ctx, -50.0, 50.0, 10001)) {
            const Tensor y = pseudo_label(ctx, p.lambda);
            double s = 0.0;
            bool nonneg = true;
            for (double v : y.values()) {
                s += v;
                nonneg = nonneg && v >= 0.0;
            }
            const bool valid = nonneg && std::abs(s - 1.0) < 1e-9 && l_r(y, inst.label.y) > 0.05;
            run = valid ? run + 1 : 0;
            // two adjacent valid grid points bound an interval of nonzero length
            hit = hit || run >= 2;
        }
        found += hit ? 1 : 0;
    }
    return {found >= 95, fmt("%zu/100 instances have a valid-label interval with L_r > 0.05", found)};
}

double cross_entropy_at(const MlpModel& m, const Tensor& x, const Tensor& y)
{
    return cross_entropy(forward(m, x).logits, y);
}

double fd_relative_error(MlpModel& m, Tensor& param, const Tensor& analytic, const Tensor& x, const Tensor& y)
{
    const double h = 1e-6;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double keep = param[i];
        param[i] = keep + h;
        const double up = cross_entropy_at(m, x, y);
        param[i] = keep - h;
        const double down = cross_entropy_at(m, x, y);
        param[i] = keep;
        const double fd = (up - down) / (2 * h);
        num += (fd - analytic[i]) * (fd - analytic[i]);
        den += analytic[i] * analytic[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

json strip_times(json j)
{
    j.erase("wall_time_s");
    if (j.contains("records"))
        for (auto& r : j["records"]) r.erase("time_ms");
    return j;
}

std::string strip_time_column(const std::string& csv)
{
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
    return out;
}

bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b, std::size_t& files)
{
    bool same = true;
    for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(e.path(), a);
        const std::string name = rel.filename().string();
        const std::string x = slurp(e.path());
        const std::string y = slurp(b / rel);
        ++files;
        if (name == "report.json")
            same = same && strip_times(json::parse(x)) == strip_times(json::parse(y));
        else if (name == "per_instance.csv")
            same = same && strip_time_column(x) == strip_time_column(y);
        else
            same = same && std::filesystem::exists(b / rel) && x == y;
    }
    return same;
}

Outcome numerical_hygiene()
{
    Rng rng(8001);
    double worst_bw = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
        MlpModel m = random_mlp({10, 8, 6, 5}, rng, trial % 2 == 0);
        const Tensor x = random_vector(10, rng);
        const Tensor y = smoothing_label(5, rng.below(5), rng.uniform(0, 0.5)).y;
        const GradientCapture g = backward(m, x, y);
        for (std::size_t l = 0; l < m.layer_count(); ++l) {
            auto& layer = m.mutable_layers()[l];
            worst_bw = std::max(worst_bw, fd_relative_error(m, layer.weight, g.weight_grads[l], x, y));
            if (layer.bias) worst_bw = std::max(worst_bw, fd_relative_error(m, *layer.bias, *g.bias_grads[l], x, y));
        }
    }

    double worst_ld = 0.0;
    std::size_t checked = 0, kinks = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const MlpModel m = random_victim(rng, 16 + rng.below(49), 10);
        const AttackInstance inst = random_smoothing_instance(m, rng);
        RecoveryConfig cfg;
        cfg.loss = static_cast<LossKind>(trial % 3);
        const PseudoLabelContext ctx = build_context(inst.capture, m.last_layer(), cfg);
        const double lambda = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.3, 30.0);
        const double h = 1e-6 * std::max(1.0, std::abs(lambda));
        // the loss has kinks where the exclusion set or a sign changes; skip stencils that straddle one
        const auto lo = pseudo_label(ctx, lambda - h);
        const auto hi = pseudo_label(ctx, lambda + h);
        bool kink = exclusion_set(lo.values(), ctx.exclusion_size) != exclusion_set(hi.values(), ctx.exclusion_size);
        for (std::size_t i = 0; i < lo.size(); ++i) kink = kink || (lo[i] < 0) != (hi[i] < 0);
        if (kink) {
            ++kinks;
            continue;
        }
        const double fd = (pseudo_label_loss(ctx, lambda + h) - pseudo_label_loss(ctx, lambda - h)) / (2 * h);
        worst_ld = std::max(worst_ld, testing::max_rel_diff(fd, loss_derivative(ctx, lambda), 1e-6));
        ++checked;
    }

    const auto run_pipeline = [](const std::string& tag, std::size_t jobs) {
        ExperimentConfig c;
        c.seed = 8002;
        c.instances = 20;
        c.victim.dims = {36, 16, 10};
        c.victim.bias = true;
        c.victim.train_epochs = 5;
        c.sweep.scales = {1e-3, 1e-1};
        c.trace.steps = 201;
        c.jobs = jobs;
        c.out = testing::scratch_dir(tag);
        c.data = c.out / "data";
        ExperimentConfig g = c;
        g.out = *c.data;
        cmd_gen(g);
        ExperimentConfig a = c;
        for (const char* cmd : {"attack", "reconstruct", "sweep", "trace"}) {
            a.out = c.out / cmd;
            if (std::string(cmd) == "attack") cmd_attack(a);
            if (std::string(cmd) == "reconstruct") cmd_reconstruct(a);
            if (std::string(cmd) == "sweep") cmd_sweep(a);
            if (std::string(cmd) == "trace") cmd_trace(a);
        }
        return c.out;
    };
    const auto first = run_pipeline("acc_det_a", 1);
    const auto second = run_pipeline("acc_det_b", worker_count() + 2);
    // the echoed config differs only in out/data/jobs; blank them before comparing
    for (const auto& dir : {first, second})
        for (const char* cmd : {"attack", "reconstruct", "sweep", "trace"}) {
            const auto p = dir / cmd / "report.json";
            json j = json::parse(slurp(p));
            j["config"].erase("out");
            j["config"].erase("data");
            j["config"].erase("jobs");
            std::ofstream(p) << j.dump(2);
        }
    std::size_t files = 0;
    const bool same = same_tree(first, second, files);

    return {worst_bw <= 1e-5 && worst_ld <= 1e-4 && checked > 0 && same,
            fmt("backward vs FD worst relative %.2g; loss_derivative vs FD worst relative %.2g over %zu points (%zu "
                "kink stencils skipped); %zu output files identical across runs: %s",
                worst_bw, worst_ld, checked, kinks, files, same ? "yes" : "no")};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> criteria{
        {1, "oracle exactness", 60, oracle_exactness},
        {2, "recovery accuracy, untrained and trained victims", 600, recovery_accuracy},
        {3, "pseudo-label sum identity", 0, sum_identity},
        {4, "one-hot compatibility with the sign rule", 0, onehot_compatibility},
        {5, "FCN-4 reconstruction", 300, fcn_reconstruction},
        {6, "noise sweep trend", 900, dp_sweep},
        {7, "ambiguity intervals", 0, ambiguity_intervals},
        {8, "numerical hygiene and determinism", 0, numerical_hygiene},
    };
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = c.limit_s == 0 || secs < c.limit_s;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::printf("%s criterion %d (%s): %s [%.1f s%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    secs, in_time ? "" : fmt(", limit %.0f s", c.limit_s).c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
