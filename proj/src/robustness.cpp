#include "softlabel/robustness.hpp"

#include "softlabel/detail/parallel.hpp"
#include "softlabel/metrics.hpp"

#include <cmath>
#include <sstream>

namespace softlabel {

std::string to_string(NoiseFamily f) { return f == NoiseFamily::Gaussian ? "gaussian" : "laplace"; }

NoiseFamily parse_noise_family(const std::string& name)
{
    if (name == "gaussian") return NoiseFamily::Gaussian;
    if (name == "laplace") return NoiseFamily::Laplace;
    throw ArgumentError("unknown noise family '" + name + "'");
}

double noise_stddev(const NoiseSpec& spec)
{
    return spec.family == NoiseFamily::Gaussian ? spec.scale : std::sqrt(2.0) * spec.scale;
}

GradientCapture perturb(const GradientCapture& capture, const NoiseSpec& spec, Rng& rng, bool all_layers)
{
    if (!(spec.scale > 0.0)) throw ArgumentError("noise scale must be positive");
    GradientCapture out = capture;
    const std::size_t first = all_layers ? 0 : out.weight_grads.size() - 1;
    for (std::size_t l = first; l < out.weight_grads.size(); ++l)
        for (auto& v : out.weight_grads[l].values())
            v += spec.family == NoiseFamily::Gaussian ? rng.normal(0.0, spec.scale) : rng.laplace(spec.scale);
    return out;
}

AttackInstance make_instance(const MlpModel& model, const Tensor& x, const Tensor& label)
{
    AttackInstance inst;
    inst.capture = backward(model, x, label);
    inst.label = label;
    inst.residual = inst.capture.output_grads.back();
    inst.feature = forward(model, x).last_layer_input();
    return inst;
}

SweepReport noise_sweep(const MlpModel& model, std::span<const AttackInstance> instances,
                        std::span<const double> scales, std::span<const NoiseFamily> families,
                        const RecoveryConfig& config, std::uint64_t seed, const SweepOptions& options)
{
    config.validate();
    SweepReport report;
    std::uint64_t point = 0;
    for (const auto family : families) {
        for (const double scale : scales) {
            SweepRow row{family, scale, instances.size(), 0.0, 0.0, 0.0};
            RecoveryConfig search = config;
            search.noise_scale = noise_stddev({family, scale});
            std::vector<LabelMetrics> metrics(instances.size());
            std::vector<double> ls(instances.size());
            parallel_for(instances.size(), options.jobs, [&](std::size_t k) {
                const AttackInstance& inst = instances[k];
                Rng noise_rng(derive_seed(seed, point * 1'000'003ULL + 2 * k));
                Rng search_rng(derive_seed(seed, point * 1'000'003ULL + 2 * k + 1));
                const GradientCapture noisy = perturb(inst.capture, {family, scale}, noise_rng, options.all_layers);
                const PseudoLabelContext ctx = build_context(noisy, model.last_layer(), search);
                const RecoveryResult r = search_pso(ctx, search, search_rng);
                metrics[k] = label_metrics(r, inst.label, config.exclusion_size, options.correctness_tolerance);
                ls[k] = l_s(r.lambda, 1.0 / inst.residual[ctx.row]);
            });
            std::size_t hits = 0;
            double ls_sum = 0.0;
            double lr_sum = 0.0;
            for (std::size_t k = 0; k < instances.size(); ++k) {
                hits += metrics[k].correct ? 1 : 0;
                ls_sum += ls[k];
                lr_sum += metrics[k].l_r;
            }
            if (!instances.empty()) {
                const auto n = static_cast<double>(instances.size());
                row.accuracy = static_cast<double>(hits) / n;
                row.mean_ls = ls_sum / n;
                row.mean_lr = lr_sum / n;
            }
            report.rows.push_back(row);
            ++point;
        }
    }
    return report;
}

std::string sweep_csv(const SweepReport& report)
{
    std::ostringstream out;
    out.precision(10);
    out << "family,scale,accuracy,mean_Ls,mean_Lr\n";
    for (const auto& r : report.rows)
        out << to_string(r.family) << ',' << r.scale << ',' << r.accuracy << ',' << r.mean_ls << ',' << r.mean_lr
            << '\n';
    return out.str();
}

} // namespace softlabel
