#include "softlabel/experiment.hpp"

#include "softlabel/metrics.hpp"
#include "softlabel/reconstruct.hpp"

#include "json_io.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace softlabel {

using nlohmann::json;
using namespace detail;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---- config parsing --------------------------------------------------------

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!keys.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

template <class T, class Parse>
void read_enum(const json& j, const char* key, T& out, Parse parse, const std::string& where)
{
    if (!j.contains(key)) return;
    std::string name;
    read(j, key, name, where);
    try {
        out = parse(name);
    } catch (const ArgumentError& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

void parse_recovery(const json& j, RecoveryConfig& r)
{
    const std::string w = "recovery";
    reject_unknown(j, {"initial", "lr", "bound", "iteration", "coe", "pop", "max_iter", "interval", "window_margin",
                       "polish_iterations", "loss_scale", "threshold", "settle_factor", "settle_iterations", "loss", "exclusion_size", "selection", "pso",
                       "zero_gradient_tol", "opposite_tol", "noise_scale", "noise_allowance", "record_trace"},
                   w);
    read(j, "initial", r.initial, w);
    read(j, "lr", r.lr, w);
    read(j, "bound", r.bound, w);
    read(j, "iteration", r.iteration, w);
    read(j, "coe", r.coe, w);
    read(j, "pop", r.pop, w);
    read(j, "max_iter", r.max_iter, w);
    read(j, "interval", r.interval, w);
    read(j, "window_margin", r.window_margin, w);
    read(j, "polish_iterations", r.polish_iterations, w);
    read(j, "loss_scale", r.loss_scale, w);
    read(j, "threshold", r.threshold, w);
    read(j, "settle_factor", r.settle_factor, w);
    read(j, "settle_iterations", r.settle_iterations, w);
    read_enum(j, "loss", r.loss, parse_loss_kind, w);
    read_enum(j, "selection", r.selection, parse_pso_selection, w);
    read(j, "zero_gradient_tol", r.zero_gradient_tol, w);
    read(j, "opposite_tol", r.opposite_tol, w);
    read(j, "noise_scale", r.noise_scale, w);
    read(j, "noise_allowance", r.noise_allowance, w);
    read(j, "record_trace", r.record_trace, w);
    read(j, "exclusion_size", r.exclusion_size, w);
    if (j.contains("pso")) {
        const json& p = j.at("pso");
        reject_unknown(p, {"inertia", "cognitive", "social"}, "recovery.pso");
        read(p, "inertia", r.pso.inertia, "recovery.pso");
        read(p, "cognitive", r.pso.cognitive, "recovery.pso");
        read(p, "social", r.pso.social, "recovery.pso");
    }
}

json recovery_json(const RecoveryConfig& r)
{
    return {{"initial", r.initial},
            {"lr", r.lr},
            {"bound", r.bound},
            {"iteration", r.iteration},
            {"coe", r.coe},
            {"pop", r.pop},
            {"max_iter", r.max_iter},
            {"interval", r.interval},
            {"window_margin", r.window_margin},
            {"polish_iterations", r.polish_iterations},
            {"loss_scale", r.loss_scale},
            {"threshold", r.threshold},
            {"settle_factor", r.settle_factor},
            {"settle_iterations", r.settle_iterations},
            {"loss", to_string(r.loss)},
            {"exclusion_size", r.exclusion_size},
            {"selection", to_string(r.selection)},
            {"pso", {{"inertia", r.pso.inertia}, {"cognitive", r.pso.cognitive}, {"social", r.pso.social}}},
            {"zero_gradient_tol", r.zero_gradient_tol},
            {"opposite_tol", r.opposite_tol},
            {"noise_scale", r.noise_scale},
            {"noise_allowance", r.noise_allowance},
            {"record_trace", r.record_trace}};
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

template <class T>
json optional_json(const std::optional<T>& v)
{
    if (!v) return nullptr;
    if constexpr (std::is_floating_point_v<T>)
        return number_or_null(*v);
    else
        return *v;
}

std::string instance_name(std::size_t k)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05zu", k);
    return buf;
}

// ---- per-instance helpers ------------------------------------------------

/// 1/(p_r - y_r) for the row the context picks; NaN when the gradient is all zero.
double true_lambda(const StoredInstance& inst, const MlpModel& model, const RecoveryConfig& cfg)
{
    try {
        const PseudoLabelContext ctx = build_context(inst.capture, model.last_layer(), cfg);
        return 1.0 / inst.capture.output_grads.back()[ctx.row];
    } catch (const DegenerateGradientError&) {
        return kNaN;
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (a.size() != b.size()) return kNaN;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor as_image(const Tensor& x, const ImageShape& shape)
{
    if (!shape.empty()) {
        if (shape.channels * shape.height * shape.width != x.size())
            throw ConfigError("image shape does not match the input dimension");
        if (shape.channels == 1) return x.reshaped({shape.height, shape.width});
        return x.reshaped({shape.channels, shape.height, shape.width});
    }
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(x.size()))));
    if (side * side == x.size()) return x.reshaped({side, side});
    return x.reshaped({1, x.size()});
}

struct Clock {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double ms() const
    {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
};

InstanceRecord attack_one(const ExperimentConfig& config, const MlpModel& model, const StoredInstance& inst,
                          std::size_t k, RecoveryResult* out_result)
{
    InstanceRecord rec;
    rec.index = k;
    Rng rng(derive_seed(config.seed, k));
    RecoveryResult r = recover(inst.capture, model, config.recovery, rng);
    const auto m = label_metrics(r, inst.label.y, config.recovery.exclusion_size, config.correctness_tolerance);
    rec.status = r.status;
    rec.engine = r.engine;
    rec.lambda = r.status == RecoveryStatus::Success || r.status == RecoveryStatus::BoundExceeded ||
                         r.status == RecoveryStatus::Failed
                     ? r.lambda
                     : kNaN;
    rec.lambda_true = true_lambda(inst, model, config.recovery);
    rec.loss = r.engine == SearchEngine::None ? kNaN : r.loss;
    rec.l_r = m.l_r;
    rec.l_s = std::isfinite(rec.lambda) && std::isfinite(rec.lambda_true) ? l_s(rec.lambda, rec.lambda_true) : kNaN;
    rec.correct = m.correct;
    rec.feature_error = r.success() ? max_abs_diff(r.feature, inst.feature) : kNaN;

    if (inst.label.kind == LabelKind::OneHot) {
        const IdlgOutcome base = idlg_baseline(inst.capture, config.recovery.zero_gradient_tol);
        if (base.ambiguous)
            rec.idlg_agrees = r.status == RecoveryStatus::DegenerateOneHotAmbiguous;
        else
            rec.idlg_agrees = (r.success() || r.status == RecoveryStatus::DegenerateOneHotResolved) &&
                              argmax(r.label.values()) == base.cls;
    }
    if (inst.label.kind == LabelKind::Mixup && r.success()) {
        try {
            const MixupEstimate est = extract_mixup(r.label);
            rec.mixup_error = std::abs(est.a - inst.label.y[est.class_a]);
        } catch (const IllFormedLabelError& e) {
            rec.note = e.what();
        }
    }
    if (out_result) *out_result = std::move(r);
    return rec;
}

std::string csv_number(double v)
{
    if (!std::isfinite(v)) return "";
    std::ostringstream s;
    s << std::setprecision(12) << v;
    return s.str();
}

template <class T>
std::string csv_optional(const std::optional<T>& v)
{
    if (!v) return "";
    if constexpr (std::is_same_v<T, bool>)
        return *v ? "1" : "0";
    else
        return csv_number(*v);
}

std::string csv_escape(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

double median(std::vector<double> v)
{
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_report(const ExperimentConfig& config, const RunReport& report)
{
    ensure_dir(config.out);
    write_json(config.out / "report.json", report_json(report, config));
    if (!report.records.empty() || report.command == "attack" || report.command == "reconstruct")
        write_text(config.out / "per_instance.csv", per_instance_csv(report));
}

} // namespace

// ---- config --------------------------------------------------------------

void ExperimentConfig::validate() const
{
    if (victim.dims.size() < 2) throw ConfigError("victim.dims needs input and class dims");
    for (auto d : victim.dims)
        if (d == 0) throw ConfigError("victim.dims entries must be positive");
    if (victim.dims.back() < 2) throw ConfigError("victim needs at least two classes");
    if (kind == LabelKind::Mixup && victim.dims.back() < 3)
        throw ConfigError("mixup recovery needs at least three classes");
    if (!(max_epsilon >= 0.0 && max_epsilon <= 1.0)) throw ConfigError("augmentation.max_epsilon must be in [0, 1]");
    if (!(input_spread >= 0.0)) throw ConfigError("input_spread must be >= 0");
    if (!(victim.train_lr > 0.0)) throw ConfigError("victim.train_lr must be positive");
    if (victim.train_epochs > 0 && victim.train_samples == 0)
        throw ConfigError("victim.train_samples must be positive when training");
    if (!(correctness_tolerance >= 0.0) || !(sweep.correctness_tolerance >= 0.0))
        throw ConfigError("correctness tolerances must be >= 0");
    for (double s : sweep.scales)
        if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("sweep.scales must be positive");
    if (trace.steps == 0) throw ConfigError("trace.steps must be positive");
    if (!(trace.hi >= trace.lo)) throw ConfigError("trace range is empty");
    if (trace.lo == 0.0 && (trace.hi == 0.0 || trace.steps == 1))
        throw ConfigError("trace range contains no nonzero lambda");
    if (jobs == 0) throw ConfigError("jobs must be >= 1");
    try {
        recovery.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
}

ExperimentConfig config_from_json(const json& j)
{
    ExperimentConfig c;
    reject_unknown(j, {"seed", "out", "data", "jobs", "victim", "augmentation", "instances", "input_spread",
                       "recovery", "correctness_tolerance", "sweep", "trace", "image", "export_images"},
                   "config");
    read(j, "seed", c.seed, "config");
    if (j.contains("out")) {
        std::string out;
        read(j, "out", out, "config");
        c.out = out;
    }
    if (j.contains("data") && !j.at("data").is_null()) {
        std::string data;
        read(j, "data", data, "config");
        c.data = data;
    }
    read(j, "jobs", c.jobs, "config");
    read(j, "instances", c.instances, "config");
    read(j, "input_spread", c.input_spread, "config");
    read(j, "correctness_tolerance", c.correctness_tolerance, "config");
    read(j, "export_images", c.export_images, "config");

    if (j.contains("victim")) {
        const json& v = j.at("victim");
        reject_unknown(v, {"dims", "bias", "hidden_activation", "train_epochs", "train_lr", "train_samples",
                           "batch_size"},
                       "victim");
        read(v, "dims", c.victim.dims, "victim");
        read(v, "bias", c.victim.bias, "victim");
        read_enum(v, "hidden_activation", c.victim.hidden_activation, parse_activation, "victim");
        read(v, "train_epochs", c.victim.train_epochs, "victim");
        read(v, "train_lr", c.victim.train_lr, "victim");
        read(v, "train_samples", c.victim.train_samples, "victim");
        read(v, "batch_size", c.victim.batch_size, "victim");
    }
    if (j.contains("augmentation")) {
        const json& a = j.at("augmentation");
        reject_unknown(a, {"kind", "max_epsilon"}, "augmentation");
        read_enum(a, "kind", c.kind, parse_label_kind, "augmentation");
        read(a, "max_epsilon", c.max_epsilon, "augmentation");
    }
    c.recovery = RecoveryConfig::for_kind(c.kind);
    if (j.contains("recovery")) parse_recovery(j.at("recovery"), c.recovery);

    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        reject_unknown(s, {"families", "scales", "all_layers", "correctness_tolerance"}, "sweep");
        if (s.contains("families")) {
            std::vector<std::string> names;
            read(s, "families", names, "sweep");
            c.sweep.families.clear();
            for (const auto& n : names) {
                try {
                    c.sweep.families.push_back(parse_noise_family(n));
                } catch (const ArgumentError& e) {
                    throw ConfigError(std::string("sweep.families: ") + e.what());
                }
            }
        }
        read(s, "scales", c.sweep.scales, "sweep");
        read(s, "all_layers", c.sweep.all_layers, "sweep");
        read(s, "correctness_tolerance", c.sweep.correctness_tolerance, "sweep");
    }
    if (j.contains("trace")) {
        const json& t = j.at("trace");
        reject_unknown(t, {"instance", "lo", "hi", "steps"}, "trace");
        read(t, "instance", c.trace.instance, "trace");
        read(t, "lo", c.trace.lo, "trace");
        read(t, "hi", c.trace.hi, "trace");
        read(t, "steps", c.trace.steps, "trace");
    }
    if (j.contains("image")) {
        const json& im = j.at("image");
        reject_unknown(im, {"channels", "height", "width"}, "image");
        read(im, "channels", c.image.channels, "image");
        read(im, "height", c.image.height, "image");
        read(im, "width", c.image.width, "image");
    }
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path)
{
    json j;
    try {
        j = read_json(path);
    } catch (const FormatError& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(j);
}

json to_json(const ExperimentConfig& c)
{
    json families = json::array();
    for (auto f : c.sweep.families) families.push_back(to_string(f));
    return {{"seed", c.seed},
            {"out", c.out.string()},
            {"data", c.data ? json(c.data->string()) : json(nullptr)},
            {"jobs", c.jobs},
            {"victim",
             {{"dims", c.victim.dims},
              {"bias", c.victim.bias},
              {"hidden_activation", to_string(c.victim.hidden_activation)},
              {"train_epochs", c.victim.train_epochs},
              {"train_lr", c.victim.train_lr},
              {"train_samples", c.victim.train_samples},
              {"batch_size", c.victim.batch_size}}},
            {"augmentation", {{"kind", to_string(c.kind)}, {"max_epsilon", c.max_epsilon}}},
            {"instances", c.instances},
            {"input_spread", c.input_spread},
            {"recovery", recovery_json(c.recovery)},
            {"correctness_tolerance", c.correctness_tolerance},
            {"sweep",
             {{"families", families},
              {"scales", c.sweep.scales},
              {"all_layers", c.sweep.all_layers},
              {"correctness_tolerance", c.sweep.correctness_tolerance}}},
            {"trace", {{"instance", c.trace.instance}, {"lo", c.trace.lo}, {"hi", c.trace.hi}, {"steps", c.trace.steps}}},
            {"image", {{"channels", c.image.channels}, {"height", c.image.height}, {"width", c.image.width}}},
            {"export_images", c.export_images}};
}

// ---- data generation -------------------------------------------------------

void save_instance(const std::filesystem::path& dir, const StoredInstance& inst)
{
    save_capture(dir, inst.capture);
    write_tensor(dir / "x.gtn", inst.x);
    write_tensor(dir / "feature.gtn", inst.feature);
    write_tensor(dir / "label.gtn", inst.label.y);
    write_json(dir / "label.json", {{"kind", to_string(inst.label.kind)},
                                    {"epsilon", inst.label.epsilon},
                                    {"class_a", inst.label.class_a},
                                    {"class_b", inst.label.class_b},
                                    {"coefficient", inst.label.coefficient}});
}

StoredInstance load_instance(const std::filesystem::path& dir)
{
    StoredInstance inst;
    inst.capture = load_capture(dir);
    inst.x = read_tensor(dir / "x.gtn");
    inst.feature = read_tensor(dir / "feature.gtn");
    inst.label.y = read_tensor(dir / "label.gtn");
    const json meta = read_json(dir / "label.json");
    try {
        inst.label.kind = parse_label_kind(meta.at("kind").get<std::string>());
        inst.label.epsilon = meta.at("epsilon").get<double>();
        inst.label.class_a = meta.at("class_a").get<std::size_t>();
        inst.label.class_b = meta.at("class_b").get<std::size_t>();
        inst.label.coefficient = meta.at("coefficient").get<double>();
    } catch (const std::exception& e) {
        throw FormatError(dir.string() + "/label.json: " + e.what());
    }
    return inst;
}

GeneratedData generate(const ExperimentConfig& config)
{
    config.validate();
    const auto& v = config.victim;
    const std::size_t layers = v.dims.size() - 1;
    const std::size_t classes = v.dims.back();
    std::vector<Activation> acts(layers, v.hidden_activation);
    acts.back() = Activation::Identity;

    Rng model_rng(derive_seed(config.seed, 0));
    GeneratedData out;
    out.model = MlpModel::random(v.dims, std::vector<bool>(layers, v.bias), acts, model_rng);
    const BlobSource source(v.dims.front(), classes, model_rng, config.input_spread);

    if (v.train_epochs > 0) {
        Rng train_rng(derive_seed(config.seed, 1));
        Dataset train_set = source.sample(v.train_samples, train_rng);
        if (config.kind == LabelKind::Smoothing) {
            for (auto& s : train_set) {
                const std::size_t cls[1] = {s.label.class_a};
                s.label = make_label(LabelKind::Smoothing, cls, train_rng, classes, config.max_epsilon);
            }
        }
        out.model = train(std::move(out.model), train_set, v.train_epochs, v.train_lr, train_rng, v.batch_size);
    }

    const std::uint64_t instance_seed = derive_seed(config.seed, 2);
    out.instances.resize(config.instances);
    parallel_for(config.instances, config.jobs, [&](std::size_t k) {
        Rng rng(derive_seed(instance_seed, k));
        const auto c1 = static_cast<std::size_t>(rng.below(classes));
        auto c2 = c1;
        if (config.kind == LabelKind::Mixup)
            while (c2 == c1) c2 = static_cast<std::size_t>(rng.below(classes));
        const std::size_t cls[2] = {c1, c2};
        const std::span<const std::size_t> picked(cls, config.kind == LabelKind::Mixup ? 2 : 1);
        StoredInstance inst;
        inst.label = make_label(config.kind, picked, rng, classes, config.max_epsilon);
        inst.x = source.draw(c1, rng).x;
        if (config.kind == LabelKind::Mixup) inst.x = mix_inputs(inst.x, source.draw(c2, rng).x, inst.label.coefficient);
        inst.capture = backward(out.model, inst.x, inst.label);
        inst.feature = forward(out.model, inst.x).last_layer_input();
        out.instances[k] = std::move(inst);
    });
    return out;
}

void save_generated(const std::filesystem::path& dir, const GeneratedData& data)
{
    ensure_dir(dir);
    save_model(dir / "model", data.model);
    json names = json::array();
    for (std::size_t k = 0; k < data.instances.size(); ++k) {
        const std::string name = instance_name(k);
        save_instance(dir / "instances" / name, data.instances[k]);
        names.push_back("instances/" + name);
    }
    write_json(dir / "instances.json",
               {{"format", "softlabel-instances/1"}, {"count", data.instances.size()}, {"instances", names}});
}

GeneratedData load_generated(const std::filesystem::path& dir)
{
    GeneratedData data;
    data.model = load_model(dir / "model");
    const json index = read_json(dir / "instances.json");
    if (index.value("format", "") != "softlabel-instances/1") throw FormatError("unsupported instance index format");
    std::vector<std::string> names;
    try {
        names = index.at("instances").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("instance index: ") + e.what());
    }
    for (const auto& n : names) {
        data.instances.push_back(load_instance(dir / n));
        const auto& inst = data.instances.back();
        if (inst.capture.weight_grads.size() != data.model.layer_count() ||
            inst.capture.last_weight_grad().shape() != data.model.last_layer().weight.shape() ||
            inst.label.y.size() != data.model.class_count())
            throw FormatError(n + " does not match the model");
    }
    return data;
}

// ---- reports ---------------------------------------------------------------

json aggregates(const RunReport& report)
{
    const auto& rs = report.records;
    json a;
    a["instances"] = rs.size();
    std::map<std::string, std::size_t> statuses;
    std::size_t correct = 0;
    std::vector<double> lr, ls;
    for (const auto& r : rs) {
        ++statuses[to_string(r.status)];
        correct += r.correct ? 1 : 0;
        if (std::isfinite(r.l_r)) lr.push_back(r.l_r);
        if (std::isfinite(r.l_s)) ls.push_back(r.l_s);
    }
    auto mean = [](const std::vector<double>& v) {
        if (v.empty()) return kNaN;
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    a["status_counts"] = statuses;
    a["correct"] = correct;
    a["accuracy"] = rs.empty() ? json(nullptr) : json(static_cast<double>(correct) / static_cast<double>(rs.size()));
    a["mean_Lr"] = number_or_null(mean(lr));
    a["median_Lr"] = number_or_null(median(lr));
    a["mean_Ls"] = number_or_null(mean(ls));

    std::size_t idlg_n = 0, idlg_agree = 0, unflagged = 0;
    std::vector<double> mix, ps, ss, errs, bias_errs;
    std::size_t dead = 0;
    for (const auto& r : rs) {
        if (r.idlg_agrees) {
            ++idlg_n;
            if (*r.idlg_agrees)
                ++idlg_agree;
            else if (r.status != RecoveryStatus::DegenerateOneHotAmbiguous)
                ++unflagged;
        }
        if (r.mixup_error && std::isfinite(*r.mixup_error)) mix.push_back(*r.mixup_error);
        if (r.psnr) ps.push_back(*r.psnr);
        if (r.ssim) ss.push_back(*r.ssim);
        if (r.max_abs_error) errs.push_back(*r.max_abs_error);
        if (r.bias_attack_error) bias_errs.push_back(*r.bias_attack_error);
        if (r.note.rfind("dead layer", 0) == 0) ++dead;
    }
    if (idlg_n > 0)
        a["idlg"] = {{"compared", idlg_n}, {"agree", idlg_agree}, {"unflagged_disagreements", unflagged}};
    if (!mix.empty())
        a["mixup"] = {{"estimated", mix.size()},
                      {"max_coefficient_error", *std::max_element(mix.begin(), mix.end())},
                      {"mean_coefficient_error", mean(mix)}};
    if (report.command == "reconstruct") {
        a["reconstructed"] = ps.size();
        a["dead_layer_instances"] = dead;
        a["mean_psnr"] = number_or_null(mean(ps));
        a["mean_ssim"] = number_or_null(mean(ss));
        a["max_abs_error"] = errs.empty() ? json(nullptr) : json(*std::max_element(errs.begin(), errs.end()));
        if (!bias_errs.empty())
            a["max_bias_attack_error"] = *std::max_element(bias_errs.begin(), bias_errs.end());
    }
    return a;
}

json report_json(const RunReport& report, const ExperimentConfig& config)
{
    json records = json::array();
    for (const auto& r : report.records) {
        records.push_back({{"index", r.index},
                           {"status", to_string(r.status)},
                           {"engine", to_string(r.engine)},
                           {"lambda", number_or_null(r.lambda)},
                           {"lambda_true", number_or_null(r.lambda_true)},
                           {"loss", number_or_null(r.loss)},
                           {"L_r", number_or_null(r.l_r)},
                           {"L_s", number_or_null(r.l_s)},
                           {"correct", r.correct},
                           {"feature_error", number_or_null(r.feature_error)},
                           {"idlg_agrees", optional_json(r.idlg_agrees)},
                           {"mixup_error", optional_json(r.mixup_error)},
                           {"psnr", optional_json(r.psnr)},
                           {"ssim", optional_json(r.ssim)},
                           {"max_abs_error", optional_json(r.max_abs_error)},
                           {"bias_attack_error", optional_json(r.bias_attack_error)},
                           {"note", r.note},
                           {"time_ms", r.time_ms}});
    }
    json j = {{"format", "softlabel-report/1"},
              {"version", SOFTLABEL_VERSION},
              {"command", report.command},
              {"seed", config.seed},
              {"rng", std::string(Rng::algorithm)},
              {"config", to_json(config)},
              {"aggregates", aggregates(report)},
              {"records", records},
              {"wall_time_s", report.wall_time_s}};
    if (report.sweep) {
        json rows = json::array();
        for (const auto& r : report.sweep->rows)
            rows.push_back({{"family", to_string(r.family)},
                            {"scale", r.scale},
                            {"instances", r.instances},
                            {"accuracy", r.accuracy},
                            {"mean_Ls", number_or_null(r.mean_ls)},
                            {"mean_Lr", number_or_null(r.mean_lr)}});
        j["sweep"] = rows;
    }
    if (!report.trace.empty()) {
        const auto best = std::min_element(report.trace.begin(), report.trace.end(),
                                           [](const TracePoint& a, const TracePoint& b) { return a.loss < b.loss; });
        j["trace"] = {{"points", report.trace.size()},
                      {"argmin_lambda", best->lambda},
                      {"min_loss", number_or_null(best->loss)}};
    }
    return j;
}

std::string per_instance_csv(const RunReport& report)
{
    std::ostringstream out;
    out << "index,status,engine,lambda,lambda_true,loss,L_r,L_s,correct,feature_error,idlg_agrees,mixup_error,"
           "psnr,ssim,max_abs_error,bias_attack_error,note,time_ms\n";
    for (const auto& r : report.records) {
        out << r.index << ',' << to_string(r.status) << ',' << to_string(r.engine) << ',' << csv_number(r.lambda)
            << ',' << csv_number(r.lambda_true) << ',' << csv_number(r.loss) << ',' << csv_number(r.l_r) << ','
            << csv_number(r.l_s) << ',' << (r.correct ? 1 : 0) << ',' << csv_number(r.feature_error) << ','
            << csv_optional(r.idlg_agrees) << ',' << csv_optional(r.mixup_error) << ',' << csv_optional(r.psnr)
            << ',' << csv_optional(r.ssim) << ',' << csv_optional(r.max_abs_error) << ','
            << csv_optional(r.bias_attack_error) << ',' << csv_escape(r.note) << ',' << csv_number(r.time_ms)
            << '\n';
    }
    return out.str();
}

// ---- runs ------------------------------------------------------------------

RunReport run_attack(const ExperimentConfig& config, const GeneratedData& data)
{
    config.validate();
    const Clock wall;
    RunReport report;
    report.command = "attack";
    report.records.resize(data.instances.size());
    parallel_for(data.instances.size(), config.jobs, [&](std::size_t k) {
        const Clock clock;
        report.records[k] = attack_one(config, data.model, data.instances[k], k, nullptr);
        report.records[k].time_ms = clock.ms();
    });
    report.wall_time_s = wall.ms() / 1000.0;
    return report;
}

RunReport run_reconstruct(const ExperimentConfig& config, const GeneratedData& data)
{
    config.validate();
    const Clock wall;
    RunReport report;
    report.command = "reconstruct";
    report.records.resize(data.instances.size());
    std::vector<std::optional<Tensor>> recovered(data.instances.size());
    const bool biased = data.model.has_bias();
    parallel_for(data.instances.size(), config.jobs, [&](std::size_t k) {
        const Clock clock;
        const StoredInstance& inst = data.instances[k];
        RecoveryResult r;
        InstanceRecord rec = attack_one(config, data.model, inst, k, &r);
        if (r.success()) {
            try {
                const Reconstruction rc = reconstruct_input(data.model, inst.capture, r);
                rec.max_abs_error = max_abs_diff(rc.input, inst.x);
                const ImageMetrics im = image_metrics(as_image(rc.input, config.image), as_image(inst.x, config.image));
                rec.psnr = im.psnr;
                rec.ssim = im.ssim;
                if (biased) {
                    const auto direct = bias_attack(data.model, inst.capture);
                    double worst = 0.0;
                    for (std::size_t l = 0; l < direct.size(); ++l)
                        if (direct[l]) worst = std::max(worst, max_abs_diff(*direct[l], rc.layer_inputs[l]));
                    rec.bias_attack_error = worst;
                }
                recovered[k] = rc.input;
            } catch (const PartialReconstructionError& e) {
                rec.note = "dead layer " + std::to_string(e.dead_layer());
            }
        } else {
            rec.note = "label recovery did not succeed";
        }
        rec.time_ms = clock.ms();
        report.records[k] = std::move(rec);
    });
    if (!data.instances.empty()) {
        ensure_dir(config.out / "reconstructions");
        for (std::size_t k = 0; k < recovered.size(); ++k) {
            if (!recovered[k]) continue;
            const std::string stem = instance_name(k);
            write_tensor(config.out / "reconstructions" / (stem + ".gtn"), *recovered[k]);
            if (config.export_images) {
                const Tensor img = as_image(*recovered[k], config.image);
                const std::size_t ch = img.ndim() == 3 ? img.shape()[0] : 1;
                if (ch != 1 && ch != 3) throw ConfigError("image export needs 1 or 3 channels");
                const std::size_t h = img.shape()[img.ndim() - 2];
                const std::size_t w = img.shape()[img.ndim() - 1];
                write_pnm(config.out / "reconstructions" / (stem + (ch == 1 ? ".pgm" : ".ppm")), img, ch, h, w);
            }
        }
    }
    report.wall_time_s = wall.ms() / 1000.0;
    return report;
}

RunReport run_sweep(const ExperimentConfig& config, const GeneratedData& data)
{
    config.validate();
    const Clock wall;
    RunReport report;
    report.command = "sweep";
    std::vector<AttackInstance> instances;
    instances.reserve(data.instances.size());
    for (const auto& inst : data.instances)
        instances.push_back({inst.capture, inst.label.y, inst.capture.output_grads.back(), inst.feature});
    SweepOptions options;
    options.all_layers = config.sweep.all_layers;
    options.correctness_tolerance = config.sweep.correctness_tolerance;
    options.jobs = config.jobs;
    report.sweep = noise_sweep(data.model, instances, config.sweep.scales, config.sweep.families, config.recovery,
                               config.seed, options);
    report.wall_time_s = wall.ms() / 1000.0;
    return report;
}

RunReport run_trace(const ExperimentConfig& config, const GeneratedData& data)
{
    config.validate();
    if (config.trace.instance >= data.instances.size())
        throw ConfigError("trace.instance " + std::to_string(config.trace.instance) + " out of range");
    const Clock wall;
    RunReport report;
    report.command = "trace";
    const StoredInstance& inst = data.instances[config.trace.instance];
    const PseudoLabelContext ctx = build_context(inst.capture, data.model.last_layer(), config.recovery);
    report.trace = scan_landscape(ctx, config.trace.lo, config.trace.hi, config.trace.steps);
    report.wall_time_s = wall.ms() / 1000.0;
    return report;
}

// ---- subcommands -----------------------------------------------------------

void cmd_gen(const ExperimentConfig& config)
{
    const GeneratedData data = generate(config);
    save_generated(config.out, data);
    // later subcommands start from this when no --config is given
    json j = to_json(config);
    for (const char* key : {"out", "data", "jobs"}) j.erase(key);
    write_json(config.out / "config.json", j);
}

void cmd_attack(const ExperimentConfig& config)
{
    write_report(config, run_attack(config, load_generated(config.data_dir())));
}

void cmd_reconstruct(const ExperimentConfig& config)
{
    write_report(config, run_reconstruct(config, load_generated(config.data_dir())));
}

void cmd_sweep(const ExperimentConfig& config)
{
    const RunReport report = run_sweep(config, load_generated(config.data_dir()));
    ensure_dir(config.out);
    write_text(config.out / "sweep.csv", sweep_csv(*report.sweep));
    write_json(config.out / "report.json", report_json(report, config));
}

void cmd_trace(const ExperimentConfig& config)
{
    const RunReport report = run_trace(config, load_generated(config.data_dir()));
    ensure_dir(config.out);
    write_trace_csv(config.out / "trace.csv", report.trace);
    write_json(config.out / "report.json", report_json(report, config));
}

} // namespace softlabel
