#include "support.hpp"

#include "softlabel/experiment.hpp"
#include "softlabel/tensor.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace softlabel;
using nlohmann::json;
using testing::scratch_dir;

namespace {

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    out << text;
}

ExperimentConfig small_config(const std::filesystem::path& out, std::size_t n = 6)
{
    ExperimentConfig c;
    c.victim.dims = {16, 12, 10};
    c.instances = n;
    c.seed = 17;
    c.out = out;
    return c;
}

int run_cli(const std::string& args)
{
    const std::string cmd = std::string(SOFTLABEL_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json strip_times(json j)
{
    j.erase("wall_time_s");
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

} // namespace

TEST_CASE("config parsing")
{
    const ExperimentConfig d = config_from_json(json::object());
    CHECK(d.victim.dims == std::vector<std::size_t>{64, 32, 10});
    CHECK(d.instances == 200);
    CHECK(d.kind == LabelKind::Smoothing);
    CHECK(d.jobs == 1);

    CHECK_THROWS_AS(config_from_json(json{{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"victim", {{"depth", 3}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"instances", "many"}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"victim", {{"dims", {10}}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"recovery", {{"coe", -1.0}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"trace", {{"lo", 0.0}, {"hi", 0.0}, {"steps", 1}}}}), ConfigError);

    const ExperimentConfig m = config_from_json(json{{"augmentation", {{"kind", "mixup"}}}});
    CHECK(m.kind == LabelKind::Mixup);
    CHECK(m.recovery.exclusion_size == 2);

    ExperimentConfig c = small_config("somewhere");
    c.sweep.scales = {1e-3};
    c.recovery.coe = 2.0;
    c.image = {1, 4, 4};
    const json j = to_json(c);
    CHECK(to_json(config_from_json(j)) == j);

    const auto dir = scratch_dir("config_files");
    CHECK_THROWS_AS(load_config(dir / "missing.json"), IoError);
    write_file(dir / "bad.json", "{ not json");
    CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
    write_file(dir / "ok.json", j.dump());
    CHECK(to_json(load_config(dir / "ok.json")) == j);
}

TEST_CASE("generation is deterministic")
{
    const auto a = scratch_dir("gen_a");
    const auto b = scratch_dir("gen_b");
    cmd_gen(small_config(a));
    cmd_gen(small_config(b));
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), a);
        REQUIRE(std::filesystem::exists(b / rel));
        CHECK(slurp(entry.path()) == slurp(b / rel));
    }

    ExperimentConfig other = small_config(scratch_dir("gen_c"));
    other.seed = 18;
    cmd_gen(other);
    CHECK(slurp(a / "model" / "layer0_weight.gtn") != slurp(other.out / "model" / "layer0_weight.gtn"));

    const GeneratedData empty = generate(small_config("unused", 0));
    CHECK(empty.instances.empty());
    const auto e = scratch_dir("gen_empty");
    save_generated(e, empty);
    CHECK(load_generated(e).instances.empty());
}

TEST_CASE("stored captures keep their structure")
{
    const auto dir = scratch_dir("gen_structure");
    ExperimentConfig c = small_config(dir, 10);
    c.kind = LabelKind::Mixup;
    c.recovery = RecoveryConfig::for_kind(LabelKind::Mixup);
    cmd_gen(c);
    const GeneratedData d = load_generated(dir);
    REQUIRE(d.instances.size() == 10);
    for (const auto& inst : d.instances) {
        // the last-layer weight gradient columns sum to zero across classes
        const Tensor& g = inst.capture.weight_grads.back();
        for (std::size_t k = 0; k < g.cols(); ++k) {
            double s = 0.0, scale = 0.0;
            for (std::size_t i = 0; i < g.rows(); ++i) {
                s += g.at(i, k);
                scale += std::abs(g.at(i, k));
            }
            CHECK(std::abs(s) <= 1e-12 * std::max(1.0, scale));
        }
        double total = 0.0;
        for (double v : inst.label.y.values()) total += v;
        CHECK(std::abs(total - 1.0) <= 1e-12);
        CHECK(inst.feature == forward(d.model, inst.x).last_layer_input());
    }
}

TEST_CASE("report aggregates match the records")
{
    const auto dir = scratch_dir("agg");
    ExperimentConfig c = small_config(dir, 12);
    const GeneratedData d = generate(c);
    const RunReport rep = run_attack(c, d);
    REQUIRE(rep.records.size() == 12);
    const json a = aggregates(rep);
    std::size_t correct = 0;
    double lr = 0.0, ls = 0.0;
    for (const auto& r : rep.records) {
        correct += r.correct ? 1 : 0;
        lr += r.l_r;
        ls += r.l_s;
    }
    CHECK(a["instances"] == 12);
    CHECK(a["correct"] == correct);
    CHECK(a["accuracy"].get<double>() == doctest::Approx(correct / 12.0));
    CHECK(a["mean_Lr"].get<double>() == doctest::Approx(lr / 12.0));
    CHECK(a["mean_Ls"].get<double>() == doctest::Approx(ls / 12.0));
    std::size_t counted = 0;
    for (const auto& [k, v] : a["status_counts"].items()) counted += v.get<std::size_t>();
    CHECK(counted == 12);

    const json j = report_json(rep, c);
    CHECK(j["format"] == "softlabel-report/1");
    CHECK(j["records"].size() == 12);
    CHECK(j["aggregates"] == a);

    const std::string csv = per_instance_csv(rep);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
}

TEST_CASE("attack results do not depend on the job count")
{
    const auto dir = scratch_dir("jobs");
    ExperimentConfig c = small_config(dir, 16);
    const GeneratedData d = generate(c);
    const RunReport one = run_attack(c, d);
    c.jobs = 4;
    const RunReport four = run_attack(c, d);
    CHECK(strip_times(report_json(one, c)) == strip_times(report_json(four, c)));
}

TEST_CASE("trace minimum sits at the true scale")
{
    const auto dir = scratch_dir("trace");
    ExperimentConfig c = small_config(dir, 4);
    c.victim.dims = {32, 10};
    c.trace = {2, -10.0, 10.0, 2001};
    const GeneratedData d = generate(c);
    const RunReport rep = run_trace(c, d);
    REQUIRE(rep.trace.size() >= 2000);
    const StoredInstance& inst = d.instances[2];
    const PseudoLabelContext ctx = build_context(inst.capture, d.model.last_layer(), c.recovery);
    const double truth = 1.0 / inst.capture.output_grads.back()[ctx.row];
    const auto best = std::min_element(rep.trace.begin(), rep.trace.end(),
                                       [](const TracePoint& a, const TracePoint& b) { return a.loss < b.loss; });
    CHECK(std::abs(best->lambda - truth) <= 0.005 + 1e-12);

    c.trace.instance = 9;
    CHECK_THROWS_AS(run_trace(c, d), ConfigError);
}

TEST_CASE("command-line exit codes and outputs")
{
    const auto dir = scratch_dir("cli");
    ExperimentConfig c = small_config(dir / "data", 5);
    json j = to_json(c);
    j.erase("out");
    write_file(dir / "config.json", j.dump());
    const std::string cfg = "--config " + (dir / "config.json").string();

    CHECK(run_cli("gen " + cfg + " --out " + (dir / "data").string()) == 0);
    CHECK(run_cli("attack " + cfg + " --data " + (dir / "data").string() + " --out " + (dir / "r1").string()) == 0);
    CHECK(run_cli("attack " + cfg + " --data " + (dir / "data").string() + " --out " + (dir / "r2").string() +
                  " --jobs 3") == 0);
    const json r1 = json::parse(slurp(dir / "r1" / "report.json"));
    const json r2 = json::parse(slurp(dir / "r2" / "report.json"));
    json c1 = strip_times(r1), c2 = strip_times(r2);
    c1["config"].erase("jobs");
    c2["config"].erase("jobs");
    c1["config"].erase("out");
    c2["config"].erase("out");
    CHECK(c1 == c2);
    CHECK(strip_time_column(slurp(dir / "r1" / "per_instance.csv")) ==
          strip_time_column(slurp(dir / "r2" / "per_instance.csv")));

    CHECK(run_cli("sweep " + cfg + " --data " + (dir / "data").string() + " --out " + (dir / "s").string()) == 0);
    CHECK(slurp(dir / "s" / "sweep.csv").rfind("family,scale,accuracy,mean_Ls,mean_Lr\n", 0) == 0);
    CHECK(run_cli("trace " + cfg + " --data " + (dir / "data").string() + " --out " + (dir / "t").string() +
                  " --steps 11") == 0);
    const std::string trace = slurp(dir / "t" / "trace.csv");
    CHECK(trace.rfind("lambda,scaled_loss\n", 0) == 0);
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 11);
    CHECK(run_cli("reconstruct " + cfg + " --data " + (dir / "data").string() + " --out " + (dir / "rc").string()) ==
          0);
    CHECK(std::filesystem::exists(dir / "rc" / "reconstructions"));

    write_file(dir / "unknown.json", R"({"victim": {"width": 3}})");
    CHECK(run_cli("gen --config " + (dir / "unknown.json").string() + " --out " + (dir / "x").string()) == 2);
    write_file(dir / "broken.json", "{");
    CHECK(run_cli("gen --config " + (dir / "broken.json").string() + " --out " + (dir / "x").string()) == 2);
    CHECK(run_cli("gen --config " + (dir / "nope.json").string()) == 3);
    CHECK(run_cli("attack " + cfg + " --data " + (dir / "nodata").string() + " --out " + (dir / "x").string()) == 3);
    CHECK(run_cli("attack " + cfg + " --jobs 0") == 2);
    CHECK(run_cli("frobnicate") == 2);
}

TEST_CASE("later subcommands reuse the config saved by gen")
{
    const auto dir = scratch_dir("cli_saved");
    const std::string data = (dir / "data").string();
    CHECK(run_cli("gen --seed 5 --instances 6 --kind mixup --out " + data) == 0);
    const json saved = json::parse(slurp(dir / "data" / "config.json"));
    CHECK(saved["augmentation"]["kind"] == "mixup");
    CHECK_FALSE(saved.contains("jobs"));
    CHECK_FALSE(saved.contains("out"));

    CHECK(run_cli("attack --data " + data + " --out " + (dir / "r").string()) == 0);
    const json report = json::parse(slurp(dir / "r" / "report.json"));
    CHECK(report["config"]["augmentation"]["kind"] == "mixup");
    CHECK(report["config"]["recovery"]["exclusion_size"] == 2);
    CHECK(report["aggregates"]["accuracy"].get<double>() == 1.0);
}
