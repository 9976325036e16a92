// softlabel: generate victims and captures, then run label recovery,
// input reconstruction, noise sweeps and loss-landscape traces on them.

#include "softlabel/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> data;
    std::optional<std::size_t> jobs;
    std::optional<std::size_t> instances;
    std::optional<std::string> kind;
    std::optional<std::size_t> trace_instance;
    std::optional<double> lo;
    std::optional<double> hi;
    std::optional<std::size_t> steps;
    bool export_images = false;
};

softlabel::ExperimentConfig resolve(const Overrides& o, bool reads_data)
{
    using namespace softlabel;
    ExperimentConfig c;
    if (!o.config.empty()) {
        c = load_config(o.config);
    } else if (reads_data && (o.data || o.out)) {
        // fall back to the config gen saved next to the data
        const std::filesystem::path saved = std::filesystem::path(o.data ? *o.data : *o.out) / "config.json";
        if (std::filesystem::exists(saved)) c = load_config(saved);
    }
    if (o.kind) {
        // a new kind also resets the kind-dependent exclusion size
        try {
            c.kind = parse_label_kind(*o.kind);
        } catch (const ArgumentError& e) {
            throw ConfigError(std::string("--kind: ") + e.what());
        }
        c.recovery.exclusion_size = RecoveryConfig::for_kind(c.kind).exclusion_size;
    }
    if (o.seed) c.seed = *o.seed;
    if (o.out) c.out = *o.out;
    if (o.data) c.data = *o.data;
    if (o.jobs) c.jobs = *o.jobs;
    if (o.instances) c.instances = *o.instances;
    if (o.trace_instance) c.trace.instance = *o.trace_instance;
    if (o.lo) c.trace.lo = *o.lo;
    if (o.hi) c.trace.hi = *o.hi;
    if (o.steps) c.trace.steps = *o.steps;
    if (o.export_images) c.export_images = true;
    c.validate();
    return c;
}

void add_common(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--seed", o.seed, "Run seed");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
}

void add_data(CLI::App* cmd, Overrides& o)
{
    cmd->add_option("--data", o.data, "Directory written by gen (default: --out)");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Soft-label recovery from last-layer gradients"};
    app.require_subcommand(1);
    Overrides o;

    auto* gen = app.add_subcommand("gen", "Build a victim and write gradient captures");
    add_common(gen, o);
    gen->add_option("--instances", o.instances, "Number of captures");
    gen->add_option("--kind", o.kind, "onehot, smoothing or mixup");

    auto* attack = app.add_subcommand("attack", "Recover labels for every capture");
    add_common(attack, o);
    add_data(attack, o);

    auto* recon = app.add_subcommand("reconstruct", "Recover labels, then invert the network to its input");
    add_common(recon, o);
    add_data(recon, o);
    recon->add_flag("--export-images", o.export_images, "Also write PGM/PPM images");

    auto* sweep = app.add_subcommand("sweep", "Noise robustness sweep (PSO search only)");
    add_common(sweep, o);
    add_data(sweep, o);

    auto* trace = app.add_subcommand("trace", "Sample the loss over a lambda grid");
    add_common(trace, o);
    add_data(trace, o);
    trace->add_option("--instance", o.trace_instance, "Capture index");
    trace->add_option("--lo", o.lo, "Grid start");
    trace->add_option("--hi", o.hi, "Grid end");
    trace->add_option("--steps", o.steps, "Grid points");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        const softlabel::ExperimentConfig config = resolve(o, !gen->parsed());
        if (gen->parsed())
            softlabel::cmd_gen(config);
        else if (attack->parsed())
            softlabel::cmd_attack(config);
        else if (recon->parsed())
            softlabel::cmd_reconstruct(config);
        else if (sweep->parsed())
            softlabel::cmd_sweep(config);
        else
            softlabel::cmd_trace(config);
    } catch (const softlabel::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const softlabel::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const softlabel::FormatError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const softlabel::ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
