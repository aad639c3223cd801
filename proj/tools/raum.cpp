// SPDX-License-Identifier: Apache-2.0
// raum: command-line driver for data generation, training, evaluation,
// ablations, tau_u sweeps and gradient self-checks.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "raum/error.hpp"
#include "raum/experiments/config.hpp"
#include "raum/experiments/experiments.hpp"
#include "raum/experiments/gradcheck_suite.hpp"
#include "raum/fileio.hpp"

namespace fs = std::filesystem;
using namespace raum;
using namespace raum::experiments;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string ablation;
    std::string data;
    std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c, bool with_data) {
    app->add_option("--config", c.config, "INI run configuration");
    app->add_option("--seed", c.seed, "seed for data generation and training");
    app->add_option("--out", c.out, "output directory (relative paths resolve under RAUM_OUT_ROOT when set)");
    app->add_option("--ablation", c.ablation, "full | no_ra | no_bu | backbone_only");
    app->add_option("--set", c.sets, "override one key, section.key=value (repeatable)");
    if (with_data) app->add_option("--data", c.data, "dataset directory written by gen-data");
}

RunConfig resolve_config(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
        set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (c.seed) cfg = with_seed(cfg, *c.seed);
    if (!c.ablation.empty()) cfg.train.ablation = trainer::parse_ablation(c.ablation);
    cfg.validate();
    return cfg;
}

fs::path resolve_out(const std::string& out, const std::string& fallback) {
    const char* root = std::getenv("RAUM_OUT_ROOT");
    if (out.empty()) {
        if (root == nullptr) throw UsageError("--out is required when RAUM_OUT_ROOT is not set");
        return fs::path(root) / fallback;
    }
    fs::path p(out);
    if (p.is_relative() && root != nullptr) p = fs::path(root) / p;
    return p;
}

// Creates the directory itself but never its parents.
void make_out_dir(const fs::path& dir) {
    std::error_code ec;
    if (fs::is_directory(dir, ec)) return;
    if (!fs::create_directory(dir, ec) || ec)
        throw IoError("cannot create output directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
}

std::string config_json(const RunConfig& cfg) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& key : config_keys()) {
        const auto dot = key.find('.');
        j[key.substr(0, dot)][key.substr(dot + 1)] = nullptr;
    }
    // fill values from the INI echo so both views agree
    std::istringstream in(to_ini(cfg));
    std::string line, section;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line.front() == '[') {
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const auto eq = line.find(" = ");
        j[section][line.substr(0, eq)] = line.substr(eq + 3);
    }
    return j.dump(2);
}

data::PreparedDataset load_or_generate(const Common& c, const RunConfig& cfg) {
    if (c.data.empty()) return prepare_dataset(cfg);
    auto ds = data::read_dataset(c.data);
    if (ds.num_classes != cfg.data.num_classes || ds.image_size != cfg.data.image_size ||
        ds.channels != cfg.data.channels)
        throw ConfigError("dataset '" + c.data + "' does not match the [data] section of the configuration");
    return ds;
}

void print_epoch(const trainer::EpochMetrics& m) {
    std::fprintf(stderr, "epoch %zu loss %.4f yield %.3f test_acc %.4f\n", m.epoch, m.loss, m.yield, m.test_acc);
}

int cmd_gen_data(const Common& c) {
    const auto cfg = resolve_config(c);
    const fs::path out = resolve_out(c.out, "data");
    make_out_dir(out);
    data::write_dataset(out, prepare_dataset(cfg), config_json(cfg));
    std::printf("wrote %zu images to %s\n", cfg.data.train_count() + cfg.data.test_count(), out.string().c_str());
    return 0;
}

int cmd_train(const Common& c) {
    const auto cfg = resolve_config(c);
    const fs::path out = resolve_out(c.out, "train");
    const auto ds = load_or_generate(c, cfg);
    make_out_dir(out);
    const std::string echo = to_ini(cfg);
    fileio::write_text(out / "config.ini", echo);
    trainer::RunOptions opts;
    opts.out_dir = out;
    opts.config_echo = echo;
    opts.on_epoch = print_epoch;
    const auto r = trainer::train(cfg.train, cfg.model_config(), cfg.augment, ds, opts);
    std::printf("final_test_acc %.4f\n", r.final_test_acc);
    return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
    const auto cfg = resolve_config(c);
    const auto ds = load_or_generate(c, cfg);
    const auto tensors = read_tensors(checkpoint);
    bool attention = false;
    for (const auto& t : tensors) attention = attention || t.name.rfind("attention.", 0) == 0;
    Rng init(0);
    rabu::RaumNet model(cfg.model_config(), attention, init);
    load_into(tensors, model.parameters());
    std::printf("test_acc %.4f\n", trainer::evaluate(model, ds, ds.manifest.test_ids));
    return 0;
}

std::vector<std::uint64_t> seed_list(const Common& c, const std::vector<std::uint64_t>& seeds, const RunConfig& cfg) {
    if (!seeds.empty()) return seeds;
    return {c.seed ? *c.seed : cfg.train.seed};
}

int cmd_sweep(const Common& c, const std::vector<double>& grid, const std::vector<std::uint64_t>& seeds) {
    const auto cfg = resolve_config(c);
    const fs::path out = resolve_out(c.out, "sweep");
    make_out_dir(out);
    fileio::write_text(out / "config.ini", to_ini(cfg));
    const auto rows = run_sweep(cfg, grid, seed_list(c, seeds, cfg), out,
                                [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); });
    std::fputs(sweep_csv(rows).c_str(), stdout);
    return 0;
}

int cmd_ablate(const Common& c, const std::vector<std::uint64_t>& seeds) {
    const auto cfg = resolve_config(c);
    const fs::path out = resolve_out(c.out, "ablate");
    make_out_dir(out);
    fileio::write_text(out / "config.ini", to_ini(cfg));
    const auto rows = run_ablation(cfg, seed_list(c, seeds, cfg), out,
                                   [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); });
    std::fputs(ablation_csv(rows).c_str(), stdout);
    return 0;
}

int cmd_gradcheck(std::size_t seeds, double tolerance, bool inject_fault) {
    auto cases = standard_gradcheck_cases();
    if (inject_fault) cases.push_back(faulty_square_case());
    bool ok = true;
    std::printf("%-24s %-14s %s\n", "case", "max_rel_error", "result");
    for (const auto& r : run_gradcheck(cases, seeds, tolerance)) {
        std::printf("%-24s %-14.3e %s\n", r.name.c_str(), r.max_error, r.passed ? "PASS" : "FAIL");
        ok = ok && r.passed;
    }
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Region attention and Bayesian uncertainty semi-supervised training"};
    app.require_subcommand(1);

    Common common;
    auto* gen = app.add_subcommand("gen-data", "generate, split and occlude the synthetic dataset");
    add_common(gen, common, false);

    auto* train = app.add_subcommand("train", "train one configuration");
    add_common(train, common, true);

    std::string checkpoint;
    auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on the test split");
    add_common(eval, common, true);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file (best.ckpt or final.ckpt)")->required();

    std::vector<double> grid;
    std::vector<std::uint64_t> seeds;
    auto* sweep = app.add_subcommand("sweep-tau-u", "one training run per tau_u value");
    add_common(sweep, common, false);
    sweep->add_option("--grid", grid, "comma-separated tau_u values")->delimiter(',')->required();
    sweep->add_option("--seeds", seeds, "comma-separated seeds (default: --seed or the config seed)")->delimiter(',');

    auto* ablate = app.add_subcommand("ablate", "backbone_only, no_ra, no_bu and full on identical seeds");
    add_common(ablate, common, false);
    ablate->add_option("--seeds", seeds, "comma-separated seeds (default: --seed or the config seed)")->delimiter(',');

    std::size_t gc_seeds = 20;
    double gc_tol = 1e-4;
    bool inject = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op and the composed model");
    gradcheck->add_option("--seeds", gc_seeds, "random seeds per case")->check(CLI::PositiveNumber);
    gradcheck->add_option("--tolerance", gc_tol, "max relative error");
    gradcheck->add_flag("--inject-fault", inject, "add a case with a deliberately wrong backward rule");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_gen_data(common);
        if (*train) return cmd_train(common);
        if (*eval) return cmd_eval(common, checkpoint);
        if (*sweep) return cmd_sweep(common, grid, seeds);
        if (*ablate) return cmd_ablate(common, seeds);
        if (*gradcheck) return cmd_gradcheck(gc_seeds, gc_tol, inject);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
