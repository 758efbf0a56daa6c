#include "dido/io.hpp"
#include "dido/lmc.hpp"
#include "dido/pipeline.hpp"
#include "dido/random.hpp"
#include "dido/runtime.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

using namespace dido;
namespace fs = std::filesystem;
namespace pl = dido::pipeline;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string log_level = "info";
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
    auto* opt = cmd->add_option("--config", c.config, "Pipeline config (JSON)");
    if (config_required) {
        opt->required();
    }
    cmd->add_option("--seed", c.seed, "Override the global seed");
    cmd->add_option("--out", c.out, "Override the output directory");
}

pl::PipelineConfig load(const Common& c) {
    pl::PipelineConfig cfg = pl::load_config(c.config);
    if (c.seed) {
        cfg.seed = *c.seed;
    }
    if (!c.out.empty()) {
        cfg.output_dir = c.out;
    }
    fs::create_directories(cfg.output_dir);
    return cfg;
}

void print_summary(const pl::StageRecord& r) {
    std::cout << r.name << ": " << r.summary.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Data-informed deep optimization pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

    Common run_c, cls_c, obj_c, opt_c, smp_c;
    bool resume = false;
    std::string obj_classifier, opt_classifier, opt_surrogate, opt_starts, smp_classifier;
    std::string energy = "boundary";
    std::string smp_output;
    int smp_n = 1000;
    std::optional<int> smp_steps;
    std::optional<double> smp_alpha, smp_beta;
    std::string preset = "harmonic_ball";
    int preset_dim = 10;

    auto* run = app.add_subcommand("run-all", "Classifier, surrogate and optimizer stages in order");
    add_common(run, run_c);
    run->add_flag("--resume", resume, "Reuse completed stage checkpoints in the output directory");

    auto* fit_c = app.add_subcommand("fit-classifier", "Iterative feasibility classifier training");
    add_common(fit_c, cls_c);

    auto* fit_o = app.add_subcommand("fit-objective", "Feasible sampling and objective surrogate fit");
    add_common(fit_o, obj_c);
    fit_o->add_option("--classifier", obj_classifier, "Classifier directory or model.json");

    auto* opt = app.add_subcommand("optimize", "Multi-start barrier descent and oracle validation");
    add_common(opt, opt_c);
    opt->add_option("--classifier", opt_classifier, "Classifier directory or model.json");
    opt->add_option("--surrogate", opt_surrogate, "Surrogate directory or model.json");
    opt->add_option("--starts", opt_starts, "CSV of start points (x_* columns)");

    auto* smp = app.add_subcommand("sample", "Ad-hoc LMC draws from a trained classifier");
    add_common(smp, smp_c);
    smp->add_option("--classifier", smp_classifier, "Classifier directory or model.json");
    smp->add_option("--energy", energy, "boundary or feasible")
        ->check(CLI::IsMember({"boundary", "feasible"}));
    smp->add_option("--n", smp_n, "Number of chains")->check(CLI::PositiveNumber);
    smp->add_option("--steps", smp_steps, "LMC steps");
    smp->add_option("--step-size", smp_alpha, "LMC step size");
    smp->add_option("--beta", smp_beta, "Inverse temperature");
    smp->add_option("--output", smp_output, "Sample CSV (default <out>/samples/<energy>.csv)");

    auto* show = app.add_subcommand("print-config", "Print the default config of a built-in problem");
    show->add_option("--problem", preset, "harmonic_ball or disc_quadratic")
        ->check(CLI::IsMember({"harmonic_ball", "disc_quadratic"}));
    show->add_option("--dim", preset_dim, "Dimension")->check(CLI::Range(2, 100000));

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        if (*show) {
            std::cout << pl::config_to_json(pl::default_config(pl::parse_problem_kind(preset), preset_dim))
                             .dump(2)
                      << "\n";
            return 0;
        }
        if (*run) {
            const auto cfg = load(run_c);
            const auto result = pl::run_all(cfg, pl::RunOptions{resume});
            print_summary(result.classifier.record);
            print_summary(result.surrogate.record);
            print_summary(result.optimize.record);
            std::cout << "manifest: " << result.manifest.string() << "\n";
            return 0;
        }
        if (*fit_c) {
            const auto cfg = load(cls_c);
            auto resolved = pl::resolve_problem(cfg.problem);
            const auto r = pl::run_classifier_stage(cfg, resolved.problem, cfg.output_dir / "classifier");
            pl::write_manifest(cfg, {r.record});
            print_summary(r.record);
            return 0;
        }
        if (*fit_o) {
            const auto cfg = load(obj_c);
            auto resolved = pl::resolve_problem(cfg.problem);
            const fs::path cpath = obj_classifier.empty() ? cfg.output_dir / "classifier" : fs::path(obj_classifier);
            const auto state = pl::load_classifier(cpath);
            const auto r = pl::run_surrogate_stage(cfg, resolved.problem, state, cfg.output_dir / "surrogate");
            pl::write_manifest(cfg, {r.record});
            print_summary(r.record);
            std::cout << "normalized test RMSE: " << r.fit.test_rmse << "\n";
            return 0;
        }
        if (*opt) {
            const auto cfg = load(opt_c);
            auto resolved = pl::resolve_problem(cfg.problem);
            const fs::path cpath = opt_classifier.empty() ? cfg.output_dir / "classifier" : fs::path(opt_classifier);
            const fs::path spath = opt_surrogate.empty() ? cfg.output_dir / "surrogate" : fs::path(opt_surrogate);
            const auto state = pl::load_classifier(cpath);
            const auto objective = pl::load_surrogate(spath);
            Matrix starts;
            if (!opt_starts.empty()) {
                if (!fs::exists(opt_starts)) {
                    throw ConfigError("starts file not found: " + opt_starts);
                }
                starts = io::read_points_csv(opt_starts);
            } else {
                starts = pl::load_surrogate_starts(fs::is_directory(spath) ? spath : spath.parent_path());
            }
            const auto r = pl::run_optimize_stage(cfg, resolved.problem, state, objective, starts,
                                                  cfg.output_dir / "optimize");
            pl::write_manifest(cfg, {r.record});
            print_summary(r.record);
            return 0;
        }
        if (*smp) {
            const auto cfg = load(smp_c);
            const fs::path cpath = smp_classifier.empty() ? cfg.output_dir / "classifier" : fs::path(smp_classifier);
            const auto state = pl::load_classifier(cpath);
            lmc::LmcConfig lc = energy == "boundary" ? cfg.classifier.search.lmc : cfg.surrogate.sampling.lmc;
            if (smp_steps) lc.total_steps = *smp_steps;
            if (smp_alpha) lc.step_size = *smp_alpha;
            if (smp_beta) lc.inverse_temperature = *smp_beta;
            lc.validate();
            const std::uint64_t seed = pl::stage_seed(cfg, "sample");
            classifier::ClassifierState s = state;
            Matrix starts;
            if (energy == "boundary") {
                starts = classifier::boundary_chain_starts(s, smp_n, seed);
            } else {
                const Matrix pts = s.input_stats.apply(s.points);
                const Vector p = s.field()->values(pts);
                std::vector<Eigen::Index> feasible;
                for (Eigen::Index i = 0; i < p.size(); ++i) {
                    if (p[i] >= 0.5) feasible.push_back(i);
                }
                if (feasible.empty()) {
                    throw SamplingError("no classifier training point is predicted feasible");
                }
                starts.resize(smp_n, pts.cols());
                for (int i = 0; i < smp_n; ++i) {
                    starts.row(i) = pts.row(feasible[static_cast<std::size_t>(i) % feasible.size()]);
                }
            }
            const auto e = energy == "boundary" ? lmc::boundary_energy(s.field()) : lmc::feasible_energy(s.field());
            const auto run_out = lmc::lmc_run(starts, e, lc, derive_seed(seed, "lmc"));
            const fs::path out = smp_output.empty() ? cfg.output_dir / "samples" / (energy + ".csv") : fs::path(smp_output);
            if (out.has_parent_path()) {
                fs::create_directories(out.parent_path());
            }
            const Matrix raw = s.input_stats.invert(run_out.final_states);
            io::write_points_csv(out, raw, {{"probability", s.field()->values(run_out.final_states)}});
            io::CsvTable metrics;
            metrics.header = {"step", "mean_energy"};
            for (std::size_t k = 0; k < run_out.mean_energy.size(); ++k) {
                metrics.rows.push_back({static_cast<double>(k), run_out.mean_energy[k]});
            }
            fs::path mpath = out;
            mpath.replace_extension(".metrics.csv");
            io::write_csv(mpath, metrics);
            std::cout << "wrote " << raw.rows() << " samples to " << out.string() << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
