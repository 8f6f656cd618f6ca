#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sdefit/config.hpp"
#include "sdefit/io.hpp"
#include "sdefit/runner.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitSolver = 4;

std::string default_out_dir(const std::string& config_path) {
    return (std::filesystem::path("out") / std::filesystem::path(config_path).stem()).string();
}

int cmd_run(const std::string& config_path, std::optional<uint64_t> seed,
            std::optional<std::string> out, bool smoke, bool with_data) {
    sdefit::ExperimentConfig cfg = sdefit::load_experiment_config(config_path);
    if (smoke) sdefit::apply_smoke_scaling(cfg);
    const uint64_t master_seed = seed ? *seed : cfg.eki.seed;
    const std::string out_dir = out ? *out : default_out_dir(config_path);

    const auto summary = sdefit::run_experiment(cfg, out_dir, master_seed, with_data, smoke);

    std::cout << "experiment: " << summary.name << "\n"
              << "parameters: " << summary.parameter_count
              << "  data dimension: " << summary.data_dimension
              << "  ensemble: " << summary.ensemble_size << "\n"
              << "generations: " << summary.generations
              << (summary.stopped_early ? " (stopped at misfit target)" : "") << "\n"
              << "misfit: " << summary.misfit_initial << " -> " << summary.misfit_final << "\n";
    for (const auto& [name, value] : summary.scalar_estimates) {
        std::cout << "estimate " << name << ": " << value << "\n";
    }
    if (!summary.tv_per_component.empty()) {
        std::cout << "stationary-density TV per component:";
        for (double v : summary.tv_per_component) std::cout << " " << v;
        std::cout << "\n";
        std::cout << "stationary-density TV pooled: " << summary.tv_pooled << "\n";
    }
    std::cout << "outputs in " << out_dir << "\n";
    return 0;
}

int cmd_simulate(const std::string& config_path, std::optional<uint64_t> seed,
                 std::optional<std::string> out, bool smoke, bool with_data) {
    sdefit::ExperimentConfig cfg = sdefit::load_experiment_config(config_path);
    if (smoke) sdefit::apply_smoke_scaling(cfg);
    const uint64_t master_seed = seed ? *seed : cfg.eki.seed;
    const std::string out_dir = out ? *out : default_out_dir(config_path);
    sdefit::run_simulate(cfg, out_dir, master_seed, with_data);
    std::cout << "trajectory and statistic vector written to " << out_dir << "\n";
    return 0;
}

int cmd_stats(const std::string& csv_path, const std::string& spec_path,
              std::optional<std::string> out) {
    sdefit::Json spec = sdefit::read_json_file(spec_path);
    sdefit::detail::check_keys(spec, "stats spec", {"statistics", "file", "gamma_batches"});
    if (!spec.contains("statistics")) {
        throw sdefit::ConfigError("stats spec needs a 'statistics' block");
    }
    sdefit::Json stats_json = spec.at("statistics");
    const bool window_given = stats_json.contains("averaging_window");
    if (!window_given) stats_json["averaging_window"] = 1.0;
    sdefit::StatisticsSpec stats = sdefit::detail::parse_statistics(stats_json, "statistics");

    sdefit::Trajectory traj;
    if (spec.contains("file")) {
        const sdefit::FileConfig f = sdefit::detail::parse_file(spec.at("file"), "file");
        traj = sdefit::ingest_timeseries(csv_path, f.column, f.sampling_interval, f.mean_center);
    } else {
        traj = sdefit::read_trajectory_csv(csv_path);
    }
    if (!window_given) {
        const double span = traj.duration() - stats.burn_in;
        if (span <= 0.0) throw sdefit::DataFileError("series is shorter than the burn-in");
        stats.averaging_window = span;
    }

    sdefit::DataVector dv = sdefit::assemble_data(traj, stats);
    const int batches = sdefit::detail::get_or<int>(spec, "gamma_batches", "stats spec", 20);
    dv.gamma = sdefit::estimate_gamma(traj, stats, batches);

    if (out) {
        sdefit::write_data_vector_json(*out, dv);
        std::cout << "statistic vector written to " << *out << "\n";
    } else {
        std::cout << sdefit::data_vector_to_json(dv).dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"calibrate stochastic dynamical models to time-series statistics"};
    app.require_subcommand(1);

    std::optional<uint64_t> seed;
    std::optional<std::string> out;
    bool smoke = false;
    bool with_data = false;
    app.add_option("--seed", seed, "master seed (overrides the config)");
    app.add_option("--out", out, "output directory (or file for 'stats')");
    app.add_flag("--smoke", smoke, "shrink windows and budgets for a fast functional pass");
    app.add_flag("--with-data", with_data, "allow reading measured series from disk");

    std::string run_config;
    auto* run = app.add_subcommand("run", "calibrate a model per an experiment config");
    run->fallthrough();
    run->add_option("config", run_config, "experiment config JSON")->required();

    std::string sim_config;
    auto* sim = app.add_subcommand("simulate", "generate the training series and statistics");
    sim->fallthrough();
    sim->add_option("config", sim_config, "experiment config JSON")->required();

    std::string stats_csv, stats_spec;
    auto* st = app.add_subcommand("stats", "compute the statistic vector of a stored series");
    st->fallthrough();
    st->add_option("csv", stats_csv, "trajectory or time-series CSV")->required();
    st->add_option("spec", stats_spec, "JSON with a statistics block")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(run_config, seed, out, smoke, with_data);
        if (sim->parsed()) return cmd_simulate(sim_config, seed, out, smoke, with_data);
        return cmd_stats(stats_csv, stats_spec, out);
    } catch (const sdefit::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const sdefit::DataFileError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const sdefit::ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const sdefit::BinMismatch& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const sdefit::Error& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
