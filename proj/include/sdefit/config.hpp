#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sdefit/eki.hpp"
#include "sdefit/io.hpp"
#include "sdefit/params.hpp"
#include "sdefit/statistics.hpp"

namespace sdefit {

// Experiment description as parsed from a config file. Parsing is strict:
// unknown keys are rejected by name so typos fail loudly instead of
// silently falling back to defaults.

struct FunctionConfig {
    std::string kind = "gp";  // gp | gaussian_basis | fixed_identity | fixed_zero
    int nodes = 5;
    bool has_interval = false;
    double lo = 0.0;
    double hi = 0.0;
    int centers = 9;
    double width = 0.5;
    std::vector<double> weights;  // fixed_basis only
};

struct ModelConfig {
    std::string name;
    std::map<std::string, double> constants;
    std::vector<std::string> learn;
    std::vector<std::pair<std::string, FunctionConfig>> functions;
};

struct FileConfig {
    std::string path;
    std::string column;
    double sampling_interval = 1.0;
    bool mean_center = false;
};

struct SimulationConfig {
    double dt = 1e-3;
    long store_every = 1;
    std::vector<double> initial_state;  // empty = model default
};

struct DataConfig {
    std::string source = "simulate";  // simulate | file
    std::map<std::string, double> truth;
    std::optional<ModelConfig> model;  // data-generating system, defaults to the fit model
    std::optional<FileConfig> file;
    std::optional<SimulationConfig> simulation;
    int gamma_batches = 20;
    // "diagonal" keeps only the per-statistic variances. The full batch
    // covariance has rank < n_batches, so when the data dimension exceeds
    // the batch count it has null directions along which the Kalman gain
    // is unbounded; the diagonal estimate is full rank by construction.
    std::string gamma_mode = "full";  // full | diagonal
};

struct PriorConfig {
    PriorSpec spec;
    Transform transform = Transform::Identity;
    bool transform_given = false;
};

struct EkiConfig {
    int ensemble_size = 0;  // 0 = max(10, 2p)
    int ensemble_cap = 0;   // 0 = no cap; set by smoke scaling
    int max_generations = 30;
    bool perturb_observations = true;
    bool adaptive_inflation = false;
    std::optional<double> misfit_stop;
    int eval_budget = 0;
    uint64_t seed = 0;
    std::map<std::string, PriorConfig> priors;
};

struct ValidationConfig {
    double window_multiplier = 10.0;
    int histogram_bins = 60;
    long store_every = 10;
};

struct OutputConfig {
    bool dump_trajectories = false;
    long trajectory_decimation = 100;
    bool history_particles = true;
};

struct ExperimentConfig {
    std::string name;
    ModelConfig model;
    DataConfig data;
    StatisticsSpec statistics;
    double forward_window = 0.0;  // 0 = statistics.averaging_window
    SimulationConfig simulation;
    EkiConfig eki;
    ValidationConfig validation;
    OutputConfig output;
};

namespace detail {

inline void check_keys(const Json& j, const std::string& where,
                       const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError("unknown key '" + item.key() + "' in " + where);
        }
    }
}

template <typename T>
T get_as(const Json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const std::exception& e) {
        throw ConfigError("bad value for '" + key + "' in " + where + ": " + e.what());
    }
}

template <typename T>
T get_or(const Json& j, const std::string& key, const std::string& where, T fallback) {
    if (!j.contains(key) || j.at(key).is_null()) return fallback;
    return get_as<T>(j, key, where);
}

inline FunctionConfig parse_function(const Json& j, const std::string& where) {
    check_keys(j, where, {"kind", "nodes", "interval", "centers", "width", "weights"});
    FunctionConfig f;
    f.kind = get_or<std::string>(j, "kind", where, "gp");
    if (f.kind != "gp" && f.kind != "gaussian_basis" && f.kind != "fixed_identity" &&
        f.kind != "fixed_zero" && f.kind != "fixed_basis") {
        throw ConfigError("unknown function kind '" + f.kind + "' in " + where);
    }
    f.nodes = get_or<int>(j, "nodes", where, 5);
    if (f.nodes < 1) throw ConfigError("'nodes' must be positive in " + where);
    if (j.contains("interval")) {
        const auto iv = get_as<std::vector<double>>(j, "interval", where);
        if (iv.size() != 2 || !(iv[1] > iv[0])) {
            throw ConfigError("'interval' must be [lo, hi] with lo < hi in " + where);
        }
        f.has_interval = true;
        f.lo = iv[0];
        f.hi = iv[1];
    }
    f.centers = get_or<int>(j, "centers", where, 9);
    if (f.centers < 1) throw ConfigError("'centers' must be positive in " + where);
    f.width = get_or<double>(j, "width", where, 0.5);
    if (!(f.width > 0.0)) throw ConfigError("'width' must be positive in " + where);
    f.weights = get_or<std::vector<double>>(j, "weights", where, {});
    if (f.kind == "fixed_basis" && static_cast<int>(f.weights.size()) != f.centers) {
        throw ConfigError("fixed_basis needs exactly 'centers' weights in " + where);
    }
    if (f.kind != "fixed_basis" && !f.weights.empty()) {
        throw ConfigError("'weights' is only valid for fixed_basis in " + where);
    }
    return f;
}

inline ModelConfig parse_model(const Json& j, const std::string& where) {
    check_keys(j, where, {"name", "constants", "learn", "functions"});
    ModelConfig m;
    m.name = get_as<std::string>(j, "name", where);
    if (j.contains("constants")) {
        for (const auto& item : j.at("constants").items()) {
            if (!item.value().is_number()) {
                throw ConfigError("constant '" + item.key() + "' must be a number in " + where);
            }
            m.constants[item.key()] = item.value().get<double>();
        }
    }
    m.learn = get_or<std::vector<std::string>>(j, "learn", where, {});
    if (j.contains("functions")) {
        for (const auto& item : j.at("functions").items()) {
            m.functions.emplace_back(
                item.key(), parse_function(item.value(), where + ".functions." + item.key()));
        }
    }
    return m;
}

inline SimulationConfig parse_simulation(const Json& j, const std::string& where) {
    check_keys(j, where, {"dt", "store_every", "initial_state"});
    SimulationConfig s;
    s.dt = get_or<double>(j, "dt", where, 1e-3);
    if (!(s.dt > 0.0)) throw ConfigError("'dt' must be positive in " + where);
    s.store_every = get_or<long>(j, "store_every", where, 1);
    if (s.store_every < 1) throw ConfigError("'store_every' must be >= 1 in " + where);
    s.initial_state = get_or<std::vector<double>>(j, "initial_state", where, {});
    return s;
}

inline StatisticsSpec parse_statistics(const Json& j, const std::string& where) {
    check_keys(j, where,
               {"moments", "moment_set", "acf", "psd", "burn_in", "averaging_window"});
    StatisticsSpec s;
    if (j.contains("moment_set")) {
        const auto& ms = j.at("moment_set");
        check_keys(ms, where + ".moment_set", {"components", "max_order"});
        const int n = get_as<int>(ms, "components", where + ".moment_set");
        const int order = get_or<int>(ms, "max_order", where + ".moment_set", 2);
        if (n < 1) throw ConfigError("'components' must be positive in " + where);
        if (order < 1 || order > 2) throw ConfigError("'max_order' must be 1 or 2 in " + where);
        for (int c = 1; c <= n; ++c) s.moment_terms.push_back({c});
        if (order == 2) {
            for (int i = 1; i <= n; ++i) {
                for (int k = i; k <= n; ++k) s.moment_terms.push_back({i, k});
            }
        }
    }
    if (j.contains("moments")) {
        for (const auto& term : j.at("moments")) {
            const auto t = term.get<std::vector<int>>();
            if (t.empty()) throw ConfigError("empty moment term in " + where);
            s.moment_terms.push_back(t);
        }
    }
    if (j.contains("acf")) {
        for (const auto& a : j.at("acf")) {
            check_keys(a, where + ".acf[]", {"component", "lags"});
            AcfRequest req;
            req.component = get_or<int>(a, "component", where + ".acf[]", 1);
            req.lags = get_as<std::vector<double>>(a, "lags", where + ".acf[]");
            if (req.lags.empty()) throw ConfigError("empty lag list in " + where);
            s.acf_requests.push_back(std::move(req));
        }
    }
    if (j.contains("psd")) {
        for (const auto& p : j.at("psd")) {
            check_keys(p, where + ".psd[]", {"component", "degree", "band", "welch_segments"});
            PsdRequest req;
            req.component = get_or<int>(p, "component", where + ".psd[]", 1);
            req.degree = get_or<int>(p, "degree", where + ".psd[]", 2);
            if (req.degree < 0) throw ConfigError("'degree' must be >= 0 in " + where);
            if (p.contains("band")) {
                const auto band = get_as<std::vector<double>>(p, "band", where + ".psd[]");
                if (band.size() != 2) throw ConfigError("'band' must be [lo, hi] in " + where);
                req.f_lo = band[0];
                req.f_hi = band[1];
            }
            req.welch_segments = get_or<int>(p, "welch_segments", where + ".psd[]", 8);
            if (req.welch_segments < 1) {
                throw ConfigError("'welch_segments' must be >= 1 in " + where);
            }
            s.psd_requests.push_back(std::move(req));
        }
    }
    if (s.dimension() == 0) throw ConfigError(where + " selects no statistics");
    s.burn_in = get_or<double>(j, "burn_in", where, 0.0);
    if (s.burn_in < 0.0) throw ConfigError("'burn_in' must be >= 0 in " + where);
    s.averaging_window = get_or<double>(j, "averaging_window", where, 0.0);
    if (!(s.averaging_window > 0.0)) {
        throw ConfigError("'averaging_window' must be positive in " + where);
    }
    return s;
}

inline FileConfig parse_file(const Json& j, const std::string& where) {
    check_keys(j, where, {"path", "column", "sampling_interval", "mean_center"});
    FileConfig f;
    f.path = get_or<std::string>(j, "path", where, "");
    f.column = get_or<std::string>(j, "column", where, "");
    f.sampling_interval = get_or<double>(j, "sampling_interval", where, 1.0);
    if (!(f.sampling_interval > 0.0)) {
        throw ConfigError("'sampling_interval' must be positive in " + where);
    }
    f.mean_center = get_or<bool>(j, "mean_center", where, false);
    return f;
}

inline PriorConfig parse_prior(const Json& j, const std::string& where) {
    check_keys(j, where, {"dist", "range", "mean", "sd", "value", "transform"});
    PriorConfig p;
    const auto dist = get_or<std::string>(j, "dist", where, "uniform");
    if (dist == "uniform") {
        const auto range = get_as<std::vector<double>>(j, "range", where);
        if (range.size() != 2) throw ConfigError("'range' must be [lo, hi] in " + where);
        p.spec = {PriorSpec::Kind::Uniform, range[0], range[1]};
    } else if (dist == "normal") {
        p.spec = {PriorSpec::Kind::Normal, get_as<double>(j, "mean", where),
                  get_as<double>(j, "sd", where)};
        if (!(p.spec.b > 0.0)) throw ConfigError("'sd' must be positive in " + where);
    } else if (dist == "point") {
        p.spec = {PriorSpec::Kind::Point, get_as<double>(j, "value", where), 0.0};
    } else {
        throw ConfigError("unknown prior dist '" + dist + "' in " + where);
    }
    if (j.contains("transform")) {
        const auto t = get_as<std::string>(j, "transform", where);
        if (t == "log") {
            p.transform = Transform::Log;
        } else if (t == "identity") {
            p.transform = Transform::Identity;
        } else {
            throw ConfigError("unknown transform '" + t + "' in " + where);
        }
        p.transform_given = true;
    }
    return p;
}

inline EkiConfig parse_eki(const Json& j, const std::string& where) {
    check_keys(j, where,
               {"ensemble_size", "max_generations", "perturb_observations",
                "adaptive_inflation", "misfit_stop", "eval_budget", "seed", "priors"});
    EkiConfig e;
    e.ensemble_size = get_or<int>(j, "ensemble_size", where, 0);
    e.max_generations = get_or<int>(j, "max_generations", where, 30);
    if (e.max_generations < 1) throw ConfigError("'max_generations' must be >= 1 in " + where);
    e.perturb_observations = get_or<bool>(j, "perturb_observations", where, true);
    e.adaptive_inflation = get_or<bool>(j, "adaptive_inflation", where, false);
    if (j.contains("misfit_stop") && !j.at("misfit_stop").is_null()) {
        e.misfit_stop = get_as<double>(j, "misfit_stop", where);
    }
    e.eval_budget = get_or<int>(j, "eval_budget", where, 0);
    e.seed = get_or<uint64_t>(j, "seed", where, 0);
    if (!j.contains("priors")) throw ConfigError(where + " needs a 'priors' table");
    for (const auto& item : j.at("priors").items()) {
        e.priors[item.key()] = parse_prior(item.value(), where + ".priors." + item.key());
    }
    return e;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const Json& j) {
    detail::check_keys(j, "config",
                       {"name", "model", "data", "statistics", "forward_window", "simulation",
                        "eki", "validation", "output"});
    ExperimentConfig c;
    c.name = detail::get_or<std::string>(j, "name", "config", "experiment");
    if (!j.contains("model")) throw ConfigError("config needs a 'model' block");
    c.model = detail::parse_model(j.at("model"), "model");

    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::check_keys(d, "data",
                           {"source", "truth", "model", "file", "simulation", "gamma_batches",
                            "gamma_mode"});
        c.data.source = detail::get_or<std::string>(d, "source", "data", "simulate");
        if (c.data.source != "simulate" && c.data.source != "file") {
            throw ConfigError("data.source must be 'simulate' or 'file'");
        }
        if (d.contains("truth")) {
            for (const auto& item : d.at("truth").items()) {
                if (!item.value().is_number()) {
                    throw ConfigError("data.truth entries must be numbers");
                }
                c.data.truth[item.key()] = item.value().get<double>();
            }
        }
        if (d.contains("model")) {
            c.data.model = detail::parse_model(d.at("model"), "data.model");
        }
        if (d.contains("file")) {
            c.data.file = detail::parse_file(d.at("file"), "data.file");
        }
        if (d.contains("simulation")) {
            c.data.simulation = detail::parse_simulation(d.at("simulation"), "data.simulation");
        }
        c.data.gamma_batches = detail::get_or<int>(d, "gamma_batches", "data", 20);
        if (c.data.gamma_batches < 2) throw ConfigError("data.gamma_batches must be >= 2");
        c.data.gamma_mode = detail::get_or<std::string>(d, "gamma_mode", "data", "full");
        if (c.data.gamma_mode != "full" && c.data.gamma_mode != "diagonal") {
            throw ConfigError("data.gamma_mode must be 'full' or 'diagonal'");
        }
    }
    if (c.data.source == "file" && (!c.data.file || c.data.file->path.empty())) {
        throw ConfigError("data.source is 'file' but no data.file path is given");
    }

    if (!j.contains("statistics")) throw ConfigError("config needs a 'statistics' block");
    c.statistics = detail::parse_statistics(j.at("statistics"), "statistics");
    c.forward_window = detail::get_or<double>(j, "forward_window", "config", 0.0);
    if (c.forward_window < 0.0) throw ConfigError("'forward_window' must be >= 0");

    if (j.contains("simulation")) {
        c.simulation = detail::parse_simulation(j.at("simulation"), "simulation");
    }
    if (!j.contains("eki")) throw ConfigError("config needs an 'eki' block");
    c.eki = detail::parse_eki(j.at("eki"), "eki");

    if (j.contains("validation")) {
        const auto& v = j.at("validation");
        detail::check_keys(v, "validation",
                           {"window_multiplier", "histogram_bins", "store_every"});
        c.validation.window_multiplier =
            detail::get_or<double>(v, "window_multiplier", "validation", 10.0);
        if (!(c.validation.window_multiplier > 0.0)) {
            throw ConfigError("validation.window_multiplier must be positive");
        }
        c.validation.histogram_bins = detail::get_or<int>(v, "histogram_bins", "validation", 60);
        if (c.validation.histogram_bins < 1) {
            throw ConfigError("validation.histogram_bins must be >= 1");
        }
        c.validation.store_every = detail::get_or<long>(v, "store_every", "validation", 10);
        if (c.validation.store_every < 1) {
            throw ConfigError("validation.store_every must be >= 1");
        }
    }
    if (j.contains("output")) {
        const auto& o = j.at("output");
        detail::check_keys(o, "output",
                           {"dump_trajectories", "trajectory_decimation", "history_particles"});
        c.output.dump_trajectories =
            detail::get_or<bool>(o, "dump_trajectories", "output", false);
        c.output.trajectory_decimation =
            detail::get_or<long>(o, "trajectory_decimation", "output", 100);
        if (c.output.trajectory_decimation < 1) {
            throw ConfigError("output.trajectory_decimation must be >= 1");
        }
        c.output.history_particles =
            detail::get_or<bool>(o, "history_particles", "output", true);
    }
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    Json j;
    try {
        j = read_json_file(path);
    } catch (const DataFileError& e) {
        throw ConfigError(e.what());
    }
    return parse_experiment_config(j);
}

namespace detail {

// Smallest window (in time units) that still supports every requested
// statistic on the stored grid, with slack: 2.5x the largest lag, twice
// the minimum segment footprint for the spectral estimates, 100 samples
// for plain moments.
inline double min_supported_window(const StatisticsSpec& stats, double stored_dt) {
    double w = 100.0 * stored_dt;
    for (const auto& a : stats.acf_requests) {
        for (double lag : a.lags) w = std::max(w, 2.5 * lag);
    }
    for (const auto& p : stats.psd_requests) {
        w = std::max(w, 16.0 * static_cast<double>(p.welch_segments + 1) * stored_dt);
    }
    return w;
}

}  // namespace detail

// Shrink an experiment so it finishes in seconds while exercising every
// code path: shorter windows (held above the support floor of the
// requested statistics), fewer generations, a smaller ensemble, and a
// shorter validation run.
inline void apply_smoke_scaling(ExperimentConfig& c) {
    const double stored_dt = c.simulation.dt * static_cast<double>(c.simulation.store_every);
    const double floor_w = detail::min_supported_window(c.statistics, stored_dt);

    c.statistics.averaging_window =
        std::clamp(c.statistics.averaging_window / 50.0, floor_w, c.statistics.averaging_window);
    if (c.forward_window > 0.0) {
        c.forward_window = std::clamp(c.forward_window / 50.0, floor_w, c.forward_window);
    }
    c.statistics.burn_in = std::min(c.statistics.burn_in, std::max(5.0, c.statistics.burn_in / 10.0));

    // Keep every covariance block long enough for the statistics it must
    // evaluate.
    const auto max_batches = static_cast<int>(c.statistics.averaging_window / floor_w);
    if (max_batches < 2) {
        c.statistics.averaging_window = 2.2 * floor_w;
        c.data.gamma_batches = 2;
    } else {
        c.data.gamma_batches = std::clamp(c.data.gamma_batches, 2, std::min(10, max_batches));
    }

    c.eki.max_generations = std::min(c.eki.max_generations, 3);
    c.eki.ensemble_cap = 8;
    c.validation.window_multiplier = std::min(c.validation.window_multiplier, 2.0);
}

}  // namespace sdefit
