#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sdefit/config.hpp"
#include "sdefit/eki.hpp"
#include "sdefit/gp.hpp"
#include "sdefit/io.hpp"
#include "sdefit/models.hpp"
#include "sdefit/params.hpp"
#include "sdefit/rng.hpp"
#include "sdefit/sde.hpp"
#include "sdefit/statistics.hpp"

namespace sdefit {

enum class ModelKind { Sde, Sdde, Langevin2 };

struct BuiltModel {
    ModelKind kind = ModelKind::Sde;
    SdeModel sde;
    SddeModel sdde;
    Langevin2Model langevin;
    Eigen::Index dimension = 0;
};

namespace registry {

// One unknown-function slot of a model: its name, which state component
// feeds it (1-based; -1 pools every shared component, 0 means the
// periodic angle domain), and the parameterization used when the config
// does not choose one.
struct SlotInfo {
    std::string name;
    int input_component = 1;
    std::string default_kind = "gp";
};

struct ModelInfo {
    ModelKind kind = ModelKind::Sde;
    std::map<std::string, double> default_constants;
    std::set<std::string> positive_constants;  // log-transformed when learned
    std::set<std::string> fixed_constants;     // never learnable (sizes, delays)
    std::vector<SlotInfo> slots;
    std::function<Eigen::Index(const std::map<std::string, double>&)> dimension;
};

inline int int_constant(const std::map<std::string, double>& c, const std::string& name) {
    return static_cast<int>(std::llround(c.at(name)));
}

inline const std::map<std::string, ModelInfo>& model_table() {
    static const std::map<std::string, ModelInfo> table = [] {
        std::map<std::string, ModelInfo> t;

        ModelInfo l63;
        l63.kind = ModelKind::Sde;
        l63.default_constants = {{"alpha", 10.0}, {"rho", 28.0}, {"beta", 8.0 / 3.0},
                                 {"sigma", 10.0}};
        l63.positive_constants = {"alpha", "rho", "beta", "sigma"};
        l63.slots = {{"feedback", 2, "fixed_identity"}};
        l63.dimension = [](const auto&) { return Eigen::Index(3); };
        t["lorenz63"] = l63;

        ModelInfo pca3;
        pca3.kind = ModelKind::Sde;
        pca3.dimension = [](const auto&) { return Eigen::Index(3); };
        t["lorenz63_pca3"] = pca3;

        ModelInfo pca2;
        pca2.kind = ModelKind::Sde;
        pca2.slots = {{"psi1", 2, "gp"}, {"psi2", 1, "gp"}, {"s1", 2, "gp"}, {"s2", 1, "gp"}};
        pca2.dimension = [](const auto&) { return Eigen::Index(2); };
        t["lorenz63_pca_reduced"] = pca2;

        ModelInfo l96m;
        l96m.kind = ModelKind::Sde;
        l96m.default_constants = {{"k_slow", 36.0}, {"j_fast", 10.0}, {"h", 1.0},
                                  {"f", 10.0},     {"c", 10.0},      {"b", 10.0}};
        l96m.positive_constants = {"h", "f", "c", "b"};
        l96m.fixed_constants = {"k_slow", "j_fast"};
        l96m.dimension = [](const auto& c) {
            const auto k = int_constant(c, "k_slow");
            const auto j = int_constant(c, "j_fast");
            return static_cast<Eigen::Index>(k + k * j);
        };
        t["lorenz96_multiscale"] = l96m;

        ModelInfo l96c;
        l96c.kind = ModelKind::Sde;
        l96c.default_constants = {{"k_slow", 36.0}, {"j_fast", 10.0}, {"h", 1.0},
                                  {"f", 10.0},     {"c", 10.0},      {"sigma", 1.0}};
        l96c.positive_constants = {"h", "f", "c", "sigma"};
        l96c.fixed_constants = {"k_slow", "j_fast"};
        l96c.slots = {{"psi", -1, "gp"}};
        l96c.dimension = [](const auto& c) {
            return static_cast<Eigen::Index>(int_constant(c, "k_slow"));
        };
        t["lorenz96_closure"] = l96c;

        ModelInfo enso;
        enso.kind = ModelKind::Sdde;
        enso.default_constants = {{"a", 1.0},     {"b", 1.0},    {"c", 1.0},
                                  {"sigma", 0.1}, {"tau1", 1.0}, {"tau2", 6.0}};
        enso.positive_constants = {"a", "b", "c", "sigma"};
        enso.fixed_constants = {"tau1", "tau2"};
        enso.dimension = [](const auto&) { return Eigen::Index(1); };
        t["enso_sdde"] = enso;

        ModelInfo butane;
        butane.kind = ModelKind::Langevin2;
        butane.default_constants = {{"gamma", 1.0}, {"sigma", 0.5}};
        butane.positive_constants = {"gamma", "sigma"};
        butane.slots = {{"potential", 0, "gaussian_basis"}};
        butane.dimension = [](const auto&) { return Eigen::Index(2); };
        t["butane_langevin"] = butane;

        return t;
    }();
    return table;
}

inline const ModelInfo& model_info(const std::string& name) {
    const auto& t = model_table();
    const auto it = t.find(name);
    if (it == t.end()) {
        std::string known;
        for (const auto& [k, v] : t) known += (known.empty() ? "" : ", ") + k;
        throw ConfigError("unknown model '" + name + "' (known: " + known + ")");
    }
    return it->second;
}

}  // namespace registry

namespace detail {

inline std::map<std::string, double> resolve_constants(
    const ModelConfig& mc, const registry::ModelInfo& info,
    const std::map<std::string, double>& overrides) {
    std::map<std::string, double> c = info.default_constants;
    for (const auto& [k, v] : mc.constants) {
        if (!c.count(k)) {
            throw ConfigError("model '" + mc.name + "' has no constant '" + k + "'");
        }
        c[k] = v;
    }
    for (const auto& [k, v] : overrides) {
        if (!c.count(k)) {
            throw ConfigError("model '" + mc.name + "' has no constant '" + k + "'");
        }
        c[k] = v;
    }
    return c;
}

// A function slot with everything needed to materialize it from a flat
// parameter vector: the registry entry, the resolved config, and the
// node/center grid.
struct SlotRuntime {
    registry::SlotInfo info;
    FunctionConfig cfg;
    Vector grid;
};

inline std::vector<SlotRuntime> resolve_slots(const ModelConfig& mc,
                                              const registry::ModelInfo& info) {
    for (const auto& [name, fc] : mc.functions) {
        bool known = false;
        for (const auto& s : info.slots) known = known || s.name == name;
        if (!known) {
            throw ConfigError("model '" + mc.name + "' has no function slot '" + name + "'");
        }
        (void)fc;
    }
    std::vector<SlotRuntime> out;
    for (const auto& s : info.slots) {
        SlotRuntime rt;
        rt.info = s;
        rt.cfg.kind = s.default_kind;
        for (const auto& [name, fc] : mc.functions) {
            if (name == s.name) rt.cfg = fc;
        }
        out.push_back(std::move(rt));
    }
    return out;
}

inline bool slot_is_learned(const SlotRuntime& s) {
    return s.cfg.kind == "gp" || s.cfg.kind == "gaussian_basis";
}

inline ParameterLayout build_layout(const ModelConfig& mc, const registry::ModelInfo& info,
                                    const std::vector<SlotRuntime>& slots,
                                    const std::map<std::string, PriorConfig>& priors) {
    ParameterLayout layout;
    std::set<std::string> seen;
    for (const auto& name : mc.learn) {
        if (!info.default_constants.count(name)) {
            throw ConfigError("cannot learn '" + name + "': model '" + mc.name +
                              "' has no such constant");
        }
        if (info.fixed_constants.count(name)) {
            throw ConfigError("constant '" + name + "' is structural and cannot be learned");
        }
        if (!seen.insert(name).second) {
            throw ConfigError("constant '" + name + "' is listed twice in model.learn");
        }
        Transform t = info.positive_constants.count(name) ? Transform::Log : Transform::Identity;
        const auto it = priors.find(name);
        if (it != priors.end() && it->second.transform_given) t = it->second.transform;
        layout.add(name, 1, t);
    }
    for (const auto& s : slots) {
        if (s.cfg.kind == "gp") {
            layout.add(s.info.name + ".values", s.cfg.nodes, Transform::Identity);
            layout.add(s.info.name + ".lambda", 1, Transform::Log);
            layout.add(s.info.name + ".sigma", 1, Transform::Log);
            layout.add(s.info.name + ".ell", 1, Transform::Log);
        } else if (s.cfg.kind == "gaussian_basis") {
            layout.add(s.info.name + ".weights", s.cfg.centers, Transform::Identity);
        }
    }
    return layout;
}

// Node grids. Unspecified intervals come from the span the training data
// actually visits, padded by 10%; the angle domain is fixed.
inline void assign_grids(std::vector<SlotRuntime>& slots, const Trajectory& truth,
                         double burn_in, Eigen::Index shared_components) {
    const Eigen::Index start = window_start(truth, burn_in);
    for (auto& s : slots) {
        if (s.cfg.kind == "gaussian_basis" || s.cfg.kind == "fixed_basis" ||
        s.info.input_component == 0) {
            s.grid = periodic_angle_centers(s.cfg.centers);
            continue;
        }
        if (s.cfg.kind != "gp") continue;
        double lo = s.cfg.lo, hi = s.cfg.hi;
        if (!s.cfg.has_interval) {
            if (s.info.input_component > 0) {
                if (s.info.input_component > truth.dimension()) {
                    throw ConfigError("function slot '" + s.info.name +
                                      "' reads component " +
                                      std::to_string(s.info.input_component) +
                                      " but the training data has fewer");
                }
                const auto col = truth.samples.col(s.info.input_component - 1)
                                     .segment(start, truth.steps() - start);
                lo = col.minCoeff();
                hi = col.maxCoeff();
            } else {
                const auto block = truth.samples
                                       .block(start, 0, truth.steps() - start,
                                              std::min(shared_components, truth.dimension()));
                lo = block.minCoeff();
                hi = block.maxCoeff();
            }
            const double pad = 0.1 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        if (!(hi > lo)) throw ConfigError("degenerate node interval for '" + s.info.name + "'");
        s.grid = equispaced_nodes(lo, hi, s.cfg.nodes);
    }
}

inline ScalarFunction materialize_slot(const SlotRuntime& s, const ParameterLayout& layout,
                                       const Vector& theta) {
    if (s.cfg.kind == "fixed_identity") {
        return ScalarFunction{[](double v) { return v; }, [](double) { return 1.0; }};
    }
    if (s.cfg.kind == "fixed_zero") {
        return ScalarFunction{[](double) { return 0.0; }, [](double) { return 0.0; }};
    }
    if (s.cfg.kind == "fixed_basis") {
        GaussianBasisFunction b;
        b.centers = s.grid;
        b.width = s.cfg.width;
        b.weights = Eigen::Map<const Vector>(s.cfg.weights.data(),
                                             static_cast<Eigen::Index>(s.cfg.weights.size()));
        return make_scalar_function(b);
    }
    if (s.cfg.kind == "gp") {
        GpMeanFunction f;
        f.nodes = s.grid;
        f.node_values = layout.unpack(s.info.name + ".values", theta);
        f.obs_error = layout.unpack_scalar(s.info.name + ".lambda", theta);
        f.amplitude = layout.unpack_scalar(s.info.name + ".sigma", theta);
        f.length_scale = layout.unpack_scalar(s.info.name + ".ell", theta);
        return make_scalar_function(f);
    }
    GaussianBasisFunction b;
    b.centers = s.grid;
    b.width = s.cfg.width;
    b.weights = layout.unpack(s.info.name + ".weights", theta);
    return make_scalar_function(b);
}

inline BuiltModel build_model(const std::string& name,
                              const std::map<std::string, double>& c,
                              const std::map<std::string, ScalarFunction>& fn) {
    BuiltModel bm;
    const auto& info = registry::model_info(name);
    bm.kind = info.kind;
    bm.dimension = info.dimension(c);
    if (name == "lorenz63") {
        bm.sde = lorenz63_noisy(c.at("alpha"), c.at("rho"), c.at("beta"), c.at("sigma"),
                                fn.at("feedback"));
    } else if (name == "lorenz63_pca3") {
        bm.sde = lorenz63_pca3();
    } else if (name == "lorenz63_pca_reduced") {
        bm.sde = lorenz63_pca_reduced(fn.at("psi1"), fn.at("psi2"), fn.at("s1"), fn.at("s2"));
    } else if (name == "lorenz96_multiscale") {
        bm.sde = lorenz96_multiscale(registry::int_constant(c, "k_slow"),
                                     registry::int_constant(c, "j_fast"), c.at("h"), c.at("f"),
                                     c.at("c"), c.at("b"));
    } else if (name == "lorenz96_closure") {
        bm.sde = lorenz96_closure(registry::int_constant(c, "k_slow"),
                                  registry::int_constant(c, "j_fast"), c.at("h"), c.at("f"),
                                  c.at("c"), c.at("sigma"), fn.at("psi"));
    } else if (name == "enso_sdde") {
        bm.sdde = enso_sdde(c.at("a"), c.at("b"), c.at("c"), c.at("sigma"), c.at("tau1"),
                            c.at("tau2"));
    } else {
        bm.langevin = butane_reduced(c.at("gamma"), c.at("sigma"), fn.at("potential"));
    }
    return bm;
}

inline Vector default_initial_state(const std::string& name,
                                    const std::map<std::string, double>& c, RngStream& rng) {
    if (name == "lorenz63") {
        Vector x(3);
        x << 1.0, 1.0, 1.0;
        return x;
    }
    if (name == "lorenz63_pca3") {
        Vector x(3);
        x << 1.0, -10.0, 1.0;
        return x;
    }
    if (name == "lorenz63_pca_reduced") return Vector::Zero(2);
    if (name == "lorenz96_multiscale") {
        return lorenz96_initial_state(registry::int_constant(c, "k_slow"),
                                      registry::int_constant(c, "j_fast"), c.at("h"), c.at("f"),
                                      c.at("c"), rng);
    }
    if (name == "lorenz96_closure") {
        const auto k = registry::int_constant(c, "k_slow");
        const double balance =
            lorenz96_balance_point(c.at("h"), c.at("f"), c.at("c"),
                                   registry::int_constant(c, "j_fast"));
        return Vector::Constant(k, balance) + 0.1 * rng.normals(k);
    }
    if (name == "enso_sdde") return Vector::Constant(1, 0.1);
    Vector x(2);
    x << 0.5, 0.0;
    return x;
}

inline Trajectory simulate_built(const BuiltModel& bm, const Vector& x0, double dt,
                                 double duration, long store_every, RngStream& rng) {
    const double stored_dt = dt * static_cast<double>(store_every);
    const long stored = static_cast<long>(std::ceil(duration / stored_dt - 1e-9));
    const long n_steps = std::max<long>(stored, 1) * store_every;
    switch (bm.kind) {
        case ModelKind::Sde:
            return integrate_em(bm.sde, x0, dt, n_steps, rng, store_every);
        case ModelKind::Sdde: {
            double max_delay = 0.0;
            for (double tau : bm.sdde.delays) max_delay = std::max(max_delay, tau);
            const long rows = static_cast<long>(std::ceil(max_delay / dt)) + 2;
            const Trajectory hist = constant_history(x0, dt, rows);
            return integrate_sdde(bm.sdde, hist, dt, n_steps, rng, store_every);
        }
        case ModelKind::Langevin2:
        default:
            if (x0.size() != 2) {
                throw ConfigError("second-order models need initial_state = [angle, velocity]");
            }
            return integrate_langevin2(bm.langevin, x0[0], x0[1], dt, n_steps, rng, store_every);
    }
}

// Autocorrelation of one component on its own stored time grid, written
// as (lag, value) rows for plotting.
inline void write_acf_curve(const std::string& path, const Trajectory& traj, int component,
                            double burn_in) {
    const Eigen::Index start = detail::window_start(traj, burn_in);
    const Eigen::Index len = traj.steps() - start;
    const Eigen::Index max_lag_samples = std::max<Eigen::Index>(1, len / 10);
    const Eigen::Index n_points = std::min<Eigen::Index>(200, max_lag_samples);
    const Eigen::Index step = std::max<Eigen::Index>(1, max_lag_samples / n_points);
    std::vector<double> lags;
    for (Eigen::Index k = 1; k * step <= max_lag_samples && k <= n_points; ++k) {
        lags.push_back(static_cast<double>(k * step) * traj.dt);
    }
    Vector acf;
    try {
        acf = compute_acf(traj, component, lags, burn_in);
    } catch (const Error&) {
        lags.clear();
    }
    auto out = detail::open_out(path);
    out << "lag,acf\n";
    for (std::size_t i = 0; i < lags.size(); ++i) {
        out << detail::format_cell(lags[i]) << "," << detail::format_cell(acf[i]) << "\n";
    }
}

}  // namespace detail

struct ExperimentSummary {
    std::string name;
    Eigen::Index parameter_count = 0;
    Eigen::Index data_dimension = 0;
    int ensemble_size = 0;
    int generations = 0;
    bool stopped_early = false;
    double misfit_initial = 0.0;
    double misfit_final = 0.0;
    double misfit_at_mean = 0.0;
    std::vector<double> tv_per_component;
    double tv_pooled = 0.0;  // all shared components folded into one histogram pair
    std::map<std::string, double> scalar_estimates;  // learned constants, natural units
    Matrix final_particles;
    ParameterLayout layout;
};

namespace detail {

// Data stage: either simulate the configured truth system or ingest a
// measured series; assemble the statistic vector and its noise
// covariance from it.
struct DataStage {
    Trajectory truth;
    DataVector dv;
    StatisticsSpec stats;  // possibly with the window rewritten to the data span
};

inline DataStage make_data_stage(const ExperimentConfig& cfg, uint64_t master_seed,
                                 bool with_data) {
    DataStage out;
    out.stats = cfg.statistics;
    if (cfg.data.source == "file" && with_data) {
        const auto& f = *cfg.data.file;
        out.truth = ingest_timeseries(f.path, f.column, f.sampling_interval, f.mean_center);
        const double span = out.truth.duration() - cfg.statistics.burn_in;
        if (span <= 0.0) {
            throw DataFileError("series in " + f.path + " is shorter than the burn-in");
        }
        out.stats.averaging_window = span;
    } else {
        const ModelConfig& dm = cfg.data.model ? *cfg.data.model : cfg.model;
        const auto& info = registry::model_info(dm.name);
        const auto constants = resolve_constants(dm, info, cfg.data.truth);
        auto slots = resolve_slots(dm, info);
        for (const auto& s : slots) {
            if (slot_is_learned(s)) {
                throw ConfigError("data model function slot '" + s.info.name +
                                  "' must be a fixed kind, got '" + s.cfg.kind + "'");
            }
        }
        for (auto& s : slots) {
            if (s.cfg.kind == "fixed_basis") s.grid = periodic_angle_centers(s.cfg.centers);
        }
        std::map<std::string, ScalarFunction> fns;
        ParameterLayout empty;
        for (const auto& s : slots) {
            fns[s.info.name] = materialize_slot(s, empty, Vector());
        }
        const BuiltModel bm = build_model(dm.name, constants, fns);
        const SimulationConfig sim = cfg.data.simulation ? *cfg.data.simulation : cfg.simulation;
        RngStream rng(master_seed, streams::kData);
        Vector x0;
        if (!sim.initial_state.empty()) {
            x0 = Eigen::Map<const Vector>(sim.initial_state.data(),
                                          static_cast<Eigen::Index>(sim.initial_state.size()));
            if (x0.size() != bm.dimension &&
                !(bm.kind == ModelKind::Langevin2 && x0.size() == 2)) {
                throw ConfigError("data initial_state has wrong dimension");
            }
        } else {
            x0 = default_initial_state(dm.name, constants, rng);
        }
        const double duration = cfg.statistics.burn_in + cfg.statistics.averaging_window;
        out.truth = simulate_built(bm, x0, sim.dt, duration, sim.store_every, rng);
    }
    out.dv = assemble_data(out.truth, out.stats);
    {
        // Each covariance block must be long enough to support every
        // requested statistic, same floor the smoke scaling enforces.
        const Eigen::Index start = window_start(out.truth, out.stats.burn_in);
        const Eigen::Index len = out.truth.steps() - start;
        const Eigen::Index block = len / cfg.data.gamma_batches;
        const double floor_w = detail::min_supported_window(out.stats, out.truth.dt);
        if (static_cast<double>(block) * out.truth.dt < floor_w) {
            throw ConfigError("gamma_batches " + std::to_string(cfg.data.gamma_batches) +
                              " gives covariance blocks of " +
                              std::to_string(static_cast<double>(block) * out.truth.dt) +
                              " time units; the requested statistics need at least " +
                              std::to_string(floor_w) + ", use fewer batches or a longer window");
        }
    }
    out.dv.gamma = estimate_gamma(out.truth, out.stats, cfg.data.gamma_batches);
    if (cfg.data.gamma_mode == "diagonal") {
        out.dv.gamma = Matrix(out.dv.gamma.diagonal().asDiagonal());
    }
    return out;
}

}  // namespace detail

inline ExperimentSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                                        uint64_t master_seed, bool with_data, bool smoke) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto path = [&](const std::string& f) { return (fs::path(out_dir) / f).string(); };

    const auto& info = registry::model_info(cfg.model.name);
    const auto base_constants = detail::resolve_constants(cfg.model, info, {});
    auto slots = detail::resolve_slots(cfg.model, info);

    // ---- data ----
    auto data = detail::make_data_stage(cfg, master_seed, with_data);
    write_data_vector_json(path("data_vector.json"), data.dv);
    if (cfg.output.dump_trajectories) {
        write_trajectory_csv(path("truth_trajectory.csv"), data.truth,
                             cfg.output.trajectory_decimation);
    }

    const Eigen::Index fit_dim = info.dimension(base_constants);
    const Eigen::Index shared = std::min(fit_dim, data.truth.dimension());
    detail::assign_grids(slots, data.truth, data.stats.burn_in, shared);

    // ---- parameter space ----
    ParameterLayout layout = detail::build_layout(cfg.model, info, slots, cfg.eki.priors);
    const Eigen::Index p = layout.total_size();
    if (p == 0) throw ConfigError("nothing to learn: empty parameter layout");
    for (const auto& [name, pc] : cfg.eki.priors) {
        if (!layout.has(name)) {
            throw ConfigError("prior given for unknown parameter block '" + name + "'");
        }
        (void)pc;
    }
    std::map<std::string, PriorSpec> prior_specs;
    for (const auto& [name, pc] : cfg.eki.priors) prior_specs[name] = pc.spec;

    int j_ens = cfg.eki.ensemble_size > 0 ? cfg.eki.ensemble_size
                                          : static_cast<int>(std::max<Eigen::Index>(10, 2 * p));
    if (cfg.eki.ensemble_cap > 0) j_ens = std::min(j_ens, cfg.eki.ensemble_cap);

    RngStream init_rng(master_seed, streams::kInitialEnsemble);
    const Matrix init = sample_initial_ensemble(layout, prior_specs, j_ens, init_rng);

    // ---- inverse problem ----
    StatisticsSpec forward_stats = data.stats;
    if (cfg.forward_window > 0.0) forward_stats.averaging_window = cfg.forward_window;
    const double forward_duration = forward_stats.burn_in + forward_stats.averaging_window;

    const std::string model_name = cfg.model.name;
    const SimulationConfig sim = cfg.simulation;
    const std::vector<std::string> learned = cfg.model.learn;
    const auto slots_c = slots;

    auto forward = [=](const Vector& theta, RngStream& rng) -> Vector {
        auto constants = base_constants;
        for (const auto& name : learned) constants[name] = layout.unpack_scalar(name, theta);
        std::map<std::string, ScalarFunction> fns;
        for (const auto& s : slots_c) fns[s.info.name] = detail::materialize_slot(s, layout, theta);
        const BuiltModel bm = detail::build_model(model_name, constants, fns);
        Vector x0;
        if (!sim.initial_state.empty()) {
            x0 = Eigen::Map<const Vector>(sim.initial_state.data(),
                                          static_cast<Eigen::Index>(sim.initial_state.size()));
        } else {
            x0 = detail::default_initial_state(model_name, constants, rng);
        }
        const Trajectory traj =
            detail::simulate_built(bm, x0, sim.dt, forward_duration, sim.store_every, rng);
        return assemble_data(traj, forward_stats).values;
    };

    InverseProblem problem;
    problem.forward = forward;
    problem.y = data.dv.values;
    problem.gamma = data.dv.gamma;

    EkiOptions opts;
    opts.max_generations = cfg.eki.max_generations;
    opts.perturb_observations = cfg.eki.perturb_observations;
    opts.adaptive_inflation = cfg.eki.adaptive_inflation;
    opts.misfit_stop = cfg.eki.misfit_stop;
    opts.eval_budget = cfg.eki.eval_budget;
    opts.master_seed = master_seed;

    const EkiResult result = run_eki(problem, init, opts);
    write_history_jsonl(path("history.jsonl"), result, cfg.output.history_particles);
    write_ensemble_csv(path("ensemble_final.csv"), result.final_particles, layout);

    // ---- validation at the ensemble mean ----
    const Vector theta_mean = result.final_particles.colwise().mean().transpose();
    auto constants = base_constants;
    for (const auto& name : learned) {
        constants[name] = layout.unpack_scalar(name, theta_mean);
    }
    std::map<std::string, ScalarFunction> fns;
    for (const auto& s : slots) fns[s.info.name] = detail::materialize_slot(s, layout, theta_mean);
    const BuiltModel fitted = detail::build_model(model_name, constants, fns);

    RngStream val_rng(master_seed, streams::kValidation);
    Vector x0_val;
    if (!sim.initial_state.empty()) {
        x0_val = Eigen::Map<const Vector>(sim.initial_state.data(),
                                          static_cast<Eigen::Index>(sim.initial_state.size()));
    } else {
        x0_val = detail::default_initial_state(model_name, constants, val_rng);
    }
    const double val_duration =
        data.stats.burn_in + cfg.validation.window_multiplier * data.stats.averaging_window;
    const Trajectory val_traj = detail::simulate_built(fitted, x0_val, sim.dt, val_duration,
                                                       cfg.validation.store_every, val_rng);
    if (cfg.output.dump_trajectories) {
        write_trajectory_csv(path("fitted_trajectory.csv"), val_traj,
                             cfg.output.trajectory_decimation);
    }

    // Forward value at the mean, on the standard forward window.
    RngStream mean_rng(master_seed, streams::kValidation + 7);
    const Vector g_mean = forward(theta_mean, mean_rng);
    const MisfitEvaluator misfit(data.dv.values, data.dv.gamma);

    Json comparison;
    comparison["labels"] = data.dv.labels;
    comparison["y"] = std::vector<double>(data.dv.values.data(),
                                          data.dv.values.data() + data.dv.values.size());
    comparison["g_at_mean"] = std::vector<double>(g_mean.data(), g_mean.data() + g_mean.size());
    comparison["misfit_at_mean"] = misfit(g_mean);
    write_json_file(path("comparison.json"), comparison);

    // Stationary-density and autocorrelation comparisons per shared
    // component.
    const Eigen::Index n_shared = std::min(val_traj.dimension(), data.truth.dimension());
    const Eigen::Index truth_start = detail::window_start(data.truth, data.stats.burn_in);
    const Eigen::Index val_start = detail::window_start(val_traj, data.stats.burn_in);
    const Eigen::Index truth_len = data.truth.steps() - truth_start;
    const Eigen::Index val_len = val_traj.steps() - val_start;
    Vector truth_pool(n_shared * truth_len);
    Vector val_pool(n_shared * val_len);
    std::vector<double> tv(static_cast<std::size_t>(n_shared));
    for (Eigen::Index c = 0; c < n_shared; ++c) {
        const auto tcol = data.truth.samples.col(c).segment(truth_start,
                                                            data.truth.steps() - truth_start);
        const auto vcol = val_traj.samples.col(c).segment(val_start,
                                                          val_traj.steps() - val_start);
        truth_pool.segment(c * truth_len, truth_len) = tcol;
        val_pool.segment(c * val_len, val_len) = vcol;
        const double lo = std::min(tcol.minCoeff(), vcol.minCoeff());
        const double hi = std::max(tcol.maxCoeff(), vcol.maxCoeff());
        const Histogram ht = make_histogram(tcol, lo, hi, cfg.validation.histogram_bins);
        const Histogram hv = make_histogram(vcol, lo, hi, cfg.validation.histogram_bins);
        tv[static_cast<std::size_t>(c)] = tv_distance(ht, hv);
        const std::string suffix = "_c" + std::to_string(c + 1) + ".csv";
        write_histogram_csv(path("hist_truth" + suffix), ht);
        write_histogram_csv(path("hist_fitted" + suffix), hv);
        detail::write_acf_curve(path("acf_truth" + suffix), data.truth, static_cast<int>(c + 1),
                                data.stats.burn_in);
        detail::write_acf_curve(path("acf_fitted" + suffix), val_traj, static_cast<int>(c + 1),
                                data.stats.burn_in);
    }

    // Pooled comparison across all shared components. For spatially
    // homogeneous systems this is the natural single-density check, and
    // the larger sample count pushes the histogram sampling floor well
    // below the per-component one.
    double tv_pooled = 0.0;
    if (n_shared > 0) {
        const double lo = std::min(truth_pool.minCoeff(), val_pool.minCoeff());
        const double hi = std::max(truth_pool.maxCoeff(), val_pool.maxCoeff());
        const Histogram ht = make_histogram(truth_pool, lo, hi, cfg.validation.histogram_bins);
        const Histogram hv = make_histogram(val_pool, lo, hi, cfg.validation.histogram_bins);
        tv_pooled = tv_distance(ht, hv);
    }

    // Learned functions on their grids.
    for (const auto& s : slots) {
        if (!detail::slot_is_learned(s)) continue;
        const ScalarFunction f = fns.at(s.info.name);
        const double lo = s.grid.minCoeff();
        const double hi = s.grid.maxCoeff();
        auto out = detail::open_out(path("fitted_function_" + s.info.name + ".csv"));
        out << "x,value\n";
        for (int i = 0; i <= 200; ++i) {
            const double x = lo + (hi - lo) * i / 200.0;
            out << detail::format_cell(x) << "," << detail::format_cell(f.value(x)) << "\n";
        }
    }

    ExperimentSummary summary;
    summary.name = cfg.name;
    summary.parameter_count = p;
    summary.data_dimension = data.dv.values.size();
    summary.ensemble_size = j_ens;
    summary.generations = static_cast<int>(result.generations.size());
    summary.stopped_early = result.stopped_early;
    summary.misfit_initial = result.generations.front().misfit_mean_g;
    summary.misfit_final = result.generations.back().misfit_mean_g;
    summary.misfit_at_mean = misfit(g_mean);
    summary.tv_per_component = tv;
    summary.tv_pooled = tv_pooled;
    for (const auto& name : learned) summary.scalar_estimates[name] = constants.at(name);
    summary.final_particles = result.final_particles;
    summary.layout = layout;

    Json sj;
    sj["name"] = summary.name;
    sj["seed"] = master_seed;
    sj["smoke"] = smoke;
    sj["parameter_count"] = summary.parameter_count;
    sj["data_dimension"] = summary.data_dimension;
    sj["ensemble_size"] = summary.ensemble_size;
    sj["generations"] = summary.generations;
    sj["stopped_early"] = summary.stopped_early;
    sj["misfit_initial"] = summary.misfit_initial;
    sj["misfit_final"] = summary.misfit_final;
    sj["misfit_at_mean"] = summary.misfit_at_mean;
    sj["tv_per_component"] = summary.tv_per_component;
    sj["tv_pooled"] = summary.tv_pooled;
    Json est;
    for (const auto& [k, v] : summary.scalar_estimates) est[k] = v;
    sj["scalar_estimates"] = std::move(est);
    write_json_file(path("summary.json"), sj);
    return summary;
}

// Data stage alone: simulate (or ingest) the training series and write
// the truth trajectory with its statistic vector.
inline void run_simulate(const ExperimentConfig& cfg, const std::string& out_dir,
                         uint64_t master_seed, bool with_data) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto data = detail::make_data_stage(cfg, master_seed, with_data);
    write_trajectory_csv((fs::path(out_dir) / "truth_trajectory.csv").string(), data.truth,
                         cfg.output.trajectory_decimation);
    write_data_vector_json((fs::path(out_dir) / "data_vector.json").string(), data.dv);
}

}  // namespace sdefit
