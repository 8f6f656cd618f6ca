#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sdefit/common.hpp"
#include "sdefit/params.hpp"
#include "sdefit/rng.hpp"

namespace sdefit {

// Empirical second moments with 1/J normalization (J = ensemble size).
inline Matrix empirical_covariance(const Matrix& g_values) {
    const Eigen::Index j = g_values.rows();
    Matrix centered = g_values.rowwise() - g_values.colwise().mean();
    return centered.transpose() * centered / static_cast<double>(j);
}

inline Matrix empirical_cross_covariance(const Matrix& particles, const Matrix& g_values) {
    const Eigen::Index j = particles.rows();
    if (g_values.rows() != j) {
        throw LayoutMismatch("empirical_cross_covariance: row counts differ");
    }
    Matrix ct = particles.rowwise() - particles.colwise().mean();
    Matrix cg = g_values.rowwise() - g_values.colwise().mean();
    return ct.transpose() * cg / static_cast<double>(j);
}

// Weighted least-squares objective 0.5 * || gamma^{-1/2} (y - g) ||^2.
// Factors gamma once; reuse across members and generations.
class MisfitEvaluator {
  public:
    MisfitEvaluator(const Vector& y, const Matrix& gamma) : y_(y) {
        Matrix g = gamma;
        const double jitter = 1e-8 * g.trace() / static_cast<double>(g.rows());
        g.diagonal().array() += jitter;
        ldlt_.compute(g);
        if (ldlt_.info() != Eigen::Success) {
            throw SingularSystem("misfit: noise covariance factorization failed");
        }
    }

    double operator()(const Vector& g) const {
        Vector r = y_ - g;
        return 0.5 * r.dot(ldlt_.solve(r));
    }

  private:
    Vector y_;
    Eigen::LDLT<Matrix> ldlt_;
};

// One ensemble Kalman update. y_members holds the observation each member
// is matched against (one row per member; identical rows when observation
// perturbation is off). Every particle moves within the span of the
// current ensemble because the increment is a linear combination of the
// centered particles.
inline Matrix eki_step(const Matrix& particles, const Matrix& g_values,
                       const Matrix& y_members, const Matrix& gamma) {
    const Eigen::Index j = particles.rows();
    const Eigen::Index d = g_values.cols();
    if (g_values.rows() != j || y_members.rows() != j || y_members.cols() != d ||
        gamma.rows() != d || gamma.cols() != d) {
        throw LayoutMismatch("eki_step: inconsistent shapes");
    }

    Matrix c_gg = empirical_covariance(g_values);
    Matrix c_tg = empirical_cross_covariance(particles, g_values);

    Matrix s = c_gg + gamma;
    const double jitter = 1e-8 * s.trace() / static_cast<double>(d);
    s.diagonal().array() += jitter;

    Eigen::LDLT<Matrix> ldlt(s);
    if (ldlt.info() != Eigen::Success) {
        throw SingularSystem("eki_step: update system factorization failed");
    }
    Matrix residuals = (y_members - g_values).transpose();  // d x J
    Matrix solved = ldlt.solve(residuals);                  // d x J
    if (!solved.allFinite()) {
        throw SingularSystem("eki_step: update solve produced non-finite values");
    }
    return particles + (c_tg * solved).transpose();
}

using ForwardMap = std::function<Vector(const Vector&, RngStream&)>;

struct InverseProblem {
    ForwardMap forward;
    Vector y;
    Matrix gamma;
};

struct EkiOptions {
    int max_generations = 30;
    bool perturb_observations = true;
    std::optional<double> misfit_stop;  // on the ensemble-mean forward value
    int eval_budget = 0;                // 0 = hardware concurrency
    uint64_t master_seed = 0;
    // Scale the observation covariance per generation by
    // max(1, misfit / data_dim). Far from the data this tempers the
    // update so a single step cannot fling the ensemble out of the
    // plausible region; once the misfit is near the statistical floor
    // the factor is 1 and the update is the plain one.
    bool adaptive_inflation = false;
};

struct GenerationRecord {
    int generation = 0;
    double misfit_mean_g = 0.0;    // misfit of the ensemble-mean forward value
    double misfit_member_avg = 0.0;
    int failed_members = 0;
    double noise_scale = 1.0;  // observation-covariance factor used for the update
    Matrix particles;  // ensemble at evaluation time
    Matrix g_values;
};

struct EkiResult {
    std::vector<GenerationRecord> generations;
    Matrix final_particles;
    bool stopped_early = false;
};

namespace detail {

// Evaluate the forward map on every member. Members draw from disjoint
// streams keyed by (generation, index), so the result is identical for
// any eval budget or thread schedule.
inline void evaluate_ensemble(const InverseProblem& problem, const Matrix& particles,
                              int generation, uint64_t master_seed, int budget,
                              Matrix& g_values, std::vector<char>& ok,
                              std::string* last_error = nullptr) {
    const Eigen::Index j_ens = particles.rows();
    const Eigen::Index d = problem.y.size();
    g_values.resize(j_ens, d);
    ok.assign(static_cast<size_t>(j_ens), 0);
    std::mutex error_mutex;

    auto eval_one = [&](Eigen::Index j) {
        try {
            RngStream rng(master_seed,
                          streams::member(static_cast<uint64_t>(generation),
                                          static_cast<uint64_t>(j)));
            Vector g = problem.forward(particles.row(j).transpose(), rng);
            if (g.size() != d) throw ForwardFailed("forward map returned wrong dimension");
            if (!g.allFinite()) throw ForwardFailed("forward map returned non-finite values");
            g_values.row(j) = g.transpose();
            ok[static_cast<size_t>(j)] = 1;
        } catch (const std::exception& e) {
            ok[static_cast<size_t>(j)] = 0;
            if (last_error != nullptr) {
                const std::lock_guard<std::mutex> lock(error_mutex);
                *last_error = e.what();
            }
        }
    };

    int threads = budget > 0 ? budget : static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    threads = static_cast<int>(std::min<Eigen::Index>(threads, j_ens));

    if (threads == 1) {
        for (Eigen::Index j = 0; j < j_ens; ++j) eval_one(j);
    } else {
        std::atomic<Eigen::Index> next(0);
        std::vector<std::thread> pool;
        pool.reserve(static_cast<size_t>(threads));
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&]() {
                for (;;) {
                    const Eigen::Index j = next.fetch_add(1);
                    if (j >= j_ens) return;
                    eval_one(j);
                }
            });
        }
        for (auto& th : pool) th.join();
    }
}

// Failed members inherit the forward value of the worst successful one,
// which pushes the next update away from the failing region.
inline int apply_failure_policy(Matrix& g_values, const std::vector<char>& ok,
                                const MisfitEvaluator& misfit,
                                const std::string& last_error = "") {
    const Eigen::Index j_ens = g_values.rows();
    Eigen::Index worst = -1;
    double worst_misfit = -1.0;
    int failed = 0;
    for (Eigen::Index j = 0; j < j_ens; ++j) {
        if (!ok[static_cast<size_t>(j)]) {
            ++failed;
            continue;
        }
        const double m = misfit(g_values.row(j).transpose());
        if (m > worst_misfit) {
            worst_misfit = m;
            worst = j;
        }
    }
    if (failed == 0) return 0;
    if (worst < 0) {
        std::string msg = "every ensemble member failed to evaluate";
        if (!last_error.empty()) msg += " (last error: " + last_error + ")";
        throw AllMembersFailed(msg);
    }
    for (Eigen::Index j = 0; j < j_ens; ++j) {
        if (!ok[static_cast<size_t>(j)]) g_values.row(j) = g_values.row(worst);
    }
    return failed;
}

}  // namespace detail

inline EkiResult run_eki(const InverseProblem& problem, const Matrix& initial_ensemble,
                         const EkiOptions& opts) {
    const Eigen::Index j_ens = initial_ensemble.rows();
    const Eigen::Index d = problem.y.size();
    if (j_ens < 2) throw Error("run_eki: need at least two ensemble members");
    if (problem.gamma.rows() != d || problem.gamma.cols() != d) {
        throw LayoutMismatch("run_eki: noise covariance shape does not match data");
    }

    MisfitEvaluator misfit(problem.y, problem.gamma);

    // Observation perturbations use the Cholesky factor of the (jittered)
    // noise covariance.
    Matrix gamma_j = problem.gamma;
    gamma_j.diagonal().array() += 1e-8 * problem.gamma.trace() / static_cast<double>(d);
    Eigen::LLT<Matrix> chol;
    if (opts.perturb_observations) {
        chol.compute(gamma_j);
        if (chol.info() != Eigen::Success) {
            throw SingularSystem("run_eki: noise covariance is not positive definite");
        }
    }

    EkiResult result;
    Matrix particles = initial_ensemble;
    Matrix g_values;
    std::vector<char> ok;

    for (int gen = 0; gen < opts.max_generations; ++gen) {
        std::string last_error;
        detail::evaluate_ensemble(problem, particles, gen, opts.master_seed, opts.eval_budget,
                                  g_values, ok, &last_error);
        GenerationRecord rec;
        rec.generation = gen;
        rec.failed_members = detail::apply_failure_policy(g_values, ok, misfit, last_error);
        rec.particles = particles;
        rec.g_values = g_values;
        rec.misfit_mean_g = misfit(g_values.colwise().mean().transpose());
        double acc = 0.0;
        for (Eigen::Index j = 0; j < j_ens; ++j) acc += misfit(g_values.row(j).transpose());
        rec.misfit_member_avg = acc / static_cast<double>(j_ens);
        const double alpha =
            opts.adaptive_inflation
                ? std::max(1.0, rec.misfit_mean_g / static_cast<double>(d))
                : 1.0;
        rec.noise_scale = alpha;
        result.generations.push_back(std::move(rec));

        if (opts.misfit_stop && result.generations.back().misfit_mean_g <= *opts.misfit_stop) {
            result.stopped_early = true;
            result.final_particles = particles;
            return result;
        }

        Matrix y_members(j_ens, d);
        if (opts.perturb_observations) {
            const double scale = std::sqrt(alpha);
            for (Eigen::Index j = 0; j < j_ens; ++j) {
                RngStream rng(opts.master_seed,
                              streams::perturbation(static_cast<uint64_t>(gen),
                                                    static_cast<uint64_t>(j)));
                Vector pert = chol.matrixL() * rng.normals(d);
                y_members.row(j) = (problem.y + scale * pert).transpose();
            }
        } else {
            y_members = problem.y.transpose().replicate(j_ens, 1);
        }
        particles = eki_step(particles, g_values, y_members, alpha * gamma_j);
    }

    result.final_particles = particles;
    return result;
}

// Initial-ensemble sampling. Ranges are given in natural units and mapped
// through the block's transform, so the ensemble is i.i.d. per coordinate
// in the unconstrained space the updates act on.
struct PriorSpec {
    enum class Kind { Uniform, Normal, Point } kind = Kind::Uniform;
    double a = 0.0;  // lower bound / mean (natural units)
    double b = 1.0;  // upper bound / standard deviation (sd in transformed units)
};

inline Matrix sample_initial_ensemble(const ParameterLayout& layout,
                                      const std::map<std::string, PriorSpec>& priors,
                                      Eigen::Index j_ens, RngStream& rng) {
    const Eigen::Index p = layout.total_size();
    Matrix ensemble(j_ens, p);
    Eigen::Index off = 0;
    for (const auto& entry : layout.entries()) {
        auto it = priors.find(entry.name);
        if (it == priors.end()) {
            throw ConfigError("no prior given for parameter block '" + entry.name + "'");
        }
        const PriorSpec& spec = it->second;
        for (Eigen::Index i = 0; i < entry.size; ++i) {
            for (Eigen::Index j = 0; j < j_ens; ++j) {
                double u = 0.0;
                switch (spec.kind) {
                    case PriorSpec::Kind::Uniform: {
                        const double lo = to_unconstrained(spec.a, entry.transform);
                        const double hi = to_unconstrained(spec.b, entry.transform);
                        if (hi < lo) {
                            throw ConfigError("prior for '" + entry.name +
                                              "' has inverted range");
                        }
                        u = lo + (hi - lo) * rng.uniform();
                        break;
                    }
                    case PriorSpec::Kind::Normal:
                        u = to_unconstrained(spec.a, entry.transform) + spec.b * rng.normal();
                        break;
                    case PriorSpec::Kind::Point:
                        u = to_unconstrained(spec.a, entry.transform);
                        break;
                }
                ensemble(j, off + i) = u;
            }
        }
        off += entry.size;
    }
    return ensemble;
}

}  // namespace sdefit
