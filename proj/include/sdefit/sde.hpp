#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sdefit/common.hpp"
#include "sdefit/rng.hpp"

namespace sdefit {

enum class NoiseKind { None, Diagonal, Full };

// Ito diffusion dx = f(x) dt + L(x) dW. The drift writes into a caller
// supplied buffer; diffusion_diag gives the diagonal of L when the noise
// is uncorrelated across components, diffusion_full gives the dense
// matrix otherwise. Model builders capture their parameters, so the
// integrators never see them.
struct SdeModel {
    Eigen::Index dimension = 0;
    std::function<void(const Vector&, Vector&)> drift;
    NoiseKind noise_kind = NoiseKind::None;
    std::function<void(const Vector&, Vector&)> diffusion_diag;
    std::function<void(const Vector&, Matrix&)> diffusion_full;
};

// Dense L(x) regardless of how the noise is stored internally.
inline Matrix diffusion_sqrt(const SdeModel& model, const Vector& x) {
    Matrix l = Matrix::Zero(model.dimension, model.dimension);
    if (model.noise_kind == NoiseKind::Diagonal) {
        Vector d(model.dimension);
        model.diffusion_diag(x, d);
        l.diagonal() = d;
    } else if (model.noise_kind == NoiseKind::Full) {
        model.diffusion_full(x, l);
    }
    return l;
}

// Same diffusion, drift also sees the state at earlier times. The k-th
// entry of the delayed-state list corresponds to the k-th delay.
struct SddeModel {
    Eigen::Index dimension = 0;
    std::vector<double> delays;
    std::function<void(const Vector&, const std::vector<Vector>&, Vector&)> drift;
    NoiseKind noise_kind = NoiseKind::None;
    std::function<void(const Vector&, Vector&)> diffusion_diag;
};

// Second-order dynamics for a single angle:
//   dphi = v dt
//   dv   = (-damping(phi) v - potential_grad(phi)) dt + sqrt(2 sigma damping(phi)) dW
struct Langevin2Model {
    std::function<double(double)> damping;
    std::function<double(double)> potential_grad;
    double noise_scale = 0.0;  // sigma >= 0
};

namespace detail {

inline void check_step_finite(const Vector& x, long step) {
    if (!x.allFinite()) throw NonFiniteState(step);
}

inline void check_store_every(long n_steps, long store_every) {
    if (store_every < 1 || n_steps % store_every != 0) {
        throw Error("store_every must divide the step count");
    }
}

}  // namespace detail

// Euler-Maruyama. Returns n_steps/store_every + 1 rows including the
// initial state; the stored sampling interval is dt * store_every.
inline Trajectory integrate_em(const SdeModel& model, const Vector& x0, double dt,
                               long n_steps, RngStream& rng, long store_every = 1,
                               double t0 = 0.0) {
    detail::check_store_every(n_steps, store_every);
    const Eigen::Index n = model.dimension;
    if (x0.size() != n) throw LayoutMismatch("integrate_em: initial state has wrong dimension");

    Trajectory traj;
    traj.dt = dt * static_cast<double>(store_every);
    traj.t0 = t0;
    traj.samples.resize(n_steps / store_every + 1, n);
    traj.samples.row(0) = x0;

    Vector x = x0;
    Vector f(n);
    Vector noise(n);
    Matrix l;
    if (model.noise_kind == NoiseKind::Full) l.resize(n, n);
    const double sqrt_dt = std::sqrt(dt);

    for (long k = 0; k < n_steps; ++k) {
        model.drift(x, f);
        if (model.noise_kind == NoiseKind::None) {
            x += dt * f;
        } else if (model.noise_kind == NoiseKind::Diagonal) {
            model.diffusion_diag(x, noise);
            x += dt * f + sqrt_dt * noise.cwiseProduct(rng.normals(n));
        } else {
            model.diffusion_full(x, l);
            x += dt * f + sqrt_dt * (l * rng.normals(n));
        }
        detail::check_step_finite(x, k + 1);
        if ((k + 1) % store_every == 0) traj.samples.row((k + 1) / store_every) = x;
    }
    return traj;
}

// Euler-Maruyama with delays. The seed history must be a trajectory with
// the same step size whose final row is the initial condition; delayed
// states are linearly interpolated. The returned trajectory starts at the
// end of the history and does not repeat it.
inline Trajectory integrate_sdde(const SddeModel& model, const Trajectory& history, double dt,
                                 long n_steps, RngStream& rng, long store_every = 1) {
    detail::check_store_every(n_steps, store_every);
    const Eigen::Index n = model.dimension;
    if (history.dimension() != n) {
        throw LayoutMismatch("integrate_sdde: history has wrong dimension");
    }
    if (std::abs(history.dt - dt) > 1e-12 * std::max(1.0, std::abs(dt))) {
        throw Error("integrate_sdde: history step size differs from dt");
    }
    double max_delay = 0.0;
    for (double tau : model.delays) max_delay = std::max(max_delay, tau);
    const double span = history.duration();
    if (span + 1e-9 * std::max(1.0, max_delay) < max_delay) {
        throw InsufficientHistory("integrate_sdde: history spans " + std::to_string(span) +
                                  ", need " + std::to_string(max_delay));
    }

    // Rolling buffer of past states: history rows followed by new steps.
    const long h_rows = static_cast<long>(history.steps());
    std::vector<Vector> buf;
    buf.reserve(static_cast<size_t>(h_rows + n_steps));
    for (long i = 0; i < h_rows; ++i) buf.push_back(history.samples.row(i).transpose());

    Trajectory traj;
    traj.dt = dt * static_cast<double>(store_every);
    traj.t0 = history.t0 + history.duration();
    traj.samples.resize(n_steps / store_every + 1, n);
    traj.samples.row(0) = buf.back();

    auto delayed_at = [&](double steps_back) -> Vector {
        // steps_back >= 0 measured from the latest buffered state.
        const double pos = static_cast<double>(buf.size() - 1) - steps_back;
        const long lo = static_cast<long>(std::floor(pos));
        const long hi = lo + 1;
        const double w = pos - static_cast<double>(lo);
        if (lo < 0) throw InsufficientHistory("integrate_sdde: delay reaches before history");
        if (w == 0.0 || hi >= static_cast<long>(buf.size())) return buf[static_cast<size_t>(lo)];
        return (1.0 - w) * buf[static_cast<size_t>(lo)] + w * buf[static_cast<size_t>(hi)];
    };

    Vector x = buf.back();
    Vector f(n);
    Vector noise(n);
    std::vector<Vector> delayed(model.delays.size());
    const double sqrt_dt = std::sqrt(dt);

    for (long k = 0; k < n_steps; ++k) {
        for (size_t d = 0; d < model.delays.size(); ++d) {
            delayed[d] = delayed_at(model.delays[d] / dt);
        }
        model.drift(x, delayed, f);
        if (model.noise_kind == NoiseKind::None) {
            x += dt * f;
        } else {
            model.diffusion_diag(x, noise);
            x += dt * f + sqrt_dt * noise.cwiseProduct(rng.normals(n));
        }
        detail::check_step_finite(x, k + 1);
        buf.push_back(x);
        if ((k + 1) % store_every == 0) traj.samples.row((k + 1) / store_every) = x;
    }
    return traj;
}

// Semi-implicit Euler for the second-order angle dynamics: the velocity
// is updated first (Euler-Maruyama), the position then uses the new
// velocity. Rows are (angle, velocity) with the angle wrapped to
// [-pi, pi) only in the stored output; the integration itself runs on
// the unwrapped angle.
inline Trajectory integrate_langevin2(const Langevin2Model& model, double phi0, double v0,
                                      double dt, long n_steps, RngStream& rng,
                                      long store_every = 1) {
    detail::check_store_every(n_steps, store_every);
    if (model.noise_scale < 0.0) throw Error("integrate_langevin2: negative noise scale");

    Trajectory traj;
    traj.dt = dt * static_cast<double>(store_every);
    traj.t0 = 0.0;
    traj.samples.resize(n_steps / store_every + 1, 2);
    traj.samples(0, 0) = wrap_angle(phi0);
    traj.samples(0, 1) = v0;

    double phi = phi0;
    double v = v0;
    const double sqrt_dt = std::sqrt(dt);

    for (long k = 0; k < n_steps; ++k) {
        const double gamma = model.damping(phi);
        if (!(gamma > 0.0) && model.noise_scale > 0.0) throw NonPositiveDamping(phi);
        if (gamma < 0.0) throw NonPositiveDamping(phi);
        v += dt * (-gamma * v - model.potential_grad(phi));
        if (model.noise_scale > 0.0) {
            v += sqrt_dt * std::sqrt(2.0 * model.noise_scale * gamma) * rng.normal();
        }
        phi += dt * v;
        if (!std::isfinite(phi) || !std::isfinite(v)) throw NonFiniteState(k + 1);
        if ((k + 1) % store_every == 0) {
            traj.samples((k + 1) / store_every, 0) = wrap_angle(phi);
            traj.samples((k + 1) / store_every, 1) = v;
        }
    }
    return traj;
}

// Constant-valued seed history for delay equations: rows_needed rows
// ending at t_end, all equal to x.
inline Trajectory constant_history(const Vector& x, double dt, long rows, double t_end = 0.0) {
    if (rows < 2) throw Error("constant_history: need at least two rows");
    Trajectory h;
    h.dt = dt;
    h.t0 = t_end - dt * static_cast<double>(rows - 1);
    h.samples.resize(rows, x.size());
    for (long i = 0; i < rows; ++i) h.samples.row(i) = x;
    return h;
}

}  // namespace sdefit
