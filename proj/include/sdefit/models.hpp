#pragma once

#include <cmath>
#include <utility>

#include "sdefit/common.hpp"
#include "sdefit/gp.hpp"
#include "sdefit/sde.hpp"

namespace sdefit {

// Chaotic 3-variable convection system with isotropic stochastic forcing
// and a replaceable feedback term in the second equation; with
// feedback(x) = x this is the classical system.
inline SdeModel lorenz63_noisy(double alpha, double rho, double beta, double sigma,
                               ScalarFunction feedback) {
    SdeModel m;
    m.dimension = 3;
    m.drift = [alpha, rho, beta, feedback = std::move(feedback)](const Vector& x, Vector& out) {
        out[0] = alpha * (x[1] - x[0]);
        out[1] = x[0] * (rho - x[2]) - feedback.value(x[1]);
        out[2] = x[0] * x[1] - beta * x[2];
    };
    if (sigma > 0.0) {
        const double s = std::sqrt(sigma);
        m.noise_kind = NoiseKind::Diagonal;
        m.diffusion_diag = [s](const Vector&, Vector& out) { out.setConstant(s); };
    }
    return m;
}

// Quadratic 3-mode system obtained by projecting the convection dynamics
// onto its leading principal components; deterministic, used to generate
// training data for the reduced model below.
inline SdeModel lorenz63_pca3() {
    SdeModel m;
    m.dimension = 3;
    m.drift = [](const Vector& a, Vector& out) {
        out[0] = 2.3 * a[0] - 6.2 * a[2] - 0.49 * a[0] * a[1] - 0.57 * a[1] * a[2];
        out[1] = -62.0 - 2.7 * a[1] + 0.49 * a[0] * a[0] - 0.49 * a[2] * a[2] +
                 0.14 * a[0] * a[2];
        out[2] = -0.63 * a[0] - 13.0 * a[2] + 0.43 * a[0] * a[1] + 0.49 * a[1] * a[2];
    };
    return m;
}

// Two-mode reduction of the projected system. The terms involving the
// discarded third mode are replaced by learned drift corrections psi_i
// and learned state-dependent diffusions; the diffusion amplitudes go
// through softplus so any parameterization stays valid.
inline SdeModel lorenz63_pca_reduced(ScalarFunction psi1, ScalarFunction psi2,
                                     ScalarFunction s1, ScalarFunction s2) {
    SdeModel m;
    m.dimension = 2;
    m.drift = [psi1 = std::move(psi1), psi2 = std::move(psi2)](const Vector& a, Vector& out) {
        out[0] = 2.3 * a[0] - 0.49 * a[0] * a[1] + psi1.value(a[1]);
        out[1] = -62.0 - 2.7 * a[1] + 0.49 * a[0] * a[0] + psi2.value(a[0]);
    };
    m.noise_kind = NoiseKind::Diagonal;
    m.diffusion_diag = [s1 = std::move(s1), s2 = std::move(s2)](const Vector& a, Vector& out) {
        out[0] = std::sqrt(softplus(s1.value(a[1])));
        out[1] = std::sqrt(softplus(s2.value(a[0])));
    };
    return m;
}

// Two-scale ring model: k_slow slow variables, each coupled to j_fast
// fast ones. State layout is [x_1..x_K, y_1..y_{K*J}] with the fast ring
// flattened so that fast neighbors wrap into the next slow sector.
inline SdeModel lorenz96_multiscale(int k_slow, int j_fast, double h, double f, double c,
                                    double b) {
    SdeModel m;
    const int k = k_slow;
    const int j = j_fast;
    m.dimension = k + k * j;
    m.drift = [k, j, h, f, c, b](const Vector& x, Vector& out) {
        const int n_fast = k * j;
        for (int i = 0; i < k; ++i) {
            const int im1 = (i - 1 + k) % k;
            const int im2 = (i - 2 + k) % k;
            const int ip1 = (i + 1) % k;
            double ybar = 0.0;
            for (int l = 0; l < j; ++l) ybar += x[k + i * j + l];
            ybar /= static_cast<double>(j);
            out[i] = -x[im1] * (x[im2] - x[ip1]) - x[i] + f - h * c * ybar;
        }
        for (int m2 = 0; m2 < n_fast; ++m2) {
            const int mp1 = (m2 + 1) % n_fast;
            const int mp2 = (m2 + 2) % n_fast;
            const int mm1 = (m2 - 1 + n_fast) % n_fast;
            const int slow = m2 / j;
            out[k + m2] = c * (-b * x[k + mp1] * (x[k + mp2] - x[k + mm1]) - x[k + m2] +
                               (h / static_cast<double>(j)) * x[slow]);
        }
    };
    return m;
}

// Single-scale closure of the two-scale model: the fast feedback is
// replaced by the linear damping obtained at the balance point plus a
// learned correction psi, with isotropic stochastic forcing.
inline SdeModel lorenz96_closure(int k_slow, int j_fast, double h, double f, double c,
                                 double sigma, ScalarFunction psi) {
    SdeModel m;
    const int k = k_slow;
    const double damping = h * h * c / static_cast<double>(j_fast);
    m.dimension = k;
    m.drift = [k, f, damping, psi = std::move(psi)](const Vector& x, Vector& out) {
        for (int i = 0; i < k; ++i) {
            const int im1 = (i - 1 + k) % k;
            const int im2 = (i - 2 + k) % k;
            const int ip1 = (i + 1) % k;
            out[i] = -x[im1] * (x[im2] - x[ip1]) - x[i] + f - damping * x[i] + psi.value(x[i]);
        }
    };
    if (sigma > 0.0) {
        const double s = std::sqrt(sigma);
        m.noise_kind = NoiseKind::Diagonal;
        m.diffusion_diag = [s](const Vector&, Vector& out) { out.setConstant(s); };
    }
    return m;
}

// Balance point of the closure with psi = 0: every component equal to
// f / (1 + h^2 c / j_fast).
inline double lorenz96_balance_point(double h, double f, double c, int j_fast) {
    return f / (1.0 + h * h * c / static_cast<double>(j_fast));
}

// Initial condition for the two-scale model: slow variables drawn around
// the balance point, fast variables near their slaved values (h/J) x_k
// with a small perturbation to break symmetry.
inline Vector lorenz96_initial_state(int k_slow, int j_fast, double h, double f, double c,
                                     RngStream& rng) {
    const int k = k_slow;
    const int j = j_fast;
    Vector x0(k + k * j);
    const double balance = lorenz96_balance_point(h, f, c, j);
    for (int i = 0; i < k; ++i) x0[i] = balance + rng.normal();
    for (int i = 0; i < k; ++i) {
        for (int l = 0; l < j; ++l) {
            x0[k + i * j + l] = (h / static_cast<double>(j)) * x0[i] + 0.1 * rng.normal();
        }
    }
    return x0;
}

// Delayed-feedback recharge oscillator for a scalar anomaly index:
//   dx = (a tanh(x(t - tau1)) - b tanh(x(t - tau2)) - c x) dt + sqrt(sigma) dW
inline SddeModel enso_sdde(double a, double b, double c, double sigma, double tau1,
                           double tau2) {
    SddeModel m;
    m.dimension = 1;
    m.delays = {tau1, tau2};
    m.drift = [a, b, c](const Vector& x, const std::vector<Vector>& delayed, Vector& out) {
        out[0] = a * std::tanh(delayed[0][0]) - b * std::tanh(delayed[1][0]) - c * x[0];
    };
    if (sigma > 0.0) {
        const double s = std::sqrt(sigma);
        m.noise_kind = NoiseKind::Diagonal;
        m.diffusion_diag = [s](const Vector&, Vector& out) { out.setConstant(s); };
    }
    return m;
}

// Underdamped dynamics of a single dihedral angle in a potential, with
// fluctuation-dissipation noise sqrt(2 sigma gamma).
inline Langevin2Model butane_reduced(double gamma, double sigma, ScalarFunction potential) {
    Langevin2Model m;
    m.damping = [gamma](double) { return gamma; };
    if (!potential.deriv) {
        throw Error("butane_reduced: potential needs an analytic derivative");
    }
    m.potential_grad = potential.deriv;
    m.noise_scale = sigma;
    return m;
}

}  // namespace sdefit
