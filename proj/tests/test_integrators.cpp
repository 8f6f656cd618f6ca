#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sdefit/models.hpp"
#include "sdefit/rng.hpp"
#include "sdefit/sde.hpp"

using namespace sdefit;
using Catch::Approx;

namespace {

SdeModel ou_model(double gamma, double s) {
    SdeModel m;
    m.dimension = 1;
    m.drift = [gamma](const Vector& x, Vector& out) { out[0] = -gamma * x[0]; };
    m.noise_kind = NoiseKind::Diagonal;
    m.diffusion_diag = [s](const Vector&, Vector& out) { out[0] = s; };
    return m;
}

double column_variance(const Trajectory& traj, int col, long start) {
    const auto x = traj.samples.col(col).segment(start, traj.steps() - start);
    const double mean = x.mean();
    return (x.array() - mean).square().sum() / static_cast<double>(x.size());
}

}  // namespace

TEST_CASE("zero drift and zero noise keep the state fixed") {
    SdeModel m;
    m.dimension = 2;
    m.drift = [](const Vector&, Vector& out) { out.setZero(); };
    RngStream rng(1, 0);
    Vector x0(2);
    x0 << 1.5, -2.5;
    const Trajectory traj = integrate_em(m, x0, 0.01, 100, rng);
    REQUIRE(traj.steps() == 101);
    for (long t = 0; t < traj.steps(); ++t) {
        REQUIRE(traj.samples(t, 0) == 1.5);
        REQUIRE(traj.samples(t, 1) == -2.5);
    }
}

TEST_CASE("noise-free stepping reproduces explicit Euler bitwise") {
    const ScalarFunction identity{[](double v) { return v; }, {}};
    SdeModel m = lorenz63_noisy(10.0, 28.0, 8.0 / 3.0, 0.0, identity);
    REQUIRE(m.noise_kind == NoiseKind::None);

    Vector x0(3);
    x0 << 1.0, 1.0, 1.0;
    const double dt = 0.005;
    const long n = 2000;
    RngStream rng(2, 0);
    const Trajectory traj = integrate_em(m, x0, dt, n, rng);

    Vector x = x0, f(3);
    for (long k = 0; k < n; ++k) {
        m.drift(x, f);
        x += dt * f;
    }
    for (int c = 0; c < 3; ++c) REQUIRE(traj.samples(n, c) == x[c]);
}

TEST_CASE("stationary spread matches the discrete-time law and tightens with dt") {
    // Explicit stepping of dx = -x dt + sqrt(2) dW has stationary
    // variance s^2 dt / (1 - (1 - dt)^2), above the continuous value 1
    // by about dt/2.
    auto run_var = [](double dt, double t_total, uint64_t seed) {
        RngStream rng(seed, 0);
        const auto m = ou_model(1.0, std::sqrt(2.0));
        const Trajectory traj =
            integrate_em(m, Vector::Zero(1), dt, static_cast<long>(t_total / dt), rng);
        return column_variance(traj, 0, static_cast<long>(10.0 / dt));
    };

    const double coarse = run_var(0.05, 40000.0, 3);
    const double fine = run_var(0.005, 4000.0, 4);
    const double coarse_law = 2.0 * 0.05 / (1.0 - 0.95 * 0.95);
    const double fine_law = 2.0 * 0.005 / (1.0 - 0.995 * 0.995);
    REQUIRE(coarse == Approx(coarse_law).margin(0.02));
    REQUIRE(fine == Approx(fine_law).margin(0.02));
    REQUIRE(std::abs(fine - 1.0) < std::abs(coarse - 1.0));
}

TEST_CASE("chaotic convection trajectories stay bounded") {
    const ScalarFunction identity{[](double v) { return v; }, {}};
    SdeModel m = lorenz63_noisy(10.0, 28.0, 8.0 / 3.0, 10.0, identity);
    RngStream rng(5, 0);
    Vector x0(3);
    x0 << 1.0, 1.0, 1.0;
    const Trajectory traj = integrate_em(m, x0, 1e-3, 100000, rng);
    REQUIRE(traj.samples.allFinite());
    REQUIRE(traj.samples.cwiseAbs().maxCoeff() < 200.0);
}

TEST_CASE("diverging state reports the failing step") {
    SdeModel m;
    m.dimension = 1;
    m.drift = [](const Vector& x, Vector& out) { out[0] = x[0] * x[0]; };
    RngStream rng(6, 0);
    Vector x0(1);
    x0 << 10.0;
    try {
        integrate_em(m, x0, 1.0, 100, rng);
        FAIL("expected NonFiniteState");
    } catch (const NonFiniteState& e) {
        REQUIRE(e.step >= 1);
    }
}

TEST_CASE("decimated storage subsamples the dense path") {
    const auto m = ou_model(1.0, 1.0);
    Vector x0(1);
    x0 << 0.3;
    RngStream rng_a(7, 0), rng_b(7, 0);
    const Trajectory dense = integrate_em(m, x0, 0.01, 200, rng_a, 1);
    const Trajectory thin = integrate_em(m, x0, 0.01, 200, rng_b, 10);
    REQUIRE(thin.steps() == 21);
    REQUIRE(thin.dt == Approx(0.1));
    for (long t = 0; t < thin.steps(); ++t) {
        REQUIRE(thin.samples(t, 0) == dense.samples(10 * t, 0));
    }
    RngStream rng_c(7, 0);
    REQUIRE_THROWS_AS(integrate_em(m, x0, 0.01, 205, rng_c, 10), Error);
}

TEST_CASE("delay stepping is exact while the delayed segment is constant") {
    SddeModel m;
    m.dimension = 1;
    m.delays = {1.0};
    m.drift = [](const Vector&, const std::vector<Vector>& delayed, Vector& out) {
        out[0] = delayed[0][0];
    };
    const double dt = 1e-3;
    const Trajectory hist = constant_history(Vector::Ones(1), dt, 1002);
    RngStream rng(8, 0);
    const Trajectory traj = integrate_sdde(m, hist, dt, 2000, rng);

    // x' = x(t-1) with unit history: x(t) = 1 + t on [0,1] (exact for
    // explicit Euler), then 3.5 at t = 2 with O(dt) error.
    REQUIRE(traj.samples(500, 0) == Approx(1.5).margin(1e-12));
    REQUIRE(traj.samples(1000, 0) == Approx(2.0).margin(1e-12));
    REQUIRE(traj.samples(2000, 0) == Approx(3.5).margin(5e-3));
    REQUIRE(traj.t0 == Approx(0.0).margin(1e-12));
}

TEST_CASE("off-grid delays interpolate the stored path linearly") {
    SddeModel m;
    m.dimension = 1;
    m.delays = {0.0015};
    m.drift = [](const Vector&, const std::vector<Vector>& delayed, Vector& out) {
        out[0] = delayed[0][0];
    };
    const double dt = 1e-3;
    Trajectory hist;
    hist.dt = dt;
    hist.t0 = -5e-3;
    hist.samples.resize(6, 1);
    for (long i = 0; i < 6; ++i) hist.samples(i, 0) = hist.t0 + dt * static_cast<double>(i);
    RngStream rng(9, 0);
    const Trajectory traj = integrate_sdde(m, hist, dt, 1, rng);
    REQUIRE(traj.samples(1, 0) == Approx(-1.5 * dt * dt).margin(1e-15));
}

TEST_CASE("zero delay reduces to the plain diffusion bitwise") {
    SddeModel md;
    md.dimension = 1;
    md.delays = {0.0};
    md.drift = [](const Vector&, const std::vector<Vector>& delayed, Vector& out) {
        out[0] = -delayed[0][0];
    };
    md.noise_kind = NoiseKind::Diagonal;
    md.diffusion_diag = [](const Vector&, Vector& out) { out[0] = 0.7; };

    SdeModel ms;
    ms.dimension = 1;
    ms.drift = [](const Vector& x, Vector& out) { out[0] = -x[0]; };
    ms.noise_kind = NoiseKind::Diagonal;
    ms.diffusion_diag = [](const Vector&, Vector& out) { out[0] = 0.7; };

    Vector x0(1);
    x0 << 0.4;
    const double dt = 0.01;
    RngStream rng_a(10, 0), rng_b(10, 0);
    const Trajectory a = integrate_sdde(md, constant_history(x0, dt, 2), dt, 500, rng_a);
    const Trajectory b = integrate_em(ms, x0, dt, 500, rng_b);
    for (long t = 0; t <= 500; ++t) REQUIRE(a.samples(t, 0) == b.samples(t, 0));
}

TEST_CASE("delay stepping validates its history") {
    SddeModel m;
    m.dimension = 1;
    m.delays = {2.0};
    m.drift = [](const Vector&, const std::vector<Vector>& d, Vector& out) {
        out[0] = d[0][0];
    };
    RngStream rng(11, 0);
    const Trajectory short_hist = constant_history(Vector::Ones(1), 0.01, 50);
    REQUIRE_THROWS_AS(integrate_sdde(m, short_hist, 0.01, 10, rng), InsufficientHistory);

    const Trajectory wrong_dt = constant_history(Vector::Ones(1), 0.02, 200);
    REQUIRE_THROWS_AS(integrate_sdde(m, wrong_dt, 0.01, 10, rng), Error);

    const Trajectory wrong_dim = constant_history(Vector::Ones(2), 0.01, 300);
    REQUIRE_THROWS_AS(integrate_sdde(m, wrong_dim, 0.01, 10, rng), LayoutMismatch);
}

TEST_CASE("damped free angle relaxes to unit displacement") {
    Langevin2Model m;
    m.damping = [](double) { return 1.0; };
    m.potential_grad = [](double) { return 0.0; };
    m.noise_scale = 0.0;
    RngStream rng(12, 0);
    const Trajectory traj = integrate_langevin2(m, 0.0, 1.0, 1e-3, 10000, rng);
    REQUIRE(traj.samples(10000, 0) == Approx(1.0).margin(0.01));
    REQUIRE(std::abs(traj.samples(10000, 1)) < 1e-4);
}

TEST_CASE("quadratic well reaches the fluctuation-dissipation balance") {
    // Stationary density ~ exp(-(v^2/2 + phi^2/2) / sigma): both the
    // velocity and the angle have variance sigma.
    const double sigma = 0.5;
    Langevin2Model m;
    m.damping = [](double) { return 1.0; };
    m.potential_grad = [](double phi) { return phi; };
    m.noise_scale = sigma;
    RngStream rng(13, 0);
    const Trajectory traj = integrate_langevin2(m, 0.0, 0.0, 1e-3, 5000000, rng, 10);
    const long start = 2000;  // 20 time units of burn-in at the stored rate
    REQUIRE(column_variance(traj, 0, start) == Approx(sigma).margin(0.05));
    REQUIRE(column_variance(traj, 1, start) == Approx(sigma).margin(0.05));
}

TEST_CASE("rest state at a potential minimum stays put") {
    Langevin2Model m;
    m.damping = [](double) { return 2.0; };
    m.potential_grad = [](double phi) { return phi - 0.5; };
    m.noise_scale = 0.0;
    RngStream rng(14, 0);
    const Trajectory traj = integrate_langevin2(m, 0.5, 0.0, 0.01, 100, rng);
    for (long t = 0; t <= 100; ++t) {
        REQUIRE(traj.samples(t, 0) == 0.5);
        REQUIRE(traj.samples(t, 1) == 0.0);
    }
}

TEST_CASE("angle output is wrapped, the integration state is not") {
    Langevin2Model m;
    m.damping = [](double) { return 1.0; };
    m.potential_grad = [](double) { return 0.0; };
    m.noise_scale = 0.0;
    RngStream rng(15, 0);
    const Trajectory traj = integrate_langevin2(m, 7.0, 0.0, 0.01, 10, rng);
    REQUIRE(traj.samples(0, 0) == Approx(7.0 - 2.0 * M_PI).margin(1e-12));
    REQUIRE(traj.samples(10, 0) >= -M_PI);
    REQUIRE(traj.samples(10, 0) < M_PI);
}

TEST_CASE("non-positive damping is rejected") {
    Langevin2Model m;
    m.damping = [](double) { return -1.0; };
    m.potential_grad = [](double) { return 0.0; };
    m.noise_scale = 0.5;
    RngStream rng(16, 0);
    REQUIRE_THROWS_AS(integrate_langevin2(m, 0.0, 0.0, 0.01, 10, rng), NonPositiveDamping);
}
