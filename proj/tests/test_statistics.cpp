#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "sdefit/rng.hpp"
#include "sdefit/sde.hpp"
#include "sdefit/statistics.hpp"

using namespace sdefit;
using Catch::Approx;

namespace {

Trajectory constant_trajectory(const Vector& value, long rows, double dt) {
    Trajectory t;
    t.dt = dt;
    t.samples.resize(rows, value.size());
    for (long i = 0; i < rows; ++i) t.samples.row(i) = value;
    return t;
}

// dx = -gamma x dt + s dW. Stationary variance s^2 / (2 gamma),
// autocorrelation exp(-gamma tau), one-sided spectral density
// 2 s^2 / (gamma^2 + (2 pi f)^2).
SdeModel ou_model(double gamma, double s) {
    SdeModel m;
    m.dimension = 1;
    m.drift = [gamma](const Vector& x, Vector& out) { out[0] = -gamma * x[0]; };
    m.noise_kind = NoiseKind::Diagonal;
    m.diffusion_diag = [s](const Vector&, Vector& out) { out[0] = s; };
    return m;
}

Trajectory ou_trajectory(double t_total, double dt, uint64_t seed, uint64_t stream) {
    RngStream rng(seed, stream);
    auto model = ou_model(1.0, std::sqrt(2.0));
    return integrate_em(model, Vector::Zero(1), dt, static_cast<long>(t_total / dt), rng);
}

}  // namespace

TEST_CASE("moment averages of a constant trajectory") {
    Vector v(2);
    v << 2.0, 3.0;
    const Trajectory traj = constant_trajectory(v, 50, 0.1);

    StatisticsSpec spec;
    spec.moment_terms = {{1}, {2}, {1, 2}, {1, 1}, {2, 2, 2}};
    const Vector m = compute_moments(traj, spec);
    REQUIRE(m[0] == Approx(2.0).epsilon(1e-14));
    REQUIRE(m[1] == Approx(3.0).epsilon(1e-14));
    REQUIRE(m[2] == Approx(6.0).epsilon(1e-14));
    REQUIRE(m[3] == Approx(4.0).epsilon(1e-14));
    REQUIRE(m[4] == Approx(27.0).epsilon(1e-14));
}

TEST_CASE("burn-in discards the transient") {
    Trajectory traj;
    traj.dt = 0.1;
    traj.samples.resize(300, 1);
    for (long t = 0; t < 300; ++t) traj.samples(t, 0) = t < 100 ? 5.0 : 1.0;

    StatisticsSpec spec;
    spec.moment_terms = {{1}};
    spec.burn_in = 10.0;
    REQUIRE(compute_moments(traj, spec)[0] == Approx(1.0).epsilon(1e-14));

    spec.burn_in = 1000.0;
    REQUIRE_THROWS_AS(compute_moments(traj, spec), WindowTooShort);
}

TEST_CASE("radix-2 transform matches the direct transform") {
    RngStream rng(11, 0);
    for (std::size_t n : {std::size_t(2), std::size_t(8), std::size_t(64)}) {
        std::vector<std::complex<double>> x(n);
        for (auto& v : x) v = {rng.normal(), rng.normal()};
        auto fast = x;
        fft_radix2(fast);
        for (std::size_t k = 0; k < n; ++k) {
            std::complex<double> direct(0.0, 0.0);
            for (std::size_t l = 0; l < n; ++l) {
                const double ang = -2.0 * M_PI * static_cast<double>(k * l) / static_cast<double>(n);
                direct += x[l] * std::complex<double>(std::cos(ang), std::sin(ang));
            }
            REQUIRE(std::abs(fast[k] - direct) < 1e-9);
        }
    }
}

TEST_CASE("white-noise spectrum is flat at the known density") {
    const double sigma = 0.7;
    const double dt = 0.01;
    const long n = 1 << 15;
    RngStream rng(21, 0);
    Trajectory traj;
    traj.dt = dt;
    traj.samples.resize(n, 1);
    for (long t = 0; t < n; ++t) traj.samples(t, 0) = sigma * rng.normal();

    // One-sided density of a discrete white sequence: 2 sigma^2 dt.
    const double level = std::log10(2.0 * sigma * sigma * dt);
    const Vector c = compute_psd_polyfit(traj, 1, 2, 0.0, 0.0);
    const double nyquist = 0.5 / dt;
    for (double f : {3.0, 12.0, 0.5 * nyquist}) {
        const double fitted = c[0] + c[1] * f + c[2] * f * f;
        REQUIRE(std::abs(fitted - level) < 0.15);
    }

    // The averaged periodogram integrates back to the variance.
    auto [freq, power] = detail::welch_psd(traj.samples.col(0), dt, 8);
    const double df = freq[1] - freq[0];
    REQUIRE(power.sum() * df == Approx(sigma * sigma).epsilon(0.10));
}

TEST_CASE("exponentially correlated process matches its closed forms") {
    const Trajectory traj = ou_trajectory(5000.0, 1e-3, 42, 1);

    StatisticsSpec spec;
    spec.moment_terms = {{1}, {1, 1}};
    spec.burn_in = 10.0;
    const Vector m = compute_moments(traj, spec);
    REQUIRE(std::abs(m[0]) < 0.05);
    REQUIRE(m[1] == Approx(1.0).margin(0.05));

    const Vector acf = compute_acf(traj, 1, {0.5, 1.0, 2.0}, 10.0);
    REQUIRE(acf[0] == Approx(std::exp(-0.5)).margin(0.05));
    REQUIRE(acf[1] == Approx(std::exp(-1.0)).margin(0.05));
    REQUIRE(acf[2] == Approx(std::exp(-2.0)).margin(0.05));

    const Vector c = compute_psd_polyfit(traj, 1, 2, 0.05, 2.0, 10.0);
    const double f_mid = 0.5 * (0.05 + 2.0);
    const double fitted = c[0] + c[1] * f_mid + c[2] * f_mid * f_mid;
    const double analytic =
        std::log10(2.0 * 2.0 / (1.0 + 4.0 * M_PI * M_PI * f_mid * f_mid));
    REQUIRE(std::abs(fitted - analytic) < 0.2);
}

TEST_CASE("autocorrelation basics") {
    const Trajectory traj = ou_trajectory(50.0, 1e-3, 42, 2);
    const Vector lag0 = compute_acf(traj, 1, {0.0});
    REQUIRE(lag0[0] == Approx(1.0).epsilon(1e-14));

    Vector v(1);
    v << 1.5;
    const Trajectory flat = constant_trajectory(v, 100, 0.1);
    REQUIRE_THROWS_AS(compute_acf(flat, 1, {0.1}), Error);
    REQUIRE_THROWS_AS(compute_acf(traj, 1, {100.0}), WindowTooShort);
    REQUIRE_THROWS_AS(compute_acf(traj, 1, {1e-3 * 0.4}), Error);
    REQUIRE_THROWS_AS(compute_acf(traj, 2, {0.1}), Error);
}

TEST_CASE("narrow or undersampled spectral bands are rejected") {
    const Trajectory traj = ou_trajectory(50.0, 1e-3, 42, 3);
    REQUIRE_THROWS_AS(compute_psd_polyfit(traj, 1, 2, 100.0, 100.1, 0.0), EmptyBand);

    Vector v(1);
    v << 0.0;
    const Trajectory tiny = constant_trajectory(v, 20, 0.1);
    REQUIRE_THROWS_AS(compute_psd_polyfit(tiny, 1, 2, 0.0, 0.0), WindowTooShort);
}

TEST_CASE("assembled vector is consistent under reordering") {
    const Trajectory traj = ou_trajectory(100.0, 1e-3, 42, 4);

    StatisticsSpec a;
    a.moment_terms = {{1}, {1, 1}, {1, 1, 1}};
    a.acf_requests = {{1, {0.5, 1.0}}};
    a.burn_in = 5.0;

    StatisticsSpec b = a;
    b.moment_terms = {{1, 1, 1}, {1}, {1, 1}};

    const DataVector da = assemble_data(traj, a);
    const DataVector db = assemble_data(traj, b);
    REQUIRE(da.values.size() == 5);
    REQUIRE(da.labels.size() == 5);
    REQUIRE(db.values[0] == da.values[2]);
    REQUIRE(db.values[1] == da.values[0]);
    REQUIRE(db.values[2] == da.values[1]);
    REQUIRE(db.labels[1] == da.labels[0]);
    REQUIRE(da.values[3] == compute_acf(traj, 1, {0.5}, 5.0)[0]);
    REQUIRE(da.labels[3] == "acf[1]@0.5");
    REQUIRE(da.labels[0] == "m[1]");
}

TEST_CASE("statistic menus produce the documented dimensions") {
    StatisticsSpec first_and_second;
    for (int i = 1; i <= 3; ++i) first_and_second.moment_terms.push_back({i});
    for (int i = 1; i <= 3; ++i) {
        for (int j = i; j <= 3; ++j) first_and_second.moment_terms.push_back({i, j});
    }
    REQUIRE(first_and_second.dimension() == 9);

    StatisticsSpec moments_and_acf;
    moments_and_acf.moment_terms = {{1}, {2}, {1, 1}, {1, 2}, {2, 2},
                                    {1, 1, 1}, {2, 2, 2}, {1, 1, 1, 1}, {2, 2, 2, 2}};
    std::vector<double> lags;
    for (int k = 1; k <= 9; ++k) lags.push_back(1.111 * k);
    moments_and_acf.acf_requests = {{1, lags}, {2, lags}};
    REQUIRE(moments_and_acf.dimension() == 27);

    StatisticsSpec scalar_menu;
    scalar_menu.moment_terms = {{1}, {1, 1}, {1, 1, 1}, {1, 1, 1, 1}};
    std::vector<double> month_lags;
    for (int k = 1; k <= 9; ++k) month_lags.push_back(6.0 * k);
    scalar_menu.acf_requests = {{1, month_lags}};
    scalar_menu.psd_requests = {{1, 2, 0.0, 0.0, 8}};
    REQUIRE(scalar_menu.dimension() == 16);
}

TEST_CASE("noise covariance of a constant trajectory is zero") {
    Vector v(1);
    v << 4.0;
    const Trajectory traj = constant_trajectory(v, 400, 0.1);
    StatisticsSpec spec;
    spec.moment_terms = {{1}, {1, 1}};
    const Matrix gamma = estimate_gamma(traj, spec, 10);
    REQUIRE(gamma.norm() == 0.0);

    const Matrix jittered = gamma_with_jitter(gamma);
    REQUIRE(jittered(0, 0) > 0.0);
}

TEST_CASE("noise covariance matches the asymptotic variance of the mean") {
    // Time average of an exponentially correlated process over [0, T]:
    // Var = s^2 / (gamma^2 T) for T much longer than 1/gamma. Here
    // s^2 = 2, gamma = 1, T = 2000 after burn-in, so the oracle value is
    // 1e-3; batch means should land within a factor of two.
    const double t_total = 2010.0;
    const Trajectory traj = ou_trajectory(t_total, 1e-3, 7, 5);
    StatisticsSpec spec;
    spec.moment_terms = {{1}};
    spec.burn_in = 10.0;
    const Matrix gamma = estimate_gamma(traj, spec, 20);
    const double oracle = 2.0 / 2000.0;
    REQUIRE(gamma(0, 0) > 0.5 * oracle);
    REQUIRE(gamma(0, 0) < 2.0 * oracle);
}

TEST_CASE("noise covariance is symmetric and positive semi-definite") {
    const Trajectory traj = ou_trajectory(200.0, 1e-3, 9, 6);
    StatisticsSpec spec;
    spec.moment_terms = {{1}, {1, 1}, {1, 1, 1}};
    spec.acf_requests = {{1, {0.5, 1.0}}};
    spec.burn_in = 5.0;
    const Matrix gamma = estimate_gamma(traj, spec, 15);
    REQUIRE((gamma - gamma.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gamma);
    REQUIRE(eig.eigenvalues().minCoeff() > -1e-12 * gamma.trace());

    Eigen::LLT<Matrix> llt(gamma_with_jitter(gamma));
    REQUIRE(llt.info() == Eigen::Success);
}

TEST_CASE("statistic spread shrinks with the averaging window") {
    // Doubling the window should shrink the across-seed spread of a time
    // average by about sqrt(2). Each seed contributes one path; the short
    // estimate uses its first half, so the ratio concentrates tightly.
    const int n_seeds = 64;
    std::vector<double> short_vals, long_vals;
    for (int s = 0; s < n_seeds; ++s) {
        StatisticsSpec spec;
        spec.moment_terms = {{1, 1}};
        spec.burn_in = 5.0;
        const Trajectory full = ou_trajectory(205.0, 1e-3, 1000 + s, 7);
        Trajectory half;
        half.dt = full.dt;
        half.samples = full.samples.topRows(105001);
        short_vals.push_back(compute_moments(half, spec)[0]);
        long_vals.push_back(compute_moments(full, spec)[0]);
    }
    auto sd = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double acc = 0.0;
        for (double x : v) acc += (x - mean) * (x - mean);
        return std::sqrt(acc / static_cast<double>(v.size() - 1));
    };
    const double ratio = sd(short_vals) / sd(long_vals);
    REQUIRE(ratio > 1.2);
    REQUIRE(ratio < 1.7);
}
