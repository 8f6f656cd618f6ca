#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sdefit/gp.hpp"
#include "sdefit/rng.hpp"

using namespace sdefit;
using Catch::Approx;

namespace {

GpMeanFunction random_instance(RngStream& rng, Eigen::Index n_nodes) {
    GpMeanFunction f;
    f.nodes.resize(n_nodes);
    double at = -3.0 + rng.uniform();
    for (Eigen::Index i = 0; i < n_nodes; ++i) {
        at += 0.3 + rng.uniform();  // keep nodes separated
        f.nodes[i] = at;
    }
    f.node_values = rng.normals(n_nodes);
    f.obs_error = 0.05 + 0.45 * rng.uniform();
    f.amplitude = 0.5 + 1.5 * rng.uniform();
    f.length_scale = 0.3 + 1.7 * rng.uniform();
    return f;
}

// Same linear system, independent dense solver.
double dense_mean_oracle(const GpMeanFunction& f, double x) {
    const Eigen::Index n = f.nodes.size();
    Matrix gram(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            gram(i, j) = rbf_kernel(f.nodes[i], f.nodes[j], f.amplitude, f.length_scale);
        }
    }
    gram.diagonal().array() += f.obs_error * f.obs_error + 1e-10 * f.amplitude * f.amplitude;
    Vector alpha = gram.fullPivLu().solve(f.node_values);
    Vector kx(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        kx[i] = rbf_kernel(x, f.nodes[i], f.amplitude, f.length_scale);
    }
    return kx.dot(alpha);
}

}  // namespace

TEST_CASE("regression mean matches a dense direct solve") {
    RngStream rng(101, 0);
    for (int trial = 0; trial < 30; ++trial) {
        const auto n_nodes = static_cast<Eigen::Index>(2 + trial % 9);
        const GpMeanFunction f = random_instance(rng, n_nodes);
        const auto alpha = fit_representer(f);
        for (int q = 0; q < 5; ++q) {
            const double x = -4.0 + 10.0 * rng.uniform();
            REQUIRE(std::abs(evaluate_mean(f, alpha, x) - dense_mean_oracle(f, x)) < 1e-10);
        }
    }
}

TEST_CASE("vanishing observation error interpolates the node values") {
    GpMeanFunction f;
    f.nodes = equispaced_nodes(-2.0, 2.0, 5);
    f.node_values.resize(5);
    f.node_values << 0.3, -1.2, 0.8, 2.1, -0.4;
    f.obs_error = 1e-6;
    f.amplitude = 1.0;
    f.length_scale = 0.8;
    const auto alpha = fit_representer(f);
    for (Eigen::Index i = 0; i < 5; ++i) {
        REQUIRE(evaluate_mean(f, alpha, f.nodes[i]) == Approx(f.node_values[i]).margin(1e-6));
    }
}

TEST_CASE("large observation error shrinks the mean toward zero") {
    GpMeanFunction f;
    f.nodes = equispaced_nodes(-2.0, 2.0, 5);
    f.node_values.resize(5);
    f.node_values << 1.0, -1.0, 1.0, -1.0, 1.0;
    f.obs_error = 100.0;
    f.amplitude = 1.0;
    f.length_scale = 0.8;
    const auto alpha = fit_representer(f);
    for (double x = -3.0; x <= 3.0; x += 0.25) {
        REQUIRE(std::abs(evaluate_mean(f, alpha, x)) < 1e-2);
    }
}

TEST_CASE("fitted mean is linear in the node values") {
    RngStream rng(102, 0);
    GpMeanFunction f = random_instance(rng, 6);
    GpMeanFunction f1 = f, f2 = f, mix = f;
    f1.node_values = rng.normals(6);
    f2.node_values = rng.normals(6);
    const double a = 0.7, b = -1.3;
    mix.node_values = a * f1.node_values + b * f2.node_values;
    const auto a1 = fit_representer(f1);
    const auto a2 = fit_representer(f2);
    const auto am = fit_representer(mix);
    for (double x = -2.0; x <= 2.0; x += 0.5) {
        const double lhs = evaluate_mean(mix, am, x);
        const double rhs = a * evaluate_mean(f1, a1, x) + b * evaluate_mean(f2, a2, x);
        REQUIRE(lhs == Approx(rhs).margin(1e-10));
    }
}

TEST_CASE("more nodes refine a smooth target") {
    auto target = [](double x) { return std::sin(x); };
    auto sup_error = [&](Eigen::Index n_nodes) {
        GpMeanFunction f;
        f.nodes = equispaced_nodes(-3.0, 3.0, n_nodes);
        f.node_values.resize(n_nodes);
        for (Eigen::Index i = 0; i < n_nodes; ++i) f.node_values[i] = target(f.nodes[i]);
        f.obs_error = 1e-4;
        f.amplitude = 1.0;
        f.length_scale = 1.0;
        const auto alpha = fit_representer(f);
        double worst = 0.0;
        for (double x = -3.0; x <= 3.0; x += 0.01) {
            worst = std::max(worst, std::abs(evaluate_mean(f, alpha, x) - target(x)));
        }
        return worst;
    };
    const double e5 = sup_error(5);
    const double e10 = sup_error(10);
    const double e20 = sup_error(20);
    REQUIRE(e10 < e5);
    REQUIRE(e20 < e10);
    REQUIRE(e20 < 0.01);
}

TEST_CASE("fit rejects inconsistent or empty inputs") {
    GpMeanFunction f;
    f.nodes = equispaced_nodes(-1.0, 1.0, 4);
    f.node_values = Vector::Zero(3);
    REQUIRE_THROWS_AS(fit_representer(f), LayoutMismatch);
    f.nodes.resize(0);
    f.node_values.resize(0);
    REQUIRE_THROWS_AS(fit_representer(f), SingularGram);
}

TEST_CASE("periodic bump expansion: analytic derivative matches finite differences") {
    RngStream rng(103, 0);
    GaussianBasisFunction b;
    b.centers = periodic_angle_centers(9);
    b.width = 0.5;
    b.weights = rng.normals(9);

    const double h = 1e-6;
    for (double phi : {-3.1, -1.7, -0.2, 0.0, 0.9, 2.4, 3.1}) {
        const double fd = (evaluate_gaussian_basis(b, phi + h) -
                           evaluate_gaussian_basis(b, phi - h)) / (2.0 * h);
        REQUIRE(evaluate_gaussian_basis_derivative(b, phi) == Approx(fd).margin(1e-5));
    }
}

TEST_CASE("periodic bump expansion wraps smoothly") {
    RngStream rng(104, 0);
    GaussianBasisFunction b;
    b.centers = periodic_angle_centers(9);
    b.width = 0.5;
    b.weights = rng.normals(9);

    for (double phi : {-2.0, 0.3, 1.9, 3.0}) {
        REQUIRE(evaluate_gaussian_basis(b, phi) ==
                Approx(evaluate_gaussian_basis(b, phi + 2.0 * M_PI)).margin(1e-12));
        REQUIRE(evaluate_gaussian_basis_derivative(b, phi) ==
                Approx(evaluate_gaussian_basis_derivative(b, phi - 2.0 * M_PI)).margin(1e-12));
    }
    // Continuity across the wrap point.
    const double eps = 1e-9;
    REQUIRE(evaluate_gaussian_basis(b, M_PI - eps) ==
            Approx(evaluate_gaussian_basis(b, -M_PI + eps)).margin(1e-6));
}

TEST_CASE("node and center grids have the documented layout") {
    const Vector c = periodic_angle_centers(9);
    REQUIRE(c[0] == Approx(-M_PI));
    for (Eigen::Index i = 1; i < 9; ++i) {
        REQUIRE(c[i] - c[i - 1] == Approx(2.0 * M_PI / 9.0));
    }
    const Vector n = equispaced_nodes(-2.0, 4.0, 4);
    REQUIRE(n[0] == Approx(-2.0));
    REQUIRE(n[3] == Approx(4.0));
    REQUIRE(n[1] - n[0] == Approx(2.0));
    REQUIRE(equispaced_nodes(-1.0, 1.0, 1)[0] == Approx(0.0));
}

TEST_CASE("scalar-function wrappers agree with the primitives") {
    RngStream rng(105, 0);
    const GpMeanFunction f = random_instance(rng, 5);
    const auto alpha = fit_representer(f);
    const ScalarFunction sf = make_scalar_function(f);
    REQUIRE(sf.value(0.7) == Approx(evaluate_mean(f, alpha, 0.7)).margin(1e-14));
    REQUIRE_FALSE(sf.deriv);

    GaussianBasisFunction b;
    b.centers = periodic_angle_centers(9);
    b.width = 0.5;
    b.weights = rng.normals(9);
    const ScalarFunction sb = make_scalar_function(b);
    REQUIRE(sb.value(1.1) == Approx(evaluate_gaussian_basis(b, 1.1)).margin(1e-14));
    REQUIRE(sb.deriv(1.1) == Approx(evaluate_gaussian_basis_derivative(b, 1.1)).margin(1e-14));
}

TEST_CASE("softplus is positive, monotone, and asymptotically linear") {
    REQUIRE(softplus(0.0) == Approx(std::log(2.0)));
    REQUIRE(softplus(-40.0) > 0.0);
    REQUIRE(softplus(-40.0) < 1e-15);
    REQUIRE(softplus(50.0) == Approx(50.0));
    double prev = softplus(-10.0);
    for (double z = -9.5; z <= 10.0; z += 0.5) {
        const double cur = softplus(z);
        REQUIRE(cur > prev);
        prev = cur;
    }
}
