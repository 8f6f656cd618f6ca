#pragma once

#include <cmath>
#include <functional>

#include "sdefit/common.hpp"

namespace sdefit {

// Squared-exponential kernel with amplitude sigma and length scale ell.
inline double rbf_kernel(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& x2,
                         double sigma, double ell) {
    const double d2 = (x - x2).squaredNorm();
    return sigma * sigma * std::exp(-d2 / (2.0 * ell * ell));
}

inline double rbf_kernel(double x, double x2, double sigma, double ell) {
    const double d = x - x2;
    return sigma * sigma * std::exp(-d * d / (2.0 * ell * ell));
}

// Mean function of a GP regression with noisily observed values at fixed
// nodes. The node values, the observation-error scale and the kernel
// hyper-parameters are all free parameters, so the represented function
// is refineable (add nodes) and is optimized as a block by the inversion
// layer. Scalar inputs; every unknown function in the bundled models is
// scalar.
struct GpMeanFunction {
    Vector nodes;        // I fixed design points
    Vector node_values;  // theta', length I
    double obs_error = 0.1;   // lambda; Sigma_obs = lambda^2 I
    double amplitude = 1.0;   // sigma_GP
    double length_scale = 1.0;
};

using RepresenterCoefficients = Vector;

// Solve (K + lambda^2 I) alpha = theta' for the representer weights.
inline RepresenterCoefficients fit_representer(const GpMeanFunction& f) {
    const Eigen::Index n = f.nodes.size();
    if (n == 0) throw SingularGram("fit_representer: no nodes");
    if (f.node_values.size() != n) {
        throw LayoutMismatch("fit_representer: node_values length != nodes length");
    }
    Matrix gram(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double k = rbf_kernel(f.nodes[i], f.nodes[j], f.amplitude, f.length_scale);
            gram(i, j) = k;
            gram(j, i) = k;
        }
    }
    const double jitter = 1e-10 * f.amplitude * f.amplitude;
    gram.diagonal().array() += f.obs_error * f.obs_error + jitter;
    if (!gram.allFinite()) throw SingularGram("fit_representer: non-finite Gram matrix");
    Eigen::LDLT<Matrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success) {
        throw SingularGram("fit_representer: Gram factorization failed");
    }
    Vector alpha = ldlt.solve(f.node_values);
    if (!alpha.allFinite()) {
        throw SingularGram("fit_representer: singular Gram matrix (duplicate nodes or degenerate length scale?)");
    }
    return alpha;
}

inline double evaluate_mean(const GpMeanFunction& f, const RepresenterCoefficients& alpha,
                            double x) {
    double m = 0.0;
    for (Eigen::Index i = 0; i < f.nodes.size(); ++i) {
        m += alpha[i] * rbf_kernel(x, f.nodes[i], f.amplitude, f.length_scale);
    }
    return m;
}

// Fixed expansion in Gaussian bumps, extended periodically on [-pi, pi).
// Used for potentials on an angle domain; evaluation sums the images at
// phi and phi +- 2*pi so the function and its derivative are smooth
// across the wrap.
struct GaussianBasisFunction {
    Vector centers;
    double width = 0.5;
    Vector weights;
};

inline double evaluate_gaussian_basis(const GaussianBasisFunction& b, double phi) {
    const double w2 = 2.0 * b.width * b.width;
    const double p = wrap_angle(phi);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < b.centers.size(); ++i) {
        for (int s = -1; s <= 1; ++s) {
            const double d = p + 2.0 * M_PI * s - b.centers[i];
            sum += b.weights[i] * std::exp(-d * d / w2);
        }
    }
    return sum;
}

inline double evaluate_gaussian_basis_derivative(const GaussianBasisFunction& b, double phi) {
    const double w2 = b.width * b.width;
    const double p = wrap_angle(phi);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < b.centers.size(); ++i) {
        for (int s = -1; s <= 1; ++s) {
            const double d = p + 2.0 * M_PI * s - b.centers[i];
            sum += -b.weights[i] * d / w2 * std::exp(-d * d / (2.0 * w2));
        }
    }
    return sum;
}

// Equispaced centers on [-pi, pi) for a periodic angle domain; the point
// at +pi is the same as -pi and is not duplicated.
inline Vector periodic_angle_centers(Eigen::Index count) {
    Vector c(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        c[i] = -M_PI + 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(count);
    }
    return c;
}

// Equispaced nodes over a closed interval.
inline Vector equispaced_nodes(double lo, double hi, Eigen::Index count) {
    if (count == 1) return Vector::Constant(1, 0.5 * (lo + hi));
    Vector n(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        n[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    }
    return n;
}

// A fitted scalar function with optional analytic derivative; the common
// currency between the function parameterizations and the model drifts.
struct ScalarFunction {
    std::function<double(double)> value;
    std::function<double(double)> deriv;  // may be empty
};

inline ScalarFunction make_scalar_function(const GpMeanFunction& f) {
    auto alpha = fit_representer(f);
    GpMeanFunction copy = f;
    return ScalarFunction{
        [copy, alpha](double x) { return evaluate_mean(copy, alpha, x); },
        {}};
}

inline ScalarFunction make_scalar_function(const GaussianBasisFunction& b) {
    return ScalarFunction{
        [b](double x) { return evaluate_gaussian_basis(b, x); },
        [b](double x) { return evaluate_gaussian_basis_derivative(b, x); }};
}

inline double softplus(double z) {
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

}  // namespace sdefit
