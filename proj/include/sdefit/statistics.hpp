#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <string>
#include <vector>

#include "sdefit/common.hpp"
#include "sdefit/fft.hpp"

namespace sdefit {

// Which ergodic statistics form the data vector. Component indices are
// 1-based throughout, matching the labels this module emits.
//
// Every operation below works on the post-burn-in window of the
// trajectory it is given; `averaging_window` is the length of data the
// experiment layer is expected to provide after burn-in, and is used for
// validation and simulation sizing rather than for slicing here.
struct AcfRequest {
    int component = 1;
    std::vector<double> lags;  // in time units; each must fall on the dt grid
};

struct PsdRequest {
    int component = 1;
    int degree = 2;
    // Band in cycles per time unit. f_hi <= 0 selects the default band:
    // skip the two lowest nonzero Welch bins, cap at half the Nyquist
    // frequency.
    double f_lo = 0.0;
    double f_hi = 0.0;
    int welch_segments = 8;
};

struct StatisticsSpec {
    std::vector<std::vector<int>> moment_terms;  // multisets of 1-based indices
    std::vector<AcfRequest> acf_requests;
    std::vector<PsdRequest> psd_requests;
    double burn_in = 0.0;            // time discarded from the front
    double averaging_window = 1.0;   // T_avg, time units

    std::size_t dimension() const {
        std::size_t j = moment_terms.size();
        for (const auto& a : acf_requests) j += a.lags.size();
        for (const auto& p : psd_requests) j += static_cast<std::size_t>(p.degree) + 1;
        return j;
    }
};

// Realized data vector y with its sampling-noise covariance.
struct DataVector {
    Vector values;
    Matrix gamma;  // J x J; empty until estimated
    std::vector<std::string> labels;
};

namespace detail {

inline std::string format_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return buf;
}

// First sample index of the post-burn-in window.
inline Eigen::Index window_start(const Trajectory& traj, double burn_in) {
    if (traj.dt <= 0.0) throw Error("trajectory dt must be positive");
    const auto start = static_cast<Eigen::Index>(std::ceil(burn_in / traj.dt - 1e-9));
    if (start >= traj.steps()) {
        throw WindowTooShort("burn-in consumes the whole trajectory");
    }
    return std::max<Eigen::Index>(start, 0);
}

inline Eigen::Index lag_to_steps(double lag, double dt) {
    if (lag < 0.0) throw Error("negative lag");
    const double steps = lag / dt;
    const double rounded = std::round(steps);
    if (std::abs(steps - rounded) > 1e-6 * std::max(1.0, steps)) {
        throw Error("lag " + format_number(lag) + " is not a multiple of dt " + format_number(dt));
    }
    return static_cast<Eigen::Index>(rounded);
}

inline void check_component(const Trajectory& traj, int component) {
    if (component < 1 || component > traj.dimension()) {
        throw Error("component index " + std::to_string(component) + " out of range");
    }
}

}  // namespace detail

// Time averages of the products prod_{j in M} x_j(t) over the
// post-burn-in window, one entry per multi-index set.
inline Vector compute_moments(const Trajectory& traj, const StatisticsSpec& spec) {
    const Eigen::Index start = detail::window_start(traj, spec.burn_in);
    const Eigen::Index len = traj.steps() - start;
    Vector out(spec.moment_terms.size());
    Eigen::Index idx = 0;
    for (const auto& term : spec.moment_terms) {
        for (int c : term) detail::check_component(traj, c);
        double sum = 0.0;
        for (Eigen::Index t = start; t < traj.steps(); ++t) {
            double prod = 1.0;
            for (int c : term) prod *= traj.samples(t, c - 1);
            sum += prod;
        }
        out[idx++] = sum / static_cast<double>(len);
    }
    return out;
}

// Empirical autocorrelation of one component at the requested lag times,
// mean-removed and normalized by the lag-0 autocovariance.
inline Vector compute_acf(const Trajectory& traj, int component, const std::vector<double>& lags,
                          double burn_in = 0.0) {
    detail::check_component(traj, component);
    const Eigen::Index start = detail::window_start(traj, burn_in);
    const Eigen::Index len = traj.steps() - start;
    const auto x = traj.samples.col(component - 1).segment(start, len);
    const double mean = x.mean();
    const double denom = (x.array() - mean).square().sum();
    if (denom <= 0.0) throw Error("compute_acf: zero-variance window");

    Vector out(static_cast<Eigen::Index>(lags.size()));
    for (std::size_t i = 0; i < lags.size(); ++i) {
        const Eigen::Index k = detail::lag_to_steps(lags[i], traj.dt);
        if (k >= len) {
            throw WindowTooShort("lag " + detail::format_number(lags[i]) +
                                 " exceeds the post-burn-in window");
        }
        double num = 0.0;
        for (Eigen::Index t = 0; t < len - k; ++t) {
            num += (x[t] - mean) * (x[t + k] - mean);
        }
        out[static_cast<Eigen::Index>(i)] = num / denom;
    }
    return out;
}

namespace detail {

// Welch-averaged one-sided periodogram: Hann window, 50% overlap,
// per-segment constant detrend, density scaling. Returns (frequencies,
// power) for bins 1 .. L/2-1; DC and Nyquist are dropped.
inline std::pair<Vector, Vector> welch_psd(const Eigen::Ref<const Vector>& x, double dt,
                                           int n_segments) {
    const auto n = static_cast<std::size_t>(x.size());
    if (n_segments < 1) throw Error("welch: need at least one segment");
    // With 50% overlap, k segments of length L span (k+1)*L/2 samples.
    const std::size_t max_len = (2 * n) / static_cast<std::size_t>(n_segments + 1);
    const std::size_t seg_len = floor_pow2(max_len);
    if (seg_len < 16) {
        throw WindowTooShort("welch: window supports no usable segment length");
    }
    const std::size_t hop = seg_len / 2;
    const std::size_t n_seg = (n - seg_len) / hop + 1;

    std::vector<double> window(seg_len);
    double win_power = 0.0;
    for (std::size_t l = 0; l < seg_len; ++l) {
        window[l] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(l) /
                                          static_cast<double>(seg_len - 1)));
        win_power += window[l] * window[l];
    }
    const double fs = 1.0 / dt;
    const double scale = 2.0 / (fs * win_power);

    const std::size_t n_bins = seg_len / 2 - 1;
    Vector power = Vector::Zero(static_cast<Eigen::Index>(n_bins));
    std::vector<std::complex<double>> buf(seg_len);
    for (std::size_t s = 0; s < n_seg; ++s) {
        const std::size_t off = s * hop;
        double seg_mean = 0.0;
        for (std::size_t l = 0; l < seg_len; ++l) seg_mean += x[static_cast<Eigen::Index>(off + l)];
        seg_mean /= static_cast<double>(seg_len);
        for (std::size_t l = 0; l < seg_len; ++l) {
            buf[l] = {(x[static_cast<Eigen::Index>(off + l)] - seg_mean) * window[l], 0.0};
        }
        fft_radix2(buf);
        for (std::size_t k = 1; k <= n_bins; ++k) {
            power[static_cast<Eigen::Index>(k - 1)] += std::norm(buf[k]);
        }
    }
    power *= scale / static_cast<double>(n_seg);

    Vector freq(static_cast<Eigen::Index>(n_bins));
    for (std::size_t k = 1; k <= n_bins; ++k) {
        freq[static_cast<Eigen::Index>(k - 1)] =
            static_cast<double>(k) * fs / static_cast<double>(seg_len);
    }
    return {freq, power};
}

}  // namespace detail

// Least-squares coefficients (constant term first) of a polynomial in
// frequency fitted to log10 of the Welch periodogram over the band. The
// fit is performed in scaled frequency for conditioning and mapped back,
// so the returned coefficients apply to physical frequency.
inline Vector compute_psd_polyfit(const Trajectory& traj, int component, int degree,
                                  double f_lo, double f_hi, double burn_in = 0.0,
                                  int welch_segments = 8) {
    detail::check_component(traj, component);
    if (degree < 0) throw Error("psd polyfit: degree must be >= 0");
    const Eigen::Index start = detail::window_start(traj, burn_in);
    const auto x = traj.samples.col(component - 1).segment(start, traj.steps() - start);
    auto [freq, power] = detail::welch_psd(x, traj.dt, welch_segments);

    const double df = freq[0];
    const double nyquist = 0.5 / traj.dt;
    double lo = f_lo, hi = f_hi;
    if (hi <= 0.0) {
        // Default band: skip the two lowest nonzero bins, cap at half-Nyquist.
        lo = std::max(lo, 2.5 * df);
        hi = 0.5 * nyquist;
    }

    std::vector<Eigen::Index> bins;
    for (Eigen::Index k = 0; k < freq.size(); ++k) {
        if (freq[k] >= lo - 1e-12 && freq[k] <= hi + 1e-12) bins.push_back(k);
    }
    if (bins.size() < static_cast<std::size_t>(degree) + 1) {
        throw EmptyBand("psd polyfit: band [" + detail::format_number(lo) + ", " +
                        detail::format_number(hi) + "] holds " + std::to_string(bins.size()) +
                        " Welch bins, need " + std::to_string(degree + 1));
    }

    const double f_scale = std::max(std::abs(lo), std::abs(hi));
    Matrix vand(static_cast<Eigen::Index>(bins.size()), degree + 1);
    Vector rhs(static_cast<Eigen::Index>(bins.size()));
    for (std::size_t r = 0; r < bins.size(); ++r) {
        const double u = freq[bins[r]] / f_scale;
        double up = 1.0;
        for (int d = 0; d <= degree; ++d) {
            vand(static_cast<Eigen::Index>(r), d) = up;
            up *= u;
        }
        const double p = power[bins[r]];
        rhs[static_cast<Eigen::Index>(r)] = std::log10(std::max(p, 1e-300));
    }
    Vector coeff = vand.colPivHouseholderQr().solve(rhs);
    double inv_scale = 1.0;
    for (int d = 0; d <= degree; ++d) {
        coeff[d] *= inv_scale;
        inv_scale /= f_scale;
    }
    return coeff;
}

inline Vector compute_psd_polyfit(const Trajectory& traj, const PsdRequest& req, double burn_in) {
    return compute_psd_polyfit(traj, req.component, req.degree, req.f_lo, req.f_hi, burn_in,
                               req.welch_segments);
}

// Concatenation in spec order: moments, then ACF entries, then PSD
// coefficients. Gamma is left empty; estimate_gamma fills it.
inline DataVector assemble_data(const Trajectory& traj, const StatisticsSpec& spec) {
    DataVector out;
    out.values.resize(static_cast<Eigen::Index>(spec.dimension()));
    Eigen::Index at = 0;

    const Vector moments = compute_moments(traj, spec);
    for (Eigen::Index i = 0; i < moments.size(); ++i) {
        std::string label = "m[";
        const auto& term = spec.moment_terms[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < term.size(); ++j) {
            label += (j ? "," : "") + std::to_string(term[j]);
        }
        label += "]";
        out.labels.push_back(label);
        out.values[at++] = moments[i];
    }
    for (const auto& req : spec.acf_requests) {
        const Vector acf = compute_acf(traj, req.component, req.lags, spec.burn_in);
        for (Eigen::Index i = 0; i < acf.size(); ++i) {
            out.labels.push_back("acf[" + std::to_string(req.component) + "]@" +
                                 detail::format_number(req.lags[static_cast<std::size_t>(i)]));
            out.values[at++] = acf[i];
        }
    }
    for (const auto& req : spec.psd_requests) {
        const Vector coeff = compute_psd_polyfit(traj, req, spec.burn_in);
        for (Eigen::Index i = 0; i < coeff.size(); ++i) {
            out.labels.push_back("psd[" + std::to_string(req.component) + "]c" +
                                 std::to_string(i));
            out.values[at++] = coeff[i];
        }
    }
    return out;
}

// Batch-means estimator of the sampling-noise covariance of the
// assembled statistic vector: split the post-burn-in window into
// disjoint blocks, assemble the statistics per block, and scale the
// block covariance down to the covariance of the full-window average.
inline Matrix estimate_gamma(const Trajectory& traj, const StatisticsSpec& spec, int n_batches) {
    if (n_batches < 2) throw Error("estimate_gamma: need at least 2 batches");
    const Eigen::Index start = detail::window_start(traj, spec.burn_in);
    const Eigen::Index len = traj.steps() - start;
    const Eigen::Index block = len / n_batches;
    if (block < 2) throw WindowTooShort("estimate_gamma: blocks would be shorter than 2 samples");

    StatisticsSpec block_spec = spec;
    block_spec.burn_in = 0.0;

    const auto j_dim = static_cast<Eigen::Index>(spec.dimension());
    Matrix stats(n_batches, j_dim);
    for (int b = 0; b < n_batches; ++b) {
        Trajectory piece;
        piece.dt = traj.dt;
        piece.t0 = traj.t0 + static_cast<double>(start + b * block) * traj.dt;
        piece.samples = traj.samples.middleRows(start + static_cast<Eigen::Index>(b) * block, block);
        stats.row(b) = assemble_data(piece, block_spec).values.transpose();
    }
    const Vector mean = stats.colwise().mean();
    Matrix centered = stats.rowwise() - mean.transpose();
    Matrix cov = (centered.transpose() * centered) / static_cast<double>(n_batches - 1);
    return cov / static_cast<double>(n_batches);
}

// Jitter policy applied before any inversion of gamma downstream.
inline Matrix gamma_with_jitter(const Matrix& gamma) {
    const auto j_dim = gamma.rows();
    const double jitter = 1e-8 * gamma.trace() / static_cast<double>(j_dim);
    return gamma + std::max(jitter, 1e-300) * Matrix::Identity(j_dim, j_dim);
}

}  // namespace sdefit
