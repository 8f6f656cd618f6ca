#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdefit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Base class for everything this library throws. Callers that need to
// distinguish failure modes catch the derived types below.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A state component became NaN/Inf during integration. Carries the step
// index so the caller can tell early blow-up from late. The EKI layer
// catches this and applies its failure policy instead of aborting.
class NonFiniteState : public Error {
public:
    NonFiniteState(std::size_t step, const std::string& what_)
        : Error("non-finite state at step " + std::to_string(step) + ": " + what_),
          step(step) {}
    explicit NonFiniteState(long step_)
        : NonFiniteState(static_cast<std::size_t>(step_), "state left the finite range") {}
    std::size_t step;
};

class InsufficientHistory : public Error {
public:
    explicit InsufficientHistory(const std::string& msg) : Error(msg) {}
};

class NonPositiveDamping : public Error {
public:
    explicit NonPositiveDamping(double phi)
        : Error("damping gamma(phi) <= 0 at phi = " + std::to_string(phi)), phi(phi) {}
    double phi;
};

class WindowTooShort : public Error {
public:
    explicit WindowTooShort(const std::string& msg) : Error(msg) {}
};

class EmptyBand : public Error {
public:
    explicit EmptyBand(const std::string& msg) : Error(msg) {}
};

class SingularSystem : public Error {
public:
    explicit SingularSystem(const std::string& msg) : Error(msg) {}
};

class SingularGram : public Error {
public:
    explicit SingularGram(const std::string& msg) : Error(msg) {}
};

class LayoutMismatch : public Error {
public:
    explicit LayoutMismatch(const std::string& msg) : Error(msg) {}
};

class ForwardFailed : public Error {
public:
    explicit ForwardFailed(const std::string& msg) : Error(msg) {}
};

class AllMembersFailed : public Error {
public:
    explicit AllMembersFailed(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

class DataFileError : public Error {
public:
    explicit DataFileError(const std::string& msg) : Error(msg) {}
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& msg)
        : Error("parse error at line " + std::to_string(line) + ": " + msg), line(line) {}
    std::size_t line;
};

class BinMismatch : public Error {
public:
    explicit BinMismatch(const std::string& msg) : Error(msg) {}
};

// Uniformly sampled realization of a state process. Row t of `samples`
// is the state at time t0 + t*dt; column j is the time series of
// component j.
struct Trajectory {
    double dt = 0.0;
    double t0 = 0.0;
    Matrix samples;  // T x n

    Eigen::Index steps() const { return samples.rows(); }
    Eigen::Index dimension() const { return samples.cols(); }
    double duration() const { return dt * static_cast<double>(samples.rows() - 1); }
};

inline bool all_finite(const Eigen::Ref<const Vector>& v) {
    return v.allFinite();
}

// Wrap an angle into [-pi, pi).
inline double wrap_angle(double phi) {
    constexpr double two_pi = 2.0 * M_PI;
    double w = std::fmod(phi + M_PI, two_pi);
    if (w < 0.0) w += two_pi;
    return w - M_PI;
}

}  // namespace sdefit
