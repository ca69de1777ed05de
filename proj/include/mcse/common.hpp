#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mcse {

using Complex = std::complex<double>;
using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

inline constexpr double kPi = 3.14159265358979323846;

inline double to_degrees(double rad) { return rad * 180.0 / kPi; }
inline double to_radians(double deg) { return deg * kPi / 180.0; }

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input document. Carries the 1-based line and the offending field.
class ParseError : public Error {
public:
    ParseError(const std::string &what, int line, std::string field = {})
        : Error(format(what, line, field)), line_(line), field_(std::move(field)) {}

    int line() const noexcept { return line_; }
    const std::string &field() const noexcept { return field_; }

private:
    static std::string format(const std::string &what, int line, const std::string &field) {
        std::string msg = "line " + std::to_string(line);
        if (!field.empty())
            msg += " (" + field + ")";
        return msg + ": " + what;
    }

    int line_;
    std::string field_;
};

/// Structurally valid input that violates a model invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

class SingularMatrixError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// Iterative method failed to converge. Keeps the residual history.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string &what, std::vector<double> history)
        : Error(what), history_(std::move(history)) {}

    double last_residual() const noexcept { return history_.empty() ? 0.0 : history_.back(); }
    const std::vector<double> &history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

class UnobservableError : public Error {
public:
    UnobservableError(const std::string &what, Index rank, Index unknowns)
        : Error(what), rank_(rank), unknowns_(unknowns) {}

    Index rank() const noexcept { return rank_; }
    Index unknowns() const noexcept { return unknowns_; }

private:
    Index rank_;
    Index unknowns_;
};

} // namespace mcse
