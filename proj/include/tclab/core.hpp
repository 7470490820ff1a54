#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tclab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Seeded generator used by every sampler in the library.
using Rng = std::mt19937_64;

// Error hierarchy ------------------------------------------------------------

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: dimension mismatch, non-stochastic table, bad step size.
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// Some state cannot reach a terminating state under the option's policy.
class TerminationReachabilityError : public Error {
  public:
    using Error::Error;
};

/// Evaluation problem with no finite fixed point (gamma = 1 on an improper chain).
class ConvergenceError : public Error {
  public:
    using Error::Error;
};

/// A ratio that needs P(x|x_s) > 0 was requested for an unreachable x.
class ZeroOccupancyError : public Error {
  public:
    using Error::Error;
};

/// A sampled trajectory was cut at its cap before the option terminated.
class UnterminatedTrajectoryError : public Error {
  public:
    using Error::Error;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
    std::ostringstream oss;
    (oss << ... << std::forward<Args>(args));
    return oss.str();
}

template <typename E = ValidationError, typename... Args>
void require(bool condition, Args&&... args) {
    if (!condition) throw E(concat(std::forward<Args>(args)...));
}

inline void require_square(const Matrix& m, const char* what) {
    require(m.rows() == m.cols(), what, " must be square, got ", m.rows(), "x", m.cols());
}

inline void require_index(Index i, Index n, const char* what) {
    require(i >= 0 && i < n, what, " index ", i, " out of range [0, ", n, ")");
}

inline void require_step_size(double alpha, const char* what) {
    require(alpha >= 0.0 && alpha <= 1.0 && std::isfinite(alpha), what,
            " must lie in [0, 1], got ", alpha);
}

}  // namespace detail

// Probability helpers --------------------------------------------------------

/// Tolerance used when accepting user-supplied probability rows.
inline constexpr double kStochasticTolerance = 1e-9;

/// Validates a probability row and returns it exactly renormalized.
/// Rejects entries below -tol and row sums further than tol from 1;
/// tiny negative entries are clipped to zero before renormalizing.
inline Vector normalized_distribution(const Eigen::Ref<const Vector>& row, const std::string& what,
                                      double tol = kStochasticTolerance) {
    detail::require(row.size() > 0, what, ": empty distribution");
    for (Index i = 0; i < row.size(); ++i) {
        detail::require(std::isfinite(row[i]), what, ": entry ", i, " is not finite");
        detail::require(row[i] >= -tol, what, ": entry ", i, " is negative (", row[i], ")");
    }
    Vector out = row.cwiseMax(0.0);
    const double sum = out.sum();
    detail::require(std::abs(sum - 1.0) <= tol, what, ": sums to ", sum, ", expected 1");
    out /= sum;
    return out;
}

/// Row-wise version of normalized_distribution.
inline Matrix normalized_rows(const Matrix& m, const std::string& what,
                              double tol = kStochasticTolerance) {
    Matrix out(m.rows(), m.cols());
    for (Index r = 0; r < m.rows(); ++r) {
        out.row(r) = normalized_distribution(m.row(r).transpose(), detail::concat(what, " row ", r), tol)
                         .transpose();
    }
    return out;
}

inline double max_row_sum_error(const Matrix& m) {
    if (m.rows() == 0) return 0.0;
    return (m.rowwise().sum().array() - 1.0).abs().maxCoeff();
}

/// Shannon entropy in nats, with 0 log 0 = 0.
inline double entropy(const Eigen::Ref<const Vector>& p) {
    double h = 0.0;
    for (Index i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
    }
    return h;
}

/// Entropy of a Bernoulli(p) variable in nats.
inline double bernoulli_entropy(double p) {
    double h = 0.0;
    if (p > 0.0) h -= p * std::log(p);
    if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
    return h;
}

inline double sigmoid(double logit) {
    if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
    const double e = std::exp(logit);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double total_variation(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    return 0.5 * (a - b).cwiseAbs().sum();
}

inline Vector unit_vector(Index n, Index i) {
    Vector e = Vector::Zero(n);
    e[i] = 1.0;
    return e;
}

// Sampling -------------------------------------------------------------------
//
// The samplers below avoid std::*_distribution so that sequences are identical
// across standard library implementations for a given seed.

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

/// Inverse-CDF draw from a (row-stochastic) probability row.
template <typename Row>
Index sample_categorical(const Row& probs, Rng& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    Index last_positive = 0;
    for (Index i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        acc += probs[i];
        last_positive = i;
        if (u < acc) return i;
    }
    return last_positive;
}

/// Uniform integer in [0, n).
inline Index uniform_index(Rng& rng, Index n) {
    return std::min<Index>(static_cast<Index>(uniform01(rng) * static_cast<double>(n)), n - 1);
}

/// Fisher-Yates permutation of [0, n).
inline std::vector<Index> random_permutation(Index n, Rng& rng) {
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (Index i = n - 1; i > 0; --i) {
        const Index j = uniform_index(rng, i + 1);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    return perm;
}

}  // namespace tclab
