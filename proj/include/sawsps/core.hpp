#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sawsps {

// Error categories. Each maps onto a distinct caller reaction: bad arguments
// (DomainError, PreconditionError), bad configuration (ConfigError), and
// analysis outcomes that depend on the data (NoSignalError, FitError).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct PreconditionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NoSignalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw PreconditionError(what);
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Vec2&, const Vec2&) = default;
};

/// A uniformly sampled time trace: values[i] is the sample at t0_ns + i * step_ns.
struct Transient {
  double t0_ns = 0.0;
  double step_ns = 1.0;
  std::vector<double> values;

  [[nodiscard]] std::size_t size() const { return values.size(); }
  [[nodiscard]] double time(std::size_t i) const {
    return t0_ns + static_cast<double>(i) * step_ns;
  }
  /// Rectangle-rule area, sum(values) * step.
  [[nodiscard]] double integral() const {
    return std::accumulate(values.begin(), values.end(), 0.0) * step_ns;
  }
  [[nodiscard]] double peak() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, v);
    return m;
  }
};

inline constexpr double kFwhmPerSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)
inline constexpr double kHcEvNm = 1239.8419843320026;

}  // namespace sawsps
