#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sawsps/cascade.hpp"
#include "sawsps/core.hpp"
#include "sawsps/detector.hpp"
#include "sawsps/emitter.hpp"

namespace sawsps {

// ---- rise/fall fitting -----------------------------------------------------

struct RiseFallFit {
  double t_rise_ns = 0.0;
  double t_fall_ns = 0.0;
  double amplitude = 0.0;
  double t0_ns = 0.0;
  double residual = 0.0;  // weighted sum of squares
  // Parameter order (amplitude, t0, t_rise, t_fall). The amplitude diverges
  // when the two constants coincide; the shape itself stays finite.
  Eigen::Matrix4d covariance = Eigen::Matrix4d::Zero();
  int iterations = 0;

  [[nodiscard]] double sigma_rise() const { return std::sqrt(std::max(0.0, covariance(2, 2))); }
  [[nodiscard]] double sigma_fall() const { return std::sqrt(std::max(0.0, covariance(3, 3))); }
};

struct FitOptions {
  std::optional<Irf> irf;  // reconvolution fit when set
  bool poisson_weights = false;
  double noise_floor_fraction = 0.05;
  int min_signal_bins = 10;
  int max_iterations = 500;
  double relative_tolerance = 1e-8;
};

/// A (e^{-(t-t0)/t_fall} - e^{-(t-t0)/t_rise}) for t >= t0, else 0.
inline double rise_fall_model(double t, double amplitude, double t0, double t_rise, double t_fall) {
  const double u = t - t0;
  if (u <= 0.0) return 0.0;
  return amplitude * (std::exp(-u / t_fall) - std::exp(-u / t_rise));
}

namespace detail {

/// (e^{-u/t_fall} - e^{-u/t_rise}) / (1/t_rise - 1/t_fall), which is
/// symmetric in the two constants and tends to u e^{-u/t} when they meet.
inline double rise_fall_shape(double u, double t_rise, double t_fall) {
  if (u <= 0.0) return 0.0;
  const double delta = 1.0 / t_rise - 1.0 / t_fall;
  const double x = u * delta;
  const double ratio = std::abs(x) < 1e-12 ? u : -std::expm1(-x) / delta;
  return std::exp(-u / t_fall) * ratio;
}

// Internal parameters: (B, t0, ln t_rise, ln t_fall) with
// B = A (1/t_rise - 1/t_fall), regular through t_rise = t_fall.
using FitParams = Eigen::Vector4d;

class RiseFallProblem {
 public:
  RiseFallProblem(const Transient& data, const FitOptions& options) : data_(data), options_(options) {
    weights_.resize(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
      weights_[static_cast<Eigen::Index>(i)] =
          options.poisson_weights ? 1.0 / std::max(1.0, data.values[i]) : 1.0;
    }
  }

  [[nodiscard]] Eigen::VectorXd model(const FitParams& p) const {
    Transient m{data_.t0_ns, data_.step_ns, std::vector<double>(data_.size())};
    const double tr = std::exp(p[2]);
    const double tf = std::exp(p[3]);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      m.values[i] = p[0] * rise_fall_shape(data_.time(i) - p[1], tr, tf);
    }
    if (options_.irf) m = convolve_irf_same(m, *options_.irf);
    return Eigen::Map<const Eigen::VectorXd>(m.values.data(), static_cast<Eigen::Index>(m.size()));
  }

  [[nodiscard]] Eigen::VectorXd residuals(const FitParams& p) const {
    const Eigen::Map<const Eigen::VectorXd> y(data_.values.data(), static_cast<Eigen::Index>(data_.size()));
    return y - model(p);
  }

  [[nodiscard]] double cost(const FitParams& p) const {
    const Eigen::VectorXd r = residuals(p);
    return (r.array().square() * weights_.array()).sum();
  }

  [[nodiscard]] Eigen::MatrixXd jacobian(const FitParams& p) const {
    Eigen::MatrixXd jac(static_cast<Eigen::Index>(data_.size()), 4);
    for (int k = 0; k < 4; ++k) {
      const double h = 1e-6 * std::max(std::abs(p[k]), k == 1 ? data_.step_ns : 1e-3);
      FitParams up = p, down = p;
      up[k] += h;
      down[k] -= h;
      jac.col(k) = (model(up) - model(down)) / (2.0 * h);
    }
    return jac;
  }

  // Poisson weights from the model instead of the data; the data-weighted
  // form biases the fit towards low counts.
  void reweight_from_model(const FitParams& p) {
    if (!options_.poisson_weights) return;
    const Eigen::VectorXd m = model(p);
    const double floor = std::max(1.0, 1e-3 * m.maxCoeff());
    for (Eigen::Index i = 0; i < m.size(); ++i) weights_[i] = 1.0 / std::max(floor, m[i]);
  }

  [[nodiscard]] double step() const { return data_.step_ns; }
  [[nodiscard]] double earliest_onset() const { return data_.t0_ns - data_.step_ns; }
  // Time constants are kept within [1e-3 step, 100 x window] in log space.
  [[nodiscard]] double log_tau_min() const { return std::log(1e-3 * data_.step_ns); }
  [[nodiscard]] double log_tau_max() const {
    return std::log(100.0 * data_.step_ns * static_cast<double>(data_.size()));
  }
  [[nodiscard]] double signal_energy() const {
    const Eigen::Map<const Eigen::VectorXd> y(data_.values.data(), static_cast<Eigen::Index>(data_.size()));
    return (y.array().square() * weights_.array()).sum();
  }
  [[nodiscard]] const Eigen::VectorXd& weights() const { return weights_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

 private:
  const Transient& data_;
  const FitOptions& options_;
  Eigen::VectorXd weights_;
};

struct LmOutcome {
  FitParams params;
  double cost;
  int iterations;
  bool converged;
};

inline LmOutcome levenberg_marquardt(const RiseFallProblem& problem, FitParams p, const FitOptions& options) {
  double cost = problem.cost(p);
  double mu = 1e-3;
  int stalled = 0;
  const double exact_fit = 1e-16 * problem.signal_energy();  // rms misfit 1e-8 of the signal
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    const Eigen::MatrixXd jac = problem.jacobian(p);
    const Eigen::VectorXd r = problem.residuals(p);
    const Eigen::MatrixXd jtw = jac.transpose() * problem.weights().asDiagonal();
    const Eigen::Matrix4d normal = jtw * jac;
    const Eigen::Vector4d gradient = jtw * r;
    bool accepted = false;
    for (int attempt = 0; attempt < 40 && !accepted; ++attempt) {
      Eigen::Matrix4d damped = normal;
      for (int k = 0; k < 4; ++k) damped(k, k) += mu * std::max(normal(k, k), 1e-12);
      Eigen::Vector4d delta = damped.ldlt().solve(gradient);
      // The onset cannot precede the data by more than a bin; otherwise a
      // pure decay lets the unresolved rise slide out of the window. At the
      // bound, t0 is frozen and the other three parameters are re-solved.
      const double bound = problem.earliest_onset();
      if (delta.allFinite() && p[1] + delta[1] < bound) {
        Eigen::Matrix4d reduced = damped;
        Eigen::Vector4d g = gradient;
        reduced.row(1).setZero();
        reduced.col(1).setZero();
        reduced(1, 1) = 1.0;
        g[1] = bound - p[1];
        for (int k = 0; k < 4; ++k) {
          if (k != 1) g[k] -= damped(k, 1) * g[1];
        }
        delta = reduced.ldlt().solve(g);
      }
      if (!delta.allFinite()) {
        mu *= 10.0;
        continue;
      }
      FitParams trial = p + delta;
      trial[1] = std::max(trial[1], bound);
      for (int k = 2; k < 4; ++k) trial[k] = std::clamp(trial[k], problem.log_tau_min(), problem.log_tau_max());
      const double trial_cost = problem.cost(trial);
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        double change = 0.0;
        for (int k = 0; k < 4; ++k) {
          change = std::max(change, std::abs(trial[k] - p[k]) / std::max(std::abs(p[k]), 1e-12));
        }
        const double old_cost = cost;
        p = trial;
        cost = trial_cost;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (change < options.relative_tolerance) return {p, cost, iter, true};
        // A parameter the data cannot pin down (a vanishing rise time) can
        // drift forever at constant cost; stop once the cost has settled.
        stalled = old_cost - cost <= 1e-10 * old_cost ? stalled + 1 : 0;
        if (stalled >= 5 || cost <= exact_fit) return {p, cost, iter, true};
        // A rise far below the sampling step is unresolved; stop there.
        if (std::exp(std::min(p[2], p[3])) < 0.05 * problem.step()) return {p, cost, iter, true};
      } else {
        mu *= 4.0;
      }
    }
    // No damping gives descent: p is a minimum to working precision.
    if (!accepted) return {p, cost, iter, true};
  }
  return {p, cost, options.max_iterations, false};
}

inline double peak_time_ratio_rise(double t_fall, double dt_peak) {
  // t_peak = ln(f/r) r f / (f - r) for r < f; invert for r by bisection.
  double lo = 1e-6 * t_fall, hi = t_fall * (1.0 - 1e-9);
  auto peak = [&](double r) { return std::log(t_fall / r) * r * t_fall / (t_fall - r); };
  if (dt_peak <= peak(lo)) return lo;
  if (dt_peak >= peak(hi)) return 0.5 * t_fall;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    (peak(mid) < dt_peak ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Least-squares fit of the two-step rise/fall form, multistarted from three
/// heuristic initial guesses. The larger constant (the one that controls the
/// tail) is reported as t_fall.
inline RiseFallFit fit_rise_fall(const Transient& data, const FitOptions& options = {}) {
  const double peak = data.peak();
  if (!(peak > 0.0)) throw NoSignalError("insufficient signal: transient has no positive maximum");
  int above = 0;
  for (double v : data.values) above += v > options.noise_floor_fraction * peak ? 1 : 0;
  if (above < options.min_signal_bins) throw NoSignalError("insufficient signal: too few bins above noise floor");

  const auto peak_index = static_cast<std::size_t>(
      std::max_element(data.values.begin(), data.values.end()) - data.values.begin());
  const double t_peak = data.time(peak_index);
  double t_start = data.time(0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.values[i] >= 0.02 * peak) {
      t_start = data.time(i > 0 ? i - 1 : 0);
      break;
    }
  }
  if (options.irf) t_start += options.irf->sigma_ns();

  // Tail slope from log-linear regression between 80% and 5% of the peak.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = peak_index; i < data.size(); ++i) {
    const double v = data.values[i];
    if (v < 0.05 * peak) break;
    if (v > 0.8 * peak) continue;
    const double x = data.time(i), y = std::log(v);
    sx += x, sy += y, sxx += x * x, sxy += x * y, ++n;
  }
  double t_fall0 = 1.0;
  if (n >= 2) {
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if (slope < 0.0) t_fall0 = -1.0 / slope;
  }
  const double rise_span = std::max(t_peak - t_start, data.step_ns);
  const std::array<double, 3> rise_guesses{detail::peak_time_ratio_rise(t_fall0, rise_span), 0.5 * rise_span,
                                           t_fall0 / 3.0};

  detail::RiseFallProblem problem(data, options);
  std::optional<detail::LmOutcome> best;
  for (double tr : rise_guesses) {
    tr = std::clamp(tr, 1e-3 * t_fall0, 0.95 * t_fall0);
    const double t0 = std::max(std::min(t_start, t_peak - data.step_ns), problem.earliest_onset());
    const double shape = detail::rise_fall_shape(t_peak - t0, tr, t_fall0);
    const double b = shape > 0.0 ? peak / shape : peak;
    detail::FitParams p0{b, t0, std::log(tr), std::log(t_fall0)};
    auto outcome = detail::levenberg_marquardt(problem, p0, options);
    if (!outcome.converged || !outcome.params.allFinite()) continue;
    // Equal constants are a stationary point of the symmetric shape, so LM
    // can settle there from the wrong side. Split them and try again.
    if (std::abs(outcome.params[2] - outcome.params[3]) < 0.02) {
      detail::FitParams split = outcome.params;
      split[2] -= 0.3;
      split[3] += 0.3;
      auto retry = detail::levenberg_marquardt(problem, split, options);
      if (retry.converged && retry.params.allFinite() && retry.cost < outcome.cost) outcome = retry;
    }
    if (!best || outcome.cost < best->cost) best = outcome;
  }
  if (!best) throw FitError("rise/fall fit did not converge from any start");
  // Counting data: iterate the weights onto the fitted model.
  for (int round = 0; round < 4 && options.poisson_weights; ++round) {
    problem.reweight_from_model(best->params);
    auto refit = detail::levenberg_marquardt(problem, best->params, options);
    if (!refit.converged || !refit.params.allFinite()) break;
    const bool settled = (refit.params - best->params).cwiseAbs().maxCoeff() < 1e-6;
    refit.iterations += best->iterations;
    best = refit;
    if (settled) break;
  }

  detail::FitParams p = best->params;
  // The shape is symmetric in the two constants; the larger one sets the tail.
  if (p[2] > p[3]) std::swap(p[2], p[3]);
  const double tr = std::exp(p[2]), tf = std::exp(p[3]);
  const double delta = 1.0 / tr - 1.0 / tf;
  RiseFallFit fit;
  fit.t_rise_ns = tr;
  fit.t_fall_ns = tf;
  fit.amplitude = delta > 0.0 ? p[0] / delta : std::numeric_limits<double>::infinity();
  fit.t0_ns = p[1];
  fit.residual = best->cost;
  fit.iterations = best->iterations;

  const Eigen::MatrixXd jac = problem.jacobian(p);
  const Eigen::Matrix4d normal = jac.transpose() * problem.weights().asDiagonal() * jac;
  const double dof = std::max<double>(1.0, static_cast<double>(problem.size()) - 4.0);
  Eigen::Matrix4d cov = normal.completeOrthogonalDecomposition().pseudoInverse() * (best->cost / dof);
  // Map to (A, t0, t_rise, t_fall).
  Eigen::Matrix4d jt = Eigen::Matrix4d::Identity();
  if (delta > 0.0) {
    jt(0, 0) = 1.0 / delta;
    jt(0, 2) = p[0] / (tr * delta * delta);
    jt(0, 3) = -p[0] / (tf * delta * delta);
  }
  jt(2, 2) = tr;
  jt(3, 3) = tf;
  cov = jt * cov * jt.transpose();
  fit.covariance = cov;
  return fit;
}

// ---- power laws ------------------------------------------------------------

struct PowerLawFit {
  double slope = 0.0;
  double slope_stderr = 0.0;
  double intercept = 0.0;  // ln y at ln x = 0
};

inline PowerLawFit powerlaw_exponent(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw PreconditionError("x and y sizes differ");
  if (x.size() < 3) throw PreconditionError("power-law fit needs at least 3 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("power-law fit needs positive values");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  const auto n = static_cast<double>(lx.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i], my += ly[i];
  mx /= n, my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw DomainError("power-law fit needs distinct x values");
  PowerLawFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double r = ly[i] - fit.intercept - fit.slope * lx[i];
    ss += r * r;
  }
  fit.slope_stderr = n > 2 ? std::sqrt(ss / (n - 2.0) / sxx) : 0.0;
  return fit;
}

// ---- onset delays ----------------------------------------------------------

struct DelayPoint {
  double g = 0.0;
  std::vector<double> onset_ns;          // per level, threshold onset of the emission trace
  std::vector<double> mean_time_ns;      // per level, first moment of the emission trace
  std::vector<double> mean_time_exact_ns;  // per level, closed-form first moment
};

struct DelayOptions {
  double threshold_fraction = 0.1;
  double step_ns = 0.0;     // 0 = min lifetime / 100
  double horizon_ns = 0.0;  // 0 = 15 x sum of lifetimes
};

/// Expected first-moment emission time of transition `level` for a single
/// Poisson-loaded pulse.
inline double mean_emission_time(const CascadeModel& model, double g, int level) {
  const auto p = initial_loading(g, model.num_levels());
  double weight = 0.0, moment = 0.0;
  for (int k = level; k <= model.num_levels(); ++k) {
    double t = 0.0;
    for (int j = level; j <= k; ++j) t += model.lifetime(j);
    weight += p[static_cast<std::size_t>(k)];
    moment += p[static_cast<std::size_t>(k)] * t;
  }
  return weight > 0.0 ? moment / weight : 0.0;
}

inline std::vector<DelayPoint> onset_delay_curve(const CascadeModel& model, const std::vector<double>& g_list,
                                                 const DelayOptions& options = {}) {
  for (std::size_t i = 0; i < g_list.size(); ++i) {
    if (!(g_list[i] > 0.0)) throw PreconditionError("g values must be positive");
    if (i > 0 && !(g_list[i] > g_list[i - 1])) throw PreconditionError("g values must be ascending");
  }
  double tau_sum = 0.0;
  for (double tau : model.lifetimes()) tau_sum += tau;
  const double step = options.step_ns > 0.0 ? options.step_ns : model.min_lifetime() / 100.0;
  const double horizon = options.horizon_ns > 0.0 ? options.horizon_ns : 15.0 * tau_sum;
  std::vector<DelayPoint> out;
  for (double g : g_list) {
    const OccupancyTrace trace = pumped_single_pulse(model, g, horizon, step);
    DelayPoint point{g, {}, {}, {}};
    for (int i = 1; i <= model.num_levels(); ++i) {
      const Transient rate = emission_rate_trace(trace, i);
      point.onset_ns.push_back(onset_time(rate, options.threshold_fraction));
      double w = 0.0, m = 0.0;
      for (std::size_t j = 0; j < rate.size(); ++j) {
        // Trapezoid weights; the trace starts at t = 0.
        const double c = (j == 0 || j + 1 == rate.size()) ? 0.5 : 1.0;
        w += c * rate.values[j];
        m += c * rate.values[j] * rate.time(j);
      }
      point.mean_time_ns.push_back(w > 0.0 ? m / w : 0.0);
      point.mean_time_exact_ns.push_back(mean_emission_time(model, g, i));
    }
    out.push_back(std::move(point));
  }
  return out;
}

// ---- g2 --------------------------------------------------------------------

enum class G2Normalization { kPulsedPeakArea, kContinuousRate };

struct G2Histogram {
  double bin_ns = 0.1;
  double max_delay_ns = 0.0;
  double pulse_period_ns = 0.0;
  std::vector<double> delay_ns;  // bin centres, symmetric about 0
  std::vector<std::uint64_t> counts;
  std::uint64_t photons = 0;
  // Coincidences per pulse-period window k = -K..K (window k covers delays
  // within half a period of k * period).
  std::vector<double> peak_areas;
  double zero_peak_area = 0.0;
  double mean_side_peak_area = 0.0;
  int side_peaks = 0;
  std::optional<double> zero_peak_ratio;  // pulsed normalization
};

/// Recomputes the zero-peak / mean side-peak ratio from the peak areas.
inline void finalize_g2(G2Histogram& h) {
  const long side_max = (static_cast<long>(h.peak_areas.size()) - 1) / 2;
  h.zero_peak_area = 0.0;
  h.mean_side_peak_area = 0.0;
  h.side_peaks = 0;
  h.zero_peak_ratio.reset();
  if (side_max < 0 || h.peak_areas.empty()) return;
  h.zero_peak_area = h.peak_areas[static_cast<std::size_t>(side_max)];
  if (side_max < 1) return;
  double side = 0.0;
  for (long k = 1; k <= side_max; ++k) {
    side += h.peak_areas[static_cast<std::size_t>(side_max + k)] + h.peak_areas[static_cast<std::size_t>(side_max - k)];
  }
  h.side_peaks = static_cast<int>(2 * side_max);
  h.mean_side_peak_area = side / h.side_peaks;
  if (h.mean_side_peak_area > 0.0) h.zero_peak_ratio = h.zero_peak_area / h.mean_side_peak_area;
}

/// Sums histograms of independent runs taken with identical settings.
inline void merge_g2(G2Histogram& into, const G2Histogram& other) {
  require(into.counts.size() == other.counts.size() && into.peak_areas.size() == other.peak_areas.size() &&
              into.bin_ns == other.bin_ns && into.pulse_period_ns == other.pulse_period_ns,
          "g2 histograms with different settings cannot be merged");
  for (std::size_t i = 0; i < into.counts.size(); ++i) into.counts[i] += other.counts[i];
  for (std::size_t i = 0; i < into.peak_areas.size(); ++i) into.peak_areas[i] += other.peak_areas[i];
  into.photons += other.photons;
  finalize_g2(into);
}

/// All-pairs start/stop coincidences of a (time-sorted) stream with itself.
/// Each pair is counted at +d and -d, so the histogram is exactly symmetric.
inline G2Histogram g2_histogram(const PhotonStream& stream, const std::optional<std::string>& transition,
                                double max_delay_ns, double bin_ns, double pulse_period_ns) {
  require(bin_ns > 0.0, "g2 bin must be > 0");
  require(max_delay_ns > 0.0 && pulse_period_ns > 0.0, "g2 needs positive max delay and pulse period");
  std::vector<double> t;
  for (const auto& p : stream) {
    if (!transition || p.transition == *transition) t.push_back(p.time_ns);
  }
  for (std::size_t i = 1; i < t.size(); ++i) require(t[i] >= t[i - 1], "g2 needs a time-sorted stream");

  G2Histogram h;
  h.bin_ns = bin_ns;
  h.max_delay_ns = max_delay_ns;
  h.pulse_period_ns = pulse_period_ns;
  h.photons = t.size();
  const auto half = static_cast<long>(std::floor(max_delay_ns / bin_ns + 0.5));
  h.counts.assign(static_cast<std::size_t>(2 * half + 1), 0);
  for (long b = -half; b <= half; ++b) h.delay_ns.push_back(static_cast<double>(b) * bin_ns);
  const long side_max = static_cast<long>(std::floor(max_delay_ns / pulse_period_ns - 0.5));
  std::vector<double>& peak_area = h.peak_areas;
  if (side_max >= 0) peak_area.assign(static_cast<std::size_t>(2 * side_max + 1), 0.0);

  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      const double d = t[j] - t[i];
      if (d > max_delay_ns) break;
      const auto b = static_cast<long>(std::floor(d / bin_ns + 0.5));
      if (b <= half) {
        h.counts[static_cast<std::size_t>(half + b)] += 1;
        h.counts[static_cast<std::size_t>(half - b)] += 1;
      }
      const auto k = static_cast<long>(std::floor(d / pulse_period_ns + 0.5));
      if (side_max >= 0 && k <= side_max) {
        peak_area[static_cast<std::size_t>(side_max + k)] += 1.0;
        peak_area[static_cast<std::size_t>(side_max - k)] += 1.0;
      }
    }
  }
  finalize_g2(h);
  return h;
}

/// g2(tau) for a stationary stream of `duration_ns`: counts / (N^2 bin / T).
inline std::vector<double> g2_continuous(const G2Histogram& h, double duration_ns) {
  require(duration_ns > 0.0, "duration must be > 0");
  std::vector<double> g(h.counts.size(), 0.0);
  const double n = static_cast<double>(h.photons);
  if (n < 2) return g;
  const double expected = n * n * h.bin_ns / duration_ns;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(h.counts[i]) / expected;
  return g;
}

inline void write_g2_csv(std::ostream& os, const G2Histogram& h) {
  os << "delay_ns,coincidences\n";
  char buf[96];
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g,%llu\n", h.delay_ns[i], static_cast<unsigned long long>(h.counts[i]));
    os << buf;
  }
}

// ---- intrinsic lifetime protocol -------------------------------------------

struct ContaminationError : PreconditionError {
  using PreconditionError::PreconditionError;
};

/// Expected transient of transition `level` at mean loading g.
using TransientSimulator = std::function<Transient(double g, int level)>;

inline TransientSimulator expected_transient_simulator(const CascadeModel& model, double step_ns = 0.0,
                                                       double horizon_ns = 0.0) {
  double tau_sum = 0.0;
  for (double tau : model.lifetimes()) tau_sum += tau;
  const double step = step_ns > 0.0 ? step_ns : model.min_lifetime() / 100.0;
  const double horizon = horizon_ns > 0.0 ? horizon_ns : 15.0 * tau_sum;
  return [model, step, horizon](double g, int level) {
    return emission_rate_trace(pumped_single_pulse(model, g, horizon, step), level);
  };
}

/// Fraction of transition-i photons whose cascade started above level i.
inline double contamination(const CascadeModel& model, double g, int level) {
  model.check_level(level);
  if (level == model.num_levels()) return 0.0;
  const double reached = poisson_tail(g, level);
  return reached > 0.0 ? poisson_tail(g, level + 1) / reached : 0.0;
}

struct LifetimeProtocolOptions {
  double contamination_limit = 0.01;
  std::vector<double> g_override;  // one g per level; empty = choose
  double tail_floor_fraction = 0.05;
};

/// For each level, choose a pump where it is (almost always) the highest
/// occupied level, then read its lifetime off the decay of its transient.
inline std::vector<double> measure_intrinsic_lifetimes(const CascadeModel& model, const TransientSimulator& simulator,
                                                       const LifetimeProtocolOptions& options = {}) {
  const int levels = model.num_levels();
  if (!options.g_override.empty() && options.g_override.size() != static_cast<std::size_t>(levels)) {
    throw PreconditionError("g_override needs one value per level");
  }
  std::vector<double> estimates;
  for (int i = 1; i <= levels; ++i) {
    double g = 0.0;
    if (!options.g_override.empty()) {
      g = options.g_override[static_cast<std::size_t>(i - 1)];
      if (contamination(model, g, i) >= options.contamination_limit) {
        throw ContaminationError("g = " + std::to_string(g) + " populates levels above " + std::to_string(i));
      }
    } else if (i == levels) {
      g = 2.0 * levels;
    } else {
      // contamination grows monotonically with g; aim at half the limit.
      double lo = 1e-9, hi = 50.0;
      const double target = 0.5 * options.contamination_limit;
      for (int it = 0; it < 200; ++it) {
        const double mid = std::sqrt(lo * hi);
        (contamination(model, mid, i) < target ? lo : hi) = mid;
      }
      g = lo;
    }
    const Transient tr = simulator(g, i);
    const double peak = tr.peak();
    if (!(peak > 0.0)) throw NoSignalError("no signal for level " + std::to_string(i));
    const auto top = static_cast<std::size_t>(std::max_element(tr.values.begin(), tr.values.end()) - tr.values.begin());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (std::size_t j = top; j < tr.size(); ++j) {
      if (tr.values[j] < options.tail_floor_fraction * peak) break;
      const double x = tr.time(j), y = std::log(tr.values[j]);
      sx += x, sy += y, sxx += x * x, sxy += x * y, ++n;
    }
    if (n < 3) throw FitError("tail too short for level " + std::to_string(i));
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if (!(slope < 0.0)) throw FitError("tail does not decay for level " + std::to_string(i));
    estimates.push_back(-1.0 / slope);
  }
  return estimates;
}

// ---- spatial emission metrics ---------------------------------------------

/// Axis-aligned rectangle on the sample plane.
struct FieldRect {
  Vec2 origin_um;  // lower-left corner
  double width_um = 10.0;
  double height_um = 10.0;
};

/// Share of the emission coming from the half of the field that faces the
/// wave source (direction +1 travels towards +x).
inline double upstream_fraction(const EmitterWeights& emitters, const FieldRect& field, int direction) {
  const double mid = field.origin_um.x + 0.5 * field.width_um;
  double up = 0.0, total = 0.0;
  for (const auto& [pos, w] : emitters) {
    total += w;
    if (direction * (pos.x - mid) < 0.0) up += w;
  }
  if (!(total > 0.0)) throw NoSignalError("no emission in field");
  return up / total;
}

/// Emission-weighted illuminated area fraction: the participation ratio
/// (sum I)^2 / (cells * sum I^2) of the intensity binned into square cells.
/// A field lit uniformly gives 1, a single bright cell gives 1 / cells.
inline double illuminated_fraction(const EmitterWeights& emitters, const FieldRect& field, double cell_um) {
  require(cell_um > 0.0, "cell size must be > 0");
  const int nx = std::max(1, static_cast<int>(std::llround(field.width_um / cell_um)));
  const int ny = std::max(1, static_cast<int>(std::llround(field.height_um / cell_um)));
  std::vector<double> cells(static_cast<std::size_t>(nx) * ny, 0.0);
  for (const auto& [pos, w] : emitters) {
    const int ix = static_cast<int>(std::floor((pos.x - field.origin_um.x) / field.width_um * nx));
    const int iy = static_cast<int>(std::floor((pos.y - field.origin_um.y) / field.height_um * ny));
    if (ix < 0 || iy < 0 || ix >= nx || iy >= ny) continue;
    cells[static_cast<std::size_t>(iy) * nx + ix] += w;
  }
  double sum = 0.0, sum_sq = 0.0;
  for (double c : cells) sum += c, sum_sq += c * c;
  if (!(sum > 0.0)) throw NoSignalError("no emission in field");
  return sum * sum / (static_cast<double>(cells.size()) * sum_sq);
}

}  // namespace sawsps
