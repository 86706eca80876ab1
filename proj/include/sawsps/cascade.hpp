#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "sawsps/core.hpp"

namespace sawsps {

/// Ordered multiexciton ladder. Level 1 is the single exciton; a dot at level
/// i decays to level i-1 with lifetime tau_i and emits one photon of the
/// transition labelled labels[i-1].
class CascadeModel {
 public:
  CascadeModel() : CascadeModel({1.0}) {}

  explicit CascadeModel(std::vector<double> lifetimes_ns, std::vector<std::string> labels = {})
      : lifetimes_(std::move(lifetimes_ns)), labels_(std::move(labels)) {
    if (lifetimes_.empty()) throw ConfigError("cascade needs at least one level");
    for (double tau : lifetimes_) {
      if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("lifetimes must be positive and finite");
    }
    if (labels_.empty()) {
      for (std::size_t i = 1; i <= lifetimes_.size(); ++i) labels_.push_back(std::to_string(i) + "X");
    }
    if (labels_.size() != lifetimes_.size()) throw ConfigError("one label per lifetime required");
    std::unordered_set<std::string> seen(labels_.begin(), labels_.end());
    if (seen.size() != labels_.size()) throw ConfigError("transition labels must be unique");
  }

  [[nodiscard]] int num_levels() const { return static_cast<int>(lifetimes_.size()); }
  [[nodiscard]] std::span<const double> lifetimes() const { return lifetimes_; }
  [[nodiscard]] std::span<const std::string> labels() const { return labels_; }

  [[nodiscard]] double lifetime(int level) const {
    check_level(level);
    return lifetimes_[static_cast<std::size_t>(level - 1)];
  }
  [[nodiscard]] double rate(int level) const { return 1.0 / lifetime(level); }
  [[nodiscard]] const std::string& label(int level) const {
    check_level(level);
    return labels_[static_cast<std::size_t>(level - 1)];
  }
  [[nodiscard]] int level_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] == label) return static_cast<int>(i) + 1;
    }
    throw PreconditionError("unknown transition label '" + std::string(label) + "'");
  }
  [[nodiscard]] double min_lifetime() const {
    return *std::min_element(lifetimes_.begin(), lifetimes_.end());
  }

  void check_level(int level) const {
    if (level < 1 || level > num_levels()) {
      throw PreconditionError("level " + std::to_string(level) + " outside 1.." +
                              std::to_string(num_levels()));
    }
  }

  friend bool operator==(const CascadeModel&, const CascadeModel&) = default;

 private:
  std::vector<double> lifetimes_;
  std::vector<std::string> labels_;
};

/// Pulsed Poisson loading. g = power_to_g * P when driven from a power axis.
struct PumpSpec {
  double mean_excitons_per_pulse = 0.0;
  double pulse_period_ns = 12.5;
  int num_pulses = 1;
  double power_to_g = 0.1;  // per uW

  void validate() const {
    if (!(mean_excitons_per_pulse >= 0.0)) throw ConfigError("mean_excitons_per_pulse must be >= 0");
    if (!(pulse_period_ns > 0.0)) throw ConfigError("pulse_period_ns must be > 0");
    if (num_pulses < 1) throw ConfigError("num_pulses must be >= 1");
    if (!(power_to_g > 0.0)) throw ConfigError("power_to_g must be > 0");
  }

  [[nodiscard]] double g_for_power(double power_uw) const { return power_to_g * power_uw; }
  [[nodiscard]] double pulse_time(int pulse) const { return pulse * pulse_period_ns; }
};

inline double poisson_pmf(double g, int i) {
  if (!(g >= 0.0) || i < 0) throw DomainError("poisson_pmf needs g >= 0 and i >= 0");
  if (g == 0.0) return i == 0 ? 1.0 : 0.0;
  return std::exp(-g + i * std::log(g) - std::lgamma(i + 1.0));
}

/// P(n >= i) for n ~ Poisson(g), accurate in both tails.
inline double poisson_tail(double g, int i) {
  if (!(g >= 0.0) || i < 0) throw DomainError("poisson_tail needs g >= 0 and i >= 0");
  if (i == 0) return 1.0;
  if (g == 0.0) return 0.0;
  if (i == 1) return -std::expm1(-g);
  if (g < i) {
    // Terms decrease geometrically from j = i; sum upward.
    double term = poisson_pmf(g, i);
    double sum = 0.0;
    for (int j = i; term > sum * 1e-17 && j < i + 10000; ++j) {
      sum += term;
      term *= g / (j + 1);
    }
    return sum;
  }
  double below = 0.0;
  for (int j = 0; j < i; ++j) below += poisson_pmf(g, j);
  return std::max(0.0, 1.0 - below);
}

/// Probability that a pulse leaves the dot at level k, k = 0..N. Loads larger
/// than N fold into level N.
inline std::vector<double> initial_loading(double g, int num_levels) {
  if (num_levels < 1) throw DomainError("initial_loading needs N >= 1");
  std::vector<double> p(static_cast<std::size_t>(num_levels) + 1);
  for (int k = 0; k < num_levels; ++k) p[static_cast<std::size_t>(k)] = poisson_pmf(g, k);
  p[static_cast<std::size_t>(num_levels)] = poisson_tail(g, num_levels);
  return p;
}

/// Expected photons of transition i per pulse: every load n >= i fires it once.
inline double time_integrated_intensity(const CascadeModel& model, double g, int level) {
  model.check_level(level);
  if (!(g >= 0.0)) throw DomainError("g must be >= 0");
  return poisson_tail(g, level);
}

/// Expected-occupancy traces n_i(t) on a uniform grid, i = 1..N.
struct OccupancyTrace {
  CascadeModel model;
  double t0_ns = 0.0;
  double step_ns = 1.0;
  std::vector<std::vector<double>> occupancy;  // [level-1][sample]

  [[nodiscard]] std::size_t size() const { return occupancy.empty() ? 0 : occupancy.front().size(); }
  [[nodiscard]] double time(std::size_t j) const { return t0_ns + static_cast<double>(j) * step_ns; }
  [[nodiscard]] const std::vector<double>& level(int i) const {
    model.check_level(i);
    return occupancy[static_cast<std::size_t>(i - 1)];
  }
};

inline Transient emission_rate_trace(const OccupancyTrace& trace, int level) {
  const auto& n = trace.level(level);
  const double rate = trace.model.rate(level);
  Transient out{trace.t0_ns, trace.step_ns, std::vector<double>(n.size())};
  for (std::size_t j = 0; j < n.size(); ++j) out.values[j] = n[j] * rate;
  return out;
}

/// Closed-form solution of the linear decay chain started with n_k(0) = 1.
///
/// Each n_i is a sum over the decay rates of levels i..k of polynomial times
/// exponential terms, obtained from the partial-fraction expansion of
///   prod_{j=i+1..k} lambda_j / prod_{p=i..k} (s + lambda_p).
/// Rates whose lifetimes agree to within kDegenerateTolerance (relative) are
/// merged into one repeated pole at their mean, which switches that pole to
/// the confluent t^r e^{-lambda t} form. Using the mean keeps the merge error
/// second order in the spread.
class BatemanSolution {
 public:
  static constexpr double kDegenerateTolerance = 1e-6;

  BatemanSolution(CascadeModel model, int start_level) : model_(std::move(model)), start_(start_level) {
    model_.check_level(start_level);
    terms_.resize(static_cast<std::size_t>(start_level));
    for (int i = 1; i <= start_level; ++i) terms_[static_cast<std::size_t>(i - 1)] = expand(i);
  }

  [[nodiscard]] const CascadeModel& model() const { return model_; }
  [[nodiscard]] int start_level() const { return start_; }

  [[nodiscard]] double occupancy(int level, double t_ns) const {
    model_.check_level(level);
    if (level > start_ || t_ns < 0.0) return 0.0;
    double sum = 0.0;
    for (const Pole& pole : terms_[static_cast<std::size_t>(level - 1)]) {
      // Horner in t over coefficients c_r t^r.
      double poly = 0.0;
      for (auto it = pole.coeffs.rbegin(); it != pole.coeffs.rend(); ++it) poly = poly * t_ns + *it;
      sum += poly * std::exp(-pole.rate * t_ns);
    }
    return std::max(0.0, sum);
  }

  [[nodiscard]] double emission_rate(int level, double t_ns) const {
    return occupancy(level, t_ns) * model_.rate(level);
  }

  [[nodiscard]] std::vector<double> evaluate(double t_ns) const {
    std::vector<double> n(static_cast<std::size_t>(model_.num_levels()));
    for (int i = 1; i <= model_.num_levels(); ++i) n[static_cast<std::size_t>(i - 1)] = occupancy(i, t_ns);
    return n;
  }

  /// Mean emission time of the transition-`level` photon: sum of the
  /// lifetimes it has to wait through.
  [[nodiscard]] double mean_emission_time(int level) const {
    model_.check_level(level);
    if (level > start_) throw PreconditionError("transition is not reached from this start level");
    double t = 0.0;
    for (int j = level; j <= start_; ++j) t += model_.lifetime(j);
    return t;
  }

  [[nodiscard]] OccupancyTrace sample(double horizon_ns, double step_ns) const {
    require(step_ns > 0.0 && horizon_ns >= step_ns, "sample needs 0 < step <= horizon");
    const auto count = static_cast<std::size_t>(std::floor(horizon_ns / step_ns + 1e-9)) + 1;
    OccupancyTrace trace{model_, 0.0, step_ns, {}};
    trace.occupancy.assign(static_cast<std::size_t>(model_.num_levels()), std::vector<double>(count));
    for (std::size_t j = 0; j < count; ++j) {
      const double t = static_cast<double>(j) * step_ns;
      for (int i = 1; i <= start_; ++i) trace.occupancy[static_cast<std::size_t>(i - 1)][j] = occupancy(i, t);
    }
    return trace;
  }

 private:
  struct Pole {
    double rate;
    std::vector<double> coeffs;  // n(t) contribution = sum_r coeffs[r] t^r e^{-rate t}
  };

  [[nodiscard]] std::vector<Pole> expand(int level) const {
    // Cluster the rates of levels level..start by lifetime.
    std::vector<double> taus;
    for (int p = level; p <= start_; ++p) taus.push_back(model_.lifetime(p));
    std::sort(taus.begin(), taus.end());
    struct Cluster {
      double rate_sum = 0.0;
      int multiplicity = 0;
      double anchor_tau = 0.0;
      [[nodiscard]] double rate() const { return rate_sum / multiplicity; }
    };
    std::vector<Cluster> clusters;
    for (double tau : taus) {
      if (!clusters.empty() &&
          std::abs(tau - clusters.back().anchor_tau) < kDegenerateTolerance * clusters.back().anchor_tau) {
        clusters.back().rate_sum += 1.0 / tau;
        ++clusters.back().multiplicity;
        clusters.back().anchor_tau = tau;
      } else {
        clusters.push_back({1.0 / tau, 1, tau});
      }
    }

    double prefactor = 1.0;
    for (int j = level + 1; j <= start_; ++j) prefactor *= model_.rate(j);

    std::vector<Pole> poles;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      const double s0 = -clusters[c].rate();
      const int m = clusters[c].multiplicity;
      // h(s) = prod_{q != c} (s + lambda_q)^{-m_q}; derivatives via h' = h L.
      double h0 = 1.0;
      for (std::size_t q = 0; q < clusters.size(); ++q) {
        if (q != c) h0 *= std::pow(s0 + clusters[q].rate(), -clusters[q].multiplicity);
      }
      std::vector<double> dlog(static_cast<std::size_t>(m));  // L^{(j)}(s0)
      double factorial = 1.0;
      for (int j = 0; j < m; ++j) {
        if (j > 0) factorial *= j;
        double sum = 0.0;
        for (std::size_t q = 0; q < clusters.size(); ++q) {
          if (q == c) continue;
          const double base = s0 + clusters[q].rate();
          sum += -clusters[q].multiplicity * ((j % 2 == 0) ? 1.0 : -1.0) * factorial / std::pow(base, j + 1);
        }
        dlog[static_cast<std::size_t>(j)] = sum;
      }
      std::vector<double> h(static_cast<std::size_t>(m));
      h[0] = h0;
      for (int n = 0; n + 1 < m; ++n) {
        double next = 0.0;
        double binom = 1.0;
        for (int j = 0; j <= n; ++j) {
          next += binom * h[static_cast<std::size_t>(n - j)] * dlog[static_cast<std::size_t>(j)];
          binom = binom * (n - j) / (j + 1);
        }
        h[static_cast<std::size_t>(n + 1)] = next;
      }
      // A_r = h^{(m-r)} / (m-r)!, contributes A_r t^{r-1}/(r-1)!.
      Pole pole{clusters[c].rate(), std::vector<double>(static_cast<std::size_t>(m))};
      for (int r = 1; r <= m; ++r) {
        const double a = h[static_cast<std::size_t>(m - r)] / std::tgamma(m - r + 1.0);
        pole.coeffs[static_cast<std::size_t>(r - 1)] = prefactor * a / std::tgamma(static_cast<double>(r));
      }
      poles.push_back(std::move(pole));
    }
    return poles;
  }

  CascadeModel model_;
  int start_;
  std::vector<std::vector<Pole>> terms_;
};

inline BatemanSolution solve_cascade_analytic(const CascadeModel& model, int start_level) {
  return BatemanSolution(model, start_level);
}

/// Instantaneous occupation jumps applied at t = p * period, p < num_pulses.
/// jump[k-1] is added to n_k at every pulse.
struct LoadingSchedule {
  std::vector<double> jump;
  double period_ns = 12.5;
  int num_pulses = 1;

  static LoadingSchedule poisson(const CascadeModel& model, const PumpSpec& pump) {
    pump.validate();
    auto p = initial_loading(pump.mean_excitons_per_pulse, model.num_levels());
    return {std::vector<double>(p.begin() + 1, p.end()), pump.pulse_period_ns, pump.num_pulses};
  }

  static LoadingSchedule deterministic(const CascadeModel& model, int start_level, double period_ns,
                                       int num_pulses) {
    model.check_level(start_level);
    std::vector<double> jump(static_cast<std::size_t>(model.num_levels()), 0.0);
    jump[static_cast<std::size_t>(start_level - 1)] = 1.0;
    return {std::move(jump), period_ns, num_pulses};
  }
};

namespace detail {

// dn_i/dt = G_i + n_{i+1}/tau_{i+1} - n_i/tau_i
inline void chain_derivative(std::span<const double> rates, std::span<const double> source,
                             std::span<const double> n, std::span<double> dn) {
  const std::size_t levels = n.size();
  for (std::size_t i = 0; i < levels; ++i) {
    double d = -rates[i] * n[i];
    if (i + 1 < levels) d += rates[i + 1] * n[i + 1];
    if (!source.empty()) d += source[i];
    dn[i] = d;
  }
}

inline void rk4_step(std::span<const double> rates, std::span<const double> source, std::vector<double>& n,
                     double h) {
  const std::size_t levels = n.size();
  std::vector<double> k1(levels), k2(levels), k3(levels), k4(levels), tmp(levels);
  chain_derivative(rates, source, n, k1);
  for (std::size_t i = 0; i < levels; ++i) tmp[i] = n[i] + 0.5 * h * k1[i];
  chain_derivative(rates, source, tmp, k2);
  for (std::size_t i = 0; i < levels; ++i) tmp[i] = n[i] + 0.5 * h * k2[i];
  chain_derivative(rates, source, tmp, k3);
  for (std::size_t i = 0; i < levels; ++i) tmp[i] = n[i] + h * k3[i];
  chain_derivative(rates, source, tmp, k4);
  for (std::size_t i = 0; i < levels; ++i) n[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

inline void check_step(const CascadeModel& model, double horizon_ns, double dt_ns) {
  if (!(dt_ns > 0.0)) throw PreconditionError("dt must be > 0");
  if (dt_ns > model.min_lifetime() / 20.0) throw PreconditionError("dt must not exceed min lifetime / 20");
  if (!(horizon_ns >= dt_ns)) throw PreconditionError("horizon must be >= dt");
}

inline OccupancyTrace make_grid(const CascadeModel& model, double horizon_ns, double dt_ns) {
  const auto count = static_cast<std::size_t>(std::floor(horizon_ns / dt_ns + 1e-9)) + 1;
  OccupancyTrace trace{model, 0.0, dt_ns, {}};
  trace.occupancy.assign(static_cast<std::size_t>(model.num_levels()), std::vector<double>(count, 0.0));
  return trace;
}

}  // namespace detail

/// Fixed-step RK4 integration of the expected occupancies under pulsed
/// loading. Pulses landing inside a step split it so the jump happens at the
/// exact pulse time; samples are right-continuous (post-jump).
inline OccupancyTrace solve_cascade_numeric(const CascadeModel& model, const LoadingSchedule& loading,
                                            double horizon_ns, double dt_ns) {
  detail::check_step(model, horizon_ns, dt_ns);
  require(loading.jump.size() == static_cast<std::size_t>(model.num_levels()), "jump vector size != N");
  require(loading.period_ns > 0.0 && loading.num_pulses >= 0, "invalid loading schedule");

  const auto levels = static_cast<std::size_t>(model.num_levels());
  std::vector<double> rates(levels);
  for (int i = 1; i <= model.num_levels(); ++i) rates[static_cast<std::size_t>(i - 1)] = model.rate(i);

  OccupancyTrace trace = detail::make_grid(model, horizon_ns, dt_ns);
  std::vector<double> n(levels, 0.0);
  int next_pulse = 0;
  auto apply_jump = [&] {
    for (std::size_t i = 0; i < levels; ++i) n[i] += loading.jump[i];
    ++next_pulse;
  };
  if (loading.num_pulses > 0) apply_jump();
  const std::size_t count = trace.size();
  for (std::size_t i = 0; i < levels; ++i) trace.occupancy[i][0] = n[i];
  for (std::size_t j = 1; j < count; ++j) {
    double t = static_cast<double>(j - 1) * dt_ns;
    const double t_end = static_cast<double>(j) * dt_ns;
    while (next_pulse < loading.num_pulses && next_pulse * loading.period_ns <= t_end) {
      const double tp = next_pulse * loading.period_ns;
      if (tp > t) detail::rk4_step(rates, {}, n, tp - t);
      t = tp;
      apply_jump();
    }
    if (t_end > t) detail::rk4_step(rates, {}, n, t_end - t);
    for (std::size_t i = 0; i < levels; ++i) trace.occupancy[i][j] = n[i];
  }
  return trace;
}

inline OccupancyTrace solve_cascade_numeric(const CascadeModel& model, const PumpSpec& pump, double horizon_ns,
                                            double dt_ns) {
  return solve_cascade_numeric(model, LoadingSchedule::poisson(model, pump), horizon_ns, dt_ns);
}

/// Rate form with constant generation: G_i = P(load = i) / period on top of the
/// inflow from level i+1 (top level gets the folded tail). Starts empty.
inline OccupancyTrace solve_cascade_continuous(const CascadeModel& model, const PumpSpec& pump,
                                               double horizon_ns, double dt_ns) {
  pump.validate();
  detail::check_step(model, horizon_ns, dt_ns);
  const auto levels = static_cast<std::size_t>(model.num_levels());
  std::vector<double> rates(levels), source(levels);
  const auto p = initial_loading(pump.mean_excitons_per_pulse, model.num_levels());
  for (std::size_t i = 0; i < levels; ++i) {
    rates[i] = model.rate(static_cast<int>(i) + 1);
    source[i] = p[i + 1] / pump.pulse_period_ns;
  }
  OccupancyTrace trace = detail::make_grid(model, horizon_ns, dt_ns);
  std::vector<double> n(levels, 0.0);
  for (std::size_t j = 1; j < trace.size(); ++j) {
    detail::rk4_step(rates, source, n, dt_ns);
    for (std::size_t i = 0; i < levels; ++i) trace.occupancy[i][j] = n[i];
  }
  return trace;
}

/// Expected single-pulse occupancies under Poisson loading, superposed from
/// the closed-form solutions of each start level.
inline OccupancyTrace pumped_single_pulse(const CascadeModel& model, double g, double horizon_ns, double step_ns) {
  const auto p = initial_loading(g, model.num_levels());
  OccupancyTrace total = detail::make_grid(model, horizon_ns, step_ns);
  for (int k = 1; k <= model.num_levels(); ++k) {
    const double weight = p[static_cast<std::size_t>(k)];
    if (weight == 0.0) continue;
    BatemanSolution sol(model, k);
    for (std::size_t j = 0; j < total.size(); ++j) {
      const double t = total.time(j);
      for (int i = 1; i <= k; ++i) total.occupancy[static_cast<std::size_t>(i - 1)][j] += weight * sol.occupancy(i, t);
    }
  }
  return total;
}

/// First time the trace reaches fraction*peak, interpolated linearly.
inline double onset_time(const Transient& trace, double threshold_fraction) {
  if (!(threshold_fraction > 0.0 && threshold_fraction < 1.0)) {
    throw PreconditionError("threshold fraction must lie in (0, 1)");
  }
  const double peak = trace.peak();
  if (!(peak > 0.0)) throw NoSignalError("trace has no positive maximum");
  const double level = threshold_fraction * peak;
  for (std::size_t j = 0; j < trace.size(); ++j) {
    if (trace.values[j] >= level) {
      if (j == 0) return trace.time(0);
      const double a = trace.values[j - 1];
      const double b = trace.values[j];
      return trace.time(j - 1) + (level - a) / (b - a) * trace.step_ns;
    }
  }
  throw NoSignalError("threshold never reached");  // unreachable for peak > 0
}

}  // namespace sawsps
