#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "sawsps/cascade.hpp"
#include "sawsps/core.hpp"
#include "sawsps/random.hpp"

namespace sawsps {

struct PhotonRecord {
  double time_ns = 0.0;
  std::string transition;
  int emitter_id = 0;
  Vec2 position_um;

  friend bool operator==(const PhotonRecord&, const PhotonRecord&) = default;
};

using PhotonStream = std::vector<PhotonRecord>;

struct TrajectoryConfig {
  int num_pulses = 1;
  std::uint64_t master_seed = 0;
  std::uint64_t trajectory_index = 0;

  [[nodiscard]] Rng rng() const { return make_rng(master_seed, StreamDomain::kTrajectory, trajectory_index); }
};

inline unsigned sample_pulse_loading(double g, Rng& rng) {
  if (!(g >= 0.0)) throw DomainError("g must be >= 0");
  return sample_poisson(g, rng);
}

/// Exact sampling of one cascade started at `start_level` at t_start: waits
/// Exp(tau_k), Exp(tau_{k-1}), ... and emits transitions k..1 in order.
/// This is also the event-driven entry point for transport-coupled loading.
inline void emit_cascade(const CascadeModel& model, int start_level, double t_start_ns, int emitter_id,
                         Vec2 position, Rng& rng, PhotonStream& out) {
  if (start_level <= 0) return;
  model.check_level(start_level);
  double t = t_start_ns;
  for (int level = start_level; level >= 1; --level) {
    t += sample_exponential(model.lifetime(level), rng);
    out.push_back({t, model.label(level), emitter_id, position});
  }
}

inline void sort_by_time(PhotonStream& stream) {
  std::stable_sort(stream.begin(), stream.end(),
                   [](const PhotonRecord& a, const PhotonRecord& b) { return a.time_ns < b.time_ns; });
}

/// Poisson-loaded pulse train for a point emitter. Loads above N fold to N.
inline PhotonStream simulate_trajectory(const CascadeModel& model, const PumpSpec& pump,
                                        const TrajectoryConfig& config, int emitter_id = 0) {
  pump.validate();
  Rng rng = config.rng();
  PhotonStream out;
  for (int p = 0; p < config.num_pulses; ++p) {
    const auto load = static_cast<int>(sample_pulse_loading(pump.mean_excitons_per_pulse, rng));
    emit_cascade(model, std::min(load, model.num_levels()), pump.pulse_time(p), emitter_id, {}, rng, out);
  }
  sort_by_time(out);
  return out;
}

/// Same pulse train with every pulse loading exactly `start_level`.
inline PhotonStream simulate_fixed_start(const CascadeModel& model, int start_level, double pulse_period_ns,
                                         const TrajectoryConfig& config, int emitter_id = 0) {
  model.check_level(start_level);
  Rng rng = config.rng();
  PhotonStream out;
  for (int p = 0; p < config.num_pulses; ++p) {
    emit_cascade(model, start_level, p * pulse_period_ns, emitter_id, {}, rng, out);
  }
  sort_by_time(out);
  return out;
}

struct HistogramSpec {
  double bin_ns = 0.1;
  double pulse_period_ns = 12.5;
  bool normalize = false;
  double origin_ns = 0.0;  // window start relative to the pulse, e.g. -2 to show the rise
};

/// Folded TCSPC histogram accumulator. Bin b covers [b*bin, (b+1)*bin) of the
/// time since origin_ns after the last pulse; the Transient samples bin centres.
class FoldedHistogram {
 public:
  FoldedHistogram(std::string transition, HistogramSpec spec) : transition_(std::move(transition)), spec_(spec) {
    require(spec.bin_ns > 0.0, "histogram bin must be > 0");
    require(spec.pulse_period_ns > 0.0, "pulse period must be > 0");
    counts_.assign(static_cast<std::size_t>(std::ceil(spec.pulse_period_ns / spec.bin_ns - 1e-9)), 0);
  }

  void add(const PhotonRecord& photon) {
    if (photon.transition != transition_) return;
    const double shifted = photon.time_ns - spec_.origin_ns;
    const double phase = shifted - std::floor(shifted / spec_.pulse_period_ns) * spec_.pulse_period_ns;
    auto bin = static_cast<std::size_t>(phase / spec_.bin_ns);
    if (bin >= counts_.size()) bin = counts_.size() - 1;
    ++counts_[bin];
  }
  void add(const PhotonStream& stream) {
    for (const auto& p : stream) add(p);
  }
  void merge(const FoldedHistogram& other) {
    for (std::size_t b = 0; b < counts_.size(); ++b) counts_[b] += other.counts_[b];
  }

  [[nodiscard]] const std::vector<std::uint64_t>& counts() const { return counts_; }

  /// With normalize set, counts become photons per pulse per ns.
  [[nodiscard]] Transient transient(std::uint64_t num_trajectories, int num_pulses) const {
    Transient out{spec_.origin_ns + 0.5 * spec_.bin_ns, spec_.bin_ns, std::vector<double>(counts_.size())};
    const double scale = spec_.normalize && num_trajectories > 0 && num_pulses > 0
                             ? 1.0 / (static_cast<double>(num_trajectories) * num_pulses * spec_.bin_ns)
                             : 1.0;
    for (std::size_t b = 0; b < counts_.size(); ++b) out.values[b] = static_cast<double>(counts_[b]) * scale;
    return out;
  }

 private:
  std::string transition_;
  HistogramSpec spec_;
  std::vector<std::uint64_t> counts_;
};

inline Transient ensemble_histogram(const std::vector<PhotonStream>& streams, const std::string& transition,
                                    const HistogramSpec& spec, int num_pulses = 1) {
  FoldedHistogram hist(transition, spec);
  for (const auto& s : streams) hist.add(s);
  return hist.transient(streams.size(), num_pulses);
}

inline void write_photon_csv(std::ostream& os, const PhotonStream& stream) {
  os << "time_ns,transition,emitter_id,x_um,y_um\n";
  char buf[160];
  for (const auto& p : stream) {
    std::snprintf(buf, sizeof buf, "%.17g,%s,%d,%.17g,%.17g\n", p.time_ns, p.transition.c_str(), p.emitter_id,
                  p.position_um.x, p.position_um.y);
    os << buf;
  }
}

}  // namespace sawsps
