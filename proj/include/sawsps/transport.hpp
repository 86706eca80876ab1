#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <tuple>
#include <vector>

#include "sawsps/cascade.hpp"
#include "sawsps/core.hpp"
#include "sawsps/emitter.hpp"
#include "sawsps/random.hpp"

namespace sawsps {

enum class Species { kElectron, kHole };

inline const char* to_string(Species s) { return s == Species::kElectron ? "electron" : "hole"; }

/// Travelling piezoelectric potential. Positions along the transport axis are
/// handled in the propagation coordinate s = direction * (x - spot_x), in
/// which every pocket moves towards +s at v = f * lambda.
struct SawWave {
  double frequency_mhz = 193.0;
  double wavelength_um = 15.0;
  double amplitude = 1.0;  // capture-efficiency factor, 0 = no conveyance
  int direction = +1;
  double phase_rad = 0.0;

  void validate() const {
    if (!(frequency_mhz > 0.0)) throw ConfigError("saw.frequency_mhz must be > 0");
    if (!(wavelength_um > 0.0)) throw ConfigError("saw.wavelength_um must be > 0");
    if (!(amplitude >= 0.0 && amplitude <= 1.0)) throw ConfigError("saw.amplitude must lie in [0, 1]");
    if (direction != 1 && direction != -1) throw ConfigError("saw.direction must be +1 or -1");
  }

  [[nodiscard]] double velocity_um_per_ns() const { return frequency_mhz * 1e-3 * wavelength_um; }
  [[nodiscard]] double period_ns() const { return 1e3 / frequency_mhz; }

  /// s of extremum lattice point 0 for the species at time t. Electrons sit
  /// at potential minima, holes half a wavelength away at the maxima.
  [[nodiscard]] double lattice_origin(Species species, double t_ns) const {
    double origin = velocity_um_per_ns() * t_ns + phase_rad / (2.0 * std::numbers::pi) * wavelength_um;
    if (species == Species::kHole) origin += 0.5 * wavelength_um;
    return origin;
  }
};

inline double arrival_delay(double distance_um, const SawWave& saw) {
  require(distance_um >= 0.0, "distance must be >= 0");
  return distance_um / saw.velocity_um_per_ns();
}

struct LaserSpot {
  Vec2 center_um;
  double radius_um = 0.5;  // Gaussian sigma per axis
  double pairs_per_pulse = 1.0;
};

struct QdSite {
  int id = 0;
  Vec2 position_um;
  double capture_radius_um = 0.1;
  double capture_prob = 0.5;
  CascadeModel model;
  int n_electrons = 0;
  int n_holes = 0;

  [[nodiscard]] int capacity() const { return model.num_levels(); }
  [[nodiscard]] int held(Species s) const { return s == Species::kElectron ? n_electrons : n_holes; }
  int& held(Species s) { return s == Species::kElectron ? n_electrons : n_holes; }
};

struct ChannelLayout {
  double extent_min_um = -20.0;
  double extent_max_um = 20.0;
  LaserSpot spot;
  std::vector<QdSite> sites;
  // Transverse resolution: carriers are grouped into lanes of this width and a
  // pocket only sweeps the sites of its own lane. 0 = one lane, y ignored.
  double lane_width_um = 0.0;

  void validate() const {
    if (!(extent_max_um > extent_min_um)) throw ConfigError("channel extent must be a non-empty interval");
    if (!(spot.pairs_per_pulse >= 0.0)) throw ConfigError("spot.pairs_per_pulse must be >= 0");
    if (!(spot.radius_um >= 0.0)) throw ConfigError("spot.radius_um must be >= 0");
    if (!(lane_width_um >= 0.0)) throw ConfigError("lane_width_um must be >= 0");
    for (const auto& site : sites) {
      if (site.position_um.x < extent_min_um || site.position_um.x > extent_max_um) {
        throw ConfigError("site " + std::to_string(site.id) + " lies outside the channel extent");
      }
      if (!(site.capture_radius_um > 0.0)) throw ConfigError("site capture_radius_um must be > 0");
      if (!(site.capture_prob >= 0.0 && site.capture_prob <= 1.0)) {
        throw ConfigError("site capture_prob must lie in [0, 1]");
      }
      if (site.n_electrons < 0 || site.n_holes < 0) throw ConfigError("site carrier counts must be >= 0");
    }
  }

  [[nodiscard]] long lane_of(double y_um) const {
    return lane_width_um > 0.0 ? static_cast<long>(std::floor(y_um / lane_width_um)) : 0;
  }
  [[nodiscard]] double lane_center(long lane) const {
    return lane_width_um > 0.0 ? (static_cast<double>(lane) + 0.5) * lane_width_um : spot.center_um.y;
  }
};

struct CarrierPocket {
  Species species = Species::kElectron;
  int count = 0;
  Vec2 position_um;  // lab frame; y is the lane centre
  double birth_time_ns = 0.0;
  int cycle_index = 0;
  long lane = 0;
  double pulse_time_ns = 0.0;
  double birth_s_um = 0.0;  // propagation coordinate at birth
  double sweep_min_s_um = 0.0;  // upstream end of the generation region it swept

  /// Lab position at t >= birth while riding the wave.
  [[nodiscard]] Vec2 position_at(double t_ns, const SawWave& saw) const {
    return {position_um.x + saw.direction * saw.velocity_um_per_ns() * (t_ns - birth_time_ns), position_um.y};
  }
};

inline double propagation_coordinate(double x_um, const ChannelLayout& layout, const SawWave& saw) {
  return saw.direction * (x_um - layout.spot.center_um.x);
}

struct PocketGeneration {
  std::vector<CarrierPocket> pockets;
  std::vector<Vec2> local_pairs;  // not pocketed (amplitude 0): recombine at the spot
  int pairs = 0;
};

/// Photogenerates Poisson(pairs_per_pulse) pairs around the spot. Each carrier
/// is collected by the extremum of its species that trails it (the one the
/// wave carries over it), so no carrier is ever moved upstream of its
/// generation point. Carriers sharing an extremum and lane form one pocket,
/// born when the extremum reaches the most downstream of them.
inline PocketGeneration generate_pockets(const ChannelLayout& layout, const SawWave& saw, double pulse_time_ns,
                                         Rng& rng, int cycle_index = 0) {
  PocketGeneration out;
  out.pairs = static_cast<int>(sample_poisson(layout.spot.pairs_per_pulse, rng));
  struct Group {
    int count = 0;
    double s_min = 0.0;
    double s_max = 0.0;
  };
  std::map<std::tuple<int, long, long>, Group> groups;
  const double lambda = saw.wavelength_um;
  for (int p = 0; p < out.pairs; ++p) {
    const double ds = sample_normal(0.0, layout.spot.radius_um, rng);
    const double dy = sample_normal(0.0, layout.spot.radius_um, rng);
    const double y = layout.spot.center_um.y + dy;
    if (saw.amplitude <= 0.0) {
      out.local_pairs.push_back({layout.spot.center_um.x + saw.direction * ds, y});
      continue;
    }
    const long lane = layout.lane_of(y);
    for (Species sp : {Species::kElectron, Species::kHole}) {
      const long m = static_cast<long>(std::floor((ds - saw.lattice_origin(sp, pulse_time_ns)) / lambda));
      auto [it, fresh] = groups.try_emplace({static_cast<int>(sp), m, lane}, Group{0, ds, ds});
      auto& g = it->second;
      ++g.count;
      g.s_min = std::min(g.s_min, ds);
      g.s_max = std::max(g.s_max, ds);
    }
  }
  const double v = saw.velocity_um_per_ns();
  for (const auto& [key, g] : groups) {
    const auto [sp, m, lane] = key;
    const auto species = static_cast<Species>(sp);
    const double s_ext = saw.lattice_origin(species, pulse_time_ns) + static_cast<double>(m) * lambda;
    CarrierPocket pocket;
    pocket.species = species;
    pocket.count = g.count;
    pocket.birth_time_ns = pulse_time_ns + (g.s_max - s_ext) / v;
    pocket.position_um = {layout.spot.center_um.x + saw.direction * g.s_max, layout.lane_center(lane)};
    pocket.cycle_index = cycle_index;
    pocket.lane = lane;
    pocket.pulse_time_ns = pulse_time_ns;
    pocket.birth_s_um = g.s_max;
    pocket.sweep_min_s_um = g.s_min;
    out.pockets.push_back(pocket);
  }
  return out;
}

/// Lossless, dispersionless conveyance.
inline std::vector<CarrierPocket> advance(std::vector<CarrierPocket> pockets, const SawWave& saw, double dt_ns) {
  require(dt_ns >= 0.0, "dt must be >= 0");
  const double dx = saw.direction * saw.velocity_um_per_ns() * dt_ns;
  for (auto& p : pockets) p.position_um.x += dx;
  return pockets;
}

/// One pass of a pocket over a site: with probability capture_prob * amplitude
/// the site takes as many carriers as its free capacity allows. Excitons
/// still emitting (`busy`) occupy capacity. Returns the number transferred.
inline int capture_pass(CarrierPocket& pocket, QdSite& site, double amplitude, Rng& rng, int busy = 0) {
  if (pocket.count <= 0) return 0;
  if (!bernoulli(site.capture_prob * amplitude, rng)) return 0;
  const int room = std::max(0, site.capacity() - site.held(pocket.species) - busy);
  const int moved = std::min(pocket.count, room);
  pocket.count -= moved;
  site.held(pocket.species) += moved;
  return moved;
}

struct FormationResult {
  int excitons = 0;
  int residual_electrons = 0;
  int residual_holes = 0;
  double time_ns = 0.0;
};

/// Binds min(n_e, n_h) electron-hole pairs, never more than the free capacity.
inline FormationResult exciton_formation(QdSite& site, double t_ns, int busy = 0) {
  const int formed = std::clamp(std::min(site.n_electrons, site.n_holes), 0, std::max(0, site.capacity() - busy));
  site.n_electrons -= formed;
  site.n_holes -= formed;
  return {formed, site.n_electrons, site.n_holes, t_ns};
}

struct SpeciesLedger {
  long long generated = 0;
  long long captured = 0;
  long long exited = 0;
  long long lost = 0;
  long long recombined_locally = 0;
  long long in_transit = 0;

  [[nodiscard]] bool balanced() const {
    return generated == captured + exited + lost + recombined_locally + in_transit;
  }
};

struct FormationEvent {
  int site_id = 0;
  double time_ns = 0.0;
  int excitons = 0;
  double latest_pulse_ns = 0.0;  // newest laser pulse that contributed a carrier
  double causal_bound_ns = 0.0;  // max over carriers of birth + transit to the site
};

struct DeviceOptions {
  double loss_per_um = 0.0;
  double steps_per_period = 50.0;
  std::uint64_t run_index = 0;
};

struct DeviceResult {
  PhotonStream photons;  // time-sorted
  std::vector<FormationEvent> formations;
  SpeciesLedger electrons;
  SpeciesLedger holes;
  int pulses = 0;
  double step_ns = 0.0;
  bool conservation_held = true;  // checked after every step
};

namespace detail {

struct CarrierTag {
  double pulse_ns;
  double birth_ns;
  double birth_s;
};

class DeviceLoop {
 public:
  DeviceLoop(const ChannelLayout& layout, const SawWave& saw, const PumpSpec& pump, double duration_ns,
             std::uint64_t seed, const DeviceOptions& options)
      : layout_(layout), saw_(saw), pump_(pump), duration_(duration_ns), options_(options),
        rng_(make_rng(seed, StreamDomain::kDevice, options.run_index)) {
    layout_.validate();
    saw_.validate();
    pump_.validate();
    require(duration_ns > 0.0, "duration must be > 0");
    require(options.loss_per_um >= 0.0, "loss_per_um must be >= 0");
    v_ = saw_.velocity_um_per_ns();
    double min_radius = std::numeric_limits<double>::infinity();
    for (const auto& s : layout_.sites) min_radius = std::min(min_radius, s.capture_radius_um);
    dt_ = saw_.period_ns() / options.steps_per_period;
    if (std::isfinite(min_radius)) dt_ = std::min(dt_, 2.0 * min_radius / v_);
    electron_tags_.resize(layout_.sites.size());
    hole_tags_.resize(layout_.sites.size());
    pending_.resize(layout_.sites.size());
    for (std::size_t i = 0; i < layout_.sites.size(); ++i) {
      const auto& site = layout_.sites[i];
      const double s = propagation_coordinate(site.position_um.x, layout_, saw_);
      site_s_.push_back(s);
      lanes_[layout_.lane_of(site.position_um.y)].push_back({s, i});
    }
    for (auto& [lane, entries] : lanes_) std::sort(entries.begin(), entries.end());
  }

  DeviceResult run() {
    const double period = pump_.pulse_period_ns;
    int next_pulse = 0;
    result_.step_ns = dt_;
    for (long long k = 0;; ++k) {
      const double t0 = static_cast<double>(k) * dt_;
      if (t0 >= duration_) break;
      const double t1 = std::min(static_cast<double>(k + 1) * dt_, duration_);
      while (next_pulse < pump_.num_pulses && next_pulse * period < t1) {
        pulse(next_pulse * period, next_pulse);
        ++next_pulse;
      }
      step(t0, t1);
      if (!balanced()) result_.conservation_held = false;
    }
    result_.pulses = next_pulse;
    for (const auto& p : pockets_) {
      ledger(p.species).in_transit += p.count;
    }
    for (auto& list : pending_) {
      for (auto& photon : list) result_.photons.push_back(std::move(photon));
    }
    sort_by_time(result_.photons);
    return std::move(result_);
  }

 private:
  struct Event {
    double time;
    std::size_t pocket;
    std::size_t site;
  };

  SpeciesLedger& ledger(Species s) { return s == Species::kElectron ? result_.electrons : result_.holes; }

  [[nodiscard]] bool balanced() const {
    long long transit_e = 0, transit_h = 0;
    for (const auto& p : pockets_) (p.species == Species::kElectron ? transit_e : transit_h) += p.count;
    auto check = [](SpeciesLedger l, long long transit) {
      l.in_transit = transit;
      return l.balanced();
    };
    return check(result_.electrons, transit_e) && check(result_.holes, transit_h);
  }

  void pulse(double t, int index) {
    auto gen = generate_pockets(layout_, saw_, t, rng_, index);
    result_.electrons.generated += gen.pairs;
    result_.holes.generated += gen.pairs;
    for (auto& p : gen.pockets) pockets_.push_back(p);
    for (const Vec2& pos : gen.local_pairs) local_pair(pos, t);
  }

  // Direct excitation: the pair is offered to the sites inside the spot,
  // nearest first; otherwise it recombines in the well.
  void local_pair(Vec2 pos, double t) {
    std::vector<std::pair<double, std::size_t>> candidates;
    const double reach = std::max(layout_.spot.radius_um, 0.0);
    for (std::size_t i = 0; i < layout_.sites.size(); ++i) {
      const auto& site = layout_.sites[i];
      const double dx = site.position_um.x - layout_.spot.center_um.x;
      const double dy = layout_.lane_width_um > 0.0 ? site.position_um.y - layout_.spot.center_um.y : 0.0;
      if (std::hypot(dx, dy) > reach + site.capture_radius_um) continue;
      const double px = site.position_um.x - pos.x;
      const double py = layout_.lane_width_um > 0.0 ? site.position_um.y - pos.y : 0.0;
      candidates.emplace_back(std::hypot(px, py), i);
    }
    std::sort(candidates.begin(), candidates.end());
    for (const auto& [dist, i] : candidates) {
      auto& site = layout_.sites[i];
      const int busy = busy_at(i, t);
      if (site.n_electrons + busy >= site.capacity() || site.n_holes + busy >= site.capacity()) continue;
      if (!bernoulli(site.capture_prob, rng_)) continue;
      ++site.n_electrons;
      ++site.n_holes;
      electron_tags_[i].push_back({t, t, site_s_[i]});
      hole_tags_[i].push_back({t, t, site_s_[i]});
      ++result_.electrons.captured;
      ++result_.holes.captured;
      form(i, t);
      return;
    }
    ++result_.electrons.recombined_locally;
    ++result_.holes.recombined_locally;
  }

  int busy_at(std::size_t site, double t) {
    // Photons due by t are emitted; the rest belong to excitons still present.
    auto& list = pending_[site];
    auto split = std::stable_partition(list.begin(), list.end(), [t](const PhotonRecord& p) { return p.time_ns <= t; });
    for (auto it = list.begin(); it != split; ++it) result_.photons.push_back(std::move(*it));
    list.erase(list.begin(), split);
    return static_cast<int>(list.size());
  }

  void form(std::size_t i, double t) {
    auto& site = layout_.sites[i];
    const int busy = busy_at(i, t);
    const FormationResult f = exciton_formation(site, t, busy);
    if (f.excitons == 0) return;
    FormationEvent event{site.id, t, f.excitons, -std::numeric_limits<double>::infinity(),
                         -std::numeric_limits<double>::infinity()};
    for (auto* tags : {&electron_tags_[i], &hole_tags_[i]}) {
      for (int n = 0; n < f.excitons; ++n) {
        const CarrierTag tag = tags->front();
        tags->pop_front();
        event.latest_pulse_ns = std::max(event.latest_pulse_ns, tag.pulse_ns);
        event.causal_bound_ns =
            std::max(event.causal_bound_ns, tag.birth_ns + std::max(0.0, site_s_[i] - tag.birth_s) / v_);
      }
    }
    result_.formations.push_back(event);
    // Excitons still present stay in the cascade; redraw its remaining decays
    // from the combined level (exact, the waits are memoryless).
    auto& list = pending_[i];
    list.clear();
    const int level = std::min(site.capacity(), busy + f.excitons);
    emit_cascade(site.model, level, t, site.id, site.position_um, rng_, list);
  }

  void capture(std::size_t pocket_index, std::size_t i, double t) {
    auto& pocket = pockets_[pocket_index];
    auto& site = layout_.sites[i];
    const int moved = capture_pass(pocket, site, saw_.amplitude, rng_, busy_at(i, t));
    if (moved == 0) return;
    ledger(pocket.species).captured += moved;
    auto& tags = pocket.species == Species::kElectron ? electron_tags_[i] : hole_tags_[i];
    for (int n = 0; n < moved; ++n) tags.push_back({pocket.pulse_time_ns, pocket.birth_time_ns, pocket.birth_s_um});
    form(i, t);
  }

  void step(double t0, double t1) {
    events_.clear();
    for (std::size_t pi = 0; pi < pockets_.size(); ++pi) {
      const auto& p = pockets_[pi];
      if (p.birth_time_ns >= t1) continue;
      const auto lane = lanes_.find(p.lane);
      if (lane == lanes_.end()) continue;
      const auto& entries = lane->second;
      const double from = std::max(t0, p.birth_time_ns);
      const double s_from = p.birth_s_um + v_ * (from - p.birth_time_ns);
      const double s_to = p.birth_s_um + v_ * (t1 - p.birth_time_ns);
      auto lo = std::upper_bound(entries.begin(), entries.end(), std::make_pair(s_from, std::size_t(-1)));
      if (p.birth_time_ns >= t0) {
        // Birth pass: sites the extremum swept while collecting its carriers.
        for (auto it = entries.begin(); it != lo; ++it) {
          const std::size_t i = it->second;
          if (site_s_[i] + layout_.sites[i].capture_radius_um < p.sweep_min_s_um) continue;
          events_.push_back({p.birth_time_ns, pi, i});
        }
      }
      for (auto it = lo; it != entries.end() && it->first <= s_to; ++it) {
        const std::size_t i = it->second;
        events_.push_back({p.birth_time_ns + (site_s_[i] - p.birth_s_um) / v_, pi, i});
      }
    }
    std::stable_sort(events_.begin(), events_.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    for (const auto& e : events_) capture(e.pocket, e.site, e.time);

    survivors_.clear();
    for (auto& p : pockets_) {
      if (p.birth_time_ns < t1 && options_.loss_per_um > 0.0 && p.count > 0) {
        const double travelled = v_ * (t1 - std::max(t0, p.birth_time_ns));
        const double survive = std::exp(-options_.loss_per_um * travelled);
        int lost = 0;
        for (int n = 0; n < p.count; ++n) lost += bernoulli(survive, rng_) ? 0 : 1;
        p.count -= lost;
        ledger(p.species).lost += lost;
      }
      if (p.count <= 0) continue;
      if (p.birth_time_ns < t1) {
        const Vec2 x = p.position_at(t1, saw_);
        if (x.x < layout_.extent_min_um || x.x > layout_.extent_max_um) {
          ledger(p.species).exited += p.count;
          continue;
        }
      }
      survivors_.push_back(p);
    }
    pockets_.swap(survivors_);
  }

  ChannelLayout layout_;
  SawWave saw_;
  PumpSpec pump_;
  double duration_;
  DeviceOptions options_;
  Rng rng_;
  double v_ = 0.0;
  double dt_ = 0.0;
  std::vector<double> site_s_;
  std::map<long, std::vector<std::pair<double, std::size_t>>> lanes_;
  std::vector<std::deque<CarrierTag>> electron_tags_, hole_tags_;
  std::vector<PhotonStream> pending_;
  std::vector<CarrierPocket> pockets_;
  std::vector<CarrierPocket> survivors_;
  std::vector<Event> events_;
  DeviceResult result_;
};

}  // namespace detail

/// Full device event loop: pulses -> pockets -> conveyance -> capture ->
/// exciton formation -> cascade photons tagged with the emitter position.
/// Cascades started before `duration_ns` run to completion.
inline DeviceResult run_device(const ChannelLayout& layout, const SawWave& saw, const PumpSpec& pump,
                               double duration_ns, std::uint64_t seed, const DeviceOptions& options = {}) {
  return detail::DeviceLoop(layout, saw, pump, duration_ns, seed, options).run();
}

struct FieldSpec {
  Vec2 origin_um;  // lower-left corner
  double width_um = 10.0;   // along the transport axis
  double height_um = 10.0;  // transverse
  double density_per_cm2 = 3e9;
};

/// Uniform random dot field, round(density * area) sites with ids from
/// first_id upwards.
inline std::vector<QdSite> make_site_field(const FieldSpec& field, const QdSite& prototype, std::uint64_t seed,
                                           int first_id = 0) {
  require(field.width_um > 0.0 && field.height_um > 0.0 && field.density_per_cm2 >= 0.0, "invalid field spec");
  const double area_cm2 = field.width_um * field.height_um * 1e-8;
  const auto count = static_cast<long long>(std::llround(field.density_per_cm2 * area_cm2));
  Rng rng = make_rng(seed, StreamDomain::kLayout, 0);
  std::vector<QdSite> sites;
  sites.reserve(static_cast<std::size_t>(count));
  for (long long n = 0; n < count; ++n) {
    QdSite site = prototype;
    site.id = first_id + static_cast<int>(n);
    site.position_um = {field.origin_um.x + uniform01(rng) * field.width_um,
                        field.origin_um.y + uniform01(rng) * field.height_um};
    sites.push_back(std::move(site));
  }
  return sites;
}

}  // namespace sawsps
