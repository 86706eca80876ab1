#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sawsps/analysis.hpp"
#include "sawsps/cascade.hpp"
#include "sawsps/config.hpp"
#include "sawsps/detector.hpp"
#include "sawsps/emitter.hpp"
#include "sawsps/parallel.hpp"
#include "sawsps/transport.hpp"

namespace sawsps {

inline constexpr const char* kVersion = "0.1.0";

struct OutputError : ConfigError {
  using ConfigError::ConfigError;
};

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

struct ManifestEntry {
  std::string path;
  std::string sha256;
  std::uint64_t bytes = 0;
};

struct Manifest {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string config_sha256;
  std::vector<ManifestEntry> files;

  [[nodiscard]] Json to_json() const {
    Json list = Json::array();
    for (const auto& f : files) list.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    return {{"scenario", scenario},
            {"seed", seed},
            {"software", {{"name", "sawsps"}, {"version", kVersion}}},
            {"config_sha256", config_sha256},
            {"files", list}};
  }
};

/// Collects the files of one run, hashing exactly the bytes written.
class OutputSet {
 public:
  explicit OutputSet(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& name, const std::string& content) {
    std::ofstream os(dir_ / name, std::ios::binary);
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw std::runtime_error("cannot write " + (dir_ / name).string());
    entries_.push_back({name, sha256_hex(content), content.size()});
  }

  template <class F>
  void write_with(const std::string& name, F&& body) {
    std::ostringstream os;
    body(os);
    write(name, os.str());
  }

  [[nodiscard]] std::vector<ManifestEntry> entries() const {
    auto out = entries_;
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    return out;
  }

 private:
  std::filesystem::path dir_;
  std::vector<ManifestEntry> entries_;
};

struct ScenarioInfo {
  std::string name;
  std::string description;
};

inline const std::vector<ScenarioInfo>& list_scenarios() {
  static const std::vector<ScenarioInfo> kList{
      {"fig3_power_series", "photons per pulse of each transition versus pump power, with low-power exponents"},
      {"fig4_transients", "time-resolved transients per transition at three pump powers, raw and IRF-blurred, with "
                          "rise/fall fits"},
      {"fig4c_delays", "onset and mean emission delays versus pump, plus the intrinsic-lifetime protocol"},
      {"fig5_ensemble", "SAW pumping of a dense dot field: depletion image and upstream/illuminated fractions"},
      {"fig7_remote", "remote pumping of dots 7 and 14 um away: spatial-spectral frames for SAW off and both "
                      "directions"},
      {"g2_antibunching", "pulsed second-order correlation of a capacity-1 dot fed by the wave"},
  };
  return kList;
}

inline ScenarioConfig preset(const std::string& name) {
  ScenarioConfig c;
  c.scenario = name;
  if (name == "fig3_power_series") {
    c.powers_uw = {0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0};
    c.trajectories = 100;
    c.pulses_per_trajectory = 10000;
  } else if (name == "fig4_transients") {
    c.powers_uw = {2.0, 7.0, 19.0};
    c.trajectories = 200;
    c.pulses_per_trajectory = 1000;
    c.bin_ns = 0.05;
  } else if (name == "fig4c_delays") {
    c.powers_uw = {0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0};
    c.step_ns = 0.005;
  } else if (name == "fig5_ensemble") {
    c.extent_min_um = -10.0;
    c.extent_max_um = 20.0;
    c.spot_x_um = -2.0;
    c.spot_y_um = 5.0;
    c.spot_radius_um = 2.0;
    c.pairs_per_pulse = 300.0;
    c.lane_width_um = 0.2;
    c.field.enabled = true;
    c.field.capture_prob = 0.3;
    c.device_runs = 4;
    c.pulses_per_run = 500;
  } else if (name == "fig7_remote") {
    c.saw.direction = -1;
    c.pairs_per_pulse = 2.0;
    c.sites = {{0.0, 0.0, 0.1, 0.5, 0.0}, {-7.0, 0.0, 0.1, 0.5, 1.6}, {-14.0, 0.0, 0.1, 0.5, -1.2},
               {11.0, 0.0, 0.1, 0.5, 2.4}};
    c.device_runs = 4;
    c.pulses_per_run = 25000;
  } else if (name == "g2_antibunching") {
    c.lifetimes_ns = {1.5};
    c.labels = {"1X"};
    c.saw.direction = -1;
    c.sites = {{-7.0, 0.0, 0.1, 0.5, 0.0}};
    c.device_runs = 8;
    c.pulses_per_run = 125000;
  } else {
    throw ConfigError("scenario: unknown scenario '" + name + "'");
  }
  return c;
}

/// Preset defaults overlaid with a user config (which may be partial).
inline ScenarioConfig load_config(const std::string& scenario, const Json& overrides) {
  ScenarioConfig c = preset(scenario);
  apply_json(c, overrides);
  return c;
}

namespace detail {

inline std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string g_tag(double g) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "g%.4g", g);
  return buf;
}

inline DeviceResult device_run(const ScenarioConfig& c, const ChannelLayout& layout, const SawWave& saw,
                               std::uint64_t run_index) {
  PumpSpec pump;
  pump.pulse_period_ns = c.pulse_period_ns;
  pump.num_pulses = c.pulses_per_run;
  DeviceOptions options;
  options.loss_per_um = c.loss_per_um;
  options.run_index = run_index;
  return run_device(layout, saw, pump, c.pulses_per_run * c.pulse_period_ns, c.master_seed, options);
}

inline void run_fig3(const ScenarioConfig& c, unsigned threads, OutputSet& out) {
  const CascadeModel model = c.model();
  const auto g = c.g_values();
  const auto levels = static_cast<std::size_t>(model.num_levels());
  const std::size_t tasks = g.size() * c.trajectories;
  std::vector<std::vector<std::uint64_t>> counts(tasks, std::vector<std::uint64_t>(levels, 0));
  parallel_for(tasks, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      PumpSpec pump;
      pump.mean_excitons_per_pulse = g[t / c.trajectories];
      pump.pulse_period_ns = c.pulse_period_ns;
      pump.num_pulses = c.pulses_per_trajectory;
      pump.power_to_g = c.power_to_g_per_uw;
      const TrajectoryConfig tc{c.pulses_per_trajectory, c.master_seed, t};
      for (const auto& p : simulate_trajectory(model, pump, tc)) ++counts[t][model.level_of(p.transition) - 1];
    }
  });
  const double pulses = static_cast<double>(c.trajectories) * c.pulses_per_trajectory;
  std::vector<std::vector<double>> per_pulse(levels, std::vector<double>(g.size(), 0.0));
  std::ostringstream series;
  series << "power_uw,g,transition,photons_per_pulse,stderr,expected_per_pulse\n";
  for (std::size_t gi = 0; gi < g.size(); ++gi) {
    for (std::size_t i = 0; i < levels; ++i) {
      std::uint64_t n = 0;
      for (std::size_t t = gi * c.trajectories; t < (gi + 1) * c.trajectories; ++t) n += counts[t][i];
      const double p = static_cast<double>(n) / pulses;
      per_pulse[i][gi] = p;
      // Each pulse fires transition i at most once: binomial error.
      const double se = std::sqrt(p * (1.0 - p) / pulses);
      const int level = static_cast<int>(i) + 1;
      series << num(c.powers_uw[gi]) << ',' << num(g[gi]) << ',' << model.label(level) << ',' << num(p) << ','
             << num(se) << ',' << num(time_integrated_intensity(model, g[gi], level)) << '\n';
    }
  }
  out.write("power_series.csv", series.str());

  std::ostringstream law;
  law << "transition,slope,slope_stderr,points,g_max,status\n";
  for (std::size_t i = 0; i < levels; ++i) {
    std::vector<double> xs, ys;
    for (std::size_t gi = 0; gi < g.size(); ++gi) {
      if (g[gi] <= c.powerlaw_max_g * (1.0 + 1e-12) && per_pulse[i][gi] > 0.0) {
        xs.push_back(g[gi]);
        ys.push_back(per_pulse[i][gi]);
      }
    }
    const std::string& label = model.label(static_cast<int>(i) + 1);
    if (xs.size() < 3) {
      law << label << ",,," << xs.size() << ',' << num(c.powerlaw_max_g) << ",insufficient_points\n";
      continue;
    }
    const PowerLawFit fit = powerlaw_exponent(xs, ys);
    law << label << ',' << num(fit.slope) << ',' << num(fit.slope_stderr) << ',' << xs.size() << ','
        << num(xs.back()) << ",ok\n";
  }
  out.write("power_law.csv", law.str());
}

/// Expected folded transient on the histogram window: the single-pulse
/// response of every earlier pulse summed onto one period, bin-averaged.
/// `periods_before` extra periods are prepended (periodic copies).
inline Transient folded_model(const CascadeModel& model, double g, int level, const HistogramSpec& spec,
                              int periods_before) {
  const auto load = initial_loading(g, model.num_levels());
  std::vector<BatemanSolution> solutions;
  std::vector<double> weights;
  for (int k = level; k <= model.num_levels(); ++k) {
    solutions.emplace_back(model, k);
    weights.push_back(load[static_cast<std::size_t>(k)]);
  }
  double tau_sum = 0.0;
  for (double tau : model.lifetimes()) tau_sum += tau;
  const double period = spec.pulse_period_ns;
  const int wraps = static_cast<int>(std::ceil(40.0 * tau_sum / period)) + 1;
  const auto bins = static_cast<std::size_t>(std::ceil(period / spec.bin_ns - 1e-9));
  const std::size_t total = bins * static_cast<std::size_t>(periods_before + 1);
  const double start = spec.origin_ns - periods_before * period;
  Transient out{start + 0.5 * spec.bin_ns, spec.bin_ns, std::vector<double>(total, 0.0)};
  constexpr int kSub = 8;
  for (std::size_t b = 0; b < total; ++b) {
    const double lo = spec.origin_ns + static_cast<double>(b % bins) * spec.bin_ns;
    double acc = 0.0;
    for (int s = 0; s < kSub; ++s) {
      const double t = lo + (s + 0.5) / kSub * spec.bin_ns;
      for (int w = 0; w <= wraps; ++w) {
        const double since_pulse = t + w * period;
        if (since_pulse < 0.0) continue;
        for (std::size_t k = 0; k < solutions.size(); ++k) {
          acc += weights[k] * solutions[k].emission_rate(level, since_pulse);
        }
      }
    }
    out.values[b] = acc / kSub;
  }
  return out;
}

inline void run_fig4(const ScenarioConfig& c, unsigned threads, OutputSet& out) {
  const CascadeModel model = c.model();
  const auto g = c.g_values();
  const auto levels = static_cast<std::size_t>(model.num_levels());
  const Irf irf{c.irf_fwhm_ns};
  const HistogramSpec raw_spec{c.bin_ns, c.pulse_period_ns, false, c.window_origin_ns};
  std::ostringstream fits;
  fits << "g,transition,variant,t_rise_ns,t_fall_ns,sigma_rise_ns,sigma_fall_ns,amplitude,t0_ns,residual,status\n";
  for (std::size_t gi = 0; gi < g.size(); ++gi) {
    PumpSpec pump;
    pump.mean_excitons_per_pulse = g[gi];
    pump.pulse_period_ns = c.pulse_period_ns;
    pump.num_pulses = c.pulses_per_trajectory;
    pump.power_to_g = c.power_to_g_per_uw;
    std::vector<std::vector<FoldedHistogram>> plain(c.trajectories), blurred(c.trajectories);
    parallel_for(c.trajectories, threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t t = begin; t < end; ++t) {
        const std::uint64_t index = gi * c.trajectories + t;
        const auto stream = simulate_trajectory(model, pump, {c.pulses_per_trajectory, c.master_seed, index});
        Rng det = make_rng(c.master_seed, StreamDomain::kDetector, index);
        const auto jittered = jitter_stream(stream, irf, det);
        for (std::size_t i = 0; i < levels; ++i) {
          const std::string& label = model.label(static_cast<int>(i) + 1);
          plain[t].emplace_back(label, raw_spec);
          plain[t].back().add(stream);
          blurred[t].emplace_back(label, raw_spec);
          blurred[t].back().add(jittered);
        }
      }
    });
    const double pulses = static_cast<double>(c.trajectories) * c.pulses_per_trajectory;
    for (std::size_t i = 0; i < levels; ++i) {
      const int level = static_cast<int>(i) + 1;
      const std::string& label = model.label(level);
      const std::string tag = g_tag(g[gi]) + "_" + label;
      for (int variant = 0; variant < 2; ++variant) {
        auto& source = variant == 0 ? plain : blurred;
        FoldedHistogram sum = source[0][i];
        for (std::size_t t = 1; t < source.size(); ++t) sum.merge(source[t][i]);
        const Transient counts = sum.transient(1, 1);
        Transient rate = counts;
        for (double& v : rate.values) v /= pulses * c.bin_ns;
        const std::string suffix = variant == 0 ? "" : "_irf";
        out.write_with("transient_" + tag + suffix + ".csv", [&](std::ostream& os) { write_transient_csv(os, rate); });

        FitOptions options;
        options.poisson_weights = true;
        if (variant == 1) options.irf = irf;
        fits << num(g[gi]) << ',' << label << ',' << (variant == 0 ? "raw" : "irf") << ',';
        try {
          const RiseFallFit f = fit_rise_fall(counts, options);
          fits << num(f.t_rise_ns) << ',' << num(f.t_fall_ns) << ',' << num(f.sigma_rise()) << ','
               << num(f.sigma_fall()) << ',' << num(f.amplitude) << ',' << num(f.t0_ns) << ',' << num(f.residual)
               << ",ok\n";
        } catch (const std::exception& e) {
          fits << ",,,,,,," << (dynamic_cast<const NoSignalError*>(&e) ? "insufficient_signal" : "fit_failed")
               << '\n';
        }
      }
      // Expected curves: periodic response, and its IRF blur computed on two
      // periods so the wrap-around is convolved correctly.
      const Transient two = folded_model(model, g[gi], level, raw_spec, 1);
      const std::size_t bins = two.size() / 2;
      const double first = c.window_origin_ns + 0.5 * c.bin_ns;
      Transient expected{first, c.bin_ns,
                         std::vector<double>(two.values.begin() + static_cast<std::ptrdiff_t>(bins), two.values.end())};
      const Transient blurred_two = convolve_irf_same(two, irf);
      Transient expected_irf{first, c.bin_ns,
                             std::vector<double>(blurred_two.values.begin() + static_cast<std::ptrdiff_t>(bins),
                                                 blurred_two.values.end())};
      out.write_with("model_" + tag + ".csv", [&](std::ostream& os) { write_transient_csv(os, expected); });
      out.write_with("model_" + tag + "_irf.csv", [&](std::ostream& os) { write_transient_csv(os, expected_irf); });
    }
  }
  out.write("fits.csv", fits.str());
}

inline void run_fig4c(const ScenarioConfig& c, unsigned threads, OutputSet& out) {
  const CascadeModel model = c.model();
  const auto g = c.g_values();
  DelayOptions options;
  options.threshold_fraction = c.onset_threshold_fraction;
  options.step_ns = c.step_ns;
  std::vector<std::vector<DelayPoint>> points(g.size());
  parallel_for(g.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) points[i] = onset_delay_curve(model, {g[i]}, options);
  });
  std::ostringstream delays;
  delays << "power_uw,g,transition,onset_ns,mean_time_ns,mean_time_exact_ns\n";
  for (std::size_t gi = 0; gi < g.size(); ++gi) {
    const DelayPoint& p = points[gi].front();
    for (int i = 1; i <= model.num_levels(); ++i) {
      const auto k = static_cast<std::size_t>(i - 1);
      delays << num(c.powers_uw[gi]) << ',' << num(g[gi]) << ',' << model.label(i) << ',' << num(p.onset_ns[k]) << ','
             << num(p.mean_time_ns[k]) << ',' << num(p.mean_time_exact_ns[k]) << '\n';
    }
  }
  out.write("delays.csv", delays.str());

  LifetimeProtocolOptions protocol;
  protocol.contamination_limit = c.contamination_limit;
  const auto estimates = measure_intrinsic_lifetimes(model, expected_transient_simulator(model, c.step_ns), protocol);
  std::ostringstream tau;
  tau << "transition,configured_ns,estimated_ns,relative_error\n";
  for (int i = 1; i <= model.num_levels(); ++i) {
    const double est = estimates[static_cast<std::size_t>(i - 1)];
    tau << model.label(i) << ',' << num(model.lifetime(i)) << ',' << num(est) << ','
        << num(est / model.lifetime(i) - 1.0) << '\n';
  }
  out.write("intrinsic_lifetimes.csv", tau.str());
}

inline void run_fig5(const ScenarioConfig& c, unsigned threads, OutputSet& out) {
  const ChannelLayout layout = c.layout();
  const auto runs = static_cast<std::size_t>(c.device_runs);
  std::vector<std::vector<std::uint64_t>> per_site(runs, std::vector<std::uint64_t>(layout.sites.size(), 0));
  std::vector<DeviceResult> summaries(runs);
  parallel_for(runs, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      DeviceResult result = device_run(c, layout, c.saw, r);
      for (const auto& p : result.photons) ++per_site[r][static_cast<std::size_t>(p.emitter_id - 1)];
      result.photons.clear();
      summaries[r] = std::move(result);
    }
  });
  std::vector<std::uint64_t> totals(layout.sites.size(), 0);
  for (const auto& run : per_site) {
    for (std::size_t i = 0; i < totals.size(); ++i) totals[i] += run[i];
  }
  EmitterWeights emitters;
  std::uint64_t photons = 0, lit = 0;
  std::ostringstream sites;
  sites << "site_id,x_um,y_um,photons\n";
  for (std::size_t i = 0; i < totals.size(); ++i) {
    const auto& s = layout.sites[i];
    sites << s.id << ',' << num(s.position_um.x) << ',' << num(s.position_um.y) << ',' << totals[i] << '\n';
    if (totals[i] > 0) {
      emitters.emplace_back(s.position_um, static_cast<double>(totals[i]));
      photons += totals[i];
      ++lit;
    }
  }
  out.write("sites.csv", sites.str());
  const PlImage image = render_pl_image(emitters, c.psf_sigma_um, c.image_spec());
  out.write_with("pl_image.pgm", [&](std::ostream& os) { write_pgm(os, image.spec.nx, image.spec.ny, image.values); });

  SpeciesLedger e, h;
  bool conserved = true;
  for (const auto& s : summaries) {
    e.generated += s.electrons.generated, e.captured += s.electrons.captured, e.exited += s.electrons.exited;
    h.generated += s.holes.generated, h.captured += s.holes.captured, h.exited += s.holes.exited;
    conserved = conserved && s.conservation_held;
  }
  std::ostringstream summary;
  summary << "metric,value\n";
  summary << "cycles," << static_cast<std::uint64_t>(c.device_runs) * c.pulses_per_run << '\n';
  summary << "sites," << layout.sites.size() << '\n';
  summary << "emitting_sites," << lit << '\n';
  summary << "photons," << photons << '\n';
  if (photons > 0) {
    summary << "upstream_fraction," << num(upstream_fraction(emitters, c.field_rect(), c.saw.direction)) << '\n';
    summary << "illuminated_fraction," << num(illuminated_fraction(emitters, c.field_rect(), c.cell_um)) << '\n';
  }
  summary << "electrons_generated," << e.generated << "\nelectrons_captured," << e.captured << "\nelectrons_exited,"
          << e.exited << "\nholes_generated," << h.generated << "\nholes_captured," << h.captured
          << "\nholes_exited," << h.exited << "\nconservation_held," << (conserved ? 1 : 0) << '\n';
  out.write("summary.csv", summary.str());
}

struct RemoteCondition {
  std::string name;
  SawWave saw;
};

inline std::vector<RemoteCondition> remote_conditions(const ScenarioConfig& c) {
  SawWave off = c.saw;
  off.amplitude = 0.0;
  SawWave reversed = c.saw;
  reversed.direction = -c.saw.direction;
  return {{"saw_off", off}, {"idt1", c.saw}, {"idt2", reversed}};
}

inline void run_fig7(const ScenarioConfig& c, unsigned threads, OutputSet& out) {
  const ChannelLayout layout = c.layout();
  const TransitionSpectrum spectrum = c.spectrum();
  const auto conditions = remote_conditions(c);
  const auto runs = static_cast<std::size_t>(c.device_runs);
  const std::size_t tasks = conditions.size() * runs;
  struct Partial {
    CcdFrame frame{FrameSpec{}};
    std::vector<std::uint64_t> photons;
    std::vector<std::uint64_t> formations;
    std::vector<std::uint64_t> violations;
    std::vector<double> min_margin;
  };
  std::vector<Partial> partials(tasks);
  parallel_for(tasks, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      const auto& cond = conditions[t / runs];
      const DeviceResult result = device_run(c, layout, cond.saw, t);
      Rng det = make_rng(c.master_seed, StreamDomain::kDetector, t);
      Partial part;
      part.frame = render_spatial_spectral(result.photons, c.frame, spectrum, det);
      const std::size_t n = layout.sites.size();
      part.photons.assign(n, 0);
      part.formations.assign(n, 0);
      part.violations.assign(n, 0);
      part.min_margin.assign(n, std::numeric_limits<double>::infinity());
      for (const auto& p : result.photons) ++part.photons[static_cast<std::size_t>(p.emitter_id - 1)];
      for (const auto& f : result.formations) {
        const auto i = static_cast<std::size_t>(f.site_id - 1);
        ++part.formations[i];
        const double margin = f.time_ns - f.causal_bound_ns;
        if (margin < -1e-9) ++part.violations[i];
        part.min_margin[i] = std::min(part.min_margin[i], margin);
      }
      partials[t] = std::move(part);
    }
  });
  std::ostringstream summary;
  summary << "condition,site_id,x_um,photons,formations,causality_violations,min_causal_margin_ns\n";
  for (std::size_t ci = 0; ci < conditions.size(); ++ci) {
    CcdFrame frame(c.frame);
    const std::size_t n = layout.sites.size();
    std::vector<std::uint64_t> photons(n, 0), formations(n, 0), violations(n, 0);
    std::vector<double> margin(n, std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < runs; ++r) {
      const Partial& part = partials[ci * runs + r];
      frame.merge(part.frame);
      for (std::size_t i = 0; i < n; ++i) {
        photons[i] += part.photons[i];
        formations[i] += part.formations[i];
        violations[i] += part.violations[i];
        margin[i] = std::min(margin[i], part.min_margin[i]);
      }
    }
    if (c.shot_noise) {
      Rng noise = make_rng(c.master_seed, StreamDomain::kDetector, tasks + ci);
      add_shot_noise(frame, noise);
    }
    const std::string& name = conditions[ci].name;
    out.write_with("frame_" + name + ".pgm", [&](std::ostream& os) { write_frame_pgm(os, frame); });
    out.write_with("profile_" + name + ".csv", [&](std::ostream& os) {
      os << "row_center_um,counts\n";
      for (int r = 0; r < frame.spec.rows; ++r) os << num(frame.spec.row_center(r)) << ',' << num(frame.row_sum(r)) << '\n';
      os << "overflow," << num(frame.overflow) << '\n';
    });
    if (ci == 0) out.write_with("frame_axes.csv", [&](std::ostream& os) { write_frame_axes_csv(os, frame); });
    for (std::size_t i = 0; i < n; ++i) {
      summary << name << ',' << layout.sites[i].id << ',' << num(layout.sites[i].position_um.x) << ',' << photons[i]
              << ',' << formations[i] << ',' << violations[i] << ','
              << (formations[i] > 0 ? num(margin[i]) : std::string()) << '\n';
    }
  }
  out.write("remote_summary.csv", summary.str());
}

inline void run_g2(const ScenarioConfig& c, unsigned threads, OutputSet& out) {
  const ChannelLayout layout = c.layout();
  const Irf irf{c.irf_fwhm_ns};
  const auto runs = static_cast<std::size_t>(c.device_runs);
  std::vector<G2Histogram> parts(runs);
  parallel_for(runs, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const DeviceResult result = device_run(c, layout, c.saw, r);
      Rng det = make_rng(c.master_seed, StreamDomain::kDetector, r);
      parts[r] = g2_histogram(jitter_stream(result.photons, irf, det), std::nullopt, c.g2_max_delay_ns, c.g2_bin_ns,
                              c.pulse_period_ns);
    }
  });
  G2Histogram total = parts[0];
  for (std::size_t r = 1; r < runs; ++r) merge_g2(total, parts[r]);
  out.write_with("g2.csv", [&](std::ostream& os) { write_g2_csv(os, total); });
  std::ostringstream summary;
  summary << "metric,value\n";
  summary << "cycles," << static_cast<std::uint64_t>(c.device_runs) * c.pulses_per_run << '\n';
  summary << "photons," << total.photons << '\n';
  summary << "zero_peak_area," << num(total.zero_peak_area) << '\n';
  summary << "mean_side_peak_area," << num(total.mean_side_peak_area) << '\n';
  summary << "side_peaks," << total.side_peaks << '\n';
  summary << "zero_peak_ratio," << (total.zero_peak_ratio ? num(*total.zero_peak_ratio) : std::string()) << '\n';
  out.write("g2_summary.csv", summary.str());
}

}  // namespace detail

struct RunOptions {
  std::filesystem::path out_dir;
  bool force = false;
  unsigned threads = 1;  // 0 = all hardware threads
};

/// Runs one preset into a staging directory next to `out_dir` and moves it
/// into place only after every file and the manifest are written.
inline Manifest run_scenario(const ScenarioConfig& config, const RunOptions& options) {
  validate(config);
  namespace fs = std::filesystem;
  if (options.out_dir.empty()) throw OutputError("--out: output directory must not be empty");
  const fs::path out = fs::absolute(options.out_dir).lexically_normal();
  if (fs::exists(out) && !options.force) {
    throw OutputError("--out: '" + out.string() + "' already exists (use --force to replace it)");
  }
  const unsigned threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.threads;
  const fs::path staging = out.parent_path() / (out.filename().string() + ".partial");
  fs::remove_all(staging);
  fs::create_directories(staging);
  Manifest manifest;
  try {
    OutputSet files(staging);
    const std::string canonical = to_json(config).dump(2) + "\n";
    files.write("config.json", canonical);
    const std::string& name = config.scenario;
    if (name == "fig3_power_series") {
      detail::run_fig3(config, threads, files);
    } else if (name == "fig4_transients") {
      detail::run_fig4(config, threads, files);
    } else if (name == "fig4c_delays") {
      detail::run_fig4c(config, threads, files);
    } else if (name == "fig5_ensemble") {
      detail::run_fig5(config, threads, files);
    } else if (name == "fig7_remote") {
      detail::run_fig7(config, threads, files);
    } else if (name == "g2_antibunching") {
      detail::run_g2(config, threads, files);
    } else {
      throw ConfigError("scenario: unknown scenario '" + name + "'");
    }
    manifest.scenario = name;
    manifest.seed = config.master_seed;
    manifest.config_sha256 = sha256_hex(canonical);
    manifest.files = files.entries();
    const std::string text = manifest.to_json().dump(2) + "\n";
    std::ofstream(staging / "manifest.json", std::ios::binary) << text;
    if (fs::exists(out)) fs::remove_all(out);
    fs::rename(staging, out);
  } catch (...) {
    std::error_code ignored;
    fs::remove_all(staging, ignored);
    throw;
  }
  return manifest;
}

}  // namespace sawsps
