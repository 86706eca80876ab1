#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "sawsps/analysis.hpp"
#include "sawsps/cascade.hpp"
#include "sawsps/core.hpp"
#include "sawsps/detector.hpp"
#include "sawsps/transport.hpp"

namespace sawsps {

using Json = nlohmann::json;

struct SiteConfig {
  double x_um = 0.0;
  double y_um = 0.0;
  double capture_radius_um = 0.1;
  double capture_prob = 0.5;
  double spectral_shift_nm = 0.0;
};

struct FieldConfig {
  bool enabled = false;
  double origin_x_um = 0.0;
  double origin_y_um = 0.0;
  double width_um = 10.0;
  double height_um = 10.0;
  double density_per_cm2 = 3e9;
  double capture_radius_um = 0.1;
  double capture_prob = 0.3;
};

/// Everything a preset run depends on. Units live in the key names.
struct ScenarioConfig {
  std::string scenario;
  std::uint64_t master_seed = 1;

  // cascade
  std::vector<double> lifetimes_ns{1.5, 1.4, 0.9};
  std::vector<std::string> labels{"1X", "2X", "3X"};

  // pump
  std::vector<double> powers_uw{2.0, 7.0, 19.0};
  double power_to_g_per_uw = 0.1;
  double pulse_period_ns = 12.5;

  // simulation
  std::uint64_t trajectories = 100;
  int pulses_per_trajectory = 1000;
  double bin_ns = 0.05;
  double window_origin_ns = -2.0;  // histogram window start relative to the pulse
  double step_ns = 0.01;
  int device_runs = 4;
  int pulses_per_run = 1000;
  double loss_per_um = 0.0;

  // saw
  SawWave saw;

  // layout
  double extent_min_um = -20.0;
  double extent_max_um = 20.0;
  double spot_x_um = 0.0;
  double spot_y_um = 0.0;
  double spot_radius_um = 0.5;
  double pairs_per_pulse = 1.0;
  double lane_width_um = 0.0;
  std::vector<SiteConfig> sites;
  FieldConfig field;

  // detector
  double irf_fwhm_ns = 0.35;
  std::map<std::string, SpectralLine> lines = TransitionSpectrum::defaults().lines;
  FrameSpec frame;
  double psf_sigma_um = 0.4;
  double image_origin_x_um = -1.0;
  double image_origin_y_um = -1.0;
  double image_pixel_um = 0.25;
  int image_nx = 48;
  int image_ny = 48;
  bool shot_noise = false;

  // analysis
  double onset_threshold_fraction = 0.1;
  double powerlaw_max_g = 0.1;
  double contamination_limit = 0.01;
  double g2_max_delay_ns = 62.5;
  double g2_bin_ns = 0.1;
  double cell_um = 1.0;

  [[nodiscard]] CascadeModel model() const { return CascadeModel(lifetimes_ns, labels); }
  [[nodiscard]] std::vector<double> g_values() const {
    std::vector<double> g;
    for (double p : powers_uw) g.push_back(power_to_g_per_uw * p);
    return g;
  }
  [[nodiscard]] TransitionSpectrum spectrum() const {
    TransitionSpectrum s;
    s.lines = lines;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (sites[i].spectral_shift_nm != 0.0) s.emitter_shift_nm[static_cast<int>(i) + 1] = sites[i].spectral_shift_nm;
    }
    return s;
  }
  [[nodiscard]] FieldRect field_rect() const {
    return {{field.origin_x_um, field.origin_y_um}, field.width_um, field.height_um};
  }
  [[nodiscard]] ImageSpec image_spec() const {
    return {{image_origin_x_um, image_origin_y_um}, image_pixel_um, image_nx, image_ny};
  }

  /// Channel with the listed sites (ids 1..n) followed by the random field.
  [[nodiscard]] ChannelLayout layout() const {
    ChannelLayout layout;
    layout.extent_min_um = extent_min_um;
    layout.extent_max_um = extent_max_um;
    layout.spot = {{spot_x_um, spot_y_um}, spot_radius_um, pairs_per_pulse};
    layout.lane_width_um = lane_width_um;
    const CascadeModel m = model();
    for (std::size_t i = 0; i < sites.size(); ++i) {
      QdSite site;
      site.id = static_cast<int>(i) + 1;
      site.position_um = {sites[i].x_um, sites[i].y_um};
      site.capture_radius_um = sites[i].capture_radius_um;
      site.capture_prob = sites[i].capture_prob;
      site.model = m;
      layout.sites.push_back(site);
    }
    if (field.enabled) {
      QdSite proto;
      proto.capture_radius_um = field.capture_radius_um;
      proto.capture_prob = field.capture_prob;
      proto.model = m;
      FieldSpec spec{{field.origin_x_um, field.origin_y_um}, field.width_um, field.height_um, field.density_per_cm2};
      auto extra = make_site_field(spec, proto, master_seed, static_cast<int>(sites.size()) + 1);
      for (auto& s : extra) layout.sites.push_back(std::move(s));
    }
    return layout;
  }
};

namespace detail {

// Reads one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class ConfigSection {
 public:
  ConfigSection(const Json& j, std::string path) : json_(j), path_(std::move(path)) {
    if (!json_.is_object()) throw ConfigError(where() + "must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = json_.find(key);
    if (it == json_.end()) return;
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_integer()) throw ConfigError(where(key) + "must be an integer");
      if (std::is_unsigned_v<T> && !it->is_number_unsigned() && it->template get<std::int64_t>() < 0) {
        throw ConfigError(where(key) + "must be non-negative");
      }
    }
    try {
      out = it->template get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(where(key) + "has the wrong type");
    }
  }

  template <class F>
  void section(const char* key, F&& body) {
    seen_.insert(key);
    const auto it = json_.find(key);
    if (it == json_.end()) return;
    ConfigSection child(*it, path_ + key + ".");
    body(child);
    child.finish();
  }

  template <class F>
  void array(const char* key, F&& body) {
    seen_.insert(key);
    const auto it = json_.find(key);
    if (it == json_.end()) return;
    if (!it->is_array()) throw ConfigError(where(key) + "must be an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      ConfigSection child((*it)[i], path_ + key + "[" + std::to_string(i) + "].");
      body(child, i);
      child.finish();
    }
  }

  [[nodiscard]] const Json& raw() const { return json_; }
  [[nodiscard]] std::string where(const std::string& key = {}) const {
    std::string full = path_ + key;
    if (!full.empty() && full.back() == '.') full.pop_back();
    return full.empty() ? "config: " : full + ": ";
  }

  void finish() const {
    for (const auto& [key, value] : json_.items()) {
      if (!seen_.contains(key)) throw ConfigError(where(key) + "unknown key");
    }
  }

 private:
  const Json& json_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Json to_json(const ScenarioConfig& c) {
  Json sites = Json::array();
  for (const auto& s : c.sites) {
    sites.push_back({{"x_um", s.x_um},
                     {"y_um", s.y_um},
                     {"capture_radius_um", s.capture_radius_um},
                     {"capture_prob", s.capture_prob},
                     {"spectral_shift_nm", s.spectral_shift_nm}});
  }
  Json lines = Json::object();
  for (const auto& [label, line] : c.lines) lines[label] = {{"center_nm", line.center_nm}, {"fwhm_mev", line.fwhm_mev}};
  return {
      {"scenario", c.scenario},
      {"master_seed", c.master_seed},
      {"cascade", {{"lifetimes_ns", c.lifetimes_ns}, {"labels", c.labels}}},
      {"pump",
       {{"powers_uw", c.powers_uw}, {"power_to_g_per_uw", c.power_to_g_per_uw}, {"pulse_period_ns", c.pulse_period_ns}}},
      {"simulation",
       {{"trajectories", c.trajectories},
        {"pulses_per_trajectory", c.pulses_per_trajectory},
        {"bin_ns", c.bin_ns},
        {"window_origin_ns", c.window_origin_ns},
        {"step_ns", c.step_ns},
        {"device_runs", c.device_runs},
        {"pulses_per_run", c.pulses_per_run},
        {"loss_per_um", c.loss_per_um}}},
      {"saw",
       {{"frequency_mhz", c.saw.frequency_mhz},
        {"wavelength_um", c.saw.wavelength_um},
        {"amplitude", c.saw.amplitude},
        {"direction", c.saw.direction},
        {"phase_rad", c.saw.phase_rad}}},
      {"layout",
       {{"extent_min_um", c.extent_min_um},
        {"extent_max_um", c.extent_max_um},
        {"spot_x_um", c.spot_x_um},
        {"spot_y_um", c.spot_y_um},
        {"spot_radius_um", c.spot_radius_um},
        {"pairs_per_pulse", c.pairs_per_pulse},
        {"lane_width_um", c.lane_width_um},
        {"sites", sites},
        {"field",
         {{"enabled", c.field.enabled},
          {"origin_x_um", c.field.origin_x_um},
          {"origin_y_um", c.field.origin_y_um},
          {"width_um", c.field.width_um},
          {"height_um", c.field.height_um},
          {"density_per_cm2", c.field.density_per_cm2},
          {"capture_radius_um", c.field.capture_radius_um},
          {"capture_prob", c.field.capture_prob}}}}},
      {"detector",
       {{"irf_fwhm_ns", c.irf_fwhm_ns},
        {"lines", lines},
        {"frame",
         {{"row_origin_um", c.frame.row_origin_um},
          {"row_pitch_um", c.frame.row_pitch_um},
          {"rows", c.frame.rows},
          {"col_origin_nm", c.frame.col_origin_nm},
          {"col_pitch_nm", c.frame.col_pitch_nm},
          {"cols", c.frame.cols}}},
        {"psf_sigma_um", c.psf_sigma_um},
        {"image",
         {{"origin_x_um", c.image_origin_x_um},
          {"origin_y_um", c.image_origin_y_um},
          {"pixel_um", c.image_pixel_um},
          {"nx", c.image_nx},
          {"ny", c.image_ny}}},
        {"shot_noise", c.shot_noise}}},
      {"analysis",
       {{"onset_threshold_fraction", c.onset_threshold_fraction},
        {"powerlaw_max_g", c.powerlaw_max_g},
        {"contamination_limit", c.contamination_limit},
        {"g2_max_delay_ns", c.g2_max_delay_ns},
        {"g2_bin_ns", c.g2_bin_ns},
        {"cell_um", c.cell_um}}},
  };
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are errors.
inline void apply_json(ScenarioConfig& c, const Json& j) {
  detail::ConfigSection root(j, "");
  std::string name = c.scenario;
  root.get("scenario", name);
  if (name != c.scenario) throw ConfigError("scenario: config names '" + name + "' but '" + c.scenario + "' was requested");
  root.get("master_seed", c.master_seed);
  root.section("cascade", [&](auto& s) {
    s.get("lifetimes_ns", c.lifetimes_ns);
    s.get("labels", c.labels);
  });
  root.section("pump", [&](auto& s) {
    s.get("powers_uw", c.powers_uw);
    s.get("power_to_g_per_uw", c.power_to_g_per_uw);
    s.get("pulse_period_ns", c.pulse_period_ns);
  });
  root.section("simulation", [&](auto& s) {
    s.get("trajectories", c.trajectories);
    s.get("pulses_per_trajectory", c.pulses_per_trajectory);
    s.get("bin_ns", c.bin_ns);
    s.get("window_origin_ns", c.window_origin_ns);
    s.get("step_ns", c.step_ns);
    s.get("device_runs", c.device_runs);
    s.get("pulses_per_run", c.pulses_per_run);
    s.get("loss_per_um", c.loss_per_um);
  });
  root.section("saw", [&](auto& s) {
    s.get("frequency_mhz", c.saw.frequency_mhz);
    s.get("wavelength_um", c.saw.wavelength_um);
    s.get("amplitude", c.saw.amplitude);
    s.get("direction", c.saw.direction);
    s.get("phase_rad", c.saw.phase_rad);
  });
  root.section("layout", [&](auto& s) {
    s.get("extent_min_um", c.extent_min_um);
    s.get("extent_max_um", c.extent_max_um);
    s.get("spot_x_um", c.spot_x_um);
    s.get("spot_y_um", c.spot_y_um);
    s.get("spot_radius_um", c.spot_radius_um);
    s.get("pairs_per_pulse", c.pairs_per_pulse);
    s.get("lane_width_um", c.lane_width_um);
    if (s.raw().contains("sites")) c.sites.clear();
    s.array("sites", [&](auto& e, std::size_t) {
      SiteConfig site;
      e.get("x_um", site.x_um);
      e.get("y_um", site.y_um);
      e.get("capture_radius_um", site.capture_radius_um);
      e.get("capture_prob", site.capture_prob);
      e.get("spectral_shift_nm", site.spectral_shift_nm);
      c.sites.push_back(site);
    });
    s.section("field", [&](auto& f) {
      f.get("enabled", c.field.enabled);
      f.get("origin_x_um", c.field.origin_x_um);
      f.get("origin_y_um", c.field.origin_y_um);
      f.get("width_um", c.field.width_um);
      f.get("height_um", c.field.height_um);
      f.get("density_per_cm2", c.field.density_per_cm2);
      f.get("capture_radius_um", c.field.capture_radius_um);
      f.get("capture_prob", c.field.capture_prob);
    });
  });
  root.section("detector", [&](auto& s) {
    s.get("irf_fwhm_ns", c.irf_fwhm_ns);
    if (s.raw().contains("lines")) {
      c.lines.clear();
      s.section("lines", [&](auto& l) {
        for (const auto& [label, value] : l.raw().items()) {
          SpectralLine line;
          l.section(label.c_str(), [&](auto& e) {
            e.get("center_nm", line.center_nm);
            e.get("fwhm_mev", line.fwhm_mev);
          });
          c.lines[label] = line;
        }
      });
    }
    s.section("frame", [&](auto& f) {
      f.get("row_origin_um", c.frame.row_origin_um);
      f.get("row_pitch_um", c.frame.row_pitch_um);
      f.get("rows", c.frame.rows);
      f.get("col_origin_nm", c.frame.col_origin_nm);
      f.get("col_pitch_nm", c.frame.col_pitch_nm);
      f.get("cols", c.frame.cols);
    });
    s.get("psf_sigma_um", c.psf_sigma_um);
    s.section("image", [&](auto& im) {
      im.get("origin_x_um", c.image_origin_x_um);
      im.get("origin_y_um", c.image_origin_y_um);
      im.get("pixel_um", c.image_pixel_um);
      im.get("nx", c.image_nx);
      im.get("ny", c.image_ny);
    });
    s.get("shot_noise", c.shot_noise);
  });
  root.section("analysis", [&](auto& s) {
    s.get("onset_threshold_fraction", c.onset_threshold_fraction);
    s.get("powerlaw_max_g", c.powerlaw_max_g);
    s.get("contamination_limit", c.contamination_limit);
    s.get("g2_max_delay_ns", c.g2_max_delay_ns);
    s.get("g2_bin_ns", c.g2_bin_ns);
    s.get("cell_um", c.cell_um);
  });
  root.finish();
}

/// Field-level checks of every module precondition, run before any work.
inline void validate(const ScenarioConfig& c) {
  auto fail = [](const std::string& field, const std::string& what) { throw ConfigError(field + ": " + what); };
  {
    // Delegate lifetime/label checks to the model, but name the field.
    try {
      (void)c.model();
    } catch (const ConfigError& e) {
      fail("cascade", e.what());
    }
  }
  if (c.powers_uw.empty()) fail("pump.powers_uw", "needs at least one power");
  for (std::size_t i = 0; i < c.powers_uw.size(); ++i) {
    if (!(c.powers_uw[i] > 0.0)) fail("pump.powers_uw", "powers must be > 0");
    if (i > 0 && !(c.powers_uw[i] > c.powers_uw[i - 1])) fail("pump.powers_uw", "powers must be ascending");
  }
  if (!(c.power_to_g_per_uw > 0.0)) fail("pump.power_to_g_per_uw", "must be > 0");
  if (!(c.pulse_period_ns > 0.0)) fail("pump.pulse_period_ns", "must be > 0");
  if (c.trajectories < 1) fail("simulation.trajectories", "must be >= 1");
  if (c.pulses_per_trajectory < 1) fail("simulation.pulses_per_trajectory", "must be >= 1");
  if (!(c.bin_ns > 0.0) || c.bin_ns > c.pulse_period_ns) fail("simulation.bin_ns", "must lie in (0, pulse_period_ns]");
  if (!(c.window_origin_ns <= 0.0 && c.window_origin_ns > -c.pulse_period_ns)) {
    fail("simulation.window_origin_ns", "must lie in (-pulse_period_ns, 0]");
  }
  if (!(c.step_ns > 0.0) || c.step_ns > c.model().min_lifetime() / 20.0) {
    fail("simulation.step_ns", "must be > 0 and <= min lifetime / 20");
  }
  if (c.device_runs < 1) fail("simulation.device_runs", "must be >= 1");
  if (c.pulses_per_run < 1) fail("simulation.pulses_per_run", "must be >= 1");
  if (!(c.loss_per_um >= 0.0)) fail("simulation.loss_per_um", "must be >= 0");
  try {
    c.saw.validate();
  } catch (const ConfigError& e) {
    fail("saw", e.what());
  }
  if (!(c.spot_radius_um >= 0.0)) fail("layout.spot_radius_um", "must be >= 0");
  if (!(c.pairs_per_pulse >= 0.0)) fail("layout.pairs_per_pulse", "must be >= 0");
  if (!(c.extent_max_um > c.extent_min_um)) fail("layout.extent_min_um", "extent must be a non-empty interval");
  for (std::size_t i = 0; i < c.sites.size(); ++i) {
    const auto& s = c.sites[i];
    const std::string f = "layout.sites[" + std::to_string(i) + "]";
    if (s.x_um < c.extent_min_um || s.x_um > c.extent_max_um) fail(f + ".x_um", "site lies outside the channel extent");
    if (!(s.capture_radius_um > 0.0)) fail(f + ".capture_radius_um", "must be > 0");
    if (!(s.capture_prob >= 0.0 && s.capture_prob <= 1.0)) fail(f + ".capture_prob", "must lie in [0, 1]");
  }
  if (c.field.enabled) {
    if (!(c.field.width_um > 0.0 && c.field.height_um > 0.0)) fail("layout.field", "width and height must be > 0");
    if (c.field.origin_x_um < c.extent_min_um || c.field.origin_x_um + c.field.width_um > c.extent_max_um) {
      fail("layout.field", "field must lie inside the channel extent");
    }
    if (!(c.field.density_per_cm2 >= 0.0)) fail("layout.field.density_per_cm2", "must be >= 0");
    if (!(c.field.capture_radius_um > 0.0)) fail("layout.field.capture_radius_um", "must be > 0");
    if (!(c.field.capture_prob >= 0.0 && c.field.capture_prob <= 1.0)) {
      fail("layout.field.capture_prob", "must lie in [0, 1]");
    }
  }
  if (!(c.irf_fwhm_ns > 0.0)) fail("detector.irf_fwhm_ns", "must be > 0");
  if (c.bin_ns > c.irf_fwhm_ns) fail("simulation.bin_ns", "must not exceed detector.irf_fwhm_ns");
  for (const auto& label : c.labels) {
    if (!c.lines.contains(label)) fail("detector.lines", "no line for transition '" + label + "'");
  }
  for (const auto& [label, line] : c.lines) {
    if (!(line.center_nm > 0.0)) fail("detector.lines." + label + ".center_nm", "must be > 0");
    if (!(line.fwhm_mev >= 0.0)) fail("detector.lines." + label + ".fwhm_mev", "must be >= 0");
  }
  try {
    c.frame.validate();
  } catch (const ConfigError& e) {
    fail("detector.frame", e.what());
  }
  if (!(c.psf_sigma_um > 0.0)) fail("detector.psf_sigma_um", "must be > 0");
  if (!(c.image_pixel_um > 0.0) || c.image_nx < 1 || c.image_ny < 1) fail("detector.image", "invalid image geometry");
  if (!(c.onset_threshold_fraction > 0.0 && c.onset_threshold_fraction < 1.0)) {
    fail("analysis.onset_threshold_fraction", "must lie in (0, 1)");
  }
  if (!(c.powerlaw_max_g > 0.0)) fail("analysis.powerlaw_max_g", "must be > 0");
  if (!(c.contamination_limit > 0.0 && c.contamination_limit < 1.0)) {
    fail("analysis.contamination_limit", "must lie in (0, 1)");
  }
  if (!(c.g2_bin_ns > 0.0)) fail("analysis.g2_bin_ns", "must be > 0");
  if (!(c.g2_max_delay_ns >= 1.5 * c.pulse_period_ns)) {
    fail("analysis.g2_max_delay_ns", "must cover at least one side peak (>= 1.5 pulse periods)");
  }
  if (!(c.cell_um > 0.0)) fail("analysis.cell_um", "must be > 0");
}

}  // namespace sawsps
