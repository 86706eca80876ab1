// Feeds two dots 7 and 14 um away from the laser spot and prints, per dot, how
// many photons arrived and how soon after the laser pulse the first one came.
#include <cstdio>
#include <limits>
#include <map>

#include "sawsps.hpp"

int main() {
  using namespace sawsps;
  SawWave saw;  // 193 MHz, 15 um
  saw.direction = -1;

  ChannelLayout layout;
  layout.spot = {{0.0, 0.0}, 0.0, 2.0};
  const CascadeModel model({1.5, 1.4, 0.9});
  for (double x : {-7.0, -14.0}) {
    QdSite site;
    site.id = static_cast<int>(layout.sites.size()) + 1;
    site.position_um = {x, 0.0};
    site.model = model;
    layout.sites.push_back(site);
  }

  PumpSpec pump;
  pump.pulse_period_ns = 12.5;
  pump.num_pulses = 2000;
  const DeviceResult result = run_device(layout, saw, pump, pump.num_pulses * pump.pulse_period_ns, 42);

  std::map<int, std::pair<int, double>> per_site;  // photons, earliest lead after its pulse
  for (const auto& f : result.formations) {
    auto& [count, lead] = per_site.try_emplace(f.site_id, 0, std::numeric_limits<double>::infinity()).first->second;
    lead = std::min(lead, f.time_ns - f.latest_pulse_ns);
  }
  for (const auto& p : result.photons) ++per_site[p.emitter_id].first;

  for (const auto& site : layout.sites) {
    const auto& [count, lead] = per_site[site.id];
    std::printf("dot at %+5.1f um: %5d photons, earliest formation %.3f ns after its pulse (wave transit %.3f ns)\n",
                site.position_um.x, count, lead, arrival_delay(-site.position_um.x, saw));
  }
}
