#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "sawsps/core.hpp"
#include "sawsps/emitter.hpp"
#include "sawsps/random.hpp"

namespace sawsps {

/// Gaussian instrument response.
struct Irf {
  double fwhm_ns = 0.35;

  [[nodiscard]] double sigma_ns() const { return fwhm_ns / kFwhmPerSigma; }

  /// Point-sampled kernel on the given step, truncated at +-5 sigma and
  /// normalized to unit sum. Element h is the zero-lag tap.
  [[nodiscard]] std::vector<double> kernel(double step_ns) const {
    require(fwhm_ns > 0.0, "IRF fwhm must be > 0");
    require(step_ns > 0.0 && step_ns <= fwhm_ns, "grid step exceeds IRF fwhm (undersampled kernel)");
    const double sigma = sigma_ns();
    const auto half = static_cast<std::size_t>(std::ceil(5.0 * sigma / step_ns));
    std::vector<double> k(2 * half + 1);
    double sum = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      const double t = (static_cast<double>(j) - static_cast<double>(half)) * step_ns;
      k[j] = std::exp(-0.5 * t * t / (sigma * sigma));
      sum += k[j];
    }
    for (double& v : k) v /= sum;
    return k;
  }
};

/// Full discrete convolution. The output grid grows by the kernel half-width
/// on both sides, so no area is lost at the edges.
inline Transient convolve_irf(const Transient& in, const Irf& irf) {
  const auto k = irf.kernel(in.step_ns);
  const std::size_t half = k.size() / 2;
  Transient out{in.t0_ns - static_cast<double>(half) * in.step_ns, in.step_ns,
                std::vector<double>(in.size() + k.size() - 1, 0.0)};
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in.values[i];
    if (v == 0.0) continue;
    for (std::size_t j = 0; j < k.size(); ++j) out.values[i + j] += v * k[j];
  }
  return out;
}

/// Convolution cropped back to the input grid.
inline Transient convolve_irf_same(const Transient& in, const Irf& irf) {
  Transient full = convolve_irf(in, irf);
  const std::size_t half = (full.size() - in.size()) / 2;
  return {in.t0_ns, in.step_ns,
          std::vector<double>(full.values.begin() + static_cast<std::ptrdiff_t>(half),
                              full.values.begin() + static_cast<std::ptrdiff_t>(half + in.size()))};
}

/// Per-photon timing jitter. Jittered times near t = 0 may become negative.
inline PhotonRecord jitter_photon(PhotonRecord record, const Irf& irf, Rng& rng) {
  record.time_ns += sample_normal(0.0, irf.sigma_ns(), rng);
  return record;
}

inline PhotonStream jitter_stream(const PhotonStream& stream, const Irf& irf, Rng& rng) {
  PhotonStream out;
  out.reserve(stream.size());
  for (const auto& p : stream) out.push_back(jitter_photon(p, irf, rng));
  sort_by_time(out);
  return out;
}

/// Linewidth (FWHM) in nm of a line at `center_nm` with energy FWHM `mev`.
inline double mev_to_nm(double center_nm, double mev) { return center_nm * center_nm * mev * 1e-3 / kHcEvNm; }

struct SpectralLine {
  double center_nm = 878.0;
  double fwhm_mev = 0.8;
};

/// Line positions per transition, with optional per-emitter offsets so that
/// different dots show distinct line sets.
struct TransitionSpectrum {
  std::map<std::string, SpectralLine> lines;
  std::map<int, double> emitter_shift_nm;

  static TransitionSpectrum defaults() {
    TransitionSpectrum s;
    s.lines["1X"] = {878.0, 0.8};
    s.lines["2X"] = {879.0, 1.1};
    s.lines["3X"] = {863.0, 1.1};
    return s;
  }

  void validate() const {
    for (const auto& [label, line] : lines) {
      if (!(line.center_nm > 0.0)) throw ConfigError("line " + label + " needs a positive wavelength");
      if (!(line.fwhm_mev >= 0.0)) throw ConfigError("line " + label + " needs a non-negative linewidth");
    }
  }

  [[nodiscard]] std::pair<double, double> center_and_sigma_nm(int emitter, const std::string& label) const {
    const auto it = lines.find(label);
    if (it == lines.end()) throw PreconditionError("no spectral line for transition '" + label + "'");
    double center = it->second.center_nm;
    if (const auto s = emitter_shift_nm.find(emitter); s != emitter_shift_nm.end()) center += s->second;
    return {center, mev_to_nm(center, it->second.fwhm_mev) / kFwhmPerSigma};
  }

  [[nodiscard]] double sample_wavelength(const PhotonRecord& p, Rng& rng) const {
    const auto [center, sigma] = center_and_sigma_nm(p.emitter_id, p.transition);
    return sample_normal(center, sigma, rng);
  }
};

struct Band {
  double center_nm = 878.0;
  double width_nm = 1.0;

  [[nodiscard]] bool contains(double wavelength_nm) const {
    return std::abs(wavelength_nm - center_nm) <= 0.5 * width_nm;
  }
};

inline PhotonStream bandpass_filter(const PhotonStream& stream, const Band& band, const TransitionSpectrum& spectrum,
                                    Rng& rng) {
  require(band.width_nm > 0.0, "band width must be > 0");
  PhotonStream out;
  for (const auto& p : stream) {
    if (band.contains(spectrum.sample_wavelength(p, rng))) out.push_back(p);
  }
  return out;
}

struct FrameSpec {
  double row_origin_um = -20.0;  // lower edge of row 0 along the transport axis
  double row_pitch_um = 0.5;
  int rows = 80;
  double col_origin_nm = 860.0;
  double col_pitch_nm = 0.1;
  int cols = 250;

  void validate() const {
    if (rows < 1 || cols < 1) throw ConfigError("frame needs at least one row and column");
    if (!(row_pitch_um > 0.0) || !(col_pitch_nm > 0.0)) throw ConfigError("frame pitches must be > 0");
  }
  [[nodiscard]] double row_center(int r) const { return row_origin_um + (r + 0.5) * row_pitch_um; }
  [[nodiscard]] double col_center(int c) const { return col_origin_nm + (c + 0.5) * col_pitch_nm; }
};

/// Spatial (rows) by spectral (columns) intensity grid.
struct CcdFrame {
  FrameSpec spec;
  std::vector<double> intensity;  // row-major
  long long overflow = 0;

  explicit CcdFrame(FrameSpec s) : spec(s), intensity(static_cast<std::size_t>(s.rows) * s.cols, 0.0) {
    spec.validate();
  }

  [[nodiscard]] double at(int row, int col) const {
    return intensity[static_cast<std::size_t>(row) * spec.cols + col];
  }
  double& at(int row, int col) { return intensity[static_cast<std::size_t>(row) * spec.cols + col]; }

  [[nodiscard]] double total() const {
    double t = 0.0;
    for (double v : intensity) t += v;
    return t;
  }
  [[nodiscard]] double row_sum(int row) const {
    double t = 0.0;
    for (int c = 0; c < spec.cols; ++c) t += at(row, c);
    return t;
  }
  /// Frames over the same spec add bin by bin.
  void merge(const CcdFrame& other) {
    for (std::size_t i = 0; i < intensity.size(); ++i) intensity[i] += other.intensity[i];
    overflow += other.overflow;
  }
};

inline CcdFrame render_spatial_spectral(const PhotonStream& stream, const FrameSpec& spec,
                                        const TransitionSpectrum& spectrum, Rng& rng) {
  CcdFrame frame(spec);
  for (const auto& p : stream) {
    const double wl = spectrum.sample_wavelength(p, rng);
    const double r = std::floor((p.position_um.x - spec.row_origin_um) / spec.row_pitch_um);
    const double c = std::floor((wl - spec.col_origin_nm) / spec.col_pitch_nm);
    if (r < 0 || r >= spec.rows || c < 0 || c >= spec.cols) {
      ++frame.overflow;
      continue;
    }
    frame.at(static_cast<int>(r), static_cast<int>(c)) += 1.0;
  }
  return frame;
}

/// Replaces each bin by a Poisson draw around it (realistic frames).
inline void add_shot_noise(CcdFrame& frame, Rng& rng) {
  for (double& v : frame.intensity) v = static_cast<double>(sample_poisson(v, rng));
}

struct ImageSpec {
  Vec2 origin_um{0.0, 0.0};
  double pixel_um = 0.25;
  int nx = 40;
  int ny = 40;
};

struct PlImage {
  ImageSpec spec;
  std::vector<double> values;  // row-major, row = y index
  double outside_mass = 0.0;   // PSF weight that fell off the image

  [[nodiscard]] double at(int ix, int iy) const { return values[static_cast<std::size_t>(iy) * spec.nx + ix]; }
  [[nodiscard]] double total() const {
    double t = 0.0;
    for (double v : values) t += v;
    return t;
  }
};

/// Weighted point emitters for PL imaging: position and photon count.
using EmitterWeights = std::vector<std::pair<Vec2, double>>;

/// Splats each emitter as a pixel-integrated Gaussian PSF scaled by its weight.
inline PlImage render_pl_image(const EmitterWeights& emitters, double psf_sigma_um, const ImageSpec& spec) {
  require(psf_sigma_um > 0.0, "psf sigma must be > 0");
  require(spec.nx > 0 && spec.ny > 0 && spec.pixel_um > 0.0, "invalid image spec");
  PlImage img{spec, std::vector<double>(static_cast<std::size_t>(spec.nx) * spec.ny, 0.0), 0.0};
  const double scale = 1.0 / (std::sqrt(2.0) * psf_sigma_um);
  auto weights = [&](double center, double origin, int n, int& first) {
    const int lo = std::max(0, static_cast<int>(std::floor((center - 8.0 * psf_sigma_um - origin) / spec.pixel_um)));
    const int hi = std::min(n - 1, static_cast<int>(std::floor((center + 8.0 * psf_sigma_um - origin) / spec.pixel_um)));
    first = lo;
    std::vector<double> w;
    for (int i = lo; i <= hi; ++i) {
      const double a = origin + i * spec.pixel_um - center;
      w.push_back(0.5 * (std::erf((a + spec.pixel_um) * scale) - std::erf(a * scale)));
    }
    return w;
  };
  for (const auto& [pos, weight] : emitters) {
    int x0 = 0, y0 = 0;
    const auto wx = weights(pos.x, spec.origin_um.x, spec.nx, x0);
    const auto wy = weights(pos.y, spec.origin_um.y, spec.ny, y0);
    double inside = 0.0;
    for (std::size_t j = 0; j < wy.size(); ++j) {
      for (std::size_t i = 0; i < wx.size(); ++i) {
        const double w = wx[i] * wy[j];
        img.values[static_cast<std::size_t>(y0 + static_cast<int>(j)) * spec.nx + x0 + static_cast<int>(i)] +=
            weight * w;
        inside += w;
      }
    }
    img.outside_mass += weight * (1.0 - inside);
  }
  return img;
}

/// One unit-weight splat per photon, at the photon position.
inline PlImage render_pl_image(const PhotonStream& stream, double psf_sigma_um, const ImageSpec& spec) {
  EmitterWeights emitters;
  emitters.reserve(stream.size());
  for (const auto& p : stream) emitters.emplace_back(p.position_um, 1.0);
  return render_pl_image(emitters, psf_sigma_um, spec);
}

// ---- export ----------------------------------------------------------------

/// Portable graymap, 16-bit, scaled so the maximum maps to 65535.
inline void write_pgm(std::ostream& os, int width, int height, const std::vector<double>& values, bool binary = true) {
  double peak = 0.0;
  for (double v : values) peak = std::max(peak, v);
  auto level = [&](double v) -> unsigned {
    return peak > 0.0 ? static_cast<unsigned>(std::llround(std::max(0.0, v) / peak * 65535.0)) : 0u;
  };
  os << (binary ? "P5\n" : "P2\n") << width << ' ' << height << "\n65535\n";
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const unsigned g = level(values[static_cast<std::size_t>(r) * width + c]);
      if (binary) {
        os.put(static_cast<char>((g >> 8) & 0xFF));
        os.put(static_cast<char>(g & 0xFF));
      } else {
        os << g << (c + 1 == width ? '\n' : ' ');
      }
    }
  }
}

inline void write_frame_pgm(std::ostream& os, const CcdFrame& frame, bool binary = true) {
  write_pgm(os, frame.spec.cols, frame.spec.rows, frame.intensity, binary);
}

inline void write_frame_axes_csv(std::ostream& os, const CcdFrame& frame) {
  os << "axis,index,center\n";
  char buf[96];
  for (int r = 0; r < frame.spec.rows; ++r) {
    std::snprintf(buf, sizeof buf, "row_um,%d,%.10g\n", r, frame.spec.row_center(r));
    os << buf;
  }
  for (int c = 0; c < frame.spec.cols; ++c) {
    std::snprintf(buf, sizeof buf, "col_nm,%d,%.10g\n", c, frame.spec.col_center(c));
    os << buf;
  }
}

inline void write_transient_csv(std::ostream& os, const Transient& t) {
  os << "t_ns,intensity\n";
  char buf[96];
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.10g,%.17g\n", t.time(i), t.values[i]);
    os << buf;
  }
}

}  // namespace sawsps
