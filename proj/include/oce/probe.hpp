#pragma once

// Virtual fiber-scanning endoscope: scan trajectories and synthesis of complex
// OCT A-lines that observe the simulated wave field.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "oce/error.hpp"
#include "oce/geometry.hpp"
#include "oce/seed.hpp"
#include "oce/wavefield.hpp"

namespace oce {

enum class ScanMode : std::uint8_t { line2dt = 0, cone3dt = 1 };

inline std::string to_string(ScanMode m) { return m == ScanMode::line2dt ? "line2dt" : "cone3dt"; }

inline ScanMode scan_mode_from_string(const std::string& s) {
  if (s == "line2dt") return ScanMode::line2dt;
  if (s == "cone3dt") return ScanMode::cone3dt;
  throw ConfigError("unknown scan mode '" + s + "' (expected line2dt or cone3dt)");
}

struct TrajectoryImperfection {
  double ellipticity = 0.0;  // relative gain error of the y deflection
  Vec2 drift_mm_per_s;       // linear drift of the scan centre
  double jitter_std_mm = 0.0;
};

struct ScanConfig {
  ScanMode mode = ScanMode::line2dt;
  double cycle_freq_hz = 5051.6;
  int lines_per_cycle = 314;
  double aperture_mm = 1.5;
  int depth_pixels = 600;
  double depth_extent_mm = 2.0;
  double center_wavelength_nm = 1315.0;
  double refractive_index = 1.38;
  TrajectoryImperfection imperfection;
  int surface_pixel = 60;          // first depth pixel inside the sample
  double speckle_pitch_mm = 0.016;  // lateral correlation length of the speckle field
  double settle_time_s = 0.2;      // excitation runs at least this long before line 0

  double line_period_s() const { return 1.0 / (cycle_freq_hz * lines_per_cycle); }
  double pixel_size_mm() const { return depth_extent_mm / depth_pixels; }
  // Double-pass phase sensitivity, rad per micrometre of axial displacement.
  double phase_per_um() const { return 4.0 * kPi * refractive_index / (center_wavelength_nm * 1e-3); }

  void validate() const {
    if (lines_per_cycle < 2) throw DomainError("scan: lines_per_cycle must be >= 2");
    if (depth_pixels < 128) throw DomainError("scan: depth_pixels must be >= 128");
    if (depth_pixels > 65535) throw DomainError("scan: depth_pixels must fit in 16 bits");
    if (!(aperture_mm > 0.0)) throw DomainError("scan: aperture must be > 0");
    if (!(cycle_freq_hz > 0.0)) throw DomainError("scan: cycle frequency must be > 0");
    if (!(depth_extent_mm > 0.0)) throw DomainError("scan: depth extent must be > 0");
    if (!(center_wavelength_nm > 0.0) || !(refractive_index > 0.0))
      throw DomainError("scan: wavelength and refractive index must be > 0");
    if (surface_pixel < 0 || surface_pixel >= depth_pixels)
      throw DomainError("scan: surface pixel outside the depth range");
    if (!(speckle_pitch_mm > 0.0)) throw DomainError("scan: speckle pitch must be > 0");
    if (!(settle_time_s >= 0.0)) throw DomainError("scan: settle time must be >= 0");
    if (!(imperfection.jitter_std_mm >= 0.0)) throw DomainError("scan: jitter must be >= 0");
  }
};

struct NoiseSpec {
  bool speckle = true;
  double phase_noise_floor = 0.0;  // rad; phase noise sigma = floor / local SNR
  double intensity_snr_db = 30.0;  // sample reflectivity over additive noise; +inf disables
  double depth_decay_per_mm = 0.3;

  static NoiseSpec off() {
    return {.speckle = true,
            .phase_noise_floor = 0.0,
            .intensity_snr_db = std::numeric_limits<double>::infinity(),
            .depth_decay_per_mm = 0.0};
  }

  bool additive() const { return std::isfinite(intensity_snr_db); }
  // RMS magnitude of the complex additive noise relative to unit mean reflectivity.
  double noise_rms() const { return additive() ? std::pow(10.0, -intensity_snr_db / 20.0) : 0.0; }

  void validate() const {
    if (!(phase_noise_floor >= 0.0)) throw DomainError("noise: phase noise floor must be >= 0");
    if (!(depth_decay_per_mm >= 0.0)) throw DomainError("noise: depth decay must be >= 0");
    if (std::isnan(intensity_snr_db)) throw DomainError("noise: SNR is NaN");
  }
};

// Beam position relative to the probe centre at time t, without random jitter.
inline Vec2 trajectory(ScanMode mode, double t, const ScanConfig& config) {
  const double r = 0.5 * config.aperture_mm;
  const double w = kTwoPi * config.cycle_freq_hz * t;
  const auto& imp = config.imperfection;
  Vec2 p{r * std::sin(w), mode == ScanMode::cone3dt ? r * (1.0 + imp.ellipticity) * std::cos(w) : 0.0};
  return p + t * imp.drift_mm_per_s;
}

struct RawRecording {
  ScanConfig config;
  MediumSpec medium_truth;  // in-memory only; files carry geometry, not the phantom
  Vec2 source_xy_mm;
  Vec2 probe_center_mm;
  std::uint64_t seed = 0;
  double start_time_s = 0.0;  // excitation clock at line 0; in-memory only
  std::size_t n_lines = 0;
  std::vector<std::complex<float>> samples;  // n_lines x depth_pixels, line-major

  std::size_t depth() const { return static_cast<std::size_t>(config.depth_pixels); }
  std::size_t cycles() const { return n_lines / static_cast<std::size_t>(config.lines_per_cycle); }

  std::span<const std::complex<float>> line(std::size_t i) const {
    return {samples.data() + i * depth(), depth()};
  }
  std::span<std::complex<float>> line(std::size_t i) { return {samples.data() + i * depth(), depth()}; }
};

// Whole scan cycles are recorded, so the number of lines is always a multiple of
// lines_per_cycle: 106.89 ms at 5051.6 Hz rounds to 540 cycles = 169,560 lines.
inline std::size_t recording_lines(double duration_s, const ScanConfig& config) {
  const auto cycles = static_cast<std::size_t>(std::llround(duration_s * config.cycle_freq_hz));
  return cycles * static_cast<std::size_t>(config.lines_per_cycle);
}

namespace detail {

// Static complex speckle field on a lateral lattice, one column of depth samples per
// lattice node. Columns are generated on first use from a per-node seed, so the
// field is independent of the order in which positions are visited.
class SpeckleField {
 public:
  SpeckleField(std::uint64_t seed, double pitch_mm, int depth_pixels, int first_pixel)
      : seed_(seed), pitch_(pitch_mm), depth_(depth_pixels), first_(first_pixel) {}

  // Interpolated, variance-normalised complex reflectivity column at position p.
  void sample(Vec2 p, std::vector<std::complex<float>>& out) {
    const double gx = p.x / pitch_;
    const double gy = p.y / pitch_;
    const auto ix = static_cast<std::int64_t>(std::floor(gx));
    const auto iy = static_cast<std::int64_t>(std::floor(gy));
    const double fx = gx - static_cast<double>(ix);
    const double fy = gy - static_cast<double>(iy);
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const double norm = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2] + w[3] * w[3]);
    const std::vector<std::complex<float>>* cols[4] = {&column(ix, iy), &column(ix + 1, iy),
                                                      &column(ix, iy + 1), &column(ix + 1, iy + 1)};
    out.assign(static_cast<std::size_t>(depth_), {0.0f, 0.0f});
    for (int k = 0; k < 4; ++k) {
      const float wk = static_cast<float>(w[k] / norm);
      if (wk == 0.0f) continue;
      const auto& col = *cols[k];
      for (int d = first_; d < depth_; ++d) out[d] += wk * col[d];
    }
  }

 private:
  const std::vector<std::complex<float>>& column(std::int64_t ix, std::int64_t iy) {
    const std::uint64_t key = (static_cast<std::uint64_t>(ix) << 32) ^ (static_cast<std::uint64_t>(iy) & 0xffffffffULL);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    boost::random::mt19937_64 rng(derive_seed(seed_, key));
    boost::random::normal_distribution<float> normal(0.0f, static_cast<float>(1.0 / std::sqrt(2.0)));
    std::vector<std::complex<float>> col(static_cast<std::size_t>(depth_));
    for (int d = first_; d < depth_; ++d) {
      const float re = normal(rng);
      const float im = normal(rng);
      col[d] = {re, im};
    }
    return cache_.emplace(key, std::move(col)).first->second;
  }

  std::uint64_t seed_;
  double pitch_;
  int depth_;
  int first_;
  std::unordered_map<std::uint64_t, std::vector<std::complex<float>>> cache_;
};

}  // namespace detail

// Synthesises a raw recording of complex A-lines. Each scan cycle is a pure function of
// its time stamps, the static speckle field and its own seeded noise stream.
inline RawRecording synthesize_recording(const MediumSpec& medium, const ExcitationSpec& exc,
                                         const ScanConfig& config, const NoiseSpec& noise,
                                         Vec2 probe_center_mm, double duration_s, std::uint64_t seed) {
  medium.validate();
  if (!(exc.amplitude_um >= 0.0)) throw DomainError("excitation: amplitude must be >= 0");
  if (exc.amplitude_um > 0.0) exc.validate();
  config.validate();
  noise.validate();
  if (duration_s < exc.sweep_time_s) throw DomainError("sweep not fully covered");

  RawRecording rec;
  rec.config = config;
  rec.medium_truth = medium;
  rec.source_xy_mm = exc.source_xy_mm;
  rec.probe_center_mm = probe_center_mm;
  rec.seed = seed;
  rec.n_lines = recording_lines(duration_s, config);
  if (rec.n_lines == 0) throw DomainError("recording shorter than one scan cycle");

  {
    std::mt19937_64 rng(derive_seed(seed, "start"));
    std::uniform_real_distribution<double> u(0.0, exc.sweep_time_s);
    rec.start_time_s = config.settle_time_s + u(rng);
  }

  const int depth = config.depth_pixels;
  const int surface = config.surface_pixel;
  const double dz = config.pixel_size_mm();
  const double line_period = config.line_period_s();
  const double k_phase = config.phase_per_um();
  const double noise_rms = noise.noise_rms();
  const float noise_component = static_cast<float>(noise_rms / std::sqrt(2.0));

  std::vector<double> reflect_decay(static_cast<std::size_t>(depth), 0.0);
  for (int d = surface; d < depth; ++d) reflect_decay[d] = std::exp(-noise.depth_decay_per_mm * (d - surface) * dz);

  rec.samples.assign(rec.n_lines * static_cast<std::size_t>(depth), {0.0f, 0.0f});

  detail::SpeckleField speckle(derive_seed(seed, "speckle"), config.speckle_pitch_mm, depth, surface);
  std::mt19937_64 jitter_rng(derive_seed(seed, "jitter"));
  std::normal_distribution<double> jitter(0.0, config.imperfection.jitter_std_mm);
  const std::uint64_t noise_seed = derive_seed(seed, "noise");

  std::vector<std::complex<float>> reflectivity;
  std::vector<WaveComponent> comps;
  std::vector<double> envelope_step;
  std::vector<double> envelope;
  std::vector<double> motion(static_cast<std::size_t>(depth), 0.0);

  // Noise streams restart per scan cycle so any cycle can be regenerated on its own.
  // Boost's ziggurat normal sampler is several times faster than std's polar method.
  boost::random::mt19937_64 noise_rng;
  boost::random::normal_distribution<float> normal(0.0f, 1.0f);
  const std::size_t L = static_cast<std::size_t>(config.lines_per_cycle);

  for (std::size_t i = 0; i < rec.n_lines; ++i) {
    if (i % L == 0) {
      noise_rng.seed(derive_seed(noise_seed, static_cast<std::uint64_t>(i / L)));
      normal.reset();
    }
    const double t_scan = static_cast<double>(i) * line_period;
    Vec2 pos = probe_center_mm + trajectory(config.mode, t_scan, config);
    if (config.imperfection.jitter_std_mm > 0.0) {
      pos.x += jitter(jitter_rng);
      if (config.mode == ScanMode::cone3dt) pos.y += jitter(jitter_rng);
    }

    if (noise.speckle) {
      speckle.sample(pos, reflectivity);
    } else {
      reflectivity.assign(static_cast<std::size_t>(depth), {0.0f, 0.0f});
      for (int d = surface; d < depth; ++d) reflectivity[d] = {1.0f, 0.0f};
    }

    // Axial displacement profile of this line.
    std::fill(motion.begin(), motion.end(), 0.0);
    if (exc.amplitude_um > 0.0) {
      surface_components(pos, rec.start_time_s + t_scan, medium, exc, comps);
      for (const auto& c : comps) {
        const double step = std::exp(-c.decay_per_mm * dz);
        double e = c.surface_um;
        for (int d = surface; d < depth; ++d) {
          motion[d] += e;
          e *= step;
        }
      }
    }

    auto out = rec.line(i);
    for (int d = 0; d < depth; ++d) {
      std::complex<float> v{0.0f, 0.0f};
      if (d >= surface) {
        const std::complex<double> s =
            std::complex<double>(reflectivity[d].real(), reflectivity[d].imag()) * reflect_decay[d];
        double phase = k_phase * motion[d];
        if (noise.phase_noise_floor > 0.0 && noise_rms > 0.0) {
          const double snr = std::max(std::abs(s) / noise_rms, 1e-6);
          phase += (noise.phase_noise_floor / snr) * static_cast<double>(normal(noise_rng));
        }
        const std::complex<double> moved = phase == 0.0 ? s : s * std::polar(1.0, phase);
        v = std::complex<float>(static_cast<float>(moved.real()), static_cast<float>(moved.imag()));
      }
      if (noise_rms > 0.0) {
        const float re = normal(noise_rng);
        const float im = normal(noise_rng);
        v += std::complex<float>(noise_component * re, noise_component * im);
      }
      out[d] = v;
    }
  }
  return rec;
}

}  // namespace oce
