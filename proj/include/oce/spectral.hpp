#pragma once

// Conventional phase-velocity estimation from ST maps in k-space.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "oce/error.hpp"
#include "oce/geometry.hpp"
#include "oce/preproc.hpp"

namespace oce {

struct SpectralOptions {
  bool hann = true;    // Hann window along both map axes
  int k_padding = 16;  // zero-padding factor along the lateral axis
  int f_padding = 1;   // zero-padding factor along the time axis
};

// |2-D DFT| of an ST map restricted to positive temporal frequencies.
// magnitude is stored [k][f]; k runs from negative to positive (1/m), f ascending (Hz).
struct KSpace {
  int n_k = 0;
  int n_f = 0;
  std::vector<double> k_axis;
  std::vector<double> f_axis;
  std::vector<double> magnitude;

  double at(int k, int f) const { return magnitude[static_cast<std::size_t>(k) * n_f + f]; }
  double& at(int k, int f) { return magnitude[static_cast<std::size_t>(k) * n_f + f]; }
};

namespace detail {

// FFTW's planner is not thread-safe; execution of distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n)
      : ptr(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))) {
    if (!ptr) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  fftw_complex* ptr;
};

inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n), 1.0);
  if (n < 2) return w;
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(kTwoPi * i / (n - 1));
  return w;
}

}  // namespace detail

inline KSpace st_fft(const STMap& map, const SpectralOptions& opt = {}) {
  if (map.lateral < 1 || map.time < 2) throw DomainError("st_fft: map too small");
  if (!(map.lateral_pitch_mm > 0.0) || !(map.frame_period_s > 0.0)) throw DomainError("st_fft: axis scales must be > 0");
  if (opt.k_padding < 1 || opt.f_padding < 1) throw DomainError("st_fft: padding factors must be >= 1");
  const int nk = map.lateral * opt.k_padding;
  const int nt = map.time * opt.f_padding;

  detail::FftwBuffer in(static_cast<std::size_t>(nk) * nt);
  detail::FftwBuffer out(static_cast<std::size_t>(nk) * nt);
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_2d(nk, nt, in.ptr, out.ptr, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  std::fill_n(&in.ptr[0][0], 2 * static_cast<std::size_t>(nk) * nt, 0.0);
  const auto wl = opt.hann ? detail::hann_window(map.lateral) : std::vector<double>(map.lateral, 1.0);
  const auto wt = opt.hann ? detail::hann_window(map.time) : std::vector<double>(map.time, 1.0);
  for (int l = 0; l < map.lateral; ++l) {
    for (int t = 0; t < map.time; ++t) {
      const double v = map.at(l, t);
      if (!std::isfinite(v)) throw DomainError("st_fft: map contains non-finite values");
      in.ptr[static_cast<std::size_t>(l) * nt + t][0] = v * wl[l] * wt[t];
    }
  }
  fftw_execute(plan);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }

  KSpace ks;
  ks.n_k = nk;
  ks.n_f = (nt - 1) / 2;  // strictly positive frequencies below Nyquist
  const double pitch_m = map.lateral_pitch_mm * 1e-3;
  ks.k_axis.resize(nk);
  for (int i = 0; i < nk; ++i) ks.k_axis[i] = static_cast<double>(i - nk / 2) / (nk * pitch_m);
  ks.f_axis.resize(ks.n_f);
  for (int j = 0; j < ks.n_f; ++j) ks.f_axis[j] = static_cast<double>(j + 1) / (nt * map.frame_period_s);
  ks.magnitude.resize(static_cast<std::size_t>(nk) * ks.n_f);
  for (int i = 0; i < nk; ++i) {
    const int p = (i - nk / 2 + nk) % nk;
    for (int j = 0; j < ks.n_f; ++j) {
      const auto& c = out.ptr[static_cast<std::size_t>(p) * nt + (j + 1)];
      ks.at(i, j) = std::hypot(c[0], c[1]);
    }
  }
  return ks;
}

struct BandOptions {
  double band_center_hz = 400.0;
  double band_width_hz = 200.0;
  double threshold = 0.10;  // fraction of the global in-band maximum
  double v_max = 10.0;      // m/s; faster estimates are implausible for soft tissue
  double v_min = 0.0;
  bool refine_peak = true;  // parabolic interpolation of log magnitude around each peak
};

struct FrequencyPeak {
  double f_hz = 0.0;
  double k_per_m = 0.0;
  double v_mps = 0.0;
};

struct VelocityEstimate {
  double v_mps = 0.0;
  bool failed = true;
  std::optional<double> gamma_rad;
  std::vector<FrequencyPeak> per_frequency;
};

// Mask over [k][f] of the bins left after band-pass and amplitude thresholding.
// The k = 0 column never survives.
inline std::vector<char> surviving_bins(const KSpace& ks, const BandOptions& opt = {}) {
  const double lo = opt.band_center_hz - 0.5 * opt.band_width_hz;
  const double hi = opt.band_center_hz + 0.5 * opt.band_width_hz;
  std::vector<char> keep(ks.magnitude.size(), 0);
  double global_max = 0.0;
  for (int i = 0; i < ks.n_k; ++i) {
    if (ks.k_axis[i] == 0.0) continue;
    for (int j = 0; j < ks.n_f; ++j)
      if (ks.f_axis[j] >= lo && ks.f_axis[j] <= hi) global_max = std::max(global_max, ks.at(i, j));
  }
  if (!(global_max > 0.0)) return keep;
  const double cut = opt.threshold * global_max;
  for (int i = 0; i < ks.n_k; ++i) {
    if (ks.k_axis[i] == 0.0) continue;
    for (int j = 0; j < ks.n_f; ++j) {
      const double m = ks.at(i, j);
      if (ks.f_axis[j] >= lo && ks.f_axis[j] <= hi && m >= cut && m > 0.0)
        keep[static_cast<std::size_t>(i) * ks.n_f + j] = 1;
    }
  }
  return keep;
}

// Band-pass, amplitude threshold, per-frequency wavenumber peak and mean of f/|k|.
inline VelocityEstimate estimate_velocity(const KSpace& ks, const BandOptions& opt = {}) {
  const auto keep = surviving_bins(ks, opt);
  VelocityEstimate est;
  for (int j = 0; j < ks.n_f; ++j) {
    int best = -1;
    double best_mag = 0.0;
    for (int i = 0; i < ks.n_k; ++i) {
      if (!keep[static_cast<std::size_t>(i) * ks.n_f + j]) continue;
      if (ks.at(i, j) > best_mag) {
        best_mag = ks.at(i, j);
        best = i;
      }
    }
    if (best < 0) continue;
    double k = ks.k_axis[best];
    if (opt.refine_peak && best > 0 && best + 1 < ks.n_k) {
      const double a = ks.at(best - 1, j), c = ks.at(best + 1, j);
      if (a > 0.0 && c > 0.0) {
        const double la = std::log(a), lb = std::log(best_mag), lc = std::log(c);
        const double denom = la - 2.0 * lb + lc;
        if (denom < 0.0) {
          const double delta = std::clamp(0.5 * (la - lc) / denom, -0.5, 0.5);
          k += delta * (ks.k_axis[best + 1] - ks.k_axis[best]);
        }
      }
    }
    k = std::abs(k);
    if (k == 0.0) continue;
    est.per_frequency.push_back({ks.f_axis[j], k, ks.f_axis[j] / k});
  }
  if (est.per_frequency.empty()) return est;
  double sum = 0.0;
  for (const auto& p : est.per_frequency) sum += p.v_mps;
  est.v_mps = sum / static_cast<double>(est.per_frequency.size());
  est.failed = !(est.v_mps <= opt.v_max) || est.v_mps <= opt.v_min;
  return est;
}

// Removes the apparent-speed inflation of a wave crossing the scan line obliquely.
inline double angle_correct(double v, double gamma) {
  if (!(gamma > 0.0 && gamma < kPi))
    throw DomainError("angle_correct: gamma must lie in (0, pi); waves parallel to the beam normal are unresolvable");
  return std::sin(gamma) * v;
}

// Propagation angle with tan(gamma) = v_x / v_y, where x is the lateral scan axis and
// y the in-plane normal to it. Returned in [0, pi): pi/2 means the wave runs along
// the scan line, 0 that it crosses it perpendicularly.
inline double gamma_from_geometry(Vec2 source, Vec2 probe_center, Vec2 scan_axis = {1.0, 0.0}) {
  const Vec2 d = probe_center - source;
  if (d.norm() == 0.0) throw DomainError("gamma_from_geometry: source and probe coincide");
  if (scan_axis.norm() == 0.0) throw DomainError("gamma_from_geometry: zero scan axis");
  const Vec2 a = (1.0 / scan_axis.norm()) * scan_axis;
  const Vec2 n{-a.y, a.x};
  double g = std::atan2(d.dot(a), d.dot(n));
  if (g < 0.0) g += kPi;
  if (g >= kPi) g -= kPi;
  return g;
}

struct Calibration {
  double slope = 24.2;       // kPa per m/s
  double intercept = -16.4;  // kPa
  double min_E_kpa = 0.05;   // below half the 0.1 kPa reporting step an estimate counts as zero
};

struct ElasticityEstimate {
  double E_kpa = 0.0;
  bool failed = true;
};

inline ElasticityEstimate calibrate_E(double v, const Calibration& cal = {}) {
  if (!(v >= 0.0)) return {};
  const double E = cal.slope * v + cal.intercept;
  return {E, !(E >= cal.min_E_kpa)};
}

// Whole conventional chain for one ST map, with and without angle correction.
struct FftEstimate {
  VelocityEstimate velocity;
  std::optional<double> v_corrected;
  ElasticityEstimate E;
  ElasticityEstimate E_corrected;
};

inline FftEstimate estimate_fft(const STMap& map, std::optional<double> gamma, const SpectralOptions& sopt = {},
                                const BandOptions& bopt = {}, const Calibration& cal = {}) {
  FftEstimate out;
  out.velocity = estimate_velocity(st_fft(map, sopt), bopt);
  out.velocity.gamma_rad = gamma;
  if (out.velocity.failed) return out;
  out.E = calibrate_E(out.velocity.v_mps, cal);
  if (gamma && *gamma > 0.0 && *gamma < kPi) {
    out.v_corrected = angle_correct(out.velocity.v_mps, *gamma);
    out.E_corrected = calibrate_E(*out.v_corrected, cal);
  }
  return out;
}

}  // namespace oce
