#pragma once

// Building blocks shared by the command-line tools and the desk-scale experiment:
// virtual phantoms, per-cell simulation and preprocessing, conventional estimates.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "oce/config.hpp"
#include "oce/evalmap.hpp"
#include "oce/nn/folds.hpp"
#include "oce/nn/resize.hpp"
#include "oce/preproc.hpp"
#include "oce/probe.hpp"
#include "oce/seed.hpp"
#include "oce/spectral.hpp"

namespace oce {

struct Phantom {
  int id = 0;
  int class_id = 0;
  double class_E_kpa = 0.0;
  MediumSpec medium;
  std::uint64_t seed = 0;
};

// One phantom per (class, replicate); the background modulus is the class value,
// optionally jittered per phantom. Inclusions of the configured medium are kept.
inline std::vector<Phantom> make_phantoms(const ExperimentConfig& cfg) {
  std::vector<Phantom> out;
  if (cfg.dataset.classes_kpa.empty()) {
    out.push_back({0, 0, cfg.medium.background_E_kpa, cfg.medium, derive_seed(cfg.seed, "phantom/0")});
    return out;
  }
  int id = 0;
  for (std::size_t c = 0; c < cfg.dataset.classes_kpa.size(); ++c)
    for (int p = 0; p < cfg.dataset.phantoms_per_class; ++p, ++id) {
      Phantom ph{id, static_cast<int>(c), cfg.dataset.classes_kpa[c], cfg.medium,
                 derive_seed(cfg.seed, "phantom/" + std::to_string(id))};
      double E = ph.class_E_kpa;
      if (cfg.dataset.phantom_E_jitter > 0.0) {
        std::mt19937_64 rng(derive_seed(ph.seed, "modulus"));
        std::normal_distribution<double> n(0.0, cfg.dataset.phantom_E_jitter);
        E *= std::clamp(1.0 + n(rng), 0.5, 1.5);
      }
      ph.medium.background_E_kpa = E;
      out.push_back(std::move(ph));
    }
  return out;
}

inline std::uint64_t cell_seed(const Phantom& ph, int row, int col, ScanMode mode) {
  return derive_seed(ph.seed, "cell/" + std::to_string(row) + "/" + std::to_string(col) + "/" + to_string(mode));
}

inline RawRecording simulate_cell(const ExperimentConfig& cfg, const Phantom& ph, int row, int col, ScanMode mode) {
  ScanConfig scan = cfg.scan;
  scan.mode = mode;
  return synthesize_recording(ph.medium, cfg.excitation, scan, cfg.noise, cfg.grid.center(row, col), cfg.duration_s,
                              cell_seed(ph, row, col, mode));
}

inline double cell_gamma(const ExperimentConfig& cfg, Vec2 position) {
  return gamma_from_geometry(cfg.excitation.source_xy_mm, position);
}

// Resampled network input; the full-size sequence maps to 64 x 128 either way.
inline nn::NetInput to_net_input(const PhaseSequence& seq, const NetInputConfig& size) {
  return nn::resize_sequence(seq, size.depth, size.lateral);
}

inline nn::NetInput to_net_input(const STMap& map, const NetInputConfig& size) {
  if (map.lateral == 141 && map.time == 1080) return nn::preprocess_for_net(map);
  return nn::resize_st_map(map, size.lateral, map.time);
}

struct ProcessedCell {
  PhaseSequence sequence;  // emptied unless requested
  std::optional<STMap> st_map;
  nn::NetInput input;
};

inline ProcessedCell process_recording(const RawRecording& rec, const ExperimentConfig& cfg, bool keep_sequence = false) {
  auto pre = preprocess(rec, cfg.preproc);
  ProcessedCell out;
  out.input = to_net_input(pre.sequence, cfg.net_input);
  out.st_map = std::move(pre.st_map);
  if (keep_sequence) out.sequence = std::move(pre.sequence);
  return out;
}

// Conventional estimate for one cell, before and after angle correction.
struct FftCellEstimate {
  Vec2 position_mm;
  double gamma_rad = 0.0;
  FftEstimate estimate;
};

inline FftCellEstimate estimate_cell_fft(const STMap& map, Vec2 position, const ExperimentConfig& cfg,
                                         const Calibration& cal) {
  const double gamma = cell_gamma(cfg, position);
  return {position, gamma, estimate_fft(map, gamma, cfg.spectral, cfg.band, cal)};
}

// Converts velocities to moduli with a (re)fitted calibration.
inline PositionEstimate fft_position_estimate(const FftCellEstimate& e, const Calibration& cal, bool corrected) {
  PositionEstimate p{e.position_mm, 0.0, true};
  if (e.estimate.velocity.failed) return p;
  const auto v = corrected ? e.estimate.v_corrected : std::optional<double>(e.estimate.velocity.v_mps);
  if (!v) return p;
  const auto E = calibrate_E(*v, cal);
  p.E_kpa = E.E_kpa;
  p.failed = E.failed;
  return p;
}

}  // namespace oce
