#pragma once

// Raw recordings -> phase-difference sequences (2D+t / pseudo 3D+t) and ST maps.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "oce/error.hpp"
#include "oce/geometry.hpp"
#include "oce/probe.hpp"

namespace oce {

struct PreprocOptions {
  int crop_depth = 128;
  int turning_cycles = 8;         // cycles averaged by the turning-point search
  int surface_smoothing = 5;      // trailing axial window, pixels
  double surface_threshold_db = 6.0;
  int st_trim = 8;                // lines dropped at each end of a half-cycle frame
};

// Phase differences between consecutive revisits of the same scan slot.
// Axis order is (depth, lateral, time); lateral index s holds slot
// (turning_offset + s) mod lines_per_cycle.
struct PhaseSequence {
  ScanMode mode = ScanMode::line2dt;
  int depth = 0;
  int lateral = 0;
  int time = 0;
  int surface_index = 0;
  int turning_offset = 0;
  std::string provenance;
  std::vector<float> data;

  float& at(int d, int l, int t) { return data[(static_cast<std::size_t>(d) * lateral + l) * time + t]; }
  float at(int d, int l, int t) const { return data[(static_cast<std::size_t>(d) * lateral + l) * time + t]; }
};

// Depth-averaged space-time map, axis order (lateral, time).
struct STMap {
  int lateral = 0;
  int time = 0;
  double lateral_pitch_mm = 0.0;
  double frame_period_s = 0.0;
  std::string provenance;
  std::vector<float> data;

  float& at(int l, int t) { return data[static_cast<std::size_t>(l) * time + t]; }
  float at(int l, int t) const { return data[static_cast<std::size_t>(l) * time + t]; }
};

// Start line of the first half-cycle frame, i.e. the first line after a turning point.
// Both turning points of a cycle give identical scores, so the result lies in
// [0, lines_per_cycle / 2) and is shift-equivariant modulo half a cycle.
inline int detect_turning_offset(const RawRecording& rec, int cycles = 8) {
  if (rec.config.mode != ScanMode::line2dt)
    throw DataError("turning point search needs a line-mode recording; cone recordings have none");
  const std::size_t L = static_cast<std::size_t>(rec.config.lines_per_cycle);
  if (rec.cycles() < 3) throw DataError("turning point search needs at least 3 full cycles");
  const std::size_t K = std::min<std::size_t>(static_cast<std::size_t>(std::max(cycles, 1)), rec.cycles() - 1);
  const std::size_t half = L / 2;
  const std::size_t depth = rec.depth();

  std::vector<float> intensity((K + 1) * L * depth);
  for (std::size_t i = 0; i < (K + 1) * L * depth; ++i) intensity[i] = std::abs(rec.samples[i]);

  auto mismatch = [&](std::size_t o) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t base = o + k * L;
      for (std::size_t j = 0; j < half; ++j) {
        const float* a = &intensity[(base + j) * depth];
        const float* b = &intensity[(base + L - 1 - j) * depth];
        float acc = 0.0f;
        for (std::size_t d = 0; d < depth; ++d) acc += std::abs(a[d] - b[d]);
        total += acc;
      }
    }
    return total;
  };

  std::vector<double> score(half);
  for (std::size_t o = 0; o < half; ++o) score[o] = std::min(mismatch(o), mismatch(o + half));
  const auto [lo, hi] = std::minmax_element(score.begin(), score.end());
  if (!(*hi > *lo * (1.0 + 1e-9)) || *hi == 0.0) throw DataError("no contrast");
  return static_cast<int>(lo - score.begin());
}

// Topmost depth pixel where the (trailing, 5-pixel) smoothed mean magnitude of any
// scan cycle rises 6 dB above the noise floor. The floor is the minimum of the
// smoothed mean profile of the whole recording. Averaging each cycle's lines keeps
// single speckle or noise outliers from producing spurious crossings.
inline int detect_surface(const RawRecording& rec, const PreprocOptions& opt = {}) {
  const std::size_t L = static_cast<std::size_t>(rec.config.lines_per_cycle);
  const std::size_t depth = rec.depth();
  const std::size_t n_cycles = std::max<std::size_t>(rec.cycles(), rec.n_lines > 0 ? 1 : 0);
  if (n_cycles == 0) throw DataError("no surface");

  auto smooth = [&](const std::vector<double>& p) {
    std::vector<double> out(depth);
    const int w = std::max(opt.surface_smoothing, 1);
    double acc = 0.0;
    for (std::size_t d = 0; d < depth; ++d) {
      acc += p[d];
      if (d >= static_cast<std::size_t>(w)) acc -= p[d - w];
      out[d] = acc / static_cast<double>(std::min<std::size_t>(d + 1, static_cast<std::size_t>(w)));
    }
    return out;
  };

  std::vector<std::vector<double>> profiles;
  std::vector<double> global(depth, 0.0);
  for (std::size_t c = 0; c < n_cycles; ++c) {
    std::vector<double> p(depth, 0.0);
    const std::size_t first = c * L;
    const std::size_t last = std::min(rec.n_lines, first + L);
    for (std::size_t i = first; i < last; ++i) {
      const auto line = rec.line(i);
      for (std::size_t d = 0; d < depth; ++d) p[d] += std::abs(line[d]);
    }
    for (auto& v : p) v /= static_cast<double>(last - first);
    for (std::size_t d = 0; d < depth; ++d) global[d] += p[d] / static_cast<double>(n_cycles);
    profiles.push_back(smooth(p));
  }
  const auto g = smooth(global);
  const double floor = *std::min_element(g.begin(), g.end());
  const double threshold = floor * std::pow(10.0, opt.surface_threshold_db / 20.0);

  std::size_t best = depth;
  for (const auto& p : profiles) {
    for (std::size_t d = 0; d < std::min(best, depth); ++d) {
      if (p[d] > threshold) {
        best = d;
        break;
      }
    }
  }
  if (best == depth) throw DataError("no surface");
  return static_cast<int>(best);
}

// Unwraps each voxel's phase along time and differences consecutive revisits. For a
// single step, unwrapping then differencing is the raw difference brought back into
// (-pi, pi]. The first revisit has no predecessor and repeats the second difference.
inline PhaseSequence extract_phase_diff(const RawRecording& rec, int offset, int surface_index,
                                        int crop_depth = 128) {
  const int L = rec.config.lines_per_cycle;
  const int T = static_cast<int>(rec.cycles());
  if (T < 2) throw DataError("phase differencing needs at least 2 full cycles");
  if (offset < 0 || offset >= L) throw DomainError("turning offset outside [0, lines_per_cycle)");
  if (surface_index < 0 || surface_index + crop_depth > rec.config.depth_pixels)
    throw DataError("depth crop of " + std::to_string(crop_depth) + " pixels from the surface exceeds the A-line");

  PhaseSequence seq;
  seq.mode = rec.config.mode;
  seq.depth = crop_depth;
  seq.lateral = L;
  seq.time = T;
  seq.surface_index = surface_index;
  seq.turning_offset = offset;
  seq.provenance = "seed:" + std::to_string(rec.seed);
  seq.data.assign(static_cast<std::size_t>(crop_depth) * L * T, 0.0f);

  constexpr float kPiF = static_cast<float>(kPi);
  constexpr float kTwoPiF = static_cast<float>(kTwoPi);
  std::vector<float> previous(static_cast<std::size_t>(L) * crop_depth, 0.0f);
  std::vector<float> current(static_cast<std::size_t>(crop_depth));
  for (int c = 0; c < T; ++c) {
    for (int b = 0; b < L; ++b) {
      const auto line = rec.line(static_cast<std::size_t>(c) * L + b);
      for (int d = 0; d < crop_depth; ++d) current[d] = std::arg(line[surface_index + d]);
      float* prev = &previous[static_cast<std::size_t>(b) * crop_depth];
      if (c > 0) {
        const int s = (b - offset + L) % L;
        for (int d = 0; d < crop_depth; ++d) {
          float diff = current[d] - prev[d];
          if (diff > kPiF) diff -= kTwoPiF;
          else if (diff <= -kPiF) diff += kTwoPiF;
          seq.at(d, s, c) = diff;
        }
      }
      std::copy(current.begin(), current.end(), prev);
    }
  }
  for (int d = 0; d < crop_depth; ++d)
    for (int s = 0; s < L; ++s) seq.at(d, s, 0) = seq.at(d, s, 1);
  return seq;
}

// Nominal lateral pitch of an ST map: chord between the first and last retained line
// of a half cycle (sinusoidal sweep starting at a turning point), spread uniformly.
inline double st_map_lateral_pitch(const ScanConfig& config, int trim) {
  const int half = config.lines_per_cycle / 2;
  const int n = half - 2 * trim;
  const double span = config.aperture_mm * std::cos(kPi * (trim + 0.5) / half);
  return span / (n - 1);
}

// Half-cycle frames starting at the turning offset; odd frames are reversed so all
// frames share one lateral orientation, `trim` lines are dropped at both frame ends
// and the depth axis is averaged. Frames running past the last revisit reuse it.
inline STMap build_st_map(const PhaseSequence& seq, const ScanConfig& config, int trim = 8) {
  if (seq.mode != ScanMode::line2dt) throw DataError("ST maps need a line-mode sequence");
  const int L = seq.lateral;
  const int half = L / 2;
  const int n_lat = half - 2 * trim;
  if (n_lat < 2) throw DataError("ST map trim leaves fewer than 2 lateral samples");

  STMap map;
  map.lateral = n_lat;
  map.time = 2 * seq.time;
  map.lateral_pitch_mm = st_map_lateral_pitch(config, trim);
  map.frame_period_s = 0.5 / config.cycle_freq_hz;
  map.provenance = seq.provenance;
  map.data.assign(static_cast<std::size_t>(n_lat) * map.time, 0.0f);

  const float inv_depth = 1.0f / static_cast<float>(seq.depth);
  for (int m = 0; m < map.time; ++m) {
    for (int j = trim; j < half - trim; ++j) {
      const int rel = half * m + j;
      const int s = rel % L;
      int c = rel / L + (seq.turning_offset + s >= L ? 1 : 0);
      c = std::min(c, seq.time - 1);
      float acc = 0.0f;
      for (int d = 0; d < seq.depth; ++d) acc += seq.at(d, s, c);
      const int i = (m % 2 == 0) ? j - trim : (half - 1 - j) - trim;
      map.at(i, m) = acc * inv_depth;
    }
  }
  return map;
}

inline STMap build_st_map(const RawRecording& rec, int offset, int surface_index,
                          const PreprocOptions& opt = {}) {
  if (rec.config.mode != ScanMode::line2dt) throw DataError("ST maps need a line-mode recording");
  return build_st_map(extract_phase_diff(rec, offset, surface_index, opt.crop_depth), rec.config, opt.st_trim);
}

struct Preprocessed {
  PhaseSequence sequence;
  std::optional<STMap> st_map;
};

// Full preprocessing chain for one recording.
inline Preprocessed preprocess(const RawRecording& rec, const PreprocOptions& opt = {}) {
  const int offset = rec.config.mode == ScanMode::line2dt ? detect_turning_offset(rec, opt.turning_cycles) : 0;
  const int surface = detect_surface(rec, opt);
  Preprocessed out{extract_phase_diff(rec, offset, surface, opt.crop_depth), std::nullopt};
  if (rec.config.mode == ScanMode::line2dt) out.st_map = build_st_map(out.sequence, rec.config, opt.st_trim);
  return out;
}

}  // namespace oce
