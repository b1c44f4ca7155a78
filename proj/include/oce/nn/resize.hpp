#pragma once

// Resampling of phase sequences and ST maps to network input grids.

#include <algorithm>
#include <cmath>
#include <vector>

#include "oce/error.hpp"
#include "oce/preproc.hpp"

namespace oce::nn {

// Linear interpolation weights from n_in to n_out samples with half-pixel centres.
// When shrinking, the triangle kernel is widened by the scale factor so every input
// sample contributes (area-consistent, anti-aliased); weights are normalised.
struct ResampleTaps {
  std::vector<int> first;
  std::vector<std::vector<float>> weights;
};

inline ResampleTaps resample_taps(int n_in, int n_out) {
  if (n_in < 1 || n_out < 1) throw DomainError("resize: sizes must be >= 1");
  ResampleTaps taps;
  taps.first.resize(n_out);
  taps.weights.resize(n_out);
  const double scale = static_cast<double>(n_in) / n_out;
  const double support = std::max(1.0, scale);
  for (int o = 0; o < n_out; ++o) {
    const double center = (o + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(center - support)));
    const int hi = std::min(n_in - 1, static_cast<int>(std::ceil(center + support)));
    double total = 0.0;
    std::vector<double> w;
    for (int i = lo; i <= hi; ++i) {
      const double dist = std::abs((i + 0.5) - center) / support;
      const double v = std::max(0.0, 1.0 - dist);
      w.push_back(v);
      total += v;
    }
    if (total <= 0.0) {  // centre exactly between two far samples cannot happen, but stay safe
      w.assign(w.size(), 0.0);
      const int nearest = std::clamp(static_cast<int>(center), 0, n_in - 1);
      w[nearest - lo] = 1.0;
      total = 1.0;
    }
    taps.first[o] = lo;
    for (double v : w) taps.weights[o].push_back(static_cast<float>(v / total));
  }
  return taps;
}

// Resamples axis `axis` of a row-major array with dimensions `dims`.
inline std::vector<float> resize_axis(const std::vector<float>& in, std::vector<int>& dims, int axis, int n_out) {
  const int n_in = dims[axis];
  if (n_in == n_out) return in;
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= dims[a];
  for (std::size_t a = axis + 1; a < dims.size(); ++a) inner *= dims[a];
  const auto taps = resample_taps(n_in, n_out);
  std::vector<float> out(outer * n_out * inner, 0.0f);
  for (std::size_t o = 0; o < outer; ++o)
    for (int j = 0; j < n_out; ++j) {
      float* dst = out.data() + (o * n_out + j) * inner;
      const auto& w = taps.weights[j];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const float* src = in.data() + (o * n_in + taps.first[j] + k) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += w[k] * src[i];
      }
    }
  dims[axis] = n_out;
  return out;
}

// Network input: axis order (depth, lateral, time), time untouched for sequences.
struct NetInput {
  int depth = 0;
  int lateral = 0;
  int time = 0;
  std::vector<float> data;

  float at(int d, int l, int t) const { return data[(static_cast<std::size_t>(d) * lateral + l) * time + t]; }
};

inline NetInput resize_sequence(const PhaseSequence& seq, int depth, int lateral) {
  if (seq.depth < 1 || seq.lateral < 1 || seq.time < 1 ||
      seq.data.size() != static_cast<std::size_t>(seq.depth) * seq.lateral * seq.time)
    throw DataError("resize: malformed phase sequence");
  std::vector<int> dims{seq.depth, seq.lateral, seq.time};
  auto a = resize_axis(seq.data, dims, 0, depth);
  auto b = resize_axis(a, dims, 1, lateral);
  return {depth, lateral, seq.time, std::move(b)};
}

// ST maps become single-depth inputs; both axes are resampled.
inline NetInput resize_st_map(const STMap& map, int lateral, int time) {
  if (map.lateral < 1 || map.time < 1 || map.data.size() != static_cast<std::size_t>(map.lateral) * map.time)
    throw DataError("resize: malformed ST map");
  std::vector<int> dims{map.lateral, map.time};
  auto a = resize_axis(map.data, dims, 0, lateral);
  auto b = resize_axis(a, dims, 1, time);
  return {1, lateral, time, std::move(b)};
}

// Full-scale shapes: 128x314xT sequences -> 64x128xT, 141x1080 ST maps -> 64x1024.
inline NetInput preprocess_for_net(const PhaseSequence& seq) {
  if (seq.depth != 128 || seq.lateral != 314)
    throw DataError("preprocess_for_net: expected a 128 x 314 x T sequence, got " + std::to_string(seq.depth) + " x " +
                    std::to_string(seq.lateral) + " x " + std::to_string(seq.time));
  return resize_sequence(seq, 64, 128);
}

inline NetInput preprocess_for_net(const STMap& map) {
  if (map.lateral != 141 || map.time != 1080)
    throw DataError("preprocess_for_net: expected a 141 x 1080 ST map, got " + std::to_string(map.lateral) + " x " +
                    std::to_string(map.time));
  return resize_st_map(map, 64, 1024);
}

}  // namespace oce::nn
