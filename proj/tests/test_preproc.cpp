#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

#include "oce/preproc.hpp"
#include "oce/preproc_io.hpp"
#include "test_support.hpp"

namespace {

using namespace oce;
using oce::testing::homogeneous;
using oce::testing::pure_tone;
using oce::testing::small_scan;

RawRecording static_scene(std::size_t cycles, NoiseSpec noise = NoiseSpec::off(), std::uint64_t seed = 1) {
  auto e = pure_tone(400.0, {-5.0, 0.0}, 0.0);
  e.sweep_time_s = 1e-4;
  const auto cfg = small_scan();
  return synthesize_recording(homogeneous(12), e, cfg, noise, {}, cycles / cfg.cycle_freq_hz, seed);
}

// Hand-built recording whose voxel values are given by a function of (line, depth).
template <class F>
RawRecording hand_built(std::size_t cycles, F value) {
  RawRecording rec;
  rec.config = small_scan();
  rec.n_lines = cycles * rec.config.lines_per_cycle;
  rec.samples.resize(rec.n_lines * rec.depth());
  for (std::size_t i = 0; i < rec.n_lines; ++i)
    for (std::size_t d = 0; d < rec.depth(); ++d) rec.samples[i * rec.depth() + d] = value(i, d);
  return rec;
}

RawRecording drop_lines(const RawRecording& rec, std::size_t k) {
  RawRecording out = rec;
  const std::size_t L = rec.config.lines_per_cycle;
  out.n_lines = rec.n_lines - L;
  out.samples.assign(rec.samples.begin() + k * rec.depth(), rec.samples.begin() + (k + out.n_lines) * rec.depth());
  return out;
}

TEST(TurningOffset, WithinTwoLinesOfAnalyticTurningPoint) {
  const auto rec = static_scene(12, NoiseSpec{});
  // x = r sin(2 pi f t) peaks at line L/4 = 78.5; the next line starts a frame
  const int offset = detect_turning_offset(rec);
  EXPECT_NEAR(offset, 79, 2);
}

TEST(TurningOffset, ShiftEquivariantModuloHalfCycle) {
  const auto rec = static_scene(12, NoiseSpec{}, 4);
  const int base = detect_turning_offset(rec);
  const int half = rec.config.lines_per_cycle / 2;
  for (int shift : {57, 100, 203}) {
    const int moved = detect_turning_offset(drop_lines(rec, shift));
    EXPECT_EQ(moved, ((base - shift) % half + half) % half) << "shift " << shift;
  }
}

TEST(TurningOffset, ConstantIntensityHasNoContrast) {
  NoiseSpec flat = NoiseSpec::off();
  flat.speckle = false;
  const auto rec = static_scene(12, flat);
  try {
    detect_turning_offset(rec);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "no contrast");
  }
}

TEST(TurningOffset, RejectsConeRecordings) {
  auto rec = static_scene(12);
  rec.config.mode = ScanMode::cone3dt;
  EXPECT_THROW(detect_turning_offset(rec), DataError);
}

TEST(Surface, FindsAirGapBoundary) {
  NoiseSpec noise;
  noise.intensity_snr_db = 20.0;
  noise.depth_decay_per_mm = 0.0;
  auto e = pure_tone(400.0, {-5.0, 0.0}, 0.0);
  auto cfg = small_scan();
  cfg.surface_pixel = 40;
  const auto rec = synthesize_recording(homogeneous(12), e, cfg, noise, {}, 4 / cfg.cycle_freq_hz, 8);
  EXPECT_EQ(detect_surface(rec), 40);
}

TEST(Surface, SampleAtTopOfALine) {
  // strong scattering lets the signal sink into the noise at depth
  NoiseSpec noise;
  noise.intensity_snr_db = 30.0;
  noise.depth_decay_per_mm = 12.0;
  auto e = pure_tone(400.0, {-5.0, 0.0}, 0.0);
  auto cfg = small_scan();
  cfg.surface_pixel = 0;
  const auto rec = synthesize_recording(homogeneous(12), e, cfg, noise, {}, 4 / cfg.cycle_freq_hz, 8);
  EXPECT_EQ(detect_surface(rec), 0);
}

TEST(Surface, PureNoiseHasNoSurface) {
  std::mt19937 rng(3);
  std::normal_distribution<float> n(0.0f, 0.02f);
  const auto rec = hand_built(4, [&](std::size_t, std::size_t) { return std::complex<float>(n(rng), n(rng)); });
  try {
    detect_surface(rec);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "no surface");
  }
}

TEST(PhaseDiff, HandBuiltStaticSceneIsZero) {
  const auto rec = hand_built(4, [](std::size_t, std::size_t d) { return std::polar(1.0f, 0.01f * d); });
  const auto seq = extract_phase_diff(rec, 10, 0, 64);
  for (float v : seq.data) EXPECT_EQ(v, 0.0f);
}

TEST(PhaseDiff, SynthesizedStaticSceneIsZero) {
  const auto rec = static_scene(5);
  const auto seq = extract_phase_diff(rec, 79, 16, 96);
  EXPECT_EQ(seq.depth, 96);
  EXPECT_EQ(seq.lateral, 314);
  EXPECT_EQ(seq.time, 5);
  for (float v : seq.data) EXPECT_NEAR(v, 0.0f, 1e-4f);
}

TEST(PhaseDiff, LinearRampGivesConstantDifference) {
  const std::size_t L = 314;
  const auto rec = hand_built(6, [&](std::size_t i, std::size_t) {
    return std::polar(1.0f, static_cast<float>(wrap_phase(0.3 * static_cast<double>(i / L))));
  });
  const auto seq = extract_phase_diff(rec, 0, 0, 32);
  for (float v : seq.data) EXPECT_NEAR(v, 0.3f, 1e-5f);
}

TEST(PhaseDiff, FullTurnStepUnwrapsToZero) {
  const std::size_t L = 314;
  // phase jumps by 2 pi between revisits 2 and 3: indistinguishable from no motion
  const auto rec = hand_built(5, [&](std::size_t i, std::size_t) {
    const double phi = (i / L) >= 3 ? 0.4 + kTwoPi : 0.4;
    return std::complex<float>(std::polar(1.0, phi));
  });
  const auto seq = extract_phase_diff(rec, 0, 0, 16);
  for (float v : seq.data) EXPECT_NEAR(v, 0.0f, 1e-5f);
}

TEST(PhaseDiff, LateralIndexStartsAtOffset) {
  const std::size_t L = 314;
  // slot b advances its phase by 0.001 * b per revisit
  const auto rec = hand_built(4, [&](std::size_t i, std::size_t) {
    const std::size_t b = i % L, c = i / L;
    return std::complex<float>(std::polar(1.0, 0.001 * static_cast<double>(b * c)));
  });
  const int offset = 37;
  const auto seq = extract_phase_diff(rec, offset, 0, 8);
  for (int s = 0; s < seq.lateral; ++s)
    EXPECT_NEAR(seq.at(3, s, 2), 0.001f * static_cast<float>((s + offset) % L), 1e-5f);
}

TEST(PhaseDiff, InvariantToGlobalPhaseOffset) {
  auto e = pure_tone(400.0, {-5.0, 0.0});
  const auto cfg = small_scan();
  auto rec = synthesize_recording(homogeneous(12), e, cfg, NoiseSpec{}, {}, 8 / cfg.cycle_freq_hz, 2);
  const auto a = extract_phase_diff(rec, 79, 16, 64);
  for (auto& v : rec.samples) v *= std::polar(1.0f, 1.1f);
  const auto b = extract_phase_diff(rec, 79, 16, 64);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = wrap_phase(static_cast<double>(a.data[i]) - b.data[i]);
    EXPECT_NEAR(d, 0.0, 2e-5);
  }
}

TEST(PhaseDiff, Errors) {
  const auto one_cycle = hand_built(1, [](std::size_t, std::size_t) { return std::complex<float>(1.0f, 0.0f); });
  EXPECT_THROW(extract_phase_diff(one_cycle, 0, 0, 16), DataError);
  const auto rec = hand_built(3, [](std::size_t, std::size_t) { return std::complex<float>(1.0f, 0.0f); });
  EXPECT_THROW(extract_phase_diff(rec, 0, 100, 64), DataError);
  EXPECT_THROW(extract_phase_diff(rec, 314, 0, 64), DomainError);
}

TEST(STMap, ShapeAndStaticScene) {
  const auto rec = static_scene(6);
  PreprocOptions opt;
  opt.crop_depth = 96;
  const auto map = build_st_map(rec, 79, 16, opt);
  EXPECT_EQ(map.lateral, 141);
  EXPECT_EQ(map.time, 12);
  EXPECT_NEAR(map.frame_period_s, 0.5 / 5051.6, 1e-15);
  for (float v : map.data) EXPECT_NEAR(v, 0.0f, 1e-4f);
}

// Plane-ish wave from a distant source travelling along +x.
STMap plane_wave_map(std::size_t cycles, double f_hz, double E_kpa) {
  auto e = pure_tone(f_hz, {-40.0, 0.0});
  auto cfg = small_scan();
  const auto rec = synthesize_recording(homogeneous(E_kpa), e, cfg, NoiseSpec::off(), {}, cycles / cfg.cycle_freq_hz, 6);
  PreprocOptions opt;
  opt.crop_depth = 96;
  const int offset = detect_turning_offset(rec);
  return build_st_map(rec, offset, detect_surface(rec, opt), opt);
}

TEST(STMap, FlippedFramesShareOrientation) {
  const auto map = plane_wave_map(64, 400.0, 12.0);
  auto column = [&](int m) {
    std::vector<double> c(map.lateral);
    for (int l = 0; l < map.lateral; ++l) c[l] = map.at(l, m);
    return c;
  };
  auto corr = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / a.size(), mb += b[i] / b.size();
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
  };
  // adjacent frames are 0.1 ms apart, so their profiles nearly coincide; single
  // frames near a crest of the 5 mm wave correlate less because the 1.5 mm window
  // then mostly sees curvature, hence the mean
  double mean_corr = 0.0, mean_unflipped = 0.0;
  int counted = 0;
  for (int m = 4; m + 1 < map.time - 2; ++m) {
    const auto a = column(m), b = column(m + 1);
    double energy = 0.0;
    for (double v : a) energy += v * v;
    if (energy < 1e-6 * map.lateral) continue;  // skip near-zero crossings of the tone
    ++counted;
    std::vector<double> r(b.rbegin(), b.rend());
    mean_corr += corr(a, b);
    mean_unflipped += corr(a, r);
  }
  mean_corr /= counted;
  mean_unflipped /= counted;
  EXPECT_GT(counted, 50);
  EXPECT_GT(mean_corr, 0.9);
  // undoing the flip of one frame in each pair destroys the agreement
  EXPECT_LT(mean_unflipped, 0.0);
}

TEST(STMap, TemporalEnergyConcentratesAtTone) {
  const auto map = plane_wave_map(505, 400.0, 12.0);
  const int n = map.time;
  const double df = 1.0 / (n * map.frame_period_s);
  double total = 0.0, near = 0.0;
  for (int l = 0; l < map.lateral; l += 10) {
    for (int k = 0; k <= n / 2; ++k) {
      std::complex<double> acc = 0.0;
      for (int m = 0; m < n; ++m) acc += static_cast<double>(map.at(l, m)) * std::polar(1.0, -kTwoPi * k * m / n);
      const double p = std::norm(acc);
      total += p;
      if (std::abs(k * df - 400.0) <= 25.0) near += p;
    }
  }
  EXPECT_GE(near / total, 0.90);
}

TEST(Preprocess, ConeRecordingHasNoStMap) {
  auto e = pure_tone(400.0, {-5.0, 0.0});
  const auto cfg = small_scan(ScanMode::cone3dt);
  const auto rec = synthesize_recording(homogeneous(12), e, cfg, NoiseSpec{}, {}, 6 / cfg.cycle_freq_hz, 2);
  PreprocOptions opt;
  opt.crop_depth = 96;
  const auto out = preprocess(rec, opt);
  EXPECT_FALSE(out.st_map.has_value());
  EXPECT_EQ(out.sequence.time, 6);
  EXPECT_EQ(out.sequence.turning_offset, 0);
  EXPECT_EQ(out.sequence.mode, ScanMode::cone3dt);
}

TEST(DerivedIo, RoundTrips) {
  oce::testing::TempDir dir;
  auto e = pure_tone(400.0, {-5.0, 0.0});
  const auto cfg = small_scan();
  const auto rec = synthesize_recording(homogeneous(12), e, cfg, NoiseSpec{}, {}, 6 / cfg.cycle_freq_hz, 2);
  PreprocOptions opt;
  opt.crop_depth = 96;
  const auto out = preprocess(rec, opt);
  write_phase_sequence(out.sequence, dir.path() / "s.ocep");
  write_st_map(*out.st_map, dir.path() / "m.oces");
  const auto seq = read_phase_sequence(dir.path() / "s.ocep");
  const auto map = read_st_map(dir.path() / "m.oces");
  EXPECT_EQ(seq.data, out.sequence.data);
  EXPECT_EQ(seq.surface_index, out.sequence.surface_index);
  EXPECT_EQ(seq.turning_offset, out.sequence.turning_offset);
  EXPECT_EQ(seq.provenance, out.sequence.provenance);
  EXPECT_EQ(map.data, out.st_map->data);
  EXPECT_EQ(map.lateral_pitch_mm, out.st_map->lateral_pitch_mm);
  std::filesystem::resize_file(dir.path() / "m.oces", std::filesystem::file_size(dir.path() / "m.oces") - 1);
  EXPECT_THROW(read_st_map(dir.path() / "m.oces"), ParseError);
  EXPECT_THROW(read_phase_sequence(dir.path() / "m.oces"), ParseError);
}

}  // namespace
