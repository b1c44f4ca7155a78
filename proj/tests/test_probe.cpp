#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>

#include "oce/probe.hpp"
#include "oce/recording_io.hpp"
#include "test_support.hpp"

namespace {

using namespace oce;
using oce::testing::homogeneous;
using oce::testing::pure_tone;
using oce::testing::small_scan;

TEST(Trajectory, LineQuarterPeriodAtMaximumDeflection) {
  ScanConfig c;
  const Vec2 p = trajectory(ScanMode::line2dt, 1.0 / (4.0 * c.cycle_freq_hz), c);
  EXPECT_NEAR(p.x, 0.75, 1e-12);
  EXPECT_EQ(p.y, 0.0);
}

TEST(Trajectory, ConeStartsOnYAxis) {
  ScanConfig c;
  const Vec2 p = trajectory(ScanMode::cone3dt, 0.0, c);
  EXPECT_NEAR(p.x, 0.0, 1e-15);
  EXPECT_NEAR(p.y, 0.75, 1e-15);
}

TEST(Trajectory, ConeStaysOnCircle) {
  ScanConfig c;
  for (int i = 0; i < 5000; ++i) {
    const Vec2 p = trajectory(ScanMode::cone3dt, i * 0.37e-6, c);
    EXPECT_NEAR(p.norm(), 0.75, 1e-9);
  }
}

TEST(Trajectory, LineVisitsEachPositionTwicePerCycle) {
  ScanConfig c;
  const double dt = c.line_period_s();
  const int L = c.lines_per_cycle;
  // x peaks at line L/4 = 78.5, so lines a and L/2 - a coincide
  for (int a = 0; a < L / 2; ++a) {
    const int b = L / 2 - a;
    const Vec2 pa = trajectory(ScanMode::line2dt, a * dt, c);
    const Vec2 pb = trajectory(ScanMode::line2dt, b * dt, c);
    EXPECT_NEAR(pa.x, pb.x, 1e-12) << a;
  }
}

TEST(Trajectory, ImperfectionsApplied) {
  ScanConfig c;
  c.imperfection.ellipticity = 0.1;
  c.imperfection.drift_mm_per_s = {2.0, -1.0};
  const Vec2 p = trajectory(ScanMode::cone3dt, 0.5, c);
  const double w = kTwoPi * c.cycle_freq_hz * 0.5;
  EXPECT_NEAR(p.x, 0.75 * std::sin(w) + 1.0, 1e-9);
  EXPECT_NEAR(p.y, 0.825 * std::cos(w) - 0.5, 1e-9);
}

TEST(Recording, FullScaleLineCount) {
  EXPECT_EQ(recording_lines(0.10689, ScanConfig{}), 169560u);
  EXPECT_EQ(169560u % 314u, 0u);
}

TEST(Recording, SweepMustBeCovered) {
  ExcitationSpec e;
  try {
    synthesize_recording(homogeneous(12), e, small_scan(), NoiseSpec::off(), {}, 0.05, 1);
    FAIL();
  } catch (const DomainError& err) {
    EXPECT_STREQ(err.what(), "sweep not fully covered");
  }
}

TEST(Recording, StaticSceneHasConstantPhase) {
  auto e = pure_tone(400.0, {-5.0, 0.0}, 0.0);
  const auto rec = synthesize_recording(homogeneous(12), e, small_scan(), NoiseSpec::off(), {}, 0.01, 3);
  const std::size_t L = rec.config.lines_per_cycle;
  for (std::size_t slot : {0u, 40u, 200u}) {
    for (std::size_t c = 1; c < rec.cycles(); ++c) {
      const auto a = rec.line(slot);
      const auto b = rec.line(c * L + slot);
      for (std::size_t d = rec.config.surface_pixel; d < rec.depth(); d += 7) {
        const double diff = std::arg(std::complex<double>(b[d]) * std::conj(std::complex<double>(a[d])));
        EXPECT_NEAR(diff, 0.0, 1e-4);
      }
    }
  }
}

TEST(Recording, PureTonePhasePeaksAtToneFrequency) {
  auto e = pure_tone(400.0, {-5.0, 0.0});
  auto cfg = small_scan();
  const auto rec = synthesize_recording(homogeneous(12), e, cfg, NoiseSpec::off(), {}, 0.0507, 5);
  const std::size_t L = cfg.lines_per_cycle;
  const std::size_t n = rec.cycles();
  const std::size_t slot = 100, d = 40;
  // phase relative to the first revisit, unwrapped
  std::vector<double> phase(n);
  double prev = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double raw = std::arg(std::complex<double>(rec.line(c * L + slot)[d]) *
                                std::conj(std::complex<double>(rec.line(slot)[d])));
    phase[c] = prev + wrap_phase(raw - prev);
    prev = phase[c];
  }
  double mean = 0.0;
  for (double p : phase) mean += p / n;
  int best = 0;
  double best_power = -1.0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += (phase[c] - mean) * std::polar(1.0, -kTwoPi * k * c / n);
    if (std::norm(acc) > best_power) {
      best_power = std::norm(acc);
      best = static_cast<int>(k);
    }
  }
  const double resolution = cfg.cycle_freq_hz / n;
  EXPECT_NEAR(best * resolution, 400.0, resolution);
}

TEST(Recording, PhaseIsLinearInDisplacement) {
  auto e = pure_tone(400.0, {-4.0, 0.0});
  auto cfg = small_scan();
  const auto medium = homogeneous(12);
  const auto rec = synthesize_recording(medium, e, cfg, NoiseSpec::off(), {}, 0.01, 9);
  const std::size_t L = cfg.lines_per_cycle;
  const double dz = cfg.pixel_size_mm();
  for (std::size_t slot : {10u, 150u, 290u}) {
    for (int d : {cfg.surface_pixel, 60, 127}) {
      const std::size_t i0 = slot, i1 = 7 * L + slot;
      auto u_at = [&](std::size_t i) {
        const double t = i * cfg.line_period_s();
        const Vec2 p = trajectory(cfg.mode, t, cfg);
        return displacement({p.x, p.y, (d - cfg.surface_pixel) * dz}, rec.start_time_s + t, medium, e);
      };
      const double expected = cfg.phase_per_um() * (u_at(i1) - u_at(i0));
      const double measured = std::arg(std::complex<double>(rec.line(i1)[d]) *
                                       std::conj(std::complex<double>(rec.line(i0)[d])));
      EXPECT_NEAR(measured, wrap_phase(expected), 2e-5);
    }
  }
}

TEST(Recording, DeterministicForSeed) {
  ExcitationSpec e;
  e.source_xy_mm = {-3.0, 1.0};
  NoiseSpec noise;
  noise.phase_noise_floor = 0.5;
  const auto a = synthesize_recording(homogeneous(24), e, small_scan(), noise, {}, 0.1, 42);
  const auto b = synthesize_recording(homogeneous(24), e, small_scan(), noise, {}, 0.1, 42);
  const auto c = synthesize_recording(homogeneous(24), e, small_scan(), noise, {}, 0.1, 43);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  EXPECT_EQ(std::memcmp(a.samples.data(), b.samples.data(), a.samples.size() * sizeof(a.samples[0])), 0);
  EXPECT_NE(std::memcmp(a.samples.data(), c.samples.data(), a.samples.size() * sizeof(a.samples[0])), 0);
}

TEST(Recording, ConeSamplesLieOnCircle) {
  auto cfg = small_scan(ScanMode::cone3dt);
  for (std::size_t i = 0; i < 3000; ++i) {
    const Vec2 p = Vec2{2.0, -1.0} + trajectory(cfg.mode, i * cfg.line_period_s(), cfg);
    EXPECT_NEAR(distance(p, {2.0, -1.0}), 0.5 * cfg.aperture_mm, 1e-9);
  }
}

class RecordingFile : public ::testing::Test {
 protected:
  void SetUp() override {
    auto e = pure_tone(400.0, {-4.0, 0.5});
    rec = synthesize_recording(homogeneous(12), e, small_scan(), NoiseSpec{}, {1.5, -2.0}, 0.006, 77);
  }
  oce::testing::TempDir dir;
  RawRecording rec;
};

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST_F(RecordingFile, RoundTripIsBitExact) {
  const auto path = dir.path() / "a.ocer";
  write_recording(rec, path);
  const auto back = read_recording(path);
  EXPECT_EQ(back.n_lines, rec.n_lines);
  EXPECT_EQ(back.config.mode, rec.config.mode);
  EXPECT_EQ(back.config.depth_pixels, rec.config.depth_pixels);
  EXPECT_EQ(back.config.cycle_freq_hz, rec.config.cycle_freq_hz);
  EXPECT_EQ(back.probe_center_mm, rec.probe_center_mm);
  EXPECT_EQ(back.source_xy_mm, rec.source_xy_mm);
  EXPECT_EQ(back.seed, rec.seed);
  ASSERT_EQ(back.samples.size(), rec.samples.size());
  EXPECT_EQ(std::memcmp(back.samples.data(), rec.samples.data(), rec.samples.size() * 8), 0);
  write_recording(back, dir.path() / "b.ocer");
  EXPECT_EQ(slurp(path), slurp(dir.path() / "b.ocer"));
  EXPECT_EQ(std::filesystem::file_size(path), kRecordingHeaderBytes + rec.samples.size() * 8);
}

TEST_F(RecordingFile, BadMagic) {
  const auto path = dir.path() / "bad.ocer";
  write_recording(rec, path);
  auto bytes = slurp(path);
  bytes[0] = 'X';
  std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  try {
    read_recording(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST_F(RecordingFile, TruncatedPayload) {
  const auto path = dir.path() / "short.ocer";
  write_recording(rec, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  try {
    read_recording(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated payload"), std::string::npos);
  }
}

TEST_F(RecordingFile, UnsupportedVersion) {
  const auto path = dir.path() / "v2.ocer";
  write_recording(rec, path);
  auto bytes = slurp(path);
  bytes[4] = 2;
  std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(read_recording(path), ParseError);
}

}  // namespace
