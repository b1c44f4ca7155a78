#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "oce/commands.hpp"
#include "test_support.hpp"

using namespace oce;
using oce::testing::TempDir;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small phantom set: 2 classes x 5 phantoms, 1 x 2 grid, 96 scan cycles, derived data only.
ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seed = 11;
  c.dataset.classes_kpa = {6.0, 24.0};
  c.dataset.phantoms_per_class = 5;
  c.dataset.keep_recordings = false;
  c.grid = {1, 2, 3.0, {2.0, 0.0}};
  c.excitation.source_xy_mm = {0.0, 0.0};
  c.excitation.sweep_time_s = 0.015;
  c.duration_s = 96 / 5051.6;
  c.scan.depth_pixels = 144;
  c.scan.depth_extent_mm = 144 * 2.0 / 600;
  c.scan.surface_pixel = 12;
  c.net_input = {8, 16};
  c.model.blocks = 2;
  c.model.layers_per_block = 1;
  c.model.growth = 4;
  c.model.init_channels = 4;
  c.model.check_param_budget = false;
  c.train = {3, 8, 1e-3, 32, 0};
  c.folds = {5, 4, 0, 0};
  c.stream = {2, 0.0};
  c.validate();
  return c;
}

CommandContext context(const ExperimentConfig& cfg, const fs::path& root) {
  static std::ostringstream sink;
  CommandContext ctx;
  ctx.cfg = cfg;
  ctx.root = root;
  ctx.log = &sink;
  return ctx;
}

// Simulated and preprocessed tiny experiment in both scan modes. ctest runs every
// test in its own process, so the data is built once per configuration and reused.
class TinyExperiment : public ::testing::Test {
 protected:
  static fs::path root() {
    const auto cfg = tiny_config();
    const auto dir = fs::temp_directory_path() / ("oce_test_fixture_" + config_hash(cfg));
    if (fs::exists(dir / "ready")) return dir;
    TempDir build;
    auto ctx = context(cfg, build.path() / "data");
    for (auto mode : {ScanMode::cone3dt, ScanMode::line2dt}) {
      ctx.cfg.scan.mode = mode;
      cmd_simulate(ctx);
    }
    std::ofstream(ctx.root / "ready") << "ok\n";
    std::error_code ec;
    fs::rename(ctx.root, dir, ec);  // a concurrent builder may have won; either copy is identical
    return dir;
  }
};

}  // namespace

// Configuration ----------------------------------------------------------------

TEST(Config, RoundTripIsIdentity) {
  auto cfg = tiny_config();
  cfg.medium.inclusions.push_back({{1.5, -2.0}, 2.5, 24.0});
  cfg.scan.mode = ScanMode::cone3dt;
  cfg.model.kind = nn::InputKind::seq2dt;
  cfg.train.lr = 1.0 / 3.0;
  const auto text = serialize_config(cfg);
  const auto again = parse_config(text);
  EXPECT_EQ(serialize_config(again), text);
  EXPECT_EQ(config_hash(again), config_hash(cfg));
  EXPECT_EQ(again.train.lr, cfg.train.lr);
  ASSERT_EQ(again.medium.inclusions.size(), 1u);
  EXPECT_EQ(again.medium.inclusions[0].E_kpa, 24.0);
}

TEST(Config, UnknownKeyRejectedWithLine) {
  try {
    parse_config("seed = 3\n# comment\nscan.cycle_frequency = 5000\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("scan.cycle_frequency"), std::string::npos) << e.what();
  }
}

TEST(Config, MalformedInputRejected) {
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("grid.rows = three\n"), ConfigError);
  EXPECT_THROW(parse_config("grid.rows\n"), ConfigError);
  EXPECT_THROW(parse_config("mode = spiral\n"), ConfigError);
  TempDir dir;
  std::ofstream(dir.path() / "bad.cfg") << "grid.cell_mm = -1\n";
  EXPECT_THROW(load_config(dir.path() / "bad.cfg"), ConfigError);
  EXPECT_THROW(load_config(dir.path() / "absent.cfg"), ConfigError);
}

// simulate -------------------------------------------------------------------

TEST(Simulate, OneRecordingPerCellAndByteIdenticalPerSeed) {
  auto cfg = tiny_config();
  cfg.dataset.classes_kpa.clear();
  cfg.dataset.keep_recordings = true;
  cfg.grid = {2, 3, 2.0, {2.0, -2.0}};
  TempDir a, b;
  cmd_simulate(context(cfg, a.path()));
  cmd_simulate(context(cfg, b.path()));
  const auto index = read_index(a.path() / "recordings" / "index.csv");
  ASSERT_EQ(index.size(), 6u);
  for (const auto& e : index)
    EXPECT_EQ(slurp(a.path() / "recordings" / e.file), slurp(b.path() / "recordings" / e.file)) << e.file;
  EXPECT_EQ(slurp(a.path() / "recordings" / "index.csv"), slurp(b.path() / "recordings" / "index.csv"));

  cfg.seed += 1;
  TempDir c;
  cmd_simulate(context(cfg, c.path()));
  EXPECT_NE(slurp(a.path() / "recordings" / index[0].file), slurp(c.path() / "recordings" / index[0].file));
}

TEST(Simulate, EmptyGridIsConfigError) {
  auto cfg = tiny_config();
  cfg.grid.cols = 0;
  TempDir dir;
  try {
    cmd_simulate(context(cfg, dir.path()));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("empty grid"), std::string::npos);
  }
}

// estimate-fft ---------------------------------------------------------------

// Lattice through gamma = 100, 90 and 80 degrees at 6 mm from the source.
ExperimentConfig angle_config() {
  auto c = tiny_config();
  const double dy = 6.0 / std::tan(80.0 * kPi / 180.0);
  c.grid = {3, 1, dy, {6.0, -dy}};
  c.dataset.classes_kpa = {6.0, 12.0, 24.0};
  c.dataset.phantoms_per_class = 1;
  c.dataset.phantom_E_jitter = 0.0;
  c.dataset.keep_recordings = true;
  c.duration_s = 128 / 5051.6;
  return c;
}

TEST(EstimateFft, RefitCalibrationAndAngleCorrection) {
  auto cfg = angle_config();
  TempDir dir;
  auto ctx = context(cfg, dir.path());
  cmd_simulate(ctx);
  cmd_preprocess(ctx);
  cmd_estimate_fft(ctx);
  EXPECT_EQ(slurp(dir.path() / "estimates_fft.csv").substr(0, std::string(kFftHeader).size()), kFftHeader);
  const auto rows = compute_fft_rows(ctx);
  ASSERT_EQ(rows.size(), 9u);

  // Calibrate on the on-axis cells of the 6 and 24 kPa phantoms.
  std::vector<double> v, E;
  for (const auto& r : rows) {
    ASSERT_FALSE(r.estimate.estimate.velocity.failed) << r.entry.file;
    if (r.entry.row == 1 && r.entry.class_id != 1) {
      v.push_back(r.estimate.estimate.velocity.v_mps);
      E.push_back(r.entry.true_E_kpa);
    }
  }
  const auto cal = refit_calibration(v, E);
  for (const auto& r : rows) {
    if (r.entry.class_id != 1) continue;
    const auto raw = fft_position_estimate(r.estimate, cal, false);
    const auto corrected = fft_position_estimate(r.estimate, cal, true);
    ASSERT_FALSE(raw.failed);
    ASSERT_FALSE(corrected.failed);
    if (r.entry.row == 1) {
      EXPECT_NEAR(raw.E_kpa, 12.0, 0.25 * 12.0);
    } else {
      EXPECT_NEAR(std::abs(r.estimate.gamma_rad - kPi / 2), 10.0 * kPi / 180.0, 1e-9);
      EXPECT_LT(std::abs(corrected.E_kpa - 12.0), std::abs(raw.E_kpa - 12.0)) << r.entry.file;
    }
  }
}

// train / infer / evaluate / stream-bench --------------------------------------

TEST_F(TinyExperiment, TrainWritesArtifactsAndResumesIdentically) {
  auto cfg = tiny_config();
  TempDir work;
  fs::copy(root(), work.path(), fs::copy_options::recursive);
  auto ctx = context(cfg, work.path());
  cmd_train(ctx);
  const auto fold = fold_dir(ctx);
  for (const char* f : {"best.ocek", "last.ocek", "history.csv", "split.csv"}) EXPECT_TRUE(fs::exists(fold / f)) << f;
  const auto first = slurp(fold / "history.csv");

  // Same seed, same losses.
  cmd_train(ctx);
  EXPECT_EQ(slurp(fold / "history.csv"), first);

  // Two epochs, then resume to five; compare with five uninterrupted epochs.
  ctx.cfg.train.epochs = 5;
  cmd_train(ctx);
  const auto straight = slurp(fold / "history.csv");
  ctx.cfg.train.epochs = 2;
  cmd_train(ctx);
  ctx.cfg.train.epochs = 5;
  ctx.resume = true;
  cmd_train(ctx);
  EXPECT_EQ(slurp(fold / "history.csv"), straight);

  cmd_infer(ctx);
  const auto preds = read_predictions(fold / "predictions.csv");
  EXPECT_EQ(preds.size(), 20u);
  for (const auto& p : preds) EXPECT_TRUE(std::isfinite(p.E_kpa));

  cmd_estimate_fft(ctx);
  cmd_evaluate(ctx);
  for (const char* f : {"mae_dl.csv", "mae_fft.csv", "mae_fft_ac.csv", "manifest.txt"})
    EXPECT_TRUE(fs::exists(work.path() / "report" / f)) << f;

  // Estimates placed on a different lattice do not fit the configured grid.
  ctx.cfg.grid.cell_mm = 4.0;
  try {
    cmd_evaluate(ctx);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("geometry"), std::string::npos) << e.what();
  }
}

TEST_F(TinyExperiment, MissingInputsAreListed) {
  auto cfg = tiny_config();
  TempDir work;
  fs::copy(root(), work.path(), fs::copy_options::recursive);
  fs::remove(work.path() / "derived" / "p003_r0_c1_cone3dt.ocen");
  fs::remove(work.path() / "derived" / "p007_r0_c0_cone3dt.ocen");
  try {
    cmd_train(context(cfg, work.path()));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("p003_r0_c1_cone3dt.ocen"), std::string::npos) << msg;
    EXPECT_NE(msg.find("p007_r0_c0_cone3dt.ocen"), std::string::npos) << msg;
  }
  TempDir empty;
  EXPECT_THROW(cmd_preprocess(context(cfg, empty.path())), DataError);
}

TEST_F(TinyExperiment, StreamBenchCountsEveryWindowUnderBackPressure) {
  auto cfg = tiny_config();
  TempDir work;
  fs::copy(root(), work.path(), fs::copy_options::recursive);
  auto ctx = context(cfg, work.path());
  cmd_train(ctx);
  cmd_stream_bench(ctx);
  const auto text = slurp(work.path() / "stream_bench.txt");
  EXPECT_NE(text.find("latency_p50_ms"), std::string::npos);
  EXPECT_NE(text.find("estimates_per_s"), std::string::npos);

  auto loaded = nn::load_checkpoint<float>(fold_dir(ctx) / "best.ocek");
  const auto rec = load_or_regenerate(ctx, read_index(work.path() / "recordings" / "index.csv").front());
  EXPECT_FALSE(fs::exists(work.path() / "recordings" / "p000_r0_c0_cone3dt.ocer"));
  StreamOptions opt{cfg.train.temporal_crop, 8, 2, 0.0, cfg.preproc, cfg.net_input};
  const auto report = stream_bench(rec, *loaded.model, opt);
  EXPECT_EQ(report.cycles_replayed, rec.cycles());
  EXPECT_EQ(report.cycles_processed, rec.cycles());
  EXPECT_EQ(report.expected_estimates, (rec.cycles() - 32) / 8 + 1);
  EXPECT_EQ(report.estimates_kpa.size(), report.expected_estimates);
  EXPECT_GT(report.backpressure_events, 0u);
  EXPECT_LE(report.max_queue_depth, 2u);
  EXPECT_GE(report.p99_ms, report.p50_ms);

  // Streaming and offline inference see the same windows.
  const auto offline = process_recording(rec, cfg);
  const auto sliding = nn::infer_sliding(*loaded.model, offline.input, 8);
  ASSERT_EQ(sliding.per_window.size(), report.estimates_kpa.size());
  for (std::size_t i = 0; i < sliding.per_window.size(); ++i)
    EXPECT_NEAR(report.estimates_kpa[i], sliding.per_window[i], 1e-3 * (1.0 + std::abs(sliding.per_window[i])));

  RawRecording empty = rec;
  empty.n_lines = 0;
  empty.samples.clear();
  EXPECT_THROW(stream_bench(empty, *loaded.model, opt), DataError);
  opt.window = 16;
  EXPECT_THROW(stream_bench(rec, *loaded.model, opt), DataError);
  opt.window = 32;
  opt.net_input.lateral = 32;
  EXPECT_THROW(stream_bench(rec, *loaded.model, opt), DataError);
}

TEST(StreamBench, WindowCountArithmetic) {
  EXPECT_EQ(expected_window_count(540, 64, 8), 60u);
  EXPECT_EQ(expected_window_count(64, 64, 8), 1u);
  EXPECT_EQ(expected_window_count(71, 64, 8), 1u);
  EXPECT_EQ(expected_window_count(72, 64, 8), 2u);
  EXPECT_EQ(expected_window_count(63, 64, 8), 0u);
}

TEST(StreamBench, QueueBlocksInsteadOfDropping) {
  BoundedQueue<int> q(3);
  std::thread producer([&] {
    for (int i = 0; i < 200; ++i) q.push(i);
    q.close();
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  std::vector<int> got;
  while (auto v = q.pop()) got.push_back(*v);
  producer.join();
  ASSERT_EQ(got.size(), 200u);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(got[i], i);
  EXPECT_GT(q.full_events(), 0u);
  EXPECT_LE(q.max_depth(), 3u);
}

// Tool exit codes ----------------------------------------------------------------

namespace {
int run_tool(const std::string& args) {
  const int status = std::system((std::string(OCE_TOOL_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
}  // namespace

TEST(Tool, ExitCodes) {
  TempDir dir;
  const auto cfg = (dir.path() / "c.cfg").string();
  EXPECT_EQ(run_tool(""), exit_code::kConfig);
  EXPECT_EQ(run_tool("simulate --mode spiral"), exit_code::kConfig);
  std::ofstream(cfg) << "grid.rows = 0\n";
  EXPECT_EQ(run_tool("simulate --config " + cfg + " --out " + dir.path().string()), exit_code::kConfig);
  std::ofstream(cfg, std::ios::trunc) << "no.such.key = 1\n";
  EXPECT_EQ(run_tool("simulate --config " + cfg), exit_code::kConfig);
  std::ofstream(cfg, std::ios::trunc) << "seed = 5\n";
  EXPECT_EQ(run_tool("train --config " + cfg + " --out " + (dir.path() / "none").string()), exit_code::kData);
  EXPECT_EQ(run_tool("evaluate --config " + cfg + " --out " + (dir.path() / "none").string()), exit_code::kData);
  EXPECT_EQ(run_tool("simulate --help"), exit_code::kSuccess);
}
