#pragma once

// Subcommands of the oce tool. Every command works inside one experiment directory:
//
//   recordings/   simulate      raw recordings, index.csv, manifest.txt
//   derived/      preprocess    network inputs (.ocen), ST maps (.oces), sequences (.ocep)
//   estimates_fft.csv           estimate-fft
//   train/<kind>/fold<k>/       train, infer: checkpoints, history, predictions
//   report/                     evaluate: maps, tables, manifest
//   stream_bench.txt            stream-bench

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oce/config.hpp"
#include "oce/evalmap.hpp"
#include "oce/experiment.hpp"
#include "oce/nn/checkpoint.hpp"
#include "oce/nn/folds.hpp"
#include "oce/nn/input_io.hpp"
#include "oce/preproc_io.hpp"
#include "oce/recording_io.hpp"
#include "oce/stream.hpp"

namespace oce {

namespace fs = std::filesystem;

struct CommandContext {
  ExperimentConfig cfg;
  fs::path root;        // experiment directory
  bool resume = false;  // train: continue from the last checkpoint
  std::ostream* log = &std::cout;
};

// Row of recordings/index.csv.
struct IndexEntry {
  std::string file;  // relative to recordings/
  int phantom_id = 0;
  int class_id = 0;
  double true_E_kpa = 0.0;
  int row = 0;
  int col = 0;
  Vec2 position_mm;
  ScanMode mode = ScanMode::line2dt;

  std::string stem() const { return fs::path(file).stem().string(); }
};

inline constexpr const char* kIndexHeader = "file,phantom_id,class_id,true_E_kpa,row,col,x_mm,y_mm,mode";

namespace cmd_detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream s(line);
  std::string f;
  while (std::getline(s, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline std::string num(double v) { return config_detail::format_double(v); }

inline double to_double(const std::string& s, const std::string& where) {
  try {
    return config_detail::parse_double(where, s);
  } catch (const ConfigError&) {
    throw DataError(where + ": '" + s + "' is not a number");
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

inline void require_files(const std::vector<fs::path>& paths, const std::string& what) {
  std::vector<std::string> missing;
  for (const auto& p : paths)
    if (!fs::exists(p)) missing.push_back(p.string());
  if (missing.empty()) return;
  std::string msg = "missing " + what + " (" + std::to_string(missing.size()) + "):";
  for (const auto& m : missing) msg += "\n  " + m;
  throw DataError(msg);
}

}  // namespace cmd_detail

inline fs::path recordings_dir(const CommandContext& ctx) { return ctx.root / "recordings"; }
inline fs::path derived_dir(const CommandContext& ctx) { return ctx.root / "derived"; }
inline fs::path fold_dir(const CommandContext& ctx) {
  return ctx.root / "train" / nn::to_string(ctx.cfg.model.kind) / ("fold" + std::to_string(ctx.cfg.folds.fold));
}

inline std::vector<IndexEntry> read_index(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing recording index " + path.string() + " (run simulate first)");
  std::string line;
  if (!std::getline(in, line) || line != kIndexHeader) throw DataError(path.string() + ": unexpected header");
  std::vector<IndexEntry> out;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = cmd_detail::split_csv(line);
    const std::string where = path.filename().string() + " line " + std::to_string(n);
    if (f.size() != 9) throw DataError(where + ": expected 9 fields");
    IndexEntry e;
    e.file = f[0];
    e.phantom_id = static_cast<int>(cmd_detail::to_double(f[1], where));
    e.class_id = static_cast<int>(cmd_detail::to_double(f[2], where));
    e.true_E_kpa = cmd_detail::to_double(f[3], where);
    e.row = static_cast<int>(cmd_detail::to_double(f[4], where));
    e.col = static_cast<int>(cmd_detail::to_double(f[5], where));
    e.position_mm = {cmd_detail::to_double(f[6], where), cmd_detail::to_double(f[7], where)};
    try {
      e.mode = scan_mode_from_string(f[8]);
    } catch (const ConfigError& err) {
      throw DataError(where + ": " + err.what());
    }
    out.push_back(e);
  }
  return out;
}

inline void write_index(const std::vector<IndexEntry>& entries, const fs::path& path) {
  std::ostringstream s;
  s << kIndexHeader << '\n';
  for (const auto& e : entries)
    s << e.file << ',' << e.phantom_id << ',' << e.class_id << ',' << cmd_detail::num(e.true_E_kpa) << ',' << e.row
      << ',' << e.col << ',' << cmd_detail::num(e.position_mm.x) << ',' << cmd_detail::num(e.position_mm.y) << ','
      << to_string(e.mode) << '\n';
  cmd_detail::write_text(path, s.str());
}

inline std::vector<IndexEntry> entries_for(const std::vector<IndexEntry>& all, ScanMode mode) {
  std::vector<IndexEntry> out;
  for (const auto& e : all)
    if (e.mode == mode) out.push_back(e);
  return out;
}

inline std::string manifest_text(const CommandContext& ctx, const std::string& command,
                                 const std::vector<std::string>& files) {
  std::ostringstream s;
  s << "command = " << command << "\nseed = " << ctx.cfg.seed << "\nconfig_hash = " << config_hash(ctx.cfg) << '\n';
  for (const auto& f : files) s << "file = " << f << '\n';
  return s.str();
}

// simulate -------------------------------------------------------------------

inline void write_derived(const ProcessedCell& cell, const ExperimentConfig& cfg, std::uint64_t seed,
                          const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  nn::write_net_input(cell.input, "seed:" + std::to_string(seed), dir / (stem + ".ocen"));
  if (cell.st_map) write_st_map(*cell.st_map, dir / (stem + ".oces"));
  if (cfg.keep_sequences) write_phase_sequence(cell.sequence, dir / (stem + ".ocep"));
}

// Recordings are written to recordings/. With dataset.keep_recordings = false each
// recording is preprocessed at once and only the derived files are stored; a raw
// recording can be regenerated from (config, seed) at any time.
inline int cmd_simulate(const CommandContext& ctx) {
  const auto& cfg = ctx.cfg;
  if (cfg.grid.rows * cfg.grid.cols == 0) throw ConfigError("empty grid");
  const auto phantoms = make_phantoms(cfg);
  const auto dir = recordings_dir(ctx);
  fs::create_directories(dir);

  std::vector<IndexEntry> index;
  if (fs::exists(dir / "index.csv"))
    for (const auto& e : read_index(dir / "index.csv"))
      if (e.mode != cfg.scan.mode) index.push_back(e);
  std::vector<std::string> files;
  for (const auto& ph : phantoms)
    for (int r = 0; r < cfg.grid.rows; ++r)
      for (int c = 0; c < cfg.grid.cols; ++c) {
        const auto rec = simulate_cell(cfg, ph, r, c, cfg.scan.mode);
        std::ostringstream name;
        name << "p" << std::setw(3) << std::setfill('0') << ph.id << "_r" << r << "_c" << c << "_"
             << to_string(cfg.scan.mode) << ".ocer";
        const IndexEntry entry{name.str(), ph.id, ph.class_id, ph.medium.background_E_kpa, r, c,
                               cfg.grid.center(r, c), cfg.scan.mode};
        if (cfg.dataset.keep_recordings) {
          write_recording(rec, dir / entry.file);
          files.push_back(entry.file);
          *ctx.log << "wrote " << (dir / entry.file).string() << '\n';
        } else {
          write_derived(process_recording(rec, cfg, cfg.keep_sequences), cfg, rec.seed, derived_dir(ctx), entry.stem());
          *ctx.log << "simulated and preprocessed " << entry.stem() << '\n';
        }
        index.push_back(entry);
      }
  write_index(index, dir / "index.csv");
  cmd_detail::write_text(dir / ("manifest_" + to_string(cfg.scan.mode) + ".txt"),
                         manifest_text(ctx, "simulate", files));
  cmd_detail::write_text(dir / "config.txt", serialize_config(cfg));
  return exit_code::kSuccess;
}

// Raw recording of an index entry, regenerated from the configuration if it was not kept.
inline RawRecording load_or_regenerate(const CommandContext& ctx, const IndexEntry& e) {
  const auto path = recordings_dir(ctx) / e.file;
  if (fs::exists(path)) return read_recording(path);
  const auto phantoms = make_phantoms(ctx.cfg);
  if (e.phantom_id < 0 || e.phantom_id >= static_cast<int>(phantoms.size()) || e.row >= ctx.cfg.grid.rows ||
      e.col >= ctx.cfg.grid.cols)
    throw DataError("missing recording " + path.string() + " and the configuration cannot regenerate it");
  *ctx.log << "regenerating " << e.file << " from the configuration\n";
  return simulate_cell(ctx.cfg, phantoms[e.phantom_id], e.row, e.col, e.mode);
}

// preprocess -----------------------------------------------------------------

inline std::vector<IndexEntry> load_entries(const CommandContext& ctx, std::optional<ScanMode> mode) {
  const auto all = read_index(recordings_dir(ctx) / "index.csv");
  auto entries = mode ? entries_for(all, *mode) : all;
  if (entries.empty())
    throw DataError("no " + (mode ? to_string(*mode) + " " : std::string()) + "recordings listed in " +
                    (recordings_dir(ctx) / "index.csv").string());
  return entries;
}

inline int cmd_preprocess(const CommandContext& ctx) {
  const auto entries = load_entries(ctx, ctx.cfg.scan.mode);
  std::vector<fs::path> paths;
  for (const auto& e : entries) paths.push_back(recordings_dir(ctx) / e.file);
  cmd_detail::require_files(paths, "recordings");
  const auto out = derived_dir(ctx);
  fs::create_directories(out);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto rec = read_recording(paths[i]);
    const auto cell = process_recording(rec, ctx.cfg, ctx.cfg.keep_sequences);
    write_derived(cell, ctx.cfg, rec.seed, out, entries[i].stem());
    *ctx.log << "preprocessed " << entries[i].file << " -> " << cell.input.depth << " x " << cell.input.lateral << " x "
             << cell.input.time << '\n';
  }
  return exit_code::kSuccess;
}

// estimate-fft ---------------------------------------------------------------

inline constexpr const char* kFftHeader =
    "position_x_mm,position_y_mm,v_mps,gamma_rad,v_corrected_mps,E_kpa,failed,phantom_id,true_E_kpa,E_corrected_kpa,"
    "failed_corrected";

struct FftRow {
  IndexEntry entry;
  FftCellEstimate estimate;
};

inline std::vector<FftRow> compute_fft_rows(const CommandContext& ctx) {
  const auto entries = load_entries(ctx, ScanMode::line2dt);
  std::vector<fs::path> recs;
  for (const auto& e : entries)
    if (!fs::exists(derived_dir(ctx) / (e.stem() + ".oces"))) recs.push_back(recordings_dir(ctx) / e.file);
  cmd_detail::require_files(recs, "recordings");
  std::vector<FftRow> rows;
  for (const auto& e : entries) {
    const auto st_path = derived_dir(ctx) / (e.stem() + ".oces");
    STMap map;
    Vec2 source = ctx.cfg.excitation.source_xy_mm;
    if (fs::exists(st_path)) {
      map = read_st_map(st_path);
    } else {
      const auto rec = read_recording(recordings_dir(ctx) / e.file);
      map = *process_recording(rec, ctx.cfg).st_map;
      source = rec.source_xy_mm;
    }
    const double gamma = gamma_from_geometry(source, e.position_mm);
    rows.push_back({e, {e.position_mm, gamma, estimate_fft(map, gamma, ctx.cfg.spectral, ctx.cfg.band, ctx.cfg.calibration)}});
  }
  return rows;
}

inline std::string fft_csv(const std::vector<FftRow>& rows) {
  using cmd_detail::num;
  std::ostringstream s;
  s << kFftHeader << '\n';
  for (const auto& r : rows) {
    const auto& est = r.estimate.estimate;
    const bool failed = est.velocity.failed || est.E.failed;
    const bool failed_c = est.velocity.failed || !est.v_corrected || est.E_corrected.failed;
    s << num(r.entry.position_mm.x) << ',' << num(r.entry.position_mm.y) << ','
      << (est.velocity.failed ? "" : num(est.velocity.v_mps)) << ',' << num(r.estimate.gamma_rad) << ','
      << (est.v_corrected && !est.velocity.failed ? num(*est.v_corrected) : "") << ','
      << (failed ? "" : num(est.E.E_kpa)) << ',' << (failed ? 1 : 0) << ',' << r.entry.phantom_id << ','
      << num(r.entry.true_E_kpa) << ',' << (failed_c ? "" : num(est.E_corrected.E_kpa)) << ',' << (failed_c ? 1 : 0)
      << '\n';
  }
  return s.str();
}

inline int cmd_estimate_fft(const CommandContext& ctx) {
  const auto rows = compute_fft_rows(ctx);
  cmd_detail::write_text(ctx.root / "estimates_fft.csv", fft_csv(rows));
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.estimate.estimate.velocity.failed;
  *ctx.log << "estimated " << rows.size() << " positions, " << failed << " failed -> "
           << (ctx.root / "estimates_fft.csv").string() << '\n';
  return exit_code::kSuccess;
}

// train / infer --------------------------------------------------------------

inline ScanMode mode_for(nn::InputKind kind) {
  return kind == nn::InputKind::seq3dt ? ScanMode::cone3dt : ScanMode::line2dt;
}

inline fs::path input_path(const CommandContext& ctx, const IndexEntry& e) {
  return derived_dir(ctx) / (e.stem() + (ctx.cfg.model.kind == nn::InputKind::st_map ? ".oces" : ".ocen"));
}

inline nn::NetInput load_input(const CommandContext& ctx, const IndexEntry& e) {
  const auto p = input_path(ctx, e);
  return ctx.cfg.model.kind == nn::InputKind::st_map ? to_net_input(read_st_map(p), ctx.cfg.net_input)
                                                     : nn::read_net_input(p);
}

struct FoldSplit {
  std::vector<IndexEntry> entries;
  nn::DatasetIndex index;
  nn::SplitIndices split;
};

inline FoldSplit fold_split(const CommandContext& ctx) {
  FoldSplit fs_;
  fs_.entries = load_entries(ctx, mode_for(ctx.cfg.model.kind));
  for (const auto& e : fs_.entries)
    fs_.index.entries.push_back({e.file, e.phantom_id, e.class_id, e.true_E_kpa, e.position_mm, e.mode});
  const auto plan = nn::make_folds(fs_.index, derive_seed(ctx.cfg.seed, "folds"), ctx.cfg.folds.outer,
                                   ctx.cfg.folds.inner);
  const auto& fold = plan.folds[ctx.cfg.folds.fold];
  fs_.split = nn::split_entries(fs_.index, fold, fold.inner[ctx.cfg.folds.inner_split]);
  nn::check_split(fs_.index, fs_.split);
  return fs_;
}

inline std::string role_of(const FoldSplit& s, std::size_t i) {
  auto has = [&](const std::vector<std::size_t>& v) { return std::find(v.begin(), v.end(), i) != v.end(); };
  if (has(s.split.test)) return "test";
  if (has(s.split.validation)) return "validation";
  if (has(s.split.train)) return "train";
  return "unused";
}

inline int cmd_train(const CommandContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto split = fold_split(ctx);
  std::vector<fs::path> paths;
  for (const auto& e : split.entries) paths.push_back(input_path(ctx, e));
  cmd_detail::require_files(paths, "preprocessed inputs (run preprocess first)");

  std::vector<nn::NetInput> inputs;
  for (const auto& e : split.entries) inputs.push_back(load_input(ctx, e));
  std::vector<nn::Sample> train_set, val_set;
  for (auto i : split.split.train) train_set.push_back({&inputs[i], split.entries[i].true_E_kpa});
  for (auto i : split.split.validation) val_set.push_back({&inputs[i], split.entries[i].true_E_kpa});

  const auto dir = fold_dir(ctx);
  fs::create_directories(dir);
  const auto last = dir / "last.ocek";
  nn::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "train");

  std::unique_ptr<nn::Regressor<float>> model;
  nn::TrainState<float> state;
  if (ctx.resume && fs::exists(last)) {
    auto loaded = nn::load_checkpoint<float>(last);
    if (!loaded.state) throw DataError(last.string() + " holds no training state");
    model = std::move(loaded.model);
    state = std::move(*loaded.state);
    *ctx.log << "resuming after epoch " << state.next_epoch << '\n';
  } else {
    const auto& x = inputs.front();
    model = std::make_unique<nn::Regressor<float>>(cfg.model, x.depth, x.lateral, tc.temporal_crop,
                                                   derive_seed(cfg.seed, "init"));
  }
  *ctx.log << "model " << nn::to_string(cfg.model.kind) << ": " << model->net().parameter_count()
           << " trainable parameters (reference architecture: " << nn::kReferenceParameterCount << ")\n";
  *ctx.log << "fold " << cfg.folds.fold << ": " << train_set.size() << " train, " << val_set.size() << " validation, "
           << split.split.test.size() << " test samples\n";

  nn::train(*model, train_set, val_set, tc, state, [&](const nn::EpochRecord& r) {
    nn::save_checkpoint(*model, &state, last);
    *ctx.log << "epoch " << r.epoch << " train_mse " << r.train_mse << " validation_mse " << r.validation_mse << '\n';
  });

  std::ostringstream hist;
  hist << "epoch,train_mse_kpa2,validation_mse_kpa2\n";
  for (const auto& r : state.history.epochs)
    hist << r.epoch << ',' << cmd_detail::num(r.train_mse) << ',' << cmd_detail::num(r.validation_mse) << '\n';
  cmd_detail::write_text(dir / "history.csv", hist.str());
  nn::restore(model->net(), state.best_params, state.best_buffers);
  nn::save_checkpoint<float>(*model, nullptr, dir / "best.ocek");

  std::ostringstream roles;
  roles << "file,phantom_id,role\n";
  for (std::size_t i = 0; i < split.entries.size(); ++i)
    roles << split.entries[i].file << ',' << split.entries[i].phantom_id << ',' << role_of(split, i) << '\n';
  cmd_detail::write_text(dir / "split.csv", roles.str());
  *ctx.log << "best epoch " << state.history.best_epoch << " -> " << (dir / "best.ocek").string() << '\n';
  return exit_code::kSuccess;
}

inline constexpr const char* kPredictionHeader = "file,phantom_id,class_id,true_E_kpa,row,col,x_mm,y_mm,role,E_kpa,windows";

inline int cmd_infer(const CommandContext& ctx) {
  const auto split = fold_split(ctx);
  const auto ckpt = fold_dir(ctx) / "best.ocek";
  cmd_detail::require_files({ckpt}, "checkpoint (run train first)");
  auto loaded = nn::load_checkpoint<float>(ckpt);
  if (loaded.model->spec().kind != ctx.cfg.model.kind)
    throw DataError("checkpoint holds a " + nn::to_string(loaded.model->spec().kind) + " model, configuration asks for " +
                    nn::to_string(ctx.cfg.model.kind));
  std::vector<fs::path> paths;
  for (const auto& e : split.entries) paths.push_back(input_path(ctx, e));
  cmd_detail::require_files(paths, "preprocessed inputs (run preprocess first)");

  std::ostringstream s;
  s << kPredictionHeader << '\n';
  for (std::size_t i = 0; i < split.entries.size(); ++i) {
    const auto& e = split.entries[i];
    const auto x = load_input(ctx, e);
    const auto r = nn::infer_sliding(*loaded.model, x, ctx.cfg.inference_stride);
    if (!std::isfinite(r.mean)) throw NumericError("non-finite prediction for " + e.file);
    s << e.file << ',' << e.phantom_id << ',' << e.class_id << ',' << cmd_detail::num(e.true_E_kpa) << ',' << e.row
      << ',' << e.col << ',' << cmd_detail::num(e.position_mm.x) << ',' << cmd_detail::num(e.position_mm.y) << ','
      << role_of(split, i) << ',' << cmd_detail::num(r.mean) << ',' << r.per_window.size() << '\n';
  }
  cmd_detail::write_text(fold_dir(ctx) / "predictions.csv", s.str());
  *ctx.log << "wrote " << (fold_dir(ctx) / "predictions.csv").string() << '\n';
  return exit_code::kSuccess;
}

// evaluate -------------------------------------------------------------------

struct PredictionRow {
  int phantom_id = 0;
  double true_E_kpa = 0.0;
  Vec2 position_mm;
  std::string role;
  double E_kpa = 0.0;
};

inline std::vector<PredictionRow> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line) || line != kPredictionHeader) throw DataError(path.string() + ": unexpected header");
  std::vector<PredictionRow> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = cmd_detail::split_csv(line);
    if (f.size() != 11) throw DataError(path.string() + ": expected 11 fields");
    out.push_back({static_cast<int>(cmd_detail::to_double(f[1], path.string())), cmd_detail::to_double(f[3], path.string()),
                   {cmd_detail::to_double(f[6], path.string()), cmd_detail::to_double(f[7], path.string())}, f[8],
                   cmd_detail::to_double(f[9], path.string())});
  }
  return out;
}

inline ElasticityMap assemble_checked(const std::vector<PositionEstimate>& est, const GridSpec& grid,
                                      const std::string& method, Vec2 source) {
  try {
    return assemble_map(est, grid, method, source);
  } catch (const DataError& e) {
    throw DataError(std::string("geometry error: ") + e.what());
  }
}

// Calibration line refitted on the phantoms outside `held_out`. Without a fold split
// (empty set) the configured calibration is kept, so no test data leaks into the fit.
inline Calibration refit_fft_calibration(const ExperimentConfig& cfg, const std::vector<FftRow>& rows,
                                         const std::set<int>& held_out, bool corrected) {
  if (held_out.empty()) return cfg.calibration;
  std::vector<double> v, E;
  for (const auto& r : rows) {
    const auto& est = r.estimate.estimate;
    if (held_out.count(r.entry.phantom_id) || est.velocity.failed) continue;
    if (corrected && !est.v_corrected) continue;
    v.push_back(corrected ? *est.v_corrected : est.velocity.v_mps);
    E.push_back(r.entry.true_E_kpa);
  }
  if (v.size() < 2) return cfg.calibration;
  auto cal = refit_calibration(v, E);
  cal.min_E_kpa = cfg.calibration.min_E_kpa;
  return cal;
}

inline int cmd_evaluate(const CommandContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto phantoms = make_phantoms(cfg);
  const auto pred_path = fold_dir(ctx) / "predictions.csv";
  const auto fft_path = ctx.root / "estimates_fft.csv";
  if (!fs::exists(pred_path) && !fs::exists(fft_path))
    cmd_detail::require_files({pred_path, fft_path}, "estimates (run infer or estimate-fft first)");

  std::map<int, std::vector<PositionEstimate>> dl, fft, fft_ac;
  std::set<int> test_phantoms;
  if (fs::exists(pred_path))
    for (const auto& p : read_predictions(pred_path)) {
      if (p.role != "test") continue;
      test_phantoms.insert(p.phantom_id);
      dl[p.phantom_id].push_back({p.position_mm, p.E_kpa, !std::isfinite(p.E_kpa)});
    }

  Calibration cal = cfg.calibration, cal_ac = cfg.calibration;
  if (fs::exists(fft_path)) {
    const auto rows = compute_fft_rows(ctx);
    cal = refit_fft_calibration(cfg, rows, test_phantoms, false);
    cal_ac = refit_fft_calibration(cfg, rows, test_phantoms, true);
    for (const auto& r : rows) {
      if (!test_phantoms.empty() && !test_phantoms.count(r.entry.phantom_id)) continue;
      fft[r.entry.phantom_id].push_back(fft_position_estimate(r.estimate, cal, false));
      fft_ac[r.entry.phantom_id].push_back(fft_position_estimate(r.estimate, cal_ac, true));
    }
  }

  std::vector<NamedMap> maps;
  std::vector<ElasticityMap> kept;
  std::vector<GroundTruthMap> truths;
  std::map<std::string, std::vector<std::pair<std::size_t, std::string>>> by_method;  // map index, class
  for (const auto& [method, source] : {std::pair{"dl", &dl}, std::pair{"fft", &fft}, std::pair{"fft_ac", &fft_ac}})
    for (const auto& [pid, est] : *source) {
      if (pid < 0 || pid >= static_cast<int>(phantoms.size()))
        throw DataError("geometry error: phantom " + std::to_string(pid) + " is not part of this configuration");
      const auto& ph = phantoms[pid];
      auto m = assemble_checked(est, cfg.grid, method, cfg.excitation.source_xy_mm);
      std::optional<double> thr;
      if (!ph.medium.inclusions.empty()) thr = default_dice_threshold(ph.medium);
      maps.push_back({std::string(method) + "_p" + std::to_string(pid), m, thr});
      truths.push_back(ground_truth(cfg.grid, ph.medium));
      by_method[method].push_back({maps.size() - 1, cmd_detail::num(ph.class_E_kpa)});
    }

  std::vector<NamedTable> tables;
  std::ostringstream dice_csv;
  dice_csv << "method,phantom,dice,precision\n";
  bool any_dice = false;
  for (const auto& [method, items] : by_method) {
    std::vector<LabelledMap> lm;
    for (const auto& [i, cls] : items) lm.push_back({&maps[i].map, &truths[i], cls});
    const auto rows = mae_table(lm);
    tables.push_back({"mae_" + method, rows});
    *ctx.log << method << " MAE " << format_optional(rows.back().mae_kpa) << " kPa, failure rate "
             << rows.back().failure_rate << '\n';
    for (const auto& [i, cls] : items)
      if (maps[i].binarize_threshold) {
        const auto d = dice(maps[i].map, truths[i], *maps[i].binarize_threshold);
        dice_csv << method << ',' << maps[i].name << ',' << d.dice << ',' << format_optional(d.precision) << '\n';
        any_dice = true;
      }
  }
  Manifest manifest{{{"seed", std::to_string(cfg.seed)},
                     {"config_hash", config_hash(cfg)},
                     {"fold", std::to_string(cfg.folds.fold)},
                     {"fft_calibration", cmd_detail::num(cal.slope) + ", " + cmd_detail::num(cal.intercept)},
                     {"fft_ac_calibration", cmd_detail::num(cal_ac.slope) + ", " + cmd_detail::num(cal_ac.intercept)}}};
  if (fs::exists(pred_path)) manifest.entries.push_back({"input", pred_path.string()});
  if (fs::exists(fft_path)) manifest.entries.push_back({"input", fft_path.string()});
  const auto out = ctx.root / "report";
  emit_report(maps, tables, out, manifest);
  if (any_dice) cmd_detail::write_text(out / "dice.csv", dice_csv.str());
  *ctx.log << "report written to " << out.string() << '\n';
  return exit_code::kSuccess;
}

// stream-bench ---------------------------------------------------------------

inline std::string format_stream_report(const StreamReport& r) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(3);
  s << "cycles_replayed = " << r.cycles_replayed << "\ncycles_processed = " << r.cycles_processed
    << "\ndropped = " << (r.cycles_replayed - r.cycles_processed) << "\nestimates = " << r.estimates_kpa.size()
    << "\nexpected_estimates = " << r.expected_estimates << "\nlatency_p50_ms = " << r.p50_ms
    << "\nlatency_p90_ms = " << r.p90_ms << "\nlatency_p99_ms = " << r.p99_ms << "\nlatency_max_ms = " << r.max_ms
    << "\nestimates_per_s = " << r.estimates_per_s << "\nwall_s = " << r.wall_s
    << "\nbackpressure_events = " << r.backpressure_events << "\nbackpressure_s = " << r.backpressure_s
    << "\nmax_queue_depth = " << r.max_queue_depth << '\n';
  return s.str();
}

inline int cmd_stream_bench(const CommandContext& ctx) {
  const auto& cfg = ctx.cfg;
  if (cfg.model.kind == nn::InputKind::st_map) throw ConfigError("stream-bench needs a sequence model (seq2dt or seq3dt)");
  const auto entries = load_entries(ctx, mode_for(cfg.model.kind));
  const auto rec_path = recordings_dir(ctx) / entries.front().file;
  const auto ckpt = fold_dir(ctx) / "best.ocek";
  cmd_detail::require_files({ckpt}, "checkpoint (run train first)");
  auto loaded = nn::load_checkpoint<float>(ckpt);
  if (loaded.model->spec().kind != cfg.model.kind)
    throw DataError("checkpoint/model mismatch: checkpoint holds " + nn::to_string(loaded.model->spec().kind));
  const auto rec = load_or_regenerate(ctx, entries.front());
  StreamOptions opt{cfg.train.temporal_crop, cfg.inference_stride, cfg.stream.queue_capacity, cfg.stream.replay_speed,
                    cfg.preproc, cfg.net_input};
  const auto report = stream_bench(rec, *loaded.model, opt);
  const auto text = "recording = " + rec_path.string() + "\n" + format_stream_report(report);
  cmd_detail::write_text(ctx.root / "stream_bench.txt", text);
  *ctx.log << text;
  return exit_code::kSuccess;
}

}  // namespace oce
