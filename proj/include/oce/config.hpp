#pragma once

// Experiment configuration: line-oriented "key = value" text with dotted section
// prefixes. '#' starts a comment. Unknown and repeated keys are rejected.
//
// Lists use ',' between numbers and ';' between records, e.g.
//   medium.inclusions = 20, 0, 3, 24; 30, 5, 2, 6   (x mm, y mm, radius mm, E kPa)

#include <charconv>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "oce/error.hpp"
#include "oce/evalmap.hpp"
#include "oce/nn/densenet.hpp"
#include "oce/nn/train.hpp"
#include "oce/preproc.hpp"
#include "oce/seed.hpp"
#include "oce/probe.hpp"
#include "oce/spectral.hpp"
#include "oce/wavefield.hpp"

namespace oce {

// Several phantoms per stiffness class; an empty class list means one phantom with
// the medium as configured.
struct DatasetConfig {
  std::vector<double> classes_kpa;
  int phantoms_per_class = 1;
  double phantom_E_jitter = 0.0;  // relative std of each phantom's modulus around its class
  bool keep_recordings = true;     // false: simulate preprocesses in place and stores derived files only
};

// Resampled network input size (depth x lateral); time is kept.
struct NetInputConfig {
  int depth = 64;
  int lateral = 128;
};

struct FoldConfig {
  int outer = 5;
  int inner = 4;
  int fold = 0;        // outer fold to run
  int inner_split = 0;  // inner split used for model selection
};

struct StreamConfig {
  int queue_capacity = 64;   // scan cycles buffered between replay and estimation
  double replay_speed = 1.0;  // multiple of the real line rate; 0 replays as fast as possible
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  double duration_s = 0.10689;
  std::string output_dir = "out";
  MediumSpec medium;
  ExcitationSpec excitation{.source_xy_mm = {-10.0, 0.0}};
  ScanConfig scan;
  NoiseSpec noise;
  GridSpec grid{7, 10, 5.0, {0.0, -15.0}};
  DatasetConfig dataset;
  PreprocOptions preproc;
  bool keep_sequences = false;  // also store full-size phase sequences
  NetInputConfig net_input;
  SpectralOptions spectral;
  BandOptions band;
  Calibration calibration;
  nn::ModelSpec model;
  nn::TrainConfig train{.epochs = 200, .batch = 14, .lr = 1e-5, .temporal_crop = 64, .seed = 0};
  int inference_stride = 8;
  FoldConfig folds;
  StreamConfig stream;

  // Re-raises sub-config violations as configuration errors.
  void validate() const {
    try {
      medium.validate();
      excitation.validate();
      scan.validate();
      noise.validate();
      model.validate();
      train.validate();
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    if (!(duration_s > 0.0)) throw ConfigError("duration_s must be > 0");
    if (grid.rows < 0 || grid.cols < 0) throw ConfigError("grid: rows and cols must be >= 0");
    if (!(grid.cell_mm > 0.0)) throw ConfigError("grid: cell size must be > 0");
    if (dataset.phantoms_per_class < 1) throw ConfigError("dataset: phantoms_per_class must be >= 1");
    for (double e : dataset.classes_kpa)
      if (!(e > 0.0)) throw ConfigError("dataset: class moduli must be > 0");
    if (!(dataset.phantom_E_jitter >= 0.0 && dataset.phantom_E_jitter < 0.5))
      throw ConfigError("dataset: phantom_E_jitter must lie in [0, 0.5)");
    if (net_input.depth < 1 || net_input.lateral < 1) throw ConfigError("net_input: sizes must be >= 1");
    if (preproc.crop_depth < 1) throw ConfigError("preproc: crop_depth must be >= 1");
    if (spectral.k_padding < 1 || spectral.f_padding < 1) throw ConfigError("spectral: padding must be >= 1");
    if (inference_stride < 1) throw ConfigError("inference_stride must be >= 1");
    if (folds.outer < 2 || folds.inner < 1) throw ConfigError("folds: need outer >= 2 and inner >= 1");
    if (folds.fold < 0 || folds.fold >= folds.outer) throw ConfigError("folds: fold index out of range");
    if (folds.inner_split < 0 || folds.inner_split >= folds.inner)
      throw ConfigError("folds: inner_split index out of range");
    if (stream.queue_capacity < 1) throw ConfigError("stream: queue_capacity must be >= 1");
    if (!(stream.replay_speed >= 0.0)) throw ConfigError("stream: replay_speed must be >= 0");
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("key '" + key + "': '" + s + "' is not a number");
  return v;
}

template <class I>
I parse_integer(const std::string& key, const std::string& s) {
  I v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError("key '" + key + "': '" + s + "' is not an integer");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + s + "'");
}

inline std::vector<std::vector<double>> parse_records(const std::string& key, const std::string& s, std::size_t width) {
  std::vector<std::vector<double>> out;
  if (trim(s).empty()) return out;
  std::stringstream records(s);
  std::string rec;
  while (std::getline(records, rec, ';')) {
    std::vector<double> values;
    std::stringstream fields(rec);
    std::string f;
    while (std::getline(fields, f, ',')) values.push_back(parse_double(key, trim(f)));
    if (width > 0 && values.size() != width)
      throw ConfigError("key '" + key + "': each record needs " + std::to_string(width) + " numbers");
    out.push_back(std::move(values));
  }
  return out;
}

inline std::string format_records(const std::vector<std::vector<double>>& recs) {
  std::string out;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    if (i) out += "; ";
    for (std::size_t j = 0; j < recs[i].size(); ++j) {
      if (j) out += ", ";
      out += format_double(recs[i][j]);
    }
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

inline Field real(const std::string& key, double& v) {
  return {key, [&v] { return format_double(v); }, [&v, key](const std::string& s) { v = parse_double(key, s); }};
}
template <class I>
Field integer(const std::string& key, I& v) {
  return {key, [&v] { return std::to_string(v); }, [&v, key](const std::string& s) { v = parse_integer<I>(key, s); }};
}
inline Field boolean(const std::string& key, bool& v) {
  return {key, [&v] { return std::string(v ? "true" : "false"); },
          [&v, key](const std::string& s) { v = parse_bool(key, s); }};
}

inline std::vector<Field> fields(ExperimentConfig& c) {
  std::vector<Field> f;
  f.push_back(integer("seed", c.seed));
  f.push_back({"mode", [&c] { return to_string(c.scan.mode); },
               [&c](const std::string& s) { c.scan.mode = scan_mode_from_string(s); }});
  f.push_back(real("duration_s", c.duration_s));
  f.push_back({"output_dir", [&c] { return c.output_dir; }, [&c](const std::string& s) { c.output_dir = s; }});

  auto& m = c.medium;
  f.push_back(real("medium.background_E_kpa", m.background_E_kpa));
  f.push_back(real("medium.density", m.density));
  f.push_back(real("medium.attenuation_per_mm", m.attenuation_per_mm));
  f.push_back(real("medium.depth_penetration_scale", m.depth_penetration_scale));
  f.push_back({"medium.inclusions",
               [&m] {
                 std::vector<std::vector<double>> r;
                 for (const auto& i : m.inclusions) r.push_back({i.center_mm.x, i.center_mm.y, i.radius_mm, i.E_kpa});
                 return format_records(r);
               },
               [&m](const std::string& s) {
                 m.inclusions.clear();
                 for (const auto& r : parse_records("medium.inclusions", s, 4))
                   m.inclusions.push_back({{r[0], r[1]}, r[2], r[3]});
               }});
  f.push_back({"medium.boundaries",
               [&m] {
                 std::vector<std::vector<double>> r;
                 for (const auto& b : m.boundaries)
                   r.push_back({b.point_mm.x, b.point_mm.y, b.normal.x, b.normal.y, b.reflection});
                 return format_records(r);
               },
               [&m](const std::string& s) {
                 m.boundaries.clear();
                 for (const auto& r : parse_records("medium.boundaries", s, 5))
                   m.boundaries.push_back({{r[0], r[1]}, {r[2], r[3]}, r[4]});
               }});

  auto& e = c.excitation;
  f.push_back(real("excitation.source_x_mm", e.source_xy_mm.x));
  f.push_back(real("excitation.source_y_mm", e.source_xy_mm.y));
  f.push_back(real("excitation.f_start_hz", e.f_start_hz));
  f.push_back(real("excitation.f_end_hz", e.f_end_hz));
  f.push_back(real("excitation.sweep_time_s", e.sweep_time_s));
  f.push_back(real("excitation.amplitude_um", e.amplitude_um));
  f.push_back(real("excitation.phase0_rad", e.phase0_rad));

  auto& s = c.scan;
  f.push_back(real("scan.cycle_freq_hz", s.cycle_freq_hz));
  f.push_back(integer("scan.lines_per_cycle", s.lines_per_cycle));
  f.push_back(real("scan.aperture_mm", s.aperture_mm));
  f.push_back(integer("scan.depth_pixels", s.depth_pixels));
  f.push_back(real("scan.depth_extent_mm", s.depth_extent_mm));
  f.push_back(real("scan.center_wavelength_nm", s.center_wavelength_nm));
  f.push_back(real("scan.refractive_index", s.refractive_index));
  f.push_back(integer("scan.surface_pixel", s.surface_pixel));
  f.push_back(real("scan.speckle_pitch_mm", s.speckle_pitch_mm));
  f.push_back(real("scan.settle_time_s", s.settle_time_s));
  f.push_back(real("scan.ellipticity", s.imperfection.ellipticity));
  f.push_back(real("scan.drift_x_mm_per_s", s.imperfection.drift_mm_per_s.x));
  f.push_back(real("scan.drift_y_mm_per_s", s.imperfection.drift_mm_per_s.y));
  f.push_back(real("scan.jitter_std_mm", s.imperfection.jitter_std_mm));

  auto& n = c.noise;
  f.push_back(boolean("noise.speckle", n.speckle));
  f.push_back(real("noise.phase_noise_floor", n.phase_noise_floor));
  f.push_back(real("noise.intensity_snr_db", n.intensity_snr_db));
  f.push_back(real("noise.depth_decay_per_mm", n.depth_decay_per_mm));

  auto& g = c.grid;
  f.push_back(integer("grid.rows", g.rows));
  f.push_back(integer("grid.cols", g.cols));
  f.push_back(real("grid.cell_mm", g.cell_mm));
  f.push_back(real("grid.origin_x_mm", g.origin_mm.x));
  f.push_back(real("grid.origin_y_mm", g.origin_mm.y));

  auto& d = c.dataset;
  f.push_back({"dataset.classes_kpa",
               [&d] { return format_records(d.classes_kpa.empty() ? std::vector<std::vector<double>>{}
                                                                  : std::vector<std::vector<double>>{d.classes_kpa}); },
               [&d](const std::string& v) {
                 const auto r = parse_records("dataset.classes_kpa", v, 0);
                 if (r.size() > 1) throw ConfigError("key 'dataset.classes_kpa': expected one comma-separated list");
                 d.classes_kpa = r.empty() ? std::vector<double>{} : r[0];
               }});
  f.push_back(integer("dataset.phantoms_per_class", d.phantoms_per_class));
  f.push_back(real("dataset.phantom_E_jitter", d.phantom_E_jitter));
  f.push_back(boolean("dataset.keep_recordings", c.dataset.keep_recordings));

  auto& p = c.preproc;
  f.push_back(integer("preproc.crop_depth", p.crop_depth));
  f.push_back(integer("preproc.turning_cycles", p.turning_cycles));
  f.push_back(integer("preproc.surface_smoothing", p.surface_smoothing));
  f.push_back(real("preproc.surface_threshold_db", p.surface_threshold_db));
  f.push_back(integer("preproc.st_trim", p.st_trim));
  f.push_back(boolean("preproc.keep_sequence", c.keep_sequences));
  f.push_back(integer("net_input.depth", c.net_input.depth));
  f.push_back(integer("net_input.lateral", c.net_input.lateral));

  f.push_back(boolean("spectral.hann", c.spectral.hann));
  f.push_back(integer("spectral.k_padding", c.spectral.k_padding));
  f.push_back(integer("spectral.f_padding", c.spectral.f_padding));
  f.push_back(real("band.center_hz", c.band.band_center_hz));
  f.push_back(real("band.width_hz", c.band.band_width_hz));
  f.push_back(real("band.threshold", c.band.threshold));
  f.push_back(real("band.v_max", c.band.v_max));
  f.push_back(real("band.v_min", c.band.v_min));
  f.push_back(boolean("band.refine_peak", c.band.refine_peak));
  f.push_back(real("calibration.slope", c.calibration.slope));
  f.push_back(real("calibration.intercept", c.calibration.intercept));
  f.push_back(real("calibration.min_E_kpa", c.calibration.min_E_kpa));

  auto& md = c.model;
  f.push_back({"model.kind", [&md] { return nn::to_string(md.kind); },
               [&md](const std::string& v) { md.kind = nn::input_kind_from_string(v); }});
  f.push_back(integer("model.blocks", md.blocks));
  f.push_back(integer("model.layers_per_block", md.layers_per_block));
  f.push_back(integer("model.growth", md.growth));
  f.push_back(integer("model.init_channels", md.init_channels));
  f.push_back(integer("model.kernel", md.kernel));
  f.push_back(boolean("model.check_param_budget", md.check_param_budget));

  auto& t = c.train;
  f.push_back(integer("train.epochs", t.epochs));
  f.push_back(integer("train.batch", t.batch));
  f.push_back(real("train.lr", t.lr));
  f.push_back(integer("train.window", t.temporal_crop));
  f.push_back(integer("inference.stride", c.inference_stride));
  f.push_back(integer("folds.outer", c.folds.outer));
  f.push_back(integer("folds.inner", c.folds.inner));
  f.push_back(integer("folds.fold", c.folds.fold));
  f.push_back(integer("folds.inner_split", c.folds.inner_split));
  f.push_back(integer("stream.queue_capacity", c.stream.queue_capacity));
  f.push_back(real("stream.replay_speed", c.stream.replay_speed));
  return f;
}

}  // namespace config_detail

// Applies "key = value" lines on top of `base`.
inline ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {}) {
  auto fs = config_detail::fields(base);
  std::map<std::string, config_detail::Field*> by_key;
  for (auto& f : fs) by_key[f.key] = &f;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    const auto key = config_detail::trim(line.substr(0, eq));
    const auto value = config_detail::trim(line.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("line " + std::to_string(number) + ": unknown key '" + key + "'");
    if (seen.count(key))
      throw ConfigError("line " + std::to_string(number) + ": key '" + key + "' repeats line " +
                        std::to_string(seen[key]));
    seen[key] = number;
    it->second->set(value);
  }
  return base;
}

inline std::string serialize_config(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  std::string out;
  for (const auto& f : config_detail::fields(copy)) out += f.key + " = " + f.get() + "\n";
  return out;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto cfg = parse_config(buf.str());
  cfg.validate();
  return cfg;
}

// FNV-1a of the canonical serialisation, for manifests.
inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(serialize_config(c))));
  return buf;
}

}  // namespace oce
