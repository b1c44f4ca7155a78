#pragma once

// Elasticity maps on the scan-position lattice, MAE tables, DICE scores, LAD
// recalibration of the conventional estimator and report files.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "oce/error.hpp"
#include "oce/geometry.hpp"
#include "oce/spectral.hpp"
#include "oce/wavefield.hpp"

namespace oce {

// Cell (r, c) is centred at origin + (c * cell_mm, r * cell_mm).
struct GridSpec {
  int rows = 7;
  int cols = 10;
  double cell_mm = 5.0;
  Vec2 origin_mm;

  void validate() const {
    if (rows < 1 || cols < 1) throw DomainError("grid: empty grid");
    if (!(cell_mm > 0.0)) throw DomainError("grid: cell size must be > 0");
  }
  int cells() const { return rows * cols; }
  Vec2 center(int r, int c) const { return origin_mm + Vec2{c * cell_mm, r * cell_mm}; }
  std::vector<Vec2> positions() const {
    std::vector<Vec2> out;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out.push_back(center(r, c));
    return out;
  }
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct PositionEstimate {
  Vec2 position_mm;
  double E_kpa = 0.0;
  bool failed = true;
};

// Failed (or never estimated) cells hold no value.
struct ElasticityMap {
  GridSpec grid;
  Vec2 source_xy_mm;
  std::string method;
  std::vector<std::optional<double>> cells;

  const std::optional<double>& at(int r, int c) const { return cells[static_cast<std::size_t>(r) * grid.cols + c]; }
  std::optional<double>& at(int r, int c) { return cells[static_cast<std::size_t>(r) * grid.cols + c]; }
  bool failed(int r, int c) const { return !at(r, c).has_value(); }
};

struct GroundTruthMap {
  GridSpec grid;
  std::vector<double> E_kpa;
  std::vector<char> inclusion_mask;
};

namespace detail {

// Lattice index of a coordinate, or nullopt when it is off-lattice.
inline std::optional<long> lattice_index(double offset, double cell) {
  const double u = offset / cell;
  const double n = std::round(u);
  if (std::abs(u - n) > 1e-6) return std::nullopt;
  return static_cast<long>(n);
}

}  // namespace detail

inline ElasticityMap assemble_map(const std::vector<PositionEstimate>& estimates, const GridSpec& grid,
                                  const std::string& method = "", Vec2 source = {}) {
  grid.validate();
  ElasticityMap map{grid, source, method, std::vector<std::optional<double>>(grid.cells())};
  std::vector<double> sum(grid.cells(), 0.0);
  std::vector<int> count(grid.cells(), 0);
  for (const auto& e : estimates) {
    const auto c = detail::lattice_index(e.position_mm.x - grid.origin_mm.x, grid.cell_mm);
    const auto r = detail::lattice_index(e.position_mm.y - grid.origin_mm.y, grid.cell_mm);
    if (!c || !r || *r < 0 || *c < 0 || *r >= grid.rows || *c >= grid.cols) {
      std::ostringstream msg;
      msg << "position (" << e.position_mm.x << ", " << e.position_mm.y << ") mm is not on the " << grid.rows << " x "
          << grid.cols << " lattice with " << grid.cell_mm << " mm cells";
      throw DataError(msg.str());
    }
    const std::size_t i = static_cast<std::size_t>(*r) * grid.cols + *c;
    if (!e.failed && std::isfinite(e.E_kpa)) {
      sum[i] += e.E_kpa;
      ++count[i];
    }
  }
  for (int i = 0; i < grid.cells(); ++i)
    if (count[i] > 0) map.cells[i] = sum[i] / count[i];
  return map;
}

// Grid inferred from the estimates: the origin is the lowest lattice point used.
inline ElasticityMap assemble_map(const std::vector<PositionEstimate>& estimates, double cell_mm, Vec2 origin,
                                  const std::string& method = "", Vec2 source = {}) {
  if (estimates.empty()) throw DataError("assemble_map: no estimates");
  if (!(cell_mm > 0.0)) throw DomainError("grid: cell size must be > 0");
  long max_r = 0, max_c = 0;
  for (const auto& e : estimates) {
    const auto c = detail::lattice_index(e.position_mm.x - origin.x, cell_mm);
    const auto r = detail::lattice_index(e.position_mm.y - origin.y, cell_mm);
    if (c && r) {
      max_r = std::max(max_r, *r);
      max_c = std::max(max_c, *c);
    }
  }
  return assemble_map(estimates, GridSpec{static_cast<int>(max_r) + 1, static_cast<int>(max_c) + 1, cell_mm, origin},
                      method, source);
}

inline GroundTruthMap ground_truth(const GridSpec& grid, const MediumSpec& medium) {
  grid.validate();
  GroundTruthMap t{grid, {}, {}};
  for (const Vec2& p : grid.positions()) {
    t.E_kpa.push_back(medium.E_at(p));
    bool inside = false;
    for (const auto& inc : medium.inclusions) inside |= distance(p, inc.center_mm) <= inc.radius_mm;
    t.inclusion_mask.push_back(inside);
  }
  return t;
}

inline void check_geometry(const ElasticityMap& map, const GroundTruthMap& truth) {
  if (!(map.grid == truth.grid))
    throw DataError("geometry mismatch: map grid " + std::to_string(map.grid.rows) + " x " +
                    std::to_string(map.grid.cols) + " differs from ground truth " + std::to_string(truth.grid.rows) +
                    " x " + std::to_string(truth.grid.cols) + " (or cell size / origin)");
}

struct MaeRow {
  std::string label;  // class name or "all"
  int cells = 0;
  int valid = 0;
  std::optional<double> mae_kpa;  // undefined when no cell is valid
  std::optional<double> std_kpa;
  double failure_rate = 0.0;
};

struct LabelledMap {
  const ElasticityMap* map = nullptr;
  const GroundTruthMap* truth = nullptr;
  std::string class_label;
};

// Per-class and overall MAE over non-failed cells; std is the spread of the absolute errors.
inline std::vector<MaeRow> mae_table(const std::vector<LabelledMap>& maps) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> errors;
  std::map<std::string, int> cells;
  for (const auto& m : maps) {
    check_geometry(*m.map, *m.truth);
    if (!cells.count(m.class_label)) order.push_back(m.class_label);
    auto& errs = errors[m.class_label];
    cells[m.class_label] += m.map->grid.cells();
    for (std::size_t i = 0; i < m.map->cells.size(); ++i)
      if (m.map->cells[i]) errs.push_back(std::abs(*m.map->cells[i] - m.truth->E_kpa[i]));
  }
  auto row = [](const std::string& label, const std::vector<double>& errs, int n) {
    MaeRow r{label, n, static_cast<int>(errs.size()), std::nullopt, std::nullopt, 0.0};
    r.failure_rate = n > 0 ? 1.0 - static_cast<double>(errs.size()) / n : 0.0;
    if (!errs.empty()) {
      double s = 0.0;
      for (double e : errs) s += e;
      const double mean = s / errs.size();
      double v = 0.0;
      for (double e : errs) v += (e - mean) * (e - mean);
      r.mae_kpa = mean;
      r.std_kpa = std::sqrt(v / errs.size());
    }
    return r;
  };
  std::vector<MaeRow> out;
  std::vector<double> all;
  int total = 0;
  for (const auto& label : order) {
    out.push_back(row(label, errors[label], cells[label]));
    all.insert(all.end(), errors[label].begin(), errors[label].end());
    total += cells[label];
  }
  out.push_back(row("all", all, total));
  return out;
}

struct DiceScore {
  double dice = 1.0;
  std::optional<double> precision;  // undefined when nothing is predicted positive
};

// Predicted positives are non-failed cells with E > threshold.
inline std::vector<char> binarize(const ElasticityMap& map, double threshold) {
  std::vector<char> m(map.cells.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = map.cells[i] && *map.cells[i] > threshold;
  return m;
}

inline DiceScore dice(const std::vector<char>& pred, const std::vector<char>& truth) {
  if (pred.size() != truth.size()) throw DataError("dice: mask sizes differ");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    a += pred[i] != 0;
    b += truth[i] != 0;
    both += pred[i] && truth[i];
  }
  DiceScore s;
  if (a + b == 0) {
    s.dice = 1.0;
    s.precision = 1.0;
    return s;
  }
  s.dice = 2.0 * both / static_cast<double>(a + b);
  if (a > 0) s.precision = static_cast<double>(both) / a;
  return s;
}

inline DiceScore dice(const ElasticityMap& pred, const GroundTruthMap& truth, double threshold) {
  check_geometry(pred, truth);
  return dice(binarize(pred, threshold), truth.inclusion_mask);
}

// Midpoint between background and the (first) inclusion modulus.
inline double default_dice_threshold(const MediumSpec& medium) {
  if (medium.inclusions.empty()) throw DataError("dice: the medium has no inclusion");
  return 0.5 * (medium.background_E_kpa + medium.inclusions.front().E_kpa);
}

// Least-absolute-deviation fit E = k v + q. For a fixed slope the best intercept is
// the median residual and the remaining objective is convex in k with its minimum at
// a slope through two data points, so a binary search over pairwise slopes is exact.
inline Calibration refit_calibration(const std::vector<double>& v, const std::vector<double>& E) {
  if (v.size() != E.size()) throw DataError("refit_calibration: velocity and modulus counts differ");
  if (v.size() < 2) throw DataError("refit_calibration: need at least 2 points");
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]) || !std::isfinite(E[i])) throw DataError("refit_calibration: non-finite input");
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*lo == *hi) throw DataError("refit_calibration: degenerate input, all velocities are equal");

  const std::size_t n = v.size();
  std::vector<double> slopes;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (v[i] != v[j]) slopes.push_back((E[j] - E[i]) / (v[j] - v[i]));
  std::sort(slopes.begin(), slopes.end());
  slopes.erase(std::unique(slopes.begin(), slopes.end()), slopes.end());

  std::vector<double> r(n);
  auto intercept = [&](double k) {
    for (std::size_t i = 0; i < n; ++i) r[i] = E[i] - k * v[i];
    std::sort(r.begin(), r.end());
    return n % 2 ? r[n / 2] : 0.5 * (r[n / 2 - 1] + r[n / 2]);
  };
  auto cost = [&](double k) {
    const double q = intercept(k);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(E[i] - k * v[i] - q);
    return s;
  };
  std::size_t a = 0, b = slopes.size() - 1;
  while (a < b) {
    const std::size_t m = a + (b - a) / 2;
    if (cost(slopes[m]) <= cost(slopes[m + 1])) b = m;
    else a = m + 1;
  }
  Calibration cal;
  cal.slope = slopes[a];
  cal.intercept = intercept(cal.slope);
  return cal;
}

// Report files -------------------------------------------------------------

struct Rgb {
  unsigned char r = 0, g = 0, b = 0;
  friend bool operator==(Rgb, Rgb) = default;
};

inline constexpr Rgb kFailedColor{128, 128, 128};

// Fixed ramp from dark blue through teal and green to yellow. No entry is neutral
// gray, so failed cells stay distinguishable.
inline Rgb color_ramp(double E, double lo, double hi) {
  static constexpr Rgb stops[] = {{20, 20, 110}, {30, 110, 160}, {40, 170, 110}, {170, 210, 50}, {250, 230, 30}};
  double u = hi > lo ? (E - lo) / (hi - lo) : 0.5;
  u = std::clamp(u, 0.0, 1.0) * 4.0;
  const int i = std::min(static_cast<int>(u), 3);
  const double f = u - i;
  auto mix = [&](unsigned char a, unsigned char b) { return static_cast<unsigned char>(std::lround(a + f * (b - a))); };
  return {mix(stops[i].r, stops[i + 1].r), mix(stops[i].g, stops[i + 1].g), mix(stops[i].b, stops[i + 1].b)};
}

struct RenderOptions {
  int cell_pixels = 16;
  double E_min_kpa = 0.0;
  double E_max_kpa = 80.0;
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;
  Rgb at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

inline Image render_map(const ElasticityMap& map, const RenderOptions& opt = {}) {
  if (opt.cell_pixels < 1) throw DomainError("render: cell_pixels must be >= 1");
  Image img{map.grid.cols * opt.cell_pixels, map.grid.rows * opt.cell_pixels, {}};
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto& v = map.at(y / opt.cell_pixels, x / opt.cell_pixels);
      img.pixels[static_cast<std::size_t>(y) * img.width + x] =
          v ? color_ramp(*v, opt.E_min_kpa, opt.E_max_kpa) : kFailedColor;
    }
  return img;
}

inline void write_ppm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (const auto& p : img.pixels) out.put(static_cast<char>(p.r)).put(static_cast<char>(p.g)).put(static_cast<char>(p.b));
  if (!out) throw DataError("failed writing " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int maxval = 0;
  Image img;
  if (!(in >> magic >> img.width >> img.height >> maxval) || magic != "P6" || maxval != 255)
    throw ParseError(path.string() + ": not a binary 8-bit PPM");
  in.get();
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  for (auto& p : img.pixels) {
    char c[3];
    if (!in.read(c, 3)) throw ParseError(path.string() + ": truncated PPM");
    p = {static_cast<unsigned char>(c[0]), static_cast<unsigned char>(c[1]), static_cast<unsigned char>(c[2])};
  }
  return img;
}

// Binary mask as 8-bit graymap: 255 positive, 0 negative.
inline void write_pgm(const std::vector<char>& mask, int rows, int cols, int cell_pixels,
                      const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << cols * cell_pixels << " " << rows * cell_pixels << "\n255\n";
  for (int y = 0; y < rows * cell_pixels; ++y)
    for (int x = 0; x < cols * cell_pixels; ++x)
      out.put(mask[static_cast<std::size_t>(y / cell_pixels) * cols + x / cell_pixels] ? static_cast<char>(255) : 0);
  if (!out) throw DataError("failed writing " + path.string());
}

inline std::string format_optional(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream s;
  s.precision(6);
  s << *v;
  return s.str();
}

struct NamedMap {
  std::string name;  // file stem
  ElasticityMap map;
  std::optional<double> binarize_threshold;  // also writes <name>_mask.pgm
};

struct NamedTable {
  std::string name;
  std::vector<MaeRow> rows;
};

struct Manifest {
  std::vector<std::pair<std::string, std::string>> entries;  // inputs, seeds, config hashes
};

// Writes <name>.csv and <name>.ppm per map, <name>.csv per table and manifest.txt
// listing every written file after the caller-provided entries.
inline std::vector<std::filesystem::path> emit_report(const std::vector<NamedMap>& maps,
                                                      const std::vector<NamedTable>& tables,
                                                      const std::filesystem::path& out_dir,
                                                      const Manifest& manifest = {}, const RenderOptions& opt = {}) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) throw DataError("cannot create output directory " + out_dir.string());
  std::vector<std::filesystem::path> written;
  auto open = [&](const std::string& file) {
    const auto path = out_dir / file;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    written.push_back(path);
    return out;
  };

  for (const auto& m : maps) {
    auto csv = open(m.name + ".csv");
    csv << "row,col,x_mm,y_mm,E_kpa,failed\n";
    for (int r = 0; r < m.map.grid.rows; ++r)
      for (int c = 0; c < m.map.grid.cols; ++c) {
        const Vec2 p = m.map.grid.center(r, c);
        const auto& v = m.map.at(r, c);
        csv << r << ',' << c << ',' << p.x << ',' << p.y << ',' << (v ? format_optional(v) : "") << ','
            << (v ? 0 : 1) << '\n';
      }
    write_ppm(render_map(m.map, opt), out_dir / (m.name + ".ppm"));
    written.push_back(out_dir / (m.name + ".ppm"));
    if (m.binarize_threshold) {
      write_pgm(binarize(m.map, *m.binarize_threshold), m.map.grid.rows, m.map.grid.cols, opt.cell_pixels,
                out_dir / (m.name + "_mask.pgm"));
      written.push_back(out_dir / (m.name + "_mask.pgm"));
    }
  }
  for (const auto& t : tables) {
    auto csv = open(t.name + ".csv");
    csv << "class,cells,valid,mae_kpa,std_kpa,failure_rate\n";
    for (const auto& r : t.rows)
      csv << r.label << ',' << r.cells << ',' << r.valid << ',' << format_optional(r.mae_kpa) << ','
          << format_optional(r.std_kpa) << ',' << r.failure_rate << '\n';
  }

  const auto path = out_dir / "manifest.txt";
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [k, v] : manifest.entries) out << k << " = " << v << '\n';
  for (const auto& f : written) out << "file = " << f.filename().string() << '\n';
  if (!out) throw DataError("failed writing " + path.string());
  written.push_back(path);
  return written;
}

}  // namespace oce
