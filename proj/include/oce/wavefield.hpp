#pragma once

// Analytic forward model of the excited surface wave field.
//
// A point source on the phantom surface is driven by a periodic linear chirp. The
// wave travels along straight rays through a laterally heterogeneous speed map,
// spreads cylindrically, is attenuated exponentially and penetrates into the depth
// with a wavelength-proportional envelope.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "oce/error.hpp"
#include "oce/geometry.hpp"

namespace oce {

// Displacement amplitudes are clamped at this radius around each source (mm).
inline constexpr double kSourceClampRadiusMm = 0.2;

struct Inclusion {
  Vec2 center_mm;
  double radius_mm = 1.0;
  double E_kpa = 24.0;
};

// Straight phantom edge that reflects the wave; modelled by a mirror source.
struct ReflectingBoundary {
  Vec2 point_mm;
  Vec2 normal;  // need not be normalised
  double reflection = 0.5;
};

struct MediumSpec {
  double background_E_kpa = 12.0;
  double density = 1000.0;  // kg/m^3
  std::vector<Inclusion> inclusions;
  double attenuation_per_mm = 0.0;
  double depth_penetration_scale = 1.0;
  std::vector<ReflectingBoundary> boundaries;  // empty: no mirror sources

  void validate() const {
    if (!(background_E_kpa > 0.0)) throw DomainError("medium: background E must be > 0");
    if (!(density > 0.0)) throw DomainError("medium: density must be > 0");
    if (!(attenuation_per_mm >= 0.0)) throw DomainError("medium: attenuation must be >= 0");
    if (!(depth_penetration_scale > 0.0))
      throw DomainError("medium: depth penetration scale must be > 0");
    for (std::size_t i = 0; i < inclusions.size(); ++i) {
      const auto& inc = inclusions[i];
      if (!(inc.E_kpa > 0.0)) throw DomainError("medium: inclusion E must be > 0");
      if (!(inc.radius_mm > 0.1)) throw DomainError("medium: inclusion radius must exceed 0.1 mm");
      for (std::size_t j = 0; j < i; ++j) {
        const auto& other = inclusions[j];
        if (distance(inc.center_mm, other.center_mm) < inc.radius_mm + other.radius_mm)
          throw DomainError("medium: inclusions must not overlap");
      }
    }
    for (const auto& b : boundaries) {
      if (b.normal.norm() == 0.0) throw DomainError("medium: boundary normal is zero");
    }
  }

  // Young's modulus at a surface position (inclusions have constant stiffness).
  double E_at(Vec2 p) const {
    for (const auto& inc : inclusions) {
      if (distance(p, inc.center_mm) <= inc.radius_mm) return inc.E_kpa;
    }
    return background_E_kpa;
  }
};

struct ExcitationSpec {
  Vec2 source_xy_mm;
  double f_start_hz = 100.0;
  double f_end_hz = 900.0;
  double sweep_time_s = 0.1;
  double amplitude_um = 0.1;
  double phase0_rad = 0.0;

  void validate() const {
    if (!(f_start_hz > 0.0 && f_start_hz <= f_end_hz))
      throw DomainError("excitation: need 0 < f_start <= f_end");
    if (!(sweep_time_s > 0.0)) throw DomainError("excitation: sweep time must be > 0");
    if (!(amplitude_um > 0.0)) throw DomainError("excitation: amplitude must be > 0");
  }
};

// Shear wave speed of an incompressible solid, E = 3 rho c^2, with E in kPa.
inline double shear_speed_from_E(double E_kpa, double density) {
  if (!(E_kpa > 0.0) || !(density > 0.0))
    throw DomainError("shear_speed_from_E: modulus and density must be positive");
  return std::sqrt(1000.0 * E_kpa / (3.0 * density));
}

inline double speed_at(Vec2 p, const MediumSpec& medium) {
  return shear_speed_from_E(medium.E_at(p), medium.density);
}

// Instantaneous drive frequency; the sweep restarts every sweep_time.
inline double sweep_frequency(double t, const ExcitationSpec& exc) {
  const double tau = t - std::floor(t / exc.sweep_time_s) * exc.sweep_time_s;
  return exc.f_start_hz + (exc.f_end_hz - exc.f_start_hz) * tau / exc.sweep_time_s;
}

// Accumulated phase of the periodic chirp. Each full period contributes
// 2*pi*(f_start + f_end)/2 * sweep_time, so the phase is continuous at restarts.
inline double sweep_phase(double t, const ExcitationSpec& exc) {
  const double T = exc.sweep_time_s;
  const double periods = std::floor(t / T);
  const double tau = t - periods * T;
  const double slope = (exc.f_end_hz - exc.f_start_hz) / T;
  const double per_period = kTwoPi * 0.5 * (exc.f_start_hz + exc.f_end_hz) * T;
  return exc.phase0_rad + periods * per_period +
         kTwoPi * (exc.f_start_hz * tau + 0.5 * slope * tau * tau);
}

// Length of the part of segment a->b that lies inside the circle (mm).
inline double chord_length(Vec2 a, Vec2 b, Vec2 center, double radius) {
  const Vec2 d = b - a;
  const Vec2 f = a - center;
  const double A = d.dot(d);
  const double B = 2.0 * f.dot(d);
  const double C = f.dot(f) - radius * radius;
  const double disc = B * B - 4.0 * A * C;
  if (disc <= 0.0) return 0.0;
  const double sq = std::sqrt(disc);
  const double t0 = std::max(0.0, (-B - sq) / (2.0 * A));
  const double t1 = std::min(1.0, (-B + sq) / (2.0 * A));
  return t1 > t0 ? (t1 - t0) * std::sqrt(A) : 0.0;
}

// Straight-ray travel time (s): exact line integral of 1/c over the segment.
inline double travel_time(Vec2 source, Vec2 point, const MediumSpec& medium) {
  const double length = distance(source, point);
  if (length == 0.0) throw DomainError("travel_time: zero-length ray");
  double outside = length;
  double slowness_mm = 0.0;  // accumulated mm / (m/s)
  for (const auto& inc : medium.inclusions) {
    const double chord = chord_length(source, point, inc.center_mm, inc.radius_mm);
    if (chord > 0.0) {
      outside -= chord;
      slowness_mm += chord / shear_speed_from_E(inc.E_kpa, medium.density);
    }
  }
  outside = std::max(outside, 0.0);
  slowness_mm += outside / shear_speed_from_E(medium.background_E_kpa, medium.density);
  return slowness_mm * 1e-3;
}

// Mirror image of a point across a reflecting boundary line.
inline Vec2 mirror_across(Vec2 p, const ReflectingBoundary& b) {
  const Vec2 n = (1.0 / b.normal.norm()) * b.normal;
  const double side = (p - b.point_mm).dot(n);
  return p - (2.0 * side) * n;
}

// One source's contribution at a surface point: u_z(z) = surface_um * exp(-decay_per_mm * z).
struct WaveComponent {
  double surface_um = 0.0;
  double decay_per_mm = 0.0;
};

// Evaluates every source (primary plus mirrors) at a surface position. Sources whose
// wave has not arrived yet contribute nothing. `out` is cleared first.
inline void surface_components(Vec2 p, double t, const MediumSpec& medium,
                               const ExcitationSpec& exc, std::vector<WaveComponent>& out) {
  out.clear();
  const double c_local_mm = speed_at(p, medium) * 1000.0;  // mm/s

  auto add_source = [&](Vec2 src, double weight) {
    const double r = distance(src, p);
    const double tau = r > 0.0 ? travel_time(src, p, medium) : 0.0;
    const double t_ret = t - tau;
    if (t_ret < 0.0) return;
    const double spread = std::sqrt(kSourceClampRadiusMm / std::max(r, kSourceClampRadiusMm));
    const double damp = std::exp(-medium.attenuation_per_mm * r);
    const double f = sweep_frequency(t_ret, exc);
    const double wavelength_mm = c_local_mm / f;
    out.push_back({weight * exc.amplitude_um * spread * damp * std::sin(sweep_phase(t_ret, exc)),
                   kTwoPi / (wavelength_mm * medium.depth_penetration_scale)});
  };

  add_source(exc.source_xy_mm, 1.0);
  for (const auto& b : medium.boundaries) add_source(mirror_across(exc.source_xy_mm, b), b.reflection);
}

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;  // depth below the surface, mm
};

// Axial displacement (um) at a point below the surface.
inline double displacement(Point3 point, double t, const MediumSpec& medium,
                           const ExcitationSpec& exc) {
  if (point.z < 0.0) throw DomainError("displacement: point above the surface");
  std::vector<WaveComponent> comps;
  surface_components({point.x, point.y}, t, medium, exc, comps);
  double u = 0.0;
  for (const auto& c : comps) u += c.surface_um * std::exp(-c.decay_per_mm * point.z);
  return u;
}

}  // namespace oce
