#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sarheight/common.hpp"
#include "sarheight/geometry.hpp"
#include "sarheight/raster.hpp"
#include "sarheight/rng.hpp"

namespace testutil {

using sarheight::Vec2;

// ---------------------------------------------------------------------------
// Independent oracles (no shared code with the implementations under test)
// ---------------------------------------------------------------------------

/// O(n^3) convex hull oracle: a point pair (p, q) is a hull edge iff every
/// other point lies on or left of the directed line p->q. Returns the set of
/// hull vertices (unordered).
inline std::vector<Vec2> brute_hull_vertices(const std::vector<Vec2>& pts) {
  std::vector<Vec2> verts;
  auto seen = [&](const Vec2& v) {
    for (const Vec2& u : verts) {
      if (u.x == v.x && u.y == v.y) return true;
    }
    return false;
  };
  for (size_t i = 0; i < pts.size(); ++i) {
    for (size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      bool all_left = true;
      for (size_t k = 0; k < pts.size() && all_left; ++k) {
        if (k == i || k == j) continue;
        double cross = (pts[j] - pts[i]).cross(pts[k] - pts[i]);
        if (cross < 0.0) all_left = false;
      }
      if (all_left) {
        if (!seen(pts[i])) verts.push_back(pts[i]);
        if (!seen(pts[j])) verts.push_back(pts[j]);
      }
    }
  }
  return verts;
}

/// Axis-sweep minimum-area rectangle oracle: tries every axis azimuth on a
/// fixed grid and reports the smallest projected-extent box area.
inline double sweep_min_rect_area(const std::vector<Vec2>& pts, double step_deg = 0.1) {
  double best = std::numeric_limits<double>::infinity();
  for (double az = 0.0; az < 90.0; az += step_deg) {
    Vec2 u = sarheight::azimuth_dir(az);
    Vec2 v = sarheight::azimuth_dir(az + 90.0);
    double min_u = 1e300, max_u = -1e300, min_v = 1e300, max_v = -1e300;
    for (const Vec2& p : pts) {
      min_u = std::min(min_u, p.dot(u));
      max_u = std::max(max_u, p.dot(u));
      min_v = std::min(min_v, p.dot(v));
      max_v = std::max(max_v, p.dot(v));
    }
    best = std::min(best, (max_u - min_u) * (max_v - min_v));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Random fixtures
// ---------------------------------------------------------------------------

/// Random convex polygon with at least 3 vertices (hull of random disc
/// points), centered near `center` with radius ~ `radius`.
inline std::vector<Vec2> random_convex_polygon(sarheight::Rng& rng, Vec2 center = {0, 0},
                                               double radius = 10.0, int n_points = 12) {
  for (;;) {
    std::vector<Vec2> pts;
    for (int i = 0; i < n_points; ++i) {
      double ang = rng.uniform(0.0, 2.0 * sarheight::kPi);
      double r = radius * std::sqrt(rng.next_double());
      pts.push_back({center.x + r * std::cos(ang), center.y + r * std::sin(ang)});
    }
    std::vector<Vec2> hull = sarheight::convex_hull(pts);
    if (hull.size() >= 3) return hull;
  }
}

/// Axis-aligned rectangle ring.
inline std::vector<Vec2> rect_ring(double x0, double y0, double w, double h) {
  return {{x0, y0}, {x0 + w, y0}, {x0 + w, y0 + h}, {x0, y0 + h}};
}

/// Compass-clockwise rotation by delta degrees about the origin.
inline Vec2 rotate_compass(const Vec2& p, double delta_deg) {
  double d = sarheight::deg2rad(delta_deg);
  return {p.x * std::cos(d) + p.y * std::sin(d), -p.x * std::sin(d) + p.y * std::cos(d)};
}

// ---------------------------------------------------------------------------
// Rendered-scene measurement (the geometric extent estimator used by the
// simulator checks): extent of bright (roof or layover) pixels along the
// range direction.
// ---------------------------------------------------------------------------

struct ExtentMeasure {
  double extent_m = 0.0;
  int pixel_count = 0;
};

/// Measures the range-direction extent of pixels classified bright by
/// `is_bright`, restricted to a window around the expected building region.
template <typename BrightFn>
inline ExtentMeasure measure_bright_extent(const sarheight::Raster& amp, const Vec2& region_min,
                                           const Vec2& region_max, double range_az_deg,
                                           BrightFn is_bright) {
  Vec2 r_hat = sarheight::azimuth_dir(range_az_deg);
  double lo = 1e300, hi = -1e300;
  int count = 0;
  for (int r = 0; r < amp.height_px; ++r) {
    for (int c = 0; c < amp.width_px; ++c) {
      Vec2 p = amp.pixel_center(r, c);
      if (p.x < region_min.x || p.x > region_max.x || p.y < region_min.y || p.y > region_max.y) {
        continue;
      }
      if (!is_bright(amp.at(r, c))) continue;
      double proj = p.dot(r_hat);
      lo = std::min(lo, proj);
      hi = std::max(hi, proj);
      ++count;
    }
  }
  ExtentMeasure m;
  m.pixel_count = count;
  m.extent_m = count > 0 ? (hi - lo) + amp.pixel_size_m : 0.0;
  return m;
}

/// Geometry whose range azimuth comes out to exactly `range_az_deg`
/// (right-looking, heading override = range azimuth - 90).
inline sarheight::AcquisitionGeometry geom_with_range_az(double incidence_deg,
                                                         double range_az_deg) {
  return sarheight::AcquisitionGeometry(incidence_deg, 97.86,
                                        sarheight::OrbitPass::descending,
                                        sarheight::LookSide::right, 0.0,
                                        sarheight::wrap_azimuth(range_az_deg - 90.0));
}

/// Unique scratch directory under the system temp dir; caller removes it.
inline std::filesystem::path make_temp_dir(const std::string& tag) {
  auto base = std::filesystem::temp_directory_path();
  static std::mt19937_64 rng{std::random_device{}()};
  for (;;) {
    auto p = base / ("sarheight_" + tag + "_" + std::to_string(rng()));
    if (std::filesystem::create_directories(p)) return p;
  }
}

}  // namespace testutil
