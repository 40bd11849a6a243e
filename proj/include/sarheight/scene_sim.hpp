#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sarheight/common.hpp"
#include "sarheight/geometry.hpp"
#include "sarheight/parallel.hpp"
#include "sarheight/raster.hpp"
#include "sarheight/rng.hpp"

namespace sarheight {

struct HeightDistribution {
  enum class Kind { lognormal, uniform };
  Kind kind = Kind::lognormal;
  double a = 2.3;  // mu (lognormal) or lo (uniform)
  double b = 0.6;  // sigma (lognormal) or hi (uniform)

  static HeightDistribution make_lognormal(double mu, double sigma) {
    return {Kind::lognormal, mu, sigma};
  }
  static HeightDistribution make_uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }

  double sample(Rng& rng) const {
    return kind == Kind::lognormal ? rng.lognormal(a, b) : rng.uniform(a, b);
  }

  void validate() const {
    if (kind == Kind::lognormal) {
      if (!(b > 0.0)) throw InvalidInputError("lognormal sigma must be positive");
    } else {
      if (!(a >= 0.0 && b >= a)) throw InvalidInputError("uniform height range must satisfy 0 <= lo <= hi");
    }
  }
};

enum class SpeckleMode { off, single_look };

/// Full description of one synthetic city scene. Identical specs (seed
/// included) yield bit-identical footprints and rasters.
struct SceneSpec {
  uint64_t seed = 0;
  double extent_w_m = 1000.0;
  double extent_h_m = 1000.0;
  double pixel_size_m = 2.5;
  int n_buildings = 0;
  double side_min_m = 10.0;
  double side_max_m = 30.0;
  HeightDistribution height_dist;
  double min_spacing_m = 5.0;
  double background_amp = 1.0;
  double roof_amp = 3.0;
  double layover_amp = 6.0;
  double shadow_amp = 0.05;
  SpeckleMode speckle = SpeckleMode::off;
  bool random_orientation = false;
  AcquisitionGeometry geom;
  LayoverFactor projection = LayoverFactor::cos_theta;

  explicit SceneSpec(AcquisitionGeometry geom_) : geom(geom_) {}

  void validate() const {
    if (!(pixel_size_m > 0.0)) throw InvalidInputError("scene: pixel size must be positive");
    if (!(extent_w_m > 0.0 && extent_h_m > 0.0)) throw InvalidInputError("scene: extent must be positive");
    if (n_buildings < 0) throw InvalidInputError("scene: building count must be >= 0");
    if (!(side_min_m > 0.0 && side_max_m >= side_min_m)) {
      throw InvalidInputError("scene: footprint side range must satisfy 0 < min <= max");
    }
    if (min_spacing_m < 0.0) throw InvalidInputError("scene: min spacing must be >= 0");
    // 4-level amplitude cartoon
    if (!(shadow_amp >= 0.0 && shadow_amp < background_amp && background_amp < roof_amp &&
          roof_amp < layover_amp)) {
      throw InvalidInputError("scene: amplitudes must satisfy shadow < background < roof < layover");
    }
    height_dist.validate();
  }

  int width_px() const {
    return std::max(1, static_cast<int>(std::ceil(extent_w_m / pixel_size_m - 1e-9)));
  }
  int height_px() const {
    return std::max(1, static_cast<int>(std::ceil(extent_h_m / pixel_size_m - 1e-9)));
  }
};

namespace detail {

inline std::string building_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "b%05d", index);
  return buf;
}

/// True when the segment from `a` to `b` touches the polygon boundary.
inline bool segment_hits_polygon(const Vec2& a, const Vec2& b, const std::vector<Vec2>& poly) {
  for (size_t j = poly.size() - 1, i = 0; i < poly.size(); j = i++) {
    if (segments_intersect(a, b, poly[j], poly[i])) return true;
  }
  return false;
}

struct RenderRegion {
  const Footprint* building;
  double layover_len;  // meters toward the sensor
  double shadow_len;   // meters away from the sensor
  int row_lo, row_hi, col_lo, col_hi;  // inclusive pixel bounds, clipped
};

}  // namespace detail

/// Places seeded random rectangular footprints with pairwise separation of at
/// least min_spacing_m. Placement is rejection sampling on per-building
/// substreams; exhausting the retry budget raises CapacityError naming the
/// achieved count.
inline std::vector<Footprint> generate_city(const SceneSpec& spec) {
  spec.validate();
  std::vector<Footprint> out;
  if (spec.n_buildings == 0) return out;
  out.reserve(spec.n_buildings);

  // uniform grid over centers for the spacing test
  double cell = spec.side_max_m * 1.5 + spec.min_spacing_m + 1e-9;
  std::unordered_map<long long, std::vector<int>> grid;
  auto cell_key = [cell](const Vec2& p) {
    long long cx = static_cast<long long>(std::floor(p.x / cell));
    long long cy = static_cast<long long>(std::floor(p.y / cell));
    return (cx << 32) ^ (cy & 0xffffffffLL);
  };
  std::vector<Vec2> centers;
  double max_half_diag = 0.0;

  Rng root = derive(spec.seed, stream_tag("placement"));
  constexpr int kAttemptsPerBuilding = 200;

  for (int k = 0; k < spec.n_buildings; ++k) {
    Rng rng = root.substream(static_cast<uint64_t>(k));
    double height = spec.height_dist.sample(rng);
    bool placed = false;
    for (int attempt = 0; attempt < kAttemptsPerBuilding && !placed; ++attempt) {
      double su = rng.uniform(spec.side_min_m, spec.side_max_m);
      double sv = rng.uniform(spec.side_min_m, spec.side_max_m);
      double rot_deg = spec.random_orientation ? rng.uniform(0.0, 180.0) : 0.0;
      double c = std::cos(deg2rad(rot_deg));
      double s = std::sin(deg2rad(rot_deg));
      std::vector<Vec2> local = {{-su / 2, -sv / 2}, {su / 2, -sv / 2}, {su / 2, sv / 2},
                                 {-su / 2, sv / 2}};
      double hx = 0.0, hy = 0.0;
      for (Vec2& p : local) {
        p = {p.x * c - p.y * s, p.x * s + p.y * c};
        hx = std::max(hx, std::fabs(p.x));
        hy = std::max(hy, std::fabs(p.y));
      }
      if (2 * hx >= spec.extent_w_m || 2 * hy >= spec.extent_h_m) continue;
      Vec2 center{rng.uniform(hx, spec.extent_w_m - hx), rng.uniform(hy, spec.extent_h_m - hy)};
      std::vector<Vec2> cand;
      cand.reserve(4);
      for (const Vec2& p : local) cand.push_back(center + p);

      double half_diag = std::hypot(su, sv) * 0.5;
      double reach = half_diag + spec.min_spacing_m + max_half_diag;
      int span = static_cast<int>(std::ceil(reach / cell)) + 1;
      bool ok = true;
      for (int dx = -span; dx <= span && ok; ++dx) {
        for (int dy = -span; dy <= span && ok; ++dy) {
          Vec2 probe{center.x + dx * cell, center.y + dy * cell};
          auto it = grid.find(cell_key(probe));
          if (it == grid.end()) continue;
          for (int idx : it->second) {
            if ((centers[idx] - center).norm() > reach) continue;
            if (polygon_distance(cand, out[idx].vertices) < spec.min_spacing_m) {
              ok = false;
              break;
            }
          }
        }
      }
      if (!ok) continue;
      grid[cell_key(center)].push_back(static_cast<int>(out.size()));
      centers.push_back(center);
      max_half_diag = std::max(max_half_diag, half_diag);
      out.emplace_back(detail::building_id(k), std::move(cand), height);
      placed = true;
    }
    if (!placed) {
      throw CapacityError("generate_city: placed " + std::to_string(out.size()) + " of " +
                          std::to_string(spec.n_buildings) +
                          " buildings before exhausting the retry budget");
    }
  }
  return out;
}

namespace detail {

inline std::vector<RenderRegion> build_regions(const std::vector<Footprint>& buildings,
                                               const SceneSpec& spec, const Raster& frame,
                                               bool with_bands) {
  double range_az = range_azimuth(spec.geom);
  Vec2 r_hat = azimuth_dir(range_az);
  std::vector<RenderRegion> regions;
  regions.reserve(buildings.size());
  std::string outside;
  for (const Footprint& b : buildings) {
    for (const Vec2& v : b.vertices) {
      if (v.x < -1e-9 || v.x > spec.extent_w_m + 1e-9 || v.y < -1e-9 ||
          v.y > spec.extent_h_m + 1e-9) {
        outside += outside.empty() ? b.id : ", " + b.id;
        break;
      }
    }
  }
  if (!outside.empty()) {
    throw OutOfExtentError("buildings outside raster extent: " + outside);
  }
  for (const Footprint& b : buildings) {
    RenderRegion reg;
    reg.building = &b;
    reg.layover_len = with_bands ? b.height_m * layover_scale(spec.geom, spec.projection) : 0.0;
    reg.shadow_len = with_bands ? b.height_m * spec.geom.tan_incidence() : 0.0;
    double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
    for (const Vec2& v : b.vertices) {
      for (double t : {0.0, -reg.layover_len, reg.shadow_len}) {
        Vec2 p = v + r_hat * t;
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
      }
    }
    auto [row_hi, col_hi] = frame.pixel_of({max_x, min_y});
    auto [row_lo, col_lo] = frame.pixel_of({min_x, max_y});
    reg.row_lo = static_cast<int>(std::max<long>(0, row_lo - 1));
    reg.row_hi = static_cast<int>(std::min<long>(frame.height_px - 1, row_hi + 1));
    reg.col_lo = static_cast<int>(std::max<long>(0, col_lo - 1));
    reg.col_hi = static_cast<int>(std::min<long>(frame.width_px - 1, col_hi + 1));
    regions.push_back(reg);
  }
  return regions;
}

}  // namespace detail

/// Renders the 4-level amplitude cartoon: shadow < background < roof <
/// layover, pixel-center containment, per-pixel precedence layover > roof >
/// shadow > background across buildings. single_look speckle multiplies each
/// pixel by an independent unit-mean exponential draw keyed on (seed, pixel
/// index), so results do not depend on row evaluation order.
inline Raster render_amplitude(const std::vector<Footprint>& buildings, const SceneSpec& spec,
                               int threads = 1) {
  spec.validate();
  Raster out(spec.width_px(), spec.height_px(), spec.pixel_size_m, {0.0, spec.extent_h_m},
             "amplitude", static_cast<float>(spec.background_amp));
  auto regions = detail::build_regions(buildings, spec, out, /*with_bands=*/true);
  Vec2 r_hat = azimuth_dir(range_azimuth(spec.geom));

  std::vector<uint8_t> cls(out.size(), 0);  // 0 bg, 1 shadow, 2 roof, 3 layover
  parallel_for(static_cast<size_t>(out.height_px), threads, [&](size_t row_idx) {
    int r = static_cast<int>(row_idx);
    for (const auto& reg : regions) {
      if (r < reg.row_lo || r > reg.row_hi) continue;
      const auto& poly = reg.building->vertices;
      for (int c = reg.col_lo; c <= reg.col_hi; ++c) {
        Vec2 p = out.pixel_center(r, c);
        uint8_t v = 0;
        if (point_in_polygon(p, poly)) {
          v = 2;
        } else if (reg.layover_len > 0.0 &&
                   detail::segment_hits_polygon(p, p + r_hat * reg.layover_len, poly)) {
          v = 3;
        } else if (reg.shadow_len > 0.0 &&
                   detail::segment_hits_polygon(p, p - r_hat * reg.shadow_len, poly)) {
          v = 1;
        }
        size_t i = static_cast<size_t>(r) * out.width_px + c;
        cls[i] = std::max(cls[i], v);
      }
    }
  });

  Rng speckle_root = derive(spec.seed, stream_tag("speckle"));
  parallel_for(static_cast<size_t>(out.height_px), threads, [&](size_t row_idx) {
    int r = static_cast<int>(row_idx);
    for (int c = 0; c < out.width_px; ++c) {
      size_t i = static_cast<size_t>(r) * out.width_px + c;
      double amp;
      switch (cls[i]) {
        case 1: amp = spec.shadow_amp; break;
        case 2: amp = spec.roof_amp; break;
        case 3: amp = spec.layover_amp; break;
        default: amp = spec.background_amp; break;
      }
      if (spec.speckle == SpeckleMode::single_look) {
        amp *= speckle_root.substream(i).exponential();
      }
      out.values[i] = static_cast<float>(amp);
    }
  });
  return out;
}

/// Per-pixel reference height raster: height of the covering building
/// (pixel-center test), overlaps resolved by max height, 0 elsewhere.
inline Raster render_height_truth(const std::vector<Footprint>& buildings, const SceneSpec& spec,
                                  int threads = 1) {
  spec.validate();
  Raster out(spec.width_px(), spec.height_px(), spec.pixel_size_m, {0.0, spec.extent_h_m},
             "height_truth", 0.0f);
  auto regions = detail::build_regions(buildings, spec, out, /*with_bands=*/false);
  parallel_for(static_cast<size_t>(out.height_px), threads, [&](size_t row_idx) {
    int r = static_cast<int>(row_idx);
    for (const auto& reg : regions) {
      if (r < reg.row_lo || r > reg.row_hi) continue;
      float h = static_cast<float>(reg.building->height_m);
      for (int c = reg.col_lo; c <= reg.col_hi; ++c) {
        if (point_in_polygon(out.pixel_center(r, c), reg.building->vertices)) {
          out.at(r, c) = std::max(out.at(r, c), h);
        }
      }
    }
  });
  return out;
}

}  // namespace sarheight
