#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sarheight/common.hpp"

namespace sarheight {

// ---------------------------------------------------------------------------
// Planar polygon helpers
// ---------------------------------------------------------------------------

/// Twice the signed area (positive = counter-clockwise in east/north coords).
inline double signed_area2(const std::vector<Vec2>& poly) {
  double s = 0.0;
  for (size_t i = 0, n = poly.size(); i < n; ++i) {
    s += poly[i].cross(poly[(i + 1) % n]);
  }
  return s;
}

inline double polygon_area(const std::vector<Vec2>& poly) {
  return std::fabs(signed_area2(poly)) * 0.5;
}

inline Vec2 polygon_centroid(const std::vector<Vec2>& poly) {
  double a2 = 0.0;
  Vec2 c{0.0, 0.0};
  for (size_t i = 0, n = poly.size(); i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    double w = p.cross(q);
    a2 += w;
    c += (p + q) * w;
  }
  if (a2 == 0.0) {  // degenerate; fall back to vertex mean
    Vec2 m{0.0, 0.0};
    for (const Vec2& p : poly) m += p;
    return m / static_cast<double>(poly.size());
  }
  return c / (3.0 * a2);
}

/// Even-odd crossing test. Boundary behavior is half-open and only used for
/// pixel-center containment, where exact-boundary hits have measure zero.
inline bool point_in_polygon(const Vec2& p, const std::vector<Vec2>& poly) {
  bool inside = false;
  for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2& a = poly[j];
    const Vec2& b = poly[i];
    if ((b.y > p.y) != (a.y > p.y)) {
      double t = (p.y - b.y) / (a.y - b.y);
      if (p.x < b.x + t * (a.x - b.x)) inside = !inside;
    }
  }
  return inside;
}

namespace detail {

inline int orientation_sign(const Vec2& p, const Vec2& q, const Vec2& r) {
  double v = (q - p).cross(r - p);
  return (v > 0.0) - (v < 0.0);
}

inline bool on_segment(const Vec2& p, const Vec2& q, const Vec2& r) {
  return std::min(p.x, r.x) <= q.x && q.x <= std::max(p.x, r.x) &&
         std::min(p.y, r.y) <= q.y && q.y <= std::max(p.y, r.y);
}

}  // namespace detail

/// Inclusive segment intersection test (touching counts).
inline bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  using detail::on_segment;
  using detail::orientation_sign;
  int o1 = orientation_sign(a, b, c);
  int o2 = orientation_sign(a, b, d);
  int o3 = orientation_sign(c, d, a);
  int o4 = orientation_sign(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(a, c, b)) return true;
  if (o2 == 0 && on_segment(a, d, b)) return true;
  if (o3 == 0 && on_segment(c, a, d)) return true;
  if (o4 == 0 && on_segment(c, b, d)) return true;
  return false;
}

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  Vec2 ab = b - a;
  double len2 = ab.norm2();
  if (len2 == 0.0) return (p - a).norm();
  double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

inline double segment_segment_distance(const Vec2& a, const Vec2& b, const Vec2& c,
                                       const Vec2& d) {
  if (segments_intersect(a, b, c, d)) return 0.0;
  return std::min(std::min(point_segment_distance(a, c, d), point_segment_distance(b, c, d)),
                  std::min(point_segment_distance(c, a, b), point_segment_distance(d, a, b)));
}

/// Minimum distance between two simple polygons; 0 when they touch, overlap,
/// or one contains the other.
inline double polygon_distance(const std::vector<Vec2>& p, const std::vector<Vec2>& q) {
  if (point_in_polygon(p[0], q) || point_in_polygon(q[0], p)) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0, n = p.size(); i < n; ++i) {
    const Vec2& a = p[i];
    const Vec2& b = p[(i + 1) % n];
    for (size_t j = 0, m = q.size(); j < m; ++j) {
      best = std::min(best, segment_segment_distance(a, b, q[j], q[(j + 1) % m]));
      if (best == 0.0) return 0.0;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// A building's simple polygon in a local metric frame plus reference height.
/// Vertices are normalized to counter-clockwise order on construction;
/// construction rejects self-intersecting or zero-area rings.
struct Footprint {
  std::string id;
  std::vector<Vec2> vertices;  // CCW, open ring
  double height_m = 0.0;

  Footprint(std::string id_, std::vector<Vec2> vertices_, double height_m_)
      : id(std::move(id_)), vertices(std::move(vertices_)), height_m(height_m_) {
    validate_and_normalize();
  }

  double area() const { return polygon_area(vertices); }
  Vec2 centroid() const { return polygon_centroid(vertices); }

private:
  void validate_and_normalize() {
    if (vertices.size() < 3) {
      throw InvalidInputError("footprint '" + id + "': needs at least 3 vertices");
    }
    if (!(height_m >= 0.0)) {
      throw InvalidInputError("footprint '" + id + "': negative reference height");
    }
    size_t n = vertices.size();
    for (size_t i = 0; i < n; ++i) {
      if (vertices[i] == vertices[(i + 1) % n]) {
        throw InvalidInputError("footprint '" + id + "': repeated consecutive vertex");
      }
    }
    double a2 = signed_area2(vertices);
    if (a2 == 0.0) {
      throw DegenerateGeometryError("footprint '" + id + "': zero area");
    }
    if (a2 < 0.0) std::reverse(vertices.begin(), vertices.end());
    // simplicity: non-adjacent edges must not touch; adjacent edges must not fold back
    for (size_t i = 0; i < n; ++i) {
      const Vec2& a = vertices[i];
      const Vec2& b = vertices[(i + 1) % n];
      const Vec2& c = vertices[(i + 2) % n];
      if (detail::orientation_sign(a, b, c) == 0 && (a - b).dot(c - b) > 0.0) {
        throw InvalidInputError("footprint '" + id + "': edges fold back (spike)");
      }
      for (size_t j = i + 1; j < n; ++j) {
        bool adjacent = (j == i + 1) || (i == 0 && j == n - 1);
        if (adjacent) continue;
        if (segments_intersect(a, b, vertices[j], vertices[(j + 1) % n])) {
          throw InvalidInputError("footprint '" + id + "': self-intersecting ring");
        }
      }
    }
  }
};

/// Oriented rectangle: center, half-axes extents, and the compass azimuth of
/// the u axis (degrees clockwise from north). The v axis is u rotated 90
/// degrees clockwise.
struct OrientedRect {
  Vec2 center;
  double extent_u_m = 0.0;
  double extent_v_m = 0.0;
  double u_azimuth_deg = 0.0;

  Vec2 u_dir() const { return azimuth_dir(u_azimuth_deg); }
  Vec2 v_dir() const { return azimuth_dir(u_azimuth_deg + 90.0); }
  double area() const { return extent_u_m * extent_v_m; }

  bool contains(const Vec2& p, double tol_m = 1e-9) const {
    Vec2 d = p - center;
    return std::fabs(d.dot(u_dir())) <= extent_u_m * 0.5 + tol_m &&
           std::fabs(d.dot(v_dir())) <= extent_v_m * 0.5 + tol_m;
  }

  /// Corner reconstruction, exact and order-stable: north-west-most corner
  /// (max y, then min x) first, then clockwise on the map.
  std::array<Vec2, 4> corners() const {
    Vec2 hu = u_dir() * (extent_u_m * 0.5);
    Vec2 hv = v_dir() * (extent_v_m * 0.5);
    std::array<Vec2, 4> c = {center + hu + hv, center + hu - hv, center - hu - hv,
                             center - hu + hv};
    double a2 = 0.0;
    for (int i = 0; i < 4; ++i) a2 += c[i].cross(c[(i + 1) % 4]);
    if (a2 > 0.0) std::reverse(c.begin(), c.end());  // enforce clockwise
    int start = 0;
    for (int i = 1; i < 4; ++i) {
      if (c[i].y > c[start].y || (c[i].y == c[start].y && c[i].x < c[start].x)) start = i;
    }
    std::array<Vec2, 4> out;
    for (int i = 0; i < 4; ++i) out[i] = c[(start + i) % 4];
    return out;
  }
};

enum class OrbitPass { ascending, descending };
enum class LookSide { left, right };

/// Everything needed to fix the ground-range direction and the incidence
/// angle theta for one acquisition.
struct AcquisitionGeometry {
  double incidence_deg;
  double orbit_inclination_deg;
  OrbitPass pass;
  LookSide look_side;
  double latitude_deg;
  std::optional<double> heading_override_deg;

  AcquisitionGeometry(double incidence_deg_, double orbit_inclination_deg_, OrbitPass pass_,
                      LookSide look_side_, double latitude_deg_,
                      std::optional<double> heading_override_deg_ = std::nullopt)
      : incidence_deg(incidence_deg_),
        orbit_inclination_deg(orbit_inclination_deg_),
        pass(pass_),
        look_side(look_side_),
        latitude_deg(latitude_deg_),
        heading_override_deg(heading_override_deg_) {
    if (!(incidence_deg > 0.0 && incidence_deg < 90.0)) {
      throw InvalidInputError("incidence angle must lie strictly inside (0, 90) degrees");
    }
    if (!(orbit_inclination_deg > 0.0 && orbit_inclination_deg < 180.0)) {
      throw InvalidInputError("orbit inclination must lie strictly inside (0, 180) degrees");
    }
    if (!(latitude_deg > -90.0 && latitude_deg < 90.0)) {
      throw InvalidInputError("latitude must lie strictly inside (-90, 90) degrees");
    }
    if (heading_override_deg && !(*heading_override_deg >= 0.0 && *heading_override_deg < 360.0)) {
      throw InvalidInputError("heading override must lie in [0, 360)");
    }
  }

  double incidence_rad() const { return deg2rad(incidence_deg); }
  double cos_incidence() const { return std::cos(incidence_rad()); }
  double tan_incidence() const { return std::tan(incidence_rad()); }
};

/// Length scale applied to height when projecting it into ground range.
/// cos_theta matches the estimation relation used throughout; cot_theta is the
/// ground-range layover alternative. Simulator and estimator must share one.
enum class LayoverFactor { cos_theta, cot_theta };

inline double layover_scale(const AcquisitionGeometry& geom, LayoverFactor factor) {
  double th = geom.incidence_rad();
  return factor == LayoverFactor::cos_theta ? std::cos(th) : std::cos(th) / std::sin(th);
}

inline const char* layover_factor_name(LayoverFactor f) {
  return f == LayoverFactor::cos_theta ? "cos" : "cot";
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Counter-clockwise convex hull (monotone chain); collinear points on the
/// boundary are dropped. Accepts any point set with >= 1 point; collinear
/// inputs collapse to 1-2 points.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> points) {
  if (points.empty()) throw InvalidInputError("convex_hull: empty point set");
  std::sort(points.begin(), points.end(),
            [](const Vec2& a, const Vec2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  points.erase(std::unique(points.begin(), points.end()), points.end());
  size_t n = points.size();
  if (n <= 2) return points;
  std::vector<Vec2> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {  // lower
    while (k >= 2 && (hull[k - 1] - hull[k - 2]).cross(points[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = points[i];
  }
  for (size_t i = n - 1, lower = k + 1; i-- > 0;) {  // upper
    while (k >= lower && (hull[k - 1] - hull[k - 2]).cross(points[i] - hull[k - 2]) <= 0.0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  return hull;
}

/// Minimum-area enclosing rectangle of a point set (rotating calipers over
/// hull edges: the optimum has one side collinear with a hull edge).
inline OrientedRect min_area_rect(const std::vector<Vec2>& points) {
  std::vector<Vec2> hull = convex_hull(points);
  if (hull.size() < 3) {
    throw DegenerateGeometryError("min_area_rect: points are collinear");
  }
  double best_area = std::numeric_limits<double>::infinity();
  OrientedRect best;
  size_t n = hull.size();
  for (size_t j = n - 1, i = 0; i < n; j = i++) {
    Vec2 edge = hull[i] - hull[j];
    double len = edge.norm();
    if (len == 0.0) continue;
    Vec2 e0 = edge / len;
    Vec2 e1{-e0.y, e0.x};
    double min0 = 0.0, max0 = 0.0, min1 = 0.0, max1 = 0.0;
    for (const Vec2& p : hull) {
      Vec2 d = p - hull[j];
      double a = d.dot(e0);
      double b = d.dot(e1);
      min0 = std::min(min0, a);
      max0 = std::max(max0, a);
      min1 = std::min(min1, b);
      max1 = std::max(max1, b);
    }
    double area = (max0 - min0) * (max1 - min1);
    if (area < best_area) {
      best_area = area;
      Vec2 center = hull[j] + e0 * ((min0 + max0) * 0.5) + e1 * ((min1 + max1) * 0.5);
      best = OrientedRect{center, max0 - min0, max1 - min1, dir_azimuth(e0)};
    }
  }
  return best;
}

/// Smallest enclosing rectangle over all orientations (FBB before alignment).
inline OrientedRect min_enclosing_rect(const Footprint& footprint) {
  return min_area_rect(footprint.vertices);
}

/// Ground-track heading at the given latitude on a spherical, non-rotating
/// Earth. alpha_asc = arcsin(cos i / cos phi) measured from north; the
/// descending-pass heading mirrors it about east-west. An explicit
/// heading_override_deg wins over derivation.
inline double ground_track_heading(const AcquisitionGeometry& geom) {
  if (geom.heading_override_deg) return *geom.heading_override_deg;
  double s = std::cos(deg2rad(geom.orbit_inclination_deg)) / std::cos(deg2rad(geom.latitude_deg));
  if (std::fabs(s) > 1.0 + 1e-12) {
    throw GeometryInfeasibleError("orbit does not reach latitude " +
                                  std::to_string(geom.latitude_deg));
  }
  s = std::clamp(s, -1.0, 1.0);
  double alpha_deg = rad2deg(std::asin(s));
  if (geom.pass == OrbitPass::ascending) return wrap_azimuth(360.0 + alpha_deg);
  return wrap_azimuth(180.0 - alpha_deg);
}

/// Azimuth of increasing ground range (pointing away from the sensor track):
/// heading + 90 for right-looking, heading - 90 for left-looking.
inline double range_azimuth(const AcquisitionGeometry& geom) {
  double heading = ground_track_heading(geom);
  return wrap_azimuth(geom.look_side == LookSide::right ? heading + 90.0 : heading - 90.0);
}

/// Smallest rectangle with axes fixed to the range direction: u axis at
/// range_az_deg, v at range_az_deg + 90, extents from vertex projections.
inline OrientedRect heading_aligned_bbox(const Footprint& footprint, double range_az_deg) {
  Vec2 u = azimuth_dir(range_az_deg);
  Vec2 v = azimuth_dir(range_az_deg + 90.0);
  double min_u = std::numeric_limits<double>::infinity(), max_u = -min_u;
  double min_v = min_u, max_v = max_u;
  for (const Vec2& p : footprint.vertices) {
    double a = p.dot(u);
    double b = p.dot(v);
    min_u = std::min(min_u, a);
    max_u = std::max(max_u, a);
    min_v = std::min(min_v, b);
    max_v = std::max(max_v, b);
  }
  if (!(max_u > min_u) || !(max_v > min_v)) {
    throw DegenerateGeometryError("heading_aligned_bbox: footprint '" + footprint.id +
                                  "' has no extent");
  }
  Vec2 center = u * ((min_u + max_u) * 0.5) + v * ((min_v + max_v) * 0.5);
  return OrientedRect{center, max_u - min_u, max_v - min_v, wrap_azimuth(range_az_deg)};
}

/// Forward model: grows the range-aligned FBB by the layover length of a
/// building of the given height and shifts it half that length toward the
/// sensor. Caller contract: fbb's u axis is the range azimuth of `geom`.
inline OrientedRect project_bbb(const OrientedRect& fbb, double height_m,
                                const AcquisitionGeometry& geom,
                                LayoverFactor factor = LayoverFactor::cos_theta) {
  if (!(height_m >= 0.0)) throw InvalidInputError("project_bbb: negative height");
  double layover = height_m * layover_scale(geom, factor);
  OrientedRect bbb = fbb;
  bbb.extent_u_m = fbb.extent_u_m + layover;
  bbb.center = fbb.center - fbb.u_dir() * (layover * 0.5);
  return bbb;
}

struct HeightEstimate {
  double height_m = 0.0;
  bool clamped = false;  // set when the measured length difference was negative
};

/// Inverse model: height from the range-extent difference of the two boxes.
/// A negative difference (measurement noise) clamps to zero and reports it.
inline HeightEstimate height_from_boxes(const OrientedRect& fbb, const OrientedRect& bbb,
                                        const AcquisitionGeometry& geom,
                                        LayoverFactor factor = LayoverFactor::cos_theta) {
  if (azimuth_separation(fbb.u_azimuth_deg, bbb.u_azimuth_deg) > 1e-6) {
    throw AxisMismatchError("height_from_boxes: box axes differ by more than 1e-6 degrees");
  }
  double length = bbb.extent_u_m - fbb.extent_u_m;
  if (length < 0.0) return {0.0, true};
  return {length / layover_scale(geom, factor), false};
}

}  // namespace sarheight
