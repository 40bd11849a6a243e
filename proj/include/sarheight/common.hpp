#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace sarheight {

// Error taxonomy. The CLI maps these onto its exit codes; library code and
// tests catch them by type.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error { public: using Error::Error; };
class DegenerateGeometryError : public Error { public: using Error::Error; };
class GeometryInfeasibleError : public Error { public: using Error::Error; };
class AxisMismatchError : public Error { public: using Error::Error; };
class CapacityError : public Error { public: using Error::Error; };
class OutOfExtentError : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class MissingInputError : public Error { public: using Error::Error; };
class StaleArtifactError : public Error { public: using Error::Error; };

inline constexpr double kPi = 3.141592653589793238462643383279502884;

inline constexpr double deg2rad(double deg) { return deg * (kPi / 180.0); }
inline constexpr double rad2deg(double rad) { return rad * (180.0 / kPi); }

/// Wraps an angle in degrees into [0, 360).
inline double wrap_azimuth(double deg) {
  double a = std::fmod(deg, 360.0);
  if (a < 0.0) a += 360.0;
  if (a == 360.0) a = 0.0;  // fmod corner
  return a;
}

/// Absolute angular separation of two azimuths in degrees, in [0, 180].
inline double azimuth_separation(double a_deg, double b_deg) {
  double d = std::fabs(wrap_azimuth(a_deg) - wrap_azimuth(b_deg));
  return d > 180.0 ? 360.0 - d : d;
}

struct Vec2 {
  double x = 0.0;  // meters east
  double y = 0.0;  // meters north

  Vec2() = default;
  Vec2(double x_, double y_) : x(x_), y(y_) {}

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2 operator/(double s) const { return {x / s, y / s}; }
  Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
  Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
  bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }

  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  /// z-component of the cross product (positive = `o` lies counter-clockwise of *this).
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  double norm2() const { return x * x + y * y; }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }

/// Unit direction of a compass azimuth (degrees clockwise from north):
/// 0 deg -> (0,1), 90 deg -> (1,0).
inline Vec2 azimuth_dir(double azimuth_deg) {
  double a = deg2rad(azimuth_deg);
  return {std::sin(a), std::cos(a)};
}

/// Compass azimuth of a direction vector, in [0, 360). Undefined for the zero vector.
inline double dir_azimuth(const Vec2& d) {
  return wrap_azimuth(rad2deg(std::atan2(d.x, d.y)));
}

}  // namespace sarheight
