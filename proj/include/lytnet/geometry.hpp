#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace lytnet {

struct Point2 {
  double x = 0;
  double y = 0;
};

class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// 3x3 projective map, row-major.
class Homography {
 public:
  using Matrix = std::array<double, 9>;

  Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}
  explicit Homography(const Matrix& m) : m_(m) {
    if (!(std::abs(determinant()) > 1e-12)) {
      throw GeometryError("homography is singular");
    }
  }

  static Homography identity() { return Homography(); }

  /// Image plane (4032x3024 capture) to bird's-eye plane, calibrated on a
  /// base image taken 1.4 m above the centre of a crossing.
  static Homography birdseye_default() {
    return Homography(Matrix{-1.17079727e-1, -1.56391162e0, 2.25203273e3,  //
                             0.0, -2.59783431e0, 3.71606050e3,             //
                             0.0, -7.75749810e-4, 1.00000000e0});
  }

  const Matrix& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_[r * 3 + c]; }

  double determinant() const {
    const auto& a = m_;
    return a[0] * (a[4] * a[8] - a[5] * a[7]) -
           a[1] * (a[3] * a[8] - a[5] * a[6]) +
           a[2] * (a[3] * a[7] - a[4] * a[6]);
  }

  Homography inverse() const {
    const auto& a = m_;
    const double det = determinant();
    Matrix inv{a[4] * a[8] - a[5] * a[7], a[2] * a[7] - a[1] * a[8],
               a[1] * a[5] - a[2] * a[4], a[5] * a[6] - a[3] * a[8],
               a[0] * a[8] - a[2] * a[6], a[2] * a[3] - a[0] * a[5],
               a[3] * a[7] - a[4] * a[6], a[1] * a[6] - a[0] * a[7],
               a[0] * a[4] - a[1] * a[3]};
    for (auto& v : inv) v /= det;
    return Homography(inv);
  }

 private:
  Matrix m_;
};

/// Maps (x, y, 1) through H and dehomogenizes.
inline Point2 apply_homography(const Homography& h, Point2 p) {
  const double w = h(2, 0) * p.x + h(2, 1) * p.y + h(2, 2);
  if (std::abs(w) < 1e-9) {
    throw GeometryError("point at horizon: homogeneous coordinate is zero");
  }
  return {(h(0, 0) * p.x + h(0, 1) * p.y + h(0, 2)) / w,
          (h(1, 0) * p.x + h(1, 1) * p.y + h(1, 2)) / w};
}

/// Signed angle in degrees, in (-180, 180], between start->end and the
/// "straight ahead" direction (decreasing y). Positive tilts right.
inline double direction_angle(Point2 start, Point2 end) {
  const double dx = end.x - start.x;
  const double dy = end.y - start.y;
  if (dx == 0.0 && dy == 0.0) {
    throw GeometryError("zero-length direction");
  }
  double deg = std::atan2(dx, -dy) * 180.0 / std::numbers::pi;
  if (deg <= -180.0) deg += 360.0;
  return deg;
}

/// Direction angle of the midline after mapping both pixel endpoints
/// through H.
inline double birdseye_angle(Point2 start, Point2 end, const Homography& h) {
  const Point2 a = apply_homography(h, start);
  const Point2 b = apply_homography(h, end);
  const double scale = std::max({std::abs(a.x), std::abs(a.y), std::abs(b.x),
                                 std::abs(b.y), 1.0});
  if (std::hypot(b.x - a.x, b.y - a.y) <= 1e-12 * scale) {
    throw GeometryError("zero-length direction");
  }
  return direction_angle(a, b);
}

/// x where the line through p1 and p2 crosses y = 0.
inline double x_intercept(Point2 p1, Point2 p2) {
  if (p1.y == p2.y) throw GeometryError("horizontal line has no x-intercept");
  return (p1.x * p2.y - p2.x * p1.y) / (p2.y - p1.y);
}

/// Pixel size that normalized endpoints are scaled to before H is applied.
struct ReferenceResolution {
  double width = 4032;
  double height = 3024;

  Point2 to_pixels(double x_norm, double y_norm) const {
    return {x_norm * width, y_norm * height};
  }
};

/// Parses nine whitespace- or comma-separated numbers, row-major.
inline Homography parse_homography(const std::string& text) {
  std::string cleaned = text;
  for (auto& c : cleaned)
    if (c == ',') c = ' ';
  std::istringstream is(cleaned);
  Homography::Matrix m{};
  for (std::size_t i = 0; i < 9; ++i) {
    if (!(is >> m[i])) {
      throw std::invalid_argument("homography needs 9 numbers, got " +
                                  std::to_string(i));
    }
  }
  std::string extra;
  if (is >> extra) {
    throw std::invalid_argument("homography has more than 9 numbers");
  }
  return Homography(m);
}

inline Homography load_homography(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open homography file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_homography(ss.str());
}

}  // namespace lytnet
