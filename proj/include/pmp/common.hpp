#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace pmp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kPi = std::numbers::pi;

// Error taxonomy. Every failure surfaced by the library derives from Error so
// callers (the CLI in particular) can map them onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct MappingError : Error { using Error::Error; };
struct ArgumentError : Error { using Error::Error; };
struct DatasetError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct DivergenceError : Error { using Error::Error; };
struct CompatibilityError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

// 2D helpers for the sagittal plane: coordinates are (x, z), angles are
// counter-clockwise from +x toward +z.
inline Vec2 rotate(double angle, const Vec2& v) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}
inline Vec2 perp(const Vec2& r) { return {-r.y(), r.x()}; }
inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace pmp
