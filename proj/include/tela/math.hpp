#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace tela {

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// exp(-a) with the argument floored at -80 so optical-depth sums cannot
// underflow into denormals.
inline double exp_neg(double a) { return std::exp(-std::min(a, 80.0)); }

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

  Vec3 cwise_mul(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }
  Vec3 cwise_div(const Vec3& o) const { return {x / o.x, y / o.y, z / o.z}; }

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  double squared_norm() const { return x * x + y * y + z * z; }
  Vec3 normalized() const { return *this / norm(); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
  double max_abs() const { return std::max({std::fabs(x), std::fabs(y), std::fabs(z)}); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline Vec3 min(const Vec3& a, const Vec3& b) {
  return {std::min(a.x, b.x), std::min(a.y, b.y), std::min(a.z, b.z)};
}
inline Vec3 max(const Vec3& a, const Vec3& b) {
  return {std::max(a.x, b.x), std::max(a.y, b.y), std::max(a.z, b.z)};
}

// Row-major 3x3 matrix. Used for world-to-camera rotations.
struct Mat3 {
  double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

  static Mat3 identity() { return {}; }
  static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    Mat3 a;
    a.m[0][0] = r0.x; a.m[0][1] = r0.y; a.m[0][2] = r0.z;
    a.m[1][0] = r1.x; a.m[1][1] = r1.y; a.m[1][2] = r1.z;
    a.m[2][0] = r2.x; a.m[2][1] = r2.y; a.m[2][2] = r2.z;
    return a;
  }

  Vec3 row(int i) const { return {m[i][0], m[i][1], m[i][2]}; }

  Vec3 operator*(const Vec3& v) const {
    return {dot(row(0), v), dot(row(1), v), dot(row(2), v)};
  }

  Mat3 operator*(const Mat3& b) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r.m[i][j] = m[i][0] * b.m[0][j] + m[i][1] * b.m[1][j] + m[i][2] * b.m[2][j];
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
  }

  // max |R^T R - I| entry; 0 for an exact rotation
  double orthonormality_error() const {
    Mat3 g = transposed() * (*this);
    double e = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) e = std::max(e, std::fabs(g.m[i][j] - (i == j ? 1.0 : 0.0)));
    return e;
  }
};

struct Aabb {
  Vec3 lo, hi;

  bool valid() const { return lo.x < hi.x && lo.y < hi.y && lo.z < hi.z; }
  // boundary points count as inside
  bool contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
  }
  bool intersects(const Aabb& o) const {
    return lo.x <= o.hi.x && hi.x >= o.lo.x && lo.y <= o.hi.y && hi.y >= o.lo.y &&
           lo.z <= o.hi.z && hi.z >= o.lo.z;
  }
  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return (lo + hi) * 0.5; }
  Aabb dilated(double r) const { return {lo - Vec3{r, r, r}, hi + Vec3{r, r, r}}; }
};

// The global scene bounding box all rays are clipped against.
inline Aabb scene_bounds() { return {{-1, -1, -1}, {1, 1, 1}}; }

}  // namespace tela
