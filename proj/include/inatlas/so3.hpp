#pragma once

#include <array>
#include <cmath>

namespace inatlas::so3 {

// Rodrigues exponential map and its derivative with respect to the
// axis-angle vector. A second-order Taylor branch below kSeriesThreshold
// keeps both the map and the derivative smooth through zero rotation.

constexpr double kSeriesThreshold = 1e-6;

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3d = std::array<double, 3>;

inline Mat3 identity() {
  return {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
}

inline Mat3 skew(const Vec3d& r) {
  return {{{0, -r[2], r[1]}, {r[2], 0, -r[0]}, {-r[1], r[0], 0}}};
}

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a[i][k] * b[k][j];
      c[i][j] = s;
    }
  return c;
}

inline Vec3d apply(const Mat3& m, const Vec3d& v) {
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
          m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

inline Mat3 transpose(const Mat3& m) {
  Mat3 t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = m[j][i];
  return t;
}

// sin(t)/t and (1-cos(t))/t^2 with series fallbacks.
inline void rotation_coefficients(double theta, double& a, double& b) {
  if (theta < kSeriesThreshold) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
}

inline Mat3 exp_map(const Vec3d& r) {
  const double theta = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
  double a, b;
  rotation_coefficients(theta, a, b);
  const Mat3 k = skew(r);
  const Mat3 k2 = matmul(k, k);
  Mat3 out = identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out[i][j] += a * k[i][j] + b * k2[i][j];
  return out;
}

// dR/dr_m for m = 0,1,2. ca = d(a)/dtheta / theta, cb likewise, so the
// chain rule through theta = |r| never divides by theta.
inline std::array<Mat3, 3> exp_map_jacobian(const Vec3d& r) {
  const double theta = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
  double a, b, ca, cb;
  rotation_coefficients(theta, a, b);
  if (theta < kSeriesThreshold) {
    const double t2 = theta * theta;
    ca = -1.0 / 3.0 + t2 / 30.0;
    cb = -1.0 / 12.0 + t2 / 180.0;
  } else {
    const double t2 = theta * theta;
    ca = (theta * std::cos(theta) - std::sin(theta)) / (t2 * theta);
    cb = (theta * std::sin(theta) - 2.0 * (1.0 - std::cos(theta))) / (t2 * t2);
  }
  const Mat3 k = skew(r);
  const Mat3 k2 = matmul(k, k);
  std::array<Mat3, 3> jac;
  for (int m = 0; m < 3; ++m) {
    Vec3d e{0, 0, 0};
    e[m] = 1.0;
    const Mat3 em = skew(e);
    const Mat3 emk = matmul(em, k);
    const Mat3 kem = matmul(k, em);
    Mat3 d{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        d[i][j] = ca * r[m] * k[i][j] + a * em[i][j] + cb * r[m] * k2[i][j] +
                  b * (emk[i][j] + kem[i][j]);
    jac[m] = d;
  }
  return jac;
}

// Geodesic angle between two rotations, radians.
inline double geodesic_angle(const Mat3& r1, const Mat3& r2) {
  const Mat3 rel = matmul(transpose(r1), r2);
  double trace = rel[0][0] + rel[1][1] + rel[2][2];
  double c = (trace - 1.0) / 2.0;
  c = c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
  return std::acos(c);
}

inline double rotation_angle(const Vec3d& r) {
  return std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
}

}  // namespace inatlas::so3
