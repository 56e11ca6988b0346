#include "hgwm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hgwm/errors.hpp"

namespace hgwm {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

Vec4 normalize_quat(const Vec4& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("quaternion has zero or non-finite norm");
  return q / n;
}

Mat3 quat_to_matrix(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Vec4 matrix_to_quat(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  Vec4 out(q.w(), q.x(), q.y(), q.z());
  if (out[0] < 0) out = -out;
  return out;
}

Vec4 quat_multiply(const Vec4& a, const Vec4& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

double wrap_degrees(double deg) {
  double w = std::fmod(deg, 360.0);
  if (w < 0) w += 360.0;
  if (w >= 360.0) w = 0.0;
  return w;
}

Mat3 euler_zyx_to_matrix(const Vec3& e) {
  const Eigen::AngleAxisd rx(e[0] * kDegToRad, Vec3::UnitX());
  const Eigen::AngleAxisd ry(e[1] * kDegToRad, Vec3::UnitY());
  const Eigen::AngleAxisd rz(e[2] * kDegToRad, Vec3::UnitZ());
  return (rz * ry * rx).toRotationMatrix();
}

Vec3 matrix_to_euler_zyx(const Mat3& r) {
  // r = Rz(c) Ry(b) Rx(a); r(2,0) = -sin(b).
  const double sb = std::clamp(-r(2, 0), -1.0, 1.0);
  const double b = std::asin(sb);
  double a = 0.0;
  double c = 0.0;
  if (std::abs(sb) < 1.0 - 1e-12) {
    a = std::atan2(r(2, 1), r(2, 2));
    c = std::atan2(r(1, 0), r(0, 0));
  } else {
    // gimbal lock: fold everything into the z angle
    c = std::atan2(-r(0, 1), r(1, 1));
  }
  return {wrap_degrees(a / kDegToRad), wrap_degrees(b / kDegToRad), wrap_degrees(c / kDegToRad)};
}

Vec4 euler_zyx_to_quat(const Vec3& euler_deg) { return matrix_to_quat(euler_zyx_to_matrix(euler_deg)); }

bool is_orthonormal(const Mat3& r, double tol) {
  return (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         std::abs(r.determinant() - 1.0) <= tol;
}

}  // namespace hgwm
