#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace hgwm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Quaternions are stored as (w, x, y, z) in a Vec4.

Vec4 normalize_quat(const Vec4& q);
Mat3 quat_to_matrix(const Vec4& unit_q);
Vec4 matrix_to_quat(const Mat3& r);
Vec4 quat_multiply(const Vec4& a, const Vec4& b);

// Euler convention is ZYX: R = Rz(ez) * Ry(ey) * Rx(ex), angles in degrees.
Mat3 euler_zyx_to_matrix(const Vec3& euler_deg);
Vec3 matrix_to_euler_zyx(const Mat3& r);  // each angle wrapped to [0, 360)
Vec4 euler_zyx_to_quat(const Vec3& euler_deg);

double wrap_degrees(double deg);

struct Bounds {
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);

  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Vec3 extent() const { return hi - lo; }
  Vec3 clamp(const Vec3& p) const { return p.cwiseMax(lo).cwiseMin(hi); }
};

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }
  RigidTransform operator*(const RigidTransform& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
};

bool is_orthonormal(const Mat3& r, double tol = 1e-6);

}  // namespace hgwm
