#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace hop {

using Eigen::Matrix3d;
using Eigen::Vector3d;

/// Rigid transform: rotation stored as a 3x3 orthonormal matrix, translation
/// in meters. Serialized as position + quaternion (w, x, y, z).
struct RigidTransform {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d translation = Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  static RigidTransform from_quat(const Vector3d& pos, double w, double x,
                                  double y, double z) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (!(n > 0.0) || !std::isfinite(n))
      throw std::invalid_argument("quaternion has zero or non-finite norm");
    Eigen::Quaterniond q(w / n, x / n, y / n, z / n);
    RigidTransform t;
    t.rotation = q.toRotationMatrix();
    t.translation = pos;
    return t;
  }

  /// Quaternion (w, x, y, z) of the rotation, w >= 0.
  Eigen::Vector4d quat_wxyz() const {
    Eigen::Quaterniond q(rotation);
    if (q.w() < 0) q.coeffs() *= -1.0;
    return {q.w(), q.x(), q.y(), q.z()};
  }

  RigidTransform compose(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
  }

  Vector3d apply(const Vector3d& p) const { return rotation * p + translation; }

  bool is_finite() const {
    return rotation.allFinite() && translation.allFinite();
  }

  /// Max deviation from R^T R = I and det(R) = 1.
  double orthonormality_error() const {
    const double e1 =
        (rotation.transpose() * rotation - Matrix3d::Identity()).cwiseAbs().maxCoeff();
    const double e2 = std::abs(rotation.determinant() - 1.0);
    return std::max(e1, e2);
  }
};

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return a.compose(b);
}

/// Rotation about a unit axis by angle (radians), Rodrigues form.
inline Matrix3d axis_angle(const Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

/// Capsule: segment [p0, p1] swept by a sphere of given radius, in link frame.
struct Capsule {
  Vector3d p0 = Vector3d::Zero();
  Vector3d p1 = Vector3d::Zero();
  double radius = 0.0;
};

/// Axis-aligned box.
struct Aabb {
  Vector3d center = Vector3d::Zero();
  Vector3d half_extents = Vector3d::Zero();

  /// Signed distance from a point (negative inside).
  double signed_distance(const Vector3d& p) const {
    const Vector3d q = (p - center).cwiseAbs() - half_extents;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside;
  }
};

/// Signed distance from segment [a, b] to a box (negative when the segment
/// enters the box). The box SDF is convex, so its restriction to the segment
/// is convex in t and ternary search converges to the global minimum.
inline double segment_box_distance(const Vector3d& a, const Vector3d& b,
                                   const Aabb& box) {
  double lo = 0.0, hi = 1.0;
  auto f = [&](double t) { return box.signed_distance(a + t * (b - a)); };
  for (int it = 0; it < 100; ++it) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (f(m1) < f(m2))
      hi = m2;
    else
      lo = m1;
  }
  return std::min({f(lo), f(0.5 * (lo + hi)), f(hi)});
}

}  // namespace hop
