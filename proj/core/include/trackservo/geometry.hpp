#pragma once

#include <vector>

#include <Eigen/Core>

#include "trackservo/common.hpp"

namespace trackservo {

/// Normalized image coordinates. The vertical dimension spans [-1, 1];
/// the horizontal spans [-aspect, aspect] (square pixels assumed).
struct Point2 {
  double u = 0.0;
  double v = 0.0;

  Vec2 vec() const { return Vec2(u, v); }
  static Point2 from(const Vec2& x) { return {x.x(), x.y()}; }
};

inline double distance(const Point2& a, const Point2& b) {
  return std::hypot(a.u - b.u, a.v - b.v);
}

/// Proper rigid transform: x_out = R x_in + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(rotation.transpose() * translation);
    return out;
  }

  RigidTransform compose(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  static RigidTransform identity() { return {}; }

  bool is_orthonormal(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).norm() < tol &&
           std::abs(rotation.determinant() - 1.0) < tol;
  }
};

/// Pinhole camera with a vertical field of view; no distortion and no
/// calibration beyond the field of view itself.
struct CameraModel {
  double vertical_fov = M_PI / 2.0;
  double aspect = 1.0;

  // Vertical half-extent of the image plane at unit depth.
  double half_extent() const { return std::tan(vertical_fov / 2.0); }
};

struct Projection {
  Point2 point;
  double depth = 0.0;
};

/// Jacobian of the image positions of n points with respect to a
/// scene-relative camera twist, stacked two rows per point.
/// dof=4 columns: (x, y, z, rz); dof=6: (x, y, z, tilt-x, tilt-y, rz).
struct JacobianBlock {
  Eigen::MatrixXd rows;  // 2n x dof
  int dof = 4;
  int point_count = 0;
};

/// Perspective projection of a world point into a camera whose pose is
/// given camera-to-world. Throws BehindCamera when camera-frame z <= 1e-6.
Projection project(const Vec3& world_point, const RigidTransform& camera_pose,
                   const CameraModel& camera);

JacobianBlock image_jacobian(const std::vector<Point2>& points, int dof);

/// Projects every column after the first two out of the span of the two
/// translation columns (jointly, via an internal orthonormal basis).
/// The translation columns themselves are returned unchanged.
JacobianBlock orthogonalize_last_columns(const JacobianBlock& j);

/// Builds an in-plane rigid transform from 7 raw values: the first 4 fill
/// the upper-left 2x2 rotation block row-major, the last 3 the translation.
/// The block's rows are orthonormalized by projection and the second row is
/// sign-flipped if needed so det = +1; the third row is [0,0,1].
RigidTransform constrain_inplane_rotation(const Eigen::Matrix<double, 7, 1>& raw);

/// First-order exponential update: pose * exp(dt * twist), twist given in
/// the body (camera) frame as (linear, angular).
RigidTransform integrate_twist(const RigidTransform& pose, const Vec6& twist,
                               double dt);

/// Rotation angle of R in radians.
double rotation_angle(const Mat3& r);

/// Rodrigues' formula for the rotation about axis-angle vector w.
Mat3 rotation_exp(const Vec3& w);

}  // namespace trackservo
