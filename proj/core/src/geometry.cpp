#include "trackservo/geometry.hpp"

#include <Eigen/Dense>

#include "trackservo/errors.hpp"

namespace trackservo {

Projection project(const Vec3& world_point, const RigidTransform& camera_pose,
                   const CameraModel& camera) {
  const Vec3 cam = camera_pose.inverse().apply(world_point);
  if (cam.z() <= 1e-6) {
    throw BehindCamera("camera-frame z = " + std::to_string(cam.z()));
  }
  const double s = camera.half_extent();
  Projection out;
  out.point.u = cam.x() / cam.z() / s;
  out.point.v = cam.y() / cam.z() / s;
  out.depth = cam.z();
  return out;
}

JacobianBlock image_jacobian(const std::vector<Point2>& points, int dof) {
  if (points.empty()) {
    throw InvalidConfig("image_jacobian needs at least one point");
  }
  if (dof != 4 && dof != 6) {
    throw InvalidConfig("dof must be 4 or 6");
  }
  JacobianBlock j;
  j.dof = dof;
  j.point_count = static_cast<int>(points.size());
  j.rows.resize(2 * points.size(), dof);
  for (size_t i = 0; i < points.size(); ++i) {
    const double u = points[i].u;
    const double v = points[i].v;
    const auto r = static_cast<Eigen::Index>(2 * i);
    if (dof == 4) {
      j.rows.row(r) << 1, 0, -u, -v;
      j.rows.row(r + 1) << 0, 1, -v, u;
    } else {
      j.rows.row(r) << 1, 0, -u, -u * v, 1 + u * u, -v;
      j.rows.row(r + 1) << 0, 1, -v, -1 - v * v, u * v, u;
    }
  }
  return j;
}

JacobianBlock orthogonalize_last_columns(const JacobianBlock& j) {
  if (j.rows.rows() < 4) {
    throw InvalidConfig("orthogonalize_last_columns needs >= 2 points");
  }
  // Orthonormal basis of the translation span; later columns are projected
  // against the span jointly rather than column by column.
  Eigen::VectorXd q0 = j.rows.col(0);
  const double n0 = q0.norm();
  if (n0 < 1e-12) {
    throw DegenerateTranslation("first translation column is zero");
  }
  q0 /= n0;
  Eigen::VectorXd q1 = j.rows.col(1) - q0 * q0.dot(j.rows.col(1));
  const double n1 = q1.norm();
  if (n1 < 1e-9 * j.rows.col(1).norm() || n1 < 1e-12) {
    throw DegenerateTranslation("translation columns are linearly dependent");
  }
  q1 /= n1;

  JacobianBlock out = j;
  for (Eigen::Index c = 2; c < j.rows.cols(); ++c) {
    Eigen::VectorXd col = j.rows.col(c);
    col -= q0 * q0.dot(col);
    col -= q1 * q1.dot(col);
    out.rows.col(c) = col;
  }
  return out;
}

RigidTransform constrain_inplane_rotation(const Eigen::Matrix<double, 7, 1>& raw) {
  Eigen::RowVector2d r0(raw(0), raw(1));
  Eigen::RowVector2d r1(raw(2), raw(3));
  const double n0 = r0.norm();
  if (n0 < 1e-8) {
    throw DegenerateRotation("first row of the 2x2 block is near zero");
  }
  r0 /= n0;
  r1 -= (r1 * r0.transpose())(0) * r0;
  const double n1 = r1.norm();
  if (n1 < 1e-8) {
    throw DegenerateRotation("2x2 block has rank < 2");
  }
  r1 /= n1;
  const double det = r0(0) * r1(1) - r0(1) * r1(0);
  if (det < 0.0) {
    r1 = -r1;
  }
  RigidTransform out;
  out.rotation.setZero();
  out.rotation(0, 0) = r0(0);
  out.rotation(0, 1) = r0(1);
  out.rotation(1, 0) = r1(0);
  out.rotation(1, 1) = r1(1);
  out.rotation(2, 2) = 1.0;
  out.translation = Vec3(raw(4), raw(5), raw(6));
  return out;
}

Mat3 rotation_exp(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    Mat3 k;
    k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
    return Mat3::Identity() + k;
  }
  const Vec3 a = w / theta;
  Mat3 k;
  k << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return Mat3::Identity() + std::sin(theta) * k + (1 - std::cos(theta)) * k * k;
}

RigidTransform integrate_twist(const RigidTransform& pose, const Vec6& twist,
                               double dt) {
  RigidTransform delta;
  delta.rotation = rotation_exp(twist.tail<3>() * dt);
  delta.translation = twist.head<3>() * dt;
  return pose.compose(delta);
}

double rotation_angle(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

}  // namespace trackservo
