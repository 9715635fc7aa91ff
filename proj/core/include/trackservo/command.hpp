#pragma once

#include <cmath>

#include "trackservo/common.hpp"
#include "trackservo/errors.hpp"

namespace trackservo {

/// End-effector-frame velocity command. Components are ordered
/// (x, y, z, tilt-x, tilt-y, rz); 4-DOF commands leave the tilts at zero.
/// Positive z is a zoom-out: the commanded values describe the desired
/// apparent motion of the tracked points, so the executor applies the
/// negated twist to the camera.
struct ControlCommand {
  int dof = 4;
  double vx = 0.0, vy = 0.0, vz = 0.0;
  double wx = 0.0, wy = 0.0, rz = 0.0;

  Vec6 as_twist() const {
    Vec6 t;
    t << vx, vy, vz, wx, wy, rz;
    return t;
  }

  static ControlCommand from_solution(const Eigen::VectorXd& v, int dof) {
    ControlCommand c;
    c.dof = dof;
    c.vx = v(0);
    c.vy = v(1);
    c.vz = v(2);
    if (dof == 6) {
      c.wx = v(3);
      c.wy = v(4);
      c.rz = v(5);
    } else {
      c.rz = v(3);
    }
    return c;
  }

  bool finite() const {
    return std::isfinite(vx) && std::isfinite(vy) && std::isfinite(vz) &&
           std::isfinite(wx) && std::isfinite(wy) && std::isfinite(rz);
  }

  double norm() const { return as_twist().norm(); }
};

}  // namespace trackservo
