#include "trackservo/segmentation.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Geometry>

#include "trackservo/errors.hpp"

namespace trackservo {

namespace {

bool above(double value, double threshold) { return value > threshold; }

}  // namespace

std::vector<SegmentBoundary> detect_gripper_events(const Eigen::VectorXd& gripper,
                                                   double threshold) {
  std::vector<SegmentBoundary> out;
  for (int t = 1; t < gripper.size(); ++t) {
    const bool prev = above(gripper(t - 1), threshold);
    const bool cur = above(gripper(t), threshold);
    if (prev && !cur) out.push_back({t, BoundaryKind::GraspStart});
    if (!prev && cur) out.push_back({t, BoundaryKind::GraspEnd});
  }
  return out;
}

Eigen::VectorXd gaussian_smooth(const Eigen::VectorXd& x, double std_frames) {
  if (std_frames <= 0.0 || x.size() < 2) return x;
  const int radius = static_cast<int>(std::ceil(3.0 * std_frames));
  Eigen::VectorXd kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) {
    kernel(i + radius) = std::exp(-0.5 * (i / std_frames) * (i / std_frames));
  }
  kernel /= kernel.sum();
  const auto n = static_cast<int>(x.size());
  Eigen::VectorXd out(n);
  for (int t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      int idx = t + i;
      if (idx < 0) idx = -idx;              // reflect
      if (idx >= n) idx = 2 * n - 2 - idx;
      idx = std::clamp(idx, 0, n - 1);
      acc += kernel(i + radius) * x(idx);
    }
    out(t) = acc;
  }
  return out;
}

std::vector<SegmentBoundary> detect_force_events(const Eigen::VectorXd& force,
                                                 const SegmentationConfig& cfg,
                                                 double dt) {
  if (dt <= 0.0) throw InvalidConfig("detect_force_events: dt must be known");
  const Eigen::VectorXd smoothed = gaussian_smooth(force, cfg.smoothing_kernel_std / dt);
  const int half = std::max(1, static_cast<int>(std::round(cfg.local_max_window / dt / 2.0)));
  const auto n = static_cast<int>(force.size());
  Eigen::VectorXd normalized(n);
  for (int t = 0; t < n; ++t) {
    double local_max = 0.0;
    for (int i = std::max(0, t - half); i <= std::min(n - 1, t + half); ++i) {
      local_max = std::max(local_max, smoothed(i));
    }
    normalized(t) = smoothed(t) / std::max(cfg.max_force, local_max);
  }
  std::vector<SegmentBoundary> out;
  for (int t = 1; t < n; ++t) {
    const bool prev = above(normalized(t - 1), cfg.force_event_level);
    const bool cur = above(normalized(t), cfg.force_event_level);
    if (!prev && cur) out.push_back({t, BoundaryKind::ForceStart});
    if (prev && !cur) out.push_back({t, BoundaryKind::ForceEnd});
  }
  return out;
}

std::vector<SegmentBoundary> detect_boundaries(const Demo& demo,
                                               const SegmentationConfig& cfg) {
  std::vector<SegmentBoundary> out =
      detect_gripper_events(demo.gripper_openness, cfg.gripper_open_threshold);
  const std::vector<SegmentBoundary> force =
      detect_force_events(demo.vertical_force, cfg, demo.dt);
  out.insert(out.end(), force.begin(), force.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const SegmentBoundary& a, const SegmentBoundary& b) {
                     return a.frame < b.frame;
                   });
  return out;
}

double motion_metric(const Demo& demo, int frame, const SegmentationConfig& cfg) {
  const int t_count = demo.frames();
  int t = std::min(frame, t_count - 2);
  if (t < 0) return 0.0;
  const Vec3 dv =
      (demo.camera[t + 1].translation - demo.camera[t].translation) / demo.dt;
  const double df =
      (demo.gripper_openness(t + 1) - demo.gripper_openness(t)) / demo.dt;
  return dv.squaredNorm() / cfg.ee_velocity_scale +
         df * df / cfg.finger_velocity_scale;
}

namespace {

RigidTransform interpolate_pose(const RigidTransform& a, const RigidTransform& b,
                                double s) {
  RigidTransform out;
  out.translation = (1 - s) * a.translation + s * b.translation;
  const Eigen::Quaterniond qa(a.rotation);
  const Eigen::Quaterniond qb(b.rotation);
  out.rotation = qa.slerp(s, qb).toRotationMatrix();
  return out;
}

}  // namespace

ResampledSlice resample_segment(const Demo& demo, int begin, int end,
                                const SegmentationConfig& cfg) {
  const int m = end - begin;
  if (m < 2 || begin < 0 || end > demo.frames()) {
    throw InvalidConfig("resample_segment: segment needs >= 2 frames in range");
  }
  std::vector<double> cum(m, 0.0);
  for (int j = 0; j + 1 < m; ++j) {
    cum[j + 1] = cum[j] + motion_metric(demo, begin + j, cfg) * demo.dt;
  }
  const double total = cum[m - 1];
  if (total <= 0.0) {
    throw ZeroMotionSegment("segment has zero accumulated motion");
  }
  const int L = std::max(2, cfg.resample_length);
  ResampledSlice out;
  out.source_time.resize(L);
  out.camera.resize(L);
  out.gripper.resize(L);
  out.tracks.resize(demo.tracks.points(), L);
  out.tracks.point_ids = demo.tracks.point_ids;
  out.tracks.source_body = demo.tracks.source_body;

  for (int k = 0; k < L; ++k) {
    const double target = total * k / (L - 1);
    // Earliest frame interval containing the target cumulative motion.
    // The endpoints always map to the segment's first/last frame exactly.
    int j = 0;
    double frac = 0.0;
    if (k == L - 1) {
      j = m - 2;
      frac = 1.0;
    } else if (k > 0) {
      while (j + 1 < m - 1 && cum[j + 1] < target) ++j;
      const double span = cum[j + 1] - cum[j];
      frac = span > 0.0 ? std::clamp((target - cum[j]) / span, 0.0, 1.0) : 0.0;
    }
    const double pos = j + frac;
    out.source_time[k] = pos;
    const int f0 = begin + j;
    const int f1 = f0 + 1;
    out.camera[k] = interpolate_pose(demo.camera[f0], demo.camera[f1], frac);
    out.gripper(k) =
        (1 - frac) * demo.gripper_openness(f0) + frac * demo.gripper_openness(f1);
    for (int i = 0; i < demo.tracks.points(); ++i) {
      if (frac == 0.0 || frac == 1.0) {
        const int f = frac == 0.0 ? f0 : f1;
        out.tracks.occluded(i, k) = demo.tracks.occluded(i, f);
        out.tracks.visibility(i, k) = demo.tracks.visibility(i, f);
        out.tracks.u(i, k) = demo.tracks.u(i, f);
        out.tracks.v(i, k) = demo.tracks.v(i, f);
        continue;
      }
      const bool both_visible =
          !demo.tracks.is_occluded(i, f0) && !demo.tracks.is_occluded(i, f1);
      if (both_visible) {
        out.tracks.occluded(i, k) = 0;
        out.tracks.u(i, k) = (1 - frac) * demo.tracks.u(i, f0) + frac * demo.tracks.u(i, f1);
        out.tracks.v(i, k) = (1 - frac) * demo.tracks.v(i, f0) + frac * demo.tracks.v(i, f1);
        out.tracks.visibility(i, k) = std::max(
            0.5 + 1e-3, (1 - frac) * demo.tracks.visibility(i, f0) +
                            frac * demo.tracks.visibility(i, f1));
      } else {
        out.tracks.occluded(i, k) = 1;
        out.tracks.visibility(i, k) = std::min(
            0.5 - 1e-3, 0.5 * (demo.tracks.visibility(i, f0) +
                               demo.tracks.visibility(i, f1)));
        out.tracks.u(i, k) = std::numeric_limits<double>::quiet_NaN();
        out.tracks.v(i, k) = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return out;
}

ConstantMotionResult extract_constant_motion(const std::vector<ResampledSlice>& demos,
                                             double dt) {
  if (demos.size() < 2) {
    throw InvalidConfig("extract_constant_motion needs >= 2 aligned demos");
  }
  const auto L = static_cast<int>(demos.front().camera.size());
  for (const auto& d : demos) {
    if (static_cast<int>(d.camera.size()) != L) {
      throw InvalidConfig("aligned demos must share the resampled length");
    }
  }
  const auto steps = L - 1;
  const auto n_demos = static_cast<int>(demos.size());

  std::vector<std::vector<double>> vertical(n_demos, std::vector<double>(steps));
  std::vector<std::vector<double>> durations(n_demos, std::vector<double>(steps));
  double v_max = 0.0;
  for (int d = 0; d < n_demos; ++d) {
    for (int k = 0; k < steps; ++k) {
      const double dur =
          std::max(1e-9, (demos[d].source_time[k + 1] - demos[d].source_time[k]) * dt);
      durations[d][k] = dur;
      const double dz = demos[d].camera[k + 1].translation.z() -
                        demos[d].camera[k].translation.z();
      vertical[d][k] = dz / dur;
      v_max = std::max(v_max, std::abs(vertical[d][k]));
    }
  }

  ConstantMotionResult out;
  out.mask.assign(steps, 0);
  out.mean_twist.assign(steps, Vec6::Zero());
  out.step_duration.assign(steps, 0.0);
  for (int k = 0; k < steps; ++k) {
    std::vector<double> vs(n_demos);
    for (int d = 0; d < n_demos; ++d) vs[d] = vertical[d][k];
    const double v_min = *std::min_element(vs.begin(), vs.end());
    const double v_std = std::sqrt(sample_variance(vs));
    out.mask[k] = (v_min > 0.5 * v_std && v_min > 0.03 * v_max) ? 1 : 0;

    Vec6 twist = Vec6::Zero();
    double dur = 0.0;
    for (int d = 0; d < n_demos; ++d) {
      const RigidTransform& a = demos[d].camera[k];
      const RigidTransform& b = demos[d].camera[k + 1];
      const Mat3 dR = a.rotation.transpose() * b.rotation;
      const Eigen::AngleAxisd aa(dR);
      Vec6 w;
      w.head<3>() = a.rotation.transpose() * (b.translation - a.translation);
      w.tail<3>() = aa.angle() * aa.axis();
      twist += w / durations[d][k];
      dur += durations[d][k];
    }
    out.mean_twist[k] = twist / n_demos;
    out.step_duration[k] = dur / n_demos;
  }
  return out;
}

}  // namespace trackservo
