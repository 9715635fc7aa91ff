#pragma once

#include <vector>

#include <Eigen/Core>

#include "trackservo/scene.hpp"

namespace trackservo {

struct SegmentationConfig {
  double gripper_open_threshold = 0.41;
  double max_force = 8.0;             // Newtons; floor of the normalizer
  double smoothing_kernel_std = 2.5;  // seconds
  double local_max_window = 5.0;      // seconds, centered
  double force_event_level = 0.5;
  int resample_length = 100;
  double ee_velocity_scale = 0.04;    // motion metric denominators
  double finger_velocity_scale = 0.5;
};

enum class BoundaryKind { GraspStart, GraspEnd, ForceStart, ForceEnd };

struct SegmentBoundary {
  int frame = 0;
  BoundaryKind kind = BoundaryKind::GraspStart;
};

/// Threshold crossings of the gripper series: downward = grasp-start,
/// upward = grasp-end. Exact equality counts as below the threshold.
std::vector<SegmentBoundary> detect_gripper_events(const Eigen::VectorXd& gripper,
                                                   double threshold);

/// Gaussian-smoothed, locally normalized force signal crossing the event
/// level. dt converts the config's time constants to frames.
std::vector<SegmentBoundary> detect_force_events(const Eigen::VectorXd& force,
                                                 const SegmentationConfig& cfg,
                                                 double dt);

std::vector<SegmentBoundary> detect_boundaries(const Demo& demo,
                                               const SegmentationConfig& cfg);

/// Per-frame motion metric: |v_ee|^2 / 0.04 + |v_fingers|^2 / 0.5.
double motion_metric(const Demo& demo, int frame, const SegmentationConfig& cfg);

/// One demo's slice of a segment, resampled along cumulative motion.
struct ResampledSlice {
  std::vector<double> source_time;        // fractional frame per sample
  std::vector<RigidTransform> camera;
  Eigen::VectorXd gripper;
  TrackSet tracks;
};

/// Resamples frames [begin, end) of the demo into `resample_length` samples
/// spaced uniformly in cumulative motion metric.
ResampledSlice resample_segment(const Demo& demo, int begin, int end,
                                const SegmentationConfig& cfg);

struct AlignedSegment {
  std::vector<ResampledSlice> demos;
  std::vector<char> constant_motion_mask;       // per resampled step
  std::vector<Vec6> mean_twist;                 // camera twist per step
  std::vector<double> step_duration;            // seconds per step (mean)
};

struct ConstantMotionResult {
  std::vector<char> mask;
  std::vector<Vec6> mean_twist;
  std::vector<double> step_duration;
};

/// Flags resampled steps where every demo reliably shares the same vertical
/// motion: v_min > 0.5 v_std and v_min > 0.03 v_max (vertical = world +z).
ConstantMotionResult extract_constant_motion(const std::vector<ResampledSlice>& demos,
                                             double dt);

/// Smooths with a Gaussian kernel (std in frames), truncated at 3 sigma,
/// renormalized, reflected at the edges. Exposed for tests.
Eigen::VectorXd gaussian_smooth(const Eigen::VectorXd& x, double std_frames);

}  // namespace trackservo
