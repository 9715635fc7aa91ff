#pragma once

#include <string>
#include <vector>

#include "trackservo/command.hpp"
#include "trackservo/common.hpp"
#include "trackservo/geometry.hpp"

namespace trackservo {

/// One tracked point in one frame.
struct PointState {
  int64_t id = 0;
  Point2 pos{};
  bool occluded = true;
  double visibility = 0.0;
};

using FrameSlice = std::vector<PointState>;

struct ServoConfig {
  double visible_fraction = 0.30;
  double follow_threshold_px = 12.0;
  double final_threshold_px = 2.0;
  double final_growth = 1.01;
  double error_percentile = 30.0;
  double translation_gain = 0.5;
  double rotation_gain = 0.25;
  double command_clamp = 0.05;  // per-axis, units per step
  int dof = 4;
  bool bidirectional = true;
  bool orthogonalize = true;
};

enum class TargetMode { FollowDemo, FinalAverage };

struct ServoTarget {
  std::vector<int64_t> ids;
  std::vector<Point2> goals;
  std::vector<double> goal_visibility;
  std::vector<char> goal_occluded;
  TargetMode mode = TargetMode::FollowDemo;
  int demo_index = -1;
  int frame_index = -1;
};

/// Ranks points by summed current + demo visibility and keeps the top
/// visible fraction (ceil, at least one); points occluded in either frame
/// are excluded while enough remain.
std::vector<int64_t> select_points(const FrameSlice& current,
                                   const FrameSlice& demo_frame,
                                   const ServoConfig& cfg);

/// Index of the demo whose segment-initial frame is nearest the current
/// detections (mean distance over mutually visible points; ties -> lowest).
int select_demo(const FrameSlice& current,
                const std::vector<FrameSlice>& demo_initial_frames);

/// Bidirectional orthogonalized least-squares controller step. `p` and `g`
/// must cover the same point ids in the same order.
ControlCommand servo_step(const std::vector<Point2>& p,
                          const std::vector<Point2>& g, const ServoConfig& cfg);

struct PhaseState {
  TargetMode mode = TargetMode::FollowDemo;
  int frame = 0;
  double threshold = 12.0;
  bool complete = false;
};

PhaseState make_phase_state(int start_frame, const ServoConfig& cfg);

/// Advances the follow/final state machine from per-point pixel errors.
/// In the final phase the threshold grows by final_growth on every call.
PhaseState advance(const PhaseState& state, const std::vector<double>& pixel_errors,
                   const ServoConfig& cfg, int last_frame);

/// Visibility-weighted average of the demos' segment-final positions.
ServoTarget final_target(const std::vector<FrameSlice>& demo_final_frames,
                         const std::vector<int64_t>& point_ids);

struct ForceLaw {
  double target_n = 1.5;
  double band_n = 0.3;
  double kp = 0.02;  // length units per (Newton * step); positive = press
};

struct ForceStepResult {
  ControlCommand command;
  bool advance_gate = false;
};

/// Replaces the vertical command with kp * (target - f); the gate opens when
/// the measured force is within the band of the target.
ForceStepResult force_feedback_step(double force_n, const ControlCommand& visual,
                                    const ForceLaw& law = ForceLaw{});

struct TraceRecord {
  int step = 0;
  int stage = 0;
  int frame = 0;
  TargetMode mode = TargetMode::FollowDemo;
  double threshold = 0.0;
  double error_percentile_px = 0.0;
  std::vector<int64_t> selected;
  ControlCommand command;
};

/// One line per control step, key=value fields.
std::string format_trace(const TraceRecord& rec);

}  // namespace trackservo
