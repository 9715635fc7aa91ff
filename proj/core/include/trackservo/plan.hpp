#pragma once

#include <vector>

#include "trackservo/active_points.hpp"
#include "trackservo/segmentation.hpp"
#include "trackservo/servo.hpp"

namespace trackservo {

enum class StageKind {
  VisualServo,
  GripperOpen,
  GripperClose,
  ForceServo,
  ConstantMotion
};

struct ConstantMotionProfile {
  std::vector<Vec6> twists;       // camera twist per step
  std::vector<double> durations;  // seconds per step
  bool empty() const { return twists.empty(); }
};

struct Stage {
  StageKind kind = StageKind::VisualServo;
  ActivePointSet active;
  std::vector<int> follow_start;   // per demo, frame offset into the segment
  ConstantMotionProfile prelude;   // open-loop prefix (post-grasp occlusion)
  ConstantMotionProfile profile;   // pure constant-motion stages
  ForceLaw force_law;
};

struct MotionPlan {
  std::vector<Stage> stages;
  double dt = 0.1;
};

/// One inter-boundary interval, with per-demo frame ranges.
struct SegmentSpan {
  std::vector<std::pair<int, int>> ranges;
  bool force = false;
  int min_length() const {
    int m = std::numeric_limits<int>::max();
    for (const auto& r : ranges) m = std::min(m, r.second - r.first);
    return m;
  }
};

struct PlanSkeleton {
  struct Item {
    bool is_primitive = false;
    BoundaryKind primitive = BoundaryKind::GraspStart;
    int span_index = -1;
  };
  std::vector<Item> order;
  std::vector<SegmentSpan> spans;  // non-degenerate spans, in order
};

/// Checks that all demos share the boundary structure (same kinds in the
/// same order) and lays out the alternating segment/primitive skeleton.
/// Segments shorter than 2 frames in any demo are dropped.
PlanSkeleton plan_skeleton(const std::vector<Demo>& demos,
                           const std::vector<std::vector<SegmentBoundary>>& boundaries);

struct PlanBuildConfig {
  int min_constant_run = 5;        // resampled steps
  double full_constant_cover = 0.9;
};

/// Per-span ingredients computed by the pipeline.
struct SpanData {
  ActivePointSet active;
  ConstantMotionResult constant;                 // masks on resampled steps
  std::vector<std::vector<double>> source_time;  // per demo resample mapping
};

MotionPlan build_plan(const PlanSkeleton& skeleton, const std::vector<SpanData>& data,
                      double dt, const PlanBuildConfig& cfg = PlanBuildConfig{});

// ---------------------------------------------------------------------------
// Execution

struct StageOutcome {
  StageKind kind = StageKind::VisualServo;
  bool completed = false;
  int steps = 0;
  double final_error_px = 0.0;
  int demo_followed = -1;
};

struct ExecutionReport {
  std::vector<StageOutcome> stages;
  std::vector<double> final_pixel_errors;
  std::vector<TraceRecord> trace;
  bool success = false;
  int total_steps = 0;
  RigidTransform final_camera;
  std::vector<RigidTransform> final_body_poses;
};

struct ExecuteConfig {
  ServoConfig servo;
  int step_limit = 2000;
  double grasp_radius = 0.2;
};

FrameSlice frame_slice(const TrackSet& tracks, int frame);

/// Runs the plan stages sequentially against the world. Throws
/// StepLimitExceeded when the budget runs out mid-plan.
ExecutionReport execute(const MotionPlan& plan, SimWorld& world,
                        const ExecuteConfig& cfg);

struct SuccessCriteria {
  RigidTransform expected_camera_in_target;
  int target_body = 0;
  double translation_tol = 0.02;  // absolute, scene units
  double rotation_tol_rad = 5.0 * M_PI / 180.0;
};

bool judge_success(const ExecutionReport& report, const SuccessCriteria& criteria);

}  // namespace trackservo
