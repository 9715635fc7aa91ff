#include "trackservo/plan.hpp"

#include <algorithm>
#include <cmath>

#include "trackservo/errors.hpp"

namespace trackservo {

PlanSkeleton plan_skeleton(const std::vector<Demo>& demos,
                           const std::vector<std::vector<SegmentBoundary>>& boundaries) {
  if (demos.empty() || boundaries.size() != demos.size()) {
    throw InvalidConfig("plan_skeleton: demos/boundaries size mismatch");
  }
  const auto& first = boundaries.front();
  for (const auto& b : boundaries) {
    if (b.size() != first.size()) {
      throw InconsistentDemos("demos disagree on the number of boundaries");
    }
    for (size_t i = 0; i < b.size(); ++i) {
      if (b[i].kind != first[i].kind) {
        throw InconsistentDemos("demos disagree on boundary kinds");
      }
    }
  }

  const auto d_count = demos.size();
  const auto b_count = first.size();
  PlanSkeleton out;
  int force_depth = 0;
  for (size_t seg = 0; seg <= b_count; ++seg) {
    SegmentSpan span;
    span.force = force_depth > 0;
    for (size_t d = 0; d < d_count; ++d) {
      const int begin = seg == 0 ? 0 : boundaries[d][seg - 1].frame;
      const int end =
          seg == b_count ? demos[d].frames() : boundaries[d][seg].frame;
      if (begin > end) throw InconsistentDemos("boundaries out of order");
      span.ranges.emplace_back(begin, end);
    }
    if (span.min_length() >= 2) {
      PlanSkeleton::Item item;
      item.span_index = static_cast<int>(out.spans.size());
      out.spans.push_back(span);
      out.order.push_back(item);
    }
    if (seg < b_count) {
      const BoundaryKind kind = first[seg].kind;
      if (kind == BoundaryKind::GraspStart || kind == BoundaryKind::GraspEnd) {
        PlanSkeleton::Item item;
        item.is_primitive = true;
        item.primitive = kind;
        out.order.push_back(item);
      } else if (kind == BoundaryKind::ForceStart) {
        ++force_depth;
      } else {
        force_depth = std::max(0, force_depth - 1);
      }
    }
  }
  return out;
}

namespace {

ConstantMotionProfile profile_from(const ConstantMotionResult& constant, int begin,
                                   int end) {
  ConstantMotionProfile p;
  for (int k = begin; k < end; ++k) {
    p.twists.push_back(constant.mean_twist[k]);
    p.durations.push_back(constant.step_duration[k]);
  }
  return p;
}

}  // namespace

MotionPlan build_plan(const PlanSkeleton& skeleton, const std::vector<SpanData>& data,
                      double dt, const PlanBuildConfig& cfg) {
  if (data.size() != skeleton.spans.size()) {
    throw InvalidConfig("build_plan: span data size mismatch");
  }
  MotionPlan plan;
  plan.dt = dt;
  for (const auto& item : skeleton.order) {
    if (item.is_primitive) {
      Stage stage;
      stage.kind = item.primitive == BoundaryKind::GraspStart
                       ? StageKind::GripperClose
                       : StageKind::GripperOpen;
      plan.stages.push_back(std::move(stage));
      continue;
    }
    const SegmentSpan& span = skeleton.spans[item.span_index];
    const SpanData& sd = data[item.span_index];
    if (sd.active.ids.empty()) {
      throw InvalidConfig("build_plan: servo span without active points");
    }
    Stage stage;
    stage.kind = span.force ? StageKind::ForceServo : StageKind::VisualServo;
    stage.active = sd.active;
    stage.follow_start.assign(span.ranges.size(), 0);

    // Leading constant-motion run: executed open-loop because the gripper
    // occludes the workspace right after a grasp or release.
    const auto& mask = sd.constant.mask;
    int run = 0;
    while (run < static_cast<int>(mask.size()) && mask[run]) ++run;
    if (run > 0 && !sd.source_time.empty()) {
      const auto steps = static_cast<int>(mask.size());
      if (run >= static_cast<int>(cfg.full_constant_cover * steps)) {
        stage.kind = StageKind::ConstantMotion;
        stage.profile = profile_from(sd.constant, 0, steps);
      } else if (run >= cfg.min_constant_run) {
        stage.prelude = profile_from(sd.constant, 0, run);
        for (size_t d = 0; d < span.ranges.size(); ++d) {
          const double src = sd.source_time[d][run];
          const int len = span.ranges[d].second - span.ranges[d].first;
          stage.follow_start[d] =
              std::min(len - 1, static_cast<int>(std::ceil(src)));
        }
      }
    }
    plan.stages.push_back(std::move(stage));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Execution

FrameSlice frame_slice(const TrackSet& tracks, int frame) {
  FrameSlice out;
  out.reserve(tracks.points());
  for (int i = 0; i < tracks.points(); ++i) {
    PointState p;
    p.id = tracks.point_ids[i];
    p.occluded = tracks.is_occluded(i, frame);
    p.visibility = tracks.visibility(i, frame);
    if (!p.occluded) p.pos = tracks.position(i, frame);
    out.push_back(p);
  }
  return out;
}

namespace {

struct Budget {
  int limit;
  int used = 0;
  void spend(int steps = 1) {
    used += steps;
    if (used > limit) {
      throw StepLimitExceeded("step limit " + std::to_string(limit) + " exceeded");
    }
  }
};

void run_profile(const ConstantMotionProfile& profile, SimWorld& world,
                 Budget& budget, ExecutionReport& report) {
  for (size_t k = 0; k < profile.twists.size(); ++k) {
    budget.spend();
    world.apply_camera_twist(profile.twists[k], profile.durations[k]);
    ++report.total_steps;
  }
}

// Commands describe the desired apparent point motion; the camera applies
// the negated twist. Force-stage vertical is press-positive and maps to the
// +z camera axis (the camera looks at the scene).
Vec6 command_to_camera_twist(const ControlCommand& cmd, bool force_vertical) {
  Vec6 t = -cmd.as_twist();
  if (cmd.dof == 4) {
    t(3) = 0.0;
    t(4) = 0.0;
  }
  if (force_vertical) t(2) = cmd.vz;
  return t;
}

struct ServoStageResult {
  bool completed = false;
  double final_error_px = 0.0;
  int demo_followed = -1;
  std::vector<double> last_errors;
};

ServoStageResult run_servo_stage(const Stage& stage, int stage_index, SimWorld& world,
                                 const ExecuteConfig& cfg, Budget& budget,
                                 ExecutionReport& report) {
  const auto& demos = stage.active.reference;
  const auto d_count = static_cast<int>(demos.size());

  ServoStageResult result;
  if (!stage.prelude.empty()) {
    run_profile(stage.prelude, world, budget, report);
  }

  // Pick the demonstration to follow, once per stage.
  TrackSet obs = world.observe(stage.active.ids);
  FrameSlice current = frame_slice(obs, 0);
  std::vector<FrameSlice> initials;
  for (int d = 0; d < d_count; ++d) {
    initials.push_back(frame_slice(demos[d], stage.follow_start[d]));
  }
  const int demo = select_demo(current, initials);
  result.demo_followed = demo;
  const int last_frame = demos[demo].frames() - 1;

  std::vector<FrameSlice> finals;
  for (int d = 0; d < d_count; ++d) {
    finals.push_back(frame_slice(demos[d], demos[d].frames() - 1));
  }

  PhaseState state = make_phase_state(stage.follow_start[demo], cfg.servo);
  const bool force_stage = stage.kind == StageKind::ForceServo;

  while (!state.complete) {
    budget.spend();
    ++report.total_steps;
    obs = world.observe(stage.active.ids);
    current = frame_slice(obs, 0);

    FrameSlice goal_frame;
    if (state.mode == TargetMode::FollowDemo) {
      goal_frame = frame_slice(demos[demo], state.frame);
    } else {
      const ServoTarget target = final_target(finals, stage.active.ids);
      for (size_t i = 0; i < target.ids.size(); ++i) {
        PointState p;
        p.id = target.ids[i];
        p.pos = target.goals[i];
        p.occluded = false;
        p.visibility = target.goal_visibility[i];
        goal_frame.push_back(p);
      }
    }

    std::vector<int64_t> selected;
    try {
      selected = select_points(current, goal_frame, cfg.servo);
    } catch (const NoUsablePoints&) {
      continue;  // nothing visible this step; hold position
    }

    std::vector<Point2> p_cur, p_goal;
    std::vector<double> errors_px;
    for (int64_t id : selected) {
      const PointState* cur = nullptr;
      const PointState* goal = nullptr;
      for (const auto& ps : current) {
        if (ps.id == id) cur = &ps;
      }
      for (const auto& ps : goal_frame) {
        if (ps.id == id) goal = &ps;
      }
      if (!cur || !goal || cur->occluded || goal->occluded) continue;
      p_cur.push_back(cur->pos);
      p_goal.push_back(goal->pos);
      errors_px.push_back(to_pixels(distance(cur->pos, goal->pos)));
    }

    ControlCommand cmd;
    cmd.dof = cfg.servo.dof;
    if (p_cur.size() >= 2) {
      cmd = servo_step(p_cur, p_goal, cfg.servo);
    }
    bool gate = true;
    if (force_stage) {
      const ForceStepResult fr =
          force_feedback_step(world.vertical_force(), cmd, stage.force_law);
      cmd = fr.command;
      gate = fr.advance_gate;
    }
    world.apply_camera_twist(command_to_camera_twist(cmd, force_stage), 1.0);

    if (!errors_px.empty() && gate) {
      state = advance(state, errors_px, cfg.servo, last_frame);
    }

    TraceRecord rec;
    rec.step = report.total_steps;
    rec.stage = stage_index;
    rec.frame = state.frame;
    rec.mode = state.mode;
    rec.threshold = state.threshold;
    rec.error_percentile_px =
        errors_px.empty() ? -1.0
                          : percentile(errors_px, cfg.servo.error_percentile);
    rec.selected = selected;
    rec.command = cmd;
    report.trace.push_back(rec);
    result.last_errors = errors_px;
  }
  result.completed = true;
  result.final_error_px =
      result.last_errors.empty()
          ? 0.0
          : percentile(result.last_errors, cfg.servo.error_percentile);
  return result;
}

}  // namespace

ExecutionReport execute(const MotionPlan& plan, SimWorld& world,
                        const ExecuteConfig& cfg) {
  ExecutionReport report;
  Budget budget{cfg.step_limit};
  for (size_t s = 0; s < plan.stages.size(); ++s) {
    const Stage& stage = plan.stages[s];
    StageOutcome outcome;
    outcome.kind = stage.kind;
    const int steps_before = report.total_steps;
    switch (stage.kind) {
      case StageKind::GripperClose:
        world.set_gripper(true, cfg.grasp_radius);
        outcome.completed = true;
        break;
      case StageKind::GripperOpen:
        world.set_gripper(false, cfg.grasp_radius);
        outcome.completed = true;
        break;
      case StageKind::ConstantMotion:
        run_profile(stage.profile, world, budget, report);
        outcome.completed = true;
        break;
      case StageKind::VisualServo:
      case StageKind::ForceServo: {
        const ServoStageResult r =
            run_servo_stage(stage, static_cast<int>(s), world, cfg, budget, report);
        outcome.completed = r.completed;
        outcome.final_error_px = r.final_error_px;
        outcome.demo_followed = r.demo_followed;
        report.final_pixel_errors = r.last_errors;
        break;
      }
    }
    outcome.steps = report.total_steps - steps_before;
    report.stages.push_back(outcome);
  }
  report.final_camera = world.camera();
  for (size_t b = 0; b < world.scene().bodies.size(); ++b) {
    report.final_body_poses.push_back(world.body_pose(static_cast<int>(b)));
  }
  return report;
}

bool judge_success(const ExecutionReport& report, const SuccessCriteria& criteria) {
  if (report.final_body_poses.empty()) return false;
  for (const auto& stage : report.stages) {
    if (!stage.completed) return false;
  }
  const RigidTransform achieved =
      report.final_body_poses[criteria.target_body].inverse().compose(
          report.final_camera);
  const RigidTransform delta =
      criteria.expected_camera_in_target.inverse().compose(achieved);
  const double translation_err = delta.translation.norm();
  const double rotation_err = rotation_angle(delta.rotation);
  return translation_err <= criteria.translation_tol &&
         rotation_err <= criteria.rotation_tol_rad;
}

}  // namespace trackservo
