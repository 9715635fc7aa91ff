#include "trackservo/runner.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <Eigen/Geometry>

#include "trackservo/errors.hpp"

namespace trackservo {

namespace {

Body make_body(Rng& rng, int points, double radius, double height,
               bool background = false) {
  Body body;
  body.is_background = background;
  body.points.resize(points, 3);
  for (int i = 0; i < points; ++i) {
    body.points.row(i) << rng.uniform(-radius, radius), rng.uniform(-radius, radius),
        rng.uniform(0.25, 1.0) * height;
  }
  body.poses.assign(1, RigidTransform::identity());
  return body;
}

RigidTransform placement(double x, double y, double yaw) {
  RigidTransform pose;
  pose.rotation = rotation_exp(Vec3(0, 0, yaw));
  pose.translation = Vec3(x, y, 0.0);
  return pose;
}

RigidTransform average_pose(const std::vector<RigidTransform>& poses) {
  Vec3 t = Vec3::Zero();
  Eigen::Vector4d q_sum = Eigen::Vector4d::Zero();
  Eigen::Quaterniond q0(poses.front().rotation);
  for (const auto& p : poses) {
    t += p.translation;
    Eigen::Quaterniond q(p.rotation);
    if (q.coeffs().dot(q0.coeffs()) < 0) q.coeffs() = -q.coeffs();
    q_sum += q.coeffs();
  }
  Eigen::Quaterniond q(q_sum / poses.size());
  q.normalize();
  RigidTransform out;
  out.rotation = q.toRotationMatrix();
  out.translation = t / static_cast<double>(poses.size());
  return out;
}

struct SuitePlacements {
  std::vector<RigidTransform> object;
  std::vector<RigidTransform> target;
  std::vector<Vec3> camera_start;
  std::vector<double> camera_start_yaw;
};

DemoSuite make_manipulation_suite(int n_demos, int frames, const NoiseConfig& noise,
                                  uint64_t seed, double placement_noise,
                                  const SuitePlacements& placements) {
  Rng rng(derive_seed(seed, 0x5111));
  DemoSuite suite;
  suite.noise = noise;
  suite.workspace_extent = 1.0;  // full table width
  suite.object_body = 0;
  suite.target_body = 1;

  RigidScene base;
  base.extent = 0.5;
  base.frames = 1;
  base.seed = seed;
  base.bodies.push_back(make_body(rng, 40, 0.05, 0.035));   // object
  base.bodies.push_back(make_body(rng, 60, 0.13, 0.006));   // target plate
  Body background = make_body(rng, 140, 0.5, 0.0, true);
  background.points.col(2).setZero();
  base.bodies.push_back(background);
  suite.base_scene = base;

  // Queries: every object and target point plus a background sample.
  for (int64_t id = 0; id < 100; ++id) suite.query_ids.push_back(id);
  std::vector<int64_t> bg_ids;
  for (int64_t id = 100; id < 240; ++id) bg_ids.push_back(id);
  rng.shuffle(bg_ids);
  for (int i = 0; i < 60; ++i) suite.query_ids.push_back(bg_ids[i]);
  std::sort(suite.query_ids.begin(), suite.query_ids.end());

  std::vector<RigidTransform> final_relative;
  for (int d = 0; d < n_demos; ++d) {
    RigidScene scene = base;
    scene.bodies[0].poses = {placements.object[d]};
    scene.bodies[1].poses = {placements.target[d]};
    suite.demo_scenes.push_back(scene);

    const Vec3 obj = placements.object[d].translation;
    const Vec3 tgt = placements.target[d].translation;
    const double obj_yaw =
        std::atan2(placements.object[d].rotation(1, 0), placements.object[d].rotation(0, 0));
    const double tgt_yaw =
        std::atan2(placements.target[d].rotation(1, 0), placements.target[d].rotation(0, 0));

    DemoScript script;
    script.frames = frames;
    script.dt = 0.1;
    script.gripper_transition_frames = 0;
    const auto f = [&](double frac) { return static_cast<int>(frac * (frames - 1)); };
    const Vec2 place_jitter(rng.normal(0.0, placement_noise),
                            rng.normal(0.0, placement_noise));
    script.waypoints = {
        {0, placements.camera_start[d], placements.camera_start_yaw[d]},
        {f(0.30), obj + Vec3(0, 0, 0.48), obj_yaw},
        {f(0.45), obj + Vec3(0, 0, 0.30), obj_yaw},
        {f(0.58), obj + Vec3(0, 0, 0.50), obj_yaw},
        {f(0.78), tgt + Vec3(0, 0, 0.50), tgt_yaw},
        {f(0.93), tgt + Vec3(place_jitter.x(), place_jitter.y(), 0.30), tgt_yaw},
        {frames - 1, tgt + Vec3(place_jitter.x(), place_jitter.y(), 0.30), tgt_yaw},
    };
    script.grasps = {{f(0.48), true, 0}, {frames - 1, false, 0}};
    suite.scripts.push_back(script);
    suite.demos.push_back(generate_demo(scene, script, suite.query_ids, noise,
                                        derive_seed(seed, 0xDE30 + d)));

    const RigidScene posed = script_scene(scene, script);
    const RigidTransform camera_final = script_camera(script).back();
    final_relative.push_back(
        placements.target[d].inverse().compose(camera_final));
    const RigidTransform object_final =
        placements.target[d].inverse().compose(posed.bodies[0].poses.back());
    suite.demo_placements_mm.push_back(object_final.translation.head<2>() * 1000.0);
  }
  suite.expected_camera_in_target = average_pose(final_relative);
  return suite;
}

}  // namespace

DemoSuite make_pick_place_suite(const PickPlaceConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0x9B));
  SuitePlacements p;
  for (int d = 0; d < cfg.demos; ++d) {
    p.object.push_back(placement(-0.16 + rng.uniform(-0.09, 0.09),
                                 rng.uniform(-0.14, 0.14), rng.uniform(-0.25, 0.25)));
    const double tx = cfg.vary_target ? 0.19 + rng.uniform(-0.09, 0.09) : 0.19;
    const double ty = cfg.vary_target ? rng.uniform(-0.14, 0.14) : 0.0;
    const double tyaw = cfg.vary_target ? rng.uniform(-0.25, 0.25) : 0.0;
    p.target.push_back(placement(tx, ty, tyaw));
    p.camera_start.push_back(
        Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.55));
    p.camera_start_yaw.push_back(rng.uniform(-0.2, 0.2));
  }
  return make_manipulation_suite(cfg.demos, cfg.frames, cfg.noise, cfg.seed,
                                 cfg.placement_noise, p);
}

DemoSuite make_precision_suite(const PrecisionSuiteConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0x9C));
  // Three distinct gear/target configurations, each demonstrated twice.
  std::vector<RigidTransform> configs = {
      placement(0.16, -0.12, 0.0),
      placement(0.22, 0.02, 0.2),
      placement(0.14, 0.15, -0.2),
  };
  SuitePlacements p;
  for (int d = 0; d < cfg.demos; ++d) {
    p.object.push_back(placement(-0.16 + rng.uniform(-0.08, 0.08),
                                 rng.uniform(-0.12, 0.12), rng.uniform(-0.2, 0.2)));
    p.target.push_back(configs[d % configs.size()]);
    p.camera_start.push_back(
        Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.55));
    p.camera_start_yaw.push_back(rng.uniform(-0.15, 0.15));
  }
  return make_manipulation_suite(cfg.demos, cfg.frames, cfg.noise, cfg.seed, 0.001, p);
}

RigidTransform precision_target_pose(const DemoSuite& suite, TargetCondition cond) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& scene : suite.demo_scenes) {
    centroid += scene.bodies[suite.target_body].poses.front().translation;
  }
  centroid /= static_cast<double>(suite.demo_scenes.size());
  switch (cond) {
    case TargetCondition::Near:
      return placement(centroid.x(), centroid.y(), 0.05);
    case TargetCondition::Far:
      return placement(-centroid.x() * 0.9, -centroid.y() - 0.18, 0.1);
    case TargetCondition::Rotated:
    default:
      return placement(centroid.x() - 0.04, centroid.y() - 0.22, M_PI / 2.0);
  }
}

DemoSuite make_force_suite(const ForceTaskConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0x9D));
  DemoSuite suite;
  suite.noise = cfg.noise;
  suite.workspace_extent = 1.0;
  suite.object_body = 0;
  suite.target_body = 0;

  RigidScene base;
  base.extent = 0.5;
  base.frames = 1;
  base.seed = cfg.seed;
  base.bodies.push_back(make_body(rng, 70, 0.15, 0.004));  // work surface
  Body background = make_body(rng, 140, 0.5, 0.0, true);
  background.points.col(2).setZero();
  base.bodies.push_back(background);
  suite.base_scene = base;
  for (int64_t id = 0; id < 70; ++id) suite.query_ids.push_back(id);
  for (int64_t id = 70; id < 140; id += 2) suite.query_ids.push_back(id);

  std::vector<RigidTransform> final_relative;
  for (int d = 0; d < cfg.demos; ++d) {
    RigidScene scene = base;
    const RigidTransform surface = placement(rng.uniform(-0.12, 0.12),
                                             rng.uniform(-0.12, 0.12),
                                             rng.uniform(-0.2, 0.2));
    scene.bodies[0].poses = {surface};
    suite.demo_scenes.push_back(scene);

    const Vec3 s = surface.translation;
    const double yaw = std::atan2(surface.rotation(1, 0), surface.rotation(0, 0));
    DemoScript script;
    script.frames = cfg.frames;
    script.dt = 0.1;
    const auto f = [&](double frac) { return static_cast<int>(frac * (cfg.frames - 1)); };
    script.waypoints = {
        {0, Vec3(rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), 0.55), 0.0},
        {f(0.25), s + Vec3(-0.06, 0, 0.42), yaw},
        {f(0.38), s + Vec3(-0.06, 0, 0.30), yaw},
        {f(0.42), s + Vec3(-0.06, 0, 0.285), yaw},
        {f(0.70), s + Vec3(0.06, 0, 0.285), yaw},   // slide under load
        {f(0.78), s + Vec3(0.06, 0, 0.42), yaw},
        {cfg.frames - 1, s + Vec3(0.06, 0, 0.50), yaw},
    };
    script.forces = {{f(0.42), f(0.72), cfg.plateau_newtons}};
    suite.scripts.push_back(script);
    suite.demos.push_back(generate_demo(scene, script, suite.query_ids, cfg.noise,
                                        derive_seed(cfg.seed, 0xF0CE + d)));
    final_relative.push_back(surface.inverse().compose(script_camera(script).back()));
    suite.demo_placements_mm.push_back(Vec2::Zero());
  }
  suite.expected_camera_in_target = average_pose(final_relative);
  return suite;
}

// ---------------------------------------------------------------------------
// Pipeline

PipelineResult run_pipeline(const std::vector<Demo>& demos, const PipelineConfig& cfg) {
  if (demos.empty()) throw InvalidConfig("run_pipeline: no demos");
  PipelineResult out;
  for (const auto& demo : demos) {
    out.boundaries.push_back(detect_boundaries(demo, cfg.segmentation));
  }
  const PlanSkeleton skeleton = plan_skeleton(demos, out.boundaries);

  // Cluster the full concatenation; points never visible anywhere are
  // dropped up front.
  std::vector<const TrackSet*> all;
  for (const auto& demo : demos) all.push_back(&demo.tracks);
  const TrackSet concat = concat_tracks(all);
  std::vector<int64_t> usable;
  for (int i = 0; i < concat.points(); ++i) {
    for (int t = 0; t < concat.frames(); ++t) {
      if (!concat.is_occluded(i, t)) {
        usable.push_back(concat.point_ids[i]);
        break;
      }
    }
  }
  const TrackSet cluster_tracks = select_rows(concat, usable);
  out.model_ids = usable;
  out.model = optimize_with_splitting(cluster_tracks, cfg.cluster);
  out.model = prune_clusters(out.model, cluster_tracks);

  double px_acc = 0.0;
  for (size_t i = 0; i < out.model.assignment.size(); ++i) {
    px_acc += to_pixels(std::sqrt(out.model.mean_residual(static_cast<int>(i))));
  }
  out.mean_residual_px = px_acc / std::max<size_t>(1, out.model.assignment.size());
  {
    std::ostringstream os;
    os << "clustering k=" << out.model.k << " final_loss=" << out.model.total_loss()
       << " mean_residual_px=" << out.mean_residual_px;
    out.diagnostics.push_back(os.str());
    if (out.mean_residual_px > cfg.high_residual_warn_px) {
      std::ostringstream warn;
      warn << "warning: high clustering residual (" << out.mean_residual_px
           << " px); consider a larger k_target";
      out.diagnostics.push_back(warn.str());
    }
    for (size_t s = 0; s < out.model.split_losses.size(); ++s) {
      std::ostringstream line;
      line << "stage_loss " << s << ' ' << out.model.split_losses[s];
      out.diagnostics.push_back(line.str());
    }
  }

  std::vector<SpanData> data;
  for (size_t span_index = 0; span_index < skeleton.spans.size(); ++span_index) {
    const SegmentSpan& span = skeleton.spans[span_index];
    std::vector<TrackSet> slices;
    for (size_t d = 0; d < demos.size(); ++d) {
      slices.push_back(slice_tracks(demos[d].tracks, span.ranges[d].first,
                                    span.ranges[d].second));
    }
    const std::vector<int64_t> candidates = candidate_filter(slices, cfg.active);
    {
      std::ostringstream os;
      os << "span " << span_index << " candidates=" << candidates.size();
      out.diagnostics.push_back(os.str());
    }
    const std::vector<double> all_motions = segment_motions(slices);
    std::vector<double> model_motions(out.model_ids.size(), 0.0);
    {
      std::unordered_map<int64_t, int> row;
      for (int i = 0; i < slices.front().points(); ++i) {
        row[slices.front().point_ids[i]] = i;
      }
      for (size_t i = 0; i < out.model_ids.size(); ++i) {
        auto it = row.find(out.model_ids[i]);
        if (it != row.end()) model_motions[i] = all_motions[it->second];
      }
    }
    const std::vector<int> clusters =
        vote_clusters(candidates, out.model, out.model_ids, model_motions, cfg.active);
    ActivePointSet active =
        cleanup(clusters, out.model, out.model_ids, slices, cfg.active);
    {
      std::ostringstream os;
      os << "span " << span_index << " clusters=" << clusters.size()
         << " active_points=" << active.ids.size();
      out.diagnostics.push_back(os.str());
    }

    SpanData sd;
    sd.active = std::move(active);
    std::vector<ResampledSlice> aligned;
    for (size_t d = 0; d < demos.size(); ++d) {
      aligned.push_back(resample_segment(demos[d], span.ranges[d].first,
                                         span.ranges[d].second, cfg.segmentation));
      sd.source_time.push_back(aligned.back().source_time);
    }
    if (demos.size() >= 2) {
      sd.constant = extract_constant_motion(aligned, demos.front().dt);
    }
    data.push_back(std::move(sd));
  }
  out.plan = build_plan(skeleton, data, demos.front().dt, cfg.plan_build);
  return out;
}

// ---------------------------------------------------------------------------
// Trials

TrialResult run_trial(const MotionPlan& plan, const DemoSuite& suite,
                      const std::vector<RigidTransform>& body_poses,
                      const RigidTransform& camera_start, uint64_t seed,
                      const ExecuteConfig& cfg) {
  RigidScene scene = suite.base_scene;
  for (size_t b = 0; b < scene.bodies.size(); ++b) {
    scene.bodies[b].poses = {body_poses[b]};
  }
  SimWorld world(scene, camera_start, suite.noise, seed);
  bool has_force_stage = false;
  for (const auto& stage : plan.stages) {
    if (stage.kind == StageKind::ForceServo) has_force_stage = true;
  }
  if (has_force_stage) {
    world.set_contact(body_poses[suite.target_body].translation.z() + 0.275);
  }

  TrialResult result;
  try {
    ExecutionReport report = execute(plan, world, cfg);
    result.completed = true;
    result.steps = report.total_steps;
    result.final_error_px = report.stages.empty()
                                ? 0.0
                                : report.stages.back().final_error_px;
    SuccessCriteria criteria;
    criteria.expected_camera_in_target = suite.expected_camera_in_target;
    criteria.target_body = suite.target_body;
    criteria.translation_tol = 0.02 * suite.workspace_extent;
    result.success = judge_success(report, criteria);
    const RigidTransform object_in_target =
        report.final_body_poses[suite.target_body].inverse().compose(
            report.final_body_poses[suite.object_body]);
    result.object_in_target_mm = object_in_target.translation.head<2>() * 1000.0;
  } catch (const Error& e) {
    result.failure = e.kind();
  }
  return result;
}

std::vector<RigidTransform> held_out_placement(const DemoSuite& suite, uint64_t seed,
                                               RigidTransform* camera_start) {
  Rng rng(derive_seed(seed, 0x41D0));
  std::vector<RigidTransform> poses;
  RigidTransform object;
  RigidTransform target;
  for (int attempt = 0; attempt < 100; ++attempt) {
    object = placement(-0.16 + rng.uniform(-0.1, 0.1), rng.uniform(-0.15, 0.15),
                       rng.uniform(-0.3, 0.3));
    target = placement(0.19 + rng.uniform(-0.1, 0.1), rng.uniform(-0.15, 0.15),
                       rng.uniform(-0.3, 0.3));
    if ((object.translation - target.translation).norm() > 0.3) break;
  }
  for (size_t b = 0; b < suite.base_scene.bodies.size(); ++b) {
    if (static_cast<int>(b) == suite.object_body) {
      poses.push_back(object);
    } else if (static_cast<int>(b) == suite.target_body) {
      poses.push_back(target);
    } else {
      poses.push_back(RigidTransform::identity());
    }
  }
  if (camera_start) {
    *camera_start = down_looking_pose(
        Vec3(rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06), 0.55),
        rng.uniform(-0.25, 0.25));
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationVariant> ablation_variants() {
  std::vector<AblationVariant> out(4);
  out[0].name = "Full";
  out[1].name = "6 DOF";
  out[1].servo.dof = 6;
  out[2].name = "Single directional jacobian";
  out[2].servo.bidirectional = false;
  out[3].name = "No orthogonalisation";
  out[3].servo.orthogonalize = false;
  return out;
}

AblationTrial make_ablation_trial(uint64_t seed, int object_index, int motion_index,
                                  const AblationConfig& cfg) {
  Rng rng(derive_seed(derive_seed(seed, object_index), 0xB0 + motion_index));
  AblationTrial trial;

  RigidScene scene;
  scene.extent = 0.6;
  scene.frames = cfg.frames;
  scene.seed = seed;
  Rng obj_rng(derive_seed(seed, 0x0B1 + object_index));
  const double radius = 0.07 + 0.015 * (object_index % 5);
  Body object = make_body(obj_rng, 40, radius, 0.04);
  object.poses.assign(cfg.frames, RigidTransform::identity());
  scene.bodies.push_back(object);
  Body background = make_body(obj_rng, 160, 0.6, 0.0, true);
  background.points.col(2).setZero();
  background.poses.assign(cfg.frames, RigidTransform::identity());
  scene.bodies.push_back(background);
  trial.scene = scene;

  // 8 motion patterns x 3 magnitude tiers; every one a valid funnel back
  // over the object, with scale changes up to 5x (heights 0.3..1.5).
  const int pattern = motion_index % 8;
  const double tier = 0.6 + 0.4 * (motion_index / 8 % 3);
  const int t_count = cfg.frames;
  const auto f = [&](double frac) { return static_cast<int>(frac * (t_count - 1)); };
  const double h0 = 0.55;
  DemoScript script;
  script.frames = t_count;
  script.dt = 0.1;
  std::vector<Waypoint> wps;
  const Vec3 o(0, 0, 0);
  switch (pattern) {
    case 0:  // pan across the image
      wps = {{0, o + Vec3(-0.25 * tier, 0, h0), 0},
             {f(0.5), o + Vec3(0.25 * tier, 0.1 * tier, h0), 0},
             {t_count - 1, o + Vec3(0, 0, 0.45), 0}};
      break;
    case 1:  // diagonal pan
      wps = {{0, o + Vec3(-0.2 * tier, -0.2 * tier, h0), 0},
             {f(0.5), o + Vec3(0.2 * tier, 0.2 * tier, h0), 0},
             {t_count - 1, o + Vec3(0, 0, 0.4), 0}};
      break;
    case 2:  // zoom out to 5x
      wps = {{0, o + Vec3(0, 0, 0.3), 0},
             {f(0.6), o + Vec3(0.05, 0, 0.3 + 1.2 * tier / 1.4), 0},
             {t_count - 1, o + Vec3(0, 0, 0.8), 0}};
      break;
    case 3:  // zoom in from 5x
      wps = {{0, o + Vec3(0, 0, 0.3 + 1.2 * tier / 1.4), 0},
             {f(0.7), o + Vec3(0, 0.05, 0.35), 0},
             {t_count - 1, o + Vec3(0, 0, 0.32), 0}};
      break;
    case 4:  // in-plane rotation
      wps = {{0, o + Vec3(0, 0, h0), -0.8 * tier},
             {f(0.5), o + Vec3(0.05, 0.05, h0), 0.8 * tier},
             {t_count - 1, o + Vec3(0, 0, 0.5), 0}};
      break;
    case 5:  // zoom out + pan
      wps = {{0, o + Vec3(-0.15 * tier, 0, 0.35), 0},
             {f(0.5), o + Vec3(0.15 * tier, 0, 0.3 + 1.0 * tier), 0},
             {t_count - 1, o + Vec3(0, 0, 0.5), 0}};
      break;
    case 6:  // rotate + zoom in
      wps = {{0, o + Vec3(0, -0.1 * tier, 1.0), -0.6 * tier},
             {f(0.6), o + Vec3(0, 0.1 * tier, 0.45), 0.6 * tier},
             {t_count - 1, o + Vec3(0, 0, 0.4), 0.6 * tier}};
      break;
    case 7:  // zigzag
    default:
      wps = {{0, o + Vec3(-0.15 * tier, 0.1 * tier, 0.6), 0},
             {f(0.33), o + Vec3(0.15 * tier, -0.1 * tier, 0.45), 0.3},
             {f(0.66), o + Vec3(-0.1 * tier, -0.1 * tier, 0.7), -0.3},
             {t_count - 1, o + Vec3(0, 0, 0.5), 0}};
      break;
  }
  // Seeded jitter so the suite is a distribution, not a grid.
  for (auto& wp : wps) {
    wp.position += Vec3(rng.normal(0, 0.01), rng.normal(0, 0.01), rng.normal(0, 0.01));
  }
  script.waypoints = wps;

  std::vector<int64_t> ids;
  std::vector<int64_t> obj_ids, bg_ids;
  for (int64_t id = 0; id < 40; ++id) obj_ids.push_back(id);
  for (int64_t id = 40; id < 200; ++id) bg_ids.push_back(id);
  rng.shuffle(obj_ids);
  rng.shuffle(bg_ids);
  for (int i = 0; i < 24; ++i) ids.push_back(obj_ids[i]);
  for (int i = 0; i < 24; ++i) ids.push_back(bg_ids[i]);
  std::sort(ids.begin(), ids.end());
  trial.query_ids = ids;
  trial.noise = cfg.noise;
  trial.demo = generate_demo(scene, script, ids, cfg.noise,
                             derive_seed(seed, 0xD3 + object_index * 31 + motion_index));

  trial.reference.expected_camera_in_target = script_camera(script).back();
  trial.reference.target_body = 0;  // object frame == world frame here
  trial.reference.translation_tol = 0.02 * (2.0 * scene.extent);
  trial.reference.rotation_tol_rad = 5.0 * M_PI / 180.0;
  return trial;
}

bool run_ablation_trial(const AblationTrial& trial, const ServoConfig& servo,
                        int step_limit, uint64_t seed) {
  // The online tracker noise matches the demo tracker noise.
  SimWorld world(trial.scene, trial.demo.camera.front(), trial.noise, seed);
  MotionPlan plan;
  Stage stage;
  stage.kind = StageKind::VisualServo;
  stage.active.ids = trial.query_ids;
  stage.active.reference = {trial.demo.tracks};
  stage.follow_start = {0};
  plan.stages.push_back(stage);

  ExecuteConfig cfg;
  cfg.servo = servo;
  cfg.step_limit = step_limit;
  try {
    ExecutionReport report = execute(plan, world, cfg);
    return judge_success(report, trial.reference);
  } catch (const Error&) {
    return false;
  }
}

AblationRun run_ablation(const AblationConfig& cfg) {
  const std::vector<AblationVariant> variants = ablation_variants();
  const int trials = cfg.objects * cfg.motions_per_object;
  const int total = trials * static_cast<int>(variants.size());
  std::vector<char> success(total, 0);

  parallel_for(total, cfg.workers, [&](int index) {
    const int variant = index / trials;
    const int trial_index = index % trials;
    const int object_index = trial_index / cfg.motions_per_object;
    const int motion_index = trial_index % cfg.motions_per_object;
    const AblationTrial trial =
        make_ablation_trial(cfg.seed, object_index, motion_index, cfg);
    const uint64_t trial_seed =
        derive_seed(derive_seed(cfg.seed, trial_index), 0x7A + variant);
    success[index] = run_ablation_trial(trial, variants[variant].servo,
                                        cfg.step_limit, trial_seed)
                         ? 1
                         : 0;
  });

  AblationRun out;
  for (size_t v = 0; v < variants.size(); ++v) {
    VariantResult row;
    row.name = variants[v].name;
    row.trials = trials;
    for (int t = 0; t < trials; ++t) {
      const bool ok = success[v * trials + t] != 0;
      row.successes += ok ? 1 : 0;
      out.csv_rows.push_back(variants[v].name + "," + std::to_string(t) + "," +
                             (ok ? "1" : "0"));
    }
    out.table.push_back(row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Precision

PrecisionRun run_precision(const DemoSuite& suite, const MotionPlan& plan,
                           const PrecisionRunConfig& cfg,
                           const std::vector<TargetCondition>& conditions) {
  PrecisionRun out;
  out.demo_mm = suite.demo_placements_mm;
  const Vec3 nominal_object(-0.16, 0.0, 0.0);

  for (const TargetCondition cond : conditions) {
    const char* name = cond == TargetCondition::Near
                           ? "Near"
                           : (cond == TargetCondition::Far ? "Far" : "Rotated");
    const RigidTransform target = precision_target_pose(suite, cond);
    std::vector<Vec2> placements(cfg.trials, Vec2::Zero());
    std::vector<char> ok(cfg.trials, 0);
    parallel_for(cfg.trials, cfg.workers, [&](int t) {
      Rng rng(derive_seed(derive_seed(cfg.seed, static_cast<int>(cond) * 1000 + t),
                          0x93));
      std::vector<RigidTransform> poses;
      for (size_t b = 0; b < suite.base_scene.bodies.size(); ++b) {
        if (static_cast<int>(b) == suite.object_body) {
          // Returned by hand to a similar spot, within a few centimeters.
          poses.push_back(placement(nominal_object.x() + rng.uniform(-0.03, 0.03),
                                    nominal_object.y() + rng.uniform(-0.03, 0.03),
                                    rng.uniform(-0.2, 0.2)));
        } else if (static_cast<int>(b) == suite.target_body) {
          poses.push_back(target);
        } else {
          poses.push_back(RigidTransform::identity());
        }
      }
      const RigidTransform camera = down_looking_pose(
          Vec3(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.55),
          rng.uniform(-0.2, 0.2));
      ExecuteConfig exec;
      exec.step_limit = cfg.step_limit;
      const TrialResult trial = run_trial(plan, suite, poses, camera,
                                          derive_seed(cfg.seed, 7777 + t), exec);
      if (trial.completed) {
        placements[t] = trial.object_in_target_mm;
        ok[t] = 1;
      }
    });
    std::vector<Vec2> collected;
    int completed = 0;
    for (int t = 0; t < cfg.trials; ++t) {
      if (ok[t]) {
        collected.push_back(placements[t]);
        ++completed;
      }
    }
    out.trials_mm[name] = collected;
    out.completed[name] = completed;
  }
  return out;
}

// ---------------------------------------------------------------------------

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
  int n_workers = workers > 0 ? workers
                              : static_cast<int>(std::thread::hardware_concurrency());
  n_workers = std::max(1, std::min(n_workers, count));
  if (n_workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (int w = 0; w < n_workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace trackservo
