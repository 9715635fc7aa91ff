#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "trackservo/io.hpp"
#include "trackservo/metrics.hpp"
#include "trackservo/plan.hpp"

namespace trackservo {

// ---------------------------------------------------------------------------
// Demo suites

/// A set of demonstrations of one task plus everything needed to run and
/// judge executions: per-demo scenes share body clouds and differ in poses.
struct DemoSuite {
  RigidScene base_scene;              // clouds; poses hold demo-0 placement
  std::vector<RigidScene> demo_scenes;  // initial (unscripted) scene per demo
  std::vector<Demo> demos;
  std::vector<DemoScript> scripts;
  std::vector<int64_t> query_ids;
  NoiseConfig noise;
  int object_body = 0;
  int target_body = 1;
  double workspace_extent = 1.0;      // full width, scene units
  RigidTransform expected_camera_in_target;  // demo-average final pose
  std::vector<Vec2> demo_placements_mm;      // object-in-target, per demo
};

struct PickPlaceConfig {
  int demos = 5;
  int frames = 300;
  NoiseConfig noise;
  uint64_t seed = 0;
  double placement_noise = 0.0015;  // scene units, demo-to-demo scatter
  bool vary_target = true;
};

DemoSuite make_pick_place_suite(const PickPlaceConfig& cfg);

struct ForceTaskConfig {
  int demos = 3;
  int frames = 220;
  NoiseConfig noise;
  uint64_t seed = 0;
  double plateau_newtons = 8.0;
};

DemoSuite make_force_suite(const ForceTaskConfig& cfg);

/// Precision-harness target conditions.
enum class TargetCondition { Near, Far, Rotated };

struct PrecisionSuiteConfig {
  int demos = 6;
  int frames = 300;
  NoiseConfig noise{0.01, 0.0, 0.0};
  uint64_t seed = 0;
};

DemoSuite make_precision_suite(const PrecisionSuiteConfig& cfg);

/// Target pose for a precision condition, derived from the suite's demo
/// placements (Near between them, Far across the workspace, Rotated 90 deg).
RigidTransform precision_target_pose(const DemoSuite& suite, TargetCondition cond);

// ---------------------------------------------------------------------------
// Pipeline: demos -> motion plan

struct PipelineConfig {
  SegmentationConfig segmentation;
  ActivePointConfig active;
  OptimizeConfig cluster;
  PlanBuildConfig plan_build;
  double high_residual_warn_px = 2.0;
};

struct PipelineResult {
  MotionPlan plan;
  ClusterModel model;
  std::vector<int64_t> model_ids;
  std::vector<std::vector<SegmentBoundary>> boundaries;
  std::vector<std::string> diagnostics;
  double mean_residual_px = 0.0;
};

PipelineResult run_pipeline(const std::vector<Demo>& demos, const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Closed-loop trials

struct TrialResult {
  bool success = false;
  bool completed = false;
  std::string failure;
  Vec2 object_in_target_mm = Vec2::Zero();
  double final_error_px = 0.0;
  int steps = 0;
};

/// Executes the plan on a fresh world with the given body placements.
TrialResult run_trial(const MotionPlan& plan, const DemoSuite& suite,
                      const std::vector<RigidTransform>& body_poses,
                      const RigidTransform& camera_start, uint64_t seed,
                      const ExecuteConfig& cfg);

/// Seeded held-out placements (object/target/camera) for pipeline trials.
std::vector<RigidTransform> held_out_placement(const DemoSuite& suite, uint64_t seed,
                                               RigidTransform* camera_start);

// ---------------------------------------------------------------------------
// Ablation harness

struct AblationConfig {
  int objects = 5;
  int motions_per_object = 24;
  int frames = 60;
  NoiseConfig noise{0.025, 0.03, 0.0};
  int step_limit = 900;
  uint64_t seed = 0;
  int workers = 0;  // 0 = hardware concurrency
};

struct AblationVariant {
  std::string name;
  ServoConfig servo;
};

std::vector<AblationVariant> ablation_variants();

struct AblationRun {
  std::vector<VariantResult> table;  // per variant
  std::vector<std::string> csv_rows; // variant,trial,success
};

AblationRun run_ablation(const AblationConfig& cfg);

/// One ablation trajectory (scene + demo + queries), deterministic per
/// (seed, object, motion).
struct AblationTrial {
  RigidScene scene;
  Demo demo;
  std::vector<int64_t> query_ids;
  NoiseConfig noise;
  SuccessCriteria reference;
};

AblationTrial make_ablation_trial(uint64_t seed, int object_index, int motion_index,
                                  const AblationConfig& cfg);

bool run_ablation_trial(const AblationTrial& trial, const ServoConfig& servo,
                        int step_limit, uint64_t seed);

// ---------------------------------------------------------------------------
// Precision harness

struct PrecisionRunConfig {
  int trials = 30;
  uint64_t seed = 0;
  int workers = 0;
  int step_limit = 4000;
};

struct PrecisionRun {
  std::vector<Vec2> demo_mm;
  std::map<std::string, std::vector<Vec2>> trials_mm;  // Near/Far/Rotated
  std::map<std::string, int> completed;
};

PrecisionRun run_precision(const DemoSuite& suite, const MotionPlan& plan,
                           const PrecisionRunConfig& cfg,
                           const std::vector<TargetCondition>& conditions = {
                               TargetCondition::Near, TargetCondition::Far,
                               TargetCondition::Rotated});

// ---------------------------------------------------------------------------

/// Deterministic worker pool: results land in trial-index order regardless
/// of scheduling.
void parallel_for(int count, int workers, const std::function<void(int)>& fn);

}  // namespace trackservo
