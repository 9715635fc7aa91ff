#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trackservo/command.hpp"
#include "trackservo/common.hpp"
#include "trackservo/geometry.hpp"

namespace trackservo {

/// One rigid body: a canonical point cloud plus a pose per frame.
struct Body {
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;  // body frame
  std::vector<RigidTransform> poses;                // body -> world, per frame
  bool is_background = false;
};

struct RigidScene {
  std::vector<Body> bodies;
  int frames = 0;
  uint64_t seed = 0;
  double extent = 1.0;  // workspace half size in the table plane

  int total_points() const;
  // Global point id -> (body, local index).
  std::pair<int, int> locate(int64_t point_id) const;
  Vec3 world_point(int64_t point_id, int frame) const;
  int background_index() const;
};

/// Point tracks over frames: positions in normalized image coordinates
/// (NaN where occluded), occlusion flags, and visibility scores in [0,1].
/// Invariant: visibility > 0.5 iff occluded = false.
struct TrackSet {
  std::vector<int64_t> point_ids;
  std::vector<int> source_body;  // -1 when unknown
  Eigen::MatrixXd u;             // n x T
  Eigen::MatrixXd v;             // n x T
  Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> occluded;  // n x T
  Eigen::MatrixXd visibility;    // n x T

  int points() const { return static_cast<int>(point_ids.size()); }
  int frames() const { return static_cast<int>(u.cols()); }
  Point2 position(int i, int t) const { return {u(i, t), v(i, t)}; }
  bool is_occluded(int i, int t) const { return occluded(i, t) != 0; }
  void resize(int n, int t);
  bool invariant_holds() const;
};

struct NoiseConfig {
  double sigma_p = 0.0;             // detection noise std, normalized units
  double occlusion_flip_rate = 0.0;
  double dropout_rate = 0.0;        // chance a point loses a frame range
};

struct Demo {
  TrackSet tracks;
  std::vector<RigidTransform> camera;  // camera -> world, per frame
  Eigen::VectorXd gripper_openness;    // [0,1] per frame
  Eigen::VectorXd vertical_force;      // Newtons per frame
  double dt = 0.1;

  int frames() const { return static_cast<int>(camera.size()); }
};

// ---------------------------------------------------------------------------
// Scene generation

enum class BodyMotion {
  Static,
  LinearDrift,   // slow straight-line translation on the table
  PlanarCircle,  // small circular translation, in-plane
};

struct SceneConfig {
  int n_bodies = 1;            // moving bodies; the background is extra
  int points_per_body = 40;
  int background_points = 200;
  double extent = 1.0;
  double body_radius = 0.08;
  double body_height = 0.04;
  BodyMotion motion = BodyMotion::Static;
  double motion_speed = 0.0;   // units per frame along the script
  int frames = 1;
};

RigidScene generate_scene(uint64_t seed, const SceneConfig& config);

/// Oracle tracker: exact projections plus configured noise, convex-hull
/// z-order occlusion, and visibility scores consistent with the occlusion
/// flags.
TrackSet render_tracks(const RigidScene& scene,
                       const std::vector<RigidTransform>& camera,
                       const std::vector<int64_t>& query_ids,
                       const NoiseConfig& noise, uint64_t seed,
                       const CameraModel& cam = CameraModel{});

/// Integrates the command as a camera-frame twist over dt. 4-DOF commands
/// translate and rotate about the camera axis only.
RigidTransform step_camera(const RigidTransform& pose,
                           const ControlCommand& command, double dt);

// ---------------------------------------------------------------------------
// Scripted demonstrations

struct Waypoint {
  int frame = 0;
  Vec3 position = Vec3::Zero();  // camera center, world frame
  double yaw = 0.0;              // rotation about the camera axis
};

struct GraspEvent {
  int frame = 0;
  bool close = true;
  int body = 0;  // body attached/released
};

struct ForcePhase {
  int start = 0;
  int end = 0;
  double amplitude = 2.0;  // Newtons
};

struct DemoScript {
  int frames = 0;
  double dt = 0.1;
  std::vector<Waypoint> waypoints;
  std::vector<GraspEvent> grasps;
  std::vector<ForcePhase> forces;
  double gripper_open_value = 1.0;
  double gripper_close_value = 0.02;
  int gripper_transition_frames = 4;
  double force_noise_std = 0.2;  // Newtons
};

/// Camera pose for a down-looking camera at `position` with in-plane `yaw`.
RigidTransform down_looking_pose(const Vec3& position, double yaw);

/// Applies the script's grasp events to the scene: attached bodies follow
/// the camera rigidly between close and open. Returns the posed scene.
RigidScene script_scene(const RigidScene& scene, const DemoScript& script);

/// Camera trajectory through the script waypoints with smoothstep easing.
std::vector<RigidTransform> script_camera(const DemoScript& script);

Eigen::VectorXd script_gripper(const DemoScript& script);
Eigen::VectorXd script_force(const DemoScript& script, uint64_t seed);

Demo generate_demo(const RigidScene& scene, const DemoScript& script,
                   const std::vector<int64_t>& query_ids,
                   const NoiseConfig& noise, uint64_t seed);

// ---------------------------------------------------------------------------
// Interactive world for closed-loop execution

/// Minimal kinematic world: bodies at their initial poses, a movable camera,
/// a gripper that can attach the nearest body, and a contact-force model for
/// press phases. Owned by a single execution.
class SimWorld {
 public:
  SimWorld(const RigidScene& scene, const RigidTransform& camera_start,
           const NoiseConfig& noise, uint64_t seed);

  /// Observes the queried points at the current camera pose (one frame).
  TrackSet observe(const std::vector<int64_t>& query_ids);

  void apply_camera_twist(const Vec6& twist, double dt);
  const RigidTransform& camera() const { return camera_; }

  /// Closing attaches the body whose centroid is nearest the camera axis
  /// if within `grasp_radius`; opening releases it (dropped straight down
  /// onto the table plane).
  void set_gripper(bool closed, double grasp_radius = 0.2);
  bool holding() const { return held_body_ >= 0; }
  int held_body() const { return held_body_; }

  /// Contact force: pressing below the contact height loads a linear
  /// spring. Positive press rate increases force.
  double vertical_force() const;
  void set_contact(double height, double stiffness = 50.0);

  const RigidTransform& body_pose(int body) const { return body_poses_[body]; }
  const RigidScene& scene() const { return scene_; }

 private:
  RigidScene scene_;
  std::vector<RigidTransform> body_poses_;
  RigidTransform camera_;
  NoiseConfig noise_;
  Rng rng_;
  int held_body_ = -1;
  RigidTransform grasp_offset_;  // camera -> body at grasp time
  double contact_height_ = -1.0;
  double contact_stiffness_ = 50.0;
};

}  // namespace trackservo
