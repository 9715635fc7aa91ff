#include "trackservo/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trackservo/errors.hpp"

namespace trackservo {

int RigidScene::total_points() const {
  int n = 0;
  for (const auto& b : bodies) n += static_cast<int>(b.points.rows());
  return n;
}

std::pair<int, int> RigidScene::locate(int64_t point_id) const {
  int64_t offset = 0;
  for (size_t b = 0; b < bodies.size(); ++b) {
    const int64_t n = bodies[b].points.rows();
    if (point_id < offset + n) {
      return {static_cast<int>(b), static_cast<int>(point_id - offset)};
    }
    offset += n;
  }
  throw UnknownPointId("point id " + std::to_string(point_id));
}

Vec3 RigidScene::world_point(int64_t point_id, int frame) const {
  const auto [b, i] = locate(point_id);
  return bodies[b].poses[frame].apply(bodies[b].points.row(i).transpose());
}

int RigidScene::background_index() const {
  for (size_t b = 0; b < bodies.size(); ++b) {
    if (bodies[b].is_background) return static_cast<int>(b);
  }
  return -1;
}

void TrackSet::resize(int n, int t) {
  point_ids.assign(n, 0);
  source_body.assign(n, -1);
  u.setConstant(n, t, std::numeric_limits<double>::quiet_NaN());
  v.setConstant(n, t, std::numeric_limits<double>::quiet_NaN());
  occluded.setConstant(n, t, 1);
  visibility.setConstant(n, t, 0.0);
}

bool TrackSet::invariant_holds() const {
  for (int i = 0; i < points(); ++i) {
    for (int t = 0; t < frames(); ++t) {
      const bool vis = visibility(i, t) > 0.5;
      if (vis == (occluded(i, t) != 0)) return false;
      if (!is_occluded(i, t) && (!std::isfinite(u(i, t)) || !std::isfinite(v(i, t)))) {
        return false;
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Scene generation

RigidScene generate_scene(uint64_t seed, const SceneConfig& config) {
  if (config.n_bodies < 1 || config.points_per_body < 1 || config.frames < 1 ||
      config.background_points < 3 || config.extent <= 0.0) {
    throw InvalidConfig("generate_scene: nonpositive counts or extent");
  }
  Rng rng(derive_seed(seed, 0xA11));
  RigidScene scene;
  scene.seed = seed;
  scene.frames = config.frames;
  scene.extent = config.extent;

  // Placement centers, rejection-sampled for separation.
  std::vector<Vec2> centers;
  for (int b = 0; b < config.n_bodies; ++b) {
    Vec2 c;
    for (int attempt = 0; attempt < 200; ++attempt) {
      c = Vec2(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)) * config.extent;
      bool ok = true;
      for (const auto& other : centers) {
        if ((c - other).norm() < 3.0 * config.body_radius) ok = false;
      }
      if (ok) break;
    }
    centers.push_back(c);
  }

  for (int b = 0; b < config.n_bodies; ++b) {
    Body body;
    body.points.resize(config.points_per_body, 3);
    for (int i = 0; i < config.points_per_body; ++i) {
      body.points.row(i) << centers[b].x() + rng.uniform(-1, 1) * config.body_radius,
          centers[b].y() + rng.uniform(-1, 1) * config.body_radius,
          rng.uniform(0.2, 1.0) * config.body_height;
    }
    body.poses.assign(config.frames, RigidTransform::identity());
    if (config.motion != BodyMotion::Static && config.motion_speed > 0.0) {
      const double angle = rng.uniform(0, 2 * M_PI);
      const Vec2 dir(std::cos(angle), std::sin(angle));
      for (int t = 0; t < config.frames; ++t) {
        RigidTransform pose;
        if (config.motion == BodyMotion::LinearDrift) {
          const Vec2 d = dir * config.motion_speed * t;
          pose.translation = Vec3(d.x(), d.y(), 0.0);
        } else {
          const double radius = config.motion_speed * config.frames / (2 * M_PI);
          const double phase = 2 * M_PI * t / config.frames;
          pose.translation = Vec3(radius * (std::cos(phase) - 1.0),
                                  radius * std::sin(phase), 0.0);
        }
        body.poses[t] = pose;
      }
    }
    scene.bodies.push_back(std::move(body));
  }

  // Background: one large static body on the table plane.
  Body background;
  background.is_background = true;
  background.points.resize(config.background_points, 3);
  for (int i = 0; i < config.background_points; ++i) {
    background.points.row(i) << rng.uniform(-1, 1) * config.extent,
        rng.uniform(-1, 1) * config.extent, 0.0;
  }
  background.poses.assign(config.frames, RigidTransform::identity());
  scene.bodies.push_back(std::move(background));
  return scene;
}

// ---------------------------------------------------------------------------
// Occlusion helpers

namespace {

struct ProjectedBody {
  std::vector<Vec2> hull;  // CCW convex hull of visible projections
  double median_depth = std::numeric_limits<double>::infinity();
};

double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  if (pts.size() < 3) return {};
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  std::vector<Vec2> hull(2 * pts.size());
  size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  const size_t lower = k + 1;
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
    while (k >= lower && cross2(hull[k - 2], hull[k - 1], *it) <= 0) --k;
    hull[k++] = *it;
  }
  hull.resize(k - 1);
  return hull.size() >= 3 ? hull : std::vector<Vec2>{};
}

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

// Positive outside the hull, negative inside.
double signed_hull_distance(const Vec2& p, const std::vector<Vec2>& hull) {
  bool inside = true;
  double min_edge = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < hull.size(); ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % hull.size()];
    if (cross2(a, b, p) < 0) inside = false;
    min_edge = std::min(min_edge, segment_distance(p, a, b));
  }
  return inside ? -min_edge : min_edge;
}

ProjectedBody project_body(const Body& body, const RigidTransform& pose,
                           const RigidTransform& cam_pose, const CameraModel& cam) {
  ProjectedBody out;
  std::vector<Vec2> pts;
  std::vector<double> depths;
  for (Eigen::Index i = 0; i < body.points.rows(); ++i) {
    const Vec3 world = pose.apply(body.points.row(i).transpose());
    try {
      const Projection pr = project(world, cam_pose, cam);
      pts.push_back(pr.point.vec());
      depths.push_back(pr.depth);
    } catch (const BehindCamera&) {
    }
  }
  if (!depths.empty()) {
    std::nth_element(depths.begin(), depths.begin() + depths.size() / 2, depths.end());
    out.median_depth = depths[depths.size() / 2];
  }
  out.hull = convex_hull(std::move(pts));
  return out;
}

struct FrameRngs {
  Rng flip;
  Rng vis;
  Rng noise;
};

// Observation of one frame into column t. RNG streams are separated per
// concern so raising one rate never perturbs the other draws.
void observe_frame(const RigidScene& scene,
                   const std::vector<RigidTransform>& body_poses,
                   const RigidTransform& cam_pose, const CameraModel& cam,
                   const std::vector<int64_t>& query_ids,
                   const NoiseConfig& noise, FrameRngs& rngs, TrackSet& out,
                   int t) {
  std::vector<ProjectedBody> projected(scene.bodies.size());
  for (size_t b = 0; b < scene.bodies.size(); ++b) {
    projected[b] = project_body(scene.bodies[b], body_poses[b], cam_pose, cam);
  }
  constexpr double kVisWidth = 0.05;
  for (size_t q = 0; q < query_ids.size(); ++q) {
    const auto [b, i] = scene.locate(query_ids[q]);
    const Vec3 world = body_poses[b].apply(scene.bodies[b].points.row(i).transpose());
    bool occluded = false;
    double vis = 1.0;
    Point2 pos{};
    bool behind = false;
    double depth = 0.0;
    try {
      const Projection pr = project(world, cam_pose, cam);
      pos = pr.point;
      depth = pr.depth;
    } catch (const BehindCamera&) {
      behind = true;
    }
    if (behind) {
      occluded = true;
      vis = 0.0;
    } else {
      double min_d = std::numeric_limits<double>::infinity();
      for (size_t ob = 0; ob < scene.bodies.size(); ++ob) {
        if (static_cast<int>(ob) == b || projected[ob].hull.empty()) continue;
        if (projected[ob].median_depth < depth - 1e-6) {
          min_d = std::min(min_d, signed_hull_distance(pos.vec(), projected[ob].hull));
        }
      }
      if (std::isfinite(min_d)) {
        occluded = min_d < 0.0;
        vis = 1.0 / (1.0 + std::exp(-min_d / kVisWidth));
      }
    }
    // Flip and visibility-jitter draws are consumed unconditionally.
    const double flip_draw = rngs.flip.uniform();
    if (flip_draw < noise.occlusion_flip_rate) occluded = !occluded;
    vis += rngs.vis.normal(0.0, 0.02);
    const double nu = rngs.noise.normal(0.0, 1.0);
    const double nv = rngs.noise.normal(0.0, 1.0);

    out.occluded(q, t) = occluded ? 1 : 0;
    if (occluded) {
      out.visibility(q, t) = std::clamp(vis, 0.0, 0.5 - 1e-3);
      out.u(q, t) = std::numeric_limits<double>::quiet_NaN();
      out.v(q, t) = std::numeric_limits<double>::quiet_NaN();
    } else {
      out.visibility(q, t) = std::clamp(vis, 0.5 + 1e-3, 1.0);
      out.u(q, t) = pos.u + noise.sigma_p * nu;
      out.v(q, t) = pos.v + noise.sigma_p * nv;
    }
    out.source_body[q] = b;
    out.point_ids[q] = query_ids[q];
  }
}

}  // namespace

TrackSet render_tracks(const RigidScene& scene,
                       const std::vector<RigidTransform>& camera,
                       const std::vector<int64_t>& query_ids,
                       const NoiseConfig& noise, uint64_t seed,
                       const CameraModel& cam) {
  const int total = scene.total_points();
  for (int64_t id : query_ids) {
    if (id < 0 || id >= total) throw UnknownPointId("id " + std::to_string(id));
  }
  const int t_count = static_cast<int>(camera.size());
  TrackSet out;
  out.resize(static_cast<int>(query_ids.size()), t_count);

  FrameRngs rngs{Rng(derive_seed(seed, 1)), Rng(derive_seed(seed, 2)),
                 Rng(derive_seed(seed, 3))};
  Rng dropout_rng(derive_seed(seed, 4));

  std::vector<std::pair<int, int>> dropouts(query_ids.size(), {-1, -1});
  for (size_t q = 0; q < query_ids.size(); ++q) {
    const double r = dropout_rng.uniform();
    const int start = static_cast<int>(dropout_rng.uniform_int(std::max(1, t_count)));
    const int len = 1 + static_cast<int>(dropout_rng.uniform_int(std::max(1, t_count / 3)));
    if (r < noise.dropout_rate) dropouts[q] = {start, std::min(t_count, start + len)};
  }

  std::vector<RigidTransform> body_poses(scene.bodies.size());
  for (int t = 0; t < t_count; ++t) {
    for (size_t b = 0; b < scene.bodies.size(); ++b) {
      body_poses[b] = scene.bodies[b].poses[t];
    }
    observe_frame(scene, body_poses, camera[t], cam, query_ids, noise, rngs, out, t);
    for (size_t q = 0; q < query_ids.size(); ++q) {
      if (t >= dropouts[q].first && t < dropouts[q].second) {
        out.occluded(q, t) = 1;
        out.visibility(q, t) = std::min(out.visibility(q, t), 0.25);
        out.u(q, t) = std::numeric_limits<double>::quiet_NaN();
        out.v(q, t) = std::numeric_limits<double>::quiet_NaN();
      }
    }
  }
  return out;
}

RigidTransform step_camera(const RigidTransform& pose,
                           const ControlCommand& command, double dt) {
  if (!command.finite()) throw InvalidConfig("step_camera: non-finite command");
  Vec6 twist = command.as_twist();
  if (command.dof == 4) {
    twist(3) = 0.0;
    twist(4) = 0.0;
  }
  return integrate_twist(pose, twist, dt);
}

// ---------------------------------------------------------------------------
// Scripted demonstrations

RigidTransform down_looking_pose(const Vec3& position, double yaw) {
  RigidTransform pose;
  Mat3 base;
  base << 1, 0, 0, 0, -1, 0, 0, 0, -1;  // optical axis along -world-z
  pose.rotation = base * rotation_exp(Vec3(0, 0, yaw));
  pose.translation = position;
  return pose;
}

std::vector<RigidTransform> script_camera(const DemoScript& script) {
  if (script.frames < 1 || script.waypoints.empty()) {
    throw InvalidScript("script needs frames and waypoints");
  }
  for (const auto& wp : script.waypoints) {
    if (wp.frame < 0 || wp.frame >= script.frames) {
      throw InvalidScript("waypoint frame out of range");
    }
  }
  std::vector<Waypoint> wps = script.waypoints;
  std::sort(wps.begin(), wps.end(),
            [](const Waypoint& a, const Waypoint& b) { return a.frame < b.frame; });
  std::vector<RigidTransform> out(script.frames);
  for (int t = 0; t < script.frames; ++t) {
    size_t seg = 0;
    while (seg + 1 < wps.size() && wps[seg + 1].frame <= t) ++seg;
    Vec3 pos;
    double yaw;
    if (seg + 1 >= wps.size() || t <= wps[0].frame) {
      const auto& wp = t <= wps[0].frame ? wps[0] : wps.back();
      pos = wp.position;
      yaw = wp.yaw;
    } else {
      const auto& a = wps[seg];
      const auto& b = wps[seg + 1];
      double s = static_cast<double>(t - a.frame) / (b.frame - a.frame);
      s = s * s * (3 - 2 * s);  // smoothstep easing, zero velocity at joins
      pos = (1 - s) * a.position + s * b.position;
      yaw = (1 - s) * a.yaw + s * b.yaw;
    }
    out[t] = down_looking_pose(pos, yaw);
  }
  return out;
}

RigidScene script_scene(const RigidScene& scene, const DemoScript& script) {
  for (const auto& g : script.grasps) {
    if (g.frame < 0 || g.frame >= script.frames) {
      throw InvalidScript("grasp event outside [0, frames)");
    }
    if (g.body < 0 || g.body >= static_cast<int>(scene.bodies.size())) {
      throw InvalidScript("grasp references unknown body");
    }
  }
  std::vector<RigidTransform> camera = script_camera(script);
  RigidScene posed = scene;
  posed.frames = script.frames;
  for (auto& body : posed.bodies) {
    const RigidTransform rest =
        body.poses.empty() ? RigidTransform::identity() : body.poses.front();
    body.poses.assign(script.frames, rest);
  }
  std::vector<GraspEvent> events = script.grasps;
  std::sort(events.begin(), events.end(),
            [](const GraspEvent& a, const GraspEvent& b) { return a.frame < b.frame; });
  for (size_t e = 0; e < events.size(); ++e) {
    if (!events[e].close) continue;
    const int body = events[e].body;
    int release = script.frames;
    for (size_t r = e + 1; r < events.size(); ++r) {
      if (!events[r].close && events[r].body == body) {
        release = events[r].frame;
        break;
      }
    }
    const RigidTransform offset =
        camera[events[e].frame].inverse().compose(posed.bodies[body].poses[events[e].frame]);
    for (int t = events[e].frame; t < release; ++t) {
      posed.bodies[body].poses[t] = camera[t].compose(offset);
    }
    // After release the body rests where it was dropped.
    if (release < script.frames) {
      RigidTransform dropped = posed.bodies[body].poses[release - 1];
      dropped.translation.z() = 0.0;
      for (int t = release; t < script.frames; ++t) {
        posed.bodies[body].poses[t] = dropped;
      }
    }
  }
  return posed;
}

Eigen::VectorXd script_gripper(const DemoScript& script) {
  Eigen::VectorXd g(script.frames);
  double value = script.gripper_open_value;
  std::vector<GraspEvent> events = script.grasps;
  std::sort(events.begin(), events.end(),
            [](const GraspEvent& a, const GraspEvent& b) { return a.frame < b.frame; });
  size_t e = 0;
  for (int t = 0; t < script.frames; ++t) {
    while (e < events.size() && events[e].frame <= t) {
      value = events[e].close ? script.gripper_close_value : script.gripper_open_value;
      ++e;
    }
    g(t) = value;
  }
  if (script.gripper_transition_frames > 0) {
    const int k = script.gripper_transition_frames;
    Eigen::VectorXd smoothed = g;
    for (int t = 0; t < script.frames; ++t) {
      double acc = 0.0;
      int cnt = 0;
      for (int d = -k; d <= k; ++d) {
        const int idx = std::clamp(t + d, 0, script.frames - 1);
        acc += g(idx);
        ++cnt;
      }
      smoothed(t) = acc / cnt;
    }
    g = smoothed;
  }
  return g;
}

Eigen::VectorXd script_force(const DemoScript& script, uint64_t seed) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(script.frames);
  constexpr int kRamp = 4;
  for (const auto& phase : script.forces) {
    if (phase.start < 0 || phase.end > script.frames || phase.start >= phase.end) {
      throw InvalidScript("force phase outside [0, frames)");
    }
    for (int t = phase.start; t < phase.end; ++t) {
      double edge = 1.0;
      if (t - phase.start < kRamp) edge = (t - phase.start + 1.0) / kRamp;
      if (phase.end - 1 - t < kRamp) {
        edge = std::min(edge, (phase.end - t + 0.0) / kRamp);
      }
      f(t) += phase.amplitude * edge;
    }
  }
  Rng rng(derive_seed(seed, 0xF0));
  for (int t = 0; t < script.frames; ++t) {
    f(t) += rng.normal(0.0, script.force_noise_std);
  }
  return f;
}

Demo generate_demo(const RigidScene& scene, const DemoScript& script,
                   const std::vector<int64_t>& query_ids,
                   const NoiseConfig& noise, uint64_t seed) {
  Demo demo;
  const RigidScene posed = script_scene(scene, script);
  demo.camera = script_camera(script);
  demo.tracks = render_tracks(posed, demo.camera, query_ids, noise, seed);
  demo.gripper_openness = script_gripper(script);
  demo.vertical_force = script_force(script, seed);
  demo.dt = script.dt;
  return demo;
}

// ---------------------------------------------------------------------------
// SimWorld

SimWorld::SimWorld(const RigidScene& scene, const RigidTransform& camera_start,
                   const NoiseConfig& noise, uint64_t seed)
    : scene_(scene),
      camera_(camera_start),
      noise_(noise),
      rng_(derive_seed(seed, 0x51)) {
  body_poses_.reserve(scene_.bodies.size());
  for (const auto& b : scene_.bodies) {
    body_poses_.push_back(b.poses.empty() ? RigidTransform::identity() : b.poses.front());
  }
}

TrackSet SimWorld::observe(const std::vector<int64_t>& query_ids) {
  TrackSet out;
  out.resize(static_cast<int>(query_ids.size()), 1);
  FrameRngs rngs{Rng(rng_.next_u64()), Rng(rng_.next_u64()), Rng(rng_.next_u64())};
  observe_frame(scene_, body_poses_, camera_, CameraModel{}, query_ids, noise_,
                rngs, out, 0);
  return out;
}

void SimWorld::apply_camera_twist(const Vec6& twist, double dt) {
  camera_ = integrate_twist(camera_, twist, dt);
  if (held_body_ >= 0) {
    body_poses_[held_body_] = camera_.compose(grasp_offset_);
  }
}

void SimWorld::set_gripper(bool closed, double grasp_radius) {
  if (closed) {
    if (held_body_ >= 0) return;
    const Vec3 axis = camera_.rotation.col(2);  // optical axis, world frame
    double best = grasp_radius;
    int best_body = -1;
    for (size_t b = 0; b < scene_.bodies.size(); ++b) {
      if (scene_.bodies[b].is_background) continue;
      Vec3 centroid = Vec3::Zero();
      for (Eigen::Index i = 0; i < scene_.bodies[b].points.rows(); ++i) {
        centroid += body_poses_[b].apply(scene_.bodies[b].points.row(i).transpose());
      }
      centroid /= static_cast<double>(scene_.bodies[b].points.rows());
      const Vec3 rel = centroid - camera_.translation;
      const double lateral = (rel - rel.dot(axis) * axis).norm();
      if (lateral < best) {
        best = lateral;
        best_body = static_cast<int>(b);
      }
    }
    if (best_body >= 0) {
      held_body_ = best_body;
      grasp_offset_ = camera_.inverse().compose(body_poses_[best_body]);
    }
  } else if (held_body_ >= 0) {
    RigidTransform dropped = body_poses_[held_body_];
    dropped.translation.z() = 0.0;
    body_poses_[held_body_] = dropped;
    held_body_ = -1;
  }
}

double SimWorld::vertical_force() const {
  if (contact_height_ < 0.0) return 0.0;
  const double press = contact_height_ - camera_.translation.z();
  return press > 0.0 ? contact_stiffness_ * press : 0.0;
}

void SimWorld::set_contact(double height, double stiffness) {
  contact_height_ = height;
  contact_stiffness_ = stiffness;
}

}  // namespace trackservo
