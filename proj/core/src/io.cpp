#include "trackservo/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "trackservo/errors.hpp"

namespace trackservo {

namespace {

void put(std::ostringstream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

void put_pose(std::ostringstream& os, const RigidTransform& pose) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      put(os, pose.rotation(r, c));
      os << ' ';
    }
  }
  for (int i = 0; i < 3; ++i) {
    put(os, pose.translation(i));
    if (i < 2) os << ' ';
  }
  os << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw IoError("unexpected end of input");
    return w;
  }
  void expect(const std::string& token) {
    const std::string w = word();
    if (w != token) throw IoError("expected '" + token + "', got '" + w + "'");
  }
  double num() { return std::strtod(word().c_str(), nullptr); }
  long integer() { return std::strtol(word().c_str(), nullptr, 10); }
  RigidTransform pose() {
    RigidTransform p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) p.rotation(r, c) = num();
    }
    for (int i = 0; i < 3; ++i) p.translation(i) = num();
    return p;
  }

 private:
  std::istream& in_;
};

void write_tracks(std::ostringstream& os, const TrackSet& tracks) {
  const int n = tracks.points();
  const int t_count = tracks.frames();
  os << "tracks " << n << ' ' << t_count << '\n';
  os << "ids";
  for (int64_t id : tracks.point_ids) os << ' ' << id;
  os << "\nsource_body";
  for (int b : tracks.source_body) os << ' ' << b;
  os << "\npositions\n";
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < t_count; ++t) {
      put(os, tracks.u(i, t));
      os << ' ';
      put(os, tracks.v(i, t));
      os << (t + 1 < t_count ? ' ' : '\n');
    }
  }
  os << "occluded\n";
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < t_count; ++t) {
      os << int(tracks.occluded(i, t)) << (t + 1 < t_count ? ' ' : '\n');
    }
  }
  os << "visibility\n";
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < t_count; ++t) {
      put(os, tracks.visibility(i, t));
      os << (t + 1 < t_count ? ' ' : '\n');
    }
  }
}

TrackSet read_tracks(Reader& r) {
  r.expect("tracks");
  const int n = static_cast<int>(r.integer());
  const int t_count = static_cast<int>(r.integer());
  TrackSet out;
  out.resize(n, t_count);
  r.expect("ids");
  for (int i = 0; i < n; ++i) out.point_ids[i] = r.integer();
  r.expect("source_body");
  for (int i = 0; i < n; ++i) out.source_body[i] = static_cast<int>(r.integer());
  r.expect("positions");
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < t_count; ++t) {
      out.u(i, t) = r.num();
      out.v(i, t) = r.num();
    }
  }
  r.expect("occluded");
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < t_count; ++t) out.occluded(i, t) = static_cast<char>(r.integer());
  }
  r.expect("visibility");
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < t_count; ++t) out.visibility(i, t) = r.num();
  }
  return out;
}

}  // namespace

std::string tracks_to_string(const TrackSet& tracks) {
  std::ostringstream os;
  write_tracks(os, tracks);
  return os.str();
}

TrackSet tracks_from_stream(std::istream& in) {
  Reader r(in);
  return read_tracks(r);
}

// ---------------------------------------------------------------------------

std::string demo_to_string(const Demo& demo) {
  std::ostringstream os;
  os << "tsdemo 1\n";
  os << "dt ";
  put(os, demo.dt);
  os << "\nframes " << demo.frames() << '\n';
  os << "camera\n";
  for (const auto& pose : demo.camera) put_pose(os, pose);
  os << "gripper\n";
  for (int t = 0; t < demo.gripper_openness.size(); ++t) {
    put(os, demo.gripper_openness(t));
    os << (t + 1 < demo.gripper_openness.size() ? ' ' : '\n');
  }
  os << "force\n";
  for (int t = 0; t < demo.vertical_force.size(); ++t) {
    put(os, demo.vertical_force(t));
    os << (t + 1 < demo.vertical_force.size() ? ' ' : '\n');
  }
  write_tracks(os, demo.tracks);
  return os.str();
}

Demo demo_from_string(const std::string& text) {
  std::istringstream in(text);
  Reader r(in);
  r.expect("tsdemo");
  if (r.integer() != 1) throw IoError("unsupported demo version");
  Demo demo;
  r.expect("dt");
  demo.dt = r.num();
  r.expect("frames");
  const int t_count = static_cast<int>(r.integer());
  r.expect("camera");
  demo.camera.resize(t_count);
  for (int t = 0; t < t_count; ++t) demo.camera[t] = r.pose();
  r.expect("gripper");
  demo.gripper_openness.resize(t_count);
  for (int t = 0; t < t_count; ++t) demo.gripper_openness(t) = r.num();
  r.expect("force");
  demo.vertical_force.resize(t_count);
  for (int t = 0; t < t_count; ++t) demo.vertical_force(t) = r.num();
  demo.tracks = read_tracks(r);
  return demo;
}

// ---------------------------------------------------------------------------

std::string scene_to_string(const RigidScene& scene) {
  std::ostringstream os;
  os << "tsscene 1\n";
  os << "frames " << scene.frames << '\n';
  os << "extent ";
  put(os, scene.extent);
  os << "\nseed " << scene.seed << '\n';
  os << "bodies " << scene.bodies.size() << '\n';
  for (const auto& body : scene.bodies) {
    os << "body " << body.points.rows() << ' ' << (body.is_background ? 1 : 0) << '\n';
    for (Eigen::Index i = 0; i < body.points.rows(); ++i) {
      for (int c = 0; c < 3; ++c) {
        put(os, body.points(i, c));
        os << (c < 2 ? ' ' : '\n');
      }
    }
    os << "poses\n";
    for (const auto& pose : body.poses) put_pose(os, pose);
  }
  return os.str();
}

RigidScene scene_from_string(const std::string& text) {
  std::istringstream in(text);
  Reader r(in);
  r.expect("tsscene");
  if (r.integer() != 1) throw IoError("unsupported scene version");
  RigidScene scene;
  r.expect("frames");
  scene.frames = static_cast<int>(r.integer());
  r.expect("extent");
  scene.extent = r.num();
  r.expect("seed");
  scene.seed = static_cast<uint64_t>(r.integer());
  r.expect("bodies");
  const int b_count = static_cast<int>(r.integer());
  for (int b = 0; b < b_count; ++b) {
    r.expect("body");
    const int n = static_cast<int>(r.integer());
    Body body;
    body.is_background = r.integer() != 0;
    body.points.resize(n, 3);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) body.points(i, c) = r.num();
    }
    r.expect("poses");
    body.poses.resize(scene.frames);
    for (int t = 0; t < scene.frames; ++t) body.poses[t] = r.pose();
    scene.bodies.push_back(std::move(body));
  }
  return scene;
}

// ---------------------------------------------------------------------------

std::string cluster_model_to_string(const ClusterModel& model) {
  std::ostringstream os;
  const auto n = model.points3d.rows();
  const auto t_count =
      model.transforms.empty() ? 0 : model.transforms.front().size();
  os << "tsclusters 1\n";
  os << "k " << model.k << "\npoints " << n << "\nframes " << t_count << '\n';
  os << "points3d\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3 * model.k; ++c) {
      put(os, model.points3d(i, c));
      os << (c + 1 < 3 * model.k ? ' ' : '\n');
    }
  }
  for (int c = 0; c < model.k; ++c) {
    os << "transforms " << c << '\n';
    for (const auto& pose : model.transforms[c]) put_pose(os, pose);
  }
  os << "assignment";
  for (int a : model.assignment) os << ' ' << a;
  os << "\nresiduals\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < model.k; ++c) {
      put(os, model.residuals(i, c));
      os << (c + 1 < model.k ? ' ' : '\n');
    }
  }
  os << "visible_frames";
  for (Eigen::Index i = 0; i < model.visible_frames.size(); ++i) {
    os << ' ';
    put(os, model.visible_frames(i));
  }
  os << "\nsplit_losses";
  for (double l : model.split_losses) {
    os << ' ';
    put(os, l);
  }
  os << '\n';
  return os.str();
}

ClusterModel cluster_model_from_string(const std::string& text) {
  std::istringstream in(text);
  Reader r(in);
  r.expect("tsclusters");
  if (r.integer() != 1) throw IoError("unsupported cluster model version");
  ClusterModel model;
  r.expect("k");
  model.k = static_cast<int>(r.integer());
  r.expect("points");
  const int n = static_cast<int>(r.integer());
  r.expect("frames");
  const int t_count = static_cast<int>(r.integer());
  r.expect("points3d");
  model.points3d.resize(n, 3 * model.k);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3 * model.k; ++c) model.points3d(i, c) = r.num();
  }
  model.transforms.assign(model.k, {});
  for (int c = 0; c < model.k; ++c) {
    r.expect("transforms");
    r.integer();
    model.transforms[c].resize(t_count);
    for (int t = 0; t < t_count; ++t) model.transforms[c][t] = r.pose();
  }
  r.expect("assignment");
  model.assignment.resize(n);
  for (int i = 0; i < n; ++i) model.assignment[i] = static_cast<int>(r.integer());
  r.expect("residuals");
  model.residuals.resize(n, model.k);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < model.k; ++c) model.residuals(i, c) = r.num();
  }
  r.expect("visible_frames");
  model.visible_frames.resize(n);
  for (int i = 0; i < n; ++i) model.visible_frames(i) = r.num();
  r.expect("split_losses");
  std::string rest;
  std::getline(in, rest);
  std::istringstream ls(rest);
  double v;
  while (ls >> v) model.split_losses.push_back(v);
  return model;
}

// ---------------------------------------------------------------------------

namespace {

void write_profile(std::ostringstream& os, const ConstantMotionProfile& p) {
  os << "profile " << p.twists.size() << '\n';
  for (size_t k = 0; k < p.twists.size(); ++k) {
    for (int i = 0; i < 6; ++i) {
      put(os, p.twists[k](i));
      os << ' ';
    }
    put(os, p.durations[k]);
    os << '\n';
  }
}

ConstantMotionProfile read_profile(Reader& r) {
  r.expect("profile");
  const int n = static_cast<int>(r.integer());
  ConstantMotionProfile p;
  for (int k = 0; k < n; ++k) {
    Vec6 t;
    for (int i = 0; i < 6; ++i) t(i) = r.num();
    p.twists.push_back(t);
    p.durations.push_back(r.num());
  }
  return p;
}

const char* stage_kind_name(StageKind k) {
  switch (k) {
    case StageKind::VisualServo: return "visual-servo";
    case StageKind::GripperOpen: return "gripper-open";
    case StageKind::GripperClose: return "gripper-close";
    case StageKind::ForceServo: return "force-servo";
    case StageKind::ConstantMotion: return "constant-motion";
  }
  return "?";
}

StageKind stage_kind_from(const std::string& s) {
  if (s == "visual-servo") return StageKind::VisualServo;
  if (s == "gripper-open") return StageKind::GripperOpen;
  if (s == "gripper-close") return StageKind::GripperClose;
  if (s == "force-servo") return StageKind::ForceServo;
  if (s == "constant-motion") return StageKind::ConstantMotion;
  throw IoError("unknown stage kind: " + s);
}

}  // namespace

std::string plan_to_string(const MotionPlan& plan) {
  std::ostringstream os;
  os << "tsplan 1\n";
  os << "dt ";
  put(os, plan.dt);
  os << "\nstages " << plan.stages.size() << '\n';
  for (const auto& stage : plan.stages) {
    os << "stage " << stage_kind_name(stage.kind) << '\n';
    os << "force_law ";
    put(os, stage.force_law.target_n);
    os << ' ';
    put(os, stage.force_law.band_n);
    os << ' ';
    put(os, stage.force_law.kp);
    os << '\n';
    os << "follow_start";
    for (int f : stage.follow_start) os << ' ' << f;
    os << '\n';
    write_profile(os, stage.prelude);
    write_profile(os, stage.profile);
    os << "active " << stage.active.ids.size() << ' ' << stage.active.reference.size()
       << '\n';
    if (!stage.active.ids.empty()) {
      os << "ids";
      for (int64_t id : stage.active.ids) os << ' ' << id;
      os << "\nclusters";
      for (int c : stage.active.clusters) os << ' ' << c;
      os << '\n';
      for (const auto& tracks : stage.active.reference) write_tracks(os, tracks);
    }
  }
  return os.str();
}

MotionPlan plan_from_string(const std::string& text) {
  std::istringstream in(text);
  Reader r(in);
  r.expect("tsplan");
  if (r.integer() != 1) throw IoError("unsupported plan version");
  MotionPlan plan;
  r.expect("dt");
  plan.dt = r.num();
  r.expect("stages");
  const int s_count = static_cast<int>(r.integer());
  for (int s = 0; s < s_count; ++s) {
    r.expect("stage");
    Stage stage;
    stage.kind = stage_kind_from(r.word());
    r.expect("force_law");
    stage.force_law.target_n = r.num();
    stage.force_law.band_n = r.num();
    stage.force_law.kp = r.num();
    r.expect("follow_start");
    // follow_start has one entry per demo; peek via the next token of
    // "profile" marker, so read integers until the marker.
    std::string tok;
    std::vector<int> follows;
    while (true) {
      tok = r.word();
      if (tok == "profile") break;
      follows.push_back(static_cast<int>(std::strtol(tok.c_str(), nullptr, 10)));
    }
    stage.follow_start = follows;
    {
      const int n = static_cast<int>(r.integer());
      for (int k = 0; k < n; ++k) {
        Vec6 t;
        for (int i = 0; i < 6; ++i) t(i) = r.num();
        stage.prelude.twists.push_back(t);
        stage.prelude.durations.push_back(r.num());
      }
    }
    stage.profile = read_profile(r);
    r.expect("active");
    const int n_ids = static_cast<int>(r.integer());
    const int n_demos = static_cast<int>(r.integer());
    if (n_ids > 0) {
      r.expect("ids");
      stage.active.ids.resize(n_ids);
      for (int i = 0; i < n_ids; ++i) stage.active.ids[i] = r.integer();
      r.expect("clusters");
      stage.active.clusters.resize(n_ids);
      for (int i = 0; i < n_ids; ++i) {
        stage.active.clusters[i] = static_cast<int>(r.integer());
      }
      for (int d = 0; d < n_demos; ++d) {
        stage.active.reference.push_back(read_tracks(r));
      }
    }
    plan.stages.push_back(std::move(stage));
  }
  return plan;
}

// ---------------------------------------------------------------------------

std::string report_to_string(const ExecutionReport& report) {
  std::ostringstream os;
  os << "tsreport 1\n";
  os << "success " << (report.success ? 1 : 0) << '\n';
  os << "total_steps " << report.total_steps << '\n';
  os << "stages " << report.stages.size() << '\n';
  for (const auto& s : report.stages) {
    os << stage_kind_name(s.kind) << " completed=" << (s.completed ? 1 : 0)
       << " steps=" << s.steps << " final_error_px=";
    put(os, s.final_error_px);
    os << " demo=" << s.demo_followed << '\n';
  }
  os << "final_errors_px";
  for (double e : report.final_pixel_errors) {
    os << ' ';
    put(os, e);
  }
  os << '\n';
  os << "final_camera\n";
  put_pose(os, report.final_camera);
  os << "trace " << report.trace.size() << '\n';
  for (const auto& rec : report.trace) os << format_trace(rec) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

void save_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string load_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void save_demo(const std::string& path, const Demo& demo) {
  save_text(path, demo_to_string(demo));
}
Demo load_demo(const std::string& path) { return demo_from_string(load_text(path)); }
void save_scene(const std::string& path, const RigidScene& scene) {
  save_text(path, scene_to_string(scene));
}
RigidScene load_scene(const std::string& path) {
  return scene_from_string(load_text(path));
}
void save_plan(const std::string& path, const MotionPlan& plan) {
  save_text(path, plan_to_string(plan));
}
MotionPlan load_plan(const std::string& path) {
  return plan_from_string(load_text(path));
}

}  // namespace trackservo
