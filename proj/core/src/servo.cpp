#include "trackservo/servo.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "trackservo/errors.hpp"

namespace trackservo {

std::vector<int64_t> select_points(const FrameSlice& current,
                                   const FrameSlice& demo_frame,
                                   const ServoConfig& cfg) {
  std::unordered_map<int64_t, const PointState*> demo_by_id;
  for (const auto& p : demo_frame) demo_by_id[p.id] = &p;

  struct Scored {
    int64_t id;
    double score;
    bool both_visible;
  };
  std::vector<Scored> pool;
  int shared = 0;
  for (const auto& cur : current) {
    auto it = demo_by_id.find(cur.id);
    if (it == demo_by_id.end()) continue;
    ++shared;
    if (cur.occluded) continue;
    pool.push_back({cur.id, cur.visibility + it->second->visibility,
                    !it->second->occluded});
  }
  if (pool.empty()) {
    throw NoUsablePoints("all points occluded in the current frame");
  }
  const int keep = std::max(
      1, static_cast<int>(std::ceil(cfg.visible_fraction * shared)));
  std::vector<Scored> eligible;
  for (const auto& s : pool) {
    if (s.both_visible) eligible.push_back(s);
  }
  std::vector<Scored>& ranked = eligible.empty() ? pool : eligible;
  std::sort(ranked.begin(), ranked.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  const int n = std::min<int>(keep, static_cast<int>(ranked.size()));
  std::vector<int64_t> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(ranked[i].id);
  std::sort(out.begin(), out.end());
  return out;
}

int select_demo(const FrameSlice& current,
                const std::vector<FrameSlice>& demo_initial_frames) {
  std::unordered_map<int64_t, const PointState*> cur_by_id;
  for (const auto& p : current) cur_by_id[p.id] = &p;

  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (size_t d = 0; d < demo_initial_frames.size(); ++d) {
    double sum = 0.0;
    int count = 0;
    for (const auto& dp : demo_initial_frames[d]) {
      if (dp.occluded) continue;
      auto it = cur_by_id.find(dp.id);
      if (it == cur_by_id.end() || it->second->occluded) continue;
      sum += distance(dp.pos, it->second->pos);
      ++count;
    }
    if (count == 0) continue;
    const double mean = sum / count;
    if (mean < best_dist) {
      best_dist = mean;
      best = static_cast<int>(d);
    }
  }
  if (best < 0) {
    throw NoComparableDemo("no demo shares a visible point with the current frame");
  }
  return best;
}

namespace {

Eigen::VectorXd min_norm_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(1e-8);
  return svd.solve(b);
}

Eigen::VectorXd residual(const std::vector<Point2>& from,
                         const std::vector<Point2>& to) {
  Eigen::VectorXd r(2 * from.size());
  for (size_t i = 0; i < from.size(); ++i) {
    r(2 * i) = to[i].u - from[i].u;
    r(2 * i + 1) = to[i].v - from[i].v;
  }
  return r;
}

Eigen::VectorXd one_direction(const std::vector<Point2>& at,
                              const Eigen::VectorXd& r, const ServoConfig& cfg) {
  JacobianBlock j = image_jacobian(at, cfg.dof);
  if (cfg.orthogonalize) {
    j = orthogonalize_last_columns(j);
  }
  return min_norm_solve(j.rows, r);
}

}  // namespace

ControlCommand servo_step(const std::vector<Point2>& p,
                          const std::vector<Point2>& g, const ServoConfig& cfg) {
  if (p.size() < 2 || p.size() != g.size()) {
    throw InvalidConfig("servo_step needs >= 2 matched points");
  }
  Eigen::VectorXd v = one_direction(p, residual(p, g), cfg);
  if (cfg.bidirectional) {
    const Eigen::VectorXd back = one_direction(g, residual(g, p), cfg);
    v = 0.5 * (v - back);
  }
  ControlCommand cmd = ControlCommand::from_solution(v, cfg.dof);
  cmd.vx *= cfg.translation_gain;
  cmd.vy *= cfg.translation_gain;
  cmd.vz *= cfg.translation_gain;
  cmd.wx *= cfg.rotation_gain;
  cmd.wy *= cfg.rotation_gain;
  cmd.rz *= cfg.rotation_gain;
  const double c = cfg.command_clamp;
  for (double* axis : {&cmd.vx, &cmd.vy, &cmd.vz, &cmd.wx, &cmd.wy, &cmd.rz}) {
    *axis = std::clamp(*axis, -c, c);
  }
  return cmd;
}

PhaseState make_phase_state(int start_frame, const ServoConfig& cfg) {
  PhaseState s;
  s.mode = TargetMode::FollowDemo;
  s.frame = start_frame;
  s.threshold = cfg.follow_threshold_px;
  return s;
}

PhaseState advance(const PhaseState& state, const std::vector<double>& pixel_errors,
                   const ServoConfig& cfg, int last_frame) {
  PhaseState next = state;
  if (next.complete) return next;
  const double err = percentile(pixel_errors, cfg.error_percentile);
  if (next.mode == TargetMode::FinalAverage) {
    next.threshold *= cfg.final_growth;
    if (err < next.threshold) next.complete = true;
    return next;
  }
  if (err < next.threshold) {
    ++next.frame;
    if (next.frame > last_frame) {
      next.mode = TargetMode::FinalAverage;
      next.frame = last_frame;
      next.threshold = cfg.final_threshold_px;
    }
  }
  return next;
}

ServoTarget final_target(const std::vector<FrameSlice>& demo_final_frames,
                         const std::vector<int64_t>& point_ids) {
  ServoTarget target;
  target.mode = TargetMode::FinalAverage;
  for (int64_t id : point_ids) {
    double w_sum = 0.0;
    Vec2 pos_sum = Vec2::Zero();
    double vis_sum = 0.0;
    int demos = 0;
    for (const auto& frame : demo_final_frames) {
      for (const auto& p : frame) {
        if (p.id != id) continue;
        vis_sum += p.visibility;
        ++demos;
        if (!p.occluded) {
          w_sum += p.visibility;
          pos_sum += p.visibility * p.pos.vec();
        }
      }
    }
    if (w_sum <= 0.0) {
      throw PointNeverVisible("point " + std::to_string(id) +
                              " not visible in any demo's final frame");
    }
    target.ids.push_back(id);
    target.goals.push_back(Point2::from(pos_sum / w_sum));
    target.goal_visibility.push_back(demos > 0 ? vis_sum / demos : 0.0);
    target.goal_occluded.push_back(0);
  }
  return target;
}

ForceStepResult force_feedback_step(double force_n, const ControlCommand& visual,
                                    const ForceLaw& law) {
  ForceStepResult out;
  out.command = visual;
  out.command.vz = law.kp * (law.target_n - force_n);
  out.advance_gate = std::abs(force_n - law.target_n) <= law.band_n;
  return out;
}

std::string format_trace(const TraceRecord& rec) {
  std::ostringstream os;
  os << "step=" << rec.step << " stage=" << rec.stage << " frame=" << rec.frame
     << " mode=" << (rec.mode == TargetMode::FollowDemo ? "follow" : "final")
     << " threshold=" << rec.threshold << " err_pctl=" << rec.error_percentile_px
     << " selected=";
  for (size_t i = 0; i < rec.selected.size(); ++i) {
    if (i) os << ',';
    os << rec.selected[i];
  }
  os << " cmd=" << rec.command.vx << ',' << rec.command.vy << ',' << rec.command.vz;
  if (rec.command.dof == 6) {
    os << ',' << rec.command.wx << ',' << rec.command.wy;
  }
  os << ',' << rec.command.rz;
  return os.str();
}

}  // namespace trackservo
