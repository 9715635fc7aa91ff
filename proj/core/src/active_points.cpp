#include "trackservo/active_points.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "trackservo/errors.hpp"

namespace trackservo {

TrackSet slice_tracks(const TrackSet& tracks, int begin, int end) {
  if (begin < 0 || end > tracks.frames() || begin >= end) {
    throw InvalidConfig("slice_tracks: bad frame range");
  }
  TrackSet out;
  out.point_ids = tracks.point_ids;
  out.source_body = tracks.source_body;
  out.u = tracks.u.middleCols(begin, end - begin);
  out.v = tracks.v.middleCols(begin, end - begin);
  out.occluded = tracks.occluded.middleCols(begin, end - begin);
  out.visibility = tracks.visibility.middleCols(begin, end - begin);
  return out;
}

TrackSet select_rows(const TrackSet& tracks, const std::vector<int64_t>& ids) {
  std::unordered_map<int64_t, int> row_of;
  for (int i = 0; i < tracks.points(); ++i) row_of[tracks.point_ids[i]] = i;
  TrackSet out;
  const auto n = static_cast<int>(ids.size());
  out.resize(n, tracks.frames());
  for (int i = 0; i < n; ++i) {
    auto it = row_of.find(ids[i]);
    if (it == row_of.end()) {
      throw UnknownPointId("select_rows: id " + std::to_string(ids[i]));
    }
    const int r = it->second;
    out.point_ids[i] = ids[i];
    out.source_body[i] = tracks.source_body[r];
    out.u.row(i) = tracks.u.row(r);
    out.v.row(i) = tracks.v.row(r);
    out.occluded.row(i) = tracks.occluded.row(r);
    out.visibility.row(i) = tracks.visibility.row(r);
  }
  return out;
}

std::vector<double> segment_motions(const std::vector<TrackSet>& segment_demos) {
  const int n = segment_demos.front().points();
  std::vector<double> motions(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double total = 0.0;
    int demos_with_path = 0;
    for (const auto& demo : segment_demos) {
      double path = 0.0;
      bool any = false;
      for (int t = 0; t + 1 < demo.frames(); ++t) {
        if (demo.is_occluded(i, t) || demo.is_occluded(i, t + 1)) continue;
        path += distance(demo.position(i, t), demo.position(i, t + 1));
        any = true;
      }
      if (any) {
        total += path;
        ++demos_with_path;
      }
    }
    motions[i] = demos_with_path > 0 ? total / demos_with_path : 0.0;
  }
  return motions;
}

std::vector<int64_t> candidate_filter(const std::vector<TrackSet>& segment_demos,
                                      const ActivePointConfig& cfg) {
  if (segment_demos.empty()) throw InvalidConfig("candidate_filter: no demos");
  const auto& first = segment_demos.front();
  for (const auto& d : segment_demos) {
    if (d.point_ids != first.point_ids) {
      throw MismatchedTracks("candidate_filter: demos disagree on point ids");
    }
  }
  const int n = first.points();
  const auto d_count = static_cast<int>(segment_demos.size());
  const std::vector<double> motions = segment_motions(segment_demos);
  const double motion_p90 = percentile(motions, 90.0);
  const double motion_floor = cfg.is_gripper * motion_p90;

  std::vector<int64_t> out;
  for (int i = 0; i < n; ++i) {
    // (a) visible at the segment-final frame in enough demos
    int visible_final = 0;
    std::vector<Vec2> finals;
    for (const auto& demo : segment_demos) {
      const int last = demo.frames() - 1;
      if (!demo.is_occluded(i, last)) {
        ++visible_final;
        finals.push_back(demo.position(i, last).vec());
      }
    }
    if (static_cast<double>(visible_final) < cfg.saliency * d_count) continue;
    // (b) enough motion to not be the gripper or a grasped object
    if (motions[i] < motion_floor) continue;
    // (c) final positions funnel across demos
    if (finals.size() >= 2) {
      Vec2 mean = Vec2::Zero();
      for (const auto& f : finals) mean += f;
      mean /= static_cast<double>(finals.size());
      double var = 0.0;
      for (const auto& f : finals) var += (f - mean).squaredNorm();
      var /= static_cast<double>(finals.size() - 1);
      if (to_pixels(std::sqrt(var)) > cfg.cross_demo_var_px) continue;
    }
    out.push_back(first.point_ids[i]);
  }
  if (out.empty()) throw EmptyCandidates("no candidates after filtering");
  return out;
}

std::vector<int> vote_clusters(const std::vector<int64_t>& candidates,
                               const ClusterModel& model,
                               const std::vector<int64_t>& model_ids,
                               const std::vector<double>& motions,
                               const ActivePointConfig& cfg) {
  std::unordered_map<int64_t, int> row_of;
  for (size_t i = 0; i < model_ids.size(); ++i) {
    row_of[model_ids[i]] = static_cast<int>(i);
  }
  std::vector<int> votes(model.k, 0);
  for (int64_t id : candidates) {
    auto it = row_of.find(id);
    if (it == row_of.end()) {
      throw UnknownPointId("vote_clusters: id " + std::to_string(id));
    }
    votes[model.assignment[it->second]] += 1;
  }
  const int max_votes = *std::max_element(votes.begin(), votes.end());
  if (max_votes == 0) throw NoClusterSelected("no candidate maps to any cluster");

  const double motion_floor = cfg.is_gripper * percentile(motions, 90.0);
  std::vector<int> out;
  for (int c = 0; c < model.k; ++c) {
    const double score = static_cast<double>(votes[c]) / max_votes;
    if (score < cfg.multi_cluster) continue;
    double motion_sum = 0.0;
    int members = 0;
    for (size_t i = 0; i < model.assignment.size(); ++i) {
      if (model.assignment[i] == c) {
        motion_sum += motions[i];
        ++members;
      }
    }
    const double mean_motion = members > 0 ? motion_sum / members : 0.0;
    if (mean_motion < motion_floor) continue;  // a gripper-like static cluster
    out.push_back(c);
  }
  if (out.empty()) throw NoClusterSelected("every voted cluster was static");
  return out;
}

ActivePointSet cleanup(const std::vector<int>& selected_clusters,
                       const ClusterModel& model,
                       const std::vector<int64_t>& model_ids,
                       const std::vector<TrackSet>& segment_demos,
                       const ActivePointConfig& cfg) {
  if (selected_clusters.empty()) throw InvalidConfig("cleanup: empty selection");
  std::unordered_map<int64_t, int> row_of;
  for (size_t i = 0; i < model_ids.size(); ++i) {
    row_of[model_ids[i]] = static_cast<int>(i);
  }
  std::unordered_map<int64_t, int> seg_row;
  const auto& first = segment_demos.front();
  for (int i = 0; i < first.points(); ++i) seg_row[first.point_ids[i]] = i;

  struct Member {
    int64_t id;
    int cluster;
    int seg_index;
  };
  std::vector<Member> pool;
  for (size_t i = 0; i < model_ids.size(); ++i) {
    const int c = model.assignment[i];
    if (std::find(selected_clusters.begin(), selected_clusters.end(), c) ==
        selected_clusters.end()) {
      continue;
    }
    auto it = seg_row.find(model_ids[i]);
    if (it == seg_row.end()) continue;
    // Residual filter: points the model cannot place anywhere are tracking
    // failures.
    if (model.mean_residual(static_cast<int>(i)) >= cfg.avg_err_removal) continue;
    pool.push_back({model_ids[i], c, it->second});
  }

  // Whole-segment mean visibility.
  std::vector<Member> visible_pool;
  for (const auto& m : pool) {
    double vis = 0.0;
    int count = 0;
    for (const auto& demo : segment_demos) {
      for (int t = 0; t < demo.frames(); ++t) {
        vis += demo.visibility(m.seg_index, t);
        ++count;
      }
    }
    if (count > 0 && vis / count >= cfg.second_pass_saliency) {
      visible_pool.push_back(m);
    }
  }

  // Neighborhood filter: mean (over visible frames) distance to the
  // closest_k-th nearest selected point.
  std::vector<Member> kept;
  for (const auto& m : visible_pool) {
    double total = 0.0;
    int frames = 0;
    for (const auto& demo : segment_demos) {
      for (int t = 0; t < demo.frames(); ++t) {
        if (demo.is_occluded(m.seg_index, t)) continue;
        std::vector<double> dists;
        for (const auto& other : visible_pool) {
          if (other.id == m.id || demo.is_occluded(other.seg_index, t)) continue;
          dists.push_back(distance(demo.position(m.seg_index, t),
                                   demo.position(other.seg_index, t)));
        }
        if (static_cast<int>(dists.size()) < cfg.closest_k) continue;
        std::nth_element(dists.begin(), dists.begin() + cfg.closest_k - 1, dists.end());
        total += dists[cfg.closest_k - 1];
        ++frames;
      }
    }
    if (frames == 0) continue;
    if (to_pixels(total / frames) <= cfg.dist_px) kept.push_back(m);
  }
  if (kept.empty()) throw EmptyAfterCleanup("no points survived cleanup");

  if (static_cast<int>(kept.size()) > cfg.max_points) {
    Rng rng(derive_seed(cfg.seed, 0xAC7));
    rng.shuffle(kept);
    kept.resize(cfg.max_points);
  }
  std::sort(kept.begin(), kept.end(),
            [](const Member& a, const Member& b) { return a.id < b.id; });

  ActivePointSet out;
  for (const auto& m : kept) {
    out.ids.push_back(m.id);
    out.clusters.push_back(m.cluster);
  }
  for (const auto& demo : segment_demos) {
    out.reference.push_back(select_rows(demo, out.ids));
  }
  return out;
}

}  // namespace trackservo
