#pragma once

#include <vector>

#include "trackservo/clustering.hpp"
#include "trackservo/scene.hpp"

namespace trackservo {

struct ActivePointConfig {
  double saliency = 0.5;            // fraction of demos visible at segment end
  double is_gripper = 0.5;          // static-point rejection, vs p90 motion
  double cross_demo_var_px = 30.0;  // spread of final positions, pixels
  double avg_err_removal = 0.01;    // cluster residual per visible frame
  double multi_cluster = 0.5;       // normalized vote threshold for merging
  double second_pass_saliency = 0.5;
  int closest_k = 4;
  double dist_px = 20.0;
  int max_points = 128;
  uint64_t seed = 0;
};

struct ActivePointSet {
  std::vector<int64_t> ids;
  std::vector<int> clusters;         // originating cluster per id
  std::vector<TrackSet> reference;   // per demo, segment frames, selected ids
};

/// Frame-range slice [begin, end) of a track set.
TrackSet slice_tracks(const TrackSet& tracks, int begin, int end);

/// Row subset by point id, in the given order.
TrackSet select_rows(const TrackSet& tracks, const std::vector<int64_t>& ids);

/// Per-point 2D path length over the segment, averaged over the demos where
/// the point is visible. Indexed like the demos' rows.
std::vector<double> segment_motions(const std::vector<TrackSet>& segment_demos);

/// First-pass candidates: visible at the segment end in enough demos, moving
/// more than the gripper-static threshold, and funneling to a consistent
/// final position across demos.
std::vector<int64_t> candidate_filter(const std::vector<TrackSet>& segment_demos,
                                      const ActivePointConfig& cfg);

/// Candidate votes select the motion cluster(s); clusters whose points do
/// not move (the gripper) are removed afterwards.
std::vector<int> vote_clusters(const std::vector<int64_t>& candidates,
                               const ClusterModel& model,
                               const std::vector<int64_t>& model_ids,
                               const std::vector<double>& motions,
                               const ActivePointConfig& cfg);

/// Residual, visibility and neighborhood cleanup of the selected clusters'
/// points, capped at max_points by a seeded uniform sample.
ActivePointSet cleanup(const std::vector<int>& selected_clusters,
                       const ClusterModel& model,
                       const std::vector<int64_t>& model_ids,
                       const std::vector<TrackSet>& segment_demos,
                       const ActivePointConfig& cfg);

}  // namespace trackservo
