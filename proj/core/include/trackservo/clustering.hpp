#pragma once

#include <tuple>
#include <vector>

#include <Eigen/Core>

#include "trackservo/geometry.hpp"
#include "trackservo/scene.hpp"

namespace trackservo {

struct LinearLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

struct ResidualBlock {
  LinearLayer in;   // width -> bottleneck
  LinearLayer out;  // bottleneck -> width
};

/// Point encoder: Gaussian-kernel centroid encoding -> 64 -> 2 residual
/// blocks (bottleneck 32) -> k x 3 head.
struct PointNet {
  LinearLayer proj;
  ResidualBlock block1, block2;
  LinearLayer head;  // (3k) x 64
};

/// Transform net: frame latents smoothed by a learned depthwise filter,
/// projected to 128 -> 2 residual blocks (bottleneck 64) -> k x 7 head.
struct TransformNet {
  Eigen::MatrixXd latents;  // T x 64
  Eigen::MatrixXd filter;   // 128 x 64 (taps x channels)
  LinearLayer proj;         // 64 -> 128
  ResidualBlock block1, block2;
  LinearLayer head;  // (7k) x 128
};

struct ClusterNetParams {
  // Centroid bank; initialized from the data and held fixed.
  Eigen::MatrixXd centroids_u;  // 384 x T
  Eigen::MatrixXd centroids_v;  // 384 x T
  PointNet point_net;
  TransformNet transform_net;
  // Forks of the two head matrices, one row block per cluster.
  LinearLayer point_fork1, point_fork2;
  LinearLayer tf_fork1, tf_fork2;
  int k = 1;

  int frames() const { return static_cast<int>(centroids_u.cols()); }
};

/// Gradients in the shape of the trainable parameters.
struct ClusterNetGrads {
  PointNet point_net;
  TransformNet transform_net;
  LinearLayer point_fork1, point_fork2;
  LinearLayer tf_fork1, tf_fork2;
};

struct ClusterModel {
  int k = 0;
  Eigen::MatrixXd points3d;  // n x 3k, cluster-major blocks of 3
  std::vector<std::vector<RigidTransform>> transforms;  // [k][T]
  std::vector<int> assignment;                          // argmin cluster per point
  Eigen::MatrixXd residuals;       // n x k, visibility-weighted squared error
  Eigen::VectorXd visible_frames;  // per point
  std::vector<double> split_losses;                  // loss after each accepted stage
  std::vector<std::tuple<int, int, double>> trace;   // (step, k, loss)

  double total_loss() const;
  /// Mean squared reprojection error per visible frame for point i under
  /// its assigned cluster.
  double mean_residual(int i) const;
};

struct OptimizeConfig {
  int k_target = 1;
  int steps_per_round = 300;
  double learning_rate = 1e-2;
  double fork_std = 1e-3;
  double improve_tol = 1e-3;  // fork accepted if it improves loss by >= 0.1%
  int centroids = 384;
  uint64_t seed = 0;
};

/// Gaussian-kernel encoding exp(-d^2) of every track against the centroid
/// trajectories; d is the mean distance over the point's visible frames.
Eigen::MatrixXd encode_points(const TrackSet& tracks,
                              const Eigen::MatrixXd& centroids_u,
                              const Eigen::MatrixXd& centroids_v);

/// Reprojection loss with per-point min over clusters.
double cluster_loss(const ClusterNetParams& params, const TrackSet& tracks);

/// Reverse-mode gradients of cluster_loss; the min subgradient follows the
/// achieving cluster (ties -> lowest index). Fork gradients are zero.
ClusterNetGrads gradient_of_loss(const ClusterNetParams& params,
                                 const TrackSet& tracks);

ClusterNetParams init_cluster_params(const TrackSet& tracks,
                                     const OptimizeConfig& cfg);

ClusterModel optimize_with_splitting(const TrackSet& tracks,
                                     const OptimizeConfig& cfg);

struct PruneConfig {
  double tolerance = 0.05;  // max relative loss increase per deletion
};

ClusterModel prune_clusters(const ClusterModel& model, const TrackSet& tracks,
                            const PruneConfig& cfg = PruneConfig{});

/// Concatenates demos along time ("t indexes both time and demos").
TrackSet concat_tracks(const std::vector<const TrackSet*>& tracks);

/// Assignment accuracy against ground-truth labels, maximized over label
/// permutations (clusters are unordered). Intended for evaluation.
double assignment_accuracy(const std::vector<int>& assignment,
                           const std::vector<int>& ground_truth);

}  // namespace trackservo
