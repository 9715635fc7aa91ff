#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace trackservo {

/// Temporal refinement stack: 4 iterations x 12 blocks, each block holding
/// two causal depthwise temporal convs (widths 512 and 2048, kernel 3) with
/// grouped pointwise mixing between them. Weights are seeded randomly; the
/// stack exists to prove streaming/offline equivalence, not accuracy.
struct CausalStackConfig {
  int iterations = 4;
  int blocks_per_iteration = 12;
  int width1 = 512;
  int width2 = 2048;
  int kernel = 3;
  int mixing_groups = 16;
  float residual_scale = 0.5f;
  uint64_t seed = 0;
};

class CausalStack;

/// Streaming state: the last kernel-1 input frames of every depthwise layer,
/// per tracked point.
struct CausalContext {
  std::vector<Eigen::MatrixXf> conv1_history;  // per block: (kernel-1) x width1
  std::vector<Eigen::MatrixXf> conv2_history;  // per block: (kernel-1) x width2

  size_t total_values() const;
  std::vector<float> flatten() const;
  static CausalContext unflatten(const CausalStackConfig& cfg,
                                 const std::vector<float>& values);
};

class CausalStack {
 public:
  explicit CausalStack(const CausalStackConfig& cfg);

  const CausalStackConfig& config() const { return cfg_; }
  int total_blocks() const { return cfg_.iterations * cfg_.blocks_per_iteration; }

  /// Full-sequence causal convolution (left zero padding).
  Eigen::MatrixXf offline_forward(const Eigen::MatrixXf& sequence) const;

  /// Fresh all-zero context.
  CausalContext make_context() const;

  /// One streamed frame: output plus the updated context. The context is a
  /// value; the caller owns both the old and the new one.
  std::pair<Eigen::VectorXf, CausalContext> streaming_step(
      const CausalContext& context, const Eigen::VectorXf& frame) const;

 private:
  struct Block {
    Eigen::MatrixXf dw1;  // width1 x kernel
    Eigen::MatrixXf dw2;  // width2 x kernel
    std::vector<Eigen::MatrixXf> mix_up;    // per group: (w2/g) x (w1/g)
    std::vector<Eigen::MatrixXf> mix_down;  // per group: (w1/g) x (w2/g)
    Eigen::VectorXf bias_up;
    Eigen::VectorXf bias_down;
  };
  void check_context(const CausalContext& context) const;

  CausalStackConfig cfg_;
  std::vector<Block> blocks_;
};

}  // namespace trackservo
