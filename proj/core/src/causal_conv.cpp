#include "trackservo/causal_conv.hpp"

#include <cmath>

#include "trackservo/common.hpp"
#include "trackservo/errors.hpp"

namespace trackservo {

size_t CausalContext::total_values() const {
  size_t n = 0;
  for (const auto& h : conv1_history) n += static_cast<size_t>(h.size());
  for (const auto& h : conv2_history) n += static_cast<size_t>(h.size());
  return n;
}

std::vector<float> CausalContext::flatten() const {
  std::vector<float> out;
  out.reserve(total_values());
  for (const auto& h : conv1_history) {
    out.insert(out.end(), h.data(), h.data() + h.size());
  }
  for (const auto& h : conv2_history) {
    out.insert(out.end(), h.data(), h.data() + h.size());
  }
  return out;
}

CausalContext CausalContext::unflatten(const CausalStackConfig& cfg,
                                       const std::vector<float>& values) {
  const int blocks = cfg.iterations * cfg.blocks_per_iteration;
  const int h = cfg.kernel - 1;
  const size_t expected =
      static_cast<size_t>(blocks) * h * (cfg.width1 + cfg.width2);
  if (values.size() != expected) {
    throw ContextShapeMismatch("expected " + std::to_string(expected) +
                               " values, got " + std::to_string(values.size()));
  }
  CausalContext ctx;
  size_t at = 0;
  for (int b = 0; b < blocks; ++b) {
    Eigen::MatrixXf m(h, cfg.width1);
    std::copy(values.begin() + at, values.begin() + at + m.size(), m.data());
    at += m.size();
    ctx.conv1_history.push_back(std::move(m));
  }
  for (int b = 0; b < blocks; ++b) {
    Eigen::MatrixXf m(h, cfg.width2);
    std::copy(values.begin() + at, values.begin() + at + m.size(), m.data());
    at += m.size();
    ctx.conv2_history.push_back(std::move(m));
  }
  return ctx;
}

CausalStack::CausalStack(const CausalStackConfig& cfg) : cfg_(cfg) {
  if (cfg.width1 % cfg.mixing_groups != 0 || cfg.width2 % cfg.mixing_groups != 0) {
    throw InvalidConfig("mixing groups must divide both widths");
  }
  Rng rng(derive_seed(cfg.seed, 0xCC));
  const int g1 = cfg.width1 / cfg.mixing_groups;
  const int g2 = cfg.width2 / cfg.mixing_groups;
  auto fill = [&rng](Eigen::MatrixXf& m, double scale) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<float>(rng.normal(0.0, scale));
    }
  };
  for (int b = 0; b < total_blocks(); ++b) {
    Block block;
    block.dw1.resize(cfg.width1, cfg.kernel);
    fill(block.dw1, std::sqrt(1.0 / cfg.kernel));
    block.dw2.resize(cfg.width2, cfg.kernel);
    fill(block.dw2, std::sqrt(1.0 / cfg.kernel));
    for (int g = 0; g < cfg.mixing_groups; ++g) {
      Eigen::MatrixXf up(g2, g1);
      fill(up, std::sqrt(2.0 / g1));
      block.mix_up.push_back(std::move(up));
      Eigen::MatrixXf down(g1, g2);
      fill(down, std::sqrt(2.0 / g2));
      block.mix_down.push_back(std::move(down));
    }
    block.bias_up = Eigen::VectorXf::Zero(cfg.width2);
    block.bias_down = Eigen::VectorXf::Zero(cfg.width1);
    blocks_.push_back(std::move(block));
  }
}

namespace {

// Causal depthwise conv over a full sequence, zero-padded on the left.
Eigen::MatrixXf conv_sequence(const Eigen::MatrixXf& x, const Eigen::MatrixXf& w) {
  const auto t_count = x.rows();
  const auto kernel = w.cols();
  Eigen::MatrixXf out = Eigen::MatrixXf::Zero(t_count, x.cols());
  for (Eigen::Index j = 0; j < kernel; ++j) {
    const Eigen::Index shift = kernel - 1 - j;  // tap j reads frame t - shift
    if (t_count <= shift) continue;
    out.bottomRows(t_count - shift).array() +=
        x.topRows(t_count - shift).array().rowwise() *
        w.col(j).transpose().array();
  }
  return out;
}

}  // namespace

Eigen::MatrixXf CausalStack::offline_forward(const Eigen::MatrixXf& sequence) const {
  if (sequence.cols() != cfg_.width1) {
    throw ContextShapeMismatch("sequence feature width mismatch");
  }
  const int g1 = cfg_.width1 / cfg_.mixing_groups;
  const int g2 = cfg_.width2 / cfg_.mixing_groups;
  Eigen::MatrixXf x = sequence;
  for (const auto& block : blocks_) {
    const Eigen::MatrixXf c1 = conv_sequence(x, block.dw1);
    Eigen::MatrixXf up(x.rows(), cfg_.width2);
    for (int g = 0; g < cfg_.mixing_groups; ++g) {
      up.middleCols(g * g2, g2) =
          c1.middleCols(g * g1, g1) * block.mix_up[g].transpose();
    }
    up.rowwise() += block.bias_up.transpose();
    up = up.cwiseMax(0.0f);
    const Eigen::MatrixXf c2 = conv_sequence(up, block.dw2);
    Eigen::MatrixXf down(x.rows(), cfg_.width1);
    for (int g = 0; g < cfg_.mixing_groups; ++g) {
      down.middleCols(g * g1, g1) =
          c2.middleCols(g * g2, g2) * block.mix_down[g].transpose();
    }
    down.rowwise() += block.bias_down.transpose();
    x += cfg_.residual_scale * down;
  }
  return x;
}

CausalContext CausalStack::make_context() const {
  CausalContext ctx;
  for (int b = 0; b < total_blocks(); ++b) {
    ctx.conv1_history.emplace_back(
        Eigen::MatrixXf::Zero(cfg_.kernel - 1, cfg_.width1));
    ctx.conv2_history.emplace_back(
        Eigen::MatrixXf::Zero(cfg_.kernel - 1, cfg_.width2));
  }
  return ctx;
}

void CausalStack::check_context(const CausalContext& context) const {
  const auto blocks = static_cast<size_t>(total_blocks());
  if (context.conv1_history.size() != blocks ||
      context.conv2_history.size() != blocks) {
    throw ContextShapeMismatch("context block count mismatch");
  }
  for (const auto& h : context.conv1_history) {
    if (h.rows() != cfg_.kernel - 1 || h.cols() != cfg_.width1) {
      throw ContextShapeMismatch("conv1 history shape mismatch");
    }
  }
  for (const auto& h : context.conv2_history) {
    if (h.rows() != cfg_.kernel - 1 || h.cols() != cfg_.width2) {
      throw ContextShapeMismatch("conv2 history shape mismatch");
    }
  }
}

std::pair<Eigen::VectorXf, CausalContext> CausalStack::streaming_step(
    const CausalContext& context, const Eigen::VectorXf& frame) const {
  check_context(context);
  if (frame.size() != cfg_.width1) {
    throw ContextShapeMismatch("frame feature width mismatch");
  }
  const int g1 = cfg_.width1 / cfg_.mixing_groups;
  const int g2 = cfg_.width2 / cfg_.mixing_groups;
  const int h = cfg_.kernel - 1;

  CausalContext next = context;
  Eigen::VectorXf x = frame;
  for (size_t b = 0; b < blocks_.size(); ++b) {
    const Block& block = blocks_[b];
    // conv1: history rows are frames t-h .. t-1, then the current input.
    Eigen::VectorXf c1 = Eigen::VectorXf::Zero(cfg_.width1);
    for (int j = 0; j < h; ++j) {
      c1.array() +=
          context.conv1_history[b].row(j).transpose().array() * block.dw1.col(j).array();
    }
    c1.array() += x.array() * block.dw1.col(h).array();
    for (int j = 0; j + 1 < h; ++j) {
      next.conv1_history[b].row(j) = context.conv1_history[b].row(j + 1);
    }
    next.conv1_history[b].row(h - 1) = x.transpose();

    Eigen::VectorXf up(cfg_.width2);
    for (int g = 0; g < cfg_.mixing_groups; ++g) {
      up.segment(g * g2, g2) = block.mix_up[g] * c1.segment(g * g1, g1);
    }
    up += block.bias_up;
    up = up.cwiseMax(0.0f);

    Eigen::VectorXf c2 = Eigen::VectorXf::Zero(cfg_.width2);
    for (int j = 0; j < h; ++j) {
      c2.array() +=
          context.conv2_history[b].row(j).transpose().array() * block.dw2.col(j).array();
    }
    c2.array() += up.array() * block.dw2.col(h).array();
    for (int j = 0; j + 1 < h; ++j) {
      next.conv2_history[b].row(j) = context.conv2_history[b].row(j + 1);
    }
    next.conv2_history[b].row(h - 1) = up.transpose();

    Eigen::VectorXf down(cfg_.width1);
    for (int g = 0; g < cfg_.mixing_groups; ++g) {
      down.segment(g * g1, g1) = block.mix_down[g] * c2.segment(g * g2, g2);
    }
    down += block.bias_down;
    x += cfg_.residual_scale * down;
  }
  return {x, next};
}

}  // namespace trackservo
