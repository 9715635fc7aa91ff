#include "trackservo/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trackservo/errors.hpp"

namespace trackservo {

namespace {

constexpr double kDepthClamp = 0.05;

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd softplus_mat(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return softplus(v); });
}

Eigen::MatrixXd sigmoid_mat(const Eigen::MatrixXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

// ---------------------------------------------------------------------------
// Trunk (projection + 2 residual blocks) forward/backward

struct TrunkCache {
  Eigen::MatrixXd input;  // rows x in
  Eigen::MatrixXd h0;
  Eigen::MatrixXd z1, s1, h1;
  Eigen::MatrixXd z2, s2, h2;
};

struct TrunkLayers {
  const LinearLayer* proj;
  const ResidualBlock* block1;
  const ResidualBlock* block2;
};

struct TrunkGrads {
  LinearLayer* proj;
  ResidualBlock* block1;
  ResidualBlock* block2;
};

Eigen::MatrixXd apply_linear(const LinearLayer& l, const Eigen::MatrixXd& x) {
  return (x * l.w.transpose()).rowwise() + l.b.transpose();
}

TrunkCache trunk_forward(const Eigen::MatrixXd& input, const TrunkLayers& layers) {
  TrunkCache c;
  c.input = input;
  c.h0 = apply_linear(*layers.proj, input);
  c.z1 = apply_linear(layers.block1->in, c.h0);
  c.s1 = softplus_mat(c.z1);
  c.h1 = c.h0 + apply_linear(layers.block1->out, c.s1);
  c.z2 = apply_linear(layers.block2->in, c.h1);
  c.s2 = softplus_mat(c.z2);
  c.h2 = c.h1 + apply_linear(layers.block2->out, c.s2);
  return c;
}

// Returns d(input); accumulates parameter grads.
Eigen::MatrixXd trunk_backward(const TrunkCache& c, const TrunkLayers& layers,
                               const TrunkGrads& grads, const Eigen::MatrixXd& dh2) {
  // block 2
  Eigen::MatrixXd ds2 = dh2 * layers.block2->out.w;
  grads.block2->out.w += dh2.transpose() * c.s2;
  grads.block2->out.b += dh2.colwise().sum().transpose();
  Eigen::MatrixXd dz2 = ds2.cwiseProduct(sigmoid_mat(c.z2));
  grads.block2->in.w += dz2.transpose() * c.h1;
  grads.block2->in.b += dz2.colwise().sum().transpose();
  Eigen::MatrixXd dh1 = dh2 + dz2 * layers.block2->in.w;
  // block 1
  Eigen::MatrixXd ds1 = dh1 * layers.block1->out.w;
  grads.block1->out.w += dh1.transpose() * c.s1;
  grads.block1->out.b += dh1.colwise().sum().transpose();
  Eigen::MatrixXd dz1 = ds1.cwiseProduct(sigmoid_mat(c.z1));
  grads.block1->in.w += dz1.transpose() * c.h0;
  grads.block1->in.b += dz1.colwise().sum().transpose();
  Eigen::MatrixXd dh0 = dh1 + dz1 * layers.block1->in.w;
  // projection
  grads.proj->w += dh0.transpose() * c.input;
  grads.proj->b += dh0.colwise().sum().transpose();
  return dh0 * layers.proj->w;
}

// ---------------------------------------------------------------------------
// Depthwise temporal conv (taps x channels), zero padded, centered

Eigen::MatrixXd depthwise_conv(const Eigen::MatrixXd& v, const Eigen::MatrixXd& f) {
  const auto t_count = static_cast<int>(v.rows());
  const auto taps = static_cast<int>(f.rows());
  const auto channels = static_cast<int>(v.cols());
  const int center = taps / 2;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(t_count, channels);
  for (int t = 0; t < t_count; ++t) {
    for (int j = 0; j < taps; ++j) {
      const int src = t + j - center;
      if (src < 0 || src >= t_count) continue;
      out.row(t) += f.row(j).cwiseProduct(v.row(src));
    }
  }
  return out;
}

void depthwise_conv_backward(const Eigen::MatrixXd& v, const Eigen::MatrixXd& f,
                             const Eigen::MatrixXd& dout, Eigen::MatrixXd& dv,
                             Eigen::MatrixXd& df) {
  const auto t_count = static_cast<int>(v.rows());
  const auto taps = static_cast<int>(f.rows());
  const int center = taps / 2;
  for (int t = 0; t < t_count; ++t) {
    for (int j = 0; j < taps; ++j) {
      const int src = t + j - center;
      if (src < 0 || src >= t_count) continue;
      df.row(j) += dout.row(t).cwiseProduct(v.row(src));
      dv.row(src) += dout.row(t).cwiseProduct(f.row(j));
    }
  }
}

// ---------------------------------------------------------------------------
// In-plane constraint forward with cache + backward

struct ConstrainCache {
  double cx = 0, dx = 0;             // raw second row
  double n0 = 1, r0x = 1, r0y = 0;   // normalized first row
  double proj = 0, n1 = 1, r1x = 0, r1y = 1;  // projected/normalized second row
  double p1x = 0, p1y = 1;           // pre-normalization second row
  double sign = 1;
};

RigidTransform constrain_forward(const Eigen::Matrix<double, 7, 1>& raw,
                                 ConstrainCache& cache) {
  const double a = raw(0), b = raw(1), c = raw(2), d = raw(3);
  const double n0 = std::hypot(a, b);
  if (n0 < 1e-12) throw DegenerateRotation("in-plane row collapsed");
  const double r0x = a / n0, r0y = b / n0;
  const double proj = c * r0x + d * r0y;
  const double p1x = c - proj * r0x, p1y = d - proj * r0y;
  const double n1 = std::hypot(p1x, p1y);
  if (n1 < 1e-12) throw DegenerateRotation("in-plane block rank < 2");
  double r1x = p1x / n1, r1y = p1y / n1;
  const double det = r0x * r1y - r0y * r1x;
  const double sign = det < 0 ? -1.0 : 1.0;
  cache = {c, d, n0, r0x, r0y, proj, n1, r1x, r1y, p1x, p1y, sign};
  RigidTransform out;
  out.rotation.setZero();
  out.rotation(0, 0) = r0x;
  out.rotation(0, 1) = r0y;
  out.rotation(1, 0) = sign * r1x;
  out.rotation(1, 1) = sign * r1y;
  out.rotation(2, 2) = 1.0;
  out.translation = Vec3(raw(4), raw(5), raw(6));
  return out;
}

Eigen::Matrix<double, 7, 1> constrain_backward(const ConstrainCache& k,
                                               const Mat3& d_rot, const Vec3& d_t) {
  // Output rows: row0 = r0hat, row1 = sign * r1hat.
  const double g0x = d_rot(0, 0), g0y = d_rot(0, 1);
  const double g1x = k.sign * d_rot(1, 0), g1y = k.sign * d_rot(1, 1);
  // r1hat = p1 / n1
  const double dot1 = k.r1x * g1x + k.r1y * g1y;
  const double dp1x = (g1x - k.r1x * dot1) / k.n1;
  const double dp1y = (g1y - k.r1y * dot1) / k.n1;
  // p1 = r1 - proj * r0hat, proj = r1 . r0hat
  const double dp_dot_r0 = dp1x * k.r0x + dp1y * k.r0y;
  const double dc = dp1x - k.r0x * dp_dot_r0;
  const double dd = dp1y - k.r0y * dp_dot_r0;
  double dr0x = -k.cx * dp_dot_r0 - k.proj * dp1x + g0x;
  double dr0y = -k.dx * dp_dot_r0 - k.proj * dp1y + g0y;
  // r0hat = r0 / n0
  const double dot0 = k.r0x * dr0x + k.r0y * dr0y;
  const double da = (dr0x - k.r0x * dot0) / k.n0;
  const double db = (dr0y - k.r0y * dot0) / k.n0;
  Eigen::Matrix<double, 7, 1> out;
  out << da, db, dc, dd, d_t.x(), d_t.y(), d_t.z();
  return out;
}

// ---------------------------------------------------------------------------
// Track preprocessing

struct Prep {
  Eigen::MatrixXd u0, v0;    // NaNs zeroed
  Eigen::MatrixXd mask;      // 1 where visible
  Eigen::VectorXd visible_frames;
  int n = 0, t_count = 0;
};

Prep prep_tracks(const TrackSet& tracks) {
  Prep p;
  p.n = tracks.points();
  p.t_count = tracks.frames();
  p.u0.setZero(p.n, p.t_count);
  p.v0.setZero(p.n, p.t_count);
  p.mask.setZero(p.n, p.t_count);
  p.visible_frames.setZero(p.n);
  for (int i = 0; i < p.n; ++i) {
    for (int t = 0; t < p.t_count; ++t) {
      if (!tracks.is_occluded(i, t)) {
        p.u0(i, t) = tracks.u(i, t);
        p.v0(i, t) = tracks.v(i, t);
        p.mask(i, t) = 1.0;
        p.visible_frames(i) += 1.0;
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Full forward/backward engine

enum class Source { Base = 0, Fork1 = 1, Fork2 = 2 };

struct ClusterColumn {
  Source source = Source::Base;
  int block = 0;
  std::vector<RigidTransform> transform;
  std::vector<ConstrainCache> ccache;
};

struct Engine {
  const ClusterNetParams& params;
  const Prep& prep;
  const Eigen::MatrixXd& encodings;

  TrunkCache point_trunk;
  TrunkCache tf_trunk;
  Eigen::MatrixXd v0;  // conv output
  Eigen::MatrixXd p_raw[3];
  Eigen::MatrixXd a_raw[3];
  std::vector<ClusterColumn> columns;
  Eigen::MatrixXd residuals;  // n x columns

  Engine(const ClusterNetParams& p, const Prep& pr, const Eigen::MatrixXd& e)
      : params(p), prep(pr), encodings(e) {}

  const LinearLayer& point_head(Source s) const {
    switch (s) {
      case Source::Base: return params.point_net.head;
      case Source::Fork1: return params.point_fork1;
      default: return params.point_fork2;
    }
  }
  const LinearLayer& tf_head(Source s) const {
    switch (s) {
      case Source::Base: return params.transform_net.head;
      case Source::Fork1: return params.tf_fork1;
      default: return params.tf_fork2;
    }
  }

  void forward(bool with_forks) {
    TrunkLayers pl{&params.point_net.proj, &params.point_net.block1,
                   &params.point_net.block2};
    point_trunk = trunk_forward(encodings, pl);
    v0 = depthwise_conv(params.transform_net.latents, params.transform_net.filter);
    TrunkLayers tl{&params.transform_net.proj, &params.transform_net.block1,
                   &params.transform_net.block2};
    tf_trunk = trunk_forward(v0, tl);

    const int n_sources = with_forks ? 3 : 1;
    for (int s = 0; s < n_sources; ++s) {
      p_raw[s] = apply_linear(point_head(static_cast<Source>(s)), point_trunk.h2);
      a_raw[s] = apply_linear(tf_head(static_cast<Source>(s)), tf_trunk.h2);
    }

    columns.clear();
    for (int s = 0; s < n_sources; ++s) {
      for (int b = 0; b < params.k; ++b) {
        ClusterColumn col;
        col.source = static_cast<Source>(s);
        col.block = b;
        col.transform.resize(prep.t_count);
        col.ccache.resize(prep.t_count);
        for (int t = 0; t < prep.t_count; ++t) {
          const Eigen::Matrix<double, 7, 1> raw =
              a_raw[s].row(t).segment<7>(7 * b).transpose();
          col.transform[t] = constrain_forward(raw, col.ccache[t]);
        }
        columns.push_back(std::move(col));
      }
    }

    residuals.setZero(prep.n, static_cast<Eigen::Index>(columns.size()));
    for (size_t c = 0; c < columns.size(); ++c) {
      residual_column(static_cast<int>(c));
    }
  }

  void residual_column(int c) {
    const auto& col = columns[c];
    const int s = static_cast<int>(col.source);
    const Eigen::MatrixXd p_block = p_raw[s].middleCols(3 * col.block, 3);  // n x 3
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(prep.n);
    for (int t = 0; t < prep.t_count; ++t) {
      const Mat3& rot = col.transform[t].rotation;
      const Vec3& trans = col.transform[t].translation;
      Eigen::MatrixXd x = p_block * rot.transpose();
      x.col(0).array() += trans.x();
      x.col(1).array() += trans.y();
      x.col(2).array() += trans.z();
      const Eigen::ArrayXd zs = x.col(2).array().max(kDepthClamp);
      const Eigen::ArrayXd e0 =
          (x.col(0).array() / zs - prep.u0.col(t).array()) * prep.mask.col(t).array();
      const Eigen::ArrayXd e1 =
          (x.col(1).array() / zs - prep.v0.col(t).array()) * prep.mask.col(t).array();
      acc.array() += e0 * e0 + e1 * e1;
    }
    if (!acc.allFinite()) {
      throw NumericalOverflow("non-finite reprojection residual");
    }
    residuals.col(c) = acc;
  }

  // Plain selection: argmin over base columns (ties -> lowest index).
  double plain_select(std::vector<int>& chosen) const {
    chosen.assign(prep.n, 0);
    double loss = 0.0;
    for (int i = 0; i < prep.n; ++i) {
      double best = residuals(i, 0);
      int arg = 0;
      for (int c = 1; c < params.k; ++c) {
        if (residuals(i, c) < best) {
          best = residuals(i, c);
          arg = c;
        }
      }
      chosen[i] = arg;
      loss += best;
    }
    return loss;
  }

  // Fork selection: min over split candidates K; fills per-point chosen
  // column under the winning K.
  double fork_select(int& chosen_k, std::vector<int>& chosen) const {
    const int k = params.k;
    std::vector<double> candidate_loss(k, 0.0);
    // min1/min2 over base columns per point
    for (int i = 0; i < prep.n; ++i) {
      double m1 = std::numeric_limits<double>::infinity();
      double m2 = m1;
      int arg1 = -1;
      for (int c = 0; c < k; ++c) {
        const double r = residuals(i, c);
        if (r < m1) {
          m2 = m1;
          m1 = r;
          arg1 = c;
        } else if (r < m2) {
          m2 = r;
        }
      }
      for (int cand = 0; cand < k; ++cand) {
        const double base_min = (cand == arg1) ? m2 : m1;
        const double f1 = residuals(i, k + cand);
        const double f2 = residuals(i, 2 * k + cand);
        candidate_loss[cand] += std::min({base_min, f1, f2});
      }
    }
    chosen_k = 0;
    for (int cand = 1; cand < k; ++cand) {
      if (candidate_loss[cand] < candidate_loss[chosen_k]) chosen_k = cand;
    }
    chosen.assign(prep.n, 0);
    for (int i = 0; i < prep.n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = -1;
      for (int c = 0; c < k; ++c) {
        if (c == chosen_k) continue;
        if (residuals(i, c) < best) {
          best = residuals(i, c);
          arg = c;
        }
      }
      if (residuals(i, k + chosen_k) < best) {
        best = residuals(i, k + chosen_k);
        arg = k + chosen_k;
      }
      if (residuals(i, 2 * k + chosen_k) < best) {
        arg = 2 * k + chosen_k;
      }
      chosen[i] = arg;
    }
    return candidate_loss[chosen_k];
  }

  void backward(const std::vector<int>& chosen, ClusterNetGrads& grads) {
    Eigen::MatrixXd dp_raw[3];
    Eigen::MatrixXd da_raw[3];
    for (int s = 0; s < 3; ++s) {
      dp_raw[s].setZero(prep.n, 3 * params.k);
      da_raw[s].setZero(prep.t_count, 7 * params.k);
    }

    // Group points by chosen column.
    std::vector<std::vector<int>> members(columns.size());
    for (int i = 0; i < prep.n; ++i) members[chosen[i]].push_back(i);

    for (size_t c = 0; c < columns.size(); ++c) {
      if (members[c].empty()) continue;
      const auto& col = columns[c];
      const int s = static_cast<int>(col.source);
      const auto& rows = members[c];
      const auto m = static_cast<int>(rows.size());
      Eigen::MatrixXd p_sub(m, 3);
      Eigen::MatrixXd u_sub(m, prep.t_count), v_sub(m, prep.t_count),
          w_sub(m, prep.t_count);
      for (int r = 0; r < m; ++r) {
        p_sub.row(r) = p_raw[s].row(rows[r]).segment<3>(3 * col.block);
        u_sub.row(r) = prep.u0.row(rows[r]);
        v_sub.row(r) = prep.v0.row(rows[r]);
        w_sub.row(r) = prep.mask.row(rows[r]);
      }
      Eigen::MatrixXd dp_sub = Eigen::MatrixXd::Zero(m, 3);
      for (int t = 0; t < prep.t_count; ++t) {
        const Mat3& rot = col.transform[t].rotation;
        const Vec3& trans = col.transform[t].translation;
        Eigen::MatrixXd x = p_sub * rot.transpose();
        x.col(0).array() += trans.x();
        x.col(1).array() += trans.y();
        x.col(2).array() += trans.z();
        const Eigen::ArrayXd zs = x.col(2).array().max(kDepthClamp);
        const Eigen::ArrayXd w = w_sub.col(t).array();
        const Eigen::ArrayXd e0 = (x.col(0).array() / zs - u_sub.col(t).array()) * w;
        const Eigen::ArrayXd e1 = (x.col(1).array() / zs - v_sub.col(t).array()) * w;
        // d residual / d x, clamp gradient passed through
        Eigen::MatrixXd dx(m, 3);
        dx.col(0) = (2.0 * e0 * w / zs).matrix();
        dx.col(1) = (2.0 * e1 * w / zs).matrix();
        dx.col(2) =
            (-(2.0 * e0 * w * x.col(0).array() + 2.0 * e1 * w * x.col(1).array()) /
             (zs * zs))
                .matrix();
        const Mat3 d_rot_full = dx.transpose() * p_sub;
        const Vec3 d_t = dx.colwise().sum().transpose();
        da_raw[s].row(t).segment<7>(7 * col.block) +=
            constrain_backward(col.ccache[t], d_rot_full, d_t).transpose();
        dp_sub += dx * rot;
      }
      for (int r = 0; r < m; ++r) {
        dp_raw[s].row(rows[r]).segment<3>(3 * col.block) += dp_sub.row(r);
      }
    }

    // Heads, then shared trunks.
    Eigen::MatrixXd dh2_point = Eigen::MatrixXd::Zero(prep.n, point_trunk.h2.cols());
    Eigen::MatrixXd dh2_tf = Eigen::MatrixXd::Zero(prep.t_count, tf_trunk.h2.cols());
    LinearLayer* point_heads[3] = {&grads.point_net.head, &grads.point_fork1,
                                   &grads.point_fork2};
    LinearLayer* tf_heads[3] = {&grads.transform_net.head, &grads.tf_fork1,
                                &grads.tf_fork2};
    for (int s = 0; s < 3; ++s) {
      if (dp_raw[s].size() == 0) continue;
      point_heads[s]->w += dp_raw[s].transpose() * point_trunk.h2;
      point_heads[s]->b += dp_raw[s].colwise().sum().transpose();
      dh2_point += dp_raw[s] * point_head(static_cast<Source>(s)).w;
      tf_heads[s]->w += da_raw[s].transpose() * tf_trunk.h2;
      tf_heads[s]->b += da_raw[s].colwise().sum().transpose();
      dh2_tf += da_raw[s] * tf_head(static_cast<Source>(s)).w;
    }

    TrunkLayers pl{&params.point_net.proj, &params.point_net.block1,
                   &params.point_net.block2};
    TrunkGrads pg{&grads.point_net.proj, &grads.point_net.block1,
                  &grads.point_net.block2};
    trunk_backward(point_trunk, pl, pg, dh2_point);  // encodings are fixed

    TrunkLayers tl{&params.transform_net.proj, &params.transform_net.block1,
                   &params.transform_net.block2};
    TrunkGrads tg{&grads.transform_net.proj, &grads.transform_net.block1,
                  &grads.transform_net.block2};
    const Eigen::MatrixXd dv0 = trunk_backward(tf_trunk, tl, tg, dh2_tf);
    depthwise_conv_backward(params.transform_net.latents, params.transform_net.filter,
                            dv0, grads.transform_net.latents,
                            grads.transform_net.filter);
  }
};

LinearLayer zero_like(const LinearLayer& l) {
  LinearLayer z;
  z.w = Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols());
  z.b = Eigen::VectorXd::Zero(l.b.size());
  return z;
}

ResidualBlock zero_like(const ResidualBlock& b) {
  return {zero_like(b.in), zero_like(b.out)};
}

ClusterNetGrads zero_grads(const ClusterNetParams& p) {
  ClusterNetGrads g;
  g.point_net.proj = zero_like(p.point_net.proj);
  g.point_net.block1 = zero_like(p.point_net.block1);
  g.point_net.block2 = zero_like(p.point_net.block2);
  g.point_net.head = zero_like(p.point_net.head);
  g.transform_net.latents =
      Eigen::MatrixXd::Zero(p.transform_net.latents.rows(), p.transform_net.latents.cols());
  g.transform_net.filter =
      Eigen::MatrixXd::Zero(p.transform_net.filter.rows(), p.transform_net.filter.cols());
  g.transform_net.proj = zero_like(p.transform_net.proj);
  g.transform_net.block1 = zero_like(p.transform_net.block1);
  g.transform_net.block2 = zero_like(p.transform_net.block2);
  g.transform_net.head = zero_like(p.transform_net.head);
  g.point_fork1 = zero_like(p.point_fork1);
  g.point_fork2 = zero_like(p.point_fork2);
  g.tf_fork1 = zero_like(p.tf_fork1);
  g.tf_fork2 = zero_like(p.tf_fork2);
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------

Eigen::MatrixXd encode_points(const TrackSet& tracks,
                              const Eigen::MatrixXd& centroids_u,
                              const Eigen::MatrixXd& centroids_v) {
  const int n = tracks.points();
  const auto n_centroids = static_cast<int>(centroids_u.rows());
  const int t_count = tracks.frames();
  Eigen::MatrixXd out(n, n_centroids);
  for (int i = 0; i < n; ++i) {
    int visible = 0;
    Eigen::VectorXd dist = Eigen::VectorXd::Zero(n_centroids);
    for (int t = 0; t < t_count; ++t) {
      if (tracks.is_occluded(i, t)) continue;
      ++visible;
      const double u = tracks.u(i, t);
      const double v = tracks.v(i, t);
      dist += ((centroids_u.col(t).array() - u).square() +
               (centroids_v.col(t).array() - v).square())
                  .sqrt()
                  .matrix();
    }
    if (visible == 0) {
      throw NeverVisiblePoint("point " + std::to_string(i) + " is never visible");
    }
    dist /= visible;
    out.row(i) = (-dist.array().square()).exp().matrix().transpose();
  }
  return out;
}

double cluster_loss(const ClusterNetParams& params, const TrackSet& tracks) {
  if (params.k < 1) throw InvalidConfig("cluster_loss: k must be >= 1");
  const Prep prep = prep_tracks(tracks);
  const Eigen::MatrixXd enc =
      encode_points(tracks, params.centroids_u, params.centroids_v);
  Engine engine(params, prep, enc);
  engine.forward(false);
  std::vector<int> chosen;
  return engine.plain_select(chosen);
}

ClusterNetGrads gradient_of_loss(const ClusterNetParams& params,
                                 const TrackSet& tracks) {
  const Prep prep = prep_tracks(tracks);
  const Eigen::MatrixXd enc =
      encode_points(tracks, params.centroids_u, params.centroids_v);
  Engine engine(params, prep, enc);
  engine.forward(false);
  std::vector<int> chosen;
  engine.plain_select(chosen);
  ClusterNetGrads grads = zero_grads(params);
  engine.backward(chosen, grads);
  return grads;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

LinearLayer init_linear(int out, int in, double scale, Rng& rng) {
  LinearLayer l;
  l.w.resize(out, in);
  for (int r = 0; r < out; ++r) {
    for (int c = 0; c < in; ++c) l.w(r, c) = rng.normal(0.0, scale);
  }
  l.b = Eigen::VectorXd::Zero(out);
  return l;
}

}  // namespace

ClusterNetParams init_cluster_params(const TrackSet& tracks,
                                     const OptimizeConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0xC1));
  const int n = tracks.points();
  const int t_count = tracks.frames();
  if (n < 1 || t_count < 1) throw InvalidConfig("empty tracks");

  ClusterNetParams p;
  p.k = 1;
  // Centroids: trajectories sampled from the data, missing frames filled by
  // the nearest visible frame.
  p.centroids_u.resize(cfg.centroids, t_count);
  p.centroids_v.resize(cfg.centroids, t_count);
  for (int c = 0; c < cfg.centroids; ++c) {
    int pick = -1;
    for (int attempt = 0; attempt < 50 && pick < 0; ++attempt) {
      const int cand = static_cast<int>(rng.uniform_int(n));
      for (int t = 0; t < t_count; ++t) {
        if (!tracks.is_occluded(cand, t)) {
          pick = cand;
          break;
        }
      }
    }
    if (pick < 0) throw NeverVisiblePoint("no visible trajectories to sample");
    int last_visible = -1;
    std::vector<int> nearest(t_count, -1);
    for (int t = 0; t < t_count; ++t) {
      if (!tracks.is_occluded(pick, t)) last_visible = t;
      nearest[t] = last_visible;
    }
    int next_visible = -1;
    for (int t = t_count - 1; t >= 0; --t) {
      if (!tracks.is_occluded(pick, t)) next_visible = t;
      if (nearest[t] < 0 ||
          (next_visible >= 0 && next_visible - t < t - nearest[t])) {
        nearest[t] = next_visible;
      }
    }
    for (int t = 0; t < t_count; ++t) {
      p.centroids_u(c, t) = tracks.u(pick, nearest[t]);
      p.centroids_v(c, t) = tracks.v(pick, nearest[t]);
    }
  }

  p.point_net.proj = init_linear(64, cfg.centroids, std::sqrt(2.0 / cfg.centroids), rng);
  p.point_net.block1 = {init_linear(32, 64, std::sqrt(2.0 / 64), rng),
                        init_linear(64, 32, std::sqrt(2.0 / 32), rng)};
  p.point_net.block2 = {init_linear(32, 64, std::sqrt(2.0 / 64), rng),
                        init_linear(64, 32, std::sqrt(2.0 / 32), rng)};
  p.point_net.head = init_linear(3, 64, 0.05, rng);
  p.point_net.head.b << 0.0, 0.0, 1.0;  // hypotheses start at unit depth

  p.transform_net.latents.resize(t_count, 64);
  for (int t = 0; t < t_count; ++t) {
    for (int c = 0; c < 64; ++c) p.transform_net.latents(t, c) = rng.normal(0.0, 0.5);
  }
  p.transform_net.filter.resize(128, 64);
  for (int c = 0; c < 64; ++c) {
    double sum = 0.0;
    for (int j = 0; j < 128; ++j) {
      const double g = std::exp(-0.5 * std::pow((j - 64.0) / 16.0, 2));
      p.transform_net.filter(j, c) = g;
      sum += g;
    }
    for (int j = 0; j < 128; ++j) {
      p.transform_net.filter(j, c) =
          p.transform_net.filter(j, c) / sum + rng.normal(0.0, 0.01);
    }
  }
  p.transform_net.proj = init_linear(128, 64, std::sqrt(2.0 / 64), rng);
  p.transform_net.block1 = {init_linear(64, 128, std::sqrt(2.0 / 128), rng),
                            init_linear(128, 64, std::sqrt(2.0 / 64), rng)};
  p.transform_net.block2 = {init_linear(64, 128, std::sqrt(2.0 / 128), rng),
                            init_linear(128, 64, std::sqrt(2.0 / 64), rng)};
  p.transform_net.head = init_linear(7, 128, 0.01, rng);
  p.transform_net.head.b << 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0;  // identity rotation

  p.point_fork1 = p.point_net.head;
  p.point_fork2 = p.point_net.head;
  p.tf_fork1 = p.transform_net.head;
  p.tf_fork2 = p.transform_net.head;
  return p;
}

// ---------------------------------------------------------------------------
// Optimization

namespace {

std::vector<Eigen::MatrixXd*> collect_mats(ClusterNetParams& p, bool with_forks) {
  std::vector<Eigen::MatrixXd*> out = {
      &p.point_net.proj.w,      &p.point_net.block1.in.w, &p.point_net.block1.out.w,
      &p.point_net.block2.in.w, &p.point_net.block2.out.w, &p.point_net.head.w,
      &p.transform_net.latents, &p.transform_net.filter,   &p.transform_net.proj.w,
      &p.transform_net.block1.in.w, &p.transform_net.block1.out.w,
      &p.transform_net.block2.in.w, &p.transform_net.block2.out.w,
      &p.transform_net.head.w};
  if (with_forks) {
    out.insert(out.end(), {&p.point_fork1.w, &p.point_fork2.w, &p.tf_fork1.w,
                           &p.tf_fork2.w});
  }
  return out;
}

std::vector<Eigen::VectorXd*> collect_vecs(ClusterNetParams& p, bool with_forks) {
  std::vector<Eigen::VectorXd*> out = {
      &p.point_net.proj.b,      &p.point_net.block1.in.b, &p.point_net.block1.out.b,
      &p.point_net.block2.in.b, &p.point_net.block2.out.b, &p.point_net.head.b,
      &p.transform_net.proj.b,
      &p.transform_net.block1.in.b, &p.transform_net.block1.out.b,
      &p.transform_net.block2.in.b, &p.transform_net.block2.out.b,
      &p.transform_net.head.b};
  if (with_forks) {
    out.insert(out.end(), {&p.point_fork1.b, &p.point_fork2.b, &p.tf_fork1.b,
                           &p.tf_fork2.b});
  }
  return out;
}

std::vector<Eigen::MatrixXd*> collect_mats(ClusterNetGrads& g, bool with_forks) {
  std::vector<Eigen::MatrixXd*> out = {
      &g.point_net.proj.w,      &g.point_net.block1.in.w, &g.point_net.block1.out.w,
      &g.point_net.block2.in.w, &g.point_net.block2.out.w, &g.point_net.head.w,
      &g.transform_net.latents, &g.transform_net.filter,   &g.transform_net.proj.w,
      &g.transform_net.block1.in.w, &g.transform_net.block1.out.w,
      &g.transform_net.block2.in.w, &g.transform_net.block2.out.w,
      &g.transform_net.head.w};
  if (with_forks) {
    out.insert(out.end(), {&g.point_fork1.w, &g.point_fork2.w, &g.tf_fork1.w,
                           &g.tf_fork2.w});
  }
  return out;
}

std::vector<Eigen::VectorXd*> collect_vecs(ClusterNetGrads& g, bool with_forks) {
  std::vector<Eigen::VectorXd*> out = {
      &g.point_net.proj.b,      &g.point_net.block1.in.b, &g.point_net.block1.out.b,
      &g.point_net.block2.in.b, &g.point_net.block2.out.b, &g.point_net.head.b,
      &g.transform_net.proj.b,
      &g.transform_net.block1.in.b, &g.transform_net.block1.out.b,
      &g.transform_net.block2.in.b, &g.transform_net.block2.out.b,
      &g.transform_net.head.b};
  if (with_forks) {
    out.insert(out.end(), {&g.point_fork1.b, &g.point_fork2.b, &g.tf_fork1.b,
                           &g.tf_fork2.b});
  }
  return out;
}

class Adam {
 public:
  Adam(ClusterNetParams& params, bool with_forks, double lr, int total_steps)
      : params_(params), with_forks_(with_forks), lr_(lr), total_steps_(total_steps) {
    for (auto* m : collect_mats(params, with_forks)) {
      m_mats_.emplace_back(Eigen::MatrixXd::Zero(m->rows(), m->cols()));
      v_mats_.emplace_back(Eigen::MatrixXd::Zero(m->rows(), m->cols()));
    }
    for (auto* v : collect_vecs(params, with_forks)) {
      m_vecs_.emplace_back(Eigen::VectorXd::Zero(v->size()));
      v_vecs_.emplace_back(Eigen::VectorXd::Zero(v->size()));
    }
  }

  void step(ClusterNetGrads& grads) {
    ++t_;
    const int warmup = std::max(1, total_steps_ / 10);
    const double ramp = t_ <= warmup ? static_cast<double>(t_) / warmup : 1.0;
    const double decay =
        0.5 * (1.0 + std::cos(M_PI * (t_ - 1) / std::max(1, total_steps_)));
    const double lr = lr_ * ramp * decay;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    auto pmats = collect_mats(params_, with_forks_);
    auto gmats = collect_mats(grads, with_forks_);
    for (size_t i = 0; i < pmats.size(); ++i) {
      m_mats_[i] = kBeta1 * m_mats_[i] + (1 - kBeta1) * (*gmats[i]);
      v_mats_[i] = kBeta2 * v_mats_[i] + (1 - kBeta2) * gmats[i]->cwiseProduct(*gmats[i]);
      pmats[i]->array() -= lr * (m_mats_[i].array() / bc1) /
                           ((v_mats_[i].array() / bc2).sqrt() + kEps);
    }
    auto pvecs = collect_vecs(params_, with_forks_);
    auto gvecs = collect_vecs(grads, with_forks_);
    for (size_t i = 0; i < pvecs.size(); ++i) {
      m_vecs_[i] = kBeta1 * m_vecs_[i] + (1 - kBeta1) * (*gvecs[i]);
      v_vecs_[i] = kBeta2 * v_vecs_[i] + (1 - kBeta2) * gvecs[i]->cwiseProduct(*gvecs[i]);
      pvecs[i]->array() -= lr * (m_vecs_[i].array() / bc1) /
                           ((v_vecs_[i].array() / bc2).sqrt() + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  ClusterNetParams& params_;
  bool with_forks_;
  double lr_;
  int total_steps_;
  std::vector<Eigen::MatrixXd> m_mats_, v_mats_;
  std::vector<Eigen::VectorXd> m_vecs_, v_vecs_;
  int t_ = 0;
};

void reinit_forks(ClusterNetParams& p, double std, Rng& rng) {
  auto perturb = [&](LinearLayer& fork, const LinearLayer& base) {
    fork = base;
    for (Eigen::Index r = 0; r < fork.w.rows(); ++r) {
      for (Eigen::Index c = 0; c < fork.w.cols(); ++c) {
        fork.w(r, c) += rng.normal(0.0, std);
      }
    }
    for (Eigen::Index r = 0; r < fork.b.size(); ++r) fork.b(r) += rng.normal(0.0, std);
  };
  perturb(p.point_fork1, p.point_net.head);
  perturb(p.point_fork2, p.point_net.head);
  perturb(p.tf_fork1, p.transform_net.head);
  perturb(p.tf_fork2, p.transform_net.head);
}

// Adopt the winning split: the base row block K is replaced by fork1's and
// fork2's K blocks (one in place, one appended).
void adopt_split(ClusterNetParams& p, int k_star) {
  auto grow = [k_star](LinearLayer& base, const LinearLayer& f1,
                       const LinearLayer& f2, int rows_per_block) {
    LinearLayer next;
    const auto cols = base.w.cols();
    const auto blocks = base.w.rows() / rows_per_block;
    next.w.resize((blocks + 1) * rows_per_block, cols);
    next.b.resize((blocks + 1) * rows_per_block);
    for (Eigen::Index blk = 0; blk < blocks; ++blk) {
      const auto src = blk * rows_per_block;
      if (blk == k_star) {
        next.w.middleRows(src, rows_per_block) = f1.w.middleRows(src, rows_per_block);
        next.b.segment(src, rows_per_block) = f1.b.segment(src, rows_per_block);
      } else {
        next.w.middleRows(src, rows_per_block) = base.w.middleRows(src, rows_per_block);
        next.b.segment(src, rows_per_block) = base.b.segment(src, rows_per_block);
      }
    }
    next.w.bottomRows(rows_per_block) =
        f2.w.middleRows(k_star * rows_per_block, rows_per_block);
    next.b.tail(rows_per_block) = f2.b.segment(k_star * rows_per_block, rows_per_block);
    base = next;
  };
  grow(p.point_net.head, p.point_fork1, p.point_fork2, 3);
  grow(p.transform_net.head, p.tf_fork1, p.tf_fork2, 7);
  p.k += 1;
  p.point_fork1 = p.point_net.head;
  p.point_fork2 = p.point_net.head;
  p.tf_fork1 = p.transform_net.head;
  p.tf_fork2 = p.transform_net.head;
}

}  // namespace

double ClusterModel::total_loss() const {
  double loss = 0.0;
  for (size_t i = 0; i < assignment.size(); ++i) {
    loss += residuals(static_cast<Eigen::Index>(i), assignment[i]);
  }
  return loss;
}

double ClusterModel::mean_residual(int i) const {
  const double frames = std::max(1.0, visible_frames(i));
  return residuals(i, assignment[i]) / frames;
}

ClusterModel optimize_with_splitting(const TrackSet& tracks,
                                     const OptimizeConfig& cfg) {
  if (cfg.k_target < 1) throw InvalidConfig("k_target must be >= 1");
  if (tracks.points() == 0) throw InvalidConfig("empty tracks");

  ClusterNetParams params = init_cluster_params(tracks, cfg);
  const Eigen::MatrixXd enc =
      encode_points(tracks, params.centroids_u, params.centroids_v);
  const Prep prep = prep_tracks(tracks);
  Rng fork_rng(derive_seed(cfg.seed, 0xF02C));

  ClusterModel model;
  int global_step = 0;

  // Each round keeps the best parameters it saw; a fresh Adam restart can
  // transiently spoil an already-converged state.
  auto run_round = [&](bool fork_mode) -> double {
    Adam adam(params, fork_mode, cfg.learning_rate, cfg.steps_per_round);
    double loss = 0.0;
    double best_loss = std::numeric_limits<double>::infinity();
    ClusterNetParams best = params;
    for (int s = 0; s < cfg.steps_per_round; ++s) {
      Engine engine(params, prep, enc);
      engine.forward(fork_mode);
      std::vector<int> chosen;
      if (fork_mode) {
        int k_star = 0;
        loss = engine.fork_select(k_star, chosen);
      } else {
        loss = engine.plain_select(chosen);
      }
      if (!std::isfinite(loss)) {
        throw DivergedOptimization("loss became non-finite at step " +
                                   std::to_string(global_step));
      }
      if (loss < best_loss) {
        best_loss = loss;
        best = params;
      }
      ClusterNetGrads grads = zero_grads(params);
      engine.backward(chosen, grads);
      adam.step(grads);
      model.trace.emplace_back(global_step++, params.k, loss);
    }
    params = best;
    return best_loss;
  };

  auto plain_loss_now = [&]() -> double {
    Engine engine(params, prep, enc);
    engine.forward(false);
    std::vector<int> chosen;
    return engine.plain_select(chosen);
  };

  run_round(false);
  model.split_losses.push_back(plain_loss_now());

  while (params.k < cfg.k_target) {
    const double reference = plain_loss_now();
    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      reinit_forks(params, cfg.fork_std, fork_rng);
      run_round(true);
      Engine engine(params, prep, enc);
      engine.forward(true);
      std::vector<int> chosen;
      int k_star = 0;
      const double fork_loss = engine.fork_select(k_star, chosen);
      if (fork_loss <= reference * (1.0 - cfg.improve_tol)) {
        adopt_split(params, k_star);
        model.split_losses.push_back(plain_loss_now());
        accepted = true;
      }
    }
    if (!accepted) break;
  }

  run_round(false);
  model.split_losses.push_back(plain_loss_now());

  // Final evaluation into the model.
  Engine engine(params, prep, enc);
  engine.forward(false);
  std::vector<int> chosen;
  engine.plain_select(chosen);
  model.k = params.k;
  model.assignment = chosen;
  model.residuals = engine.residuals.leftCols(params.k);
  model.visible_frames = prep.visible_frames;
  model.points3d.resize(prep.n, 3 * params.k);
  model.points3d = engine.p_raw[0];
  model.transforms.assign(params.k, {});
  for (int c = 0; c < params.k; ++c) {
    model.transforms[c] = engine.columns[c].transform;
  }
  return model;
}

ClusterModel prune_clusters(const ClusterModel& model, const TrackSet& tracks,
                            const PruneConfig& cfg) {
  (void)tracks;
  if (model.k < 2) return model;
  ClusterModel out = model;
  while (out.k >= 2) {
    const double current = out.total_loss();
    double best_loss = std::numeric_limits<double>::infinity();
    int best_cluster = -1;
    for (int c = 0; c < out.k; ++c) {
      double loss = 0.0;
      for (Eigen::Index i = 0; i < out.residuals.rows(); ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (int j = 0; j < out.k; ++j) {
          if (j == c) continue;
          m = std::min(m, out.residuals(i, j));
        }
        loss += m;
      }
      if (loss < best_loss) {
        best_loss = loss;
        best_cluster = c;
      }
    }
    if (best_loss - current > cfg.tolerance * current + 1e-12) break;
    // Delete best_cluster and reassign by argmin residual.
    Eigen::MatrixXd next(out.residuals.rows(), out.k - 1);
    Eigen::MatrixXd next_points(out.points3d.rows(), 3 * (out.k - 1));
    std::vector<std::vector<RigidTransform>> next_tf;
    int dst = 0;
    for (int c = 0; c < out.k; ++c) {
      if (c == best_cluster) continue;
      next.col(dst) = out.residuals.col(c);
      next_points.middleCols(3 * dst, 3) = out.points3d.middleCols(3 * c, 3);
      next_tf.push_back(out.transforms[c]);
      ++dst;
    }
    out.residuals = next;
    out.points3d = next_points;
    out.transforms = next_tf;
    out.k -= 1;
    for (Eigen::Index i = 0; i < out.residuals.rows(); ++i) {
      int arg = 0;
      for (int j = 1; j < out.k; ++j) {
        if (out.residuals(i, j) < out.residuals(i, arg)) arg = j;
      }
      out.assignment[i] = arg;
    }
  }
  return out;
}

TrackSet concat_tracks(const std::vector<const TrackSet*>& tracks) {
  if (tracks.empty()) throw InvalidConfig("concat_tracks: no inputs");
  const int n = tracks.front()->points();
  int total_frames = 0;
  for (const auto* t : tracks) {
    if (t->points() != n || t->point_ids != tracks.front()->point_ids) {
      throw MismatchedTracks("concat_tracks: point ids differ across demos");
    }
    total_frames += t->frames();
  }
  TrackSet out;
  out.resize(n, total_frames);
  out.point_ids = tracks.front()->point_ids;
  out.source_body = tracks.front()->source_body;
  int offset = 0;
  for (const auto* t : tracks) {
    const int f = t->frames();
    out.u.middleCols(offset, f) = t->u;
    out.v.middleCols(offset, f) = t->v;
    out.occluded.middleCols(offset, f) = t->occluded;
    out.visibility.middleCols(offset, f) = t->visibility;
    offset += f;
  }
  return out;
}

double assignment_accuracy(const std::vector<int>& assignment,
                           const std::vector<int>& ground_truth) {
  if (assignment.size() != ground_truth.size() || assignment.empty()) {
    throw InvalidConfig("assignment_accuracy: size mismatch");
  }
  std::vector<int> labels = ground_truth;
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  int max_pred = 0;
  for (int a : assignment) max_pred = std::max(max_pred, a);
  std::vector<int> perm(std::max<size_t>(labels.size(), max_pred + 1));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    int correct = 0;
    for (size_t i = 0; i < assignment.size(); ++i) {
      const auto gt_index = static_cast<size_t>(
          std::lower_bound(labels.begin(), labels.end(), ground_truth[i]) -
          labels.begin());
      if (perm[assignment[i]] == static_cast<int>(gt_index)) ++correct;
    }
    best = std::max(best, static_cast<double>(correct) / assignment.size());
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace trackservo
