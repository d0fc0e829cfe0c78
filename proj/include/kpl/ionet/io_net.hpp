#pragma once

#include "kpl/autograd/nn.hpp"
#include "kpl/geometry/homography.hpp"
#include "kpl/model/keypoint_net.hpp"

namespace kpl {

struct IoNetConfig {
  int channels = 128;
  int residual_blocks = 4;
  int mining_k = 300;  // pairs kept per image, lowest predicted score first

  void validate() const {
    if (residual_blocks < 1) throw std::invalid_argument("ionet: residual_blocks must be >= 1");
    if (channels < 1 || mining_k < 1) throw std::invalid_argument("ionet: channels and mining_k must be >= 1");
  }

  bool operator==(const IoNetConfig&) const = default;
};

/// Candidate point-pairs for inlier/outlier classification. Rows are
/// [u_s, v_s, u_t, v_t, x] with coordinates scaled to [-1,1] and x the
/// Euclidean descriptor distance of the pair.
template <class S>
struct PointPairBatch {
  Tensor<S> rows;             // [5, N]
  std::vector<S> labels;      // +1 outlier / -1 inlier (sign(reproj - eps), sign(0) := +1)
  std::vector<int> src_idx;   // source keypoint per pair
  std::vector<int> tgt_idx;   // descriptor-matched target keypoint per pair
  int count() const { return (int)src_idx.size(); }
};

namespace detail {
template <class S>
inline S coord_norm_u(S u, int width) {
  return S(2) * u / S(width - 1) - S(1);
}
template <class S>
inline S coord_norm_v(S v, int height) {
  return S(2) * v / S(height - 1) - S(1);
}
}  // namespace detail

/// Pair selection: every source keypoint is matched to its descriptor-space
/// nearest target keypoint; the K pairs whose source keypoints have the
/// lowest predicted scores are kept (all pairs when fewer than K).
template <class S>
std::pair<std::vector<int>, std::vector<int>> select_io_pairs(const KeypointSet<S>& source,
                                                              const KeypointSet<S>& target, int k) {
  const int n = source.size(), m = target.size();
  if (n == 0 || m == 0) throw std::invalid_argument("select_io_pairs: empty keypoint set");
  std::vector<int> nn((size_t)n);
  for (int i = 0; i < n; ++i) {
    S best = std::numeric_limits<S>::max();
    int bj = 0;
    for (int j = 0; j < m; ++j) {
      const S d = (source.descriptors.row(i) - target.descriptors.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        bj = j;
      }
    }
    nn[(size_t)i] = bj;
  }
  std::vector<int> order((size_t)n);
  for (int i = 0; i < n; ++i) order[(size_t)i] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return source.scores[a] < source.scores[b]; });
  if (k < n) order.resize((size_t)k);
  std::vector<int> tgt;
  tgt.reserve(order.size());
  for (int i : order) tgt.push_back(nn[(size_t)i]);
  return {std::move(order), std::move(tgt)};
}

/// Inlier labels per Eq.-style sign rule: -1 when the warped source point
/// lands within eps of the matched target point, +1 otherwise (boundary
/// counts as outlier).
template <class S>
std::vector<S> io_labels(const Points<S>& warped_source, const Points<S>& target, const std::vector<int>& src_idx,
                         const std::vector<int>& tgt_idx, S eps_uv) {
  std::vector<S> labels(src_idx.size());
  for (size_t p = 0; p < src_idx.size(); ++p) {
    const S d = (warped_source.row(src_idx[p]) - target.row(tgt_idx[p])).norm();
    labels[p] = d - eps_uv < S(0) ? S(-1) : S(1);
  }
  return labels;
}

/// Assembles the [5,N] batch (plain, no graph) from extracted keypoint sets
/// and the ground-truth homography.
template <class S>
PointPairBatch<S> build_pairs(const KeypointSet<S>& source, const KeypointSet<S>& target, const Homography<S>& h,
                              int k, S eps_uv, ImageSize size) {
  PointPairBatch<S> batch;
  auto [src_idx, tgt_idx] = select_io_pairs(source, target, k);
  const Points<S> warped = warp_points<S>(source.locations, h);
  batch.labels = io_labels<S>(warped, target.locations, src_idx, tgt_idx, eps_uv);
  const int n = (int)src_idx.size();
  batch.rows = Tensor<S>({5, n});
  auto rm = batch.rows.mat(5, n);
  for (int p = 0; p < n; ++p) {
    const int i = src_idx[(size_t)p], j = tgt_idx[(size_t)p];
    rm(0, p) = detail::coord_norm_u(source.locations(i, 0), size.width);
    rm(1, p) = detail::coord_norm_v(source.locations(i, 1), size.height);
    rm(2, p) = detail::coord_norm_u(target.locations(j, 0), size.width);
    rm(3, p) = detail::coord_norm_v(target.locations(j, 1), size.height);
    rm(4, p) = (source.descriptors.row(i) - target.descriptors.row(j)).norm();
  }
  batch.src_idx = std::move(src_idx);
  batch.tgt_idx = std::move(tgt_idx);
  return batch;
}

/// 1d residual CNN scoring candidate pairs; unbounded outputs, one per
/// pair. Train-time only: its gradients flow back into the pair features.
template <class S>
class IoNet {
 public:
  IoNet() = default;
  IoNet(const IoNetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int c = cfg_.channels;
    in_conv_.init(rng, 5, c);
    blocks_.resize((size_t)cfg_.residual_blocks);
    for (auto& b : blocks_) {
      b.c1.init(rng, c, c);
      b.in1.init(c);
      b.bn1.init(c);
      b.c2.init(rng, c, c);
      b.in2.init(c);
      b.bn2.init(c);
    }
    out_conv_.init(rng, c, 1);
  }

  const IoNetConfig& config() const { return cfg_; }

  /// x: [5,N] -> [N]. Stage k >= 2 consumes the sum of the two previous
  /// stage outputs (additive skip pattern).
  ag::Var<S> forward(const ag::Var<S>& x, bool training) {
    if (x.value().dim(0) != 5) throw std::invalid_argument("ionet: expected [5,N] input");
    const int n = x.value().dim(1);
    ag::Var<S> prev = ag::relu(in_conv_(x));
    ag::Var<S> prev2;
    for (size_t k = 0; k < blocks_.size(); ++k) {
      ag::Var<S> input = k == 0 ? prev : ag::add(prev, prev2);
      ag::Var<S> y = residual_block(blocks_[k], input, training);
      prev2 = prev;
      prev = y;
    }
    return ag::reshape(out_conv_(prev), {n});
  }

  void collect(ag::ParamStore<S>& ps) {
    in_conv_.collect(ps, "ionet.in");
    for (size_t k = 0; k < blocks_.size(); ++k) {
      const std::string p = "ionet.rb" + std::to_string(k);
      blocks_[k].c1.collect(ps, p + ".c1");
      blocks_[k].in1.collect(ps, p + ".in1");
      blocks_[k].bn1.collect(ps, p + ".bn1");
      blocks_[k].c2.collect(ps, p + ".c2");
      blocks_[k].in2.collect(ps, p + ".in2");
      blocks_[k].bn2.collect(ps, p + ".bn2");
    }
    out_conv_.collect(ps, "ionet.out");
  }

 private:
  struct Block {
    ag::Conv1dLayer<S> c1, c2;
    ag::InstanceNorm1dLayer<S> in1, in2;
    ag::BatchNorm1dLayer<S> bn1, bn2;
  };

  ag::Var<S> residual_block(Block& b, const ag::Var<S>& x, bool training) {
    ag::Var<S> y = ag::relu(b.bn1(b.in1(b.c1(x), training), training));
    return ag::relu(b.bn2(b.in2(b.c2(y), training), training));
  }

  IoNetConfig cfg_;
  ag::Conv1dLayer<S> in_conv_;
  std::vector<Block> blocks_;
  ag::Conv1dLayer<S> out_conv_;
};

/// Mean of 0.5 (r - label)^2 over pairs.
template <class S>
ag::Var<S> io_loss(const ag::Var<S>& r, const std::vector<S>& labels) {
  Tensor<S> t({(int)labels.size()});
  for (size_t i = 0; i < labels.size(); ++i) t[(int64_t)i] = -labels[i];
  return ag::scale(ag::mean_all(ag::square(ag::add_const(r, t))), S(0.5));
}

}  // namespace kpl
