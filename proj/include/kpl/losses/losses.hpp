#pragma once

#include "kpl/autograd/ops.hpp"
#include "kpl/geometry/homography.hpp"

#include <limits>
#include <optional>

namespace kpl {

struct LossConfig {
  double alpha = 1.0;    // location term weight
  double beta = 2.0;     // descriptor term weight
  double lambda = 1.0;   // score term weight
  double eps_uv = 4.0;   // association distance threshold, px
  double margin = 0.2;   // triplet margin
  double relax_c = 8.0;  // spatial exclusion radius for negative mining, px

  void validate() const {
    if (alpha < 0 || beta < 0 || lambda < 0) throw std::invalid_argument("loss weights must be >= 0");
    if (eps_uv <= 0) throw std::invalid_argument("eps_uv must be > 0");
    if (margin <= 0) throw std::invalid_argument("margin must be > 0");
  }
};

/// Nearest-neighbor association of warped source keypoints to target
/// keypoints. Indices refer to rows of the inputs; an empty pair list means
/// the instance carries no supervision signal.
template <class S>
struct Association {
  std::vector<int> src;  // source row per pair
  std::vector<int> tgt;  // associated target row
  std::vector<S> dist;   // reprojection distance per pair
  S mean_dist = S(0);

  int count() const { return (int)src.size(); }
  bool empty() const { return src.empty(); }
};

/// For each warped source point (optionally restricted to in-view points),
/// picks the closest target point; keeps the pair iff the distance is
/// within eps_uv. Equidistant targets break toward the lower index.
template <class S>
Association<S> associate(const Points<S>& warped_source, const Points<S>& target, S eps_uv,
                         std::optional<ImageSize> bounds = std::nullopt) {
  if (warped_source.rows() == 0 || target.rows() == 0)
    throw std::invalid_argument("associate: empty point set");
  Association<S> assoc;
  std::vector<char> view;
  if (bounds) view = in_bounds_mask<S>(warped_source, *bounds);
  for (Eigen::Index i = 0; i < warped_source.rows(); ++i) {
    if (bounds && !view[(size_t)i]) continue;
    S best = std::numeric_limits<S>::max();
    int bj = -1;
    for (Eigen::Index j = 0; j < target.rows(); ++j) {
      const S d = (warped_source.row(i) - target.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        bj = (int)j;
      }
    }
    const S d = std::sqrt(best);
    if (d <= eps_uv) {
      assoc.src.push_back((int)i);
      assoc.tgt.push_back(bj);
      assoc.dist.push_back(d);
    }
  }
  if (!assoc.empty()) {
    S sum = 0;
    for (S d : assoc.dist) sum += d;
    assoc.mean_dist = sum / (S)assoc.count();
  }
  return assoc;
}

/// Mean reprojection distance over associated pairs (differentiable through
/// both endpoints). Zero-length input is the caller's "skip" signal.
template <class S>
ag::Var<S> loc_loss(const ag::Var<S>& warped_source, const ag::Var<S>& target, const Association<S>& assoc) {
  if (assoc.empty()) throw std::invalid_argument("loc_loss: empty association");
  ag::Var<S> d = ag::rowwise_norm(ag::sub(ag::gather_rows(warped_source, assoc.src),
                                          ag::gather_rows(target, assoc.tgt)));
  return ag::mean_all(d);
}

/// Score consistency + distance-ranked score regression:
/// mean_i[ (s_i + s_hat_i)/2 * (d_i - dbar) + (s_i - s_hat_i)^2 ].
/// Gradients reach the scores and, through d and dbar, the locations.
template <class S>
ag::Var<S> score_loss(const ag::Var<S>& source_scores, const ag::Var<S>& target_scores,
                      const ag::Var<S>& warped_source, const ag::Var<S>& target_locs,
                      const Association<S>& assoc) {
  if (assoc.empty()) throw std::invalid_argument("score_loss: empty association");
  const int l = assoc.count();
  ag::Var<S> s = ag::gather_rows(source_scores, assoc.src);       // [L,1]
  ag::Var<S> shat = ag::gather_rows(target_scores, assoc.tgt);    // [L,1]
  ag::Var<S> d = ag::reshape(ag::rowwise_norm(ag::sub(ag::gather_rows(warped_source, assoc.src),
                                                      ag::gather_rows(target_locs, assoc.tgt))),
                             {l, 1});
  ag::Var<S> dbar = ag::mean_all(d);
  ag::Var<S> rank_term = ag::mul(ag::scale(ag::add(s, shat), S(0.5)), ag::sub_broadcast(d, dbar));
  ag::Var<S> consist_term = ag::square(ag::sub(s, shat));
  return ag::mean_all(ag::add(rank_term, consist_term));
}

/// Per-anchor hardest-negative mining result.
struct TripletMining {
  std::vector<int> anchor;    // anchors that found a valid negative
  std::vector<int> negative;  // chosen pool row per kept anchor
  int skipped = 0;
};

/// Chooses, per anchor, the pool row with minimum descriptor distance among
/// rows farther than relax_c pixels from the anchor's positive location.
template <class S>
TripletMining mine_hardest_negatives(const Tensor<S>& anchors, const Tensor<S>& pool,
                                     const Points<S>& positive_locs, const Points<S>& pool_locs, S relax_c) {
  const int n = anchors.dim(0), d = anchors.dim(1);
  const int m = pool.dim(0);
  TripletMining out;
  auto am = anchors.mat(n, d);
  auto pm = pool.mat(m, d);
  // unit rows: squared distance = 2 - 2 a.p, so mine via the dot products
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> dots = am * pm.transpose();
  const S c2 = relax_c * relax_c;
  for (int i = 0; i < n; ++i) {
    S best = -std::numeric_limits<S>::max();
    int bj = -1;
    for (int j = 0; j < m; ++j) {
      if ((positive_locs.row(i) - pool_locs.row(j)).squaredNorm() <= c2) continue;
      if (dots(i, j) > best) {
        best = dots(i, j);
        bj = j;
      }
    }
    if (bj < 0) {
      ++out.skipped;
      continue;
    }
    out.anchor.push_back(i);
    out.negative.push_back(bj);
  }
  return out;
}

/// Triplet loss with nested hardest-negative mining:
/// mean_i max(0, |f_i - f_i_pos| - |f_i - f_i_neg| + m). Anchors without a
/// valid negative are skipped; returns nullopt when none survive.
template <class S>
std::optional<ag::Var<S>> triplet_loss(const ag::Var<S>& anchors, const ag::Var<S>& positives,
                                       const ag::Var<S>& pool, const Points<S>& positive_locs,
                                       const Points<S>& pool_locs, S margin, S relax_c) {
  TripletMining mining =
      mine_hardest_negatives<S>(anchors.value(), pool.value(), positive_locs, pool_locs, relax_c);
  if (mining.anchor.empty()) return std::nullopt;
  ag::Var<S> a = ag::gather_rows(anchors, mining.anchor);
  ag::Var<S> p = ag::gather_rows(positives, mining.anchor);
  ag::Var<S> neg = ag::gather_rows(pool, mining.negative);
  ag::Var<S> dpos = ag::rowwise_norm(ag::sub(a, p));
  ag::Var<S> dneg = ag::rowwise_norm(ag::sub(a, neg));
  ag::Var<S> hinge = ag::relu(ag::affine(ag::sub(dpos, dneg), S(1), margin));
  return ag::mean_all(hinge);
}

/// Which loss components participate (ablation gating).
struct LossGates {
  bool desc = true;
  bool io = true;
};

/// alpha*L_loc + beta*L_desc + lambda*L_score + L_IO; gated components
/// contribute exactly zero. Undefined Vars stand for absent components.
template <class S>
ag::Var<S> total_loss(const ag::Var<S>& l_loc, const ag::Var<S>& l_desc, const ag::Var<S>& l_score,
                      const ag::Var<S>& l_io, const LossConfig& cfg, const LossGates& gates = {}) {
  ag::Var<S> total = ag::scale(l_loc, (S)cfg.alpha);
  if (gates.desc && l_desc.defined()) total = ag::add(total, ag::scale(l_desc, (S)cfg.beta));
  total = ag::add(total, ag::scale(l_score, (S)cfg.lambda));
  if (gates.io && l_io.defined()) total = ag::add(total, l_io);
  return total;
}

}  // namespace kpl
