#pragma once

#include "kpl/core/rng.hpp"
#include "kpl/geometry/homography.hpp"

#include <Eigen/SVD>

#include <optional>

namespace kpl {

struct RansacConfig {
  int max_iters = 5000;
  double confidence = 0.9995;
  double error_threshold = 3.0;  // px, reprojection into the target frame

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("ransac: max_iters must be >= 1");
    if (confidence <= 0.0 || confidence >= 1.0) throw std::invalid_argument("ransac: confidence must be in (0,1)");
    if (error_threshold <= 0.0) throw std::invalid_argument("ransac: error threshold must be > 0");
  }
};

namespace detail {

// Similarity normalization: centroid to the origin, mean distance sqrt(2).
inline Eigen::Matrix3d hartley_normalization(const Points<double>& pts) {
  const Eigen::RowVector2d centroid = pts.colwise().mean();
  double mean_dist = 0;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) mean_dist += (pts.row(i) - centroid).norm();
  mean_dist /= (double)pts.rows();
  const double scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  t(0, 0) = scale;
  t(1, 1) = scale;
  t(0, 2) = -scale * centroid(0);
  t(1, 2) = -scale * centroid(1);
  return t;
}

inline bool has_collinear_triple(const Points<double>& pts) {
  const Eigen::Index n = pts.rows();
  double span = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) span = std::max(span, (pts.row(i) - pts.row(j)).norm());
  const double eps = 1e-6 * std::max(span * span, 1.0);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      for (Eigen::Index k = j + 1; k < n; ++k) {
        const double area = std::abs((pts(j, 0) - pts(i, 0)) * (pts(k, 1) - pts(i, 1)) -
                                     (pts(k, 0) - pts(i, 0)) * (pts(j, 1) - pts(i, 1)));
        if (area < eps) return true;
      }
  return false;
}

}  // namespace detail

/// Direct linear transform over >= 4 correspondences with Hartley
/// normalization; least-squares via SVD when overdetermined. Returns
/// nothing for degenerate configurations.
inline std::optional<Homography<double>> dlt_homography(const Points<double>& src, const Points<double>& dst) {
  const Eigen::Index n = src.rows();
  if (n < 4 || dst.rows() != n) return std::nullopt;
  const Eigen::Matrix3d ts = detail::hartley_normalization(src);
  const Eigen::Matrix3d td = detail::hartley_normalization(dst);

  Eigen::MatrixXd a(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = ts(0, 0) * src(i, 0) + ts(0, 2);
    const double y = ts(1, 1) * src(i, 1) + ts(1, 2);
    const double xp = td(0, 0) * dst(i, 0) + td(0, 2);
    const double yp = td(1, 1) * dst(i, 1) + td(1, 2);
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, x * xp, y * xp, xp;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, x * yp, y * yp, yp;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // rank deficiency beyond the expected nullspace means a degenerate set
  if (sv(7) < 1e-9 * std::max(sv(0), 1e-30)) return std::nullopt;
  Eigen::Matrix3d hn;
  const Eigen::VectorXd v = svd.matrixV().col(8);
  hn << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  const Eigen::Matrix3d h = td.inverse() * hn * ts;
  if (std::abs(h(2, 2)) < 1e-12) return std::nullopt;
  Homography<double> out = Homography<double>::from_matrix(h);
  if (std::abs(out.det()) < 1e-10) return std::nullopt;
  return out;
}

struct RansacResult {
  std::optional<Homography<double>> h;
  std::vector<char> inliers;
  int iterations = 0;
  int inlier_count = 0;
};

/// Random-sample-consensus homography: minimal 4-point hypotheses via
/// normalized DLT, reprojection-error scoring in the target frame,
/// confidence-based early stop, final least-squares refit on the inliers.
/// Deterministic given the seed.
inline RansacResult estimate_homography(const Points<double>& src, const Points<double>& dst,
                                        const RansacConfig& cfg, uint64_t seed) {
  cfg.validate();
  RansacResult result;
  const int n = (int)src.rows();
  result.inliers.assign((size_t)n, 0);
  if (n < 4 || dst.rows() != n) return result;

  Rng rng(mix_seed(seed, 0x72616e73ull));
  const double thr2 = cfg.error_threshold * cfg.error_threshold;
  auto count_inliers = [&](const Homography<double>& h, std::vector<char>& mask) {
    int count = 0;
    const auto [warped, valid] = warp_points_valid<double>(src, h);
    for (int i = 0; i < n; ++i) {
      const bool in = valid[(size_t)i] && (warped.row(i) - dst.row(i)).squaredNorm() <= thr2;
      mask[(size_t)i] = in;
      count += in;
    }
    return count;
  };

  std::optional<Homography<double>> best;
  std::vector<char> mask((size_t)n, 0), best_mask((size_t)n, 0);
  int best_count = 0;
  int allowed = cfg.max_iters;
  Points<double> s4(4, 2), d4(4, 2);
  for (int it = 0; it < allowed; ++it) {
    result.iterations = it + 1;
    int idx[4];
    for (int k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = rng.uniform_int(0, n - 1);
        fresh = true;
        for (int p = 0; p < k; ++p) fresh = fresh && idx[p] != idx[k];
      } while (!fresh);
      s4.row(k) = src.row(idx[k]);
      d4.row(k) = dst.row(idx[k]);
    }
    if (detail::has_collinear_triple(s4) || detail::has_collinear_triple(d4)) continue;
    const auto h = dlt_homography(s4, d4);
    if (!h) continue;
    const int count = count_inliers(*h, mask);
    if (count > best_count) {
      best_count = count;
      best = h;
      best_mask = mask;
      const double w = (double)count / n;
      const double denom = std::log(1.0 - std::min(std::pow(w, 4), 1.0 - 1e-12));
      if (denom < 0) {
        const int needed = (int)std::ceil(std::log(1.0 - cfg.confidence) / denom);
        allowed = std::min(cfg.max_iters, std::max(it + 1, needed));
      }
    }
  }
  if (!best || best_count < 4) return result;

  // least-squares refit over the consensus set
  Points<double> si(best_count, 2), di(best_count, 2);
  int r = 0;
  for (int i = 0; i < n; ++i)
    if (best_mask[(size_t)i]) {
      si.row(r) = src.row(i);
      di.row(r) = dst.row(i);
      ++r;
    }
  if (auto refit = dlt_homography(si, di)) {
    const int refit_count = count_inliers(*refit, mask);
    if (refit_count >= best_count) {
      best = refit;
      best_count = refit_count;
      best_mask = mask;
    }
  }
  result.h = best;
  result.inliers = best_mask;
  result.inlier_count = best_count;
  return result;
}

}  // namespace kpl
