#pragma once

#include "kpl/eval/matching.hpp"
#include "kpl/geometry/homography.hpp"

#include <optional>

namespace kpl {

/// One direction of the detection protocol: warp A's points into B's frame,
/// keep the in-view ones, associate each to the closest point of B.
template <class S>
struct DirectionalAssoc {
  std::vector<int> idx_a;      // rows of A whose warp is in view
  std::vector<int> nearest_b;  // closest B point per kept row
  std::vector<S> dist;
  int correct = 0;             // distance <= tau
  int in_view = 0;
};

template <class S>
DirectionalAssoc<S> directional_associate(const Points<S>& a, const Points<S>& b, const Homography<S>& h,
                                          ImageSize target_size, S tau) {
  DirectionalAssoc<S> out;
  const auto [warped, valid] = warp_points_valid<S>(a, h);
  const std::vector<char> view = in_bounds_mask<S>(warped, target_size);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (!valid[(size_t)i] || !view[(size_t)i]) continue;
    ++out.in_view;
    S best = std::numeric_limits<S>::max();
    int bj = -1;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const S d = (warped.row(i) - b.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        bj = (int)j;
      }
    }
    if (bj < 0) continue;
    const S d = std::sqrt(best);
    out.idx_a.push_back((int)i);
    out.nearest_b.push_back(bj);
    out.dist.push_back(d);
    if (d <= tau) ++out.correct;
  }
  return out;
}

/// Repeatability evaluated from both viewpoints: the arithmetic mean of the
/// two directional correct-association ratios. Undefined (no in-view
/// points in some direction) instances carry defined == false.
template <class S>
struct RepeatabilityResult {
  double value = 0.0;
  bool defined = false;
  DirectionalAssoc<S> ab, ba;
};

template <class S>
RepeatabilityResult<S> repeatability(const Points<S>& a, const Points<S>& b, const Homography<S>& h,
                                     ImageSize size_a, ImageSize size_b, S tau) {
  RepeatabilityResult<S> out;
  out.ab = directional_associate<S>(a, b, h, size_b, tau);
  out.ba = directional_associate<S>(b, a, h.inverse(), size_a, tau);
  if (out.ab.in_view == 0 || out.ba.in_view == 0) return out;
  out.defined = true;
  out.value = 0.5 * ((double)out.ab.correct / out.ab.in_view + (double)out.ba.correct / out.ba.in_view);
  return out;
}

/// Mean distance over correctly associated pairs, pooled across both
/// directions; empty when nothing associated within tau.
template <class S>
std::optional<double> localization_error(const DirectionalAssoc<S>& ab, const DirectionalAssoc<S>& ba, S tau) {
  double sum = 0;
  int count = 0;
  for (const auto* dir : {&ab, &ba})
    for (size_t k = 0; k < dir->dist.size(); ++k)
      if (dir->dist[k] <= tau) {
        sum += (double)dir->dist[k];
        ++count;
      }
  if (count == 0) return std::nullopt;
  return sum / count;
}

/// Success rate of reciprocal descriptor matching: per direction, the
/// fraction of in-view keypoints whose match is reprojection-correct;
/// averaged over the two directions.
template <class S>
double matching_score(const std::vector<std::pair<int, int>>& matches, const Points<S>& a, const Points<S>& b,
                      const Homography<S>& h, ImageSize size_a, ImageSize size_b, S tau) {
  const auto [wa, va] = warp_points_valid<S>(a, h);
  const auto [wb, vb] = warp_points_valid<S>(b, h.inverse());
  const std::vector<char> view_a = in_bounds_mask<S>(wa, size_b);
  const std::vector<char> view_b = in_bounds_mask<S>(wb, size_a);
  int n_a = 0, n_b = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) n_a += va[(size_t)i] && view_a[(size_t)i];
  for (Eigen::Index j = 0; j < b.rows(); ++j) n_b += vb[(size_t)j] && view_b[(size_t)j];
  if (n_a == 0 || n_b == 0) return 0.0;
  int correct_a = 0, correct_b = 0;
  for (const auto& [i, j] : matches) {
    if (va[(size_t)i] && view_a[(size_t)i] && (wa.row(i) - b.row(j)).norm() <= tau) ++correct_a;
    if (vb[(size_t)j] && view_b[(size_t)j] && (wb.row(j) - a.row(i)).norm() <= tau) ++correct_b;
  }
  return 0.5 * ((double)correct_a / n_a + (double)correct_b / n_b);
}

/// Mean distance between the four image corners warped by the estimated and
/// ground-truth homographies, thresholded per requested pixel tolerance.
/// A missing estimate fails every threshold.
struct HomographyAccuracy {
  std::vector<char> correct;
  double corner_error = std::numeric_limits<double>::infinity();
};

inline HomographyAccuracy homography_accuracy(const std::optional<Homography<double>>& est,
                                              const Homography<double>& gt, ImageSize size,
                                              const std::vector<double>& thresholds) {
  HomographyAccuracy out;
  out.correct.assign(thresholds.size(), 0);
  if (!est) return out;
  Points<double> corners(4, 2);
  corners << 0, 0, size.width - 1, 0, size.width - 1, size.height - 1, 0, size.height - 1;
  const auto [we, ve] = warp_points_valid<double>(corners, *est);
  const auto [wg, vg] = warp_points_valid<double>(corners, gt);
  double sum = 0;
  for (int c = 0; c < 4; ++c) {
    if (!ve[(size_t)c] || !vg[(size_t)c]) return out;
    sum += (we.row(c) - wg.row(c)).norm();
  }
  out.corner_error = sum / 4.0;
  for (size_t t = 0; t < thresholds.size(); ++t) out.correct[t] = out.corner_error <= thresholds[t];
  return out;
}

}  // namespace kpl
