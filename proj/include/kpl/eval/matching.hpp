#pragma once

#include "kpl/model/keypoint_net.hpp"

#include <utility>
#include <vector>

namespace kpl {

/// Reciprocal (mutual nearest-neighbor) descriptor matching. Distances are
/// squared Euclidean computed row-against-row; ties break to the lower
/// index, so matching is deterministic.
template <class S>
std::vector<std::pair<int, int>> match_descriptors(
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& a,
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& b) {
  const int na = (int)a.rows(), nb = (int)b.rows();
  if (na == 0 || nb == 0) return {};
  std::vector<int> ab((size_t)na), ba((size_t)nb);
  for (int i = 0; i < na; ++i) {
    S best = std::numeric_limits<S>::max();
    int bj = 0;
    for (int j = 0; j < nb; ++j) {
      const S d = (a.row(i) - b.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        bj = j;
      }
    }
    ab[(size_t)i] = bj;
  }
  for (int j = 0; j < nb; ++j) {
    S best = std::numeric_limits<S>::max();
    int bi = 0;
    for (int i = 0; i < na; ++i) {
      const S d = (a.row(i) - b.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        bi = i;
      }
    }
    ba[(size_t)j] = bi;
  }
  std::vector<std::pair<int, int>> matches;
  for (int i = 0; i < na; ++i)
    if (ba[(size_t)ab[(size_t)i]] == i) matches.emplace_back(i, ab[(size_t)i]);
  return matches;
}

}  // namespace kpl
