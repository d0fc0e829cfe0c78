#pragma once

#include "kpl/core/rng.hpp"
#include "kpl/core/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace kpl {

/// Coordinate convention used throughout: (u,v) = (column,row), pixel
/// centers at integer coordinates. Point sets are [N,2] with u in column 0.
template <class S>
using Points = Eigen::Matrix<S, Eigen::Dynamic, 2>;

struct ImageSize {
  int height = 0;
  int width = 0;
};

/// 3x3 projective transform mapping source pixel coordinates to target
/// pixel coordinates, stored with the last entry normalized to 1.
template <class S>
struct Homography {
  Eigen::Matrix<S, 3, 3> m = Eigen::Matrix<S, 3, 3>::Identity();

  static Homography identity() { return {}; }

  static Homography from_matrix(const Eigen::Matrix<S, 3, 3>& raw) {
    if (std::abs((double)raw(2, 2)) < 1e-12)
      throw std::invalid_argument("Homography: cannot normalize, h33 ~ 0");
    Homography h;
    h.m = raw / raw(2, 2);
    return h;
  }

  S det() const { return m.determinant(); }

  Homography inverse() const {
    if (std::abs((double)det()) < 1e-8) throw std::invalid_argument("Homography: singular");
    return from_matrix(m.inverse().eval());
  }

  template <class T>
  Homography<T> cast() const {
    Homography<T> out;
    out.m = m.template cast<T>();
    return out;
  }
};

/// h2 after h1 (p -> h2(h1(p))).
template <class S>
Homography<S> compose(const Homography<S>& h2, const Homography<S>& h1) {
  return Homography<S>::from_matrix((h2.m * h1.m).eval());
}

struct HomographyConfig {
  double crop_ratio = 0.7;
  double scale_min = 0.8;
  double scale_max = 1.2;
  double rotation_min = 0.0;           // radians; magnitude range, sign drawn at random
  double rotation_max = M_PI / 4.0;
  double perspective_amplitude = 0.2;  // in half-extent-normalized coordinates
  bool translation = true;

  void validate() const {
    if (!(crop_ratio > 0.0 && crop_ratio <= 1.0)) throw std::invalid_argument("crop_ratio must be in (0,1]");
    if (scale_max < scale_min || rotation_max < rotation_min)
      throw std::invalid_argument("homography ranges must be nonempty");
    if (perspective_amplitude < 0.0) throw std::invalid_argument("perspective amplitude must be >= 0");
  }
};

namespace detail {
template <class S>
Eigen::Matrix<S, 3, 3> translate_mat(S tx, S ty) {
  Eigen::Matrix<S, 3, 3> t = Eigen::Matrix<S, 3, 3>::Identity();
  t(0, 2) = tx;
  t(1, 2) = ty;
  return t;
}
}  // namespace detail

/// Draws a random source->target homography: crop (scale+offset into the
/// source), then scale, rotation and symmetric perspective about the crop
/// center, then recentering onto the target frame. Deterministic given the
/// seed; near-singular draws are retried a bounded number of times.
template <class S>
Homography<S> sample_homography(const HomographyConfig& cfg, ImageSize size, uint64_t seed) {
  cfg.validate();
  if (size.height <= 16 || size.width <= 16) throw std::invalid_argument("sample_homography: image too small");
  Rng rng(mix_seed(seed, 0x686f6d6full));
  const double W = size.width, H = size.height;
  const double mx = (W - 1.0) / 2.0, my = (H - 1.0) / 2.0;

  for (int attempt = 0; attempt < 8; ++attempt) {
    const double r = cfg.crop_ratio;
    double cx = mx, cy = my;
    if (cfg.translation && r < 1.0) {
      const double half_w = r * W / 2.0, half_h = r * H / 2.0;
      cx = rng.uniform(half_w - 0.5, W - 0.5 - half_w);
      cy = rng.uniform(half_h - 0.5, H - 0.5 - half_h);
    }
    const double scale = rng.uniform(cfg.scale_min, cfg.scale_max) / r;
    double theta = rng.uniform(cfg.rotation_min, cfg.rotation_max);
    if (rng.bernoulli(0.5)) theta = -theta;
    const double gx = rng.uniform(-cfg.perspective_amplitude, cfg.perspective_amplitude);
    const double gy = rng.uniform(-cfg.perspective_amplitude, cfg.perspective_amplitude);

    Eigen::Matrix3d sc = Eigen::Vector3d(scale, scale, 1.0).asDiagonal();
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    rot(0, 0) = std::cos(theta);
    rot(0, 1) = -std::sin(theta);
    rot(1, 0) = std::sin(theta);
    rot(1, 1) = std::cos(theta);
    Eigen::Matrix3d persp_n = Eigen::Matrix3d::Identity();
    persp_n(2, 0) = gx;
    persp_n(2, 1) = gy;
    Eigen::Matrix3d norm = Eigen::Vector3d(2.0 / W, 2.0 / H, 1.0).asDiagonal();
    Eigen::Matrix3d persp = norm.inverse() * persp_n * norm;

    Eigen::Matrix3d h = detail::translate_mat(mx, my) * persp * rot * sc * detail::translate_mat(-cx, -cy);
    if (std::abs(h(2, 2)) < 1e-12) continue;
    h /= h(2, 2);
    if (std::abs(h.determinant()) <= 1e-8) continue;
    Homography<S> out;
    out.m = h.cast<S>();
    return out;
  }
  throw std::runtime_error("sample_homography: degenerate draws exhausted retries");
}

/// Projective warp of pixel points. Points falling on the plane at infinity
/// (|w| ~ 0) are reported invalid and parked at a far sentinel location.
template <class S>
std::pair<Points<S>, std::vector<char>> warp_points_valid(const Points<S>& pts, const Homography<S>& h) {
  const Eigen::Index n = pts.rows();
  Points<S> out(n, 2);
  std::vector<char> valid((size_t)n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const S u = pts(i, 0), v = pts(i, 1);
    const S x = h.m(0, 0) * u + h.m(0, 1) * v + h.m(0, 2);
    const S y = h.m(1, 0) * u + h.m(1, 1) * v + h.m(1, 2);
    const S w = h.m(2, 0) * u + h.m(2, 1) * v + h.m(2, 2);
    if (std::abs((double)w) < 1e-8) {
      valid[(size_t)i] = 0;
      out(i, 0) = S(-1e9);
      out(i, 1) = S(-1e9);
      continue;
    }
    out(i, 0) = x / w;
    out(i, 1) = y / w;
  }
  return {std::move(out), std::move(valid)};
}

template <class S>
Points<S> warp_points(const Points<S>& pts, const Homography<S>& h) {
  return warp_points_valid(pts, h).first;
}

/// True iff 0 <= u < W and 0 <= v < H.
template <class S>
std::vector<char> in_bounds_mask(const Points<S>& pts, ImageSize size) {
  std::vector<char> mask((size_t)pts.rows());
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    mask[(size_t)i] = pts(i, 0) >= S(0) && pts(i, 0) < S(size.width) && pts(i, 1) >= S(0) && pts(i, 1) < S(size.height);
  return mask;
}

}  // namespace kpl
