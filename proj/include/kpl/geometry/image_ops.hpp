#pragma once

#include "kpl/core/tensor.hpp"
#include "kpl/geometry/homography.hpp"

#include <algorithm>
#include <cmath>

namespace kpl {

/// Images are [C,H,W] tensors with intensities in [0,1].
template <class S>
using Image = Tensor<S>;

template <class S>
ImageSize image_size(const Image<S>& img) {
  return {img.dim(1), img.dim(2)};
}

namespace detail {
template <class S>
S sample_zero_fill(const S* plane, int H, int W, S u, S v) {
  const int x0 = (int)std::floor((double)u), y0 = (int)std::floor((double)v);
  const S fx = u - S(x0), fy = v - S(y0);
  auto tap = [&](int y, int x) -> S {
    if (x < 0 || x >= W || y < 0 || y >= H) return S(0);
    return plane[(int64_t)y * W + x];
  };
  return (S(1) - fx) * (S(1) - fy) * tap(y0, x0) + fx * (S(1) - fy) * tap(y0, x0 + 1) +
         (S(1) - fx) * fy * tap(y0 + 1, x0) + fx * fy * tap(y0 + 1, x0 + 1);
}
}  // namespace detail

/// Inverse-maps each target pixel through h^-1 and bilinearly samples the
/// source; out-of-bounds pixels are zero with mask=0. The mask marks target
/// pixels whose source location lies inside the source extent.
template <class S>
std::pair<Image<S>, std::vector<char>> warp_image(const Image<S>& img, const Homography<S>& h, ImageSize out_size) {
  if (img.empty()) throw std::invalid_argument("warp_image: empty image");
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int Ho = out_size.height, Wo = out_size.width;
  const Homography<S> hinv = h.inverse();
  Image<S> out({C, Ho, Wo});
  std::vector<char> mask((size_t)Ho * Wo, 0);
  for (int y = 0; y < Ho; ++y) {
    for (int x = 0; x < Wo; ++x) {
      const S xs = hinv.m(0, 0) * S(x) + hinv.m(0, 1) * S(y) + hinv.m(0, 2);
      const S ys = hinv.m(1, 0) * S(x) + hinv.m(1, 1) * S(y) + hinv.m(1, 2);
      const S ws = hinv.m(2, 0) * S(x) + hinv.m(2, 1) * S(y) + hinv.m(2, 2);
      if (std::abs((double)ws) < 1e-8) continue;
      const S u = xs / ws, v = ys / ws;
      const bool inside = u >= S(0) && u <= S(W - 1) && v >= S(0) && v <= S(H - 1);
      mask[(size_t)y * Wo + x] = inside;
      if (u < S(-1) || u > S(W) || v < S(-1) || v > S(H)) continue;
      for (int c = 0; c < C; ++c)
        out[((int64_t)c * Ho + y) * Wo + x] = detail::sample_zero_fill(img.data() + (int64_t)c * H * W, H, W, u, v);
    }
  }
  return {std::move(out), std::move(mask)};
}

/// Bilinear resize, half-pixel aligned.
template <class S>
Image<S> resize_bilinear(const Image<S>& img, ImageSize out_size) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int Ho = out_size.height, Wo = out_size.width;
  if (Ho == H && Wo == W) return img;
  Image<S> out({C, Ho, Wo});
  const double sx = (double)W / Wo, sy = (double)H / Ho;
  for (int c = 0; c < C; ++c) {
    const S* plane = img.data() + (int64_t)c * H * W;
    for (int y = 0; y < Ho; ++y) {
      const double v = std::clamp((y + 0.5) * sy - 0.5, 0.0, (double)(H - 1));
      for (int x = 0; x < Wo; ++x) {
        const double u = std::clamp((x + 0.5) * sx - 0.5, 0.0, (double)(W - 1));
        out[((int64_t)c * Ho + y) * Wo + x] = detail::sample_zero_fill(plane, H, W, (S)u, (S)v);
      }
    }
  }
  return out;
}

template <class S>
Image<S> center_crop(const Image<S>& img, ImageSize out_size) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int Ho = out_size.height, Wo = out_size.width;
  if (Ho > H || Wo > W) throw std::invalid_argument("center_crop: target larger than image");
  const int y0 = (H - Ho) / 2, x0 = (W - Wo) / 2;
  Image<S> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      std::copy_n(img.data() + ((int64_t)c * H + y0 + y) * W + x0, Wo, out.data() + ((int64_t)c * Ho + y) * Wo);
  return out;
}

/// Shortest-side resize followed by center crop.
template <class S>
Image<S> fit_to(const Image<S>& img, ImageSize out_size) {
  const int H = img.dim(1), W = img.dim(2);
  const double scale = std::max((double)out_size.height / H, (double)out_size.width / W);
  ImageSize mid{std::max(out_size.height, (int)std::lround(H * scale)),
                std::max(out_size.width, (int)std::lround(W * scale))};
  return center_crop(resize_bilinear(img, mid), out_size);
}

}  // namespace kpl
