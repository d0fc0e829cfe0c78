#pragma once

#include "kpl/core/rng.hpp"
#include "kpl/geometry/image_ops.hpp"

#include <array>
#include <numeric>

namespace kpl {

struct PhotometricConfig {
  double gaussian_noise_sigma = 0.02;   // on [0,1] intensities
  std::vector<int> blur_kernels = {1, 3, 5};
  double brightness_min = 0.5, brightness_max = 1.5;
  double contrast_min = 0.5, contrast_max = 1.5;
  double saturation_min = 0.8, saturation_max = 1.2;
  double hue_min = -0.2, hue_max = 0.2;  // fraction of the hue circle
  double channel_shuffle_prob = 0.5;
  double grayscale_prob = 0.5;

  void validate() const {
    auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob_ok(channel_shuffle_prob) || !prob_ok(grayscale_prob))
      throw std::invalid_argument("photometric probabilities must be in [0,1]");
    if (gaussian_noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
    if (blur_kernels.empty()) throw std::invalid_argument("blur kernel list must be nonempty");
    for (int k : blur_kernels)
      if (k < 1 || k % 2 == 0) throw std::invalid_argument("blur kernels must be odd and >= 1");
  }

  static PhotometricConfig off() {
    PhotometricConfig c;
    c.gaussian_noise_sigma = 0.0;
    c.blur_kernels = {1};
    c.brightness_min = c.brightness_max = 1.0;
    c.contrast_min = c.contrast_max = 1.0;
    c.saturation_min = c.saturation_max = 1.0;
    c.hue_min = c.hue_max = 0.0;
    c.channel_shuffle_prob = 0.0;
    c.grayscale_prob = 0.0;
    return c;
  }
};

namespace detail {

template <class S>
void gaussian_blur(Image<S>& img, int k) {
  if (k <= 1) return;
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int r = k / 2;
  const double sigma = 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8;
  std::vector<S> kernel((size_t)k);
  double sum = 0;
  for (int i = 0; i < k; ++i) {
    const double d = i - r;
    kernel[(size_t)i] = (S)std::exp(-d * d / (2 * sigma * sigma));
    sum += (double)kernel[(size_t)i];
  }
  for (auto& w : kernel) w = (S)((double)w / sum);

  std::vector<S> tmp((size_t)H * W);
  for (int c = 0; c < C; ++c) {
    S* plane = img.data() + (int64_t)c * H * W;
    for (int y = 0; y < H; ++y)  // horizontal, replicate border
      for (int x = 0; x < W; ++x) {
        S acc = 0;
        for (int i = -r; i <= r; ++i) acc += kernel[(size_t)(i + r)] * plane[(int64_t)y * W + std::clamp(x + i, 0, W - 1)];
        tmp[(size_t)y * W + x] = acc;
      }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        S acc = 0;
        for (int i = -r; i <= r; ++i) acc += kernel[(size_t)(i + r)] * tmp[(size_t)std::clamp(y + i, 0, H - 1) * W + x];
        plane[(int64_t)y * W + x] = acc;
      }
  }
}

template <class S>
S luma(S rc, S gc, S bc) {
  return S(0.299) * rc + S(0.587) * gc + S(0.114) * bc;
}

template <class S>
void rgb_to_hsv(S r, S g, S b, S& h, S& s, S& v) {
  const S mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const S d = mx - mn;
  v = mx;
  s = mx > S(0) ? d / mx : S(0);
  if (d <= S(0)) {
    h = S(0);
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = S(2) + (b - r) / d;
  else
    h = S(4) + (r - g) / d;
  h /= S(6);
  if (h < S(0)) h += S(1);
}

template <class S>
void hsv_to_rgb(S h, S s, S v, S& r, S& g, S& b) {
  h = h - std::floor(h);
  const S hh = h * S(6);
  const int i = std::min(5, (int)hh);
  const S f = hh - S(i);
  const S p = v * (S(1) - s), q = v * (S(1) - s * f), t = v * (S(1) - s * (S(1) - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace detail

/// Non-spatial augmentation: blur, color jitter, channel shuffle/grayscale,
/// per-pixel Gaussian noise, then clamp to [0,1]. All random decisions are
/// drawn in a fixed order so a seed fully determines the output.
template <class S>
Image<S> apply_photometric(const Image<S>& img, const PhotometricConfig& cfg, uint64_t seed) {
  cfg.validate();
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  if (C != 3) throw std::invalid_argument("apply_photometric: expects a 3-channel image");
  Rng rng(mix_seed(seed, 0x70686f74ull));

  const int k = cfg.blur_kernels[(size_t)rng.uniform_int(0, (int)cfg.blur_kernels.size() - 1)];
  const S brightness = (S)rng.uniform(cfg.brightness_min, cfg.brightness_max);
  const S contrast = (S)rng.uniform(cfg.contrast_min, cfg.contrast_max);
  const S saturation = (S)rng.uniform(cfg.saturation_min, cfg.saturation_max);
  const S hue_shift = (S)rng.uniform(cfg.hue_min, cfg.hue_max);
  const bool shuffle = rng.bernoulli(cfg.channel_shuffle_prob);
  std::array<int, 3> perm = {0, 1, 2};
  {
    std::vector<int> p = {0, 1, 2};
    rng.shuffle(p);  // drawn unconditionally to keep the stream layout fixed
    std::copy(p.begin(), p.end(), perm.begin());
  }
  const bool to_gray = rng.bernoulli(cfg.grayscale_prob);

  Image<S> out = img;
  detail::gaussian_blur(out, k);

  const int64_t plane = (int64_t)H * W;
  S* rp = out.data();
  S* gp = out.data() + plane;
  S* bp = out.data() + 2 * plane;

  if (brightness != S(1)) out.array() *= brightness;

  if (contrast != S(1)) {
    S mean_gray = 0;
    for (int64_t i = 0; i < plane; ++i) mean_gray += detail::luma(rp[i], gp[i], bp[i]);
    mean_gray /= (S)plane;
    out.array() = (out.array() - mean_gray) * contrast + mean_gray;
  }

  if (saturation != S(1)) {
    for (int64_t i = 0; i < plane; ++i) {
      const S g = detail::luma(rp[i], gp[i], bp[i]);
      rp[i] = (rp[i] - g) * saturation + g;
      gp[i] = (gp[i] - g) * saturation + g;
      bp[i] = (bp[i] - g) * saturation + g;
    }
  }

  if (hue_shift != S(0)) {
    for (int64_t i = 0; i < plane; ++i) {
      S h, s, v;
      const S r0 = std::clamp(rp[i], S(0), S(1)), g0 = std::clamp(gp[i], S(0), S(1)),
              b0 = std::clamp(bp[i], S(0), S(1));
      detail::rgb_to_hsv(r0, g0, b0, h, s, v);
      detail::hsv_to_rgb(h + hue_shift, s, v, rp[i], gp[i], bp[i]);
    }
  }

  if (shuffle && !(perm[0] == 0 && perm[1] == 1 && perm[2] == 2)) {
    Image<S> shuffled = out;
    for (int c = 0; c < 3; ++c)
      std::copy_n(out.data() + (int64_t)perm[(size_t)c] * plane, plane, shuffled.data() + (int64_t)c * plane);
    out = std::move(shuffled);
    rp = out.data();
    gp = out.data() + plane;
    bp = out.data() + 2 * plane;
  }

  if (to_gray) {
    for (int64_t i = 0; i < plane; ++i) {
      const S g = detail::luma(rp[i], gp[i], bp[i]);
      rp[i] = gp[i] = bp[i] = g;
    }
  }

  if (cfg.gaussian_noise_sigma > 0.0) {
    for (int64_t i = 0; i < out.size(); ++i) out[i] += (S)rng.normal(0.0, cfg.gaussian_noise_sigma);
  }

  out.array() = out.array().min(S(1)).max(S(0));
  return out;
}

}  // namespace kpl
