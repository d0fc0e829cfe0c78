#pragma once

#include "kpl/autograd/ops.hpp"
#include "kpl/core/rng.hpp"

#include <cstring>
#include <memory>
#include <string>

namespace kpl::ag {

namespace detail {

// im2col over an output row band [y0,y1) for stride-1 same convolution.
// col is [C*kh*kw, (y1-y0)*W] row-major.
template <class S>
void im2col_band(const S* x, int C, int H, int W, int kh, int kw, int pad, int y0, int y1, S* col) {
  const int band = y1 - y0;
  const int P = band * W;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int shift = kx - pad;
        const int ncopy = W - std::abs(shift);
        S* dst_row = col + (int64_t)((c * kh + ky) * kw + kx) * P;
        for (int y = y0; y < y1; ++y) {
          S* dst = dst_row + (int64_t)(y - y0) * W;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H || ncopy <= 0) {
            std::memset(dst, 0, sizeof(S) * (size_t)W);
            continue;
          }
          const S* src = x + ((int64_t)c * H + sy) * W;
          if (shift == 0) {
            std::memcpy(dst, src, sizeof(S) * (size_t)W);
          } else if (shift > 0) {
            std::memcpy(dst, src + shift, sizeof(S) * (size_t)ncopy);
            std::memset(dst + ncopy, 0, sizeof(S) * (size_t)(W - ncopy));
          } else {
            std::memset(dst, 0, sizeof(S) * (size_t)(-shift));
            std::memcpy(dst - shift, src, sizeof(S) * (size_t)ncopy);
          }
        }
      }
    }
  }
}

// Adjoint of im2col_band: scatter-adds col gradients back into dx.
template <class S>
void col2im_band(const S* col, int C, int H, int W, int kh, int kw, int pad, int y0, int y1, S* dx) {
  const int band = y1 - y0;
  const int P = band * W;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const int shift = kx - pad;
        const int ncopy = W - std::abs(shift);
        const S* src_row = col + (int64_t)((c * kh + ky) * kw + kx) * P;
        if (ncopy <= 0) continue;
        for (int y = y0; y < y1; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= H) continue;
          const S* src = src_row + (int64_t)(y - y0) * W;
          S* dst = dx + ((int64_t)c * H + sy) * W;
          if (shift >= 0) {
            for (int i = 0; i < ncopy; ++i) dst[shift + i] += src[i];
          } else {
            for (int i = 0; i < ncopy; ++i) dst[i] += src[i - shift];
          }
        }
      }
    }
  }
}

// Output rows are processed in bands sized to keep the im2col buffer inside
// a fixed memory budget; each band is one GEMM.
struct BandPlan {
  int rows = 1;
  int count = 1;
};

inline BandPlan conv_bands(int CK, int W, int H) {
  const int64_t budget = 4 << 20;  // col elements per band
  int rows = (int)std::max<int64_t>(1, budget / std::max<int64_t>(1, (int64_t)CK * W));
  BandPlan plan;
  plan.rows = std::min(rows, H);
  plan.count = (H + plan.rows - 1) / plan.rows;
  return plan;
}

template <class S>
S* conv_workspace(size_t elems, int slot) {
  thread_local std::unique_ptr<S[]> buf[2];
  thread_local size_t cap[2] = {0, 0};
  if (cap[slot] < elems) {
    buf[slot].reset(new S[elems]);
    cap[slot] = elems;
  }
  return buf[slot].get();
}

}  // namespace detail

/// Stride-1 same-padding 2d convolution. x: [N,C,H,W], w: [Co,C,kh,kw],
/// b: [Co] (optional, pass undefined Var to skip). The im2col buffer is
/// rebuilt band-by-band in backward instead of being stored.
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  const Shape& xs = x.value().shape();
  const Shape& ws = w.value().shape();
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int Co = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != C) throw std::invalid_argument("conv2d: channel mismatch");
  const int pad = kh / 2;
  const int CK = C * kh * kw;
  const int64_t plane = (int64_t)H * W;

  Tensor<S> out = Tensor<S>::uninit({N, Co, H, W});
  const detail::BandPlan plan = detail::conv_bands(CK, W, H);
  const int64_t col_elems = (int64_t)CK * plan.rows * W;

  Eigen::Map<const typename Tensor<S>::MatRM> wm(w.value().data(), Co, CK);
  for (int n = 0; n < N; ++n) {
    const S* xp = x.value().data() + (int64_t)n * C * plane;
    S* op = out.data() + (int64_t)n * Co * plane;
    for (int bi = 0; bi < plan.count; ++bi) {
      S* col = detail::conv_workspace<S>((size_t)col_elems, 0);
      const int y0 = bi * plan.rows;
      const int y1 = std::min(H, y0 + plan.rows);
      const int P = (y1 - y0) * W;
      detail::im2col_band(xp, C, H, W, kh, kw, pad, y0, y1, col);
      Eigen::Map<const typename Tensor<S>::MatRM> colm(col, CK, P);
      Eigen::Map<typename Tensor<S>::MatRM, 0, Eigen::OuterStride<>> om(
          op + (int64_t)y0 * W, Co, P, Eigen::OuterStride<>((Eigen::Index)plane));
      om.noalias() = wm * colm;
    }
  }
  if (b.defined()) {
    Eigen::Map<const typename Tensor<S>::Array> bv(b.value().data(), Co);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < Co; ++c)
        Eigen::Map<typename Tensor<S>::Array>(out.data() + ((int64_t)n * Co + c) * plane, plane) += bv[c];
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  return make_op<S>(std::move(out), b.defined() ? std::initializer_list<Var<S>>{x, w, b}
                                                : std::initializer_list<Var<S>>{x, w},
                    [xn, wn, bn, N, C, H, W, Co, kh, kw, pad, CK, plane](const Tensor<S>& g) {
    const detail::BandPlan plan = detail::conv_bands(CK, W, H);
    const int64_t col_elems = (int64_t)CK * plan.rows * W;
    Eigen::Map<const typename Tensor<S>::MatRM> wm(wn->value.data(), Co, CK);
    for (int n = 0; n < N; ++n) {
      const S* xp = xn->value.data() + (int64_t)n * C * plane;
      const S* gp = g.data() + (int64_t)n * Co * plane;
      S* xg = xn->requires_grad ? xn->ensure_grad().data() + (int64_t)n * C * plane : nullptr;
      for (int bi = 0; bi < plan.count; ++bi) {
        S* col = detail::conv_workspace<S>((size_t)col_elems, 0);
        const int y0 = bi * plan.rows;
        const int y1 = std::min(H, y0 + plan.rows);
        const int P = (y1 - y0) * W;
        Eigen::Map<const typename Tensor<S>::MatRM, 0, Eigen::OuterStride<>> gm(
            gp + (int64_t)y0 * W, Co, P, Eigen::OuterStride<>((Eigen::Index)plane));
        if (wn->requires_grad) {
          detail::im2col_band(xp, C, H, W, kh, kw, pad, y0, y1, col);
          Eigen::Map<const typename Tensor<S>::MatRM> colm(col, CK, P);
          wn->ensure_grad().mat(Co, CK).noalias() += gm * colm.transpose();
        }
        if (xg) {
          S* dcol = detail::conv_workspace<S>((size_t)col_elems, 1);
          Eigen::Map<typename Tensor<S>::MatRM> dcolm(dcol, CK, P);
          dcolm.noalias() = wm.transpose() * gm;
          detail::col2im_band(dcol, C, H, W, kh, kw, pad, y0, y1, xg);
        }
      }
      if (bn && bn->requires_grad) {
        auto bg = bn->ensure_grad().array();
        for (int c = 0; c < Co; ++c)
          bg[c] += Eigen::Map<const typename Tensor<S>::Array>(gp + (int64_t)c * plane, plane).sum();
      }
    }
  });
}

/// 2x2 stride-2 max pooling over [N,C,H,W]; H and W must be even.
template <class S>
Var<S> max_pool2x2(const Var<S>& x) {
  const Shape& xs = x.value().shape();
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (H % 2 || W % 2) throw std::invalid_argument("max_pool2x2: odd spatial size");
  const int Ho = H / 2, Wo = W / 2;
  Tensor<S> out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int64_t>>((size_t)out.size());
  const S* xp = x.value().data();
  S* op = out.data();
  int64_t oi = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const int64_t base = (int64_t)nc * H * W;
    for (int y = 0; y < Ho; ++y) {
      for (int xq = 0; xq < Wo; ++xq, ++oi) {
        int64_t i00 = base + (int64_t)(2 * y) * W + 2 * xq;
        int64_t best = i00;
        S bv = xp[i00];
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            int64_t i = i00 + (int64_t)dy * W + dx;
            if (xp[i] > bv) { bv = xp[i]; best = i; }
          }
        op[oi] = bv;
        (*argmax)[(size_t)oi] = best;
      }
    }
  }
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn, argmax](const Tensor<S>& g) {
    if (!xn->requires_grad) return;
    auto& xg = xn->ensure_grad();
    for (int64_t i = 0; i < g.size(); ++i) xg[(*argmax)[(size_t)i]] += g[i];
  });
}

/// Rearranges [N, C*r^2, H, W] -> [N, C, rH, rW] with r = 2.
template <class S>
Var<S> pixel_shuffle2(const Var<S>& x) {
  const Shape& xs = x.value().shape();
  const int N = xs[0], Ci = xs[1], H = xs[2], W = xs[3];
  if (Ci % 4) throw std::invalid_argument("pixel_shuffle2: channels not divisible by 4");
  const int C = Ci / 4, Ho = 2 * H, Wo = 2 * W;
  Tensor<S> out({N, C, Ho, Wo});
  const S* xp = x.value().data();
  S* op = out.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const S* src = xp + (((int64_t)n * Ci + c * 4 + a * 2 + b) * H) * W;
          for (int y = 0; y < H; ++y) {
            S* dst = op + (((int64_t)n * C + c) * Ho + 2 * y + a) * Wo + b;
            const S* s = src + (int64_t)y * W;
            for (int xq = 0; xq < W; ++xq) dst[2 * xq] = s[xq];
          }
        }
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn, N, C, Ci, H, W, Ho, Wo](const Tensor<S>& g) {
    if (!xn->requires_grad) return;
    S* xg = xn->ensure_grad().data();
    const S* gp = g.data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            S* dst = xg + (((int64_t)n * Ci + c * 4 + a * 2 + b) * H) * W;
            for (int y = 0; y < H; ++y) {
              const S* s = gp + (((int64_t)n * C + c) * Ho + 2 * y + a) * Wo + b;
              S* d = dst + (int64_t)y * W;
              for (int xq = 0; xq < W; ++xq) d[xq] += s[2 * xq];
            }
          }
  });
}

template <class S>
Var<S> concat_channels(const Var<S>& a, const Var<S>& b) {
  const Shape& as = a.value().shape();
  const Shape& bs = b.value().shape();
  const int N = as[0], Ca = as[1], Cb = bs[1], H = as[2], W = as[3];
  if (bs[0] != N || bs[2] != H || bs[3] != W) throw std::invalid_argument("concat_channels: shape mismatch");
  const int64_t plane = (int64_t)H * W;
  Tensor<S> out({N, Ca + Cb, H, W});
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.data() + (int64_t)n * (Ca + Cb) * plane, a.value().data() + (int64_t)n * Ca * plane,
                sizeof(S) * (size_t)(Ca * plane));
    std::memcpy(out.data() + ((int64_t)n * (Ca + Cb) + Ca) * plane, b.value().data() + (int64_t)n * Cb * plane,
                sizeof(S) * (size_t)(Cb * plane));
  }
  auto an = a.node(), bn = b.node();
  return make_op<S>(std::move(out), {a, b}, [an, bn, N, Ca, Cb, plane](const Tensor<S>& g) {
    for (int n = 0; n < N; ++n) {
      if (an->requires_grad)
        Eigen::Map<typename Tensor<S>::Array>(an->ensure_grad().data() + (int64_t)n * Ca * plane, Ca * plane) +=
            Eigen::Map<const typename Tensor<S>::Array>(g.data() + (int64_t)n * (Ca + Cb) * plane, Ca * plane);
      if (bn->requires_grad)
        Eigen::Map<typename Tensor<S>::Array>(bn->ensure_grad().data() + (int64_t)n * Cb * plane, Cb * plane) +=
            Eigen::Map<const typename Tensor<S>::Array>(g.data() + ((int64_t)n * (Ca + Cb) + Ca) * plane, Cb * plane);
    }
  });
}

/// Inverted dropout; identity when not training or rate == 0.
template <class S>
Var<S> dropout(const Var<S>& x, S rate, Rng& rng, bool training) {
  if (!training || rate <= S(0)) return x;
  const S keep = S(1) - rate;
  auto mask = std::make_shared<Tensor<S>>(x.value().shape());
  for (int64_t i = 0; i < mask->size(); ++i)
    (*mask)[i] = rng.uniform() < (double)rate ? S(0) : S(1) / keep;
  Tensor<S> out = x.value();
  out.array() *= mask->array();
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn, mask](const Tensor<S>& g) {
    detail::accumulate(xn, g.array() * mask->array());
  });
}

/// Bilinear sampling of a dense map [C,Hm,Wm] at N (u,v) grid locations
/// ([N,2], u = column). Locations are clamped to the border; clamped
/// coordinates get zero positional gradient.
template <class S>
Var<S> grid_sample(const Var<S>& map, const Var<S>& locs) {
  const Shape& ms = map.value().shape();
  const int C = ms[0], Hm = ms[1], Wm = ms[2];
  const int N = locs.value().dim(0);
  Tensor<S> out({N, C});
  struct Tap {
    int x0, y0;
    S fx, fy;
    bool du, dv;
  };
  auto taps = std::make_shared<std::vector<Tap>>((size_t)N);
  const S* mp = map.value().data();
  auto lm = locs.value().mat(N, 2);
  auto om = out.mat(N, C);
  const int64_t plane = (int64_t)Hm * Wm;
  for (int i = 0; i < N; ++i) {
    S u = lm(i, 0), v = lm(i, 1);
    Tap t;
    t.du = (u > S(0) && u < S(Wm - 1));
    t.dv = (v > S(0) && v < S(Hm - 1));
    u = std::min(std::max(u, S(0)), S(Wm - 1));
    v = std::min(std::max(v, S(0)), S(Hm - 1));
    t.x0 = std::min((int)std::floor((double)u), Wm - 2 >= 0 ? Wm - 2 : 0);
    t.y0 = std::min((int)std::floor((double)v), Hm - 2 >= 0 ? Hm - 2 : 0);
    t.fx = u - S(t.x0);
    t.fy = v - S(t.y0);
    (*taps)[(size_t)i] = t;
    const int x1 = std::min(t.x0 + 1, Wm - 1), y1 = std::min(t.y0 + 1, Hm - 1);
    const S w00 = (S(1) - t.fx) * (S(1) - t.fy), w10 = t.fx * (S(1) - t.fy);
    const S w01 = (S(1) - t.fx) * t.fy, w11 = t.fx * t.fy;
    for (int c = 0; c < C; ++c) {
      const S* pc = mp + (int64_t)c * plane;
      om(i, c) = w00 * pc[(int64_t)t.y0 * Wm + t.x0] + w10 * pc[(int64_t)t.y0 * Wm + x1] +
                 w01 * pc[(int64_t)y1 * Wm + t.x0] + w11 * pc[(int64_t)y1 * Wm + x1];
    }
  }
  auto mn = map.node();
  auto ln = locs.node();
  return make_op<S>(std::move(out), {map, locs}, [mn, ln, taps, C, Hm, Wm, N, plane](const Tensor<S>& g) {
    auto gm = g.mat(N, C);
    const S* mp = mn->value.data();
    S* mapg = mn->requires_grad ? mn->ensure_grad().data() : nullptr;
    for (int i = 0; i < N; ++i) {
      const Tap& t = (*taps)[(size_t)i];
      const int x1 = std::min(t.x0 + 1, Wm - 1), y1 = std::min(t.y0 + 1, Hm - 1);
      const S w00 = (S(1) - t.fx) * (S(1) - t.fy), w10 = t.fx * (S(1) - t.fy);
      const S w01 = (S(1) - t.fx) * t.fy, w11 = t.fx * t.fy;
      S du = S(0), dv = S(0);
      for (int c = 0; c < C; ++c) {
        const S gc = gm(i, c);
        const int64_t i00 = (int64_t)c * plane + (int64_t)t.y0 * Wm + t.x0;
        const int64_t i10 = (int64_t)c * plane + (int64_t)t.y0 * Wm + x1;
        const int64_t i01 = (int64_t)c * plane + (int64_t)y1 * Wm + t.x0;
        const int64_t i11 = (int64_t)c * plane + (int64_t)y1 * Wm + x1;
        if (mapg) {
          mapg[i00] += gc * w00;
          mapg[i10] += gc * w10;
          mapg[i01] += gc * w01;
          mapg[i11] += gc * w11;
        }
        if (ln->requires_grad) {
          du += gc * ((mp[i10] - mp[i00]) * (S(1) - t.fy) + (mp[i11] - mp[i01]) * t.fy);
          dv += gc * ((mp[i01] - mp[i00]) * (S(1) - t.fx) + (mp[i11] - mp[i10]) * t.fx);
        }
      }
      if (ln->requires_grad) {
        auto lg = ln->ensure_grad().mat(N, 2);
        lg(i, 0) += t.du ? du : S(0);
        lg(i, 1) += t.dv ? dv : S(0);
      }
    }
  });
}

/// Pointwise (kernel-1) 1d convolution over [C,L]: y = w x + b.
template <class S>
Var<S> conv1d_1x1(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
  const int C = x.value().dim(0), L = x.value().dim(1);
  const int Co = w.value().dim(0);
  if (w.value().dim(1) != C) throw std::invalid_argument("conv1d_1x1: channel mismatch");
  Tensor<S> out({Co, L});
  out.mat(Co, L).noalias() = w.value().mat(Co, C) * x.value().mat(C, L);
  if (b.defined())
    out.mat(Co, L).colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(b.value().data(), Co);
  auto xn = x.node(), wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  return make_op<S>(std::move(out), b.defined() ? std::initializer_list<Var<S>>{x, w, b}
                                                : std::initializer_list<Var<S>>{x, w},
                    [xn, wn, bn, C, L, Co](const Tensor<S>& g) {
    auto gm = g.mat(Co, L);
    if (wn->requires_grad) wn->ensure_grad().mat(Co, C).noalias() += gm * xn->value.mat(C, L).transpose();
    if (xn->requires_grad) xn->ensure_grad().mat(C, L).noalias() += wn->value.mat(Co, C).transpose() * gm;
    if (bn && bn->requires_grad)
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(bn->ensure_grad().data(), Co) += gm.rowwise().sum();
  });
}

/// Deferred running-statistics update, so concurrent forward passes over
/// shared layers (e.g. the two frames of a training pair) stay race-free:
/// each pass collects its updates, the caller applies them in order.
template <class S>
struct NormStatsUpdate {
  Tensor<S>* running_mean = nullptr;
  Tensor<S>* running_var = nullptr;
  Tensor<S> mean, unbiased_var;
  S momentum = S(0.1);

  void apply() const {
    for (int64_t c = 0; c < mean.size(); ++c) {
      (*running_mean)[c] = (S(1) - momentum) * (*running_mean)[c] + momentum * mean[c];
      (*running_var)[c] = (S(1) - momentum) * (*running_var)[c] + momentum * unbiased_var[c];
    }
  }
};

template <class S>
using StatsCollector = std::vector<NormStatsUpdate<S>>;

namespace detail {

// Shared normalization core. x is viewed as `rows` slices of length M,
// ordered sample-major so slice r carries channel r % channels; statistics
// pool every slice of a channel (per-channel over batch and space).
template <class S>
Var<S> normalize_channels(const Var<S>& x, int rows, int M, const Var<S>& gamma, const Var<S>& beta,
                          int channels, Tensor<S>* running_mean, Tensor<S>* running_var, bool training,
                          S momentum, S eps, StatsCollector<S>* collector = nullptr) {
  const int per_group = rows / channels * M;
  Tensor<S> mean({channels}), invstd({channels});
  auto xm = x.value().mat(rows, M);
  if (training) {
    Tensor<S> var({channels});
    for (int c = 0; c < channels; ++c) {
      S sum = 0, sumsq = 0;
      for (int r = c; r < rows; r += channels) {
        sum += xm.row(r).sum();
        sumsq += xm.row(r).squaredNorm();
      }
      const S mu = sum / (S)per_group;
      S v = sumsq / (S)per_group - mu * mu;
      if (v < S(0)) v = S(0);
      mean[c] = mu;
      var[c] = v;
      invstd[c] = S(1) / std::sqrt(v + eps);
    }
    if (running_mean != nullptr) {
      NormStatsUpdate<S> update;
      update.running_mean = running_mean;
      update.running_var = running_var;
      update.momentum = momentum;
      update.mean = mean;
      update.unbiased_var = var;
      if (per_group > 1)
        for (int c = 0; c < channels; ++c)
          update.unbiased_var[c] = var[c] * (S)per_group / (S)(per_group - 1);
      if (collector)
        collector->push_back(std::move(update));
      else
        update.apply();
    }
  } else {
    for (int c = 0; c < channels; ++c) {
      mean[c] = (*running_mean)[c];
      invstd[c] = S(1) / std::sqrt((*running_var)[c] + eps);
    }
  }

  auto xhat = std::make_shared<Tensor<S>>(x.value().shape());
  auto hm = xhat->mat(rows, M);
  for (int r = 0; r < rows; ++r) hm.row(r) = (xm.row(r).array() - mean[r % channels]) * invstd[r % channels];

  Tensor<S> out(x.value().shape());
  auto om = out.mat(rows, M);
  const bool affine = gamma.defined();
  for (int r = 0; r < rows; ++r) {
    const int c = r % channels;
    if (affine)
      om.row(r) = hm.row(r).array() * gamma.value()[c] + beta.value()[c];
    else
      om.row(r) = hm.row(r);
  }

  auto xn = x.node();
  auto gn = affine ? gamma.node() : nullptr;
  auto bn = affine ? beta.node() : nullptr;
  return make_op<S>(std::move(out),
                    affine ? std::initializer_list<Var<S>>{x, gamma, beta} : std::initializer_list<Var<S>>{x},
                    [xn, gn, bn, xhat, invstd, rows, M, channels, training, per_group](const Tensor<S>& g) {
    auto gm = g.mat(rows, M);
    auto hm = xhat->mat(rows, M);
    if (gn && gn->requires_grad) {
      auto gg = gn->ensure_grad().array();
      auto bg = bn->ensure_grad().array();
      for (int r = 0; r < rows; ++r) {
        const int c = r % channels;
        gg[c] += (gm.row(r).array() * hm.row(r).array()).sum();
        bg[c] += gm.row(r).sum();
      }
    }
    if (!xn->requires_grad) return;
    auto xg = xn->ensure_grad().mat(rows, M);
    if (training) {
      // dL/dx through the batch statistics
      Tensor<S> sg({channels}), sgx({channels});
      for (int r = 0; r < rows; ++r) {
        const int c = r % channels;
        const S gamma_c = gn ? gn->value[c] : S(1);
        sg[c] += gamma_c * gm.row(r).sum();
        sgx[c] += gamma_c * (gm.row(r).array() * hm.row(r).array()).sum();
      }
      for (int r = 0; r < rows; ++r) {
        const int c = r % channels;
        const S gamma_c = gn ? gn->value[c] : S(1);
        xg.row(r).array() += invstd[c] * (gamma_c * gm.row(r).array() - sg[c] / (S)per_group -
                                          hm.row(r).array() * (sgx[c] / (S)per_group));
      }
    } else {
      for (int r = 0; r < rows; ++r) {
        const int c = r % channels;
        const S gamma_c = gn ? gn->value[c] : S(1);
        xg.row(r).array() += invstd[c] * gamma_c * gm.row(r).array();
      }
    }
  });
}

}  // namespace detail

/// Trainable layers. Each owns its parameters; `collect` registers them (and
/// any running-statistic buffers) under a name prefix for the optimizer and
/// checkpoint code.
template <class S>
struct ParamStore {
  std::vector<std::pair<std::string, Var<S>>> params;
  std::vector<std::pair<std::string, Tensor<S>*>> buffers;

  void add(const std::string& name, const Var<S>& p) { params.emplace_back(name, p); }
  void add_buffer(const std::string& name, Tensor<S>* t) { buffers.emplace_back(name, t); }
};

template <class S>
Tensor<S> uniform_init(Rng& rng, Shape shape, double bound) {
  Tensor<S> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = (S)rng.uniform(-bound, bound);
  return t;
}

template <class S>
struct Conv2dLayer {
  Var<S> w, b;

  void init(Rng& rng, int cin, int cout, int k) {
    const double bound = 1.0 / std::sqrt((double)cin * k * k);
    w = parameter(uniform_init<S>(rng, {cout, cin, k, k}, bound));
    b = parameter(uniform_init<S>(rng, {cout}, bound));
  }
  Var<S> operator()(const Var<S>& x) const { return conv2d(x, w, b); }
  void collect(ParamStore<S>& ps, const std::string& p) {
    ps.add(p + ".w", w);
    ps.add(p + ".b", b);
  }
};

template <class S>
struct BatchNorm2dLayer {
  Var<S> gamma, beta;
  Tensor<S> running_mean, running_var;
  S momentum = S(0.1), eps = S(1e-5);

  void init(int c) {
    gamma = parameter(Tensor<S>({c}, S(1)));
    beta = parameter(Tensor<S>({c}));
    running_mean = Tensor<S>({c});
    running_var = Tensor<S>({c}, S(1));
  }
  Var<S> operator()(const Var<S>& x, bool training, StatsCollector<S>* collector = nullptr) {
    const Shape& s = x.value().shape();
    const int N = s[0], C = s[1], M = s[2] * s[3];
    return detail::normalize_channels<S>(x, N * C, M, gamma, beta, C, &running_mean, &running_var, training,
                                         momentum, eps, collector);
  }
  void collect(ParamStore<S>& ps, const std::string& p) {
    ps.add(p + ".gamma", gamma);
    ps.add(p + ".beta", beta);
    ps.add_buffer(p + ".running_mean", &running_mean);
    ps.add_buffer(p + ".running_var", &running_var);
  }
};

template <class S>
struct Conv1dLayer {
  Var<S> w, b;

  void init(Rng& rng, int cin, int cout) {
    const double bound = 1.0 / std::sqrt((double)cin);
    w = parameter(uniform_init<S>(rng, {cout, cin}, bound));
    b = parameter(uniform_init<S>(rng, {cout}, bound));
  }
  Var<S> operator()(const Var<S>& x) const { return conv1d_1x1(x, w, b); }
  void collect(ParamStore<S>& ps, const std::string& p) {
    ps.add(p + ".w", w);
    ps.add(p + ".b", b);
  }
};

/// Batch norm over [C,L] (single point-batch): statistics per channel over L.
template <class S>
struct BatchNorm1dLayer {
  Var<S> gamma, beta;
  Tensor<S> running_mean, running_var;
  S momentum = S(0.1), eps = S(1e-5);

  void init(int c) {
    gamma = parameter(Tensor<S>({c}, S(1)));
    beta = parameter(Tensor<S>({c}));
    running_mean = Tensor<S>({c});
    running_var = Tensor<S>({c}, S(1));
  }
  Var<S> operator()(const Var<S>& x, bool training) {
    const int C = x.value().dim(0), L = x.value().dim(1);
    return detail::normalize_channels<S>(x, C, L, gamma, beta, C, &running_mean, &running_var, training,
                                         momentum, eps);
  }
  void collect(ParamStore<S>& ps, const std::string& p) {
    ps.add(p + ".gamma", gamma);
    ps.add(p + ".beta", beta);
    ps.add_buffer(p + ".running_mean", &running_mean);
    ps.add_buffer(p + ".running_var", &running_var);
  }
};

/// Instance norm over [C,L]: per-channel statistics across the point
/// dimension, no affine parameters. Running statistics are tracked so eval
/// mode uses frozen statistics and stays pointwise.
template <class S>
struct InstanceNorm1dLayer {
  Tensor<S> running_mean, running_var;
  S momentum = S(0.1), eps = S(1e-5);

  void init(int c) {
    running_mean = Tensor<S>({c});
    running_var = Tensor<S>({c}, S(1));
  }
  Var<S> operator()(const Var<S>& x, bool training) {
    const int C = x.value().dim(0), L = x.value().dim(1);
    return detail::normalize_channels<S>(x, C, L, Var<S>(), Var<S>(), C, &running_mean, &running_var, training,
                                         momentum, eps);
  }
  void collect(ParamStore<S>& ps, const std::string& p) {
    ps.add_buffer(p + ".running_mean", &running_mean);
    ps.add_buffer(p + ".running_var", &running_var);
  }
};

}  // namespace kpl::ag
