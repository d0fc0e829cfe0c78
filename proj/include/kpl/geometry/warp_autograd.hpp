#pragma once

#include "kpl/autograd/graph.hpp"
#include "kpl/geometry/homography.hpp"

namespace kpl::ag {

/// Differentiable projective warp of [N,2] pixel locations. Rows whose
/// denominator vanishes are parked far out of bounds with zero gradient;
/// callers drop them via in_bounds masks before building losses.
template <class S>
Var<S> warp_points(const Var<S>& locs, const Homography<S>& h) {
  const int n = locs.value().dim(0);
  Tensor<S> out({n, 2});
  auto valid = std::make_shared<std::vector<char>>((size_t)n, (char)1);
  auto wbuf = std::make_shared<std::vector<S>>((size_t)n);
  auto lm = locs.value().mat(n, 2);
  auto om = out.mat(n, 2);
  for (int i = 0; i < n; ++i) {
    const S u = lm(i, 0), v = lm(i, 1);
    const S x = h.m(0, 0) * u + h.m(0, 1) * v + h.m(0, 2);
    const S y = h.m(1, 0) * u + h.m(1, 1) * v + h.m(1, 2);
    const S w = h.m(2, 0) * u + h.m(2, 1) * v + h.m(2, 2);
    if (std::abs((double)w) < 1e-8) {
      (*valid)[(size_t)i] = 0;
      om(i, 0) = S(-1e9);
      om(i, 1) = S(-1e9);
      continue;
    }
    (*wbuf)[(size_t)i] = w;
    om(i, 0) = x / w;
    om(i, 1) = y / w;
  }
  auto ln = locs.node();
  Homography<S> hc = h;
  Var<S> yv = make_op<S>(std::move(out), {locs}, nullptr);
  if (yv.requires_grad()) {
    auto yn = yv.node();
    yn->backward = [ln, yn, valid, wbuf, hc, n](const Tensor<S>& g) {
      if (!ln->requires_grad) return;
      auto gm = g.mat(n, 2);
      auto om = yn->value.mat(n, 2);
      auto lg = ln->ensure_grad().mat(n, 2);
      for (int i = 0; i < n; ++i) {
        if (!(*valid)[(size_t)i]) continue;
        const S w = (*wbuf)[(size_t)i];
        const S us = om(i, 0), vs = om(i, 1);
        // d(u*)/du = (h00 - u* h20)/w etc.
        lg(i, 0) += (gm(i, 0) * (hc.m(0, 0) - us * hc.m(2, 0)) + gm(i, 1) * (hc.m(1, 0) - vs * hc.m(2, 0))) / w;
        lg(i, 1) += (gm(i, 0) * (hc.m(0, 1) - us * hc.m(2, 1)) + gm(i, 1) * (hc.m(1, 1) - vs * hc.m(2, 1))) / w;
      }
    };
  }
  return yv;
}

}  // namespace kpl::ag
