#pragma once

#include "kpl/autograd/ops.hpp"
#include "kpl/core/rng.hpp"

#include <functional>
#include <vector>

namespace kpl::testutil {

/// Central finite-difference gradient check. `build` must construct a fresh
/// graph over the given leaf Vars and return a scalar. Returns the worst
/// relative error across all leaf elements.
template <class S>
double gradcheck(const std::function<ag::Var<S>()>& build, std::vector<ag::Var<S>> leaves, double h = 1e-5) {
  for (auto& leaf : leaves) {
    leaf.zero_grad();
  }
  ag::Var<S> loss = build();
  loss.backward();
  std::vector<Tensor<S>> analytic;
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());

  double worst = 0.0;
  ag::NoGradGuard ng;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& t = leaves[li].value();
    for (int64_t i = 0; i < t.size(); ++i) {
      const S orig = t[i];
      t[i] = orig + (S)h;
      const double fp = (double)build().value()[0];
      t[i] = orig - (S)h;
      const double fm = (double)build().value()[0];
      t[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = (double)analytic[li][i];
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

template <class S>
Tensor<S> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<S> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = (S)rng.uniform(lo, hi);
  return t;
}

}  // namespace kpl::testutil
