#pragma once

#include "kpl/autograd/nn.hpp"

namespace kpl {

/// Adaptive-moment optimizer over named parameters. Parameters that have
/// never received a gradient are left untouched (their moment state stays
/// empty), so unused submodules do not decay.
template <class S>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::pair<std::string, ag::Var<S>>> params, S lr) : params_(std::move(params)), lr_(lr) {
    slots_.resize(params_.size());
  }

  S lr() const { return lr_; }
  void set_lr(S lr) { lr_ = lr; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      if (!p.has_grad()) continue;
      Slot& s = slots_[i];
      if (s.t == 0) {
        s.m = Tensor<S>(p.value().shape());
        s.v = Tensor<S>(p.value().shape());
      }
      ++s.t;
      auto g = p.grad().array();
      s.m.array() = beta1_ * s.m.array() + (S(1) - beta1_) * g;
      s.v.array() = beta2_ * s.v.array() + (S(1) - beta2_) * g.square();
      const S c1 = S(1) - std::pow(beta1_, (S)s.t);
      const S c2 = S(1) - std::pow(beta2_, (S)s.t);
      p.value().array() -= lr_ * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
    }
  }

  /// Moment state access for checkpointing (name -> m/v/t).
  struct Slot {
    Tensor<S> m, v;
    int64_t t = 0;
  };
  const std::vector<std::pair<std::string, ag::Var<S>>>& params() const { return params_; }
  std::vector<Slot>& slots() { return slots_; }

 private:
  std::vector<std::pair<std::string, ag::Var<S>>> params_;
  std::vector<Slot> slots_;
  S lr_ = S(1e-3);
  S beta1_ = S(0.9), beta2_ = S(0.999), eps_ = S(1e-8);
};

}  // namespace kpl
