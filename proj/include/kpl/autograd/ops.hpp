#pragma once

#include "kpl/autograd/graph.hpp"

#include <cmath>
#include <vector>

namespace kpl::ag {

namespace detail {
template <class S, class Expr>
void accumulate(const std::shared_ptr<Node<S>>& n, const Expr& g) {
  if (n->requires_grad) n->ensure_grad().array() += g;
}
}  // namespace detail

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  Tensor<S> out = a.value();
  out.array() += b.value().array();
  auto an = a.node(), bn = b.node();
  return make_op<S>(std::move(out), {a, b}, [an, bn](const Tensor<S>& g) {
    detail::accumulate(an, g.array());
    detail::accumulate(bn, g.array());
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  Tensor<S> out = a.value();
  out.array() -= b.value().array();
  auto an = a.node(), bn = b.node();
  return make_op<S>(std::move(out), {a, b}, [an, bn](const Tensor<S>& g) {
    detail::accumulate(an, g.array());
    detail::accumulate(bn, (-g.array()));
  });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  Tensor<S> out = a.value();
  out.array() *= b.value().array();
  auto an = a.node(), bn = b.node();
  return make_op<S>(std::move(out), {a, b}, [an, bn](const Tensor<S>& g) {
    detail::accumulate(an, g.array() * bn->value.array());
    detail::accumulate(bn, g.array() * an->value.array());
  });
}

/// y = a*x + b, elementwise with scalar coefficients.
template <class S>
Var<S> affine(const Var<S>& x, S a, S b) {
  Tensor<S> out = x.value();
  out.array() = a * out.array() + b;
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn, a](const Tensor<S>& g) {
    detail::accumulate(xn, a * g.array());
  });
}

template <class S>
Var<S> scale(const Var<S>& x, S a) {
  return affine(x, a, S(0));
}

template <class S>
Var<S> square(const Var<S>& x) {
  Tensor<S> out = x.value();
  out.array() = out.array().square();
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn](const Tensor<S>& g) {
    detail::accumulate(xn, S(2) * g.array() * xn->value.array());
  });
}

template <class S>
Var<S> relu(const Var<S>& x) {
  Tensor<S> out = x.value();
  out.array() = out.array().max(S(0));
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn](const Tensor<S>& g) {
    detail::accumulate(xn, g.array() * (xn->value.array() > S(0)).template cast<S>());
  });
}

template <class S>
Var<S> leaky_relu(const Var<S>& x, S slope) {
  Tensor<S> out = x.value();
  out.array() = (out.array() > S(0)).select(out.array(), slope * out.array());
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn, slope](const Tensor<S>& g) {
    auto mask = (xn->value.array() > S(0)).template cast<S>();
    detail::accumulate(xn, g.array() * (mask + slope * (S(1) - mask)));
  });
}

template <class S>
Var<S> sigmoid(const Var<S>& x) {
  Tensor<S> out = x.value();
  out.array() = S(1) / (S(1) + (-out.array()).exp());
  Var<S> y = make_op<S>(std::move(out), {x}, nullptr);
  if (y.requires_grad()) {
    auto xn = x.node();
    auto yn = y.node();
    yn->backward = [xn, yn](const Tensor<S>& g) {
      auto s = yn->value.array();
      detail::accumulate(xn, g.array() * s * (S(1) - s));
    };
  }
  return y;
}

template <class S>
Var<S> tanh_act(const Var<S>& x) {
  Tensor<S> out = x.value();
  out.array() = out.array().tanh();
  Var<S> y = make_op<S>(std::move(out), {x}, nullptr);
  if (y.requires_grad()) {
    auto xn = x.node();
    auto yn = y.node();
    yn->backward = [xn, yn](const Tensor<S>& g) {
      auto t = yn->value.array();
      detail::accumulate(xn, g.array() * (S(1) - t * t));
    };
  }
  return y;
}

/// y = x + t with a non-differentiable constant tensor t.
template <class S>
Var<S> add_const(const Var<S>& x, const Tensor<S>& t) {
  Tensor<S> out = x.value();
  out.array() += t.array();
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn](const Tensor<S>& g) {
    detail::accumulate(xn, g.array());
  });
}

/// y_i = x_i - s[0] with a scalar Var broadcast over x.
template <class S>
Var<S> sub_broadcast(const Var<S>& x, const Var<S>& s) {
  Tensor<S> out = x.value();
  out.array() -= s.value()[0];
  auto xn = x.node(), sn = s.node();
  return make_op<S>(std::move(out), {x, s}, [xn, sn](const Tensor<S>& g) {
    detail::accumulate(xn, g.array());
    if (sn->requires_grad) sn->ensure_grad()[0] -= g.array().sum();
  });
}

template <class S>
Var<S> sum_all(const Var<S>& x) {
  Tensor<S> out({1}, x.value().array().sum());
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn](const Tensor<S>& g) {
    if (xn->requires_grad) xn->ensure_grad().array() += g[0];
  });
}

template <class S>
Var<S> mean_all(const Var<S>& x) {
  S inv = S(1) / (S)x.value().size();
  Tensor<S> out({1}, x.value().array().sum() * inv);
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn, inv](const Tensor<S>& g) {
    if (xn->requires_grad) xn->ensure_grad().array() += g[0] * inv;
  });
}

/// Euclidean norm per row of an [N,D] input -> [N]. Zero rows get a zero
/// subgradient so coincident point pairs do not produce NaNs.
template <class S>
Var<S> rowwise_norm(const Var<S>& x) {
  const int n = x.value().dim(0), d = x.value().dim(1);
  Tensor<S> out({n});
  auto xm = x.value().mat(n, d);
  for (int i = 0; i < n; ++i) out[i] = xm.row(i).norm();
  Var<S> y = make_op<S>(std::move(out), {x}, nullptr);
  if (y.requires_grad()) {
    auto xn = x.node();
    auto yn = y.node();
    yn->backward = [xn, yn, n, d](const Tensor<S>& g) {
      if (!xn->requires_grad) return;
      auto xm = xn->value.mat(n, d);
      auto gm = xn->ensure_grad().mat(n, d);
      for (int i = 0; i < n; ++i) {
        S norm = yn->value[i];
        if (norm > S(1e-12)) gm.row(i) += (g[i] / norm) * xm.row(i);
      }
    };
  }
  return y;
}

/// Rows scaled to unit Euclidean norm; zero rows pass through unchanged.
template <class S>
Var<S> l2_normalize_rows(const Var<S>& x) {
  const int n = x.value().dim(0), d = x.value().dim(1);
  Tensor<S> out({n, d});
  Tensor<S> norms({n});
  auto xm = x.value().mat(n, d);
  auto om = out.mat(n, d);
  for (int i = 0; i < n; ++i) {
    S norm = xm.row(i).norm();
    norms[i] = norm;
    om.row(i) = norm > S(1e-12) ? (xm.row(i) / norm).eval() : xm.row(i).eval();
  }
  Var<S> y = make_op<S>(std::move(out), {x}, nullptr);
  if (y.requires_grad()) {
    auto xn = x.node();
    auto yn = y.node();
    yn->backward = [xn, yn, norms, n, d](const Tensor<S>& g) {
      if (!xn->requires_grad) return;
      auto ym = yn->value.mat(n, d);
      auto gm = g.mat(n, d);
      auto xg = xn->ensure_grad().mat(n, d);
      for (int i = 0; i < n; ++i) {
        if (norms[i] <= S(1e-12)) {
          xg.row(i) += gm.row(i);
          continue;
        }
        S dot = ym.row(i).dot(gm.row(i));
        xg.row(i) += (gm.row(i) - dot * ym.row(i)) / norms[i];
      }
    };
  }
  return y;
}

/// out[k] = x[idx[k]] over rows of an [N,D] input.
template <class S>
Var<S> gather_rows(const Var<S>& x, std::vector<int> idx) {
  const int n = x.value().dim(0), d = x.value().dim(1);
  const int m = (int)idx.size();
  Tensor<S> out({m, d});
  auto xm = x.value().mat(n, d);
  auto om = out.mat(m, d);
  for (int k = 0; k < m; ++k) om.row(k) = xm.row(idx[(size_t)k]);
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn, idx = std::move(idx), n, d, m](const Tensor<S>& g) {
    if (!xn->requires_grad) return;
    auto gm = g.mat(m, d);
    auto xg = xn->ensure_grad().mat(n, d);
    for (int k = 0; k < m; ++k) xg.row(idx[(size_t)k]) += gm.row(k);
  });
}

template <class S>
Var<S> transpose2d(const Var<S>& x) {
  const int r = x.value().dim(0), c = x.value().dim(1);
  Tensor<S> out({c, r});
  out.mat(c, r) = x.value().mat(r, c).transpose();
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn, r, c](const Tensor<S>& g) {
    if (xn->requires_grad) xn->ensure_grad().mat(r, c) += g.mat(c, r).transpose();
  });
}

/// Stacks [r_i, C] blocks vertically.
template <class S>
Var<S> vstack(const std::vector<Var<S>>& parts) {
  const int c = parts.at(0).value().dim(1);
  int rows = 0;
  for (const auto& p : parts) rows += p.value().dim(0);
  Tensor<S> out({rows, c});
  auto om = out.mat(rows, c);
  int r0 = 0;
  for (const auto& p : parts) {
    const int r = p.value().dim(0);
    om.middleRows(r0, r) = p.value().mat(r, c);
    r0 += r;
  }
  Var<S> y(std::move(out), false);
  bool need = grad_mode();
  if (need) {
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    need = any;
  }
  if (need) {
    auto node = y.node();
    node->requires_grad = true;
    std::vector<std::shared_ptr<Node<S>>> pn;
    for (const auto& p : parts) pn.push_back(p.node());
    node->parents = pn;
    node->backward = [pn, rows, c](const Tensor<S>& g) {
      auto gm = g.mat(rows, c);
      int r0 = 0;
      for (auto& n : pn) {
        const int r = n->value.dim(0);
        if (n->requires_grad) n->ensure_grad().mat(r, c) += gm.middleRows(r0, r);
        r0 += r;
      }
    };
  }
  return y;
}

/// Same data, new shape.
template <class S>
Var<S> reshape(const Var<S>& x, Shape s) {
  Tensor<S> out = x.value().reshaped(s);
  auto xn = x.node();
  return make_op<S>(std::move(out), {x}, [xn](const Tensor<S>& g) {
    detail::accumulate(xn, g.array());
  });
}

}  // namespace kpl::ag
