#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kpl/losses/losses.hpp"
#include "test_util.hpp"

using namespace kpl;
using ag::Var;

namespace {
Var<double> pts_var(std::initializer_list<double> vals, bool grad = false) {
  const int n = (int)vals.size() / 2;
  Tensor<double> t({n, 2});
  int i = 0;
  for (double v : vals) t[i++] = v;
  return Var<double>(t, grad);
}

Tensor<double> unit_rows(Rng& rng, int n, int d) {
  Tensor<double> t({n, d});
  auto m = t.mat(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
    m.row(i).normalize();
  }
  return t;
}
}  // namespace

TEST_CASE("associate") {
  SUBCASE("identical sets pair one-to-one with zero distances") {
    Points<double> p(3, 2);
    p << 1, 2, 10, 4, 5, 9;
    auto a = associate<double>(p, p, 4.0);
    CHECK(a.count() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(a.src[i] == i);
      CHECK(a.tgt[i] == i);
      CHECK(a.dist[i] == 0.0);
    }
    CHECK(a.mean_dist == 0.0);
  }
  SUBCASE("threshold excludes distant pairs") {
    Points<double> s(1, 2), t(1, 2);
    s << 0, 0;
    t << 10, 0;
    CHECK(associate<double>(s, t, 4.0).empty());
  }
  SUBCASE("nearest target wins: (0,0) vs {(1,0),(3,0)}") {
    Points<double> s(1, 2), t(2, 2);
    s << 0, 0;
    t << 1, 0, 3, 0;
    auto a = associate<double>(s, t, 4.0);
    REQUIRE(a.count() == 1);
    CHECK(a.tgt[0] == 0);
    CHECK(a.dist[0] == doctest::Approx(1.0));
  }
  SUBCASE("equidistant targets break to the lower index") {
    Points<double> s(1, 2), t(2, 2);
    s << 0, 0;
    t << 2, 0, -2, 0;
    CHECK(associate<double>(s, t, 4.0).tgt[0] == 0);
  }
  SUBCASE("out-of-view warped points are excluded when bounds are given") {
    Points<double> s(2, 2), t(2, 2);
    s << -5, 0, 1, 1;
    t << -5, 0, 1, 1;
    auto a = associate<double>(s, t, 4.0, ImageSize{16, 16});
    CHECK(a.count() == 1);
    CHECK(a.src[0] == 1);
  }
  SUBCASE("permutation of targets changes indices, not the pairing") {
    Rng rng(1);
    Points<double> s(8, 2), t(8, 2);
    for (int i = 0; i < 8; ++i) {
      s(i, 0) = rng.uniform(0, 50);
      s(i, 1) = rng.uniform(0, 50);
      t(i, 0) = s(i, 0) + rng.uniform(-1, 1);
      t(i, 1) = s(i, 1) + rng.uniform(-1, 1);
    }
    auto a = associate<double>(s, t, 4.0);
    Points<double> tp(8, 2);
    for (int i = 0; i < 8; ++i) tp.row(i) = t.row(7 - i);
    auto b = associate<double>(s, tp, 4.0);
    REQUIRE(a.count() == b.count());
    for (int k = 0; k < a.count(); ++k) {
      CHECK(a.src[k] == b.src[k]);
      CHECK(b.tgt[k] == 7 - a.tgt[k]);
      CHECK(a.dist[k] == doctest::Approx(b.dist[k]));
    }
  }
}

TEST_CASE("loc_loss oracle values") {
  SUBCASE("zero distances give zero") {
    auto w = pts_var({1, 1, 5, 5});
    Association<double> a;
    a.src = {0, 1};
    a.tgt = {0, 1};
    a.dist = {0, 0};
    CHECK(loc_loss<double>(w, w, a).value()[0] == 0.0);
  }
  SUBCASE("pairs at distances 1 and 3 mean-reduce to 2") {
    auto w = pts_var({0, 0, 10, 0});
    auto t = pts_var({1, 0, 13, 0});
    Association<double> a;
    a.src = {0, 1};
    a.tgt = {0, 1};
    CHECK(loc_loss<double>(w, t, a).value()[0] == doctest::Approx(2.0));
  }
  SUBCASE("gradient w.r.t. endpoints matches finite differences") {
    Rng rng(2);
    Var<double> w(testutil::random_tensor<double>(rng, {5, 2}, 0.0, 30.0), true);
    Var<double> t(testutil::random_tensor<double>(rng, {5, 2}, 0.0, 30.0), true);
    Association<double> a;
    a.src = {0, 1, 2, 3, 4};
    a.tgt = {1, 0, 2, 4, 3};
    CHECK(testutil::gradcheck<double>([&] { return loc_loss<double>(w, t, a); }, {w, t}) < 1e-6);
  }
}

TEST_CASE("score_loss oracle values") {
  auto scores = [](std::initializer_list<double> v) {
    Tensor<double> t({(int)v.size(), 1});
    int i = 0;
    for (double x : v) t[i++] = x;
    return Var<double>(t);
  };

  SUBCASE("equal scores at mean distance vanish") {
    auto w = pts_var({0, 0, 10, 0});
    auto t = pts_var({2, 0, 12, 0});  // both distances 2 = dbar
    auto l = score_loss<double>(scores({0.7, 0.7}), scores({0.7, 0.7}), w, t, {{0, 1}, {0, 1}, {2, 2}, 2});
    CHECK(l.value()[0] == doctest::Approx(0.0));
  }
  SUBCASE("distances {1,3} with all scores 0.5: rank terms cancel") {
    auto w = pts_var({0, 0, 10, 0});
    auto t = pts_var({1, 0, 13, 0});
    auto l = score_loss<double>(scores({0.5, 0.5}), scores({0.5, 0.5}), w, t, {{0, 1}, {0, 1}, {1, 3}, 2});
    CHECK(l.value()[0] == doctest::Approx(0.0));
  }
  SUBCASE("score gap at mean distance leaves only the squared term") {
    auto w = pts_var({0, 0});
    auto t = pts_var({1, 0});
    auto l = score_loss<double>(scores({0.8}), scores({0.6}), w, t, {{0}, {0}, {1}, 1});
    CHECK(l.value()[0] == doctest::Approx(0.04));
  }
  SUBCASE("gradients flow to scores and both location sets") {
    Rng rng(3);
    Var<double> w(testutil::random_tensor<double>(rng, {4, 2}, 0.0, 20.0), true);
    Var<double> t(testutil::random_tensor<double>(rng, {4, 2}, 0.0, 20.0), true);
    Var<double> s(testutil::random_tensor<double>(rng, {4, 1}, 0.1, 0.9), true);
    Var<double> sh(testutil::random_tensor<double>(rng, {4, 1}, 0.1, 0.9), true);
    Association<double> a;
    a.src = {0, 1, 2, 3};
    a.tgt = {0, 1, 2, 3};
    CHECK(testutil::gradcheck<double>([&] { return score_loss<double>(s, sh, w, t, a); }, {s, sh, w, t}) < 1e-5);
  }
}

TEST_CASE("triplet_loss") {
  Rng rng(4);
  const double m = 0.2;

  SUBCASE("anchor equals positive, far negative beyond margin: zero") {
    Tensor<double> a = unit_rows(rng, 2, 8);
    Var<double> anchors(a), positives(a);
    // pool: two rows orthogonal-ish to anchors, far away spatially
    Var<double> pool(unit_rows(rng, 2, 8));
    Points<double> plocs(2, 2), poolocs(2, 2);
    plocs << 0, 0, 40, 40;
    poolocs << 100, 100, 140, 140;
    auto l = triplet_loss<double>(anchors, positives, pool, plocs, poolocs, m, 8.0);
    REQUIRE(l.has_value());
    const double dneg_min =
        std::min((anchors.value().mat(2, 8).row(0) - pool.value().mat(2, 8).row(0)).norm(),
                 (anchors.value().mat(2, 8).row(0) - pool.value().mat(2, 8).row(1)).norm());
    if (dneg_min >= m) CHECK(l->value()[0] == 0.0);
  }
  SUBCASE("hinge arithmetic: 0.1 - 0.15 + 0.2 = 0.15") {
    // construct unit vectors with exact pairwise distances 0.1 and 0.15
    auto with_distance = [](const Eigen::VectorXd& u, double dist) {
      // rotate u toward an orthogonal vector by angle giving chord length dist
      Eigen::VectorXd v = Eigen::VectorXd::Zero(u.size());
      v[1] = 1.0;
      v -= v.dot(u) * u;
      v.normalize();
      const double theta = 2.0 * std::asin(dist / 2.0);
      return (std::cos(theta) * u + std::sin(theta) * v).eval();
    };
    Eigen::VectorXd u = Eigen::VectorXd::Zero(8);
    u[0] = 1.0;
    Tensor<double> at({1, 8}), pt({1, 8}), nt({1, 8});
    Eigen::VectorXd pos = with_distance(u, 0.1), neg = with_distance(u, 0.15);
    for (int j = 0; j < 8; ++j) {
      at[j] = u[j];
      pt[j] = pos[j];
      nt[j] = neg[j];
    }
    Points<double> ploc(1, 2), nloc(1, 2);
    ploc << 0, 0;
    nloc << 50, 50;
    auto l = triplet_loss<double>(Var<double>(at), Var<double>(pt), Var<double>(nt), ploc, nloc, m, 8.0);
    REQUIRE(l.has_value());
    CHECK(l->value()[0] == doctest::Approx(0.15));
  }
  SUBCASE("identical anchors sharing one far negative get symmetric losses") {
    Tensor<double> a = unit_rows(rng, 1, 8);
    Tensor<double> both({2, 8});
    both.mat(2, 8).row(0) = a.mat(1, 8).row(0);
    both.mat(2, 8).row(1) = a.mat(1, 8).row(0);
    Var<double> anchors(both), positives(both);
    Var<double> pool(unit_rows(rng, 1, 8));
    Points<double> plocs(2, 2), poolocs(1, 2);
    plocs << 0, 0, 0, 0;
    poolocs << 90, 90;
    auto l = triplet_loss<double>(anchors, positives, pool, plocs, poolocs, m, 8.0);
    REQUIRE(l.has_value());
    // loss is a mean over two identical per-anchor terms
    const double per = std::max(0.0, 0.0 - (anchors.value().mat(2, 8).row(0) - pool.value().mat(1, 8).row(0)).norm() + m);
    CHECK(l->value()[0] == doctest::Approx(per));
  }
  SUBCASE("anchors without a valid negative are skipped; none -> nullopt") {
    Var<double> anchors(unit_rows(rng, 2, 4)), positives(unit_rows(rng, 2, 4));
    Var<double> pool(unit_rows(rng, 1, 4));
    Points<double> plocs(2, 2), poolocs(1, 2);
    plocs << 0, 0, 1, 1;
    poolocs << 2, 2;  // within c of both positives
    CHECK_FALSE(triplet_loss<double>(anchors, positives, pool, plocs, poolocs, m, 8.0).has_value());
  }
  SUBCASE("per-anchor bound and gradients") {
    Var<double> anchors(unit_rows(rng, 6, 16), true);
    Var<double> positives(unit_rows(rng, 6, 16), true);
    Var<double> pool(unit_rows(rng, 9, 16), true);
    Points<double> plocs(6, 2), poolocs(9, 2);
    for (int i = 0; i < 6; ++i) plocs.row(i) << 10.0 * i, 0.0;
    for (int j = 0; j < 9; ++j) poolocs.row(j) << 10.0 * j + 100.0, 0.0;
    auto l = triplet_loss<double>(anchors, positives, pool, plocs, poolocs, m, 8.0);
    REQUIRE(l.has_value());
    CHECK(l->value()[0] <= m + 2.0);
    CHECK(l->value()[0] >= 0.0);
    const double err = testutil::gradcheck<double>(
        [&] { return *triplet_loss<double>(anchors, positives, pool, plocs, poolocs, m, 8.0); },
        {anchors, positives, pool});
    CHECK(err < 1e-3);
  }
}

TEST_CASE("total_loss weighting and gates") {
  auto scalar = [](double v) { return Var<double>(Tensor<double>({1}, v)); };
  LossConfig cfg;  // alpha 1, beta 2, lambda 1

  SUBCASE("all zero stays zero") {
    CHECK(total_loss<double>(scalar(0), scalar(0), scalar(0), scalar(0), cfg).value()[0] == 0.0);
  }
  SUBCASE("unit components weigh to 5") {
    CHECK(total_loss<double>(scalar(1), scalar(1), scalar(1), scalar(1), cfg).value()[0] == doctest::Approx(5.0));
  }
  SUBCASE("io gate removes the io contribution") {
    LossGates gates;
    gates.io = false;
    CHECK(total_loss<double>(scalar(1), scalar(1), scalar(1), scalar(1), cfg, gates).value()[0] ==
          doctest::Approx(4.0));
  }
  SUBCASE("desc gate removes the descriptor contribution") {
    LossGates gates;
    gates.desc = false;
    CHECK(total_loss<double>(scalar(1), scalar(1), scalar(1), scalar(1), cfg, gates).value()[0] ==
          doctest::Approx(3.0));
  }
  SUBCASE("doubling beta doubles the descriptor term's contribution") {
    LossConfig c2 = cfg;
    c2.beta = 4.0;
    const double base = total_loss<double>(scalar(1), scalar(0), scalar(1), scalar(1), cfg).value()[0];
    const double with_desc = total_loss<double>(scalar(1), scalar(1), scalar(1), scalar(1), cfg).value()[0];
    const double with_desc2 = total_loss<double>(scalar(1), scalar(1), scalar(1), scalar(1), c2).value()[0];
    CHECK(with_desc2 - base == doctest::Approx(2.0 * (with_desc - base)));
  }
}
