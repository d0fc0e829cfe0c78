#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kpl/ionet/io_net.hpp"
#include "test_util.hpp"

using namespace kpl;

namespace {

KeypointSet<double> make_set(Rng& rng, int n, int d, ImageSize size) {
  KeypointSet<double> kps;
  kps.locations.resize(n, 2);
  kps.scores.resize(n);
  kps.descriptors.resize(n, d);
  for (int i = 0; i < n; ++i) {
    kps.locations(i, 0) = rng.uniform(0, size.width - 1);
    kps.locations(i, 1) = rng.uniform(0, size.height - 1);
    kps.scores[i] = rng.uniform();
    for (int j = 0; j < d; ++j) kps.descriptors(i, j) = rng.normal();
    kps.descriptors.row(i).normalize();
  }
  return kps;
}

}  // namespace

TEST_CASE("forward output shape is one score per pair") {
  Rng rng(1);
  IoNetConfig cfg;
  IoNet<double> net(cfg, rng);
  for (int n : {1, 17, 300}) {
    ag::Var<double> x(testutil::random_tensor<double>(rng, {5, n}));
    auto r = net.forward(x, true);
    CHECK(r.shape() == Shape{n});
  }
}

TEST_CASE("permutation equivariance and duplication") {
  Rng rng(2);
  IoNet<double> net(IoNetConfig{}, rng);
  const int n = 12;
  Tensor<double> x = testutil::random_tensor<double>(rng, {5, n});
  auto r = net.forward(ag::constant(x), true);

  SUBCASE("reversing pair order reverses outputs") {
    Tensor<double> rev({5, n});
    for (int c = 0; c < 5; ++c)
      for (int i = 0; i < n; ++i) rev[c * n + i] = x[c * n + (n - 1 - i)];
    auto rr = net.forward(ag::constant(rev), true);
    for (int i = 0; i < n; ++i) CHECK(rr.value()[i] == doctest::Approx(r.value()[n - 1 - i]).epsilon(1e-12));
  }
  SUBCASE("duplicating every pair duplicates outputs") {
    Tensor<double> dup({5, 2 * n});
    for (int c = 0; c < 5; ++c)
      for (int i = 0; i < n; ++i) {
        dup[c * 2 * n + i] = x[c * n + i];
        dup[c * 2 * n + n + i] = x[c * n + i];
      }
    auto rd = net.forward(ag::constant(dup), true);
    for (int i = 0; i < n; ++i) {
      CHECK(rd.value()[i] == doctest::Approx(r.value()[i]).epsilon(1e-12));
      CHECK(rd.value()[n + i] == doctest::Approx(r.value()[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("frozen statistics make eval mode pointwise") {
  Rng rng(3);
  IoNet<double> net(IoNetConfig{}, rng);
  const int n = 10;
  Tensor<double> x = testutil::random_tensor<double>(rng, {5, n});
  net.forward(ag::constant(x), true);  // populate running statistics
  auto full = net.forward(ag::constant(x), false);
  // drop pair 0: the rest must be unchanged
  Tensor<double> rest({5, n - 1});
  for (int c = 0; c < 5; ++c)
    for (int i = 1; i < n; ++i) rest[c * (n - 1) + i - 1] = x[c * n + i];
  auto r = net.forward(ag::constant(rest), false);
  for (int i = 0; i < n - 1; ++i) CHECK(r.value()[i] == doctest::Approx(full.value()[i + 1]).epsilon(1e-12));
}

TEST_CASE("pair selection and labels") {
  Rng rng(4);
  const ImageSize size{96, 128};

  SUBCASE("descriptor-space nearest neighbor, lowest scores mined first") {
    KeypointSet<double> src = make_set(rng, 6, 8, size);
    KeypointSet<double> tgt = make_set(rng, 5, 8, size);
    // make target 3 the unambiguous match of source 2
    tgt.descriptors.row(3) = src.descriptors.row(2);
    src.scores.setConstant(0.5);
    src.scores[2] = 0.01;  // lowest score -> first mined pair
    auto [si, ti] = select_io_pairs<double>(src, tgt, 3);
    CHECK(si.size() == 3);
    CHECK(si[0] == 2);
    CHECK(ti[0] == 3);
  }
  SUBCASE("K larger than the set uses all pairs") {
    KeypointSet<double> src = make_set(rng, 4, 8, size);
    KeypointSet<double> tgt = make_set(rng, 4, 8, size);
    auto [si, ti] = select_io_pairs<double>(src, tgt, 300);
    CHECK(si.size() == 4);
  }
  SUBCASE("labels follow the sign rule with boundary counted as outlier") {
    Points<double> warped(3, 2), target(3, 2);
    warped << 0, 0, 0, 0, 0, 0;
    target << 0, 0, 10, 0, 4, 0;
    std::vector<int> idx = {0, 1, 2};
    auto labels = io_labels<double>(warped, target, idx, idx, 4.0);
    CHECK(labels[0] == -1.0);  // distance 0 < 4
    CHECK(labels[1] == 1.0);   // distance 10 > 4
    CHECK(labels[2] == 1.0);   // distance 4: sign(0) := +1
  }
}

TEST_CASE("build_pairs assembles normalized rows") {
  Rng rng(5);
  const ImageSize size{96, 128};
  KeypointSet<double> src = make_set(rng, 10, 16, size);
  KeypointSet<double> tgt = make_set(rng, 10, 16, size);
  auto h = Homography<double>::identity();
  auto batch = build_pairs<double>(src, tgt, h, 7, 4.0, size);
  CHECK(batch.count() == 7);
  CHECK(batch.rows.shape() == Shape{5, 7});
  auto rm = batch.rows.mat(5, 7);
  for (int p = 0; p < 7; ++p) {
    for (int r = 0; r < 4; ++r) {
      CHECK(rm(r, p) >= -1.0);
      CHECK(rm(r, p) <= 1.0);
    }
    const int i = batch.src_idx[(size_t)p], j = batch.tgt_idx[(size_t)p];
    CHECK(rm(4, p) == doctest::Approx((src.descriptors.row(i) - tgt.descriptors.row(j)).norm()));
    // identity homography: label determined by plain distance
    const double d = (src.locations.row(i) - tgt.locations.row(j)).norm();
    CHECK(batch.labels[(size_t)p] == (d - 4.0 < 0 ? -1.0 : 1.0));
  }
}

TEST_CASE("io_loss oracle values") {
  SUBCASE("exact predictions give zero") {
    Tensor<double> r({3});
    r[0] = -1;
    r[1] = 1;
    r[2] = -1;
    auto loss = io_loss<double>(ag::constant(r), {-1.0, 1.0, -1.0});
    CHECK(loss.value()[0] == 0.0);
  }
  SUBCASE("single pair, r=0, target -1 gives one half") {
    auto loss = io_loss<double>(ag::constant(Tensor<double>({1})), {-1.0});
    CHECK(loss.value()[0] == doctest::Approx(0.5));
  }
  SUBCASE("non-negative, zero only at the targets") {
    Rng rng(6);
    for (int t = 0; t < 20; ++t) {
      Tensor<double> r = testutil::random_tensor<double>(rng, {5}, -2.0, 2.0);
      auto loss = io_loss<double>(ag::constant(r), {-1, 1, -1, 1, 1});
      CHECK(loss.value()[0] >= 0.0);
    }
  }
}

TEST_CASE("gradients reach the input pairs through the network") {
  Rng rng(7);
  IoNetConfig cfg;
  cfg.channels = 32;  // small but structurally identical
  IoNet<double> net(cfg, rng);
  ag::Var<double> x(testutil::random_tensor<double>(rng, {5, 6}), true);
  std::vector<double> labels = {-1, 1, 1, -1, 1, -1};
  const double err = testutil::gradcheck<double>(
      [&] { return io_loss<double>(net.forward(x, true), labels); }, {x});
  CHECK(err < 1e-3);
  // and they are non-trivial
  x.zero_grad();
  io_loss<double>(net.forward(x, true), labels).backward();
  CHECK(x.grad().array().abs().maxCoeff() > 0.0);
}
