#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kpl/model/keypoint_net.hpp"
#include "test_util.hpp"

using namespace kpl;

namespace {
Image<float> noise_image(Rng& rng, int h, int w) {
  Image<float> img({3, h, w});
  for (int64_t i = 0; i < img.size(); ++i) img[i] = (float)rng.uniform();
  return img;
}
}  // namespace

TEST_CASE("forward shape contract") {
  Rng rng(1);
  KeypointNetConfig cfg;
  KeypointNet<float> net(cfg, rng);

  SUBCASE("240x320") {
    Rng drop(0);
    ag::NoGradGuard ng;
    Image<float> img = noise_image(rng, 240, 320);
    auto out = net.forward(img, false, drop);
    CHECK(out.score.shape() == Shape{1, 1, 30, 40});
    CHECK(out.offsets.shape() == Shape{1, 2, 30, 40});
    CHECK(out.descriptors.shape() == Shape{1, 256, 60, 80});
    // offsets strictly inside (-1,1), scores in [0,1]
    CHECK(out.offsets.value().array().abs().maxCoeff() < 1.0f);
    CHECK(out.score.value().array().minCoeff() >= 0.0f);
    CHECK(out.score.value().array().maxCoeff() <= 1.0f);
  }
  SUBCASE("upsampling disabled gives cell-resolution descriptors") {
    KeypointNetConfig c2;
    c2.descriptor_upsample = false;
    Rng r2(1);
    KeypointNet<float> net2(c2, r2);
    Rng drop(0);
    ag::NoGradGuard ng;
    auto out = net2.forward(noise_image(rng, 80, 96), false, drop);
    CHECK(out.descriptors.shape() == Shape{1, 256, 10, 12});
  }
  SUBCASE("indivisible input size is rejected") {
    Rng drop(0);
    Image<float> img({3, 100, 130});
    CHECK_THROWS_WITH_AS(net.forward(img, false, drop), doctest::Contains("not divisible"),
                         std::invalid_argument);
  }
}

TEST_CASE("forward is deterministic in inference mode") {
  Rng rng(2);
  KeypointNetConfig cfg;
  KeypointNet<float> net(cfg, rng);
  Image<float> img = noise_image(rng, 48, 64);
  Rng d1(1), d2(2);
  ag::NoGradGuard ng;
  auto a = net.forward(img, false, d1);
  auto b = net.forward(img, false, d2);
  CHECK((a.score.value().array() == b.score.value().array()).all());
  CHECK((a.descriptors.value().array() == b.descriptors.value().array()).all());
}

TEST_CASE("cell_to_image mapping") {
  KeypointNetConfig cfg;  // cell 8, ratio 2

  SUBCASE("zero offset lands on the cell center") {
    ag::Var<double> off(Tensor<double>({1, 2, 2, 3}));
    auto locs = cell_to_image(off, cfg);
    auto lm = locs.value().mat(6, 2);
    CHECK(lm(0, 0) == 3.5);
    CHECK(lm(0, 1) == 3.5);
    CHECK(lm(5, 0) == 8 * 2 + 3.5);
    CHECK(lm(5, 1) == 8 * 1 + 3.5);
  }
  SUBCASE("ratio 2: unit offset reaches 10.5 from a center at 3.5") {
    Tensor<double> t({1, 2, 1, 1});
    t[0] = 1.0;  // u offset
    t[1] = 0.0;
    auto locs = cell_to_image(ag::Var<double>(t), cfg);
    CHECK(locs.value()[0] == doctest::Approx(10.5));  // 3.5 + 2*7/2
    CHECK(locs.value()[1] == doctest::Approx(3.5));
  }
  SUBCASE("ratio clamped to 1 without cross-border: unit offset hits the cell border") {
    KeypointNetConfig c2;
    c2.cross_border = false;
    Tensor<double> t({1, 2, 1, 1});
    t[0] = 1.0;
    auto locs = cell_to_image(ag::Var<double>(t), c2);
    CHECK(locs.value()[0] == doctest::Approx(7.0));  // center + 3.5
  }
  SUBCASE("gradient is exactly ratio*(cell-1)/2") {
    Rng rng(3);
    ag::Var<double> off(testutil::random_tensor<double>(rng, {1, 2, 2, 2}, -0.9, 0.9), true);
    auto locs = cell_to_image(off, cfg);
    ag::sum_all(locs).backward();
    for (int64_t i = 0; i < off.grad().size(); ++i) CHECK(off.grad()[i] == doctest::Approx(7.0));
  }
  SUBCASE("offsets in (-1,1) stay within the cell when ratio <= 1") {
    KeypointNetConfig c2;
    c2.cross_border = false;
    Rng rng(4);
    ag::Var<double> off(testutil::random_tensor<double>(rng, {1, 2, 3, 4}, -0.999, 0.999));
    auto locs = cell_to_image(off, c2);
    auto lm = locs.value().mat(12, 2);
    for (int cy = 0; cy < 3; ++cy)
      for (int cx = 0; cx < 4; ++cx) {
        const double u = lm(cy * 4 + cx, 0), v = lm(cy * 4 + cx, 1);
        CHECK(u >= 8.0 * cx);
        CHECK(u <= 8.0 * cx + 7.0);
        CHECK(v >= 8.0 * cy);
        CHECK(v <= 8.0 * cy + 7.0);
      }
  }
}

TEST_CASE("sample_descriptors") {
  Rng rng(5);
  // descriptor map with stride 4 over a 16x20 image -> grid 4x5
  ag::Var<double> map(testutil::random_tensor<double>(rng, {1, 6, 4, 5}), true);
  const ImageSize img{16, 20};

  SUBCASE("location at a grid node returns that node's normalized vector") {
    // node (row 2, col 3) sits at pixel (4*3+1.5, 4*2+1.5)
    Tensor<double> loc({1, 2});
    loc[0] = 13.5;
    loc[1] = 9.5;
    auto d = sample_descriptors(map, ag::constant(loc), img);
    Eigen::VectorXd node(6);
    for (int c = 0; c < 6; ++c) node[c] = map.value()[(c * 4 + 2) * 5 + 3];
    node.normalize();
    for (int c = 0; c < 6; ++c) CHECK(d.value()[c] == doctest::Approx(node[c]));
  }
  SUBCASE("constant map gives a constant output, clamped corners included") {
    ag::Var<double> cmap(Tensor<double>({1, 3, 4, 5}, 0.5));
    Tensor<double> locs({3, 2});
    locs.mat(3, 2) << 0, 0, 19, 15, 7.3, 2.2;
    std::vector<char> clamped;
    auto d = sample_descriptors(cmap, ag::constant(locs), img, &clamped);
    const double expect = 1.0 / std::sqrt(3.0);
    for (int64_t i = 0; i < d.value().size(); ++i) CHECK(d.value()[i] == doctest::Approx(expect));
    CHECK(clamped[0]);        // (0,0) is left of the first node center
    CHECK(clamped[1]);        // beyond the last node
    CHECK_FALSE(clamped[2]);
  }
  SUBCASE("midpoint between two nodes averages then normalizes") {
    Tensor<double> loc({1, 2});
    loc[0] = 4 * 2 + 1.5 + 2.0;  // halfway between col 2 and col 3, row 1
    loc[1] = 4 * 1 + 1.5;
    auto d = sample_descriptors(map, ag::constant(loc), img);
    Eigen::VectorXd avg(6);
    for (int c = 0; c < 6; ++c)
      avg[c] = 0.5 * (map.value()[(c * 4 + 1) * 5 + 2] + map.value()[(c * 4 + 1) * 5 + 3]);
    avg.normalize();
    for (int c = 0; c < 6; ++c) CHECK(d.value()[c] == doctest::Approx(avg[c]));
  }
  SUBCASE("gradient w.r.t. map and locations") {
    ag::Var<double> locs(testutil::random_tensor<double>(rng, {4, 2}, 3.0, 12.0), true);
    const double err = testutil::gradcheck<double>(
        [&] { return ag::mean_all(ag::square(sample_descriptors(map, locs, img))); }, {map, locs});
    CHECK(err < 1e-3);
  }
}

TEST_CASE("extract_keypoints") {
  Rng rng(6);
  KeypointNetConfig cfg;
  KeypointNet<float> net(cfg, rng);
  Image<float> img = noise_image(rng, 48, 64);
  Rng drop(0);
  ag::NoGradGuard ng;
  auto out = net.forward(img, false, drop);
  const int cells = 6 * 8;

  SUBCASE("top_k equal to the cell count returns every cell's keypoint") {
    auto kps = net.extract_keypoints(out, cells);
    CHECK(kps.size() == cells);
    for (int i = 0; i < kps.size(); ++i) {
      CHECK((double)kps.descriptors.row(i).norm() == doctest::Approx(1.0));
      CHECK(kps.scores[i] >= 0.0f);
      CHECK(kps.scores[i] <= 1.0f);
    }
    for (int i = 1; i < kps.size(); ++i) CHECK(kps.scores[i] <= kps.scores[i - 1]);
  }
  SUBCASE("top_k truncation keeps the highest scores") {
    auto kps = net.extract_keypoints(out, 10);
    CHECK(kps.size() == 10);
    auto all = net.extract_keypoints(out, cells);
    float max_dropped = 0.0f;
    for (int i = 10; i < cells; ++i) max_dropped = std::max(max_dropped, all.scores[i]);
    CHECK(kps.scores[9] >= max_dropped);
  }
  SUBCASE("oversized or zero top_k clamp") {
    CHECK(net.extract_keypoints(out, cells * 3).size() == cells);
    CHECK(net.extract_keypoints(out, 0).size() == 0);
  }
  SUBCASE("ties break deterministically in cell order") {
    DenseOutputs<float> uniform = out;
    uniform.score = ag::constant(Tensor<float>({1, 1, 6, 8}, 0.5f));
    auto a = net.extract_keypoints(uniform, 10);
    auto b = net.extract_keypoints(uniform, 10);
    CHECK((a.locations - b.locations).norm() == 0.0f);
    // uniform scores: first cells in row-major order win
    auto locs = cell_to_image(out.offsets, cfg);
    auto lm = locs.value().mat(cells, 2);
    for (int i = 0; i < 10; ++i) {
      CHECK(a.locations(i, 0) == lm(i, 0));
      CHECK(a.locations(i, 1) == lm(i, 1));
    }
  }
}
