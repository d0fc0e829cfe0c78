#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "kpl/data/synthetic.hpp"
#include "kpl/eval/evaluator.hpp"
#include "kpl/io/image_io.hpp"
#include "test_util.hpp"

#include <filesystem>
#include <fstream>

using namespace kpl;
namespace fs = std::filesystem;

namespace {

using DescMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

DescMat random_unit_rows(Rng& rng, int n, int d) {
  DescMat m(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
    m.row(i).normalize();
  }
  return m;
}

// independent brute-force mirrors of the protocol definitions
double oracle_repeatability(const Points<double>& a, const Points<double>& b, const Homography<double>& h,
                            ImageSize sa, ImageSize sb, double tau, bool* defined) {
  auto direction = [&](const Points<double>& from, const Points<double>& to, const Homography<double>& hh,
                       ImageSize bounds, int* in_view) -> int {
    int correct = 0;
    *in_view = 0;
    for (Eigen::Index i = 0; i < from.rows(); ++i) {
      const double u = from(i, 0), v = from(i, 1);
      const double w = hh.m(2, 0) * u + hh.m(2, 1) * v + hh.m(2, 2);
      if (std::abs(w) < 1e-8) continue;
      const double x = (hh.m(0, 0) * u + hh.m(0, 1) * v + hh.m(0, 2)) / w;
      const double y = (hh.m(1, 0) * u + hh.m(1, 1) * v + hh.m(1, 2)) / w;
      if (!(x >= 0 && x < bounds.width && y >= 0 && y < bounds.height)) continue;
      ++*in_view;
      double best = std::numeric_limits<double>::max();
      for (Eigen::Index j = 0; j < to.rows(); ++j) {
        const double dx = x - to(j, 0), dy = y - to(j, 1);
        best = std::min(best, dx * dx + dy * dy);
      }
      if (std::sqrt(best) <= tau) ++correct;
    }
    return correct;
  };
  int na = 0, nb = 0;
  const int ca = direction(a, b, h, sb, &na);
  const int cb = direction(b, a, h.inverse(), sa, &nb);
  *defined = na > 0 && nb > 0;
  if (!*defined) return 0.0;
  return 0.5 * ((double)ca / na + (double)cb / nb);
}

double oracle_matching_score(const DescMat& fa, const DescMat& fb, const Points<double>& a,
                             const Points<double>& b, const Homography<double>& h, ImageSize sa, ImageSize sb,
                             double tau) {
  const int na = (int)a.rows(), nb = (int)b.rows();
  // reciprocal matching by exhaustive scan
  std::vector<std::pair<int, int>> matches;
  for (int i = 0; i < na; ++i) {
    int bj = 0;
    double best = std::numeric_limits<double>::max();
    for (int j = 0; j < nb; ++j) {
      const double d = (fa.row(i) - fb.row(j)).squaredNorm();
      if (d < best) {
        best = d;
        bj = j;
      }
    }
    int bi = 0;
    best = std::numeric_limits<double>::max();
    for (int k = 0; k < na; ++k) {
      const double d = (fa.row(k) - fb.row(bj)).squaredNorm();
      if (d < best) {
        best = d;
        bi = k;
      }
    }
    if (bi == i) matches.emplace_back(i, bj);
  }
  auto warp_one = [](const Homography<double>& hh, double u, double v, double* x, double* y) {
    const double w = hh.m(2, 0) * u + hh.m(2, 1) * v + hh.m(2, 2);
    if (std::abs(w) < 1e-8) return false;
    *x = (hh.m(0, 0) * u + hh.m(0, 1) * v + hh.m(0, 2)) / w;
    *y = (hh.m(1, 0) * u + hh.m(1, 1) * v + hh.m(1, 2)) / w;
    return true;
  };
  const Homography<double> hinv = h.inverse();
  int n_a = 0, n_b = 0;
  for (int i = 0; i < na; ++i) {
    double x, y;
    if (warp_one(h, a(i, 0), a(i, 1), &x, &y) && x >= 0 && x < sb.width && y >= 0 && y < sb.height) ++n_a;
  }
  for (int j = 0; j < nb; ++j) {
    double x, y;
    if (warp_one(hinv, b(j, 0), b(j, 1), &x, &y) && x >= 0 && x < sa.width && y >= 0 && y < sa.height) ++n_b;
  }
  if (n_a == 0 || n_b == 0) return 0.0;
  int ca = 0, cb = 0;
  for (auto [i, j] : matches) {
    double x, y;
    if (warp_one(h, a(i, 0), a(i, 1), &x, &y) && x >= 0 && x < sb.width && y >= 0 && y < sb.height) {
      const double dx = x - b(j, 0), dy = y - b(j, 1);
      if (std::sqrt(dx * dx + dy * dy) <= tau) ++ca;
    }
    if (warp_one(hinv, b(j, 0), b(j, 1), &x, &y) && x >= 0 && x < sa.width && y >= 0 && y < sa.height) {
      const double dx = x - a(i, 0), dy = y - a(i, 1);
      if (std::sqrt(dx * dx + dy * dy) <= tau) ++cb;
    }
  }
  return 0.5 * ((double)ca / n_a + (double)cb / n_b);
}

}  // namespace

TEST_CASE("match_descriptors") {
  SUBCASE("identical distinct sets match identically") {
    Rng rng(1);
    DescMat d = random_unit_rows(rng, 6, 8);
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f = d.cast<float>();
    auto matches = match_descriptors<float>(f, f);
    REQUIRE(matches.size() == 6);
    for (auto [i, j] : matches) CHECK(i == j);
  }
  SUBCASE("one-sided nearest neighbors are excluded") {
    // b0 is a0's nearest, but b0's nearest is a1
    DescMat a(2, 2), b(1, 2);
    a << 1, 0, 0.995, 0.0998;
    b << 0.9, 0.436;
    a.rowwise().normalize();
    b.rowwise().normalize();
    auto matches = match_descriptors<double>(a, b);
    REQUIRE(matches.size() == 1);
    CHECK(matches[0].first == 1);
    CHECK(matches[0].second == 0);
  }
  SUBCASE("permuted orthonormal set recovers the permutation") {
    const int n = 5;
    DescMat a = DescMat::Identity(n, n);
    std::vector<int> perm = {3, 0, 4, 1, 2};
    DescMat b(n, n);
    for (int i = 0; i < n; ++i) b.row(i) = a.row(perm[(size_t)i]);
    auto matches = match_descriptors<double>(a, b);
    REQUIRE((int)matches.size() == n);
    for (auto [i, j] : matches) CHECK(perm[(size_t)j] == i);
  }
}

TEST_CASE("repeatability and localization error") {
  const ImageSize size{100, 100};
  const auto identity = Homography<double>::identity();

  SUBCASE("identical sets under identity give 1.0") {
    Points<double> p(4, 2);
    p << 10, 10, 30, 40, 70, 20, 50, 90;
    auto r = repeatability<double>(p, p, identity, size, size, 3.0);
    CHECK(r.defined);
    CHECK(r.value == 1.0);
    CHECK(*localization_error<double>(r.ab, r.ba, 3.0) == 0.0);
  }
  SUBCASE("disjoint far sets give 0.0") {
    Points<double> a(2, 2), b(2, 2);
    a << 5, 5, 10, 10;
    b << 80, 80, 90, 90;
    auto r = repeatability<double>(a, b, identity, size, size, 3.0);
    CHECK(r.defined);
    CHECK(r.value == 0.0);
    CHECK_FALSE(localization_error<double>(r.ab, r.ba, 3.0).has_value());
  }
  SUBCASE("3 of 4 within tau gives 0.75") {
    Points<double> a(4, 2), b(4, 2);
    a << 10, 10, 30, 30, 50, 50, 70, 70;
    b = a;
    b(0, 1) += 1;
    b(1, 1) += 2;
    b(2, 1) += 3;
    b(3, 1) += 9;  // beyond tau
    auto r = repeatability<double>(a, b, identity, size, size, 3.0);
    CHECK(r.value == doctest::Approx(0.75));
    CHECK(*localization_error<double>(r.ab, r.ba, 3.0) == doctest::Approx(2.0));
  }
  SUBCASE("no in-view points makes the metric undefined") {
    Points<double> a(1, 2), b(1, 2);
    a << 50, 50;
    b << 50, 50;
    Homography<double> shift;
    shift.m(0, 2) = 1000;
    auto r = repeatability<double>(a, b, shift, size, size, 3.0);
    CHECK_FALSE(r.defined);
  }
  SUBCASE("localization distances {1,2} average to 1.5") {
    Points<double> a(2, 2), b(2, 2);
    a << 10, 10, 50, 50;
    b << 10, 11, 50, 52;
    auto r = repeatability<double>(a, b, identity, size, size, 3.0);
    CHECK(*localization_error<double>(r.ab, r.ba, 3.0) == doctest::Approx(1.5));
  }
}

TEST_CASE("matching score") {
  const ImageSize size{64, 64};
  const auto identity = Homography<double>::identity();

  SUBCASE("perfect descriptors on coincident points reach the repeatability bound") {
    Rng rng(2);
    Points<double> p(8, 2);
    for (int i = 0; i < 8; ++i) p.row(i) << rng.uniform(5, 59), rng.uniform(5, 59);
    DescMat f = random_unit_rows(rng, 8, 16);
    Eigen::Matrix<float, -1, -1, Eigen::RowMajor> ff = f.cast<float>();
    auto matches = match_descriptors<float>(ff, ff);
    const double ms = matching_score<double>(matches, p, p, identity, size, size, 3.0);
    auto rep = repeatability<double>(p, p, identity, size, size, 3.0);
    CHECK(ms == doctest::Approx(rep.value));
    CHECK(ms == 1.0);
  }
  SUBCASE("random descriptors score near chance") {
    Rng rng(3);
    const int n = 300;
    Points<double> a(n, 2), b(n, 2);
    for (int i = 0; i < n; ++i) {
      a.row(i) << rng.uniform(0, 63), rng.uniform(0, 63);
      b.row(i) << rng.uniform(0, 63), rng.uniform(0, 63);
    }
    DescMat fa = random_unit_rows(rng, n, 32), fb = random_unit_rows(rng, n, 32);
    auto matches = match_descriptors<double>(fa, fb);
    const double ms = matching_score<double>(matches, a, b, identity, size, size, 3.0);
    CHECK(ms < 0.05);
  }
  SUBCASE("no matches gives zero") {
    Points<double> p(3, 2);
    p << 1, 1, 2, 2, 3, 3;
    CHECK(matching_score<double>({}, p, p, identity, size, size, 3.0) == 0.0);
  }
  SUBCASE("matching score never exceeds repeatability on coincident-location instances") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 12;
      Points<double> a(n, 2), b(n, 2);
      for (int i = 0; i < n; ++i) {
        a.row(i) << rng.uniform(4, 60), rng.uniform(4, 60);
        b.row(i) = a.row(i);
        b(i, 0) += rng.uniform(-1.5, 1.5);
        b(i, 1) += rng.uniform(-1.5, 1.5);
      }
      DescMat fa = random_unit_rows(rng, n, 8), fb = random_unit_rows(rng, n, 8);
      auto matches = match_descriptors<double>(fa, fb);
      const double ms = matching_score<double>(matches, a, b, identity, size, size, 3.0);
      auto rep = repeatability<double>(a, b, identity, size, size, 3.0);
      CHECK(ms <= rep.value + 1e-12);
    }
  }
}

TEST_CASE("brute-force oracle equivalence on small instances") {
  Rng rng(5);
  const ImageSize size{80, 96};
  HomographyConfig cfg;
  for (int trial = 0; trial < 60; ++trial) {
    const int na = rng.uniform_int(3, 20), nb = rng.uniform_int(3, 20);
    auto h = sample_homography<double>(cfg, size, 900 + (uint64_t)trial);
    Points<double> a(na, 2), b(nb, 2);
    for (int i = 0; i < na; ++i) a.row(i) << rng.uniform(0, 95), rng.uniform(0, 79);
    for (int j = 0; j < nb; ++j) b.row(j) << rng.uniform(0, 95), rng.uniform(0, 79);
    DescMat fa = random_unit_rows(rng, na, 16), fb = random_unit_rows(rng, nb, 16);

    bool oracle_defined = false;
    const double oracle_rep = oracle_repeatability(a, b, h, size, size, 3.0, &oracle_defined);
    auto rep = repeatability<double>(a, b, h, size, size, 3.0);
    CHECK(rep.defined == oracle_defined);
    if (oracle_defined) CHECK(rep.value == oracle_rep);

    const double oracle_ms = oracle_matching_score(fa, fb, a, b, h, size, size, 3.0);
    auto matches = match_descriptors<double>(fa, fb);
    CHECK(matching_score<double>(matches, a, b, h, size, size, 3.0) == oracle_ms);

    // localization: mean over the same correct associations
    double sum = 0;
    int count = 0;
    for (const auto* dir : {&rep.ab, &rep.ba})
      for (double d : dir->dist)
        if (d <= 3.0) {
          sum += d;
          ++count;
        }
    auto loc = localization_error<double>(rep.ab, rep.ba, 3.0);
    if (count) {
      CHECK(*loc == sum / count);
    } else {
      CHECK_FALSE(loc.has_value());
    }
  }
}

TEST_CASE("homography estimation") {
  const ImageSize size{240, 320};
  HomographyConfig hc;
  RansacConfig rc;

  auto make_instance = [&](uint64_t seed, int n, double outlier_frac, double noise,
                           Homography<double>* gt) {
    Rng rng(seed);
    *gt = sample_homography<double>(hc, size, mix_seed(seed, 77));
    Points<double> a(n, 2), b(n, 2);
    int placed = 0;
    while (placed < n) {
      Points<double> p(1, 2);
      p << rng.uniform(0, size.width - 1), rng.uniform(0, size.height - 1);
      auto w = warp_points<double>(p, *gt);
      if (!in_bounds_mask<double>(w, size)[0]) continue;
      a.row(placed) = p.row(0);
      b.row(placed) << w(0, 0) + rng.normal(0, noise), w(0, 1) + rng.normal(0, noise);
      ++placed;
    }
    const int outliers = (int)std::lround(outlier_frac * n);
    for (int i = 0; i < outliers; ++i)
      b.row(i) << rng.uniform(0, size.width - 1), rng.uniform(0, size.height - 1);
    return std::make_pair(a, b);
  };

  SUBCASE("exact correspondences recover the homography") {
    Homography<double> gt;
    auto [a, b] = make_instance(1, 24, 0.0, 0.0, &gt);
    auto rr = estimate_homography(a, b, rc, 0);
    REQUIRE(rr.h.has_value());
    CHECK((rr.h->m - gt.m).cwiseAbs().maxCoeff() < 1e-3);
    CHECK(rr.inlier_count == 24);
  }
  SUBCASE("50% gross outliers still yield sub-pixel corners") {
    for (uint64_t seed : {2ull, 3ull, 4ull}) {
      Homography<double> gt;
      auto [a, b] = make_instance(seed, 100, 0.5, 0.0, &gt);
      auto rr = estimate_homography(a, b, rc, seed);
      REQUIRE(rr.h.has_value());
      auto acc = homography_accuracy(rr.h, gt, size, {1.0});
      CHECK(acc.corner_error <= 1.0);
    }
  }
  SUBCASE("collinear points fail cleanly") {
    Points<double> a(6, 2), b(6, 2);
    for (int i = 0; i < 6; ++i) {
      a.row(i) << 10.0 * i, 20.0 * i;  // one line
      b.row(i) << 10.0 * i + 5, 20.0 * i + 5;
    }
    CHECK_FALSE(dlt_homography(a, b).has_value());
    auto rr = estimate_homography(a, b, rc, 0);
    CHECK_FALSE(rr.h.has_value());
  }
  SUBCASE("fewer than 4 matches fail") {
    Points<double> a(3, 2), b(3, 2);
    a << 0, 0, 10, 0, 0, 10;
    b = a;
    CHECK_FALSE(estimate_homography(a, b, rc, 0).h.has_value());
  }
  SUBCASE("deterministic given seed") {
    Homography<double> gt;
    auto [a, b] = make_instance(5, 60, 0.3, 0.5, &gt);
    auto r1 = estimate_homography(a, b, rc, 9);
    auto r2 = estimate_homography(a, b, rc, 9);
    REQUIRE(r1.h.has_value());
    CHECK((r1.h->m - r2.h->m).norm() == 0.0);
  }
}

TEST_CASE("homography accuracy examples") {
  const ImageSize size{240, 320};
  const auto gt = Homography<double>::identity();

  SUBCASE("exact estimate passes every threshold") {
    auto acc = homography_accuracy(gt, gt, size, {1, 3, 5});
    CHECK(acc.correct == std::vector<char>{1, 1, 1});
    CHECK(acc.corner_error == 0.0);
  }
  SUBCASE("2px translation error: Cor-1 false, Cor-3 and Cor-5 true") {
    Homography<double> est;
    est.m(0, 2) = 2.0;
    auto acc = homography_accuracy(est, gt, size, {1, 3, 5});
    CHECK(acc.corner_error == doctest::Approx(2.0));
    CHECK(acc.correct == std::vector<char>{0, 1, 1});
  }
  SUBCASE("estimation failure fails every threshold") {
    auto acc = homography_accuracy(std::nullopt, gt, size, {1, 3, 5});
    CHECK(acc.correct == std::vector<char>{0, 0, 0});
  }
}

TEST_CASE("dataset evaluation on an identity-layout directory") {
  const fs::path root = fs::temp_directory_path() / "kpl_test_hpatches";
  fs::remove_all(root);
  for (const std::string seq : {"i_alpha", "v_beta"}) {
    fs::create_directories(root / seq);
    Image<float> img = synthetic_image({96, 128}, seq[0] == 'i' ? 1 : 2);
    for (int k = 1; k <= 3; ++k) save_ppm((root / seq / (std::to_string(k) + ".ppm")).string(), img);
    for (int k = 2; k <= 3; ++k) {
      std::ofstream h(root / seq / ("H_1_" + std::to_string(k)));
      h << "1 0 0\n0 1 0\n0 0 1\n";
    }
  }
  // malformed directory: no homographies
  fs::create_directories(root / "v_broken");
  save_ppm((root / "v_broken" / "1.ppm").string(), synthetic_image({96, 128}, 3));

  Rng rng(7);
  KeypointNetConfig kc;
  KeypointNet<float> net(kc, rng);
  EvalConfig ec;
  ec.height = 96;
  ec.width = 128;
  ec.top_k = 100;
  ec.seeds = {0, 1};

  Evaluator ev(net, ec);
  EvalReport report = ev.evaluate_dataset(root.string());
  CHECK(report.pairs.size() == 4);
  CHECK(report.skipped.size() == 1);
  CHECK(report.all.pairs == 4);
  CHECK(report.illumination.pairs == 2);
  CHECK(report.viewpoint.pairs == 2);
  CHECK(report.all.repeatability == doctest::Approx(1.0));
  CHECK(report.all.localization_error == doctest::Approx(0.0));
  CHECK(report.all.matching_score == doctest::Approx(1.0));
  for (double c : report.all.cor_mean) CHECK(c == doctest::Approx(1.0));

  // deterministic given the same seed list
  EvalReport again = ev.evaluate_dataset(root.string());
  CHECK(report.to_json().dump() == again.to_json().dump());

  CHECK(report.table().find("all") != std::string::npos);
  fs::remove_all(root);
}
