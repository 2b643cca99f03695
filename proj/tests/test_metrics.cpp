#include <numeric>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "lesact/errors.hpp"
#include "lesact/inference.hpp"
#include "lesact/metrics.hpp"
#include "lesact/stats.hpp"
#include "oracles.hpp"

using namespace lesact;

namespace {

const Shape3 kShape{20, 8, 8};

Volume boxes(std::initializer_list<std::array<int, 6>> list) {
  Volume::Data d = Volume::Data::Zero(kShape.voxels());
  for (const auto& b : list)
    for (int z = b[4]; z < b[5]; ++z)
      for (int y = b[2]; y < b[3]; ++y)
        for (int x = b[0]; x < b[1]; ++x) d[kShape.linear(x, y, z)] = 1.0f;
  return Volume(kShape, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), VolumeKind::label, d);
}

}  // namespace

TEST_CASE("perfect prediction") {
  const Volume gt = boxes({{1, 3, 1, 3, 1, 3}, {10, 14, 2, 5, 2, 5}});
  const CaseMetrics m = lesion_rates(gt, gt);
  REQUIRE(m.ltpr.has_value());
  CHECK(*m.ltpr == 1.0);
  CHECK(m.lfpr == 0.0);
  CHECK(m.lesion_dices == std::vector<double>{1.0, 1.0});
}

TEST_CASE("empty prediction") {
  const Volume gt = boxes({{1, 3, 1, 3, 1, 3}});
  const CaseMetrics m = lesion_rates(Volume::zeros(kShape, VolumeKind::label), gt);
  CHECK(*m.ltpr == 0.0);
  CHECK(m.lfpr == 0.0);
  CHECK(m.lesion_dices.empty());
}

TEST_CASE("one of two lesions found, two of three predictions false") {
  const Volume gt = boxes({{1, 3, 1, 3, 1, 3}, {10, 12, 1, 3, 1, 3}});
  const Volume pred = boxes({{2, 4, 2, 4, 2, 4}, {16, 18, 5, 7, 5, 7}, {6, 8, 5, 7, 5, 7}});
  const CaseMetrics m = lesion_rates(pred, gt);
  CHECK(*m.ltpr == 0.5);
  CHECK(m.lfpr == doctest::Approx(2.0 / 3.0));
  CHECK(m.n_tp == 1);
  CHECK(m.n_fp == 2);
  // 8-voxel GT cube, 8-voxel predicted cube overlapping in one voxel
  REQUIRE(m.lesion_dices.size() == 1);
  CHECK(m.lesion_dices[0] == doctest::Approx(2.0 * 1.0 / 16.0));
}

TEST_CASE("no ground-truth lesions leaves LTPR undefined") {
  const Volume pred = boxes({{1, 3, 1, 3, 1, 3}});
  const CaseMetrics m = lesion_rates(pred, Volume::zeros(kShape, VolumeKind::label));
  CHECK_FALSE(m.ltpr.has_value());
  CHECK(m.lfpr == 1.0);
  const AggregateMetrics a = aggregate({m, lesion_rates(pred, pred)});
  CHECK(a.ltpr.n == 1);
  CHECK(a.lfpr.n == 2);
}

TEST_CASE("lesion dice uses the union of touching predictions") {
  const Volume gt = boxes({{2, 8, 2, 4, 2, 4}});                        // 24 voxels
  const Volume pred = boxes({{1, 3, 2, 4, 2, 4}, {7, 10, 2, 4, 2, 4}});  // 8 + 12 voxels, 4 + 4 overlapping
  const CaseMetrics m = lesion_rates(pred, gt);
  REQUIRE(m.lesion_dices.size() == 1);
  CHECK(m.lesion_dices[0] == doctest::Approx(2.0 * 8.0 / (24.0 + 20.0)));
  CHECK(m.n_fp == 0);
}

TEST_CASE("majority vote") {
  std::mt19937_64 rng(1);
  const Volume a = testing_util::random_label({6, 6, 6}, 0.4, rng);
  CHECK((majority_vote({a, a, a}).data() == a.data()).all());
  CHECK((majority_vote({a}).data() == a.data()).all());
  const Volume b = testing_util::random_label({6, 6, 6}, 0.4, rng);
  const Volume c = testing_util::random_label({6, 6, 6}, 0.4, rng);
  const Volume v = majority_vote({a, b, c});
  for (Index i = 0; i < v.size(); ++i) CHECK(v[i] == ((a[i] + b[i] + c[i]) >= 2.0f ? 1.0f : 0.0f));
  CHECK_THROWS_AS(majority_vote({}), InvalidArgument);
}

TEST_CASE("interrater agreement of identical raters") {
  const Volume a = boxes({{1, 3, 1, 3, 1, 3}, {10, 12, 1, 3, 1, 3}});
  const CaseMetrics m = interrater({a, a, a}, false, 0.01);
  CHECK(*m.ltpr == 1.0);
  CHECK(m.lfpr == 0.0);
  CHECK(*m.dice() == 1.0);
}

TEST_CASE("threshold selection: exact maps tie everywhere and pick 0.99") {
  const Volume gt = boxes({{1, 3, 1, 3, 1, 3}});
  const Volume prob = Volume::like(gt, VolumeKind::probability, gt.data());
  CHECK(select_threshold({prob}, {gt}, default_threshold_grid(), false, 0.01) == doctest::Approx(0.99));
}

TEST_CASE("threshold selection: a constructed field peaks at 0.5") {
  // One lesion at 0.55 and a decoy at 0.45: t <= 0.45 adds a false positive,
  // t > 0.55 loses the lesion, so t in (0.45, 0.55] is optimal and 0.5 is the
  // only such grid point on a 0.1 grid.
  const Volume gt = boxes({{1, 4, 1, 4, 1, 4}});
  Volume::Data p = 0.55f * gt.data() + 0.45f * boxes({{12, 15, 3, 6, 3, 6}}).data();
  const Volume prob = Volume::like(gt, VolumeKind::probability, p);
  const std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const double t = select_threshold({prob}, {gt}, grid, false, 0.01);
  CHECK(t == doctest::Approx(0.5));
  const auto sweep = threshold_sweep({gt}, [&](std::size_t, double th) { return threshold(prob, th); }, grid, false, 0.01);
  const SweepPoint& best = best_point(sweep);
  for (const auto& sp : sweep) CHECK(best.objective >= sp.objective);
  CHECK(best.ltpr == 1.0);
  CHECK(best.lfpr == 0.0);
}

TEST_CASE("threshold selection is reproducible") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Volume::Data p(kShape.voxels());
  for (auto& v : p) v = u(rng) * u(rng) * u(rng);
  const Volume prob(kShape, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), VolumeKind::probability, p);
  const Volume gt = boxes({{1, 4, 1, 4, 1, 4}, {12, 15, 3, 6, 3, 6}});
  const auto grid = default_threshold_grid();
  CHECK(select_threshold({prob}, {gt}, grid, true, 0.01) == select_threshold({prob}, {gt}, grid, true, 0.01));
}

TEST_CASE("percentiles and summaries") {
  const std::vector<double> v{0.0, 50.0, 100.0};
  const SummaryStats s = summarize(v);
  CHECK(s.mean == 50.0);
  CHECK(s.p25 == 25.0);
  CHECK(s.p75 == 75.0);
  const std::vector<double> one{0.3};
  const SummaryStats t = summarize(one);
  CHECK(t.mean == 0.3);
  CHECK(t.p25 == 0.3);
  CHECK(t.p75 == 0.3);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 20; ++k) {
    std::vector<double> x(1 + k * 3);
    for (auto& e : x) e = nd(rng);
    for (double q : {0.0, 13.0, 25.0, 50.0, 75.0, 99.0, 100.0})
      CHECK(percentile(x, q) == doctest::Approx(oracle::percentile(x, q)).epsilon(1e-12));
  }
}

TEST_CASE("wilcoxon: identical samples") {
  const std::vector<double> x{1, 2, 3, 4, 5, 6};
  const WilcoxonResult r = wilcoxon_signed_rank(x, x);
  CHECK(r.p_value == 1.0);
  CHECK_FALSE(r.significant);
}

TEST_CASE("wilcoxon: six positive differences") {
  const std::vector<double> x{1.1, 2.2, 3.3, 4.4, 5.5, 6.6};
  const std::vector<double> y{0, 0, 0, 0, 0, 0};
  const WilcoxonResult r = wilcoxon_signed_rank(x, y);
  CHECK(r.statistic == 21.0);
  CHECK(r.exact);
  CHECK(r.p_value == doctest::Approx(0.03125).epsilon(1e-12));
  CHECK(r.significant);
}

TEST_CASE("wilcoxon exact path matches the dynamic-programming null distribution, including ties") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> small(-4, 4);
  for (int k = 0; k < 40; ++k) {
    const std::size_t n = 5 + static_cast<std::size_t>(k % 8);
    std::vector<double> x(n), y(n, 0.0);
    for (auto& e : x) {
      do e = small(rng);
      while (e == 0.0);
    }
    const WilcoxonResult r = wilcoxon_signed_rank_exact(x, y);
    const auto ranks = oracle::abs_midranks(x);
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (x[i] > 0) w += ranks[i];
    CHECK(r.statistic == doctest::Approx(w));
    CHECK(r.p_value == doctest::Approx(oracle::signed_rank_p_dp(ranks, w)).epsilon(1e-12));
    const auto pmf = signed_rank_null_distribution(ranks);
    CHECK(std::accumulate(pmf.begin(), pmf.end(), 0.0) == doctest::Approx(1.0));
  }
}

TEST_CASE("wilcoxon exact and normal paths agree at n = 12") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 50; ++k) {
    std::vector<double> x(12), y(12);
    const double shift = 0.5 * nd(rng);
    for (int i = 0; i < 12; ++i) {
      x[i] = nd(rng) + shift;
      y[i] = nd(rng);
    }
    CHECK(std::abs(wilcoxon_signed_rank_exact(x, y).p_value - wilcoxon_signed_rank_normal(x, y).p_value) < 0.02);
  }
}

TEST_CASE("wilcoxon needs enough nonzero differences") {
  const std::vector<double> x{1, 2, 3, 4};
  const std::vector<double> y{0, 0, 0, 0};
  CHECK_THROWS_AS(wilcoxon_signed_rank(x, y), InvalidArgument);
  const std::vector<double> z{1, 2, 3};
  CHECK_THROWS_AS(wilcoxon_signed_rank(x, z), InvalidArgument);
}
