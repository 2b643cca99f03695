#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "lesact/errors.hpp"
#include "lesact/inference.hpp"
#include "lesact/preprocess.hpp"
#include "oracles.hpp"

using namespace lesact;
using namespace lesact::nn;

namespace {

FeatureMap<float> random_input(Index channels, Shape3 s, std::mt19937_64& rng) {
  std::normal_distribution<float> nd;
  FeatureMap<float> m(channels, s);
  for (Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = nd(rng);
  return m;
}

NetworkConfig small_net() {
  NetworkConfig c;
  c.feature_fusion = FeatureFusion::stack;
  c.base_channels = 2;
  c.input_size = {16, 16, 16};
  return c;
}

Volume prob_volume(Shape3 s, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Volume::Data d(s.voxels());
  for (auto& v : d) v = u(rng);
  return Volume(s, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), VolumeKind::probability, d);
}

}  // namespace

TEST_CASE("one-dimensional offsets and coverage") {
  const auto offsets = tile_offsets(10, 4, 3);
  CHECK(offsets == std::vector<Index>{0, 3, 6});
  CHECK(oracle::coverage_1d(10, 4, offsets) == std::vector<int>{1, 1, 1, 2, 1, 1, 2, 1, 1, 1});
  const TilingPlan plan = TilingPlan::make({10, 4, 4}, {4, 4, 4}, {3, 1, 1});
  const auto cov = plan.coverage();
  for (Index x = 0; x < 10; ++x) CHECK(cov[static_cast<std::size_t>(x)] == oracle::coverage_1d(10, 4, offsets)[x]);
}

TEST_CASE("offsets are evenly spaced and gap-free plans cover every voxel") {
  for (Index d : {5, 16, 17, 31, 64, 100})
    for (Index t : {4, 5, 16})
      for (int g : {1, 2, 3, 4, 8}) {
        if (t > d) continue;
        const auto o = tile_offsets(d, t, g);
        CHECK(o.front() == 0);
        if (g > 1 && d > t) {
          REQUIRE(o.size() == static_cast<std::size_t>(g));
          CHECK(o.back() == d - t);
          for (int i = 0; i < g; ++i) {
            const double exact = static_cast<double>(i) * static_cast<double>(d - t) / (g - 1);
            CHECK(o[static_cast<std::size_t>(i)] == static_cast<Index>(std::floor(exact + 0.5)));
          }
        }
        const auto cov = oracle::coverage_1d(d, t, o);
        const bool covered = *std::min_element(cov.begin(), cov.end()) >= 1;
        if (covered) {
          const TilingPlan plan = TilingPlan::make({d, t, t}, {t, t, t}, {g, 1, 1});
          const auto pc = plan.coverage();
          for (Index x = 0; x < d; ++x) CHECK(pc[static_cast<std::size_t>(x)] == cov[static_cast<std::size_t>(x)]);
        } else {
          CHECK_THROWS_AS(TilingPlan::make({d, t, t}, {t, t, t}, {g, 1, 1}), InvalidArgument);
        }
      }
}

TEST_CASE("constant predictor gives a constant merged map") {
  std::mt19937_64 rng(1);
  const Shape3 s{20, 17, 9};
  const auto input = random_input(2, s, rng);
  const TilingPlan plan = TilingPlan::make(s, {8, 8, 8}, {3, 3, 2});
  const TilePredictor constant = [](const FeatureMap<float>& x) {
    FeatureMap<float> out(1, x.shape);
    out.values.setConstant(0.7f);
    return out;
  };
  const Eigen::ArrayXf merged = predict_tiled(input, plan, constant);
  CHECK(merged.size() == s.voxels());
  CHECK((merged == 0.7f).all());
}

TEST_CASE("merging is linear in the tile outputs") {
  std::mt19937_64 rng(2);
  const Shape3 s{12, 12, 12};
  TileAccumulator a(s), b(s);
  const TilingPlan plan = TilingPlan::make(s, {6, 6, 6}, {3, 3, 3});
  std::uniform_real_distribution<float> u(0.0f, 0.5f);
  for (const auto& corner : plan.offsets) {
    Eigen::ArrayXf values(216);
    for (auto& v : values) v = u(rng);
    a.add(corner, plan.tile, values);
    b.add(corner, plan.tile, 2.0f * values);
  }
  CHECK((b.mean(s) - 2.0f * a.mean(s)).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("a single tile equals direct prediction bit for bit") {
  std::mt19937_64 rng(3);
  const Network<float> net(small_net(), 2);
  const auto input = random_input(2, {16, 16, 16}, rng);
  const TilingPlan plan = TilingPlan::make({16, 16, 16}, {16, 16, 16}, {1, 1, 1});
  const Eigen::ArrayXf merged =
      predict_tiled(input, plan, [&](const FeatureMap<float>& x) { return net.forward(x); });
  const Eigen::ArrayXf direct = net.forward(input).values.row(0).transpose().array();
  CHECK((merged == direct).all());
}

TEST_CASE("output is identical for one and four worker threads") {
  std::mt19937_64 rng(4);
  const Network<float> net(small_net(), 3);
  const auto input = random_input(2, {24, 24, 20}, rng);
  const TilingPlan plan = TilingPlan::make({24, 24, 20}, {16, 16, 16}, {2, 2, 2});
  const TilePredictor f = [&](const FeatureMap<float>& x) { return net.forward(x); };
  const Eigen::ArrayXf one = predict_tiled(input, plan, f, 1);
  const Eigen::ArrayXf four = predict_tiled(input, plan, f, 4);
  CHECK((one == four).all());
}

TEST_CASE("volumes smaller than the tile are padded") {
  std::mt19937_64 rng(5);
  const Network<float> net(small_net(), 4);
  const Volume bl = testing_util::random_intensity({12, 16, 10}, rng);
  const Volume fu = testing_util::random_intensity({12, 16, 10}, rng);
  TilingConfig t;
  t.tile = {16, 16, 16};
  t.grid = {1, 1, 1};
  const Volume p = predict_volume(net, ScanPair{bl, fu, {}, std::nullopt, std::nullopt}, t);
  CHECK(p.shape() == bl.shape());
  CHECK(p.kind() == VolumeKind::probability);
}

TEST_CASE("thresholding") {
  std::mt19937_64 rng(6);
  const Volume half(Shape3{3, 3, 3}, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), VolumeKind::probability,
                    Volume::Data::Constant(27, 0.5f));
  CHECK(threshold(half, 0.5).count_nonzero() == 27);
  const Volume p = prob_volume({8, 8, 8}, rng);
  const double above = std::nextafter(p.data().maxCoeff(), 1.0f);
  CHECK(threshold(p, above).count_nonzero() == 0);
  for (double t1 = 0.05; t1 < 0.95; t1 += 0.1) {
    const Volume m1 = threshold(p, t1), m2 = threshold(p, t1 + 0.05);
    CHECK((m2.data() <= m1.data()).all());
  }
  CHECK_THROWS_AS(threshold(p, 0.0), InvalidArgument);
  CHECK_THROWS_AS(threshold(p, 1.0), InvalidArgument);
}

TEST_CASE("per-scan difference") {
  std::mt19937_64 rng(7);
  const Volume p = prob_volume({10, 10, 10}, rng);
  CHECK(stp_difference(p, p, 0.5, 0.0).count_nonzero() == 0);
  const Volume empty = Volume::zeros({10, 10, 10}, VolumeKind::probability);
  const Volume d = stp_difference(empty, p, 0.5, 0.01);
  CHECK((d.data() == filter_small_lesions(threshold(p, 0.5), 0.01).data()).all());
}

TEST_CASE("per-scan pipeline on identical scans predicts nothing") {
  std::mt19937_64 rng(8);
  NetworkConfig c = small_net();
  c.paths = PathMode::single;
  const Network<float> net(c, 5);
  const Volume v = testing_util::random_intensity({16, 16, 16}, rng);
  TilingConfig t;
  t.tile = {16, 16, 16};
  t.grid = {1, 1, 1};
  for (double th : {0.2, 0.5, 0.8})
    CHECK(stp_difference_pipeline(net, ScanPair{v, v, {}, std::nullopt, std::nullopt}, t, th).count_nonzero() == 0);
}

TEST_CASE("tiling config JSON") {
  TilingConfig t;
  t.tile = {32, 32, 16};
  t.grid = {2, 2, 1};
  t.threads = 3;
  const nlohmann::json j = t;
  CHECK(j.get<TilingConfig>() == t);
  const nlohmann::json k = {{"tile", 64}, {"grid", 2}};
  const TilingConfig u = k.get<TilingConfig>();
  CHECK(u.tile == Shape3{64, 64, 64});
  CHECK(u.grid == std::array<int, 3>{2, 2, 2});
}
