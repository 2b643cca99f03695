#include <map>
#include <random>

#include "doctest.h"
#include "lesact/errors.hpp"
#include "lesact/nn/attention.hpp"
#include "lesact/nn/network.hpp"
#include "lesact/trainer.hpp"

using namespace lesact;
using namespace lesact::nn;

namespace {

template <typename S>
FeatureMap<S> random_map(Index channels, Shape3 s, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  FeatureMap<S> m(channels, s);
  for (Index i = 0; i < m.values.size(); ++i) m.values.data()[i] = static_cast<S>(nd(rng));
  return m;
}

NetworkConfig two_path(FeatureFusion fusion, AttentionMethod att = AttentionMethod::none, std::vector<int> scales = {}) {
  NetworkConfig c;
  c.paths = PathMode::two;
  c.feature_fusion = fusion;
  c.attention = att;
  c.attention_scales = std::move(scales);
  c.base_channels = 2;
  c.input_size = {16, 16, 16};
  return c;
}

}  // namespace

TEST_CASE("config validation") {
  NetworkConfig c;
  CHECK_NOTHROW(c.validate());
  c.input_fusion = InputFusion::stack;
  CHECK_THROWS_AS(c.validate(), ConfigError);  // input fusion needs a single path
  c = NetworkConfig{};
  c.paths = PathMode::single;
  c.attention = AttentionMethod::C;
  c.attention_scales = {4};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = NetworkConfig{};
  c.input_size = {60, 64, 64};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = NetworkConfig{};
  c.attention = AttentionMethod::B;
  CHECK_THROWS_AS(c.validate(), ConfigError);  // no scales
  c.attention_scales = {1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("config JSON round trip and location names") {
  NetworkConfig c = two_path(FeatureFusion::add, AttentionMethod::C, {2, 4});
  const nlohmann::json j = c;
  CHECK(j.get<NetworkConfig>() == c);
  nlohmann::json k = j;
  k["attention_scales"] = {"16^3"};
  CHECK(k.get<NetworkConfig>().attention_scales == std::vector<int>{4});
  k["attention_scales"] = "all";
  CHECK(k.get<NetworkConfig>().attention_scales == std::vector<int>{2, 3, 4});
}

TEST_CASE("output keeps the input spatial shape and lies in [0,1]") {
  std::mt19937_64 rng(1);
  for (const Shape3 s : {Shape3{16, 16, 16}, Shape3{64, 64, 64}, Shape3{128, 128, 128}}) {
    NetworkConfig c;
    c.paths = PathMode::single;
    c.input_fusion = InputFusion::stack;
    c.base_channels = s.x == 128 ? 1 : 2;
    c.input_size = s;
    const Network<float> net(c, 1);
    const auto out = net.forward(random_map<float>(2, s, rng));
    CHECK(out.channels() == 1);
    CHECK(out.shape == s);
    CHECK(out.values.minCoeff() >= 0.0f);
    CHECK(out.values.maxCoeff() <= 1.0f);
  }
}

TEST_CASE("every configuration runs forward and backward with finite gradients") {
  std::mt19937_64 rng(2);
  std::vector<NetworkConfig> configs;
  for (auto f : {FeatureFusion::diff, FeatureFusion::add, FeatureFusion::stack})
    for (auto a : {AttentionMethod::none, AttentionMethod::A, AttentionMethod::B, AttentionMethod::C})
      configs.push_back(two_path(f, a, a == AttentionMethod::none ? std::vector<int>{} : std::vector<int>{2, 3, 4}));
  for (auto in : {InputFusion::none, InputFusion::diff, InputFusion::add, InputFusion::stack}) {
    NetworkConfig c = two_path(FeatureFusion::add);
    c.paths = PathMode::single;
    c.input_fusion = in;
    configs.push_back(c);
  }
  for (const auto& c : configs) {
    CAPTURE(c.label());
    Network<double> net(c, 3);
    const auto x = random_map<double>(c.input_channels(), c.input_size, rng);
    Network<double>::Trace t;
    const auto p = net.forward(x, &t);
    CHECK((p.values.array() >= 0.0).all());
    CHECK((p.values.array() <= 1.0).all());
    FeatureMap<double> target(1, c.input_size);
    target.values.leftCols(100).setOnes();
    FeatureMap<double> grad;
    dice_loss(p, target, 1.0, &grad);
    net.zero_grad();
    net.backward(t, grad);
    double norm = 0.0;
    for (auto* prm : net.parameters()) {
      REQUIRE(prm->grad.allFinite());
      norm += prm->grad.squaredNorm();
    }
    CHECK(norm > 0.0);
  }
}

TEST_CASE("attention placement follows the scale rule") {
  NetworkConfig c = two_path(FeatureFusion::add, AttentionMethod::C, {4});
  c.base_channels = 32;
  c.input_size = {128, 128, 128};
  const Network<float> net(c, 0);
  REQUIRE(net.attention_block(4).has_value());
  CHECK(net.attention_block(4)->channels() == 256);
  CHECK_FALSE(net.attention_block(2).has_value());
  CHECK(Shape3{128 >> 3, 128 >> 3, 128 >> 3} == Shape3{16, 16, 16});
}

TEST_CASE("attention parameter counts") {
  for (int scale : {2, 3, 4}) {
    NetworkConfig a = two_path(FeatureFusion::add, AttentionMethod::A, {scale});
    NetworkConfig b = a, c = a;
    b.attention = AttentionMethod::B;
    c.attention = AttentionMethod::C;
    a.base_channels = b.base_channels = c.base_channels = 32;
    const Index C = Index{32} << (scale - 1);
    const Index pa = Network<float>(a).attention_parameter_count(scale);
    const Index pb = Network<float>(b).attention_parameter_count(scale);
    const Index pc = Network<float>(c).attention_parameter_count(scale);
    CHECK(pa == 2 * (C * C + C));
    CHECK(pb == 2 * (2 * C * C + C));
    CHECK(pc == 2 * C * C + C);
    CHECK(2 * pc == pb);
  }
}

TEST_CASE("zero-weight attention scales features by 1.5") {
  std::mt19937_64 rng(4);
  for (auto method : {AttentionMethod::A, AttentionMethod::B, AttentionMethod::C}) {
    AttentionBlock<double> block("att", method, 4);
    block.visit([](Parameter<double>& p) { p.value.setZero(); });
    const auto f_bl = random_map<double>(4, {4, 4, 4}, rng), f_fu = random_map<double>(4, {4, 4, 4}, rng);
    const auto [o_bl, o_fu] = block.forward(f_bl, f_fu);
    CHECK((o_bl.values - 1.5 * f_bl.values).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((o_fu.values - 1.5 * f_fu.values).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("strongly negative bias turns attention into a pass-through") {
  std::mt19937_64 rng(5);
  AttentionBlock<double> block("att", AttentionMethod::B, 4);
  block.visit([](Parameter<double>& p) {
    if (p.value.cols() == 1) {
      p.value.setConstant(-20.0);
    } else {
      p.value.setZero();
    }
  });
  const auto f_bl = random_map<double>(4, {4, 4, 4}, rng), f_fu = random_map<double>(4, {4, 4, 4}, rng);
  const auto [o_bl, o_fu] = block.forward(f_bl, f_fu);
  CHECK((o_bl.values - f_bl.values).cwiseAbs().maxCoeff() < 1e-6 * std::max(1.0, f_bl.values.cwiseAbs().maxCoeff()));
  CHECK((o_fu.values - f_fu.values).cwiseAbs().maxCoeff() < 1e-6 * std::max(1.0, f_fu.values.cwiseAbs().maxCoeff()));
}

TEST_CASE("attention output never exceeds twice the input") {
  std::mt19937_64 rng(6);
  for (auto method : {AttentionMethod::A, AttentionMethod::B, AttentionMethod::C}) {
    AttentionBlock<double> block("att", method, 3);
    block.init_he(rng);
    const auto f_bl = random_map<double>(3, {4, 4, 4}, rng), f_fu = random_map<double>(3, {4, 4, 4}, rng);
    const auto [o_bl, o_fu] = block.forward(f_bl, f_fu);
    CHECK((o_bl.values.cwiseAbs().array() <= 2.0 * f_bl.values.cwiseAbs().array() + 1e-12).all());
    CHECK((o_fu.values.cwiseAbs().array() <= 2.0 * f_fu.values.cwiseAbs().array() + 1e-12).all());
    CHECK((o_bl.values.cwiseAbs().array() >= f_bl.values.cwiseAbs().array() - 1e-12).all());
  }
}

TEST_CASE("method C maps are bit-identical") {
  std::mt19937_64 rng(7);
  AttentionBlock<float> block("att", AttentionMethod::C, 5);
  block.init_he(rng);
  for (int k = 0; k < 3; ++k) {
    const auto f_bl = random_map<float>(5, {4, 4, 4}, rng), f_fu = random_map<float>(5, {4, 4, 4}, rng);
    const auto maps = block.maps(f_bl, f_fu);
    CHECK((maps.a_bl.values.array() == maps.a_fu.values.array()).all());
  }
}

TEST_CASE("difference fusion subtracts the baseline path") {
  std::mt19937_64 rng(8);
  const Network<double> net(two_path(FeatureFusion::diff), 9);
  const auto v = random_map<double>(1, {16, 16, 16}, rng);
  const auto f_bl = net.encode_path(0, v), f_fu = net.encode_path(1, v);
  const auto fused = net.fuse(f_bl, f_fu);
  CHECK((fused.values - (f_fu.values - f_bl.values)).cwiseAbs().maxCoeff() == 0.0);
  const Network<double> add(two_path(FeatureFusion::add), 9);
  CHECK((add.fuse(f_bl, f_fu).values - (f_fu.values + f_bl.values)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("models differing only in attention share all other initial weights") {
  const Network<float> plain(two_path(FeatureFusion::stack), 5);
  const Network<float> att(two_path(FeatureFusion::stack, AttentionMethod::C, {4}), 5);
  std::map<std::string, Matrix<float>> weights;
  plain.visit([&](const Parameter<float>& p) { weights[p.name] = p.value; });
  Index shared = 0;
  att.visit([&](const Parameter<float>& p) {
    const auto it = weights.find(p.name);
    if (it == weights.end()) return;
    ++shared;
    CHECK(it->second == p.value);
  });
  CHECK(shared == static_cast<Index>(weights.size()));
}

TEST_CASE("small finite-difference spot check") {
  std::mt19937_64 rng(10);
  NetworkConfig c = two_path(FeatureFusion::add, AttentionMethod::B, {3});
  Network<double> net(c, 2);
  const auto x = random_map<double>(2, c.input_size, rng);
  FeatureMap<double> target(1, c.input_size);
  for (Index i = 0; i < target.voxels(); i += 5) target.values(0, i) = 1.0;
  auto loss = [&] { return dice_loss(net.forward(x), target, 1.0); };
  Network<double>::Trace t;
  FeatureMap<double> grad;
  dice_loss(net.forward(x, &t), target, 1.0, &grad);
  net.zero_grad();
  net.backward(t, grad);
  // Head bias and attention weights: smooth directions with nonzero gradient.
  int checked = 0;
  for (auto* p : net.parameters()) {
    if (p->name != "head.bias" && p->name.rfind("attention", 0) != 0) continue;
    const double h = 1e-6, old = p->value(0, 0);
    p->value(0, 0) = old + h;
    const double lp = loss();
    p->value(0, 0) = old - h;
    const double lm = loss();
    p->value(0, 0) = old;
    const double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(fd - p->grad(0, 0)) <= 1e-5 * std::max(1e-6, std::abs(fd)) + 1e-10);
    ++checked;
  }
  CHECK(checked >= 2);
}
