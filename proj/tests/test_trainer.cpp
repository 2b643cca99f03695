#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "lesact/errors.hpp"
#include "lesact/nn/checkpoint.hpp"
#include "lesact/synthgen.hpp"
#include "lesact/trainer.hpp"

using namespace lesact;
using namespace lesact::nn;

namespace {

NetworkConfig tiny(bool single = false) {
  NetworkConfig c;
  if (single) {
    c.paths = PathMode::single;
  } else {
    c.feature_fusion = FeatureFusion::stack;
    c.attention = AttentionMethod::C;
    c.attention_scales = {4};
  }
  c.base_channels = 2;
  c.input_size = {16, 16, 16};
  return c;
}

TrainingCase tiny_case(std::uint64_t seed) {
  PhantomSpec p;
  p.shape = {24, 24, 24};
  p.n_baseline_lesions = 2;
  p.n_new_lesions = 1;
  p.n_enlarged_lesions = 0;
  p.lesion_radius_min_mm = 1.5;
  p.lesion_radius_max_mm = 2.5;
  p.seed = seed;
  SyntheticCase c = generate_case(p);
  return {c.pair, c.activity_truth};
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.crop_size = {16, 16, 16};
  t.epochs = 2;
  t.lr_initial = 1e-3;
  t.seed = 4;
  return t;
}

template <typename S>
std::vector<Matrix<S>> snapshot(const Network<S>& net) {
  std::vector<Matrix<S>> out;
  net.visit([&](const Parameter<S>& p) { out.push_back(p.value); });
  return out;
}

}  // namespace

TEST_CASE("dice loss reference values") {
  const Shape3 s{2, 2, 2};
  FeatureMap<double> p(1, s), g(1, s);
  p.values.setConstant(0.5);
  g.values << 1, 1, 1, 1, 0, 0, 0, 0;
  CHECK(dice_loss(p, g, 0.0) == doctest::Approx(0.5));
  // 1 - (k + eps) / (N/2 + k + eps) with N = 8, k = 4, eps = 1
  CHECK(dice_loss(p, g, 1.0) == doctest::Approx(1.0 - 5.0 / 9.0));
  CHECK(dice_loss(g, g, 0.0) == doctest::Approx(0.0));
  FeatureMap<double> z(1, s);
  CHECK(dice_loss(z, z, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("dice loss gradient matches finite differences and stays in [0,1]") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Shape3 s{3, 3, 3};
  for (int k = 0; k < 10; ++k) {
    FeatureMap<double> p(1, s), g(1, s);
    for (Index i = 0; i < 27; ++i) {
      p.values(0, i) = u(rng);
      g.values(0, i) = u(rng) < 0.3 ? 1.0 : 0.0;
    }
    FeatureMap<double> grad;
    const double l = dice_loss(p, g, 1.0, &grad);
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
    for (Index i = 0; i < 27; ++i) {
      FeatureMap<double> q = p;
      q.values(0, i) += 1e-6;
      const double lp = dice_loss(q, g, 1.0);
      q.values(0, i) -= 2e-6;
      const double lm = dice_loss(q, g, 1.0);
      CHECK(grad.values(0, i) == doctest::Approx((lp - lm) / 2e-6).epsilon(1e-6));
    }
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig t;
  CHECK(t.learning_rate(0) == 1e-4);
  CHECK(t.learning_rate(10) == doctest::Approx(1e-4 * std::pow(0.985, 10)));
}

TEST_CASE("training config validation and JSON") {
  TrainConfig t;
  t.crop_size = {32, 16, 24};
  t.lr_decay = 0.9;
  const nlohmann::json j = t;
  CHECK(j.get<TrainConfig>() == t);
  nlohmann::json k = {{"crop_size", 32}};
  CHECK(k.get<TrainConfig>().crop_size == Shape3{32, 32, 32});
  t.epochs = -1;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("crop of a crop-sized volume is the volume up to flips") {
  std::mt19937_64 rng(2);
  const Volume v = testing_util::random_intensity({8, 8, 8}, rng);
  for (int k = 0; k < 5; ++k) {
    const CropWindow w = draw_crop(v.shape(), {8, 8, 8}, 0.0, rng);
    CHECK(w.corner == std::array<Index, 3>{0, 0, 0});
    CHECK((apply_crop(v, w).data() == v.data()).all());
  }
}

TEST_CASE("without flips crops read the source at the same coordinates") {
  std::mt19937_64 rng(3);
  const Volume v = testing_util::random_intensity({20, 15, 11}, rng);
  const Volume m = testing_util::random_label({20, 15, 11}, 0.3, rng);
  ScanPair pair{v, v, {}, std::nullopt, std::nullopt};
  TrainConfig cfg;
  cfg.crop_size = {8, 8, 16};  // z is padded
  cfg.flip_prob = 0.0;
  for (int k = 0; k < 10; ++k) {
    const CropSample s = sample_training_crop(pair, m, cfg, rng);
    const CropWindow& w = s.window;
    for (Index z = 0; z < 16; ++z)
      for (Index y = 0; y < 8; ++y)
        for (Index x = 0; x < 8; ++x) {
          const Index sx = w.corner[0] + x - w.pad[0], sy = w.corner[1] + y - w.pad[1], sz = w.corner[2] + z - w.pad[2];
          const bool inside = m.shape().contains(sx, sy, sz);
          REQUIRE(s.truth(x, y, z) == (inside ? m(sx, sy, sz) : 0.0f));
          REQUIRE(s.baseline(x, y, z) == (inside ? v(sx, sy, sz) : 0.0f));
        }
  }
}

TEST_CASE("flipping twice is the identity and flips apply jointly") {
  std::mt19937_64 rng(4);
  const Volume m = testing_util::random_label({9, 9, 9}, 0.3, rng);
  CropWindow w;
  w.size = {9, 9, 9};
  w.flip = {true, false, false};
  const Volume once = apply_crop(m, w);
  CHECK_FALSE((once.data() == m.data()).all());
  CHECK((apply_crop(once, w).data() == m.data()).all());

  const Volume v = testing_util::random_intensity({9, 9, 9}, rng);
  ScanPair pair{v, v, {}, std::nullopt, std::nullopt};
  TrainConfig cfg;
  cfg.crop_size = {9, 9, 9};
  cfg.flip_prob = 1.0;
  const CropSample s = sample_training_crop(pair, m, cfg, rng);
  for (Index x = 0; x < 9; ++x) CHECK(s.baseline(x, 2, 3) == v(8 - x, 6, 5));
  CHECK(s.truth(1, 2, 3) == m(7, 6, 5));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  Network<float> net(tiny(), 1);
  const auto before = snapshot(net);
  TrainConfig t = tiny_train();
  t.lr_initial = 0.0;
  t.epochs = 3;
  Trainer<float> trainer(net, t);
  trainer.run({tiny_case(1), tiny_case(2)});
  CHECK(trainer.steps_taken() == 6);
  const auto after = snapshot(net);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK((before[i].array() == after[i].array()).all());
}

TEST_CASE("losses are finite and bounded for the first 50 steps") {
  Network<float> net(tiny(), 2);
  TrainConfig t = tiny_train();
  t.epochs = 25;
  Trainer<float> trainer(net, t);
  const TrainingLog log = trainer.run({tiny_case(3), tiny_case(4)});
  REQUIRE(log.steps.size() == 50);
  for (const auto& s : log.steps) {
    CHECK(std::isfinite(s.loss));
    CHECK(s.loss >= 0.0);
    CHECK(s.loss <= 1.0 + 1e-6);
  }
}

TEST_CASE("per-scan models train on both time points") {
  Network<float> net(tiny(true), 3);
  Trainer<float> trainer(net, tiny_train());
  trainer.run({tiny_case(5)});
  CHECK(trainer.steps_taken() == 4);
}

TEST_CASE("non-finite losses abort with context") {
  Network<float> net(tiny(), 4);
  Trainer<float> trainer(net, tiny_train());
  FeatureMap<float> x(2, {16, 16, 16}), y(1, {16, 16, 16});
  x.values(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(trainer.step({x}, {y}, 1e-3), TrainingError);
}

TEST_CASE("checkpoint round trip rebuilds an identically predicting network") {
  testing_util::TempDir dir("ckpt");
  Network<float> net(tiny(), 5);
  Trainer<float> trainer(net, tiny_train());
  trainer.run({tiny_case(6)});
  save_checkpoint(dir.path / "m.ckpt", net, trainer.completed_epochs(), &trainer.optimizer_state(),
                  {{"note", "x"}});
  CheckpointInfo info;
  AdamState<float> state;
  const Network<float> loaded = load_checkpoint<float>(dir.path / "m.ckpt", &info, &state);
  CHECK(info.epoch == 2);
  CHECK(info.config == net.config());
  CHECK(info.extra["note"] == "x");
  CHECK(state.step == trainer.optimizer_state().step);
  std::mt19937_64 rng(7);
  std::normal_distribution<float> nd;
  for (int k = 0; k < 3; ++k) {
    FeatureMap<float> x(2, {16, 16, 16});
    for (Index i = 0; i < x.values.size(); ++i) x.values.data()[i] = nd(rng);
    CHECK((net.forward(x).values.array() == loaded.forward(x).values.array()).all());
  }
  NetworkConfig other = tiny();
  other.attention = AttentionMethod::B;
  other.base_channels = 4;
  try {
    load_checkpoint<float>(dir.path / "m.ckpt", nullptr, nullptr, other);
    FAIL("expected a config mismatch");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("attention") != std::string::npos);
    CHECK(msg.find("base_channels") != std::string::npos);
  }
}

TEST_CASE("a resumed run reproduces the uninterrupted run") {
  const std::vector<TrainingCase> data{tiny_case(8), tiny_case(9)};
  Network<float> straight(tiny(), 6);
  Trainer<float> a(straight, tiny_train());
  a.run(data);

  testing_util::TempDir dir("resume");
  Network<float> first(tiny(), 6);
  TrainConfig one = tiny_train();
  one.epochs = 1;
  Trainer<float> b(first, one);
  b.run(data);
  save_checkpoint(dir.path / "m.ckpt", first, b.completed_epochs(), &b.optimizer_state());

  CheckpointInfo info;
  AdamState<float> state;
  Network<float> resumed = load_checkpoint<float>(dir.path / "m.ckpt", &info, &state);
  Trainer<float> c(resumed, tiny_train());
  c.resume(info.epoch, state);
  c.run(data);
  CHECK(c.completed_epochs() == 2);
  const auto sa = snapshot(straight), sc = snapshot(resumed);
  for (std::size_t i = 0; i < sa.size(); ++i) CHECK((sa[i].array() == sc[i].array()).all());
}
