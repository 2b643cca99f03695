#include <algorithm>
#include <fstream>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "lesact/errors.hpp"
#include "lesact/experiment.hpp"
#include "lesact/report.hpp"

using namespace lesact;

namespace {

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("case" + std::to_string(i));
  return out;
}

DatasetSpec tiny_dataset() {
  DatasetSpec d;
  d.phantom.shape = {24, 24, 24};
  d.phantom.spacing = Eigen::Vector3d(1.0, 1.0, 1.5);
  d.phantom.n_baseline_lesions = 2;
  d.phantom.n_new_lesions = 1;
  d.phantom.n_enlarged_lesions = 1;
  d.phantom.lesion_radius_min_mm = 1.5;
  d.phantom.lesion_radius_max_mm = 2.5;
  d.n_cases = 2;
  d.seed = 5;
  d.activity_free_fraction = 0.0;
  return d;
}

}  // namespace

TEST_CASE("splits partition the cases in every fold") {
  const auto all = ids(23);
  const Splits s = make_splits(all, {3, 0.5, 11});
  REQUIRE(s.folds.size() == 3);
  std::multiset<std::string> held_out;
  for (const auto& f : s.folds) {
    std::set<std::string> seen;
    for (const auto* part : {&f.train, &f.validation, &f.test})
      for (const auto& id : *part) CHECK(seen.insert(id).second);
    CHECK(seen == std::set<std::string>(all.begin(), all.end()));
    CHECK_FALSE(f.validation.empty());
    CHECK_FALSE(f.test.empty());
    held_out.insert(f.validation.begin(), f.validation.end());
    held_out.insert(f.test.begin(), f.test.end());
  }
  // each case is held out exactly once
  CHECK(held_out.size() == all.size());
  CHECK(std::set<std::string>(held_out.begin(), held_out.end()).size() == all.size());
  const Splits again = make_splits(all, {3, 0.5, 11});
  CHECK(nlohmann::json(again) == nlohmann::json(s));
  CHECK(nlohmann::json(s).get<Splits>().folds[1].test == s.folds[1].test);
  CHECK_THROWS_AS(make_splits(ids(2), {3, 0.5, 1}), InvalidArgument);
}

TEST_CASE("experiment config round trip and hash") {
  ExperimentConfig c;
  c.seed = 9;
  c.output_dir = "out/x";
  c.synth = tiny_dataset();
  c.model.attention = nn::AttentionMethod::C;
  c.model.attention_scales = {4};
  c.model.feature_fusion = nn::FeatureFusion::stack;
  c.train.epochs = 3;
  c.eval.fixed_threshold = 0.4;
  const nlohmann::json j = c;
  const ExperimentConfig r = j.get<ExperimentConfig>();
  CHECK(nlohmann::json(r) == j);
  CHECK(config_hash(j) == config_hash(nlohmann::json(r)));
  nlohmann::json k = j;
  k["train"]["epochs"] = 4;
  CHECK(config_hash(k) != config_hash(j));
  CHECK(r.name() == c.model.label());

  testing_util::TempDir dir("cfg");
  {
    std::ofstream(dir.path / "bad.json") << R"({"model": {"base_channels": -3}})";
  }
  CHECK_THROWS_AS(read_experiment_config(dir.path / "bad.json"), ConfigError);
  CHECK_THROWS_AS(read_experiment_config(dir.path / "missing.json"), ConfigError);
}

TEST_CASE("per-scan masks are follow-up minus baseline") {
  const Shape3 s{6, 6, 6};
  CasePrediction p;
  Volume::Data bl = Volume::Data::Zero(s.voxels()), fu = Volume::Data::Zero(s.voxels());
  bl[3] = 0.9f;
  fu[3] = 0.9f;
  fu[100] = 0.7f;
  fu[200] = 0.2f;
  p.baseline = Volume(s, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), VolumeKind::probability, bl);
  p.followup = Volume(s, Eigen::Vector3d::Ones(), Eigen::Vector3d::Zero(), VolumeKind::probability, fu);
  const Volume m = p.mask(0.5);
  CHECK(m.count_nonzero() == 1);
  CHECK(m[100] == 1.0f);
  CHECK(p.mask(0.1).count_nonzero() == 2);
}

TEST_CASE("evaluation with a fixed threshold scores test cases") {
  const Shape3 s{10, 10, 10};
  Volume::Data g = Volume::Data::Zero(s.voxels());
  g[s.linear(2, 2, 2)] = 1.0f;
  g[s.linear(7, 7, 7)] = 1.0f;
  const Volume gt(s, Eigen::Vector3d::Constant(5.0), Eigen::Vector3d::Zero(), VolumeKind::label, g);
  Volume::Data pr = Volume::Data::Zero(s.voxels());
  pr[s.linear(2, 2, 2)] = 0.8f;
  CasePrediction p;
  p.id = "a";
  p.activity = Volume::like(gt, VolumeKind::probability, pr);
  EvalConfig e;
  e.fixed_threshold = 0.5;
  const ModelEvaluation ev = evaluate_predictions("m", {}, {}, {p}, {gt}, e);
  CHECK(ev.threshold == 0.5);
  CHECK(ev.validation_sweep.empty());
  REQUIRE(ev.cases.size() == 1);
  CHECK(*ev.cases[0].ltpr == 0.5);
  CHECK(ev.cases[0].lfpr == 0.0);
  CHECK(ev.case_ids == std::vector<std::string>{"a"});
}

TEST_CASE("preparing a case fuses raters by majority and standardizes scans") {
  const SyntheticCase c = generate_case(tiny_dataset().phantom);
  ScanPair pair = c.pair;
  pair.activity_masks = c.rater_masks;
  PreprocessConfig pre;
  EvalConfig eval;
  const PreparedCase p = prepare_case("x", pair, c.activity_truth, pre, eval);
  CHECK(p.pair.baseline.spacing().isApprox(Eigen::Vector3d::Ones()));
  CHECK(p.pair.baseline.shape().z == 36);
  CHECK(p.truth.shape() == p.pair.baseline.shape());
  CHECK(p.raters.size() == c.rater_masks.size());
  eval.truth = TruthSource::stored;
  pre.target_spacing.reset();
  const PreparedCase q = prepare_case("x", pair, c.activity_truth, pre, eval);
  CHECK((q.truth.data() == c.activity_truth.data()).all());
}

TEST_CASE("preprocessed datasets keep their layout and are not processed twice") {
  testing_util::TempDir dir("prep");
  const Manifest raw = generate_dataset(tiny_dataset(), dir.path / "raw");
  const Manifest done = preprocess_dataset(dir.path / "raw", dir.path / "pre", PreprocessConfig{});
  CHECK(done.preprocessed);
  REQUIRE(done.cases.size() == raw.cases.size());
  CHECK(read_manifest(dir.path / "pre").preprocessed);
  const LoadedCase lc = load_case(dir.path / "pre", done.cases[0]);
  CHECK(lc.pair.baseline.spacing().isApprox(Eigen::Vector3d::Ones()));
  const auto a = load_prepared(dir.path / "pre", done, {done.cases[0].id}, PreprocessConfig{}, EvalConfig{});
  REQUIRE(a.size() == 1);
  CHECK((a[0].pair.followup.data() == lc.pair.followup.data()).all());
  const auto b = load_prepared(dir.path / "raw", raw, {}, PreprocessConfig{}, EvalConfig{});
  REQUIRE(b.size() == 2);
  CHECK((b[0].pair.followup.data() - a[0].pair.followup.data()).abs().maxCoeff() == 0.0f);
}
