#include "lesact/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "lesact/errors.hpp"
#include "lesact/preprocess.hpp"
#include "lesact/volume_io.hpp"

namespace lesact {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- splits ------------------------------------------------------------------

void SplitSpec::validate() const {
  if (n_folds < 2) throw ConfigError("split.n_folds must be >= 2");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("split.validation_fraction must lie in (0,1)");
}

Splits make_splits(const std::vector<std::string>& case_ids, const SplitSpec& spec) {
  spec.validate();
  const std::set<std::string> unique(case_ids.begin(), case_ids.end());
  if (unique.size() != case_ids.size()) throw InvalidArgument("splits: duplicate case ids");
  if (case_ids.size() < 2 * static_cast<std::size_t>(spec.n_folds))
    throw InvalidArgument("splits: need at least two cases per fold (" + std::to_string(case_ids.size()) + " cases, " +
                          std::to_string(spec.n_folds) + " folds)");
  std::vector<std::string> order = case_ids;
  std::mt19937_64 rng(spec.seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::string>> parts(static_cast<std::size_t>(spec.n_folds));
  for (std::size_t i = 0; i < order.size(); ++i) parts[i % parts.size()].push_back(order[i]);

  Splits out;
  out.spec = spec;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    Fold f;
    const auto& held = parts[k];
    auto n_val = static_cast<std::size_t>(std::lround(spec.validation_fraction * static_cast<double>(held.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, held.size() - 1);
    f.validation.assign(held.begin(), held.begin() + static_cast<std::ptrdiff_t>(n_val));
    f.test.assign(held.begin() + static_cast<std::ptrdiff_t>(n_val), held.end());
    for (std::size_t o = 0; o < parts.size(); ++o)
      if (o != k) f.train.insert(f.train.end(), parts[o].begin(), parts[o].end());
    std::sort(f.train.begin(), f.train.end());
    out.folds.push_back(std::move(f));
  }
  return out;
}

void to_json(json& j, const SplitSpec& s) {
  j = json{{"n_folds", s.n_folds}, {"validation_fraction", s.validation_fraction}, {"seed", s.seed}};
}

void from_json(const json& j, SplitSpec& s) {
  s = SplitSpec{};
  try {
    s.n_folds = j.value("n_folds", s.n_folds);
    s.validation_fraction = j.value("validation_fraction", s.validation_fraction);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("split config: ") + e.what());
  }
}

void to_json(json& j, const Splits& s) {
  json folds = json::array();
  for (const auto& f : s.folds) folds.push_back({{"train", f.train}, {"validation", f.validation}, {"test", f.test}});
  j = json{{"spec", s.spec}, {"folds", folds}};
}

void from_json(const json& j, Splits& s) {
  try {
    s.spec = j.at("spec").get<SplitSpec>();
    s.folds.clear();
    for (const auto& f : j.at("folds"))
      s.folds.push_back({f.at("train").get<std::vector<std::string>>(), f.at("validation").get<std::vector<std::string>>(),
                         f.at("test").get<std::vector<std::string>>()});
  } catch (const json::exception& e) {
    throw FormatError(std::string("splits: ") + e.what());
  }
}

// ---- configs -----------------------------------------------------------------

void EvalConfig::validate() const {
  if (thresholds.empty()) throw ConfigError("eval.thresholds must not be empty");
  for (double t : thresholds)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("eval.thresholds must lie in (0,1)");
  if (fixed_threshold && !(*fixed_threshold > 0.0 && *fixed_threshold < 1.0))
    throw ConfigError("eval.fixed_threshold must lie in (0,1)");
  if (min_volume_ml < 0.0) throw ConfigError("eval.min_volume_ml must be >= 0");
  for (const auto& m : metrics)
    if (m != "dice" && m != "ltpr" && m != "lfpr") throw ConfigError("eval.metrics: unknown metric '" + m + "'");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("eval.alpha must lie in (0,1)");
}

void to_json(json& j, const EvalConfig& c) {
  j = json{{"thresholds", c.thresholds},
           {"fixed_threshold", c.fixed_threshold ? json(*c.fixed_threshold) : json(nullptr)},
           {"filter_small_lesions", c.filter_small_lesions},
           {"min_volume_ml", c.min_volume_ml},
           {"truth", c.truth == TruthSource::fused ? "fused" : "stored"},
           {"metrics", c.metrics},
           {"alpha", c.alpha}};
}

void from_json(const json& j, EvalConfig& c) {
  c = EvalConfig{};
  try {
    if (j.contains("thresholds")) c.thresholds = j.at("thresholds").get<std::vector<double>>();
    if (j.contains("fixed_threshold") && !j.at("fixed_threshold").is_null())
      c.fixed_threshold = j.at("fixed_threshold").get<double>();
    c.filter_small_lesions = j.value("filter_small_lesions", c.filter_small_lesions);
    c.min_volume_ml = j.value("min_volume_ml", c.min_volume_ml);
    if (j.contains("truth")) {
      const auto t = j.at("truth").get<std::string>();
      if (t == "fused") c.truth = TruthSource::fused;
      else if (t == "stored") c.truth = TruthSource::stored;
      else throw ConfigError("eval.truth must be 'fused' or 'stored', got '" + t + "'");
    }
    if (j.contains("metrics")) c.metrics = j.at("metrics").get<std::vector<std::string>>();
    c.alpha = j.value("alpha", c.alpha);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("eval config: ") + e.what());
  }
}

void to_json(json& j, const PreprocessConfig& c) {
  j = json{{"spacing", c.target_spacing ? json{(*c.target_spacing)[0], (*c.target_spacing)[1], (*c.target_spacing)[2]}
                                        : json(nullptr)},
           {"standardize", c.standardize}};
}

void from_json(const json& j, PreprocessConfig& c) {
  c = PreprocessConfig{};
  try {
    if (j.contains("spacing")) {
      const auto& s = j.at("spacing");
      if (s.is_null()) {
        c.target_spacing.reset();
      } else {
        const auto v = s.get<std::vector<double>>();
        if (v.size() != 3) throw ConfigError("preprocess.spacing must have 3 entries");
        c.target_spacing = Eigen::Vector3d(v[0], v[1], v[2]);
      }
    }
    c.standardize = j.value("standardize", c.standardize);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("preprocess config: ") + e.what());
  }
}

void ExperimentConfig::validate() const {
  if (dataset_path.has_value() == synth.has_value())
    throw ConfigError("dataset: exactly one of 'path' and 'synth' must be given");
  split.validate();
  if (fold < 0 || fold >= split.n_folds) throw ConfigError("fold must lie in [0, split.n_folds)");
  if (preprocess.target_spacing && !(preprocess.target_spacing->array() > 0.0).all())
    throw ConfigError("preprocess.spacing must be positive");
  model.validate();
  train.validate();
  tiling.validate();
  eval.validate();
  if (synth) synth->phantom.validate();
}

fs::path ExperimentConfig::dataset_dir() const { return dataset_path ? *dataset_path : output_dir / "data"; }

void to_json(json& j, const ExperimentConfig& c) {
  json dataset = json::object();
  if (c.dataset_path) dataset["path"] = c.dataset_path->generic_string();
  if (c.synth) dataset["synth"] = *c.synth;
  j = json{{"seed", c.seed},
           {"output_dir", c.output_dir.generic_string()},
           {"dataset", dataset},
           {"preprocess", c.preprocess},
           {"split", c.split},
           {"fold", c.fold},
           {"model_name", c.model_name},
           {"model", c.model},
           {"train", c.train},
           {"tiling", c.tiling},
           {"eval", c.eval}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.is_string()) {
        c.dataset_path = fs::path(d.get<std::string>());
      } else {
        if (d.contains("path")) c.dataset_path = fs::path(d.at("path").get<std::string>());
        if (d.contains("synth")) c.synth = d.at("synth").get<DatasetSpec>();
      }
    }
    if (j.contains("preprocess")) c.preprocess = j.at("preprocess").get<PreprocessConfig>();
    if (j.contains("split")) c.split = j.at("split").get<SplitSpec>();
    c.fold = j.value("fold", c.fold);
    c.model_name = j.value("model_name", c.model_name);
    if (j.contains("model")) c.model = j.at("model").get<nn::NetworkConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("tiling")) c.tiling = j.at("tiling").get<TilingConfig>();
    if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

ExperimentConfig read_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return j.get<ExperimentConfig>();
}

std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- cases -------------------------------------------------------------------

namespace {

Volume maybe_resample(const Volume& v, const PreprocessConfig& pre) {
  if (!pre.target_spacing || v.spacing().isApprox(*pre.target_spacing, 1e-9)) return v;
  return resample(v, *pre.target_spacing);
}

}  // namespace

PreparedCase prepare_case(std::string id, ScanPair pair, std::optional<Volume> stored_truth,
                          const PreprocessConfig& pre, const EvalConfig& eval) {
  auto intensity = [&](const Volume& v) {
    Volume r = maybe_resample(v, pre);
    return pre.standardize ? standardize(r) : r;
  };
  auto label = [&](const Volume& v) { return maybe_resample(v, pre); };

  std::vector<Volume> raters;
  for (const auto& r : pair.activity_masks) raters.push_back(label(r));
  Volume truth = [&] {
    if (eval.truth == TruthSource::fused && !raters.empty()) return majority_vote(raters);
    if (!stored_truth) throw InvalidArgument("case " + id + ": no ground truth (neither truth mask nor raters)");
    return label(*stored_truth);
  }();
  if (eval.filter_small_lesions) truth = filter_small_lesions(truth, eval.min_volume_ml);

  ScanPair out{intensity(pair.baseline), intensity(pair.followup), raters, std::nullopt, std::nullopt};
  if (pair.baseline_lesions) out.baseline_lesions = label(*pair.baseline_lesions);
  if (pair.followup_lesions) out.followup_lesions = label(*pair.followup_lesions);
  out.validate();
  return {std::move(id), std::move(out), std::move(truth), std::move(raters)};
}

std::vector<PreparedCase> load_prepared(const fs::path& root, const Manifest& manifest,
                                        const std::vector<std::string>& ids, const PreprocessConfig& pre,
                                        const EvalConfig& eval) {
  PreprocessConfig effective = pre;
  if (manifest.preprocessed) effective = PreprocessConfig{std::nullopt, false};
  std::vector<PreparedCase> out;
  auto load = [&](const ManifestEntry& e) {
    LoadedCase c = load_case(root, e);
    out.push_back(prepare_case(c.id, std::move(c.pair), std::move(c.truth), effective, eval));
  };
  if (ids.empty()) {
    for (const auto& e : manifest.cases) load(e);
    return out;
  }
  for (const auto& id : ids) {
    const auto it = std::find_if(manifest.cases.begin(), manifest.cases.end(), [&](const auto& e) { return e.id == id; });
    if (it == manifest.cases.end()) throw InvalidArgument("case '" + id + "' is not in the dataset manifest");
    load(*it);
  }
  return out;
}

Manifest preprocess_dataset(const fs::path& in, const fs::path& out, const PreprocessConfig& pre) {
  if (fs::exists(out) && fs::equivalent(in, out)) throw InvalidArgument("preprocess: input and output directories coincide");
  Manifest m = read_manifest(in);
  if (m.preprocessed) throw InvalidArgument("preprocess: dataset '" + in.string() + "' is already preprocessed");
  for (const auto& e : m.cases) {
    auto copy = [&](const fs::path& rel, bool intensity) {
      Volume v = maybe_resample(
          read_volume(in / rel, intensity ? std::nullopt : std::optional<VolumeKind>(VolumeKind::label)), pre);
      if (intensity && pre.standardize) v = standardize(v);
      write_volume(v, out / rel);
    };
    copy(e.baseline, true);
    copy(e.followup, true);
    copy(e.truth, false);
    if (e.baseline_lesions) copy(*e.baseline_lesions, false);
    if (e.followup_lesions) copy(*e.followup_lesions, false);
    for (const auto& r : e.raters) copy(r, false);
  }
  m.preprocessed = true;
  write_manifest(m, out);
  return m;
}

std::vector<TrainingCase> training_cases(const std::vector<PreparedCase>& cases) {
  std::vector<TrainingCase> out;
  for (const auto& c : cases) out.push_back({c.pair, c.truth});
  return out;
}

Volume CasePrediction::mask(double t) const {
  if (activity) return threshold(*activity, t);
  if (!baseline || !followup) throw InvalidArgument("case prediction " + id + " holds no probability maps");
  const Volume m_bl = threshold(*baseline, t);
  const Volume m_fu = threshold(*followup, t);
  return Volume::like(m_fu, VolumeKind::label, m_fu.data() * (1.0f - m_bl.data()));
}

CasePrediction predict_case(const nn::Network<float>& net, const PreparedCase& c, const TilingConfig& tiling) {
  CasePrediction p;
  p.id = c.id;
  if (net.config().is_single_scan()) {
    p.baseline = predict_scan(net, c.pair.baseline, tiling);
    p.followup = predict_scan(net, c.pair.followup, tiling);
  } else {
    p.activity = predict_volume(net, c.pair, tiling);
  }
  return p;
}

ModelEvaluation evaluate_predictions(const std::string& model, const std::vector<CasePrediction>& validation,
                                     const std::vector<Volume>& validation_truth,
                                     const std::vector<CasePrediction>& test, const std::vector<Volume>& test_truth,
                                     const EvalConfig& eval) {
  eval.validate();
  if (validation.size() != validation_truth.size() || test.size() != test_truth.size())
    throw InvalidArgument("evaluate: predictions and truths differ in count");
  if (test.empty()) throw InvalidArgument("evaluate: no test cases");
  ModelEvaluation out;
  out.model = model;
  if (eval.fixed_threshold) {
    out.threshold = *eval.fixed_threshold;
  } else {
    if (validation.empty()) throw InvalidArgument("evaluate: threshold selection needs validation cases");
    out.validation_sweep =
        threshold_sweep(validation_truth, [&](std::size_t i, double t) { return validation[i].mask(t); }, eval.thresholds,
                        eval.filter_small_lesions, eval.min_volume_ml);
    out.threshold = best_point(out.validation_sweep).t;
  }
  out.test_sweep = threshold_sweep(test_truth, [&](std::size_t i, double t) { return test[i].mask(t); }, eval.thresholds,
                                   eval.filter_small_lesions, eval.min_volume_ml);
  for (std::size_t i = 0; i < test.size(); ++i) {
    Volume m = test[i].mask(out.threshold);
    if (eval.filter_small_lesions) m = filter_small_lesions(m, eval.min_volume_ml);
    out.case_ids.push_back(test[i].id);
    out.cases.push_back(lesion_rates(m, test_truth[i]));
  }
  out.summary = aggregate(out.cases);
  return out;
}

}  // namespace lesact
