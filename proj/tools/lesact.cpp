#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "lesact/errors.hpp"
#include "lesact/experiment.hpp"
#include "lesact/nn/checkpoint.hpp"
#include "lesact/preprocess.hpp"
#include "lesact/report.hpp"
#include "lesact/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lesact;

namespace {

/// Invalid command-line usage that CLI11 cannot see on its own (exit code 2).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::vector<std::string> sets;  // key.path=value
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Seed overriding the config");
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--set", c.sets, "Override a config key, e.g. train.epochs=5; null removes it (repeatable)");
}

// Dotted path assignment; the value is parsed as JSON when possible, else taken as a string.
void apply_set(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw UsageError("--set: malformed key '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      if (value.is_null()) {
        node->erase(part);  // null removes the key
      } else {
        (*node)[part] = value;
      }
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

json load_config_json(const Common& c) {
  json j = json::object();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config '" + c.config + "' is not valid JSON: " + e.what());
    }
  }
  for (const auto& s : c.sets) apply_set(j, s);
  if (c.seed) {
    j["seed"] = *c.seed;
    j["train"]["seed"] = *c.seed;
    j["split"]["seed"] = *c.seed;
  }
  if (!c.out.empty()) j["output_dir"] = c.out;
  return j;
}

void log_setup() {
  auto logger = spdlog::stderr_color_mt("lesact");
  logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("LESACT_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(env));
}

void write_json(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// ---- dataset and splits ------------------------------------------------------

Manifest resolve_dataset(const ExperimentConfig& cfg) {
  const fs::path dir = cfg.dataset_dir();
  if (cfg.dataset_path) {
    if (!fs::is_directory(dir)) throw ConfigError("dataset directory '" + dir.string() + "' does not exist");
    if (!fs::exists(dir / "manifest.json"))
      throw ConfigError("dataset directory '" + dir.string() + "' has no manifest.json");
    return read_manifest(dir);
  }
  if (fs::exists(dir / "manifest.json")) {
    Manifest m = read_manifest(dir);
    if (m.seed != cfg.synth->seed || m.cases.size() != static_cast<std::size_t>(cfg.synth->n_cases))
      throw ConfigError("existing dataset in '" + dir.string() + "' was generated from a different synth spec");
    return m;
  }
  spdlog::info("generating {} synthetic cases into {}", cfg.synth->n_cases, dir.string());
  return generate_dataset(*cfg.synth, dir);
}

std::vector<std::string> case_ids(const Manifest& m) {
  std::vector<std::string> ids;
  for (const auto& e : m.cases) ids.push_back(e.id);
  return ids;
}

// Splits are computed once per output directory so every model sees the same folds.
Splits resolve_splits(const ExperimentConfig& cfg, const Manifest& m) {
  const fs::path path = cfg.output_dir / "splits.json";
  Splits fresh = make_splits(case_ids(m), cfg.split);
  if (fs::exists(path)) {
    Splits stored = read_json(path).get<Splits>();
    if (!(stored.spec == cfg.split))
      throw ConfigError("'" + path.string() + "' was written for a different split spec (n_folds, validation_fraction or seed)");
    if (json(stored).dump() != json(fresh).dump())
      throw ConfigError("'" + path.string() + "' does not match the dataset's case ids");
    return stored;
  }
  write_json(fresh, path);
  spdlog::info("wrote {}", path.string());
  return fresh;
}

fs::path model_dir(const ExperimentConfig& cfg) {
  std::string name = cfg.name();
  for (char& ch : name)
    if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
  return cfg.output_dir / name / ("fold" + std::to_string(cfg.fold));
}

// ---- commands ----------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::optional<int> cases;
  std::optional<int> size;
  std::optional<double> activity_free;
  std::optional<double> mean_active;
  std::optional<double> misalignment;
  std::optional<double> radius_max;
  std::optional<int> baseline_lesions;
};

int cmd_synth(const SynthArgs& a) {
  const json j = load_config_json(a.common);
  DatasetSpec spec;
  fs::path out = a.common.out;
  if (j.contains("dataset") && j["dataset"].is_object() && j["dataset"].contains("synth")) {
    spec = j["dataset"]["synth"].get<DatasetSpec>();
    if (out.empty()) out = j.at("output_dir").get<std::string>() + "/data";
  }
  if (out.empty()) throw UsageError("synth: --out is required without a config");
  if (a.common.seed) spec.seed = *a.common.seed;
  if (a.cases) spec.n_cases = *a.cases;
  if (a.size) spec.phantom.shape = {*a.size, *a.size, *a.size};
  if (a.activity_free) spec.activity_free_fraction = *a.activity_free;
  if (a.mean_active) spec.mean_active_lesions = *a.mean_active;
  if (a.misalignment) spec.phantom.misalignment_mm = *a.misalignment;
  if (a.baseline_lesions) spec.phantom.n_baseline_lesions = *a.baseline_lesions;
  if (a.radius_max) {
    spec.phantom.lesion_radius_max_mm = *a.radius_max;
    spec.phantom.lesion_radius_min_mm = std::min(spec.phantom.lesion_radius_min_mm, *a.radius_max);
  }
  if (spec.n_cases < 1) throw UsageError("synth: number of cases must be positive");
  spec.phantom.validate();
  const Manifest m = generate_dataset(spec, out);
  spdlog::info("generated {} cases", m.cases.size());
  std::cout << (out / "manifest.json").string() << '\n';
  return 0;
}

struct PreprocessArgs {
  Common common;
  std::string in;
  std::optional<double> spacing;
  bool no_standardize = false;
};

int cmd_preprocess(const PreprocessArgs& a) {
  if (a.common.out.empty()) throw UsageError("preprocess: --out is required");
  json j = load_config_json(a.common);
  PreprocessConfig pre = j.contains("preprocess") ? j["preprocess"].get<PreprocessConfig>() : PreprocessConfig{};
  if (a.spacing) pre.target_spacing = Eigen::Vector3d::Constant(*a.spacing);
  if (a.no_standardize) pre.standardize = false;
  fs::path in = a.in;
  if (in.empty()) {
    if (!j.contains("dataset")) throw UsageError("preprocess: --in or a config with a dataset is required");
    in = j.get<ExperimentConfig>().dataset_dir();
  }
  if (!fs::exists(in / "manifest.json")) throw ConfigError("dataset directory '" + in.string() + "' has no manifest.json");
  const Manifest m = preprocess_dataset(in, a.common.out, pre);
  spdlog::info("preprocessed {} cases", m.cases.size());
  std::cout << (fs::path(a.common.out) / "manifest.json").string() << '\n';
  return 0;
}

struct TrainArgs {
  Common common;
  std::optional<int> epochs;
  std::optional<int> fold;
  std::string name;
  std::string resume;
};

int cmd_train(const TrainArgs& a) {
  json j = load_config_json(a.common);
  if (a.epochs) j["train"]["epochs"] = *a.epochs;
  if (a.fold) j["fold"] = *a.fold;
  if (!a.name.empty()) j["model_name"] = a.name;
  ExperimentConfig cfg = j.get<ExperimentConfig>();
  cfg.validate();

  const Manifest manifest = resolve_dataset(cfg);
  const Splits splits = resolve_splits(cfg, manifest);
  const Fold& fold = splits.folds.at(static_cast<std::size_t>(cfg.fold));
  const auto cases = load_prepared(cfg.dataset_dir(), manifest, fold.train, cfg.preprocess, cfg.eval);
  spdlog::info("training {} on fold {} ({} cases)", cfg.name(), cfg.fold, cases.size());

  const fs::path dir = model_dir(cfg);
  fs::create_directories(dir);
  const fs::path ckpt = dir / "model.ckpt";
  write_json(cfg, dir / "config.json");
  const json extra = {{"experiment", cfg}, {"model_name", cfg.name()}, {"fold", cfg.fold}};

  std::optional<nn::Network<float>> net;
  nn::AdamState<float> state;
  int start_epoch = 0;
  if (!a.resume.empty()) {
    nn::CheckpointInfo info;
    net.emplace(nn::load_checkpoint<float>(a.resume, &info, &state, cfg.model));
    start_epoch = info.epoch;
    spdlog::info("resuming from {} at epoch {}", a.resume, start_epoch);
  } else {
    net.emplace(cfg.model, cfg.seed);
  }
  Trainer<float> trainer(*net, cfg.train);
  if (!a.resume.empty()) trainer.resume(start_epoch, state);

  const TrainingLog log = trainer.run(training_cases(cases), [&](int epoch, const Trainer<float>& t) {
    spdlog::info("epoch {}/{} lr {:.3g}", epoch, cfg.train.epochs, cfg.train.learning_rate(epoch - 1));
    if (cfg.train.checkpoint_every > 0 && epoch % cfg.train.checkpoint_every == 0 && epoch < cfg.train.epochs)
      nn::save_checkpoint(ckpt, t.network(), epoch, &t.optimizer_state(), extra);
  });
  nn::save_checkpoint(ckpt, *net, trainer.completed_epochs(), &trainer.optimizer_state(), extra);

  const fs::path csv = dir / "log.csv";
  if (start_epoch > 0 && fs::exists(csv)) {
    const fs::path tmp = dir / "log.part.csv";
    log.write_csv(tmp);
    std::ifstream in(tmp);
    std::ofstream out(csv, std::ios::app);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) out << line << '\n';
    in.close();
    fs::remove(tmp);
  } else {
    log.write_csv(csv);
  }
  if (!log.epoch_mean_loss.empty()) spdlog::info("final epoch mean loss {:.4f}", log.epoch_mean_loss.back());
  std::cout << ckpt.string() << '\n';
  return 0;
}

struct InferArgs {
  Common common;
  std::string checkpoint, baseline, followup, format = ".lvol";
  std::optional<double> threshold;
  std::optional<int> tile, grid, threads;
  bool no_preprocess = false;
};

int cmd_infer(const InferArgs& a) {
  if (a.common.out.empty()) throw UsageError("infer: --out is required");
  nn::CheckpointInfo info;
  const nn::Network<float> net = nn::load_checkpoint<float>(a.checkpoint, &info);
  json j = info.extra.contains("experiment") ? info.extra["experiment"] : json::object();
  if (!a.common.config.empty()) j.update(load_config_json(Common{std::nullopt, a.common.config, "", {}}));
  for (const auto& s : a.common.sets) apply_set(j, s);
  ExperimentConfig cfg = j.get<ExperimentConfig>();
  if (a.tile) cfg.tiling.tile = {*a.tile, *a.tile, *a.tile};
  if (a.grid) cfg.tiling.grid = {*a.grid, *a.grid, *a.grid};
  if (a.threads) cfg.tiling.threads = *a.threads;
  cfg.tiling.validate();
  const double t = a.threshold.value_or(cfg.eval.fixed_threshold.value_or(0.5));
  if (!(t > 0.0 && t < 1.0)) throw UsageError("infer: threshold must lie in (0,1)");

  const bool single = net.config().is_single_scan();
  if (a.baseline.empty() && !single) throw UsageError("infer: this model needs --baseline and --followup");
  PreprocessConfig pre = a.no_preprocess ? PreprocessConfig{std::nullopt, false} : cfg.preprocess;
  auto load = [&](const std::string& path) {
    Volume v = read_volume(path);
    if (pre.target_spacing) v = resample(v, *pre.target_spacing);
    return pre.standardize ? standardize(v) : v;
  };
  const fs::path out = a.common.out;
  fs::create_directories(out);
  const std::string ext = a.format;
  if (single && a.baseline.empty()) {
    const Volume prob = predict_scan(net, load(a.followup), cfg.tiling);
    write_volume(prob, out / ("prob" + ext));
    write_volume(threshold(prob, t), out / ("mask" + ext));
  } else if (single) {
    const Volume bl = predict_scan(net, load(a.baseline), cfg.tiling);
    const Volume fu = predict_scan(net, load(a.followup), cfg.tiling);
    write_volume(bl, out / ("prob_baseline" + ext));
    write_volume(fu, out / ("prob_followup" + ext));
    write_volume(stp_difference(bl, fu, t, cfg.eval.min_volume_ml), out / ("mask" + ext));
  } else {
    ScanPair p{load(a.baseline), load(a.followup), {}, std::nullopt, std::nullopt};
    p.validate();
    const Volume prob = predict_volume(net, p, cfg.tiling);
    Volume mask = threshold(prob, t);
    if (cfg.eval.filter_small_lesions) mask = filter_small_lesions(mask, cfg.eval.min_volume_ml);
    write_volume(prob, out / ("prob" + ext));
    write_volume(mask, out / ("mask" + ext));
  }
  spdlog::info("threshold {} ({} model)", t, net.config().label());
  std::cout << out.string() << '\n';
  return 0;
}

// Fields of the data pipeline that must agree between a checkpoint and the evaluation config.
std::vector<std::string> pipeline_differences(const json& trained, const ExperimentConfig& cfg) {
  std::vector<std::string> diffs;
  const json now = cfg;
  for (const char* key : {"preprocess", "split", "fold", "dataset"})
    if (trained.contains(key) && trained.at(key) != now.at(key)) diffs.push_back(key);
  return diffs;
}

CaseMetrics pool(const std::vector<CaseMetrics>& cases) {
  CaseMetrics out;
  std::vector<double> ltprs, lfprs;
  for (const auto& c : cases) {
    if (c.ltpr) ltprs.push_back(*c.ltpr);
    lfprs.push_back(c.lfpr);
    out.lesion_dices.insert(out.lesion_dices.end(), c.lesion_dices.begin(), c.lesion_dices.end());
    out.n_gt += c.n_gt;
    out.n_pred += c.n_pred;
    out.n_tp += c.n_tp;
    out.n_fp += c.n_fp;
  }
  if (!ltprs.empty()) out.ltpr = mean(ltprs);
  if (!lfprs.empty()) out.lfpr = mean(lfprs);
  return out;
}

void print_summary(const EvalReport& r) {
  std::cout << std::left << std::setw(22) << "model" << std::right << std::setw(8) << "thr" << std::setw(10) << "dice"
            << std::setw(10) << "LTPR" << std::setw(10) << "LFPR" << '\n';
  std::cout << std::fixed << std::setprecision(3);
  for (const auto& m : r.models)
    std::cout << std::left << std::setw(22) << m.model << std::right << std::setw(8) << m.threshold << std::setw(10)
              << m.summary.dice.mean << std::setw(10) << m.summary.ltpr.mean << std::setw(10) << m.summary.lfpr.mean << '\n';
  if (r.interrater) {
    const AggregateMetrics a = aggregate(r.interrater_cases);
    std::cout << std::left << std::setw(22) << "interrater" << std::right << std::setw(8) << "-" << std::setw(10)
              << a.dice.mean << std::setw(10) << a.ltpr.mean << std::setw(10) << a.lfpr.mean << '\n';
  }
  for (const auto& c : r.comparisons) {
    std::cout << c.model_a << " vs " << c.model_b << " [" << c.metric << "] ";
    if (c.result) {
      std::cout << "p=" << std::setprecision(4) << c.result->p_value << (c.result->significant ? " *" : "") << '\n';
    } else {
      std::cout << "n/a (" << c.note << ")\n";
    }
    std::cout << std::setprecision(3);
  }
  std::cout.unsetf(std::ios::floatfield);
}

struct EvalArgs {
  Common common;
  std::vector<std::string> checkpoints;
  std::optional<int> fold;
  std::string report_dir;
};

int cmd_eval(const EvalArgs& a) {
  json j = load_config_json(a.common);
  if (a.fold) j["fold"] = *a.fold;
  ExperimentConfig cfg = j.get<ExperimentConfig>();
  cfg.validate();
  const Manifest manifest = resolve_dataset(cfg);
  const Splits splits = resolve_splits(cfg, manifest);
  const Fold& fold = splits.folds.at(static_cast<std::size_t>(cfg.fold));

  struct Loaded {
    std::string name;
    nn::Network<float> net;
  };
  std::vector<Loaded> models;
  for (const auto& path : a.checkpoints) {
    nn::CheckpointInfo info;
    nn::Network<float> net = nn::load_checkpoint<float>(path, &info);
    if (info.extra.contains("experiment")) {
      const auto diffs = pipeline_differences(info.extra["experiment"], cfg);
      if (!diffs.empty()) {
        std::string list;
        for (const auto& d : diffs) list += (list.empty() ? "" : ", ") + d;
        throw ConfigError("checkpoint '" + path + "' was trained with a different " + list);
      }
    }
    std::string name = info.extra.value("model_name", net.config().label());
    for (const auto& m : models)
      if (m.name == name) name += " (" + path + ")";
    models.push_back({name, std::move(net)});
  }

  const auto validation = load_prepared(cfg.dataset_dir(), manifest, fold.validation, cfg.preprocess, cfg.eval);
  const auto test = load_prepared(cfg.dataset_dir(), manifest, fold.test, cfg.preprocess, cfg.eval);
  std::vector<Volume> val_truth, test_truth;
  for (const auto& c : validation) val_truth.push_back(c.truth);
  for (const auto& c : test) test_truth.push_back(c.truth);

  EvalReport report;
  report.config_hash = config_hash(json(cfg));
  for (const auto& m : models) {
    spdlog::info("evaluating {} on {} validation / {} test cases", m.name, validation.size(), test.size());
    std::vector<CasePrediction> pv, pt;
    for (const auto& c : validation) pv.push_back(predict_case(m.net, c, cfg.tiling));
    for (const auto& c : test) pt.push_back(predict_case(m.net, c, cfg.tiling));
    report.models.push_back(evaluate_predictions(m.name, pv, val_truth, pt, test_truth, cfg.eval));
  }
  for (const auto& c : test) {
    if (c.raters.size() < 2) continue;
    report.interrater_case_ids.push_back(c.id);
    report.interrater_cases.push_back(interrater(c.raters, cfg.eval.filter_small_lesions, cfg.eval.min_volume_ml));
  }
  if (!report.interrater_cases.empty()) report.interrater = pool(report.interrater_cases);
  report.comparisons = compare_models(report.models, cfg.eval.metrics, cfg.eval.alpha);

  const fs::path dir = a.report_dir.empty() ? cfg.output_dir / ("report_fold" + std::to_string(cfg.fold)) : fs::path(a.report_dir);
  write_report_bundle(report, dir);
  print_summary(report);
  std::cout << (dir / "report.json").string() << '\n';
  return 0;
}

int cmd_roc(const std::string& report_path, const std::string& out) {
  const EvalReport r = read_report(report_path);
  const fs::path dir = out.empty() ? fs::path(report_path).parent_path() : fs::path(out);
  fs::create_directories(dir);
  for (const auto& m : r.models) {
    std::string stem = m.model;
    for (char& ch : stem)
      if (!std::isalnum(static_cast<unsigned char>(ch))) ch = '_';
    write_sweep_csv(m.test_sweep, dir / ("roc_" + stem + ".csv"));
  }
  write_roc_svg(r, dir / "roc.svg");
  std::cout << (dir / "roc.svg").string() << '\n';
  return 0;
}

int cmd_stats(const std::string& report_path, std::vector<std::string> metrics, double alpha, const std::string& out) {
  EvalReport r = read_report(report_path);
  if (metrics.empty()) metrics = {"dice", "ltpr", "lfpr"};
  r.comparisons = compare_models(r.models, metrics, alpha);
  std::cout << "model_a,model_b,metric,n,statistic,p,significant\n";
  for (const auto& c : r.comparisons) {
    std::cout << c.model_a << ',' << c.model_b << ',' << c.metric << ',';
    if (c.result) {
      std::cout << c.result->n_used << ',' << c.result->statistic << ',' << c.result->p_value << ','
                << (c.result->significant ? "true" : "false") << '\n';
    } else {
      std::cout << "0,nan,nan,false\n";
    }
  }
  if (!out.empty()) write_comparisons_csv(r.comparisons, out);
  return 0;
}

int cmd_report(const std::string& report_path, const std::string& out) {
  const EvalReport r = read_report(report_path);
  const fs::path dir = out.empty() ? fs::path(report_path).parent_path() : fs::path(out);
  write_report_bundle(r, dir);
  print_summary(r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lesion activity segmentation experiments"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic longitudinal dataset");
  add_common(c_synth, synth.common);
  c_synth->add_option("--cases", synth.cases, "Number of cases")->check(CLI::PositiveNumber);
  c_synth->add_option("--size", synth.size, "Cubic volume extent in voxels")->check(CLI::PositiveNumber);
  c_synth->add_option("--activity-free", synth.activity_free, "Fraction of cases without activity")->check(CLI::Range(0.0, 1.0));
  c_synth->add_option("--mean-active", synth.mean_active, "Mean active lesions per active case")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--misalignment", synth.misalignment, "Follow-up misregistration (mm)")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--baseline-lesions", synth.baseline_lesions, "Lesions present at baseline")->check(CLI::NonNegativeNumber);
  c_synth->add_option("--radius-max", synth.radius_max, "Largest lesion radius (mm)")->check(CLI::PositiveNumber);

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Resample and standardize a dataset");
  add_common(c_pre, pre.common);
  c_pre->add_option("--in", pre.in, "Input dataset directory");
  c_pre->add_option("--spacing", pre.spacing, "Isotropic target spacing (mm)")->check(CLI::PositiveNumber);
  c_pre->add_flag("--no-standardize", pre.no_standardize, "Skip intensity standardization");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model on one fold");
  add_common(c_train, train.common);
  c_train->add_option("--epochs", train.epochs, "Total epochs")->check(CLI::PositiveNumber);
  c_train->add_option("--fold", train.fold, "Fold index")->check(CLI::NonNegativeNumber);
  c_train->add_option("--name", train.name, "Model name");
  c_train->add_option("--resume", train.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Tiled inference on one scan pair");
  add_common(c_infer, infer.common);
  c_infer->add_option("--checkpoint", infer.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--baseline", infer.baseline, "Baseline scan")->check(CLI::ExistingFile);
  c_infer->add_option("--followup", infer.followup, "Follow-up scan")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--threshold", infer.threshold, "Binarization threshold");
  c_infer->add_option("--tile", infer.tile, "Cubic tile extent")->check(CLI::PositiveNumber);
  c_infer->add_option("--grid", infer.grid, "Tiles per axis")->check(CLI::PositiveNumber);
  c_infer->add_option("--threads", infer.threads, "Worker threads")->check(CLI::PositiveNumber);
  c_infer->add_option("--format", infer.format, "Output extension")->check(CLI::IsMember({".lvol", ".nii", ".nii.gz"}));
  c_infer->add_flag("--no-preprocess", infer.no_preprocess, "Inputs are already preprocessed");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate checkpoints on a fold's test split");
  add_common(c_eval, ev.common);
  c_eval->add_option("checkpoints", ev.checkpoints, "Model checkpoints")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--fold", ev.fold, "Fold index")->check(CLI::NonNegativeNumber);
  c_eval->add_option("--report-dir", ev.report_dir, "Report directory");

  std::string report_path, stats_out;
  std::vector<std::string> stats_metrics;
  double alpha = 0.05;
  Common roc_common, report_common;
  auto* c_roc = app.add_subcommand("roc", "ROC sweep CSV and plot from a report");
  c_roc->add_option("--report", report_path, "report.json")->required()->check(CLI::ExistingFile);
  c_roc->add_option("--out", roc_common.out, "Output directory");
  auto* c_stats = app.add_subcommand("stats", "Pairwise Wilcoxon tests from a report");
  c_stats->add_option("--report", report_path, "report.json")->required()->check(CLI::ExistingFile);
  c_stats->add_option("--metric", stats_metrics, "Metrics to compare")->check(CLI::IsMember({"dice", "ltpr", "lfpr"}));
  c_stats->add_option("--alpha", alpha, "Significance level")->check(CLI::Range(0.0, 1.0));
  c_stats->add_option("--out", stats_out, "Comparisons CSV");
  auto* c_report = app.add_subcommand("report", "Rewrite CSV and plots from report.json");
  c_report->add_option("--report", report_path, "report.json")->required()->check(CLI::ExistingFile);
  c_report->add_option("--out", report_common.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  log_setup();
  try {
    if (*c_synth) return cmd_synth(synth);
    if (*c_pre) return cmd_preprocess(pre);
    if (*c_train) return cmd_train(train);
    if (*c_infer) return cmd_infer(infer);
    if (*c_eval) return cmd_eval(ev);
    if (*c_roc) return cmd_roc(report_path, roc_common.out);
    if (*c_stats) return cmd_stats(report_path, stats_metrics, alpha, stats_out);
    if (*c_report) return cmd_report(report_path, report_common.out);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const TrainingError& e) {
    spdlog::error("training aborted: {}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
