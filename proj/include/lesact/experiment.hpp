#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lesact/inference.hpp"
#include "lesact/metrics.hpp"
#include "lesact/nn/network.hpp"
#include "lesact/synthgen.hpp"
#include "lesact/trainer.hpp"

namespace lesact {

struct SplitSpec {
  int n_folds = 3;
  double validation_fraction = 0.5;  // of each held-out fold
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

struct Fold {
  std::vector<std::string> train, validation, test;
};

/// Seeded case-level k-fold split: fold k holds out partition k, divided
/// into validation and test; the remaining partitions train.
struct Splits {
  SplitSpec spec;
  std::vector<Fold> folds;
};

Splits make_splits(const std::vector<std::string>& case_ids, const SplitSpec& spec);

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);
void to_json(nlohmann::json& j, const Splits& s);
void from_json(const nlohmann::json& j, Splits& s);

enum class TruthSource { fused, stored };

struct EvalConfig {
  std::vector<double> thresholds = default_threshold_grid();
  std::optional<double> fixed_threshold;  // skip validation-based selection
  bool filter_small_lesions = true;
  double min_volume_ml = 0.01;
  /// `fused`: majority vote of the rater masks when present, else the stored truth.
  TruthSource truth = TruthSource::fused;
  std::vector<std::string> metrics{"dice", "ltpr", "lfpr"};  // compared by Wilcoxon
  double alpha = 0.05;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct PreprocessConfig {
  std::optional<Eigen::Vector3d> target_spacing = Eigen::Vector3d::Ones();
  bool standardize = true;
};

void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs";
  std::optional<std::filesystem::path> dataset_path;  // existing dataset directory
  std::optional<DatasetSpec> synth;                   // or generate into output_dir/data
  PreprocessConfig preprocess;
  SplitSpec split;
  int fold = 0;
  std::string model_name;  // defaults to the network label
  nn::NetworkConfig model;
  TrainConfig train;
  TilingConfig tiling;
  EvalConfig eval;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
  std::string name() const { return model_name.empty() ? model.label() : model_name; }
  std::filesystem::path dataset_dir() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig read_experiment_config(const std::filesystem::path& path);

/// Hex FNV-1a hash of the canonical JSON dump.
std::string config_hash(const nlohmann::json& j);

/// A case ready for training or evaluation: resampled and standardized
/// scans, lesion masks, the ground truth used for scoring and the raters.
struct PreparedCase {
  std::string id;
  ScanPair pair;
  Volume truth;
  std::vector<Volume> raters;
};

PreparedCase prepare_case(std::string id, ScanPair pair, std::optional<Volume> stored_truth,
                          const PreprocessConfig& pre, const EvalConfig& eval);

/// Load and prepare manifest cases; `ids` selects a subset (all when empty).
/// Datasets marked as preprocessed are not resampled or standardized again.
std::vector<PreparedCase> load_prepared(const std::filesystem::path& root, const Manifest& manifest,
                                        const std::vector<std::string>& ids, const PreprocessConfig& pre,
                                        const EvalConfig& eval);

/// Resample and standardize every case of the dataset at `in` and write the
/// result, with the same layout, to `out` (manifest marked as preprocessed).
Manifest preprocess_dataset(const std::filesystem::path& in, const std::filesystem::path& out, const PreprocessConfig& pre);

std::vector<TrainingCase> training_cases(const std::vector<PreparedCase>& cases);

/// Per-case network outputs from which binary masks at any threshold follow.
/// Joint models keep one activity probability map; per-scan models keep the
/// baseline and follow-up lesion probability maps.
struct CasePrediction {
  std::string id;
  std::optional<Volume> activity;
  std::optional<Volume> baseline, followup;

  /// Thresholded prediction before small-lesion filtering; per-scan models
  /// give M_FU AND NOT M_BL.
  Volume mask(double t) const;
};

CasePrediction predict_case(const nn::Network<float>& net, const PreparedCase& c, const TilingConfig& tiling);

struct ModelEvaluation {
  std::string model;
  double threshold = 0.5;
  std::vector<SweepPoint> validation_sweep;  // empty with a fixed threshold
  std::vector<SweepPoint> test_sweep;
  std::vector<std::string> case_ids;  // test cases
  std::vector<CaseMetrics> cases;
  AggregateMetrics summary;
};

/// Select the threshold on validation predictions (unless fixed), then score
/// the test predictions at that threshold.
ModelEvaluation evaluate_predictions(const std::string& model, const std::vector<CasePrediction>& validation,
                                     const std::vector<Volume>& validation_truth,
                                     const std::vector<CasePrediction>& test, const std::vector<Volume>& test_truth,
                                     const EvalConfig& eval);

}  // namespace lesact
