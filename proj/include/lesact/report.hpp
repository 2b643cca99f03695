#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lesact/experiment.hpp"
#include "lesact/metrics.hpp"
#include "lesact/stats.hpp"

namespace lesact {

struct Comparison {
  std::string model_a, model_b, metric;
  std::optional<WilcoxonResult> result;  // empty when too few paired values
  std::string note;
};

struct EvalReport {
  std::string config_hash;
  std::vector<ModelEvaluation> models;
  std::optional<CaseMetrics> interrater;  // pooled over test cases
  std::vector<std::string> interrater_case_ids;
  std::vector<CaseMetrics> interrater_cases;
  std::vector<Comparison> comparisons;
};

/// Paired per-case values of `metric` ("dice", "ltpr", "lfpr") for cases where
/// both models define it.
std::pair<std::vector<double>, std::vector<double>> paired_values(const ModelEvaluation& a, const ModelEvaluation& b,
                                                                  const std::string& metric);

/// One Wilcoxon comparison per metric for every pair of models.
std::vector<Comparison> compare_models(const std::vector<ModelEvaluation>& models,
                                       const std::vector<std::string>& metrics, double alpha = 0.05);

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

/// Per-case rows plus one aggregate row (case_id "ALL") per model. Columns:
/// model, case_id, dice_mean, dice_p25, dice_p75, ltpr_mean, ltpr_p25,
/// ltpr_p75, lfpr_mean, lfpr_p25, lfpr_p75, n_tp, n_fp.
void write_report_csv(const EvalReport& r, const std::filesystem::path& path);
/// Columns: model_a, model_b, metric, p, significant.
void write_comparisons_csv(const std::vector<Comparison>& c, const std::filesystem::path& path);
/// Columns: t, ltpr, lfpr, objective.
void write_sweep_csv(const std::vector<SweepPoint>& sweep, const std::filesystem::path& path);
/// Box plot (median, quartiles, 1.5 IQR whiskers) of a per-case metric for every model.
void write_boxplot_svg(const EvalReport& r, const std::string& metric, const std::filesystem::path& path);

/// LTPR against LFPR over the test threshold sweep of every model.
void write_roc_svg(const EvalReport& r, const std::filesystem::path& path);

/// Writes report.json, report.csv, comparisons.csv, roc_<model>.csv, roc.svg
/// and boxplot_<metric>.svg into `dir`.
void write_report_bundle(const EvalReport& r, const std::filesystem::path& dir);

EvalReport read_report(const std::filesystem::path& path);

/// Per-case values of a metric (undefined values skipped).
std::vector<double> metric_values(const std::vector<CaseMetrics>& cases, const std::string& metric);

}  // namespace lesact
