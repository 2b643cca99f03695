#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "lesact/components.hpp"
#include "lesact/stats.hpp"
#include "lesact/volume.hpp"

namespace lesact {

/// Lesion-wise metrics of one prediction against one ground truth.
struct CaseMetrics {
  std::optional<double> ltpr;       // undefined without ground-truth lesions
  double lfpr = 0.0;                // 0 without predicted lesions
  std::vector<double> lesion_dices; // one per detected ground-truth lesion
  Index n_gt = 0;
  Index n_pred = 0;
  Index n_tp = 0;  // detected ground-truth lesions
  Index n_fp = 0;  // predicted components overlapping no ground-truth lesion

  /// Mean of lesion_dices; undefined when no lesion was detected.
  std::optional<double> dice() const;
};

/// A ground-truth lesion is detected iff it shares a voxel with a predicted
/// component; a predicted component is a false positive iff it shares none
/// with the ground truth. Dice per detected lesion L uses the union of all
/// predicted components intersecting L.
CaseMetrics lesion_rates(const LesionSet& pred, const LesionSet& gt);
CaseMetrics lesion_rates(const Volume& pred, const Volume& gt);

/// Voxel = 1 iff strictly more than half of the masks mark it.
Volume majority_vote(const std::vector<Volume>& masks);

/// Mean, 25th and 75th percentile of each metric over cases. LTPR uses cases
/// with ground-truth lesions, dice uses cases with a detected lesion, LFPR
/// uses every case.
struct AggregateMetrics {
  SummaryStats dice, ltpr, lfpr;
  Index n_cases = 0;
  Index n_tp = 0;
  Index n_fp = 0;
};
AggregateMetrics aggregate(const std::vector<CaseMetrics>& cases);

/// Rater agreement of one case: metrics for every ordered pair of raters
/// (one as prediction, one as truth), averaged. Lesion dices are pooled.
CaseMetrics interrater(const std::vector<Volume>& raters, bool filter_small = true, double min_volume_ml = 0.01);

/// {0.01, 0.02, ..., 0.99}.
std::vector<double> default_threshold_grid();

/// Binary prediction of case `index` at threshold `t`.
using MaskAtThreshold = std::function<Volume(std::size_t index, double t)>;

struct SweepPoint {
  double t = 0.0;
  double ltpr = 0.0;  // mean over cases with ground-truth lesions
  double lfpr = 0.0;  // mean over all cases
  double objective = 0.0;  // ltpr + 1 - lfpr
};

/// Lesion rates at every threshold of `grid`; masks are small-lesion filtered
/// before scoring when `filter_small` is set.
std::vector<SweepPoint> threshold_sweep(const std::vector<Volume>& gt, const MaskAtThreshold& mask_at,
                                        const std::vector<double>& grid = default_threshold_grid(),
                                        bool filter_small = true, double min_volume_ml = 0.01);

/// Threshold maximising LTPR + 1 - LFPR over the sweep; ties go to the larger t.
double select_threshold(const std::vector<Volume>& gt, const MaskAtThreshold& mask_at,
                        const std::vector<double>& grid = default_threshold_grid(), bool filter_small = true,
                        double min_volume_ml = 0.01);

/// Convenience for probability maps thresholded directly.
double select_threshold(const std::vector<Volume>& prob_maps, const std::vector<Volume>& gt,
                        const std::vector<double>& grid = default_threshold_grid(), bool filter_small = true,
                        double min_volume_ml = 0.01);

/// The sweep point with the largest objective (ties to the larger t).
const SweepPoint& best_point(const std::vector<SweepPoint>& sweep);

}  // namespace lesact
