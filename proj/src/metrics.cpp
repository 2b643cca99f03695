#include "lesact/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lesact/errors.hpp"
#include "lesact/preprocess.hpp"

namespace lesact {

std::optional<double> CaseMetrics::dice() const {
  if (lesion_dices.empty()) return std::nullopt;
  return mean(lesion_dices);
}

CaseMetrics lesion_rates(const LesionSet& pred, const LesionSet& gt) {
  if (pred.shape != gt.shape) throw InvalidArgument("lesion_rates: prediction and ground truth shapes differ");
  CaseMetrics m;
  m.n_gt = static_cast<Index>(gt.count());
  m.n_pred = static_cast<Index>(pred.count());

  std::vector<int> touched;  // predicted component ids hit by the current lesion
  for (const auto& lesion : gt.components) {
    touched.clear();
    Index overlap = 0;
    for (Index v : lesion) {
      const int id = pred.labels[static_cast<std::size_t>(v)];
      if (id == 0) continue;
      ++overlap;
      touched.push_back(id);
    }
    if (overlap == 0) continue;
    ++m.n_tp;
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    Index union_size = 0;
    for (int id : touched) union_size += static_cast<Index>(pred.components[static_cast<std::size_t>(id - 1)].size());
    m.lesion_dices.push_back(2.0 * static_cast<double>(overlap) /
                             static_cast<double>(static_cast<Index>(lesion.size()) + union_size));
  }
  for (const auto& comp : pred.components) {
    const bool hit = std::any_of(comp.begin(), comp.end(), [&](Index v) { return gt.labels[static_cast<std::size_t>(v)] != 0; });
    if (!hit) ++m.n_fp;
  }
  if (m.n_gt > 0) m.ltpr = static_cast<double>(m.n_tp) / static_cast<double>(m.n_gt);
  m.lfpr = m.n_pred > 0 ? static_cast<double>(m.n_fp) / static_cast<double>(m.n_pred) : 0.0;
  return m;
}

CaseMetrics lesion_rates(const Volume& pred, const Volume& gt) {
  if (pred.shape() != gt.shape()) throw InvalidArgument("lesion_rates: prediction and ground truth shapes differ");
  return lesion_rates(connected_components(pred), connected_components(gt));
}

Volume majority_vote(const std::vector<Volume>& masks) {
  if (masks.empty()) throw InvalidArgument("majority_vote: no masks");
  Eigen::ArrayXf votes = Eigen::ArrayXf::Zero(masks.front().size());
  for (const auto& m : masks) {
    if (m.shape() != masks.front().shape()) throw InvalidArgument("majority_vote: mask shapes differ");
    require_binary(m, "majority_vote input");
    votes += m.data();
  }
  const float need = static_cast<float>(masks.size()) / 2.0f;
  return Volume::like(masks.front(), VolumeKind::label, (votes > need).cast<float>());
}

AggregateMetrics aggregate(const std::vector<CaseMetrics>& cases) {
  if (cases.empty()) throw InvalidArgument("aggregate: no cases");
  std::vector<double> dice, ltpr, lfpr;
  AggregateMetrics out;
  for (const auto& c : cases) {
    if (auto d = c.dice()) dice.push_back(*d);
    if (c.ltpr) ltpr.push_back(*c.ltpr);
    lfpr.push_back(c.lfpr);
    out.n_tp += c.n_tp;
    out.n_fp += c.n_fp;
  }
  out.n_cases = static_cast<Index>(cases.size());
  out.dice = summarize(dice);
  out.ltpr = summarize(ltpr);
  out.lfpr = summarize(lfpr);
  return out;
}

CaseMetrics interrater(const std::vector<Volume>& raters, bool filter_small, double min_volume_ml) {
  if (raters.size() < 2) throw InvalidArgument("interrater: need at least two raters");
  std::vector<LesionSet> sets;
  for (const auto& r : raters) sets.push_back(connected_components(filter_small ? filter_small_lesions(r, min_volume_ml) : r));
  CaseMetrics out;
  std::vector<double> ltprs, lfprs;
  for (std::size_t i = 0; i < sets.size(); ++i)
    for (std::size_t j = 0; j < sets.size(); ++j) {
      if (i == j) continue;
      const CaseMetrics m = lesion_rates(sets[i], sets[j]);
      if (m.ltpr) ltprs.push_back(*m.ltpr);
      lfprs.push_back(m.lfpr);
      out.lesion_dices.insert(out.lesion_dices.end(), m.lesion_dices.begin(), m.lesion_dices.end());
      out.n_gt += m.n_gt;
      out.n_pred += m.n_pred;
      out.n_tp += m.n_tp;
      out.n_fp += m.n_fp;
    }
  if (!ltprs.empty()) out.ltpr = mean(ltprs);
  out.lfpr = mean(lfprs);
  return out;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 99; ++i) grid.push_back(i / 100.0);
  return grid;
}

std::vector<SweepPoint> threshold_sweep(const std::vector<Volume>& gt, const MaskAtThreshold& mask_at,
                                        const std::vector<double>& grid, bool filter_small, double min_volume_ml) {
  if (gt.empty()) throw InvalidArgument("threshold sweep: no cases");
  if (grid.empty()) throw InvalidArgument("threshold sweep: empty threshold grid");
  for (double t : grid)
    if (!(t > 0.0 && t < 1.0)) throw InvalidArgument("threshold sweep: thresholds must lie in (0,1)");
  std::vector<LesionSet> gt_sets;
  for (const auto& g : gt) gt_sets.push_back(connected_components(g));

  std::vector<SweepPoint> out;
  for (double t : grid) {
    double ltpr_sum = 0.0, lfpr_sum = 0.0;
    int ltpr_n = 0;
    for (std::size_t c = 0; c < gt.size(); ++c) {
      Volume mask = mask_at(c, t);
      if (filter_small) mask = filter_small_lesions(mask, min_volume_ml);
      const CaseMetrics m = lesion_rates(connected_components(mask), gt_sets[c]);
      if (m.ltpr) {
        ltpr_sum += *m.ltpr;
        ++ltpr_n;
      }
      lfpr_sum += m.lfpr;
    }
    SweepPoint p;
    p.t = t;
    p.ltpr = ltpr_n > 0 ? ltpr_sum / ltpr_n : 0.0;
    p.lfpr = lfpr_sum / static_cast<double>(gt.size());
    p.objective = p.ltpr + 1.0 - p.lfpr;
    out.push_back(p);
  }
  return out;
}

const SweepPoint& best_point(const std::vector<SweepPoint>& sweep) {
  if (sweep.empty()) throw InvalidArgument("best_point: empty sweep");
  const SweepPoint* best = &sweep.front();
  for (const auto& p : sweep)
    if (p.objective > best->objective || (p.objective == best->objective && p.t > best->t)) best = &p;
  return *best;
}

double select_threshold(const std::vector<Volume>& gt, const MaskAtThreshold& mask_at, const std::vector<double>& grid,
                        bool filter_small, double min_volume_ml) {
  return best_point(threshold_sweep(gt, mask_at, grid, filter_small, min_volume_ml)).t;
}

double select_threshold(const std::vector<Volume>& prob_maps, const std::vector<Volume>& gt,
                        const std::vector<double>& grid, bool filter_small, double min_volume_ml) {
  if (prob_maps.size() != gt.size()) throw InvalidArgument("select_threshold: probability maps and truths differ in count");
  if (prob_maps.empty()) throw InvalidArgument("select_threshold: no cases");
  return select_threshold(
      gt,
      [&](std::size_t i, double t) {
        const float tf = static_cast<float>(t);
        return Volume::like(prob_maps[i], VolumeKind::label, (prob_maps[i].data() >= tf).cast<float>());
      },
      grid, filter_small, min_volume_ml);
}

}  // namespace lesact
