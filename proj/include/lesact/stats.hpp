#pragma once

#include <span>
#include <vector>

namespace lesact {

/// Linear-interpolation percentile between order statistics
/// (position q/100 * (n-1) in the sorted sample). q in [0,100].
double percentile(std::span<const double> values, double q);
double mean(std::span<const double> values);

struct SummaryStats {
  double mean = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  std::size_t n = 0;
};

SummaryStats summarize(std::span<const double> values);

struct WilcoxonResult {
  double statistic = 0.0;  // W+, sum of ranks of positive differences
  double p_value = 1.0;
  bool significant = false;
  std::size_t n_used = 0;  // pairs with nonzero difference
  bool exact = false;
};

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped; tied magnitudes receive mid-ranks. For up to
/// 12 nonzero differences the p-value is exact (enumeration of all sign
/// assignments); above that a normal approximation with tie and continuity
/// correction is used. All-zero differences give p = 1. Fewer than 5 nonzero
/// differences (but at least one) is an InvalidArgument.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y, double alpha = 0.05);

/// Same test forcing one code path (exact enumeration or normal approximation).
WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> x, std::span<const double> y, double alpha = 0.05);
WilcoxonResult wilcoxon_signed_rank_normal(std::span<const double> x, std::span<const double> y, double alpha = 0.05);

/// Null distribution of W+ for the given ranks (twice the ranks, so mid-ranks
/// stay integral): entry k is P(2*W+ == k) under random signs.
std::vector<double> signed_rank_null_distribution(std::span<const double> ranks);

}  // namespace lesact
