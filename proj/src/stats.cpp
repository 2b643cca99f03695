#include "lesact/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <numeric>

#include "lesact/errors.hpp"

namespace lesact {

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw InvalidArgument("percentile of an empty sample");
  if (q < 0.0 || q > 100.0) throw InvalidArgument("percentile rank must lie in [0,100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean of an empty sample");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

SummaryStats summarize(std::span<const double> values) {
  if (values.empty()) return {};
  return {mean(values), percentile(values, 25.0), percentile(values, 75.0), values.size()};
}

namespace {

struct SignedRanks {
  std::vector<double> ranks;  // mid-ranks of |d|
  std::vector<bool> positive;
  double tie_term = 0.0;      // sum over tie groups of (t^3 - t)
};

SignedRanks rank_differences(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("wilcoxon: samples must have equal length");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] - y[i] != 0.0) d.push_back(x[i] - y[i]);
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });

  SignedRanks out;
  out.ranks.resize(d.size());
  out.positive.resize(d.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    const auto t = static_cast<double>(j - i + 1);
    out.tie_term += t * t * t - t;
    for (std::size_t k = i; k <= j; ++k) out.ranks[order[k]] = mid;
    i = j + 1;
  }
  for (std::size_t i = 0; i < d.size(); ++i) out.positive[i] = d[i] > 0.0;
  return out;
}

double positive_rank_sum(const SignedRanks& r) {
  double w = 0.0;
  for (std::size_t i = 0; i < r.ranks.size(); ++i)
    if (r.positive[i]) w += r.ranks[i];
  return w;
}

double exact_p(const SignedRanks& r, double w) {
  const std::size_t n = r.ranks.size();
  const double total = std::accumulate(r.ranks.begin(), r.ranks.end(), 0.0);
  const double centre = total / 2.0;
  const double observed = std::abs(w - centre);
  const std::uint64_t assignments = std::uint64_t{1} << n;
  std::uint64_t extreme = 0;
  for (std::uint64_t mask = 0; mask < assignments; ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1U) s += r.ranks[i];
    if (std::abs(s - centre) >= observed - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(assignments);
}

double normal_p(const SignedRanks& r, double w) {
  const auto n = static_cast<double>(r.ranks.size());
  const double mu = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - r.tie_term / 48.0;
  if (var <= 0.0) return 1.0;
  const double dev = std::max(std::abs(w - mu) - 0.5, 0.0);
  const double z = dev / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

enum class Method { automatic, exact, normal };

WilcoxonResult run(std::span<const double> x, std::span<const double> y, double alpha, Method method) {
  const SignedRanks r = rank_differences(x, y);
  WilcoxonResult out;
  out.n_used = r.ranks.size();
  if (out.n_used == 0) return out;  // all differences zero: p = 1
  if (out.n_used < 5)
    throw InvalidArgument("wilcoxon: need at least 5 nonzero paired differences, got " + std::to_string(out.n_used));
  out.statistic = positive_rank_sum(r);
  const bool exact = method == Method::exact || (method == Method::automatic && out.n_used <= 12);
  if (exact && out.n_used > 24) throw InvalidArgument("wilcoxon: exact enumeration limited to 24 differences");
  out.exact = exact;
  out.p_value = exact ? exact_p(r, out.statistic) : normal_p(r, out.statistic);
  out.significant = out.p_value < alpha;
  return out;
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y, double alpha) {
  return run(x, y, alpha, Method::automatic);
}

WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> x, std::span<const double> y, double alpha) {
  return run(x, y, alpha, Method::exact);
}

WilcoxonResult wilcoxon_signed_rank_normal(std::span<const double> x, std::span<const double> y, double alpha) {
  return run(x, y, alpha, Method::normal);
}

std::vector<double> signed_rank_null_distribution(std::span<const double> ranks) {
  const std::size_t n = ranks.size();
  if (n > 24) throw InvalidArgument("null distribution enumeration limited to 24 ranks");
  long total2 = 0;
  std::vector<long> doubled(n);
  for (std::size_t i = 0; i < n; ++i) {
    doubled[i] = std::lround(2.0 * ranks[i]);
    total2 += doubled[i];
  }
  std::vector<double> pmf(static_cast<std::size_t>(total2) + 1, 0.0);
  const std::uint64_t assignments = std::uint64_t{1} << n;
  const double weight = 1.0 / static_cast<double>(assignments);
  for (std::uint64_t mask = 0; mask < assignments; ++mask) {
    long s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1U) s += doubled[i];
    pmf[static_cast<std::size_t>(s)] += weight;
  }
  return pmf;
}

}  // namespace lesact
