#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/analysis/distributions.hpp"
#include "neuroloop/core/error.hpp"
#include "neuroloop/core/rng.hpp"
#include "neuroloop/core/stats.hpp"

namespace neuroloop::analysis {

struct BrunnerMunzelResult {
  double statistic = 0.0;
  double df = 0.0;
  double p_two_sided = 1.0;
  double p_hat = 0.5;  // P(A < B) + P(A = B) / 2
  bool permutation = false;
  std::size_t permutations = 0;  // evaluated splits in permutation mode
  bool exhaustive = false;
};

struct PermutationOptions {
  std::size_t exhaustive_limit = 200000;  // enumerate all splits up to this many
  std::size_t resamples = 100000;
  std::uint64_t seed = 0;
};

namespace detail {

struct BmParts {
  double statistic;
  double df;
  double p_hat;
  bool degenerate;
};

// Rank-based pieces of the statistic for a split given by `in_a`, using the
// pooled sort order `order` (indices into `pooled`) and pooled midranks.
// Runs in O(n) per split.
inline BmParts bm_parts(std::span<const double> pooled, std::span<const std::size_t> order,
                        std::span<const double> pooled_rank, const std::vector<char>& in_a, std::size_t na) {
  const std::size_t n = pooled.size();
  const std::size_t nb = n - na;
  // Within-group midranks via tie blocks of the pooled order.
  thread_local std::vector<double> own_rank;
  own_rank.assign(n, 0.0);
  std::size_t seen_a = 0, seen_b = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t ka = 0, kb = 0;
    while (j < n && pooled[order[j]] == pooled[order[i]]) {
      (in_a[order[j]] ? ka : kb)++;
      ++j;
    }
    const double ra = static_cast<double>(seen_a) + (static_cast<double>(ka) + 1.0) / 2.0;
    const double rb = static_cast<double>(seen_b) + (static_cast<double>(kb) + 1.0) / 2.0;
    for (std::size_t k = i; k < j; ++k) own_rank[order[k]] = in_a[order[k]] ? ra : rb;
    seen_a += ka;
    seen_b += kb;
    i = j;
  }
  double mean_a = 0, mean_b = 0;
  for (std::size_t i = 0; i < n; ++i) (in_a[i] ? mean_a : mean_b) += pooled_rank[i];
  mean_a /= static_cast<double>(na);
  mean_b /= static_cast<double>(nb);
  const double own_mean_a = (static_cast<double>(na) + 1.0) / 2.0;
  const double own_mean_b = (static_cast<double>(nb) + 1.0) / 2.0;
  double sa = 0, sb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (in_a[i]) {
      const double d = pooled_rank[i] - own_rank[i] - mean_a + own_mean_a;
      sa += d * d;
    } else {
      const double d = pooled_rank[i] - own_rank[i] - mean_b + own_mean_b;
      sb += d * d;
    }
  }
  const auto fa = static_cast<double>(na), fb = static_cast<double>(nb);
  sa /= fa - 1.0;
  sb /= fb - 1.0;
  BmParts p{};
  p.p_hat = (mean_b - own_mean_b) / fa;
  const double var = fa * sa + fb * sb;
  // Rank variances are sums of squared half-integers; treat rounding dust as zero.
  p.degenerate = !(var > 1e-12);
  if (p.degenerate) {
    p.statistic = mean_b > mean_a ? std::numeric_limits<double>::infinity()
                                  : (mean_b < mean_a ? -std::numeric_limits<double>::infinity() : 0.0);
    p.df = std::numeric_limits<double>::quiet_NaN();
    return p;
  }
  p.statistic = fa * fb * (mean_b - mean_a) / ((fa + fb) * std::sqrt(var));
  const double df_den = (fa * sa) * (fa * sa) / (fa - 1.0) + (fb * sb) * (fb * sb) / (fb - 1.0);
  p.df = var * var / df_den;
  return p;
}

struct Pooled {
  std::vector<double> values;
  std::vector<std::size_t> order;
  std::vector<double> ranks;
};

inline Pooled pool(std::span<const double> a, std::span<const double> b) {
  Pooled p;
  p.values.assign(a.begin(), a.end());
  p.values.insert(p.values.end(), b.begin(), b.end());
  for (double v : p.values)
    if (!std::isfinite(v)) throw DataError("Brunner-Munzel samples must be finite");
  p.order.resize(p.values.size());
  std::iota(p.order.begin(), p.order.end(), std::size_t{0});
  std::stable_sort(p.order.begin(), p.order.end(),
                   [&](std::size_t i, std::size_t j) { return p.values[i] < p.values[j]; });
  p.ranks = midranks(p.values);
  return p;
}

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace detail

/// Brunner-Munzel test of A against B with Satterthwaite degrees of freedom
/// and a two-sided p-value from the t distribution. A positive statistic
/// means B tends to be larger.
inline BrunnerMunzelResult brunner_munzel(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw PreconditionError("Brunner-Munzel needs at least two values per sample");
  const auto pooled = detail::pool(a, b);
  std::vector<char> in_a(pooled.values.size(), 0);
  std::fill(in_a.begin(), in_a.begin() + static_cast<std::ptrdiff_t>(a.size()), 1);
  const auto parts = detail::bm_parts(pooled.values, pooled.order, pooled.ranks, in_a, a.size());
  if (parts.degenerate)
    throw DegenerateVarianceError(
        "Brunner-Munzel rank variance is zero in both samples; use permutation mode for an exact p-value");
  BrunnerMunzelResult r;
  r.statistic = parts.statistic;
  r.df = parts.df;
  r.p_hat = parts.p_hat;
  const double cdf = student_t_cdf(parts.statistic, parts.df);
  r.p_two_sided = std::min(1.0, 2.0 * std::min(cdf, 1.0 - cdf));
  return r;
}

/// Permutation version: the p-value is the share of group relabelings whose
/// |statistic| reaches the observed one. Relabelings with zero rank variance
/// count as infinitely extreme. All splits are enumerated when there are at
/// most `exhaustive_limit` of them, otherwise `resamples` random splits are
/// drawn and p = (1 + hits) / (1 + resamples).
inline BrunnerMunzelResult brunner_munzel_permutation(std::span<const double> a, std::span<const double> b,
                                                      const PermutationOptions& opt = {}) {
  if (a.size() < 2 || b.size() < 2) throw PreconditionError("Brunner-Munzel needs at least two values per sample");
  const auto pooled = detail::pool(a, b);
  const std::size_t n = pooled.values.size(), na = a.size();
  std::vector<char> in_a(n, 0);
  std::fill(in_a.begin(), in_a.begin() + static_cast<std::ptrdiff_t>(na), 1);
  const auto obs = detail::bm_parts(pooled.values, pooled.order, pooled.ranks, in_a, na);

  BrunnerMunzelResult r;
  r.permutation = true;
  r.statistic = obs.statistic;
  r.df = obs.df;
  r.p_hat = obs.p_hat;
  const double target = std::abs(obs.statistic);
  // Relative slack so splits that tie the observed value are counted.
  const double slack = std::isinf(target) ? 0.0 : 1e-9 * std::max(1.0, target);
  auto extreme = [&](const detail::BmParts& p) { return std::abs(p.statistic) >= target - slack; };

  const double total = detail::binomial(n, na);
  std::size_t hits = 0;
  if (total <= static_cast<double>(opt.exhaustive_limit)) {
    // Lexicographic enumeration of na-subsets.
    std::vector<std::size_t> idx(na);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::size_t count = 0;
    for (;;) {
      std::fill(in_a.begin(), in_a.end(), 0);
      for (auto i : idx) in_a[i] = 1;
      if (extreme(detail::bm_parts(pooled.values, pooled.order, pooled.ranks, in_a, na))) ++hits;
      ++count;
      std::size_t k = na;
      while (k > 0 && idx[k - 1] == n - na + k - 1) --k;
      if (k == 0) break;
      ++idx[k - 1];
      for (std::size_t j = k; j < na; ++j) idx[j] = idx[j - 1] + 1;
    }
    r.exhaustive = true;
    r.permutations = count;
    r.p_two_sided = static_cast<double>(hits) / static_cast<double>(count);
    return r;
  }
  Rng rng(opt.seed);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t it = 0; it < opt.resamples; ++it) {
    // Partial Fisher-Yates: the first na positions form group A.
    for (std::size_t i = 0; i < na; ++i) std::swap(perm[i], perm[i + rng.below(n - i)]);
    std::fill(in_a.begin(), in_a.end(), 0);
    for (std::size_t i = 0; i < na; ++i) in_a[perm[i]] = 1;
    if (extreme(detail::bm_parts(pooled.values, pooled.order, pooled.ranks, in_a, na))) ++hits;
  }
  r.permutations = opt.resamples;
  r.p_two_sided = (1.0 + static_cast<double>(hits)) / (1.0 + static_cast<double>(opt.resamples));
  return r;
}

inline void to_json(nlohmann::json& j, const BrunnerMunzelResult& r) {
  j = nlohmann::json{{"statistic", r.statistic},     {"p_two_sided", r.p_two_sided}, {"p_hat", r.p_hat},
                     {"permutation", r.permutation}, {"permutations", r.permutations}, {"exhaustive", r.exhaustive}};
  if (std::isfinite(r.df))
    j["df"] = r.df;
  else
    j["df"] = nullptr;
  if (!std::isfinite(r.statistic)) j["statistic"] = r.statistic > 0 ? "inf" : "-inf";
}

}  // namespace neuroloop::analysis
