#include "retina/eval/statistics.hpp"

#include <algorithm>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <vector>

#include "retina/common/error.hpp"
#include "retina/common/rng.hpp"

namespace retina {
namespace {

double two_sided_z(double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
}

}  // namespace

Interval wilson_interval(std::uint64_t successes, std::uint64_t total, double level) {
  if (total == 0 || successes > total) throw ConfigError("wilson_interval: need 0 <= successes <= total, total > 0");
  const double z = two_sided_z(level);
  const double n = static_cast<double>(total);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z / (1 + z2 / n) * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n));
  // At the boundaries the bounds are exactly 0 or 1; the formula leaves rounding dust.
  return {successes == 0 ? 0.0 : std::max(0.0, centre - half), successes == total ? 1.0 : std::min(1.0, centre + half)};
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ConfigError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

MetricReport bootstrap_ci(std::span<const GradePair> pairs, Positivity rule, const CountsMetric& metric,
                          const std::string& name, std::uint64_t n_resamples, double level, std::uint64_t seed) {
  if (pairs.size() < 2) throw ConfigError("bootstrap_ci: need at least two observations");
  if (n_resamples == 0) throw ConfigError("bootstrap_ci: n_resamples must be positive");
  two_sided_z(level);  // validates level

  // Classify each observation once: 0 tp, 1 fp, 2 tn, 3 fn.
  const Grade t = positivity_threshold(rule);
  std::vector<std::uint8_t> kind(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const bool pos = pairs[i].truth >= t, called = pairs[i].predicted >= t;
    kind[i] = pos ? (called ? 0 : 3) : (called ? 1 : 2);
  }
  auto counts_of = [](const std::array<std::uint64_t, 4>& k) { return BinaryCounts{k[0], k[1], k[2], k[3]}; };

  std::array<std::uint64_t, 4> full{};
  for (auto k : kind) ++full[k];

  MetricReport report;
  report.metric = name;
  report.value = metric(counts_of(full));
  report.method = "bootstrap-percentile";
  report.n = pairs.size();
  report.n_resamples = n_resamples;
  report.seed = seed;

  std::vector<double> values;
  values.reserve(n_resamples);
  const std::uint64_t n = pairs.size();
  for (std::uint64_t r = 0; r < n_resamples; ++r) {
    Rng rng(derive_seed(seed, r));
    std::array<std::uint64_t, 4> k{};
    for (std::uint64_t i = 0; i < n; ++i) ++k[kind[rng.below(n)]];
    try {
      values.push_back(metric(counts_of(k)));
    } catch (const UndefinedMetricError&) {
      ++report.degenerate_resamples;
    }
  }
  if (2 * report.degenerate_resamples > n_resamples)
    throw UnreliableIntervalError(name + ": " + std::to_string(report.degenerate_resamples) + " of " +
                                  std::to_string(n_resamples) + " resamples left the metric undefined");
  std::sort(values.begin(), values.end());
  const double alpha = 1.0 - level;
  report.ci = Interval{quantile_sorted(values, alpha / 2), quantile_sorted(values, 1 - alpha / 2)};
  return report;
}

MetricReport bootstrap_ci(std::span<const GradePair> pairs, Positivity rule, Metric metric,
                          std::uint64_t n_resamples, double level, std::uint64_t seed) {
  return bootstrap_ci(
      pairs, rule, [metric](const BinaryCounts& c) { return compute_metric(metric, c); }, metric_name(metric),
      n_resamples, level, seed);
}

PrevalenceReport prevalence_with_ci(std::uint64_t positives, std::uint64_t total, double level,
                                    const std::string& stratum, PrevalenceMethod method, std::uint64_t seed,
                                    std::uint64_t n_resamples) {
  if (total == 0 || positives > total) throw ConfigError("prevalence: need 0 <= positives <= total, total > 0");
  PrevalenceReport r{positives, total, static_cast<double>(positives) / static_cast<double>(total), {}, stratum,
                     "wilson", seed};
  if (method == PrevalenceMethod::wilson) {
    r.ci = wilson_interval(positives, total, level);
    return r;
  }
  r.method = "bootstrap-percentile";
  std::vector<double> values;
  values.reserve(n_resamples);
  for (std::uint64_t b = 0; b < n_resamples; ++b) {
    Rng rng(derive_seed(seed, b));
    std::uint64_t hits = 0;
    for (std::uint64_t i = 0; i < total; ++i) hits += rng.below(total) < positives;
    values.push_back(static_cast<double>(hits) / static_cast<double>(total));
  }
  std::sort(values.begin(), values.end());
  const double alpha = 1.0 - level;
  r.ci = {quantile_sorted(values, alpha / 2), quantile_sorted(values, 1 - alpha / 2)};
  return r;
}

McNemarResult mcnemar_counts(std::uint64_t b, std::uint64_t c) {
  McNemarResult r;
  r.b = b;
  r.c = c;
  const std::uint64_t n = b + c;
  if (n == 0) {
    r.no_discordance = true;
    r.method = "no-discordance";
    return r;
  }
  const double diff = std::fabs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
  r.chi2 = diff * diff / static_cast<double>(n);
  r.chi2_p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(1.0), r.chi2));
  const double tail = boost::math::cdf(boost::math::binomial(static_cast<double>(n), 0.5),
                                       static_cast<double>(std::min(b, c)));
  r.exact_p = std::min(1.0, 2.0 * tail);
  if (n >= 25) {
    r.p_value = r.chi2_p;
    r.method = "chi2-corrected";
  } else {
    r.p_value = r.exact_p;
    r.method = "exact-binomial";
  }
  return r;
}

McNemarResult mcnemar(std::span<const bool> a_correct, std::span<const bool> b_correct) {
  if (a_correct.size() != b_correct.size()) throw DimensionError("mcnemar: vectors must be paired");
  std::uint64_t b = 0, c = 0;
  for (std::size_t i = 0; i < a_correct.size(); ++i) {
    b += a_correct[i] && !b_correct[i];
    c += !a_correct[i] && b_correct[i];
  }
  return mcnemar_counts(b, c);
}

}  // namespace retina
