#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "retina/eval/confusion.hpp"

namespace retina {

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Wilson score interval for a binomial proportion.
Interval wilson_interval(std::uint64_t successes, std::uint64_t total, double level = 0.95);

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
double quantile_sorted(std::span<const double> sorted, double q);

struct MetricReport {
  std::string metric;
  double value = 0.0;
  std::optional<Interval> ci;
  std::string method;
  std::uint64_t n = 0;
  std::uint64_t n_resamples = 0;
  std::uint64_t degenerate_resamples = 0;
  std::uint64_t seed = 0;
};

/// More than half of the bootstrap resamples had an undefined metric.
class UnreliableIntervalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using CountsMetric = std::function<double(const BinaryCounts&)>;

/// Percentile bootstrap over paired observations (one per patient).
/// Resample r draws from its own stream derived from (seed, r); resamples in
/// which the metric is undefined are skipped and counted.
MetricReport bootstrap_ci(std::span<const GradePair> pairs, Positivity rule, const CountsMetric& metric,
                          const std::string& name, std::uint64_t n_resamples = 1000, double level = 0.95,
                          std::uint64_t seed = 42);
MetricReport bootstrap_ci(std::span<const GradePair> pairs, Positivity rule, Metric metric,
                          std::uint64_t n_resamples = 1000, double level = 0.95, std::uint64_t seed = 42);

enum class PrevalenceMethod { wilson, bootstrap };

struct PrevalenceReport {
  std::uint64_t positives = 0;
  std::uint64_t total = 0;
  double prevalence = 0.0;
  Interval ci;
  std::string stratum = "general";
  std::string method = "wilson";
  std::uint64_t seed = 0;
};

PrevalenceReport prevalence_with_ci(std::uint64_t positives, std::uint64_t total, double level = 0.95,
                                    const std::string& stratum = "general",
                                    PrevalenceMethod method = PrevalenceMethod::wilson, std::uint64_t seed = 42,
                                    std::uint64_t n_resamples = 1000);

struct McNemarResult {
  /// A right, B wrong.
  std::uint64_t b = 0;
  /// A wrong, B right.
  std::uint64_t c = 0;
  /// Continuity-corrected (|b - c| - 1)^2 / (b + c); 0 without discordance.
  double chi2 = 0.0;
  /// Upper tail of chi-squared with one degree of freedom at chi2.
  double chi2_p = 1.0;
  /// Two-sided exact binomial p for b ~ Binomial(b + c, 1/2).
  double exact_p = 1.0;
  /// chi2_p when b + c >= 25, otherwise exact_p.
  double p_value = 1.0;
  std::string method;
  bool no_discordance = false;
};

McNemarResult mcnemar_counts(std::uint64_t b, std::uint64_t c);
McNemarResult mcnemar(std::span<const bool> a_correct, std::span<const bool> b_correct);

}  // namespace retina
