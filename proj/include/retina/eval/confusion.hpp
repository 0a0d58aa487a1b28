#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include "retina/data/manifest.hpp"

namespace retina {

/// Which truth grades count as positive in the binary reduction.
enum class Positivity {
  any_dr,     // grade >= DR1
  referable,  // grade >= DR3
};

Positivity parse_positivity(std::string_view text);
std::string positivity_name(Positivity rule);
Grade positivity_threshold(Positivity rule);

struct GradePair {
  Grade truth = 0;
  Grade predicted = 0;
};

struct BinaryCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const BinaryCounts&, const BinaryCounts&) = default;
};

using GradeGrid = std::array<std::array<std::uint64_t, kGradeCount>, kGradeCount>;

struct ConfusionMatrix {
  /// grid[truth][predicted]
  GradeGrid grid{};
  Positivity rule = Positivity::referable;
  BinaryCounts binary;

  std::uint64_t total() const;
};

BinaryCounts reduce_grid(const GradeGrid& grid, Positivity rule);

/// Throws ConfigError on an empty input or an out-of-range grade.
ConfusionMatrix confusion(std::span<const GradePair> pairs, Positivity rule);

/// A metric whose denominator is zero.
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class Metric { accuracy, sensitivity, specificity, ppv, npv };

inline constexpr std::array<Metric, 5> kAllMetrics = {Metric::accuracy, Metric::sensitivity, Metric::specificity,
                                                      Metric::ppv, Metric::npv};

std::string metric_name(Metric m);

double accuracy(const BinaryCounts& c);
double sensitivity(const BinaryCounts& c);
double specificity(const BinaryCounts& c);
double ppv(const BinaryCounts& c);
double npv(const BinaryCounts& c);
double compute_metric(Metric m, const BinaryCounts& c);

/// Fraction of exact five-grade agreement.
double multiclass_accuracy(const GradeGrid& grid);

}  // namespace retina
