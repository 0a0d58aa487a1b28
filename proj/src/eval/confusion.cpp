#include "retina/eval/confusion.hpp"

#include "retina/common/error.hpp"

namespace retina {

Positivity parse_positivity(std::string_view text) {
  if (text == "any-dr") return Positivity::any_dr;
  if (text == "referable") return Positivity::referable;
  throw ConfigError("unknown positivity rule '" + std::string(text) + "' (expected any-dr or referable)");
}

std::string positivity_name(Positivity rule) { return rule == Positivity::any_dr ? "any-dr" : "referable"; }

Grade positivity_threshold(Positivity rule) { return rule == Positivity::any_dr ? 1 : 3; }

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : grid)
    for (auto v : row) n += v;
  return n;
}

BinaryCounts reduce_grid(const GradeGrid& grid, Positivity rule) {
  const Grade t = positivity_threshold(rule);
  BinaryCounts c;
  for (Grade truth = 0; truth < kGradeCount; ++truth)
    for (Grade pred = 0; pred < kGradeCount; ++pred) {
      const std::uint64_t n = grid[truth][pred];
      const bool pos = truth >= t, called = pred >= t;
      (pos ? (called ? c.tp : c.fn) : (called ? c.fp : c.tn)) += n;
    }
  return c;
}

ConfusionMatrix confusion(std::span<const GradePair> pairs, Positivity rule) {
  if (pairs.empty()) throw ConfigError("confusion: no observations");
  ConfusionMatrix cm;
  cm.rule = rule;
  for (const GradePair& p : pairs) {
    if (p.truth < 0 || p.truth >= kGradeCount || p.predicted < 0 || p.predicted >= kGradeCount)
      throw ConfigError("confusion: grade out of range");
    ++cm.grid[p.truth][p.predicted];
  }
  cm.binary = reduce_grid(cm.grid, rule);
  return cm;
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::sensitivity: return "sensitivity";
    case Metric::specificity: return "specificity";
    case Metric::ppv: return "ppv";
    case Metric::npv: return "npv";
  }
  return "unknown";
}

namespace {
double ratio(std::uint64_t num, std::uint64_t den, const char* what) {
  if (den == 0) throw UndefinedMetricError(std::string(what) + " is undefined: zero denominator");
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

double accuracy(const BinaryCounts& c) { return ratio(c.tp + c.tn, c.total(), "accuracy"); }
double sensitivity(const BinaryCounts& c) { return ratio(c.tp, c.tp + c.fn, "sensitivity"); }
double specificity(const BinaryCounts& c) { return ratio(c.tn, c.tn + c.fp, "specificity"); }
double ppv(const BinaryCounts& c) { return ratio(c.tp, c.tp + c.fp, "ppv"); }
double npv(const BinaryCounts& c) { return ratio(c.tn, c.tn + c.fn, "npv"); }

double compute_metric(Metric m, const BinaryCounts& c) {
  switch (m) {
    case Metric::accuracy: return accuracy(c);
    case Metric::sensitivity: return sensitivity(c);
    case Metric::specificity: return specificity(c);
    case Metric::ppv: return ppv(c);
    case Metric::npv: return npv(c);
  }
  throw ConfigError("unknown metric");
}

double multiclass_accuracy(const GradeGrid& grid) {
  std::uint64_t agree = 0, total = 0;
  for (Grade t = 0; t < kGradeCount; ++t)
    for (Grade p = 0; p < kGradeCount; ++p) {
      total += grid[t][p];
      if (t == p) agree += grid[t][p];
    }
  return ratio(agree, total, "multiclass accuracy");
}

}  // namespace retina
