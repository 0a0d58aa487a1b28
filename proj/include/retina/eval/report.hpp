#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "retina/eval/grading.hpp"
#include "retina/eval/statistics.hpp"

namespace retina {

/// One table row; percentages rounded to one decimal.
struct ReportRow {
  std::string metric;
  double value_pct = 0.0;
  std::optional<double> ci_low_pct;
  std::optional<double> ci_high_pct;
  std::string method;
  std::uint64_t n = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct Report {
  std::vector<ReportRow> rows;
  friend bool operator==(const Report&, const Report&) = default;
};

double round_pct(double fraction);

Report render_report(std::span<const MetricReport> metrics, std::span<const PrevalenceReport> prevalences = {});
std::string report_to_json(const Report& report);
Report report_from_json(const std::string& text);
/// Fixed-width table; an interval that collapses to a point prints as "--".
std::string report_to_text(const Report& report);

struct PredictionRow {
  std::string patient_id;
  Grade truth = 0;
  Grade predicted = 0;
};

inline constexpr std::string_view kPredictionsHeader = "patient_id,truth_grade,predicted_grade";

/// Grades are written DR0..DR4; plain digits are accepted on input.
std::vector<PredictionRow> parse_predictions(const std::string& text);
std::vector<PredictionRow> load_predictions(const std::filesystem::path& path);
std::string serialize_predictions(std::span<const PredictionRow> rows);

/// One pair per patient, most severe grade on each side, ordered by patient id.
std::vector<GradePair> patient_pairs(std::span<const PredictionRow> rows);

struct EvaluationOptions {
  Positivity rule = Positivity::referable;
  std::uint64_t seed = 42;
  std::uint64_t n_resamples = 1000;
  double level = 0.95;
};

/// Bootstrap reports for every binary metric that is defined on the full data,
/// followed by the five-grade accuracy.
std::vector<MetricReport> evaluate_pairs(std::span<const GradePair> pairs, const EvaluationOptions& options);

}  // namespace retina
