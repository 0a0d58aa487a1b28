#include "retina/eval/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "retina/common/error.hpp"

namespace retina {

double round_pct(double fraction) { return std::round(fraction * 1000.0) / 10.0; }

Report render_report(std::span<const MetricReport> metrics, std::span<const PrevalenceReport> prevalences) {
  Report report;
  for (const MetricReport& m : metrics) {
    ReportRow row{m.metric, round_pct(m.value), std::nullopt, std::nullopt, m.method, m.n, m.seed};
    if (m.ci) {
      row.ci_low_pct = round_pct(m.ci->low);
      row.ci_high_pct = round_pct(m.ci->high);
    }
    report.rows.push_back(row);
  }
  for (const PrevalenceReport& p : prevalences) {
    report.rows.push_back({"prevalence:" + p.stratum, round_pct(p.prevalence), round_pct(p.ci.low),
                           round_pct(p.ci.high), p.method, p.total, p.seed});
  }
  return report;
}

std::string report_to_json(const Report& report) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const ReportRow& r : report.rows) {
    nlohmann::ordered_json j;
    j["metric"] = r.metric;
    j["value_pct"] = r.value_pct;
    j["ci_low_pct"] = r.ci_low_pct ? nlohmann::ordered_json(*r.ci_low_pct) : nlohmann::ordered_json(nullptr);
    j["ci_high_pct"] = r.ci_high_pct ? nlohmann::ordered_json(*r.ci_high_pct) : nlohmann::ordered_json(nullptr);
    j["method"] = r.method;
    j["n"] = r.n;
    j["seed"] = r.seed;
    rows.push_back(std::move(j));
  }
  return rows.dump(2) + "\n";
}

Report report_from_json(const std::string& text) {
  Report report;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (!doc.is_array()) throw ParseError("report: expected a JSON array of rows");
    for (const auto& j : doc) {
      ReportRow r;
      r.metric = j.at("metric").get<std::string>();
      r.value_pct = j.at("value_pct").get<double>();
      if (!j.at("ci_low_pct").is_null()) r.ci_low_pct = j.at("ci_low_pct").get<double>();
      if (!j.at("ci_high_pct").is_null()) r.ci_high_pct = j.at("ci_high_pct").get<double>();
      r.method = j.at("method").get<std::string>();
      r.n = j.at("n").get<std::uint64_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      report.rows.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
  return report;
}

std::string report_to_text(const Report& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %9s  %-13s  %-20s %8s\n", "Metric", "Value (%)", "95% CI", "Method", "n");
  out << line;
  for (const ReportRow& r : report.rows) {
    std::string ci = "--";
    if (r.ci_low_pct && r.ci_high_pct && *r.ci_low_pct != *r.ci_high_pct) {
      char buf[48];
      std::snprintf(buf, sizeof buf, "%.1f--%.1f", *r.ci_low_pct, *r.ci_high_pct);
      ci = buf;
    }
    std::snprintf(line, sizeof line, "%-24s %9.1f  %-13s  %-20s %8llu\n", r.metric.c_str(), r.value_pct, ci.c_str(),
                  r.method.c_str(), static_cast<unsigned long long>(r.n));
    out << line;
  }
  return out.str();
}

namespace {

Grade parse_grade(const std::string& token) {
  std::string digits = token;
  if (digits.size() == 3 && digits.compare(0, 2, "DR") == 0) digits = digits.substr(2);
  if (digits.size() != 1 || digits[0] < '0' || digits[0] > '4') throw ParseError("bad grade '" + token + "'");
  return digits[0] - '0';
}

}  // namespace

std::vector<PredictionRow> parse_predictions(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("predictions: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPredictionsHeader)
    throw ParseError("predictions: header must be '" + std::string(kPredictionsHeader) + "'");
  std::vector<PredictionRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    try {
      if (f.size() != 3 || f[0].empty()) throw ParseError("expected 3 fields");
      rows.push_back({f[0], parse_grade(f[1]), parse_grade(f[2])});
    } catch (const ParseError& e) {
      throw ParseError("predictions line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<PredictionRow> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open predictions " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_predictions(buf.str());
}

std::string serialize_predictions(std::span<const PredictionRow> rows) {
  std::string out(kPredictionsHeader);
  out += '\n';
  for (const PredictionRow& r : rows)
    out += r.patient_id + ",DR" + std::to_string(r.truth) + ",DR" + std::to_string(r.predicted) + "\n";
  return out;
}

std::vector<GradePair> patient_pairs(std::span<const PredictionRow> rows) {
  std::map<std::string, std::pair<std::vector<Grade>, std::vector<Grade>>> by_patient;
  for (const PredictionRow& r : rows) {
    auto& [truths, preds] = by_patient[r.patient_id];
    truths.push_back(r.truth);
    preds.push_back(r.predicted);
  }
  std::vector<GradePair> pairs;
  for (const auto& [id, grades] : by_patient) {
    pairs.push_back({aggregate_patient(id, grades.first).patient_grade,
                     aggregate_patient(id, grades.second).patient_grade});
  }
  return pairs;
}

std::vector<MetricReport> evaluate_pairs(std::span<const GradePair> pairs, const EvaluationOptions& options) {
  std::vector<MetricReport> reports;
  const ConfusionMatrix cm = confusion(pairs, options.rule);
  for (Metric m : kAllMetrics) {
    try {
      compute_metric(m, cm.binary);
    } catch (const UndefinedMetricError&) {
      continue;
    }
    try {
      reports.push_back(bootstrap_ci(pairs, options.rule, m, options.n_resamples, options.level, options.seed));
    } catch (const UnreliableIntervalError&) {
      MetricReport r;
      r.metric = metric_name(m);
      r.value = compute_metric(m, cm.binary);
      r.method = "bootstrap-unreliable";
      r.n = pairs.size();
      r.n_resamples = options.n_resamples;
      r.seed = options.seed;
      reports.push_back(r);
    }
  }
  // Five-grade agreement is a plain proportion and gets a Wilson interval.
  MetricReport mc;
  mc.metric = "multiclass_accuracy";
  mc.value = multiclass_accuracy(cm.grid);
  mc.method = "wilson";
  mc.n = pairs.size();
  mc.seed = options.seed;
  std::uint64_t agree = 0;
  for (const GradePair& p : pairs) agree += p.truth == p.predicted;
  mc.ci = wilson_interval(agree, pairs.size(), options.level);
  reports.push_back(mc);
  return reports;
}

}  // namespace retina
