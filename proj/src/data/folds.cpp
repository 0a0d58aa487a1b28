#include "retina/data/folds.hpp"

#include <json.hpp>
#include <map>

#include "retina/common/error.hpp"

namespace retina {

FoldPlan make_center_folds(const Manifest& manifest, std::size_t k) {
  if (k == 0) throw ConfigError("fold count must be positive");
  std::set<std::string> centers;
  for (const Sample& s : manifest.samples) centers.insert(s.center_id);
  if (centers.size() < k) {
    throw ConfigError("need at least " + std::to_string(k) + " centers for " + std::to_string(k) +
                      " folds, manifest has " + std::to_string(centers.size()));
  }
  FoldPlan plan;
  plan.folds.resize(k);
  std::size_t i = 0;
  for (const std::string& c : centers) plan.folds[i++ % k].test_centers.insert(c);
  for (Fold& fold : plan.folds)
    for (const std::string& c : centers)
      if (!fold.test_centers.count(c)) fold.train_centers.insert(c);
  return plan;
}

FoldSplit split_fold(const Manifest& manifest, const Fold& fold) {
  FoldSplit split;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const std::string& c = manifest.samples[i].center_id;
    if (fold.test_centers.count(c)) split.test.push_back(i);
    else if (fold.train_centers.count(c)) split.train.push_back(i);
    else throw ConfigError("sample " + std::to_string(i) + " has center " + c + " outside the fold plan");
  }
  return split;
}

std::vector<std::string> fold_violations(const Manifest& manifest, const FoldPlan& plan) {
  std::vector<std::string> problems;
  std::map<std::string, std::size_t> tested;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const Fold& fold = plan.folds[f];
    const std::string tag = "fold " + std::to_string(f) + ": ";
    for (const auto& c : fold.test_centers) {
      ++tested[c];
      if (fold.train_centers.count(c)) problems.push_back(tag + "center " + c + " on both sides");
    }
    std::set<std::string> train_patients, test_patients;
    for (const Sample& s : manifest.samples) {
      const bool in_test = fold.test_centers.count(s.center_id) > 0;
      const bool in_train = fold.train_centers.count(s.center_id) > 0;
      if (!in_test && !in_train) problems.push_back(tag + "center " + s.center_id + " unassigned");
      if (in_test) test_patients.insert(s.patient_id);
      if (in_train) train_patients.insert(s.patient_id);
    }
    for (const auto& p : test_patients)
      if (train_patients.count(p)) problems.push_back(tag + "patient " + p + " on both sides");
  }
  for (const Sample& s : manifest.samples) {
    const std::size_t n = tested.count(s.center_id) ? tested[s.center_id] : 0;
    if (n != 1) {
      problems.push_back("center " + s.center_id + " tested in " + std::to_string(n) + " folds");
      tested[s.center_id] = 1;  // report once
    }
  }
  return problems;
}

std::string fold_plan_to_json(const FoldPlan& plan) {
  nlohmann::json folds = nlohmann::json::array();
  for (const Fold& f : plan.folds) {
    folds.push_back({{"train_centers", f.train_centers}, {"test_centers", f.test_centers}});
  }
  return nlohmann::json{{"folds", folds}}.dump(2) + "\n";
}

FoldPlan fold_plan_from_json(const std::string& text) {
  FoldPlan plan;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& f : doc.at("folds")) {
      plan.folds.push_back(
          {f.at("train_centers").get<std::set<std::string>>(), f.at("test_centers").get<std::set<std::string>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("fold plan: ") + e.what());
  }
  return plan;
}

}  // namespace retina
