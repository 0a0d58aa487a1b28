#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "retina/data/manifest.hpp"

namespace retina {

struct Fold {
  std::set<std::string> train_centers;
  std::set<std::string> test_centers;
  friend bool operator==(const Fold&, const Fold&) = default;
};

struct FoldPlan {
  std::vector<Fold> folds;
  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// Sorted distinct centers are dealt round-robin into k test folds.
FoldPlan make_center_folds(const Manifest& manifest, std::size_t k);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Sample indices on each side of one fold.
FoldSplit split_fold(const Manifest& manifest, const Fold& fold);

/// Human-readable violations of fold hygiene: a center or patient on both
/// sides of a fold, a center tested in zero or several folds, or a sample
/// whose center belongs to neither side. Empty means clean.
std::vector<std::string> fold_violations(const Manifest& manifest, const FoldPlan& plan);

std::string fold_plan_to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const std::string& text);

}  // namespace retina
