#pragma once

#include <span>
#include <string>
#include <vector>

#include "retina/data/manifest.hpp"

namespace retina {

/// Argmax over five logits; ties go to the more severe grade.
Grade grade_from_logits(std::span<const double> logits);

struct GradeOutcome {
  std::string patient_id;
  std::vector<Grade> image_grades;
  Grade patient_grade = 0;
  bool referable = false;
};

inline bool is_referable(Grade g) { return g >= 3; }

/// Patient grade is the most severe of one or two image grades.
GradeOutcome aggregate_patient(const std::string& patient_id, std::span<const Grade> image_grades);

}  // namespace retina
