#include "retina/eval/grading.hpp"

#include <algorithm>
#include <cmath>

#include "retina/common/error.hpp"

namespace retina {

Grade grade_from_logits(std::span<const double> logits) {
  if (logits.size() != kGradeCount)
    throw DimensionError("grade_from_logits: expected 5 logits, got " + std::to_string(logits.size()));
  Grade best = 0;
  for (Grade g = 0; g < kGradeCount; ++g) {
    if (!std::isfinite(logits[g])) throw ConfigError("grade_from_logits: non-finite logit");
    if (logits[g] >= logits[best]) best = g;
  }
  return best;
}

GradeOutcome aggregate_patient(const std::string& patient_id, std::span<const Grade> image_grades) {
  if (image_grades.empty() || image_grades.size() > 2)
    throw ConfigError("patient " + patient_id + " has " + std::to_string(image_grades.size()) +
                      " graded images; expected 1 or 2");
  for (Grade g : image_grades)
    if (g < 0 || g >= kGradeCount) throw ConfigError("grade out of range for patient " + patient_id);
  GradeOutcome out{patient_id, {image_grades.begin(), image_grades.end()}, 0, false};
  out.patient_grade = *std::max_element(image_grades.begin(), image_grades.end());
  out.referable = is_referable(out.patient_grade);
  return out;
}

}  // namespace retina
