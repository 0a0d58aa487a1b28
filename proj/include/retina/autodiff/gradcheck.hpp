#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include "retina/autodiff/tape.hpp"

namespace retina {

/// The probed function produced a non-finite value, so no gradient
/// comparison was possible. Distinct from a gradient mismatch.
class OracleFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Builds a scalar from the probe variable on a fresh tape.
using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Compares reverse-mode gradients of `f` at `at` with central differences.
///
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|); the
/// maximum is returned. Throws OracleFailure when f is non-finite at any probe.
GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& at, double step = 1e-5);

/// Same comparison over externally owned parameters. `f` must bind the
/// parameters it uses with Tape::bind; the check perturbs them in place and
/// restores them afterwards.
GradCheckResult finite_diff_check_params(const std::function<Var(Tape&)>& f,
                                         std::span<Tensor* const> params, double step = 1e-5);

}  // namespace retina
