#include "retina/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "retina/common/error.hpp"

namespace retina {

namespace {

double checked_scalar(const Var& v, const char* where) {
  if (v.value().size() != 1) {
    throw DimensionError(std::string("finite_diff_check: function must return a scalar, got ") +
                         shape_string(v.shape()));
  }
  const double value = v.value()[0];
  if (!std::isfinite(value)) {
    throw OracleFailure(std::string("finite_diff_check: non-finite function value at ") + where);
  }
  return value;
}

void update(GradCheckResult& result, std::size_t index, double analytic, double numeric) {
  const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
  if (err >= result.max_relative_error) {
    result.max_relative_error = err;
    result.worst_index = index;
    result.analytic = analytic;
    result.numeric = numeric;
  }
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& f, const Tensor& at, double step) {
  Tensor analytic;
  {
    Tape tape;
    Var x = tape.variable(at);
    Var y = f(tape, x);
    checked_scalar(y, "probe point");
    tape.backward(y);
    analytic = x.grad();
  }
  GradCheckResult result;
  Tensor probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    double plus, minus;
    {
      Tape tape;
      plus = checked_scalar(f(tape, tape.constant(probe)), "forward probe");
    }
    probe[i] = original - step;
    {
      Tape tape;
      minus = checked_scalar(f(tape, tape.constant(probe)), "backward probe");
    }
    probe[i] = original;
    update(result, i, analytic[i], (plus - minus) / (2.0 * step));
  }
  return result;
}

GradCheckResult finite_diff_check_params(const std::function<Var(Tape&)>& f,
                                         std::span<Tensor* const> params, double step) {
  std::vector<bool> previous;
  for (Tensor* p : params) {
    previous.push_back(p->requires_grad());
    p->set_requires_grad(true);
    p->zero_grad();
  }
  {
    Tape tape;
    Var y = f(tape);
    checked_scalar(y, "probe point");
    tape.backward(y);
  }
  GradCheckResult result;
  std::size_t flat = 0;
  for (Tensor* p : params) {
    const std::vector<double> analytic(p->grad().begin(), p->grad().end());
    for (std::size_t i = 0; i < p->size(); ++i, ++flat) {
      const double original = (*p)[i];
      (*p)[i] = original + step;
      double plus, minus;
      {
        Tape tape;
        plus = checked_scalar(f(tape), "forward probe");
      }
      (*p)[i] = original - step;
      {
        Tape tape;
        minus = checked_scalar(f(tape), "backward probe");
      }
      (*p)[i] = original;
      update(result, flat, analytic[i], (plus - minus) / (2.0 * step));
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    params[k]->zero_grad();
    params[k]->set_requires_grad(previous[k]);
  }
  return result;
}

}  // namespace retina
