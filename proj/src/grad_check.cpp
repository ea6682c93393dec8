#include "qann/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qann::ad {

std::string GradCheckResult::describe() const {
  std::ostringstream out;
  out << (nan_found ? "NaN at" : "max rel error " + std::to_string(max_rel_error) + " at")
      << " param " << worst_param << " entry " << worst_entry << " (analytic "
      << analytic << ", numeric " << numeric << ")";
  return out.str();
}

namespace {

double evaluate(const LossBuilder& build, std::span<Tensor* const> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (Tensor* p : params) vars.push_back(tape.parameter(*p));
  return build(tape, vars).value().item();
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& build,
                           std::span<Tensor* const> params, double eps, Stencil stencil) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (Tensor* p : params) vars.push_back(tape.parameter(*p));
    Var loss = build(tape, vars);
    tape.backward(loss);
    for (const Var& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      auto at = [&](double offset) {
        p[i] = saved + offset;
        return evaluate(build, params);
      };
      double numeric;
      if (stencil == Stencil::kFivePoint) {
        const double d1 = at(eps) - at(-eps);
        const double d2 = at(2.0 * eps) - at(-2.0 * eps);
        numeric = (8.0 * d1 - d2) / (12.0 * eps);
      } else {
        numeric = (at(eps) - at(-eps)) / (2.0 * eps);
      }
      p[i] = saved;

      const double a = analytic[k][i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        result.nan_found = true;
        result.worst_param = k;
        result.worst_entry = i;
        result.analytic = a;
        result.numeric = numeric;
        return result;
      }
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = k;
        result.worst_entry = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace qann::ad
