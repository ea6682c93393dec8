#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qann/autodiff.hpp"

namespace qann::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_entry = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool nan_found = false;

  bool passed(double tolerance) const {
    return !nan_found && max_rel_error < tolerance;
  }
  std::string describe() const;
};

/// Builds a scalar loss on a fresh tape from the bound parameter leaves.
/// Must be deterministic (no dropout) across calls.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

/// Central difference stencils: (f(x+e) - f(x-e)) / 2e, or the fourth-order
/// (8[f(x+e) - f(x-e)] - [f(x+2e) - f(x-2e)]) / 12e.
enum class Stencil { kThreePoint, kFivePoint };

/// Compares reverse-mode gradients against central differences,
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8), maximized over
/// every entry of every parameter. Parameters are perturbed in place and
/// restored.
GradCheckResult grad_check(const LossBuilder& build,
                           std::span<Tensor* const> params, double eps = 1e-5,
                           Stencil stencil = Stencil::kThreePoint);

}  // namespace qann::ad
