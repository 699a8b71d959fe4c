#pragma once

#include <functional>
#include <utility>

namespace cstm {

struct WolfeOptions {
  double c1 = 1e-4;  // sufficient decrease
  double c2 = 0.1;   // curvature
  int max_steps = 50;
  double max_step = 1e10;
};

struct LineSearchResult {
  double step = 0.0;
  double value = 0.0;
  double slope = 0.0;
  /// False when no strong Wolfe point was found within `max_steps`; `step` is then
  /// the best (lowest value) trial seen, or 0 if nothing decreased the objective.
  bool wolfe = false;
  int evaluations = 0;
};

/// Value and directional derivative of the objective along the search ray.
using RayFunction = std::function<std::pair<double, double>(double)>;

/// Strong Wolfe line search (bracketing + zoom with safeguarded cubic interpolation).
///
/// `f0` and `slope0` are the value and directional derivative at step 0;
/// `slope0` must be negative.
LineSearchResult strong_wolfe(const RayFunction& phi, double f0, double slope0, double initial_step,
                              const WolfeOptions& opts = {});

}  // namespace cstm
