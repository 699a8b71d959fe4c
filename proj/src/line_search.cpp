#include "cstm/line_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cstm {

namespace {

// Minimizer of the cubic through (a, fa, ga) and (b, fb, gb), clamped to a safe
// interior part of [a, b]; falls back to bisection when the cubic is degenerate.
double cubic_step(double a, double fa, double ga, double b, double fb, double gb) {
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  double t = 0.5 * (a + b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = gb - ga + 2.0 * d2;
    if (denom != 0.0) {
      const double c = b - (b - a) * (gb + d2 - d1) / denom;
      if (std::isfinite(c)) t = c;
    }
  }
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

struct Trial {
  double step;
  double value;
  double slope;
};

}  // namespace

LineSearchResult strong_wolfe(const RayFunction& phi, double f0, double slope0, double initial_step,
                              const WolfeOptions& opts) {
  if (!(slope0 < 0.0)) throw std::invalid_argument("strong_wolfe: direction is not a descent direction");
  LineSearchResult res;
  Trial best{0.0, f0, slope0};
  auto eval = [&](double step) {
    auto [v, g] = phi(step);
    ++res.evaluations;
    if (!std::isfinite(v)) {
      v = std::numeric_limits<double>::infinity();
      g = std::numeric_limits<double>::infinity();
    }
    if (v < best.value) best = {step, v, g};
    return Trial{step, v, g};
  };
  auto accept = [&](const Trial& t) {
    res.step = t.step;
    res.value = t.value;
    res.slope = t.slope;
    res.wolfe = true;
    return res;
  };
  auto armijo_ok = [&](const Trial& t) { return t.value <= f0 + opts.c1 * t.step * slope0; };
  auto curvature_ok = [&](const Trial& t) { return std::abs(t.slope) <= -opts.c2 * slope0; };

  auto zoom = [&](Trial lo, Trial hi) -> bool {
    while (res.evaluations < opts.max_steps) {
      double step;
      if (std::isfinite(hi.value) && std::isfinite(hi.slope))
        step = cubic_step(lo.step, lo.value, lo.slope, hi.step, hi.value, hi.slope);
      else
        step = 0.5 * (lo.step + hi.step);
      if (std::abs(hi.step - lo.step) < 1e-16 * std::max(1.0, std::abs(lo.step))) return false;
      const Trial t = eval(step);
      if (!armijo_ok(t) || t.value >= lo.value) {
        hi = t;
      } else {
        if (curvature_ok(t)) {
          accept(t);
          return true;
        }
        if (t.slope * (hi.step - lo.step) >= 0.0) hi = lo;
        lo = t;
      }
    }
    return false;
  };

  Trial prev{0.0, f0, slope0};
  double step = std::clamp(initial_step, 1e-20, opts.max_step);
  bool first = true;
  while (res.evaluations < opts.max_steps) {
    const Trial t = eval(step);
    if (!armijo_ok(t) || (!first && t.value >= prev.value)) {
      if (zoom(prev, t)) return res;
      break;
    }
    if (curvature_ok(t)) return accept(t);
    if (t.slope >= 0.0) {
      if (zoom(t, prev)) return res;
      break;
    }
    prev = t;
    first = false;
    if (step >= opts.max_step) break;
    step = std::min(2.0 * step, opts.max_step);
  }

  res.step = best.step;
  res.value = best.value;
  res.slope = best.slope;
  res.wolfe = false;
  return res;
}

}  // namespace cstm
