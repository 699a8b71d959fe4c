#pragma once

// Reference solver for the classifier dual: accelerated projected gradient
// with an exact projection onto {0 <= a <= C, y^T a = 0}.

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "cstm/stm.hpp"

namespace testutil {

// Projection: a_i = clip(v_i - mu y_i, 0, C) with mu found by bisection so that y^T a = 0.
inline cstm::Vector project_box_hyperplane(const cstm::Vector& v, const cstm::Vector& y, double c) {
  auto at = [&](double mu) {
    cstm::Vector a(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) a(i) = std::clamp(v(i) - mu * y(i), 0.0, c);
    return a;
  };
  // y^T a(mu) is non-increasing in mu.
  double lo = -1.0, hi = 1.0;
  while (y.dot(at(lo)) < 0) lo *= 2;
  while (y.dot(at(hi)) > 0) hi *= 2;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (y.dot(at(mid)) > 0) lo = mid;
    else hi = mid;
  }
  cstm::Vector a = at(0.5 * (lo + hi));
  // Remove the remaining tiny imbalance on a free coordinate when one exists.
  const double r = y.dot(a);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double cand = a(i) - r * y(i);
    if (cand > 0 && cand < c) {
      a(i) = cand;
      break;
    }
  }
  return a;
}

inline double oracle_qp(const cstm::QpProblem& p, cstm::Vector* alpha_out = nullptr) {
  const cstm::DenseMatrix q = p.labels.asDiagonal() * p.gram * p.labels.asDiagonal();
  Eigen::SelfAdjointEigenSolver<cstm::DenseMatrix> es(q);
  const double lip = std::max(es.eigenvalues().maxCoeff(), 1e-12);
  const double c = p.box();
  const auto n = p.labels.size();
  cstm::Vector a = project_box_hyperplane(cstm::Vector::Zero(n), p.labels, c);
  cstm::Vector z = a;
  double t = 1.0;
  double last = cstm::dual_objective(p, a);
  double checkpoint = last;
  for (int it = 0; it < 50000; ++it) {
    const cstm::Vector g = q * z - cstm::Vector::Ones(n);
    const cstm::Vector next = project_box_hyperplane(z - g / lip, p.labels, c);
    const double obj = cstm::dual_objective(p, next);
    if (obj > last) {
      // Adaptive restart of the momentum.
      z = a;
      t = 1.0;
      continue;
    }
    const double tn = 0.5 * (1 + std::sqrt(1 + 4 * t * t));
    z = next + ((t - 1) / tn) * (next - a);
    a = next;
    t = tn;
    last = obj;
    if (it % 100 == 99) {
      if (checkpoint - obj < 1e-15 * std::max(1.0, std::abs(obj))) break;
      checkpoint = obj;
    }
  }
  if (alpha_out) *alpha_out = a;
  return cstm::dual_objective(p, a);
}

}  // namespace testutil
