#include "cstm/stm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace cstm {

namespace {

constexpr double kTau = 1e-12;
constexpr double kSupportEps = 1e-10;

bool in_up(double y, double a, double c) { return (y > 0 && a < c) || (y < 0 && a > 0); }
bool in_low(double y, double a, double c) { return (y < 0 && a < c) || (y > 0 && a > 0); }

// max over I_up and min over I_low of -y_t G_t.
std::pair<double, double> violating_extremes(const Vector& y, const Vector& a, const Vector& grad, double c) {
  double up = -std::numeric_limits<double>::infinity();
  double low = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < y.size(); ++t) {
    const double v = -y(t) * grad(t);
    if (in_up(y(t), a(t), c)) up = std::max(up, v);
    if (in_low(y(t), a(t), c)) low = std::min(low, v);
  }
  return {up, low};
}

Vector dual_gradient(const QpProblem& p, const Vector& alpha) {
  const Vector ya = p.labels.cwiseProduct(alpha);
  return p.labels.cwiseProduct(p.gram * ya) - Vector::Ones(alpha.size());
}

std::vector<std::size_t> support_of(const Vector& alpha) {
  std::vector<std::size_t> s;
  for (Eigen::Index i = 0; i < alpha.size(); ++i)
    if (alpha(i) > kSupportEps) s.push_back(static_cast<std::size_t>(i));
  return s;
}

}  // namespace

void QpProblem::validate() const {
  const auto n = labels.size();
  if (n == 0) throw std::invalid_argument("QP needs at least one sample");
  if (gram.rows() != n || gram.cols() != n) throw std::invalid_argument("Gram size does not match label count");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be > 0");
  if (!gram.allFinite()) throw std::invalid_argument("Gram matrix must be finite");
  const double scale = std::max(1.0, gram.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels(i) != 1.0 && labels(i) != -1.0) throw std::invalid_argument("labels must be +1 or -1");
    for (Eigen::Index j = 0; j < i; ++j)
      if (std::abs(gram(i, j) - gram(j, i)) > 1e-12 * scale)
        throw std::invalid_argument("Gram matrix is not symmetric at (" + std::to_string(i) + ", " +
                                    std::to_string(j) + ")");
  }
}

double dual_objective(const QpProblem& p, const Vector& alpha) {
  const Vector ya = p.labels.cwiseProduct(alpha);
  return 0.5 * ya.dot(p.gram * ya) - alpha.sum();
}

double kkt_violation(const QpProblem& p, const Vector& alpha) {
  const auto [up, low] = violating_extremes(p.labels, alpha, dual_gradient(p, alpha), p.box());
  if (!std::isfinite(up) || !std::isfinite(low)) return 0.0;
  return std::max(0.0, up - low);
}

double dual_intercept(const QpProblem& p, const Vector& alpha) {
  const Vector grad = dual_gradient(p, alpha);
  const double c = p.box();
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  int free = 0;
  for (Eigen::Index t = 0; t < alpha.size(); ++t) {
    const double yg = p.labels(t) * grad(t);
    const bool at_upper = alpha(t) >= c;
    const bool at_lower = alpha(t) <= 0.0;
    if (at_upper) {
      if (p.labels(t) < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (at_lower) {
      if (p.labels(t) > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      sum += yg;
      ++free;
    }
  }
  double rho = 0.0;
  if (free > 0) rho = sum / free;
  else if (std::isfinite(ub) && std::isfinite(lb)) rho = 0.5 * (ub + lb);
  else if (std::isfinite(ub)) rho = ub;
  else if (std::isfinite(lb)) rho = lb;
  return -rho;
}

QpSolution solve_qp(const QpProblem& p, double tol, int max_passes) {
  p.validate();
  if (!(tol > 0.0)) throw std::invalid_argument("solve_qp: tol must be > 0");
  const auto n = p.labels.size();
  const double c = p.box();
  const Vector& y = p.labels;
  const DenseMatrix& k = p.gram;

  QpSolution sol;
  Vector& a = sol.alpha;
  a = Vector::Zero(n);
  Vector grad = -Vector::Ones(n);  // G = Q a - 1 with Q = D_y K D_y
  const long long budget = static_cast<long long>(std::max(1, max_passes)) * std::max<Eigen::Index>(n, 1);

  for (long long it = 0; it < budget; ++it) {
    // First index: maximal -y_t G_t over I_up.
    Eigen::Index i = -1;
    double gmax = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t)
      if (in_up(y(t), a(t), c) && -y(t) * grad(t) >= gmax) {
        if (-y(t) * grad(t) > gmax || i < 0) i = t;
        gmax = -y(t) * grad(t);
      }
    // Second index: second-order selection over I_low; also track min over I_low.
    Eigen::Index j = -1;
    double gmin = std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (!in_low(y(t), a(t), c)) continue;
      const double v = -y(t) * grad(t);
      gmin = std::min(gmin, v);
      if (i < 0) continue;
      const double b = gmax - v;
      if (b > 0.0) {
        double quad = k(i, i) + k(t, t) - 2.0 * k(i, t);
        if (quad <= 0.0) quad = kTau;
        const double score = -(b * b) / quad;
        if (score < best) {
          best = score;
          j = t;
        }
      }
    }
    sol.iterations = static_cast<int>(it);
    if (i < 0 || j < 0 || gmax - gmin < tol) {
      sol.converged = true;
      break;
    }

    // Two-variable subproblem (as in LIBSVM's Solver::Solve).
    const double old_ai = a(i);
    const double old_aj = a(j);
    const double qii = k(i, i), qjj = k(j, j), qij = y(i) * y(j) * k(i, j);
    if (y(i) != y(j)) {
      double quad = qii + qjj + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad(i) - grad(j)) / quad;
      const double diff = a(i) - a(j);
      a(i) += delta;
      a(j) += delta;
      if (diff > 0.0) {
        if (a(j) < 0.0) {
          a(j) = 0.0;
          a(i) = diff;
        }
      } else if (a(i) < 0.0) {
        a(i) = 0.0;
        a(j) = -diff;
      }
      if (diff > 0.0) {
        if (a(i) > c) {
          a(i) = c;
          a(j) = c - diff;
        }
      } else if (a(j) > c) {
        a(j) = c;
        a(i) = c + diff;
      }
    } else {
      double quad = qii + qjj - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad(i) - grad(j)) / quad;
      const double sum = a(i) + a(j);
      a(i) -= delta;
      a(j) += delta;
      if (sum > c) {
        if (a(i) > c) {
          a(i) = c;
          a(j) = sum - c;
        }
      } else if (a(j) < 0.0) {
        a(j) = 0.0;
        a(i) = sum;
      }
      if (sum > c) {
        if (a(j) > c) {
          a(j) = c;
          a(i) = sum - c;
        }
      } else if (a(i) < 0.0) {
        a(i) = 0.0;
        a(j) = sum;
      }
    }
    const double dai = a(i) - old_ai;
    const double daj = a(j) - old_aj;
    // G_t += Q_ti dai + Q_tj daj
    for (Eigen::Index t = 0; t < n; ++t)
      grad(t) += y(t) * (y(i) * k(t, i) * dai + y(j) * k(t, j) * daj);
    sol.iterations = static_cast<int>(it + 1);
  }

  sol.objective = dual_objective(p, a);
  sol.kkt_violation = kkt_violation(p, a);
  sol.bias = dual_intercept(p, a);
  return sol;
}

double default_lambda(std::size_t n) {
  if (n == 0) throw std::invalid_argument("default_lambda: n must be positive");
  return 1.0 / std::sqrt(static_cast<double>(n));
}

Vector checked_labels(std::span<const int> labels, std::size_t n) {
  if (labels.size() != n)
    throw std::invalid_argument("label count " + std::to_string(labels.size()) + " does not match sample count " +
                                std::to_string(n));
  bool pos = false, neg = false;
  Vector y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == 1)
      pos = true;
    else if (labels[i] == -1)
      neg = true;
    else
      throw std::invalid_argument("labels must be +1 or -1");
    y(static_cast<Eigen::Index>(i)) = labels[i];
  }
  if (!pos) throw std::invalid_argument("training set has no samples of class +1");
  if (!neg) throw std::invalid_argument("training set has no samples of class -1");
  return y;
}

StmModel fit(std::span<const AcmtfFactors> samples, std::span<const int> labels, const CoupledKernelSpec& spec,
             double lambda, const QpOptions& qp) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  StmModel m;
  m.labels = checked_labels(labels, samples.size());
  QpProblem p{gram_matrix(samples, spec), m.labels, lambda};
  const QpSolution s = solve_qp(p, qp.tol, qp.max_passes);
  m.alpha = s.alpha;
  m.bias = qp.intercept ? s.bias : 0.0;
  m.converged = s.converged;
  m.support = support_of(s.alpha);
  m.training.assign(samples.begin(), samples.end());
  m.kernel = spec;
  m.lambda = lambda;
  return m;
}

double decision(const StmModel& m, const AcmtfFactors& f) {
  double v = m.bias;
  for (std::size_t i : m.support) {
    const auto ii = static_cast<Eigen::Index>(i);
    v += m.alpha(ii) * m.labels(ii) * coupled_kernel(m.training[i], f, m.kernel);
  }
  return v;
}

CpStmModel cpstm_fit(std::span<const KruskalTensor> samples, std::span<const int> labels,
                     std::span<const KernelSpec> specs, double lambda, const QpOptions& qp) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be > 0");
  CpStmModel m;
  m.labels = checked_labels(labels, samples.size());
  QpProblem p{cp_gram_matrix(samples, specs), m.labels, lambda};
  const QpSolution s = solve_qp(p, qp.tol, qp.max_passes);
  m.alpha = s.alpha;
  m.bias = qp.intercept ? s.bias : 0.0;
  m.converged = s.converged;
  m.support = support_of(s.alpha);
  m.training.assign(samples.begin(), samples.end());
  m.kernels.assign(specs.begin(), specs.end());
  m.lambda = lambda;
  return m;
}

double cpstm_decision(const CpStmModel& m, const KruskalTensor& x) {
  double v = m.bias;
  for (std::size_t i : m.support) {
    const auto ii = static_cast<Eigen::Index>(i);
    v += m.alpha(ii) * m.labels(ii) * cp_kernel(m.training[i], x, m.kernels);
  }
  return v;
}

std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  std::vector<int> out(labels.size(), 0);
  std::mt19937_64 rng(seed);
  for (int cls : {1, -1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
  }
  return out;
}

CvChoice cross_validate(std::span<const DenseMatrix> grams, std::span<const int> labels,
                        std::span<const std::vector<double>> weight_grid, std::span<const double> lambda_grid,
                        int folds, std::uint64_t seed, const QpOptions& qp) {
  if (grams.empty()) throw std::invalid_argument("cross_validate: no Gram matrices");
  if (weight_grid.empty() || lambda_grid.empty()) throw std::invalid_argument("cross_validate: empty grid");
  const auto n = static_cast<Eigen::Index>(labels.size());
  for (const auto& g : grams)
    if (g.rows() != n || g.cols() != n) throw std::invalid_argument("cross_validate: Gram size mismatch");
  checked_labels(labels, labels.size());
  const std::vector<int> fold = stratified_folds(labels, folds, seed);

  // Per-fold index sets.
  std::vector<std::vector<Eigen::Index>> train_idx(static_cast<std::size_t>(folds));
  std::vector<std::vector<Eigen::Index>> val_idx(static_cast<std::size_t>(folds));
  for (Eigen::Index i = 0; i < n; ++i)
    for (int f = 0; f < folds; ++f)
      (fold[static_cast<std::size_t>(i)] == f ? val_idx : train_idx)[static_cast<std::size_t>(f)].push_back(i);

  CvChoice best;
  best.accuracy = -1.0;
  best.hinge = std::numeric_limits<double>::infinity();
  DenseMatrix combined(n, n);
  for (const auto& w : weight_grid) {
    if (w.size() != grams.size()) throw std::invalid_argument("cross_validate: weight vector size mismatch");
    combined.setZero();
    for (std::size_t c = 0; c < grams.size(); ++c)
      if (w[c] != 0.0) combined += w[c] * grams[c];
    for (double lambda : lambda_grid) {
      int correct = 0;
      double hinge = 0.0;
      for (int f = 0; f < folds; ++f) {
        const auto& tr = train_idx[static_cast<std::size_t>(f)];
        const auto& va = val_idx[static_cast<std::size_t>(f)];
        if (va.empty()) continue;
        QpProblem p;
        p.gram = combined(tr, tr);
        p.labels.resize(static_cast<Eigen::Index>(tr.size()));
        for (std::size_t t = 0; t < tr.size(); ++t) p.labels(static_cast<Eigen::Index>(t)) = labels[static_cast<std::size_t>(tr[t])];
        p.lambda = lambda;
        const QpSolution s = solve_qp(p, qp.tol, qp.max_passes);
        const Vector coef = s.alpha.cwiseProduct(p.labels);
        const DenseMatrix cross = combined(va, tr);
        Vector score = cross * coef;
        if (qp.intercept) score.array() += s.bias;
        for (std::size_t v = 0; v < va.size(); ++v) {
          const int yv = labels[static_cast<std::size_t>(va[v])];
          const double sv = score(static_cast<Eigen::Index>(v));
          if (predict_label(sv) == yv) ++correct;
          hinge += std::max(0.0, 1.0 - yv * sv);
        }
      }
      const double acc = static_cast<double>(correct) / static_cast<double>(n);
      hinge /= static_cast<double>(n);
      if (acc > best.accuracy || (acc == best.accuracy && hinge < best.hinge)) {
        best.weights = w;
        best.lambda = lambda;
        best.accuracy = acc;
        best.hinge = hinge;
      }
    }
  }
  return best;
}

}  // namespace cstm
