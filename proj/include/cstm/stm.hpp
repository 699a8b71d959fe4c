#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cstm/acmtf.hpp"
#include "cstm/kernels.hpp"

namespace cstm {

/// Dual problem of the hinge-loss classifier without intercept term:
///
///   min 1/2 a^T D_y K D_y a - 1^T a   s.t.  y^T a = 0,  0 <= a <= 1 / (2 n lambda)
struct QpProblem {
  DenseMatrix gram;
  Vector labels;  // entries +1 / -1
  double lambda = 1.0;

  double box() const { return 1.0 / (2.0 * static_cast<double>(labels.size()) * lambda); }
  /// Throws std::invalid_argument for a non-symmetric Gram, bad labels or lambda <= 0.
  void validate() const;
};

struct QpSolution {
  Vector alpha;
  double objective = 0.0;
  /// Maximal violating-pair gap max_{I_up} -y_t G_t - min_{I_low} -y_t G_t (<= 0 at optimum).
  double kkt_violation = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Multiplier of the equality constraint, usable as an intercept (see dual_intercept).
  double bias = 0.0;
};

/// Dual objective 1/2 a^T D_y K D_y a - 1^T a.
double dual_objective(const QpProblem& p, const Vector& alpha);

/// Violating-pair KKT gap of `alpha` (0 when every pair is optimal).
double kkt_violation(const QpProblem& p, const Vector& alpha);

/// Intercept implied by the equality constraint y^T a = 0: minus its KKT
/// multiplier, averaged over free variables (midpoint of the feasible interval
/// when no variable is free).
double dual_intercept(const QpProblem& p, const Vector& alpha);

/// Sequential minimal optimization with second-order working-set selection.
///
/// Runs at most `max_passes * n` pair updates and stops once the KKT gap is below
/// `tol`. If the budget runs out, the last iterate is returned with `converged == false`.
QpSolution solve_qp(const QpProblem& p, double tol = 1e-6, int max_passes = 1000);

/// Regularization schedule lambda_n = n^(-1/2).
double default_lambda(std::size_t n);

/// sign with the tie rule sign(0) = +1.
inline int predict_label(double score) { return score >= 0.0 ? 1 : -1; }

struct QpOptions {
  double tol = 1e-6;
  int max_passes = 1000;
  /// Add dual_intercept to decision values. Off gives the bare kernel expansion.
  bool intercept = true;
};

/// Coupled support tensor machine.
struct StmModel {
  Vector alpha;
  std::vector<std::size_t> support;
  std::vector<AcmtfFactors> training;
  Vector labels;
  CoupledKernelSpec kernel;
  double lambda = 1.0;
  double bias = 0.0;
  bool converged = true;
};

/// Builds the Gram matrix, solves the dual and keeps the support set (alpha > 1e-10).
StmModel fit(std::span<const AcmtfFactors> samples, std::span<const int> labels, const CoupledKernelSpec& spec,
             double lambda, const QpOptions& qp = {});

/// sum_i alpha_i y_i K(train_i, f) + bias.
double decision(const StmModel& m, const AcmtfFactors& f);

/// Single-modality CP support tensor machine.
struct CpStmModel {
  Vector alpha;
  std::vector<std::size_t> support;
  std::vector<KruskalTensor> training;
  Vector labels;
  std::vector<KernelSpec> kernels;
  double lambda = 1.0;
  double bias = 0.0;
  bool converged = true;
};

CpStmModel cpstm_fit(std::span<const KruskalTensor> samples, std::span<const int> labels,
                     std::span<const KernelSpec> specs, double lambda, const QpOptions& qp = {});

double cpstm_decision(const CpStmModel& m, const KruskalTensor& x);

/// Checks that `labels` are +1/-1, match `n`, and contain both classes.
Vector checked_labels(std::span<const int> labels, std::size_t n);

/// Outcome of a cross-validated choice of kernel weights and lambda.
struct CvChoice {
  std::vector<double> weights;
  double lambda = 0.0;
  double accuracy = 0.0;
  double hinge = 0.0;
};

/// k-fold stratified cross-validation over precomputed component Grams.
///
/// The candidate Gram for weights w is sum_c w[c] grams[c]. Candidates are ranked
/// by validation accuracy, ties broken by mean validation hinge loss and then by
/// grid order (weights outer, lambda inner).
CvChoice cross_validate(std::span<const DenseMatrix> grams, std::span<const int> labels,
                        std::span<const std::vector<double>> weight_grid, std::span<const double> lambda_grid,
                        int folds, std::uint64_t seed, const QpOptions& qp = {});

/// Stratified fold index (0..folds-1) per sample.
std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed);

}  // namespace cstm
