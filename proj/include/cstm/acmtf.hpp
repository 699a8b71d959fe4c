#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "cstm/line_search.hpp"
#include "cstm/tensor.hpp"

namespace cstm {

/// One (tensor, matrix, label) unit. The tensor's third mode and the matrix's
/// columns are coupled, so `tensor.dim(3) == matrix.cols()`.
struct CoupledSample {
  DenseTensor3 tensor;
  DenseMatrix matrix;
  std::optional<int> label;

  void validate() const;
};

struct AcmtfHyperParams {
  double gamma = 1.0;     // data-fit weight
  double beta = 1e-3;     // sparsity weight on zeta / sigma
  double xi = 1.0;        // coupling penalty
  double theta = 1.0;     // unit-norm penalty
  double epsilon = 1e-8;  // smoothing of |w| as sqrt(w^2 + eps)
  std::size_t rank = 5;
  double cg_tol = 1e-9;  // stop when |Q_s - Q_{s-1}| < cg_tol
  int max_iters = 500;

  void validate() const;
  bool operator==(const AcmtfHyperParams&) const = default;
};

/// Joint factors of one coupled sample.
///
/// `tensor` holds (A, B, C) with weights zeta; `matrix` holds (U, V) with
/// weights sigma so that the matrix is approximated by U diag(sigma) V^T.
/// `shared` is always (C + V) / 2.
struct AcmtfFactors {
  KruskalTensor tensor;
  KruskalTensor matrix;
  DenseMatrix shared;
  std::optional<int> label;

  std::size_t rank() const { return tensor.rank(); }
  /// Recomputes `shared` from the current C and V.
  void update_shared();
  /// Shape checks: tensor factors I1xr, I2xr, I3xr; matrix factors I4xr, I3xr.
  void validate() const;
};

/// (C + V) / 2 of the tensor's third-mode factor and the matrix's second-mode factor.
DenseMatrix shared_factor(const AcmtfFactors& f);

/// Sizes used to pack the factors into one flat parameter vector.
///
/// Layout: [A | B | C | U | V | zeta | sigma], every factor column-major.
struct AcmtfLayout {
  std::size_t i1 = 0, i2 = 0, i3 = 0, i4 = 0, rank = 0;

  static AcmtfLayout of(const CoupledSample& s, std::size_t rank);
  std::size_t size() const { return rank * (i1 + i2 + i3 + i4 + i3) + 2 * rank; }
  Vector pack(const AcmtfFactors& f) const;
  AcmtfFactors unpack(const Vector& x) const;
};

/// Unconstrained ACMTF objective:
///
///   gamma ||X - [[zeta; A, B, C]]||^2 + gamma ||Y - U diag(sigma) V^T||^2 + xi ||C - V||^2
///   + sum_k beta sqrt(zeta_k^2 + eps) + beta sqrt(sigma_k^2 + eps)
///   + theta sum over the five factor columns of (||x_k|| - 1)^2
double acmtf_objective(const CoupledSample& s, const AcmtfFactors& f, const AcmtfHyperParams& h);

/// Analytic gradient of acmtf_objective, packed in AcmtfLayout order.
Vector acmtf_gradient(const CoupledSample& s, const AcmtfFactors& f, const AcmtfHyperParams& h);

/// Objective and gradient at a packed parameter vector. `grad` may be null.
double acmtf_evaluate(const CoupledSample& s, const AcmtfLayout& layout, const Vector& x,
                      const AcmtfHyperParams& h, Vector* grad);

/// Strong Wolfe search along `dir` from the packed point `x`.
LineSearchResult acmtf_line_search(const CoupledSample& s, const AcmtfLayout& layout, const Vector& x,
                                   const Vector& dir, const AcmtfHyperParams& h, double initial_step = 1.0,
                                   const WolfeOptions& opts = {});

/// Iteration state of the conjugate-gradient solver.
struct CgState {
  Vector position;
  Vector gradient;
  Vector direction;
  double step = 0.0;
  int iteration = 0;
  std::vector<double> objective_history;
};

struct AcmtfResult {
  AcmtfFactors factors;
  CgState state;
  double final_objective = 0.0;
  bool converged = false;
  int restarts = 0;
  int line_search_failures = 0;
};

/// Seeded starting point: Gaussian factors with unit columns, zeta = sigma = 1.
AcmtfFactors acmtf_initial_factors(const CoupledSample& s, std::size_t rank, std::uint64_t seed);

/// Nonlinear conjugate gradient with Hestenes-Stiefel updates.
///
/// The first step is steepest descent. A restart to steepest descent happens when
/// the HS denominator drops below 1e-12 in magnitude or the new direction is not
/// a descent direction. Stops once |Q_s - Q_{s-1}| < cg_tol or after max_iters.
/// On return the factor column norms are folded into zeta / sigma and `shared` is
/// recomputed. Columns are sign-flipped to a nonnegative sum, with each C / V
/// pair flipped together; the weights absorb the flips. `final_objective` is the
/// value at the last iterate, before this rescaling.
///
/// Throws NumericalError if the objective becomes non-finite.
AcmtfResult acmtf_solve(const CoupledSample& s, const AcmtfHyperParams& h, const AcmtfFactors& start);

inline AcmtfResult acmtf_solve(const CoupledSample& s, const AcmtfHyperParams& h, std::uint64_t seed) {
  return acmtf_solve(s, h, acmtf_initial_factors(s, h.rank, seed));
}

inline AcmtfFactors acmtf_decompose(const CoupledSample& s, const AcmtfHyperParams& h, std::uint64_t seed) {
  return acmtf_solve(s, h, seed).factors;
}

}  // namespace cstm
