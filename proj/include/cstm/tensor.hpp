#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cstm {

using DenseMatrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense third-order tensor.
///
/// Entries are stored mode-1 fastest: element (i, j, k) lives at
/// `i + I1 * (j + I2 * k)`. Every unfolding and file payload in this
/// project uses the same layout.
class DenseTensor3 {
 public:
  using Dims = std::array<std::size_t, 3>;

  DenseTensor3() = default;
  /// Zero tensor. All dims must be positive.
  explicit DenseTensor3(Dims dims);
  /// Takes ownership of `data`; throws if the size does not match or an entry is not finite.
  DenseTensor3(Dims dims, std::vector<double> data);

  const Dims& dims() const { return dims_; }
  std::size_t dim(int mode) const { return dims_.at(static_cast<std::size_t>(mode - 1)); }
  std::size_t size() const { return data_.size(); }

  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[i + dims_[0] * (j + dims_[1] * k)];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[i + dims_[0] * (j + dims_[1] * k)];
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double squared_norm() const;

  bool operator==(const DenseTensor3&) const = default;

 private:
  Dims dims_{0, 0, 0};
  std::vector<double> data_;
};

/// CP / Kruskal representation: sum_m weights[m] * outer(factors[0].col(m), ...).
struct KruskalTensor {
  Vector weights;
  std::vector<DenseMatrix> factors;
  bool normalized = false;

  std::size_t rank() const { return static_cast<std::size_t>(weights.size()); }
  std::size_t order() const { return factors.size(); }

  /// Throws std::invalid_argument when the column counts disagree with the weights,
  /// entries are not finite, or a `normalized` factor has a column whose norm is not 1.
  void validate() const;
};

/// Mode-n unfolding (mode in {1,2,3}). Columns are mode-n fibers; the remaining
/// modes are ordered with the lower-numbered mode varying fastest.
DenseMatrix unfold(const DenseTensor3& t, int mode);

/// Inverse of unfold.
DenseTensor3 fold(const DenseMatrix& m, int mode, const DenseTensor3::Dims& dims);

/// Column-wise Kronecker product. Row index of the result is `i * b.rows() + j`
/// for a-row i and b-row j, so `unfold(t, 1) == A * diag(w) * khatri_rao(C, B)^T`.
DenseMatrix khatri_rao(const DenseMatrix& a, const DenseMatrix& b);

/// Full tensor of a three-factor Kruskal tensor.
DenseTensor3 kruskal_to_full(const KruskalTensor& k);

/// Matrix U diag(w) V^T of a two-factor Kruskal tensor.
DenseMatrix kruskal_to_matrix(const KruskalTensor& k);

/// Scales every column to unit Euclidean norm. Zero columns are left unchanged
/// and get weight 0.
std::pair<DenseMatrix, Vector> normalize_columns(const DenseMatrix& m);

/// Folds factor column norms into the weights and canonicalizes signs so that
/// each factor column has a nonnegative entry sum; any flipped sign is carried
/// by the weight. Leaves the represented tensor unchanged.
KruskalTensor normalize_kruskal(const KruskalTensor& k);

/// Inner product of two order-3 tensors.
double inner(const DenseTensor3& a, const DenseTensor3& b);

struct CpAlsOptions {
  std::size_t rank = 5;
  double tol = 1e-8;
  int max_iter = 500;
  std::uint64_t seed = 0;
};

struct CpAlsResult {
  KruskalTensor model;
  /// Squared reconstruction error after each sweep.
  std::vector<double> error_history;
  int iterations = 0;
  /// ||X - model|| / ||X||, or 0 for a zero input.
  double relative_error = 0.0;
};

/// CP decomposition by alternating least squares.
///
/// Initial factors are seeded Gaussian. Stops when the relative reconstruction
/// error changes by less than `tol` between sweeps or after `max_iter` sweeps.
/// Each least-squares solve adds a 1e-12 ridge to the normal equations so a
/// singular Gram (for instance from a zero tensor) does not abort the fit.
CpAlsResult cp_als_detailed(const DenseTensor3& t, const CpAlsOptions& opts);

inline KruskalTensor cp_als(const DenseTensor3& t, std::size_t rank, double tol, int max_iter,
                            std::uint64_t seed) {
  return cp_als_detailed(t, {rank, tol, max_iter, seed}).model;
}

/// Rank-r truncated SVD written as a two-factor Kruskal tensor (U, V; weights = singular values).
KruskalTensor truncated_svd(const DenseMatrix& m, std::size_t rank);

}  // namespace cstm
