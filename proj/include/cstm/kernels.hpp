#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "cstm/acmtf.hpp"
#include "cstm/tensor.hpp"

namespace cstm {

struct KernelSpec {
  enum class Kind { rbf, linear, polynomial };

  Kind kind = Kind::rbf;
  double bandwidth = 1.0;  // rbf: exp(-||x - y||^2 / (2 bandwidth^2))
  int degree = 2;          // polynomial: (x.y + offset)^degree
  double offset = 1.0;

  static KernelSpec rbf(double bandwidth) { return {Kind::rbf, bandwidth, 2, 1.0}; }
  static KernelSpec linear() { return {Kind::linear, 1.0, 2, 1.0}; }
  static KernelSpec polynomial(int degree, double offset) { return {Kind::polynomial, 1.0, degree, offset}; }

  void validate() const;
  bool operator==(const KernelSpec&) const = default;
};

std::string to_string(KernelSpec::Kind kind);
KernelSpec::Kind kernel_kind_from_string(const std::string& name);

/// Three-kernel combination used by the coupled classifier:
///   w1 * K1(mode-1) K1(mode-2) on the tensor-only factors,
///   w2 * K2 on the averaged shared factor,
///   w3 * K3 on the matrix-only factor.
struct CoupledKernelSpec {
  KernelSpec k1_mode1;
  KernelSpec k1_mode2;
  KernelSpec k2;
  KernelSpec k3;
  std::array<double, 3> weights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

  void validate() const;
  bool operator==(const CoupledKernelSpec&) const = default;
};

double vector_kernel(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y, const KernelSpec& spec);

/// Tensor kernel over CP factors: sum_{l,m} prod_j K_j(a_l^(j), b_m^(j)).
/// Ranks of `a` and `b` may differ; the Kruskal weights are not used.
double cp_kernel(const KruskalTensor& a, const KruskalTensor& b, std::span<const KernelSpec> specs);

/// The three unweighted pieces of coupled_kernel, in weight order.
std::array<double, 3> coupled_kernel_parts(const AcmtfFactors& fa, const AcmtfFactors& fb,
                                           const CoupledKernelSpec& spec);

/// sum over column pairs (k of fa, l of fb) of
///   w1 K1^(1)(a_k, b_l) K1^(2)(a_k, b_l) + w2 K2(a*_k, b*_l) + w3 K3(u_k, u'_l)
/// where a*, b* are the shared-factor columns.
double coupled_kernel(const AcmtfFactors& fa, const AcmtfFactors& fb, const CoupledKernelSpec& spec);

/// Symmetric Gram matrix of coupled_kernel, filled in parallel (OpenMP) over
/// the lower triangle and mirrored.
DenseMatrix gram_matrix(std::span<const AcmtfFactors> factors, const CoupledKernelSpec& spec);

/// Single-threaded reference for gram_matrix.
DenseMatrix gram_matrix_serial(std::span<const AcmtfFactors> factors, const CoupledKernelSpec& spec);

/// The three unweighted component Grams; the weighted Gram equals
/// w1 G[0] + w2 G[1] + w3 G[2]. Parallel over rows.
std::array<DenseMatrix, 3> component_grams(std::span<const AcmtfFactors> factors, const CoupledKernelSpec& spec);

/// Symmetric Gram of cp_kernel. Parallel over rows.
DenseMatrix cp_gram_matrix(std::span<const KruskalTensor> tensors, std::span<const KernelSpec> specs);

/// Single-threaded reference for cp_gram_matrix.
DenseMatrix cp_gram_matrix_serial(std::span<const KruskalTensor> tensors, std::span<const KernelSpec> specs);

/// Median pairwise Euclidean distance between the given columns, used as an rbf
/// bandwidth. Returns 1 when fewer than two columns are given or every distance is 0.
double median_bandwidth(std::span<const Vector> columns);

/// Default coupled spec: rbf everywhere, bandwidths by the median heuristic over
/// the factor columns of `train`, equal weights.
CoupledKernelSpec median_heuristic_spec(std::span<const AcmtfFactors> train,
                                        std::array<double, 3> weights = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});

/// Per-mode rbf specs with median-heuristic bandwidths over the columns of `train`.
std::vector<KernelSpec> median_heuristic_specs(std::span<const KruskalTensor> train);

/// Grid over the probability simplex {w >= 0, w1 + w2 + w3 = 1} with the given step.
std::vector<std::array<double, 3>> simplex_grid(double step);

}  // namespace cstm
