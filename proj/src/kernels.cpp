#include "cstm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cstm {

namespace {

void check_compatible(const AcmtfFactors& fa, const AcmtfFactors& fb) {
  if (fa.tensor.factors.size() != 3 || fb.tensor.factors.size() != 3 || fa.matrix.factors.size() != 2 ||
      fb.matrix.factors.size() != 2)
    throw std::invalid_argument("coupled_kernel: malformed factors");
  for (int j = 0; j < 3; ++j)
    if (fa.tensor.factors[j].rows() != fb.tensor.factors[j].rows())
      throw std::invalid_argument("coupled_kernel: tensor mode " + std::to_string(j + 1) + " sizes differ");
  for (int j = 0; j < 2; ++j)
    if (fa.matrix.factors[j].rows() != fb.matrix.factors[j].rows())
      throw std::invalid_argument("coupled_kernel: matrix mode " + std::to_string(j + 1) + " sizes differ");
  if (fa.shared.rows() != fa.tensor.factors[2].rows() || fb.shared.rows() != fb.tensor.factors[2].rows() ||
      fa.shared.cols() != static_cast<Eigen::Index>(fa.rank()) ||
      fb.shared.cols() != static_cast<Eigen::Index>(fb.rank()))
    throw std::invalid_argument("coupled_kernel: shared factor has the wrong shape");
}

void check_cp_compatible(const KruskalTensor& a, const KruskalTensor& b, std::size_t nspecs) {
  if (a.order() != b.order()) throw std::invalid_argument("cp_kernel: orders differ");
  if (a.order() != nspecs) throw std::invalid_argument("cp_kernel: need one kernel spec per mode");
  for (std::size_t j = 0; j < a.order(); ++j)
    if (a.factors[j].rows() != b.factors[j].rows())
      throw std::invalid_argument("cp_kernel: mode " + std::to_string(j + 1) + " sizes differ");
}

void check_pairs(std::span<const AcmtfFactors> factors) {
  for (std::size_t i = 1; i < factors.size(); ++i) {
    try {
      check_compatible(factors[0], factors[i]);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("gram_matrix pair (" + std::to_string(i) + ", 0): " + e.what());
    }
  }
  if (!factors.empty()) check_compatible(factors[0], factors[0]);
}

void mirror_lower(DenseMatrix& g) {
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j) g(j, i) = g(i, j);
}

}  // namespace

void KernelSpec::validate() const {
  switch (kind) {
    case Kind::rbf:
      if (!std::isfinite(bandwidth) || bandwidth <= 0.0) throw std::invalid_argument("rbf bandwidth must be > 0");
      break;
    case Kind::polynomial:
      if (degree < 1) throw std::invalid_argument("polynomial degree must be >= 1");
      if (!std::isfinite(offset)) throw std::invalid_argument("polynomial offset must be finite");
      break;
    case Kind::linear: break;
  }
}

std::string to_string(KernelSpec::Kind kind) {
  switch (kind) {
    case KernelSpec::Kind::rbf: return "rbf";
    case KernelSpec::Kind::linear: return "linear";
    case KernelSpec::Kind::polynomial: return "polynomial";
  }
  return "?";
}

KernelSpec::Kind kernel_kind_from_string(const std::string& name) {
  if (name == "rbf") return KernelSpec::Kind::rbf;
  if (name == "linear") return KernelSpec::Kind::linear;
  if (name == "polynomial") return KernelSpec::Kind::polynomial;
  throw std::invalid_argument("unknown kernel kind '" + name + "'");
}

void CoupledKernelSpec::validate() const {
  k1_mode1.validate();
  k1_mode2.validate();
  k2.validate();
  k3.validate();
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("kernel weights must be finite and >= 0");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("kernel weights must not all be zero");
}

double vector_kernel(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y, const KernelSpec& spec) {
  if (x.size() != y.size())
    throw std::invalid_argument("vector_kernel: lengths differ (" + std::to_string(x.size()) + " vs " +
                                std::to_string(y.size()) + ")");
  switch (spec.kind) {
    case KernelSpec::Kind::rbf:
      return std::exp(-(x - y).squaredNorm() / (2.0 * spec.bandwidth * spec.bandwidth));
    case KernelSpec::Kind::linear: return x.dot(y);
    case KernelSpec::Kind::polynomial: return std::pow(x.dot(y) + spec.offset, spec.degree);
  }
  return 0.0;
}

double cp_kernel(const KruskalTensor& a, const KruskalTensor& b, std::span<const KernelSpec> specs) {
  check_cp_compatible(a, b, specs.size());
  double total = 0.0;
  for (Eigen::Index l = 0; l < static_cast<Eigen::Index>(a.rank()); ++l)
    for (Eigen::Index m = 0; m < static_cast<Eigen::Index>(b.rank()); ++m) {
      double prod = 1.0;
      for (std::size_t j = 0; j < specs.size(); ++j)
        prod *= vector_kernel(a.factors[j].col(l), b.factors[j].col(m), specs[j]);
      total += prod;
    }
  return total;
}

std::array<double, 3> coupled_kernel_parts(const AcmtfFactors& fa, const AcmtfFactors& fb,
                                           const CoupledKernelSpec& spec) {
  check_compatible(fa, fb);
  std::array<double, 3> parts{0.0, 0.0, 0.0};
  const auto ra = static_cast<Eigen::Index>(fa.rank());
  const auto rb = static_cast<Eigen::Index>(fb.rank());
  for (Eigen::Index k = 0; k < ra; ++k)
    for (Eigen::Index l = 0; l < rb; ++l) {
      parts[0] += vector_kernel(fa.tensor.factors[0].col(k), fb.tensor.factors[0].col(l), spec.k1_mode1) *
                  vector_kernel(fa.tensor.factors[1].col(k), fb.tensor.factors[1].col(l), spec.k1_mode2);
      parts[1] += vector_kernel(fa.shared.col(k), fb.shared.col(l), spec.k2);
      parts[2] += vector_kernel(fa.matrix.factors[0].col(k), fb.matrix.factors[0].col(l), spec.k3);
    }
  return parts;
}

double coupled_kernel(const AcmtfFactors& fa, const AcmtfFactors& fb, const CoupledKernelSpec& spec) {
  const auto p = coupled_kernel_parts(fa, fb, spec);
  return spec.weights[0] * p[0] + spec.weights[1] * p[1] + spec.weights[2] * p[2];
}

DenseMatrix gram_matrix(std::span<const AcmtfFactors> factors, const CoupledKernelSpec& spec) {
  if (factors.empty()) throw std::invalid_argument("gram_matrix: empty sample list");
  spec.validate();
  check_pairs(factors);
  const auto n = static_cast<Eigen::Index>(factors.size());
  DenseMatrix g(n, n);
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) g(i, j) = coupled_kernel(factors[i], factors[j], spec);
  mirror_lower(g);
  return g;
}

DenseMatrix gram_matrix_serial(std::span<const AcmtfFactors> factors, const CoupledKernelSpec& spec) {
  if (factors.empty()) throw std::invalid_argument("gram_matrix: empty sample list");
  spec.validate();
  const auto n = static_cast<Eigen::Index>(factors.size());
  DenseMatrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      try {
        g(i, j) = coupled_kernel(factors[i], factors[j], spec);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("gram_matrix pair (" + std::to_string(i) + ", " + std::to_string(j) +
                                    "): " + e.what());
      }
    }
  mirror_lower(g);
  return g;
}

std::array<DenseMatrix, 3> component_grams(std::span<const AcmtfFactors> factors, const CoupledKernelSpec& spec) {
  if (factors.empty()) throw std::invalid_argument("component_grams: empty sample list");
  spec.validate();
  check_pairs(factors);
  const auto n = static_cast<Eigen::Index>(factors.size());
  std::array<DenseMatrix, 3> g{DenseMatrix(n, n), DenseMatrix(n, n), DenseMatrix(n, n)};
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const auto p = coupled_kernel_parts(factors[i], factors[j], spec);
      for (int c = 0; c < 3; ++c) g[c](i, j) = p[c];
    }
  for (auto& m : g) mirror_lower(m);
  return g;
}

DenseMatrix cp_gram_matrix(std::span<const KruskalTensor> tensors, std::span<const KernelSpec> specs) {
  if (tensors.empty()) throw std::invalid_argument("cp_gram_matrix: empty sample list");
  for (const auto& s : specs) s.validate();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    try {
      check_cp_compatible(tensors[0], tensors[i], specs.size());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("cp_gram_matrix pair (" + std::to_string(i) + ", 0): " + e.what());
    }
  }
  const auto n = static_cast<Eigen::Index>(tensors.size());
  DenseMatrix g(n, n);
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) g(i, j) = cp_kernel(tensors[i], tensors[j], specs);
  mirror_lower(g);
  return g;
}

DenseMatrix cp_gram_matrix_serial(std::span<const KruskalTensor> tensors, std::span<const KernelSpec> specs) {
  if (tensors.empty()) throw std::invalid_argument("cp_gram_matrix: empty sample list");
  const auto n = static_cast<Eigen::Index>(tensors.size());
  DenseMatrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) g(i, j) = cp_kernel(tensors[i], tensors[j], specs);
  mirror_lower(g);
  return g;
}

double median_bandwidth(std::span<const Vector> columns) {
  std::vector<double> d;
  d.reserve(columns.size() * (columns.size() - (columns.empty() ? 0 : 1)) / 2);
  for (std::size_t i = 0; i < columns.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) d.push_back((columns[i] - columns[j]).norm());
  if (d.empty()) return 1.0;
  const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) {
    const double lower = *std::max_element(d.begin(), mid);
    med = 0.5 * (med + lower);
  }
  return med > 0.0 ? med : 1.0;
}

namespace {

std::vector<Vector> columns_of(std::span<const DenseMatrix* const> mats) {
  std::vector<Vector> cols;
  for (const auto* m : mats)
    for (Eigen::Index c = 0; c < m->cols(); ++c) cols.emplace_back(m->col(c));
  return cols;
}

}  // namespace

CoupledKernelSpec median_heuristic_spec(std::span<const AcmtfFactors> train, std::array<double, 3> weights) {
  std::array<std::vector<const DenseMatrix*>, 4> groups;
  for (const auto& f : train) {
    groups[0].push_back(&f.tensor.factors[0]);
    groups[1].push_back(&f.tensor.factors[1]);
    groups[2].push_back(&f.shared);
    groups[3].push_back(&f.matrix.factors[0]);
  }
  std::array<double, 4> bw{};
  for (int g = 0; g < 4; ++g) bw[g] = median_bandwidth(columns_of(groups[g]));
  CoupledKernelSpec spec{KernelSpec::rbf(bw[0]), KernelSpec::rbf(bw[1]), KernelSpec::rbf(bw[2]),
                         KernelSpec::rbf(bw[3]), weights};
  spec.validate();
  return spec;
}

std::vector<KernelSpec> median_heuristic_specs(std::span<const KruskalTensor> train) {
  if (train.empty()) throw std::invalid_argument("median_heuristic_specs: empty training set");
  std::vector<KernelSpec> specs;
  for (std::size_t j = 0; j < train[0].order(); ++j) {
    std::vector<const DenseMatrix*> mats;
    for (const auto& k : train) mats.push_back(&k.factors[j]);
    specs.push_back(KernelSpec::rbf(median_bandwidth(columns_of(mats))));
  }
  return specs;
}

std::vector<std::array<double, 3>> simplex_grid(double step) {
  if (!(step > 0.0) || step > 1.0) throw std::invalid_argument("simplex step must be in (0, 1]");
  const int n = static_cast<int>(std::lround(1.0 / step));
  std::vector<std::array<double, 3>> grid;
  for (int a = 0; a <= n; ++a)
    for (int b = 0; a + b <= n; ++b) {
      const int c = n - a - b;
      grid.push_back({static_cast<double>(a) / n, static_cast<double>(b) / n, static_cast<double>(c) / n});
    }
  return grid;
}

}  // namespace cstm
