#include "cstm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace cstm {

namespace {

std::size_t product(const DenseTensor3::Dims& d) { return d[0] * d[1] * d[2]; }

void check_dims(const DenseTensor3::Dims& d) {
  if (d[0] == 0 || d[1] == 0 || d[2] == 0)
    throw std::invalid_argument("tensor dimensions must be positive");
}

void check_mode(int mode) {
  if (mode < 1 || mode > 3)
    throw std::invalid_argument("invalid mode " + std::to_string(mode) + " (expected 1, 2 or 3)");
}

// Row count and column stride helpers for the mode-n unfolding.
// Returns (row index, column index) of element (i, j, k).
std::pair<std::size_t, std::size_t> unfold_index(int mode, const DenseTensor3::Dims& d,
                                                 std::size_t i, std::size_t j, std::size_t k) {
  switch (mode) {
    case 1: return {i, j + d[1] * k};
    case 2: return {j, i + d[0] * k};
    default: return {k, i + d[0] * j};
  }
}

}  // namespace

DenseTensor3::DenseTensor3(Dims dims) : dims_(dims) {
  check_dims(dims_);
  data_.assign(product(dims_), 0.0);
}

DenseTensor3::DenseTensor3(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
  check_dims(dims_);
  if (data_.size() != product(dims_))
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match dims product " + std::to_string(product(dims_)));
  for (double v : data_)
    if (!std::isfinite(v)) throw std::invalid_argument("tensor entries must be finite");
}

double DenseTensor3::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

void KruskalTensor::validate() const {
  const auto r = weights.size();
  if (!weights.allFinite()) throw std::invalid_argument("Kruskal weights must be finite");
  for (std::size_t f = 0; f < factors.size(); ++f) {
    const auto& m = factors[f];
    if (m.cols() != r)
      throw std::invalid_argument("factor " + std::to_string(f) + " has " + std::to_string(m.cols()) +
                                  " columns, expected " + std::to_string(r));
    if (!m.allFinite()) throw std::invalid_argument("Kruskal factors must be finite");
    if (normalized) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double n = m.col(c).norm();
        if (n != 0.0 && std::abs(n - 1.0) > 1e-10)
          throw std::invalid_argument("normalized Kruskal factor has a non-unit column");
      }
    }
  }
}

DenseMatrix unfold(const DenseTensor3& t, int mode) {
  check_mode(mode);
  const auto& d = t.dims();
  const auto rows = d[static_cast<std::size_t>(mode - 1)];
  DenseMatrix out(rows, t.size() / rows);
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i) {
        const auto [r, c] = unfold_index(mode, d, i, j, k);
        out(r, c) = t(i, j, k);
      }
  return out;
}

DenseTensor3 fold(const DenseMatrix& m, int mode, const DenseTensor3::Dims& dims) {
  check_mode(mode);
  DenseTensor3 t(dims);
  const auto rows = dims[static_cast<std::size_t>(mode - 1)];
  if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != t.size() / rows)
    throw std::invalid_argument("fold: matrix shape does not match dims");
  for (std::size_t k = 0; k < dims[2]; ++k)
    for (std::size_t j = 0; j < dims[1]; ++j)
      for (std::size_t i = 0; i < dims[0]; ++i) {
        const auto [r, c] = unfold_index(mode, dims, i, j, k);
        t(i, j, k) = m(r, c);
      }
  return t;
}

DenseMatrix khatri_rao(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("khatri_rao: column counts differ (" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.cols()) + ")");
  DenseMatrix out(a.rows() * b.rows(), a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      out.col(c).segment(i * b.rows(), b.rows()) = a(i, c) * b.col(c);
  return out;
}

DenseTensor3 kruskal_to_full(const KruskalTensor& k) {
  if (k.order() != 3) throw std::invalid_argument("kruskal_to_full needs exactly 3 factors");
  k.validate();
  const auto& a = k.factors[0];
  const auto& b = k.factors[1];
  const auto& c = k.factors[2];
  DenseTensor3 t({static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(b.rows()),
                  static_cast<std::size_t>(c.rows())});
  // X_(1) = A diag(w) (C kr B)^T
  const DenseMatrix x1 = a * k.weights.asDiagonal() * khatri_rao(c, b).transpose();
  std::copy(x1.data(), x1.data() + x1.size(), t.data().begin());
  return t;
}

DenseMatrix kruskal_to_matrix(const KruskalTensor& k) {
  if (k.order() != 2) throw std::invalid_argument("kruskal_to_matrix needs exactly 2 factors");
  k.validate();
  return k.factors[0] * k.weights.asDiagonal() * k.factors[1].transpose();
}

std::pair<DenseMatrix, Vector> normalize_columns(const DenseMatrix& m) {
  DenseMatrix out = m;
  Vector w(m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double n = m.col(c).norm();
    w(c) = n;
    if (n > 0.0) out.col(c) /= n;
  }
  return {std::move(out), std::move(w)};
}

KruskalTensor normalize_kruskal(const KruskalTensor& k) {
  KruskalTensor out = k;
  for (auto& f : out.factors) {
    auto [unit, norms] = normalize_columns(f);
    for (Eigen::Index c = 0; c < unit.cols(); ++c) {
      if (unit.col(c).sum() < 0.0) {
        unit.col(c) = -unit.col(c);
        norms(c) = -norms(c);
      }
    }
    f = std::move(unit);
    out.weights = out.weights.cwiseProduct(norms);
  }
  out.normalized = true;
  return out;
}

double inner(const DenseTensor3& a, const DenseTensor3& b) {
  if (a.dims() != b.dims()) throw std::invalid_argument("inner: dims differ");
  double s = 0.0;
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

CpAlsResult cp_als_detailed(const DenseTensor3& t, const CpAlsOptions& opts) {
  if (opts.rank < 1) throw std::invalid_argument("cp_als: rank must be >= 1");
  if (!(opts.tol > 0.0)) throw std::invalid_argument("cp_als: tol must be > 0");
  const auto r = static_cast<Eigen::Index>(opts.rank);
  const auto& d = t.dims();

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;
  std::array<DenseMatrix, 3> f;
  for (int n = 0; n < 3; ++n) {
    f[n].resize(static_cast<Eigen::Index>(d[n]), r);
    for (Eigen::Index c = 0; c < r; ++c)
      for (Eigen::Index i = 0; i < f[n].rows(); ++i) f[n](i, c) = normal(rng);
  }
  std::array<DenseMatrix, 3> unfolded{unfold(t, 1), unfold(t, 2), unfold(t, 3)};
  Vector weights = Vector::Ones(r);

  const double xnorm2 = t.squared_norm();
  CpAlsResult res;
  double prev_rel = std::numeric_limits<double>::infinity();

  for (int it = 0; it < opts.max_iter; ++it) {
    for (int n = 0; n < 3; ++n) {
      const int p = (n + 1) % 3;
      const int q = (n + 2) % 3;
      // lower-numbered remaining mode varies fastest in the unfolding
      const int lo = std::min(p, q);
      const int hi = std::max(p, q);
      DenseMatrix gram = (f[lo].transpose() * f[lo]).cwiseProduct(f[hi].transpose() * f[hi]);
      gram.diagonal().array() += 1e-12;
      const DenseMatrix mttkrp = unfolded[n] * khatri_rao(f[hi], f[lo]);
      f[n] = gram.ldlt().solve(mttkrp.transpose()).transpose();
      for (Eigen::Index c = 0; c < r; ++c) {
        const double nrm = f[n].col(c).norm();
        weights(c) = nrm;
        if (nrm > 0.0) f[n].col(c) /= nrm;
      }
    }
    KruskalTensor m{weights, {f[0], f[1], f[2]}, false};
    const DenseTensor3 full = kruskal_to_full(m);
    double err2 = 0.0;
    {
      const auto x = t.data();
      const auto y = full.data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = x[i] - y[i];
        err2 += e * e;
      }
    }
    res.error_history.push_back(err2);
    res.iterations = it + 1;
    const double rel = xnorm2 > 0.0 ? std::sqrt(err2 / xnorm2) : 0.0;
    if (std::abs(prev_rel - rel) < opts.tol) {
      prev_rel = rel;
      break;
    }
    prev_rel = rel;
  }

  res.relative_error = std::isfinite(prev_rel) ? prev_rel : 0.0;
  res.model = KruskalTensor{weights, {f[0], f[1], f[2]}, true};
  return res;
}

KruskalTensor truncated_svd(const DenseMatrix& m, std::size_t rank) {
  if (rank < 1) throw std::invalid_argument("truncated_svd: rank must be >= 1");
  Eigen::JacobiSVD<DenseMatrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto avail = std::min<Eigen::Index>(static_cast<Eigen::Index>(rank), svd.singularValues().size());
  const auto r = static_cast<Eigen::Index>(rank);
  KruskalTensor k;
  k.weights = Vector::Zero(r);
  k.factors = {DenseMatrix::Zero(m.rows(), r), DenseMatrix::Zero(m.cols(), r)};
  k.weights.head(avail) = svd.singularValues().head(avail);
  k.factors[0].leftCols(avail) = svd.matrixU().leftCols(avail);
  k.factors[1].leftCols(avail) = svd.matrixV().leftCols(avail);
  k.normalized = true;
  return k;
}

}  // namespace cstm
