#include "cstm/acmtf.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "cstm/errors.hpp"

namespace cstm {

namespace {

using ConstMap = Eigen::Map<const DenseMatrix>;
using MutMap = Eigen::Map<DenseMatrix>;

// Offsets of the blocks inside the packed vector.
struct Offsets {
  Eigen::Index a, b, c, u, v, zeta, sigma;
};

Offsets offsets_of(const AcmtfLayout& l) {
  const auto r = static_cast<Eigen::Index>(l.rank);
  Offsets o{};
  o.a = 0;
  o.b = o.a + static_cast<Eigen::Index>(l.i1) * r;
  o.c = o.b + static_cast<Eigen::Index>(l.i2) * r;
  o.u = o.c + static_cast<Eigen::Index>(l.i3) * r;
  o.v = o.u + static_cast<Eigen::Index>(l.i4) * r;
  o.zeta = o.v + static_cast<Eigen::Index>(l.i3) * r;
  o.sigma = o.zeta + r;
  return o;
}

// theta * (||x|| - 1)^2 summed over columns; gradient 2 theta (||x|| - 1) x / ||x||.
double norm_penalty(const Eigen::Ref<const DenseMatrix>& m, double theta, DenseMatrix* grad) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double n = m.col(c).norm();
    s += (n - 1.0) * (n - 1.0);
    if (grad != nullptr && n > 0.0) grad->col(c) += (2.0 * theta * (n - 1.0) / n) * m.col(c);
  }
  return theta * s;
}

}  // namespace

void CoupledSample::validate() const {
  if (tensor.size() == 0) throw std::invalid_argument("coupled sample has an empty tensor");
  if (static_cast<std::size_t>(matrix.cols()) != tensor.dim(3))
    throw std::invalid_argument("coupled sample: tensor mode 3 has size " + std::to_string(tensor.dim(3)) +
                                " but the matrix has " + std::to_string(matrix.cols()) + " columns");
  if (matrix.rows() == 0) throw std::invalid_argument("coupled sample has an empty matrix");
  if (!matrix.allFinite()) throw std::invalid_argument("coupled sample matrix must be finite");
  if (label && *label != 1 && *label != -1) throw std::invalid_argument("labels must be +1 or -1");
}

void AcmtfHyperParams::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument(std::string(name) + " must be finite and >= 0");
  };
  nonneg(gamma, "gamma");
  nonneg(beta, "beta");
  nonneg(xi, "xi");
  nonneg(theta, "theta");
  if (!std::isfinite(epsilon) || epsilon <= 0.0) throw std::invalid_argument("epsilon must be > 0");
  if (rank < 1) throw std::invalid_argument("rank must be >= 1");
  if (!std::isfinite(cg_tol) || cg_tol <= 0.0) throw std::invalid_argument("cg_tol must be > 0");
  if (max_iters < 1) throw std::invalid_argument("max_iters must be >= 1");
}

void AcmtfFactors::update_shared() { shared = shared_factor(*this); }

void AcmtfFactors::validate() const {
  if (tensor.order() != 3 || matrix.order() != 2)
    throw std::invalid_argument("ACMTF factors need 3 tensor factors and 2 matrix factors");
  tensor.validate();
  matrix.validate();
  if (tensor.rank() != matrix.rank()) throw std::invalid_argument("tensor and matrix ranks differ");
  if (tensor.factors[2].rows() != matrix.factors[1].rows())
    throw std::invalid_argument("coupled factors have different row counts");
  if (shared.rows() != tensor.factors[2].rows() || shared.cols() != tensor.factors[2].cols())
    throw std::invalid_argument("shared factor has the wrong shape");
}

DenseMatrix shared_factor(const AcmtfFactors& f) {
  if (f.tensor.factors.size() != 3 || f.matrix.factors.size() != 2)
    throw std::invalid_argument("shared_factor: malformed factors");
  const auto& c = f.tensor.factors[2];
  const auto& v = f.matrix.factors[1];
  if (c.rows() != v.rows() || c.cols() != v.cols())
    throw std::invalid_argument("shared_factor: coupled factor shapes differ");
  return (c + v) / 2.0;
}

AcmtfLayout AcmtfLayout::of(const CoupledSample& s, std::size_t rank) {
  s.validate();
  return {s.tensor.dim(1), s.tensor.dim(2), s.tensor.dim(3), static_cast<std::size_t>(s.matrix.rows()), rank};
}

Vector AcmtfLayout::pack(const AcmtfFactors& f) const {
  const auto r = static_cast<Eigen::Index>(rank);
  auto expect = [&](const DenseMatrix& m, std::size_t rows, const char* what) {
    if (static_cast<std::size_t>(m.rows()) != rows || m.cols() != r)
      throw std::invalid_argument(std::string("factor ") + what + " has shape " + std::to_string(m.rows()) + "x" +
                                  std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                                  std::to_string(r));
  };
  if (f.tensor.factors.size() != 3 || f.matrix.factors.size() != 2)
    throw std::invalid_argument("ACMTF factors need 3 tensor factors and 2 matrix factors");
  expect(f.tensor.factors[0], i1, "A");
  expect(f.tensor.factors[1], i2, "B");
  expect(f.tensor.factors[2], i3, "C");
  expect(f.matrix.factors[0], i4, "U");
  expect(f.matrix.factors[1], i3, "V");
  if (f.tensor.weights.size() != r || f.matrix.weights.size() != r)
    throw std::invalid_argument("weight vectors do not match the rank");

  Vector x(static_cast<Eigen::Index>(size()));
  const auto o = offsets_of(*this);
  auto put = [&](Eigen::Index at, const DenseMatrix& m) {
    x.segment(at, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
  };
  put(o.a, f.tensor.factors[0]);
  put(o.b, f.tensor.factors[1]);
  put(o.c, f.tensor.factors[2]);
  put(o.u, f.matrix.factors[0]);
  put(o.v, f.matrix.factors[1]);
  x.segment(o.zeta, r) = f.tensor.weights;
  x.segment(o.sigma, r) = f.matrix.weights;
  return x;
}

AcmtfFactors AcmtfLayout::unpack(const Vector& x) const {
  if (static_cast<std::size_t>(x.size()) != size()) throw std::invalid_argument("packed vector has the wrong length");
  const auto r = static_cast<Eigen::Index>(rank);
  const auto o = offsets_of(*this);
  auto get = [&](Eigen::Index at, std::size_t rows) {
    return DenseMatrix(ConstMap(x.data() + at, static_cast<Eigen::Index>(rows), r));
  };
  AcmtfFactors f;
  f.tensor.factors = {get(o.a, i1), get(o.b, i2), get(o.c, i3)};
  f.tensor.weights = x.segment(o.zeta, r);
  f.matrix.factors = {get(o.u, i4), get(o.v, i3)};
  f.matrix.weights = x.segment(o.sigma, r);
  f.update_shared();
  return f;
}

double acmtf_evaluate(const CoupledSample& s, const AcmtfLayout& l, const Vector& x, const AcmtfHyperParams& h,
                      Vector* grad) {
  if (static_cast<std::size_t>(x.size()) != l.size()) throw std::invalid_argument("packed vector has the wrong length");
  const auto r = static_cast<Eigen::Index>(l.rank);
  const auto i1 = static_cast<Eigen::Index>(l.i1);
  const auto i2 = static_cast<Eigen::Index>(l.i2);
  const auto i3 = static_cast<Eigen::Index>(l.i3);
  const auto i4 = static_cast<Eigen::Index>(l.i4);
  const auto o = offsets_of(l);

  const ConstMap a(x.data() + o.a, i1, r);
  const ConstMap b(x.data() + o.b, i2, r);
  const ConstMap c(x.data() + o.c, i3, r);
  const ConstMap u(x.data() + o.u, i4, r);
  const ConstMap v(x.data() + o.v, i3, r);
  const auto zeta = x.segment(o.zeta, r);
  const auto sigma = x.segment(o.sigma, r);

  // Tensor residual in mode-1 unfolded form (the storage layout itself).
  const DenseMatrix cb = khatri_rao(c, b);
  const ConstMap x1(s.tensor.data().data(), i1, i2 * i3);
  const DenseMatrix e1 = a * zeta.asDiagonal() * cb.transpose() - x1;
  // Matrix residual.
  const DenseMatrix e2 = u * sigma.asDiagonal() * v.transpose() - s.matrix;
  const DenseMatrix cv = c - v;

  double q = h.gamma * e1.squaredNorm() + h.gamma * e2.squaredNorm() + h.xi * cv.squaredNorm();
  for (Eigen::Index k = 0; k < r; ++k)
    q += h.beta * std::sqrt(zeta(k) * zeta(k) + h.epsilon) + h.beta * std::sqrt(sigma(k) * sigma(k) + h.epsilon);

  if (grad == nullptr) {
    q += norm_penalty(a, h.theta, nullptr) + norm_penalty(b, h.theta, nullptr) + norm_penalty(c, h.theta, nullptr) +
         norm_penalty(u, h.theta, nullptr) + norm_penalty(v, h.theta, nullptr);
    return q;
  }

  grad->resize(static_cast<Eigen::Index>(l.size()));
  MutMap ga(grad->data() + o.a, i1, r);
  MutMap gb(grad->data() + o.b, i2, r);
  MutMap gc(grad->data() + o.c, i3, r);
  MutMap gu(grad->data() + o.u, i4, r);
  MutMap gv(grad->data() + o.v, i3, r);
  auto gzeta = grad->segment(o.zeta, r);
  auto gsigma = grad->segment(o.sigma, r);

  const double g2 = 2.0 * h.gamma;
  ga = g2 * e1 * cb * zeta.asDiagonal();
  // P = A^T E_(1): row m holds sum_i A(i,m) E(i, j, l) at column j + I2 l.
  const DenseMatrix p = a.transpose() * e1;
  gb.setZero();
  gc.setZero();
  for (Eigen::Index m = 0; m < r; ++m) {
    double gz = 0.0;
    for (Eigen::Index l3 = 0; l3 < i3; ++l3) {
      double cdot = 0.0;  // sum_j P(m, j + I2 l3) B(j, m)
      for (Eigen::Index j = 0; j < i2; ++j) {
        const double pv = p(m, j + i2 * l3);
        gb(j, m) += pv * c(l3, m);
        cdot += pv * b(j, m);
      }
      gc(l3, m) = cdot;
      gz += cdot * c(l3, m);
    }
    gb.col(m) *= g2 * zeta(m);
    gc.col(m) *= g2 * zeta(m);
    gzeta(m) = g2 * gz + h.beta * zeta(m) / std::sqrt(zeta(m) * zeta(m) + h.epsilon);
  }

  gu = g2 * e2 * v * sigma.asDiagonal();
  gv = g2 * e2.transpose() * u * sigma.asDiagonal();
  const DenseMatrix e2v = e2 * v;
  for (Eigen::Index m = 0; m < r; ++m)
    gsigma(m) = g2 * u.col(m).dot(e2v.col(m)) + h.beta * sigma(m) / std::sqrt(sigma(m) * sigma(m) + h.epsilon);

  gc += 2.0 * h.xi * cv;
  gv -= 2.0 * h.xi * cv;

  DenseMatrix tmp;
  auto add_norm = [&](const ConstMap& f, MutMap& g) {
    tmp = DenseMatrix::Zero(f.rows(), f.cols());
    const double pen = norm_penalty(f, h.theta, &tmp);
    g += tmp;
    return pen;
  };
  q += add_norm(a, ga) + add_norm(b, gb) + add_norm(c, gc) + add_norm(u, gu) + add_norm(v, gv);
  return q;
}

double acmtf_objective(const CoupledSample& s, const AcmtfFactors& f, const AcmtfHyperParams& h) {
  const AcmtfLayout l = AcmtfLayout::of(s, f.tensor.rank());
  return acmtf_evaluate(s, l, l.pack(f), h, nullptr);
}

Vector acmtf_gradient(const CoupledSample& s, const AcmtfFactors& f, const AcmtfHyperParams& h) {
  const AcmtfLayout l = AcmtfLayout::of(s, f.tensor.rank());
  Vector g;
  acmtf_evaluate(s, l, l.pack(f), h, &g);
  return g;
}

LineSearchResult acmtf_line_search(const CoupledSample& s, const AcmtfLayout& layout, const Vector& x,
                                   const Vector& dir, const AcmtfHyperParams& h, double initial_step,
                                   const WolfeOptions& opts) {
  Vector g;
  const double f0 = acmtf_evaluate(s, layout, x, h, &g);
  const double slope0 = g.dot(dir);
  Vector trial(x.size());
  auto phi = [&](double step) {
    trial = x + step * dir;
    Vector gt;
    const double v = acmtf_evaluate(s, layout, trial, h, &gt);
    return std::pair{v, gt.dot(dir)};
  };
  return strong_wolfe(phi, f0, slope0, initial_step, opts);
}

AcmtfFactors acmtf_initial_factors(const CoupledSample& s, std::size_t rank, std::uint64_t seed) {
  s.validate();
  const auto r = static_cast<Eigen::Index>(rank);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto gaussian = [&](std::size_t rows) {
    DenseMatrix m(static_cast<Eigen::Index>(rows), r);
    for (Eigen::Index c = 0; c < r; ++c)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, c) = normal(rng);
    return normalize_columns(m).first;
  };
  AcmtfFactors f;
  f.tensor.factors = {gaussian(s.tensor.dim(1)), gaussian(s.tensor.dim(2)), gaussian(s.tensor.dim(3))};
  f.matrix.factors = {gaussian(static_cast<std::size_t>(s.matrix.rows())), gaussian(s.tensor.dim(3))};
  f.tensor.weights = Vector::Ones(r);
  f.matrix.weights = Vector::Ones(r);
  f.update_shared();
  return f;
}

namespace {

// Folds column norms into zeta / sigma. Signs follow normalize_kruskal except
// that C and V columns flip together, chosen by the sign of their summed column.
void canonicalize(AcmtfFactors& f) {
  auto fold = [](KruskalTensor& k) {
    for (auto& m : k.factors) {
      auto [unit, norms] = normalize_columns(m);
      m = std::move(unit);
      k.weights = k.weights.cwiseProduct(norms);
    }
    k.normalized = true;
  };
  fold(f.tensor);
  fold(f.matrix);
  auto own = [](KruskalTensor& k, std::size_t mode) {
    DenseMatrix& m = k.factors[mode];
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (m.col(c).sum() < 0.0) {
        m.col(c) = -m.col(c);
        k.weights(c) = -k.weights(c);
      }
  };
  own(f.tensor, 0);
  own(f.tensor, 1);
  own(f.matrix, 0);
  DenseMatrix& c = f.tensor.factors[2];
  DenseMatrix& v = f.matrix.factors[1];
  for (Eigen::Index k = 0; k < c.cols(); ++k)
    if (c.col(k).sum() + v.col(k).sum() < 0.0) {
      c.col(k) = -c.col(k);
      v.col(k) = -v.col(k);
      f.tensor.weights(k) = -f.tensor.weights(k);
      f.matrix.weights(k) = -f.matrix.weights(k);
    }
  f.update_shared();
}

}  // namespace

AcmtfResult acmtf_solve(const CoupledSample& s, const AcmtfHyperParams& h, const AcmtfFactors& start) {
  h.validate();
  const AcmtfLayout layout = AcmtfLayout::of(s, h.rank);

  AcmtfResult res;
  CgState& st = res.state;
  st.position = layout.pack(start);

  // Cache of the most recent evaluation inside the line search, so the accepted
  // point does not need to be evaluated twice.
  double cached_step = -1.0;
  double cached_value = 0.0;
  Vector cached_grad;
  Vector trial(st.position.size());

  auto check_finite = [&](double q) {
    if (!std::isfinite(q))
      throw NumericalError("ACMTF objective became non-finite at iteration " + std::to_string(st.iteration));
  };

  double q = acmtf_evaluate(s, layout, st.position, h, &st.gradient);
  check_finite(q);
  st.objective_history.push_back(q);
  st.direction = -st.gradient;
  bool steepest = true;
  double prev_step = 0.0;
  double prev_slope = 0.0;

  for (st.iteration = 0; st.iteration < h.max_iters; ++st.iteration) {
    double slope = st.gradient.dot(st.direction);
    if (!(slope < 0.0)) {
      st.direction = -st.gradient;
      slope = st.gradient.dot(st.direction);
      steepest = true;
      ++res.restarts;
    }
    if (slope == 0.0) {  // zero gradient
      res.converged = true;
      break;
    }

    double init = (st.iteration == 0 || prev_slope == 0.0) ? 1.0 / std::sqrt(-slope)
                                                             : prev_step * prev_slope / slope;
    if (!std::isfinite(init) || init <= 0.0) init = 1.0;

    const Vector& x = st.position;
    const Vector& d = st.direction;
    auto phi = [&](double step) {
      trial = x + step * d;
      const double v = acmtf_evaluate(s, layout, trial, h, &cached_grad);
      cached_step = step;
      cached_value = v;
      return std::pair{v, cached_grad.dot(d)};
    };
    const LineSearchResult ls = strong_wolfe(phi, q, slope, init);
    if (!ls.wolfe) ++res.line_search_failures;
    if (ls.step <= 0.0 || !(ls.value < q)) {
      if (steepest) {  // no progress along steepest descent either
        res.converged = true;
        break;
      }
      st.direction = -st.gradient;
      steepest = true;
      ++res.restarts;
      continue;
    }

    st.step = ls.step;
    const Vector old_grad = st.gradient;
    st.position = x + ls.step * d;
    double q_new;
    if (cached_step == ls.step) {
      q_new = cached_value;
      st.gradient = cached_grad;
    } else {
      q_new = acmtf_evaluate(s, layout, st.position, h, &st.gradient);
    }
    check_finite(q_new);
    st.objective_history.push_back(q_new);
    prev_step = ls.step;
    prev_slope = slope;

    const bool done = std::abs(q - q_new) < h.cg_tol;
    q = q_new;
    if (done) {
      res.converged = true;
      ++st.iteration;
      break;
    }

    // Hestenes-Stiefel: beta = g_new^T (g_new - g_old) / (d^T (g_new - g_old))
    const Vector y = st.gradient - old_grad;
    const double denom = st.direction.dot(y);
    if (std::abs(denom) < 1e-12) {
      st.direction = -st.gradient;
      steepest = true;
      ++res.restarts;
    } else {
      const double beta = st.gradient.dot(y) / denom;
      st.direction = -st.gradient + beta * st.direction;
      steepest = false;
    }
  }

  res.final_objective = q;
  AcmtfFactors f = layout.unpack(st.position);
  canonicalize(f);
  f.label = s.label;
  res.factors = std::move(f);
  return res;
}

}  // namespace cstm
