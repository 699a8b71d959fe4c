#include "cstm/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "cstm/errors.hpp"
#include "cstm/io.hpp"

namespace cstm {

SimCaseSpec sim_case(int id) {
  SimCaseSpec s;
  s.id = id;
  switch (id) {
    case 1: s.class2 = {1.5, 1.0, 1.0, 1.25}; break;
    case 2: s.class2 = {1.5, 1.0, 1.0, 1.5}; break;
    case 3: s.class2 = {1.5, 1.0, 1.0, 1.75}; break;
    case 4: s.class2 = {1.5, 1.0, 1.0, 2.0}; break;
    case 5: s.class2 = {1.5, 1.0, 1.0, 2.25}; break;
    case 6: s.class2 = {2.0, 1.0, 1.0, 1.0}; break;
    case 7: s.class2 = {1.0, 1.0, 1.0, 2.0}; break;
    case 8: s.class2 = {1.0, 1.0, 2.0, 1.0}; break;
    default: throw std::invalid_argument("unknown simulation case " + std::to_string(id) + " (expected 1-8)");
  }
  return s;
}

std::vector<SimLatent> gen_case_factors(const SimCaseSpec& spec, std::size_t n_per_class, std::uint64_t seed) {
  if (n_per_class < 1) throw std::invalid_argument("n_per_class must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const auto r = static_cast<Eigen::Index>(spec.rank);
  auto draw = [&](std::size_t rows, double mean) {
    DenseMatrix m(static_cast<Eigen::Index>(rows), r);
    for (Eigen::Index k = 0; k < r; ++k)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, k) = mean + normal(rng);
    return m;
  };
  std::vector<SimLatent> out;
  out.reserve(2 * n_per_class);
  for (int cls = 0; cls < 2; ++cls) {
    const FactorMeans& mu = cls == 0 ? spec.class1 : spec.class2;
    for (std::size_t t = 0; t < n_per_class; ++t) {
      SimLatent l;
      l.tensor_mode1 = draw(spec.tensor_dims[0], mu.tensor_mode1);
      l.tensor_mode2 = draw(spec.tensor_dims[1], mu.tensor_mode2);
      l.shared = draw(spec.tensor_dims[2], mu.shared);
      l.matrix = draw(spec.matrix_rows, mu.matrix);
      l.label = cls == 0 ? 1 : -1;
      out.push_back(std::move(l));
    }
  }
  return out;
}

CoupledSample build_sample(const SimLatent& l) {
  const auto r = l.shared.cols();
  KruskalTensor kt{Vector::Ones(r), {l.tensor_mode1, l.tensor_mode2, l.shared}, false};
  return {kruskal_to_full(kt), l.matrix * l.shared.transpose(), l.label};
}

std::vector<CoupledSample> gen_case(const SimCaseSpec& spec, std::size_t n_per_class, std::uint64_t seed) {
  std::vector<CoupledSample> out;
  for (const auto& l : gen_case_factors(spec, n_per_class, seed)) out.push_back(build_sample(l));
  return out;
}

Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test fraction must be in (0, 1)");
  Split s;
  std::mt19937_64 rng(seed);
  for (int cls : {1, -1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    if (idx.empty()) throw std::invalid_argument("stratified_split: class " + std::to_string(cls) + " is empty");
    std::shuffle(idx.begin(), idx.end(), rng);
    // nearbyint rounds half to even in the default rounding mode
    const auto n_test = static_cast<std::size_t>(std::nearbyint(static_cast<double>(idx.size()) * test_fraction));
    s.test.insert(s.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

MetricRow compute_metrics(std::span<const int> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw std::invalid_argument("compute_metrics: lengths differ");
  if (labels.empty()) throw std::invalid_argument("compute_metrics: no samples");
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1 && labels[i] != -1) throw std::invalid_argument("labels must be +1 or -1");
    const int pred = predict_label(scores[i]);
    if (labels[i] == 1) (pred == 1 ? tp : fn)++;
    else (pred == 1 ? fp : tn)++;
  }
  auto ratio = [](std::size_t a, std::size_t b) -> std::optional<double> {
    if (b == 0) return std::nullopt;
    return static_cast<double>(a) / static_cast<double>(b);
  };
  MetricRow m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(labels.size());
  m.precision = ratio(tp, tp + fp);
  m.sensitivity = ratio(tp, tp + fn);
  m.specificity = ratio(tn, tn + fp);

  // Mann-Whitney U from average ranks.
  const std::size_t n = labels.size();
  const std::size_t npos = tp + fn;
  const std::size_t nneg = n - npos;
  if (npos > 0 && nneg > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    double pos_rank = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] == 1) pos_rank += rank[i];
    const double u = pos_rank - static_cast<double>(npos) * static_cast<double>(npos + 1) / 2.0;
    m.auc = u / (static_cast<double>(npos) * static_cast<double>(nneg));
  }
  return m;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::cstm: return "cstm";
    case Method::cpstm_tensor: return "cpstm_tensor";
    case Method::cpstm_matrix: return "cpstm_matrix";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  if (name == "cstm") return Method::cstm;
  if (name == "cpstm_tensor") return Method::cpstm_tensor;
  if (name == "cpstm_matrix") return Method::cpstm_matrix;
  throw std::invalid_argument("unknown method '" + name + "'");
}

void ExperimentConfig::validate(bool require_source) const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
  if (require_source && !case_id && dataset.empty()) throw ConfigError("missing: case");
  if (case_id && (*case_id < 1 || *case_id > 8)) fail("case", "must be between 1 and 8");
  if (n_per_class < 1) fail("n_per_class", "must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("test_fraction", "must be in (0, 1)");
  if (repetitions < 1) fail("repetitions", "must be >= 1");
  if (!(acmtf.gamma >= 0.0) || !std::isfinite(acmtf.gamma)) fail("gamma", "must be >= 0");
  if (!(acmtf.beta >= 0.0) || !std::isfinite(acmtf.beta)) fail("beta", "must be >= 0");
  if (!(acmtf.xi >= 0.0) || !std::isfinite(acmtf.xi)) fail("xi", "must be >= 0");
  if (!(acmtf.theta >= 0.0) || !std::isfinite(acmtf.theta)) fail("theta", "must be >= 0");
  if (!(acmtf.epsilon > 0.0) || !std::isfinite(acmtf.epsilon)) fail("epsilon", "must be > 0");
  if (acmtf.rank < 1) fail("rank", "must be >= 1");
  if (!(acmtf.cg_tol > 0.0)) fail("cg_tol", "must be > 0");
  if (acmtf.max_iters < 1) fail("max_iters", "must be >= 1");
  if (!(prune_tolerance >= 0.0 && prune_tolerance < 1.0)) fail("prune_tolerance", "must be in [0, 1)");
  try {
    kernel.validate();
  } catch (const std::invalid_argument& e) {
    fail("kernel", e.what());
  }
  if (!(weight_step > 0.0 && weight_step <= 1.0)) fail("weight_step", "must be in (0, 1]");
  if (lambda_grid.empty()) fail("lambda_grid", "must not be empty");
  for (double l : lambda_grid)
    if (!(l > 0.0) || !std::isfinite(l)) fail("lambda_grid", "values must be > 0");
  if (lambda && (!(*lambda > 0.0) || !std::isfinite(*lambda))) fail("lambda", "must be > 0");
  if (cv_folds < 2) fail("cv_folds", "must be >= 2");
  if (methods.empty()) fail("methods", "must not be empty");
}

const MethodSummary& ExperimentResult::of(Method m) const {
  for (const auto& s : summary)
    if (s.method == m) return s;
  throw std::invalid_argument("method " + to_string(m) + " was not run");
}

CoupledSample normalized_sample(const CoupledSample& s) {
  CoupledSample out = s;
  const double tn = std::sqrt(s.tensor.squared_norm());
  if (tn > 0.0)
    for (double& v : out.tensor.data()) v /= tn;
  const double mn = s.matrix.norm();
  if (mn > 0.0) out.matrix /= mn;
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ stream) ^ index);
}

namespace {

std::vector<Eigen::Index> kept_components(const Vector& w, double tol) {
  std::vector<Eigen::Index> keep;
  const double top = w.size() > 0 ? w.cwiseAbs().maxCoeff() : 0.0;
  for (Eigen::Index k = 0; k < w.size(); ++k)
    if (std::abs(w(k)) >= tol * top) keep.push_back(k);
  if (keep.empty() && w.size() > 0) keep.push_back(0);
  return keep;
}

KruskalTensor select_columns(const KruskalTensor& k, const std::vector<Eigen::Index>& keep) {
  KruskalTensor out;
  out.normalized = k.normalized;
  out.weights = k.weights(keep);
  for (const auto& f : k.factors) out.factors.push_back(f(Eigen::all, keep));
  return out;
}

}  // namespace

KruskalTensor prune_components(const KruskalTensor& k, double tol) {
  if (tol <= 0.0) return k;
  return select_columns(k, kept_components(k.weights, tol));
}

AcmtfFactors prune_components(const AcmtfFactors& f, double tol) {
  if (tol <= 0.0) return f;
  // A coupled component survives if it matters to either modality.
  const double zt = f.tensor.weights.cwiseAbs().maxCoeff();
  const double st = f.matrix.weights.cwiseAbs().maxCoeff();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < f.tensor.weights.size(); ++k)
    if (std::abs(f.tensor.weights(k)) >= tol * zt || std::abs(f.matrix.weights(k)) >= tol * st) keep.push_back(k);
  if (keep.empty()) keep.push_back(0);
  AcmtfFactors out;
  out.tensor = select_columns(f.tensor, keep);
  out.matrix = select_columns(f.matrix, keep);
  out.label = f.label;
  out.update_shared();
  return out;
}

namespace {

void decompose_one(const CoupledSample& raw, std::size_t i, const ExperimentConfig& cfg, Decompositions& d) {
  const CoupledSample s = cfg.normalize_input ? normalized_sample(raw) : raw;
  const AcmtfResult res = acmtf_solve(s, cfg.acmtf, derive_seed(cfg.seed, 1, i));
  d.acmtf[i] = prune_components(res.factors, cfg.prune_tolerance);
  d.acmtf_objective[i] = res.final_objective;
  const auto cp = cp_als_detailed(s.tensor, {cfg.acmtf.rank, 1e-10, 500, derive_seed(cfg.seed, 2, i)});
  d.tensor_cp[i] = prune_components(normalize_kruskal(cp.model), cfg.prune_tolerance);
  d.matrix_svd[i] = prune_components(normalize_kruskal(truncated_svd(s.matrix, cfg.acmtf.rank)), cfg.prune_tolerance);
}

Decompositions sized(std::size_t n) {
  Decompositions d;
  d.acmtf.resize(n);
  d.acmtf_objective.resize(n);
  d.tensor_cp.resize(n);
  d.matrix_svd.resize(n);
  return d;
}

}  // namespace

Decompositions decompose_all(std::span<const CoupledSample> samples, const ExperimentConfig& cfg) {
  Decompositions d = sized(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  const auto n = static_cast<long>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    try {
      decompose_one(samples[static_cast<std::size_t>(i)], static_cast<std::size_t>(i), cfg, d);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return d;
}

Decompositions decompose_all_serial(std::span<const CoupledSample> samples, const ExperimentConfig& cfg) {
  Decompositions d = sized(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) decompose_one(samples[i], i, cfg, d);
  return d;
}

namespace {

std::vector<int> subset(std::span<const int> labels, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels[i]);
  return out;
}

template <class T>
std::vector<T> gather(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

// Fits on the train block of the combined Grams (train rows first) and scores the test rows.
RepetitionOutcome fit_and_score(const std::vector<DenseMatrix>& grams, std::span<const int> train_labels,
                                std::size_t n_train, const std::vector<std::vector<double>>& weight_grid,
                                const ExperimentConfig& cfg, std::uint64_t seed) {
  std::vector<double> lambdas = cfg.lambda ? std::vector<double>{*cfg.lambda} : cfg.lambda_grid;
  RepetitionOutcome out;
  QpOptions qp;
  qp.intercept = cfg.intercept;
  const auto nt = static_cast<Eigen::Index>(n_train);
  std::vector<DenseMatrix> train_blocks;
  for (const auto& g : grams) train_blocks.push_back(g.topLeftCorner(nt, nt));
  if (weight_grid.size() == 1 && lambdas.size() == 1) {
    out.weights = weight_grid[0];
    out.lambda = lambdas[0];
  } else {
    const CvChoice c = cross_validate(train_blocks, train_labels, weight_grid, lambdas, cfg.cv_folds, seed, qp);
    out.weights = c.weights;
    out.lambda = c.lambda;
  }
  const auto n_all = grams[0].rows();
  DenseMatrix combined = DenseMatrix::Zero(n_all, n_all);
  for (std::size_t c = 0; c < grams.size(); ++c) combined += out.weights[c] * grams[c];
  QpProblem p{combined.topLeftCorner(nt, nt), checked_labels(train_labels, n_train), out.lambda};
  const QpSolution s = solve_qp(p, qp.tol, qp.max_passes);
  const Vector coef = s.alpha.cwiseProduct(p.labels);
  Vector scores = combined.bottomLeftCorner(n_all - nt, nt) * coef;
  if (qp.intercept) scores.array() += s.bias;
  out.scores.assign(scores.data(), scores.data() + scores.size());
  return out;
}

}  // namespace

RepetitionOutcome run_method(Method method, const Decompositions& d, std::span<const int> labels, const Split& split,
                             const ExperimentConfig& cfg, std::uint64_t seed) {
  std::vector<std::size_t> order = split.train;
  order.insert(order.end(), split.test.begin(), split.test.end());
  const std::vector<int> train_labels = subset(labels, split.train);

  switch (method) {
    case Method::cstm: {
      const auto all = gather(d.acmtf, order);
      const auto train = gather(d.acmtf, split.train);
      CoupledKernelSpec spec = cfg.kernel;
      const CoupledKernelSpec auto_spec = median_heuristic_spec(train, spec.weights);
      if (cfg.auto_bandwidth[0]) spec.k1_mode1.bandwidth = auto_spec.k1_mode1.bandwidth;
      if (cfg.auto_bandwidth[1]) spec.k1_mode2.bandwidth = auto_spec.k1_mode2.bandwidth;
      if (cfg.auto_bandwidth[2]) spec.k2.bandwidth = auto_spec.k2.bandwidth;
      if (cfg.auto_bandwidth[3]) spec.k3.bandwidth = auto_spec.k3.bandwidth;
      const auto parts = component_grams(all, spec);
      std::vector<DenseMatrix> grams(parts.begin(), parts.end());
      std::vector<std::vector<double>> weight_grid;
      if (cfg.tune_weights)
        for (const auto& w : simplex_grid(cfg.weight_step)) weight_grid.push_back({w[0], w[1], w[2]});
      else
        weight_grid.push_back({spec.weights[0], spec.weights[1], spec.weights[2]});
      return fit_and_score(grams, train_labels, split.train.size(), weight_grid, cfg, seed);
    }
    case Method::cpstm_tensor:
    case Method::cpstm_matrix: {
      const auto& src = method == Method::cpstm_tensor ? d.tensor_cp : d.matrix_svd;
      const auto all = gather(src, order);
      const auto specs = median_heuristic_specs(gather(src, split.train));
      std::vector<DenseMatrix> grams{cp_gram_matrix(all, specs)};
      return fit_and_score(grams, train_labels, split.train.size(), {{1.0}}, cfg, seed);
    }
  }
  throw std::invalid_argument("unknown method");
}

std::vector<CoupledSample> experiment_samples(const ExperimentConfig& cfg) {
  if (cfg.case_id) return gen_case(sim_case(*cfg.case_id), cfg.n_per_class, cfg.seed);
  std::vector<CoupledSample> out;
  for (auto& [name, s] : load_sample_dir(cfg.dataset)) {
    if (!s.label) throw FormatError("sample " + name + " has no label");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw IoError("dataset directory " + cfg.dataset + " has no samples");
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = experiment_samples(cfg);
  const double gen = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ExperimentResult r = run_experiment(cfg, samples);
  r.stage_seconds.insert(r.stage_seconds.begin(), {"load_or_generate", gen});
  return r;
}

namespace {

MetricStat stat_of(const std::vector<std::optional<double>>& values) {
  MetricStat s;
  double sum = 0.0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++s.count;
    }
  if (s.count == 0) return s;
  s.mean = sum / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (const auto& v : values)
      if (v) ss += (*v - s.mean) * (*v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.count - 1));
  }
  return s;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::span<const CoupledSample> samples) {
  cfg.validate(false);
  ExperimentResult result;
  std::vector<int> labels;
  for (const auto& s : samples) {
    if (!s.label) throw std::invalid_argument("experiment samples must be labeled");
    labels.push_back(*s.label);
  }

  auto t = std::chrono::steady_clock::now();
  auto lap = [&](const char* name) {
    const auto now = std::chrono::steady_clock::now();
    result.stage_seconds.emplace_back(name, std::chrono::duration<double>(now - t).count());
    t = now;
  };

  const Decompositions d = decompose_all(samples, cfg);
  lap("decompose");
  if (!d.acmtf_objective.empty())
    result.mean_final_objective = std::accumulate(d.acmtf_objective.begin(), d.acmtf_objective.end(), 0.0) /
                                  static_cast<double>(d.acmtf_objective.size());

  const int reps = cfg.repetitions;
  const std::size_t nm = cfg.methods.size();
  std::vector<std::vector<std::optional<RepetitionRecord>>> per_rep(static_cast<std::size_t>(reps));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(reps));
#pragma omp parallel for schedule(dynamic)
  for (int rep = 0; rep < reps; ++rep) {
    const std::uint64_t rep_seed = cfg.seed + static_cast<std::uint64_t>(rep);
    try {
      const Split split = stratified_split(labels, cfg.test_fraction, rep_seed);
      const std::vector<int> test_labels = subset(labels, split.test);
      auto& out = per_rep[static_cast<std::size_t>(rep)];
      for (std::size_t m = 0; m < nm; ++m) {
        const auto o = run_method(cfg.methods[m], d, labels, split, cfg, derive_seed(rep_seed, 3, m));
        RepetitionRecord rec;
        rec.method = cfg.methods[m];
        rec.repetition = rep;
        rec.metrics = compute_metrics(test_labels, o.scores);
        rec.lambda = o.lambda;
        rec.weights = o.weights;
        out.emplace_back(std::move(rec));
      }
    } catch (...) {
      errors[static_cast<std::size_t>(rep)] = std::current_exception();
    }
  }
  lap("classify");

  for (int rep = 0; rep < reps; ++rep) {
    const auto& e = errors[static_cast<std::size_t>(rep)];
    if (!e) continue;
    if (!cfg.tolerate_failures) std::rethrow_exception(e);
    std::string msg;
    try {
      std::rethrow_exception(e);
    } catch (const std::exception& ex) {
      msg = ex.what();
    } catch (...) {
      msg = "unknown error";
    }
    result.failures.push_back({rep, cfg.seed + static_cast<std::uint64_t>(rep), msg});
    per_rep[static_cast<std::size_t>(rep)].clear();
  }

  for (std::size_t m = 0; m < nm; ++m) {
    MethodSummary ms;
    ms.method = cfg.methods[m];
    std::vector<std::optional<double>> acc, prec, sens, spec, auc;
    for (const auto& rows : per_rep) {
      if (rows.size() != nm) continue;
      const auto& rec = *rows[m];
      result.records.push_back(rec);
      acc.emplace_back(rec.metrics.accuracy);
      prec.push_back(rec.metrics.precision);
      sens.push_back(rec.metrics.sensitivity);
      spec.push_back(rec.metrics.specificity);
      auc.push_back(rec.metrics.auc);
    }
    ms.accuracy = stat_of(acc);
    ms.precision = stat_of(prec);
    ms.sensitivity = stat_of(sens);
    ms.specificity = stat_of(spec);
    ms.auc = stat_of(auc);
    result.summary.push_back(ms);
  }
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "NA"; }

}  // namespace

std::string results_csv(const ExperimentResult& r) {
  std::ostringstream os;
  os << "method,repetition,accuracy,precision,sensitivity,specificity,auc\n";
  for (const auto& rec : r.records)
    os << to_string(rec.method) << ',' << rec.repetition << ',' << fmt(rec.metrics.accuracy) << ','
       << fmt(rec.metrics.precision) << ',' << fmt(rec.metrics.sensitivity) << ',' << fmt(rec.metrics.specificity)
       << ',' << fmt(rec.metrics.auc) << '\n';
  return os.str();
}

std::string summary_csv(const ExperimentResult& r) {
  std::ostringstream os;
  os << "method,metric,mean,sd\n";
  for (const auto& s : r.summary) {
    const std::pair<const char*, const MetricStat*> rows[] = {{"accuracy", &s.accuracy},
                                                              {"precision", &s.precision},
                                                              {"sensitivity", &s.sensitivity},
                                                              {"specificity", &s.specificity},
                                                              {"auc", &s.auc}};
    for (const auto& [name, st] : rows) {
      os << to_string(s.method) << ',' << name << ',';
      if (st->count == 0)
        os << "NA,NA\n";
      else
        os << fmt(st->mean) << ',' << fmt(st->sd) << '\n';
    }
  }
  return os.str();
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equal-length series");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size();) {
      std::size_t j = i;
      while (j + 1 < v.size() && v[order[j + 1]] == v[order[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace cstm
