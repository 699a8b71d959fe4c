#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cstm/acmtf.hpp"
#include "cstm/kernels.hpp"
#include "cstm/stm.hpp"

namespace cstm {

// ---------------------------------------------------------------------------
// Simulated data

/// Means of the four factor roles for one class; every role is drawn from
/// MVN(mean * 1, I).
struct FactorMeans {
  double tensor_mode1 = 1.0;
  double tensor_mode2 = 1.0;
  double shared = 1.0;
  double matrix = 1.0;
  bool operator==(const FactorMeans&) const = default;
};

struct SimCaseSpec {
  int id = 1;
  FactorMeans class1;  // label +1
  FactorMeans class2;  // label -1
  DenseTensor3::Dims tensor_dims{30, 20, 10};
  std::size_t matrix_rows = 50;
  std::size_t rank = 3;
};

/// The eight simulation cases. Throws std::invalid_argument for ids outside 1..8.
SimCaseSpec sim_case(int id);

/// Generating factors of one simulated sample (columns are components).
struct SimLatent {
  DenseMatrix tensor_mode1;  // I1 x rank
  DenseMatrix tensor_mode2;  // I2 x rank
  DenseMatrix shared;        // I3 x rank, used by both modalities
  DenseMatrix matrix;        // I4 x rank
  int label = 1;
};

/// Draws the latent factors: samples [0, n) are class 1 (+1), [n, 2n) class 2 (-1).
std::vector<SimLatent> gen_case_factors(const SimCaseSpec& spec, std::size_t n_per_class, std::uint64_t seed);

/// Tensor = sum_k a_k o b_k o s_k and matrix = sum_k m_k o s_k of the latent factors.
CoupledSample build_sample(const SimLatent& latent);

std::vector<CoupledSample> gen_case(const SimCaseSpec& spec, std::size_t n_per_class, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Splitting and metrics

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-class test count is round-half-to-even(n_class * test_fraction); indices
/// are returned in ascending order.
Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed);

struct MetricRow {
  double accuracy = 0.0;
  // Undefined values (zero denominators, single-class AUC) are empty.
  std::optional<double> precision;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> auc;
};

/// Predictions use sign(score) with sign(0) = +1. AUC is the Mann-Whitney
/// statistic over the scores with ties counted as 1/2.
MetricRow compute_metrics(std::span<const int> labels, std::span<const double> scores);

// ---------------------------------------------------------------------------
// Experiment harness

enum class Method { cstm, cpstm_tensor, cpstm_matrix };
std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct ExperimentConfig {
  std::optional<int> case_id;
  std::string dataset;  // directory of sample files, used when case_id is empty
  std::size_t n_per_class = 50;
  double test_fraction = 0.2;
  int repetitions = 50;
  std::uint64_t seed = 1;
  bool tolerate_failures = false;

  AcmtfHyperParams acmtf;
  bool normalize_input = true;  // scale each modality to unit Frobenius norm before factorizing
  /// Components whose |weight| is below this fraction of the largest are dropped before kernels.
  double prune_tolerance = 0.01;

  CoupledKernelSpec kernel;
  std::array<bool, 4> auto_bandwidth{true, true, true, true};  // k1_mode1, k1_mode2, k2, k3
  bool tune_weights = true;  // CV over the weight simplex; false keeps kernel.weights
  double weight_step = 0.1;

  std::vector<double> lambda_grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
  std::optional<double> lambda;  // fixed lambda; disables lambda CV
  int cv_folds = 5;
  bool intercept = true;  // add the equality-constraint intercept to decision values

  std::vector<Method> methods{Method::cstm, Method::cpstm_tensor, Method::cpstm_matrix};

  /// Throws ConfigError naming the offending key.
  void validate(bool require_source = true) const;
  bool operator==(const ExperimentConfig&) const = default;
};

struct RepetitionRecord {
  Method method = Method::cstm;
  int repetition = 0;
  MetricRow metrics;
  double lambda = 0.0;
  std::vector<double> weights;
};

struct MetricStat {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t count = 0;  // defined values that entered the statistics
};

struct MethodSummary {
  Method method = Method::cstm;
  MetricStat accuracy, precision, sensitivity, specificity, auc;
};

struct ExperimentFailure {
  int repetition = 0;
  std::uint64_t seed = 0;
  std::string message;
};

struct ExperimentResult {
  std::vector<RepetitionRecord> records;  // ordered by method then repetition
  std::vector<MethodSummary> summary;
  std::vector<ExperimentFailure> failures;
  std::vector<std::pair<std::string, double>> stage_seconds;
  double mean_final_objective = 0.0;  // ACMTF, averaged over samples

  const MethodSummary& of(Method m) const;
};

/// Per-sample decompositions shared by every repetition; decompositions do not
/// depend on the split, so they are computed once.
struct Decompositions {
  std::vector<AcmtfFactors> acmtf;
  std::vector<double> acmtf_objective;
  std::vector<KruskalTensor> tensor_cp;
  std::vector<KruskalTensor> matrix_svd;
};

/// Unit-Frobenius-norm copy of each modality (zero modalities are left as is).
CoupledSample normalized_sample(const CoupledSample& s);

/// Seed for stream `stream` and item `index` derived from a base seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

/// Drops components whose |weight| < tol * max|weight| (keeps at least one).
AcmtfFactors prune_components(const AcmtfFactors& f, double tol);
KruskalTensor prune_components(const KruskalTensor& k, double tol);

/// Decomposes every sample (parallel over samples with OpenMP).
Decompositions decompose_all(std::span<const CoupledSample> samples, const ExperimentConfig& cfg);
/// Single-threaded reference for decompose_all.
Decompositions decompose_all_serial(std::span<const CoupledSample> samples, const ExperimentConfig& cfg);

/// Scores of one repetition for one method, given the decompositions.
struct RepetitionOutcome {
  std::vector<double> scores;  // for split.test, in order
  double lambda = 0.0;
  std::vector<double> weights;
};
RepetitionOutcome run_method(Method method, const Decompositions& d, std::span<const int> labels, const Split& split,
                             const ExperimentConfig& cfg, std::uint64_t seed);

/// Samples of the configured case or dataset.
std::vector<CoupledSample> experiment_samples(const ExperimentConfig& cfg);

/// Repeated stratified train/test evaluation; repetitions run in parallel with
/// per-repetition seeds derived from cfg.seed and merge in repetition order.
ExperimentResult run_experiment(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::span<const CoupledSample> samples);

/// results.csv: method,repetition,accuracy,precision,sensitivity,specificity,auc
std::string results_csv(const ExperimentResult& r);
/// summary.csv: method,metric,mean,sd
std::string summary_csv(const ExperimentResult& r);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace cstm
