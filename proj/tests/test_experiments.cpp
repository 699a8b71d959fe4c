#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "cstm/errors.hpp"
#include "cstm/experiments.hpp"

using namespace cstm;

namespace {

// Pairwise definition of the AUC with ties credited 1/2.
double brute_auc(const std::vector<int>& y, const std::vector<double>& s) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j)
      if (y[i] == 1 && y[j] == -1) {
        den += 1.0;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

std::vector<int> labels_of(const std::vector<CoupledSample>& s) {
  std::vector<int> out;
  for (const auto& x : s) out.push_back(*x.label);
  return out;
}

ExperimentConfig small_config(int case_id, std::size_t n, int reps) {
  ExperimentConfig c;
  c.case_id = case_id;
  c.n_per_class = n;
  c.repetitions = reps;
  c.acmtf.max_iters = 60;
  c.lambda_grid = {1e-2, 1.0};
  c.cv_folds = 3;
  return c;
}

}  // namespace

TEST(SimCase, TableRows) {
  const FactorMeans ones{1, 1, 1, 1};
  const FactorMeans expected[] = {{1.5, 1, 1, 1.25}, {1.5, 1, 1, 1.5}, {1.5, 1, 1, 1.75}, {1.5, 1, 1, 2.0},
                                  {1.5, 1, 1, 2.25}, {2.0, 1, 1, 1.0}, {1.0, 1, 1, 2.0},  {1.0, 1, 2.0, 1.0}};
  for (int id = 1; id <= 8; ++id) {
    const SimCaseSpec s = sim_case(id);
    EXPECT_EQ(s.id, id);
    EXPECT_EQ(s.class1, ones) << id;
    EXPECT_EQ(s.class2, expected[id - 1]) << id;
    EXPECT_EQ(s.tensor_dims, (DenseTensor3::Dims{30, 20, 10}));
    EXPECT_EQ(s.matrix_rows, 50u);
    EXPECT_EQ(s.rank, 3u);
  }
  EXPECT_THROW(sim_case(0), std::invalid_argument);
  EXPECT_THROW(sim_case(9), std::invalid_argument);
}

TEST(GenCase, ShapesLabelsAndBalance) {
  const auto s = gen_case(sim_case(2), 4, 11);
  ASSERT_EQ(s.size(), 8u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s[i].tensor.dims(), (DenseTensor3::Dims{30, 20, 10}));
    EXPECT_EQ(s[i].matrix.rows(), 50);
    EXPECT_EQ(s[i].matrix.cols(), 10);
    EXPECT_EQ(*s[i].label, i < 4 ? 1 : -1);
  }
  EXPECT_THROW(gen_case(sim_case(2), 0, 1), std::invalid_argument);
}

TEST(GenCase, ExactRankThreeWithSharedFactor) {
  const auto latent = gen_case_factors(sim_case(3), 3, 5);
  for (const auto& l : latent) {
    const CoupledSample s = build_sample(l);
    double max_err = 0.0;
    for (std::size_t i = 0; i < 30; ++i)
      for (std::size_t j = 0; j < 20; ++j)
        for (std::size_t k = 0; k < 10; ++k) {
          double v = 0.0;
          for (Eigen::Index c = 0; c < 3; ++c)
            v += l.tensor_mode1(static_cast<Eigen::Index>(i), c) * l.tensor_mode2(static_cast<Eigen::Index>(j), c) *
                 l.shared(static_cast<Eigen::Index>(k), c);
          max_err = std::max(max_err, std::abs(v - s.tensor(i, j, k)));
        }
    EXPECT_LT(max_err, 1e-12);
    EXPECT_LT((s.matrix - l.matrix * l.shared.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GenCase, ClassMeansFollowTheCase) {
  const std::size_t n = 200;
  const auto latent = gen_case_factors(sim_case(1), n, 7);
  auto mean_of = [&](int cls, auto member) {
    double s = 0.0;
    std::size_t count = 0;
    for (const auto& l : latent)
      if (l.label == cls) {
        const DenseMatrix& m = member(l);
        s += m.sum();
        count += static_cast<std::size_t>(m.size());
      }
    return s / static_cast<double>(count);
  };
  auto a = [](const SimLatent& l) -> const DenseMatrix& { return l.tensor_mode1; };
  auto b = [](const SimLatent& l) -> const DenseMatrix& { return l.tensor_mode2; };
  auto c = [](const SimLatent& l) -> const DenseMatrix& { return l.shared; };
  auto m = [](const SimLatent& l) -> const DenseMatrix& { return l.matrix; };
  // Standard errors are below 0.01 at these sample sizes.
  EXPECT_NEAR(mean_of(1, a), 1.0, 0.03);
  EXPECT_NEAR(mean_of(-1, a), 1.5, 0.03);
  EXPECT_NEAR(mean_of(-1, b), 1.0, 0.03);
  EXPECT_NEAR(mean_of(-1, c), 1.0, 0.05);
  EXPECT_NEAR(mean_of(1, m), 1.0, 0.03);
  EXPECT_NEAR(mean_of(-1, m), 1.25, 0.03);

  const auto case8 = gen_case_factors(sim_case(8), n, 7);
  double shared2 = 0.0, mat2 = 0.0;
  for (const auto& l : case8)
    if (l.label == -1) {
      shared2 += l.shared.mean();
      mat2 += l.matrix.mean();
    }
  EXPECT_NEAR(shared2 / n, 2.0, 0.05);
  EXPECT_NEAR(mat2 / n, 1.0, 0.03);
}

TEST(GenCase, DeterministicPerSeed) {
  const auto a = gen_case(sim_case(5), 3, 42);
  const auto b = gen_case(sim_case(5), 3, 42);
  const auto c = gen_case(sim_case(5), 3, 43);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tensor, b[i].tensor);
    EXPECT_EQ(a[i].matrix, b[i].matrix);
  }
  EXPECT_NE(a[0].tensor, c[0].tensor);
}

TEST(StratifiedSplit, PaperProportions) {
  std::vector<int> labels(100);
  for (int i = 0; i < 100; ++i) labels[static_cast<std::size_t>(i)] = i < 50 ? 1 : -1;
  const Split s = stratified_split(labels, 0.2, 3);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(std::count_if(s.test.begin(), s.test.end(), [&](auto i) { return labels[i] == 1; }), 10);
}

TEST(StratifiedSplit, RoundingAndCover) {
  const std::vector<int> six{1, 1, 1, -1, -1, -1};
  const Split s = stratified_split(six, 1.0 / 3.0, 1);
  EXPECT_EQ(s.test.size(), 2u);

  // 5 * 0.5 = 2.5 rounds to 2; 7 * 0.5 = 3.5 rounds to 4.
  std::vector<int> odd(12, 1);
  std::fill(odd.begin() + 5, odd.end(), -1);
  const Split h = stratified_split(odd, 0.5, 2);
  EXPECT_EQ(std::count_if(h.test.begin(), h.test.end(), [&](auto i) { return odd[i] == 1; }), 2);
  EXPECT_EQ(std::count_if(h.test.begin(), h.test.end(), [&](auto i) { return odd[i] == -1; }), 4);

  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    std::vector<int> y(40);
    for (auto& v : y) v = rng() % 3 ? 1 : -1;
    y[0] = 1;
    y[1] = -1;
    const Split sp = stratified_split(y, 0.25, static_cast<std::uint64_t>(t));
    std::set<std::size_t> all(sp.train.begin(), sp.train.end());
    for (auto i : sp.test) EXPECT_TRUE(all.insert(i).second);
    EXPECT_EQ(all.size(), y.size());
  }
}

TEST(StratifiedSplit, Rejections) {
  const std::vector<int> y{1, 1, -1, -1};
  EXPECT_THROW(stratified_split(y, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(stratified_split(y, 1.0, 1), std::invalid_argument);
  const std::vector<int> one{1, 1, 1};
  EXPECT_THROW(stratified_split(one, 0.5, 1), std::invalid_argument);
}

TEST(ComputeMetrics, PerfectAndInverted) {
  const std::vector<int> y{1, 1, -1, -1};
  const std::vector<double> good{2, 1, -1, -2};
  const MetricRow p = compute_metrics(y, good);
  EXPECT_EQ(p.accuracy, 1.0);
  EXPECT_EQ(*p.precision, 1.0);
  EXPECT_EQ(*p.sensitivity, 1.0);
  EXPECT_EQ(*p.specificity, 1.0);
  EXPECT_EQ(*p.auc, 1.0);
  const std::vector<double> bad{-2, -1, 1, 2};
  const MetricRow q = compute_metrics(y, bad);
  EXPECT_EQ(q.accuracy, 0.0);
  EXPECT_EQ(*q.auc, 0.0);
}

TEST(ComputeMetrics, AucExampleAndUndefinedValues) {
  const std::vector<int> y{1, -1, 1, -1};
  const std::vector<double> s{0.9, 0.8, 0.3, 0.1};
  EXPECT_DOUBLE_EQ(*compute_metrics(y, s).auc, 0.75);

  // Nothing predicted positive: precision is undefined.
  const std::vector<double> neg{-1, -1, -1, -1};
  const MetricRow m = compute_metrics(y, neg);
  EXPECT_FALSE(m.precision.has_value());
  EXPECT_EQ(*m.sensitivity, 0.0);
  EXPECT_EQ(*m.specificity, 1.0);
  EXPECT_DOUBLE_EQ(*m.auc, 0.5);

  const std::vector<int> pos{1, 1};
  const std::vector<double> two{1, -1};
  const MetricRow single = compute_metrics(pos, two);
  EXPECT_FALSE(single.specificity.has_value());
  EXPECT_FALSE(single.auc.has_value());

  EXPECT_THROW(compute_metrics(y, two), std::invalid_argument);
  const std::vector<int> bad_labels{1, 0};
  EXPECT_THROW(compute_metrics(bad_labels, two), std::invalid_argument);
}

TEST(ComputeMetrics, AucMatchesPairwiseDefinitionWithTies) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> score(-3, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> y(15);
    std::vector<double> s(15);
    for (std::size_t i = 0; i < 15; ++i) {
      y[i] = i < 7 ? 1 : -1;
      s[i] = score(rng);
    }
    EXPECT_NEAR(*compute_metrics(y, s).auc, brute_auc(y, s), 1e-14);
  }
}

TEST(MetricsSummary, ValuesInRange) {
  const auto r = run_experiment(small_config(4, 6, 2));
  for (const auto& rec : r.records) {
    EXPECT_GE(rec.metrics.accuracy, 0.0);
    EXPECT_LE(rec.metrics.accuracy, 1.0);
  }
  for (const auto& s : r.summary) {
    for (const MetricStat* m : {&s.accuracy, &s.precision, &s.sensitivity, &s.specificity, &s.auc}) {
      EXPECT_GE(m->sd, 0.0);
      if (m->count) {
        EXPECT_GE(m->mean, 0.0);
        EXPECT_LE(m->mean, 1.0);
      }
    }
  }
}

TEST(Methods, StringRoundTrip) {
  for (auto m : {Method::cstm, Method::cpstm_tensor, Method::cpstm_matrix}) EXPECT_EQ(method_from_string(to_string(m)), m);
  EXPECT_THROW(method_from_string("svm"), std::invalid_argument);
}

TEST(ExperimentConfig, Validation) {
  ExperimentConfig c;
  try {
    c.validate();
    FAIL() << "expected a ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "missing: case");
  }
  EXPECT_NO_THROW(c.validate(false));
  c.case_id = 3;
  EXPECT_NO_THROW(c.validate());
  c.acmtf.beta = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.acmtf.beta = 0.001;
  c.test_fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.test_fraction = 0.2;
  c.repetitions = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(DeriveSeed, DistinctStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 3; ++s)
    for (std::uint64_t i = 0; i < 100; ++i) seen.insert(derive_seed(1, s, i));
  EXPECT_EQ(seen.size(), 300u);
  EXPECT_EQ(derive_seed(5, 1, 2), derive_seed(5, 1, 2));
}

TEST(NormalizedSample, UnitNorms) {
  const auto s = gen_case(sim_case(1), 1, 1)[0];
  const CoupledSample n = normalized_sample(s);
  EXPECT_NEAR(n.tensor.squared_norm(), 1.0, 1e-12);
  EXPECT_NEAR(n.matrix.norm(), 1.0, 1e-12);
  EXPECT_EQ(n.label, s.label);
}

TEST(PruneComponents, DropsSmallWeights) {
  KruskalTensor k{Vector::Zero(3), {DenseMatrix::Identity(3, 3), DenseMatrix::Identity(3, 3)}};
  k.weights << 1.0, 1e-5, -0.5;
  const KruskalTensor p = prune_components(k, 0.01);
  EXPECT_EQ(p.rank(), 2u);
  EXPECT_EQ(p.weights(1), -0.5);
  EXPECT_EQ(p.factors[0].col(1), Vector::Unit(3, 2));
  EXPECT_EQ(prune_components(k, 0.0).rank(), 3u);

  AcmtfFactors f;
  f.tensor = {Vector::Zero(3), {DenseMatrix::Identity(3, 3), DenseMatrix::Identity(3, 3), DenseMatrix::Identity(3, 3)}};
  f.matrix = {Vector::Zero(3), {DenseMatrix::Identity(3, 3), DenseMatrix::Identity(3, 3)}};
  f.tensor.weights << 1.0, 1e-6, 1e-6;
  f.matrix.weights << 1e-7, 1e-6, 2.0;
  f.update_shared();
  const AcmtfFactors q = prune_components(f, 0.01);
  EXPECT_EQ(q.rank(), 2u);
  EXPECT_EQ(q.shared, shared_factor(q));
}

TEST(DecomposeAll, ParallelMatchesSerial) {
  const auto samples = gen_case(sim_case(2), 3, 4);
  ExperimentConfig c = small_config(2, 3, 1);
  const Decompositions a = decompose_all(samples, c);
  const Decompositions b = decompose_all_serial(samples, c);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(a.acmtf_objective[i], b.acmtf_objective[i]);
    EXPECT_EQ(a.acmtf[i].tensor.weights, b.acmtf[i].tensor.weights);
    EXPECT_EQ(a.acmtf[i].shared, b.acmtf[i].shared);
    EXPECT_EQ(a.tensor_cp[i].weights, b.tensor_cp[i].weights);
    EXPECT_EQ(a.matrix_svd[i].factors[0], b.matrix_svd[i].factors[0]);
  }
}

TEST(RunExperiment, DeterministicAndShaped) {
  const ExperimentConfig c = small_config(1, 5, 2);
  const ExperimentResult a = run_experiment(c);
  const ExperimentResult b = run_experiment(c);
  EXPECT_EQ(results_csv(a), results_csv(b));
  EXPECT_EQ(summary_csv(a), summary_csv(b));
  EXPECT_EQ(a.records.size(), 6u);
  EXPECT_EQ(a.summary.size(), 3u);
  EXPECT_TRUE(a.failures.empty());
  const std::string csv = results_csv(a);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,repetition,accuracy,precision,sensitivity,specificity,auc");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  const std::string sum = summary_csv(a);
  EXPECT_EQ(sum.substr(0, sum.find('\n')), "method,metric,mean,sd");
}

TEST(RunExperiment, SingleMethod) {
  ExperimentConfig c = small_config(1, 5, 1);
  c.methods = {Method::cpstm_tensor};
  const ExperimentResult r = run_experiment(c);
  ASSERT_EQ(r.summary.size(), 1u);
  EXPECT_EQ(r.summary[0].method, Method::cpstm_tensor);
  EXPECT_THROW(r.of(Method::cstm), std::invalid_argument);
}

TEST(RunExperiment, FailuresAbortOrAreRecorded) {
  // A single positive that always lands in the test split leaves training one-class.
  ExperimentConfig c = small_config(1, 4, 2);
  std::vector<CoupledSample> samples = experiment_samples(c);
  samples.erase(samples.begin() + 1, samples.begin() + 4);
  c.methods = {Method::cpstm_matrix};
  c.test_fraction = 0.6;
  EXPECT_ANY_THROW(run_experiment(c, samples));
  c.tolerate_failures = true;
  const ExperimentResult r = run_experiment(c, samples);
  ASSERT_EQ(r.failures.size(), 2u);
  EXPECT_EQ(r.failures[0].seed, c.seed);
  EXPECT_EQ(r.failures[1].seed, c.seed + 1);
  EXPECT_NE(r.failures[0].message.find("no samples of class +1"), std::string::npos);
  EXPECT_TRUE(r.records.empty());
}

TEST(RunMethod, CaseSixBeatsPermutationNull) {
  ExperimentConfig c = small_config(6, 30, 1);
  c.acmtf.max_iters = 200;
  const auto samples = experiment_samples(c);
  const std::vector<int> labels = labels_of(samples);
  const Decompositions d = decompose_all(samples, c);
  auto mean_accuracy = [&](const std::vector<int>& y) {
    double acc = 0.0;
    const int splits = 6;
    for (int s = 0; s < splits; ++s) {
      const Split sp = stratified_split(y, 0.2, 100 + static_cast<std::uint64_t>(s));
      const auto o = run_method(Method::cstm, d, y, sp, c, 7);
      std::vector<int> test;
      for (auto i : sp.test) test.push_back(y[i]);
      acc += compute_metrics(test, o.scores).accuracy;
    }
    return acc / splits;
  };
  const double observed = mean_accuracy(labels);
  std::mt19937_64 rng(3);
  std::vector<double> null;
  for (int p = 0; p < 8; ++p) {
    std::vector<int> perm = labels;
    std::shuffle(perm.begin(), perm.end(), rng);
    null.push_back(mean_accuracy(perm));
  }
  const double mean = std::accumulate(null.begin(), null.end(), 0.0) / null.size();
  double var = 0.0;
  for (double v : null) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (null.size() - 1));
  EXPECT_GT(observed, 0.5 + 3 * sd) << "null mean " << mean << " sd " << sd;
}

TEST(Spearman, Examples) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{0.1, 0.3, 0.35, 0.6, 0.9};
  const std::vector<double> down{5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(x, up), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, down), -1.0);
  const std::vector<double> ties{1, 1, 2, 2, 3};
  EXPECT_GT(spearman(x, ties), 0.9);
  const std::vector<double> flat{1, 1, 1, 1, 1};
  EXPECT_EQ(spearman(x, flat), 0.0);
  EXPECT_THROW(spearman(x, std::vector<double>{1.0}), std::invalid_argument);
}
