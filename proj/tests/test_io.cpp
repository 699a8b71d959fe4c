#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <random>

#include "cstm/errors.hpp"
#include "cstm/io.hpp"
#include "test_util.hpp"

using namespace cstm;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cstm_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void put_u32(std::string& bytes, std::size_t at, std::uint32_t v) { std::memcpy(bytes.data() + at, &v, 4); }

template <class F>
std::string error_of(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Array, RoundTrip) {
  std::mt19937_64 rng(1);
  const DenseTensor3 t = testutil::random_tensor(rng, 3, 4, 2);
  const DenseMatrix m = testutil::random_matrix(rng, 5, 3);
  EXPECT_EQ(Array::of(t).tensor(), t);
  EXPECT_EQ(decode_array(encode_array(Array::of(t))).tensor(), t);
  EXPECT_EQ(decode_array(encode_array(Array::of(m))).matrix(), m);
  const Vector v = testutil::random_vector(rng, 4);
  EXPECT_EQ(decode_array(encode_array(Array::of(v))).vector(), v);
  EXPECT_THROW(decode_array(encode_array(Array::of(m))).tensor(), FormatError);
}

TEST(Array, HeaderLayout) {
  const std::string bytes = encode_array(Array::of(DenseMatrix(DenseMatrix::Constant(2, 3, 1.5))));
  EXPECT_EQ(bytes.substr(0, 4), "CSTM");
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 2 * 8 + 6 * 8);
  std::uint32_t version = 0, order = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&order, bytes.data() + 8, 4);
  EXPECT_EQ(version, kFormatVersion);
  EXPECT_EQ(order, 2u);
}

TEST(Array, RejectsMalformedInput) {
  std::string bytes = encode_array(Array::of(DenseMatrix(DenseMatrix::Ones(2, 2))));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_array(bad), FormatError);
  EXPECT_THROW(decode_array(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_array(bytes + "x"), FormatError);
  EXPECT_THROW(decode_array(""), FormatError);

  put_u32(bytes, 4, 7);
  const std::string msg = error_of([&] { decode_array(bytes); });
  EXPECT_NE(msg.find("expected 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("found 7"), std::string::npos) << msg;
}

TEST(Files, TensorAndMatrix) {
  TempDir d;
  std::mt19937_64 rng(2);
  const DenseTensor3 t = testutil::random_tensor(rng, 2, 3, 4);
  write_tensor(d.path / "t.cstm", t);
  EXPECT_EQ(read_tensor(d.path / "t.cstm"), t);
  const DenseMatrix m = testutil::random_matrix(rng, 3, 3);
  write_matrix(d.path / "m.cstm", m);
  EXPECT_EQ(read_matrix(d.path / "m.cstm"), m);
  EXPECT_THROW(read_matrix(d.path / "missing.cstm"), IoError);
  for (const auto& e : fs::directory_iterator(d.path)) EXPECT_EQ(e.path().extension(), ".cstm");
}

TEST(Bundles, Sample) {
  std::mt19937_64 rng(3);
  CoupledSample s{testutil::random_tensor(rng, 3, 2, 4), testutil::random_matrix(rng, 5, 4), -1};
  const CoupledSample back = sample_from_bundle(decode_bundle(encode_bundle(sample_bundle(s))));
  EXPECT_EQ(back.tensor, s.tensor);
  EXPECT_EQ(back.matrix, s.matrix);
  EXPECT_EQ(back.label, s.label);
  s.label.reset();
  EXPECT_FALSE(sample_from_bundle(sample_bundle(s)).label.has_value());

  Bundle mismatched = sample_bundle(s);
  mismatched.entries[1].second = Array::of(DenseMatrix(DenseMatrix::Ones(5, 3)));
  EXPECT_THROW(sample_from_bundle(mismatched), FormatError);
}

TEST(Bundles, Factors) {
  std::mt19937_64 rng(4);
  AcmtfFactors f = testutil::random_factors(rng, 4, 3, 5, 6, 2);
  f.label = 1;
  const AcmtfFactors back = factors_from_bundle(decode_bundle(encode_bundle(factors_bundle(f))));
  EXPECT_EQ(back.tensor.weights, f.tensor.weights);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(back.tensor.factors[j], f.tensor.factors[j]);
  EXPECT_EQ(back.matrix.weights, f.matrix.weights);
  EXPECT_EQ(back.matrix.factors[0], f.matrix.factors[0]);
  EXPECT_EQ(back.matrix.factors[1], f.matrix.factors[1]);
  EXPECT_EQ(back.shared, f.shared);
  EXPECT_EQ(back.label, f.label);
}

TEST(Bundles, WrongKindNamesBoth) {
  TempDir d;
  std::mt19937_64 rng(5);
  save_bundle(d.path / "s.cstm", sample_bundle({testutil::random_tensor(rng, 2, 2, 2), DenseMatrix::Ones(3, 2), 1}));
  const std::string msg = error_of([&] { load_bundle(d.path / "s.cstm", BundleKind::model); });
  EXPECT_NE(msg.find("model"), std::string::npos) << msg;
  EXPECT_NE(msg.find("sample"), std::string::npos) << msg;
  EXPECT_NE(msg.find("s.cstm"), std::string::npos) << msg;
}

TEST(Bundles, VersionMismatchOnDisk) {
  TempDir d;
  std::string bytes = encode_bundle(sample_bundle({DenseTensor3({1, 1, 1}), DenseMatrix::Ones(1, 1), 1}));
  put_u32(bytes, 4, 2);
  write_file_atomic(d.path / "v2.cstm", bytes);
  const std::string msg = error_of([&] { load_bundle(d.path / "v2.cstm", BundleKind::sample); });
  EXPECT_NE(msg.find("expected 1, found 2"), std::string::npos) << msg;
  EXPECT_THROW(load_bundle(d.path / "v2.cstm", BundleKind::sample), FormatError);
}

TEST(Bundles, ModelReproducesDecisions) {
  std::mt19937_64 rng(6);
  std::vector<AcmtfFactors> train;
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) {
    AcmtfFactors f = testutil::random_factors(rng, 4, 3, 5, 6, 2);
    const int y = i % 2 ? 1 : -1;
    f.tensor.factors[0] = testutil::unit_columns(f.tensor.factors[0].array() + 0.5 * y);
    train.push_back(f);
    labels.push_back(y);
  }
  CoupledKernelSpec spec;
  spec.k1_mode1 = KernelSpec::rbf(1.3);
  spec.k1_mode2 = KernelSpec::polynomial(3, 0.5);
  spec.k2 = KernelSpec::linear();
  spec.k3 = KernelSpec::rbf(0.7);
  spec.weights = {0.5, 0.3, 0.2};
  const StmModel m = fit(train, labels, spec, 0.05);
  const StmModel back = model_from_bundle(decode_bundle(encode_bundle(model_bundle(m))));
  EXPECT_EQ(back.kernel, m.kernel);
  EXPECT_EQ(back.lambda, m.lambda);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.support, m.support);
  for (int i = 0; i < 5; ++i) {
    const AcmtfFactors probe = testutil::random_factors(rng, 4, 3, 5, 6, 3);
    EXPECT_EQ(decision(back, probe), decision(m, probe));
  }
}

TEST(Directories, SortedAndFiltered) {
  TempDir d;
  std::mt19937_64 rng(7);
  for (const char* name : {"b.cstm", "a.cstm", "c.cstm"})
    save_bundle(d.path / name, sample_bundle({testutil::random_tensor(rng, 2, 2, 2), DenseMatrix::Ones(3, 2), 1}));
  write_file_atomic(d.path / "notes.txt", "x");
  const auto s = load_sample_dir(d.path);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].first, "a.cstm");
  EXPECT_EQ(s[2].first, "c.cstm");
  EXPECT_THROW(load_sample_dir(d.path / "nope"), IoError);
  EXPECT_NE(describe_file(d.path / "a.cstm").find("sample"), std::string::npos);
}

TEST(Config, EmptyNeedsASource) {
  const std::string msg = error_of([] { parse_config_text(""); });
  EXPECT_EQ(msg, "missing: case");
  EXPECT_NO_THROW(parse_config_text("", false));
}

TEST(Config, NegativeBetaNamesKeyAndLine) {
  const std::string text = "[experiment]\ncase = 1\n\n[acmtf]\nbeta = -1\n";
  const std::string msg = error_of([&] { parse_config_text(text); });
  EXPECT_NE(msg.find("beta"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 5"), std::string::npos) << msg;
  EXPECT_THROW(parse_config_text(text), ConfigError);
}

TEST(Config, SyntaxErrors) {
  EXPECT_THROW(parse_config_text("[experiment]\ncase = 1\ncolour = red\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[nope]\n"), ConfigError);
  EXPECT_THROW(parse_config_text("case = 1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[experiment]\ncase\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[experiment]\ncase = one\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[experiment]\ncase = 1\nmethods = cstm, svm\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[experiment]\ncase = 1\n[kernel]\nk2.kind = sigmoid\n"), ConfigError);
  const std::string msg = error_of([] { parse_config_text("[experiment]\ncase = 1\n[acmtf]\nrank = x\n"); });
  EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
  EXPECT_NE(msg.find("rank"), std::string::npos) << msg;
}

TEST(Config, CommentsAndValues) {
  const ExperimentConfig c = parse_config_text(
      "# header\n[experiment]\ncase = 3   # trailing\nrepetitions = 4\nmethods = cstm,cpstm_matrix\nseed = 99\n"
      "[acmtf]\nrank = 4\nbeta = 0.01\n"
      "[kernel]\nk1_mode1.bandwidth = 2.5\nk2.kind = linear\nweights = 0.2, 0.3, 0.5\n"
      "[classifier]\nlambda = 0.1\nintercept = false\n");
  EXPECT_EQ(c.case_id, 3);
  EXPECT_EQ(c.repetitions, 4);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.methods, (std::vector<Method>{Method::cstm, Method::cpstm_matrix}));
  EXPECT_EQ(c.acmtf.rank, 4u);
  EXPECT_EQ(c.acmtf.beta, 0.01);
  EXPECT_EQ(c.kernel.k1_mode1.bandwidth, 2.5);
  EXPECT_FALSE(c.auto_bandwidth[0]);
  EXPECT_TRUE(c.auto_bandwidth[1]);
  EXPECT_EQ(c.kernel.k2.kind, KernelSpec::Kind::linear);
  EXPECT_EQ(c.kernel.weights, (std::array<double, 3>{0.2, 0.3, 0.5}));
  EXPECT_EQ(c.lambda, 0.1);
  EXPECT_FALSE(c.intercept);
}

TEST(Config, SerializeRoundTrip) {
  ExperimentConfig c;
  c.case_id = 3;
  c.n_per_class = 17;
  c.repetitions = 3;
  c.seed = 1234567890123ull;
  c.acmtf.beta = 0.1 / 3.0;
  c.acmtf.rank = 4;
  c.kernel.k2 = KernelSpec::polynomial(3, 0.25);
  c.kernel.k3.bandwidth = 1.0 / 7.0;
  c.auto_bandwidth = {true, false, true, false};
  c.kernel.weights = {0.1, 0.2, 0.7};
  c.tune_weights = true;
  c.lambda_grid = {1e-3, 0.5};
  c.methods = {Method::cpstm_tensor};
  c.tolerate_failures = true;
  const std::string text = serialize_config(c);
  EXPECT_EQ(parse_config_text(text), c) << text;
  EXPECT_EQ(serialize_config(parse_config_text(text)), text);

  ExperimentConfig d;
  d.case_id = 1;
  d.lambda = 0.25;
  EXPECT_EQ(parse_config_text(serialize_config(d)), d);
}

TEST(Config, FromFile) {
  TempDir d;
  write_file_atomic(d.path / "c.ini", "[experiment]\ncase = 2\n");
  EXPECT_EQ(parse_config(d.path / "c.ini").case_id, 2);
  EXPECT_THROW(parse_config(d.path / "none.ini"), IoError);
}

TEST(Manifest, Contents) {
  RunManifest m;
  m.command = "benchmark --config x";
  m.config_text = "[experiment]\ncase = 1\n";
  m.seed = 9;
  m.stage_seconds = {{"decompose", 1.5}};
  m.values = {{"final_objective", "0.25"}};
  const std::string r = m.render();
  char hash[40];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(m.config_text)));
  EXPECT_NE(r.find(hash), std::string::npos);
  EXPECT_NE(r.find("seed"), std::string::npos);
  EXPECT_NE(r.find("final_objective"), std::string::npos);
  EXPECT_NE(r.find("decompose"), std::string::npos);
  EXPECT_NE(r.find(kSoftwareVersion), std::string::npos);
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}
