// Command-line front end: simulate, decompose, fit, predict, benchmark, inspect.
//
// Exit codes: 0 ok, 1 configuration or usage, 2 I/O, 3 numerical, 4 file format.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cstm/errors.hpp"
#include "cstm/experiments.hpp"
#include "cstm/io.hpp"

namespace fs = std::filesystem;
using namespace cstm;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void add_hyper(RunManifest& m, const AcmtfHyperParams& h) {
  m.values.emplace_back("acmtf.gamma", num(h.gamma));
  m.values.emplace_back("acmtf.beta", num(h.beta));
  m.values.emplace_back("acmtf.xi", num(h.xi));
  m.values.emplace_back("acmtf.theta", num(h.theta));
  m.values.emplace_back("acmtf.epsilon", num(h.epsilon));
  m.values.emplace_back("acmtf.rank", std::to_string(h.rank));
  m.values.emplace_back("acmtf.cg_tol", num(h.cg_tol));
  m.values.emplace_back("acmtf.max_iters", std::to_string(h.max_iters));
}

// Decomposition settings stored inside model files so predict can factorize raw samples.
Array decomposition_array(const ExperimentConfig& c) {
  const auto& h = c.acmtf;
  return {{11},
          {h.gamma, h.beta, h.xi, h.theta, h.epsilon, static_cast<double>(h.rank), h.cg_tol,
           static_cast<double>(h.max_iters), c.normalize_input ? 1.0 : 0.0, c.prune_tolerance,
           static_cast<double>(c.seed)}};
}

ExperimentConfig decomposition_config(const Array& a) {
  if (a.data.size() != 11) throw FormatError("model decomposition settings must hold 11 values");
  ExperimentConfig c;
  auto& h = c.acmtf;
  h.gamma = a.data[0];
  h.beta = a.data[1];
  h.xi = a.data[2];
  h.theta = a.data[3];
  h.epsilon = a.data[4];
  h.rank = static_cast<std::size_t>(a.data[5]);
  h.cg_tol = a.data[6];
  h.max_iters = static_cast<int>(a.data[7]);
  c.normalize_input = a.data[8] != 0.0;
  c.prune_tolerance = a.data[9];
  c.seed = static_cast<std::uint64_t>(a.data[10]);
  return c;
}

AcmtfFactors decompose_sample(const CoupledSample& raw, const ExperimentConfig& c, std::size_t index) {
  const CoupledSample s = c.normalize_input ? normalized_sample(raw) : raw;
  const AcmtfResult r = acmtf_solve(s, c.acmtf, derive_seed(c.seed, 1, index));
  return prune_components(r.factors, c.prune_tolerance);
}

struct NamedFactors {
  std::vector<std::string> names;
  std::vector<AcmtfFactors> factors;
};

// Loads a directory of factor files, or of sample files that are decomposed on the fly.
NamedFactors load_inputs(const fs::path& dir, const ExperimentConfig& c,
                         const std::function<void(const std::string&, const CoupledSample&)>& check_sample) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".cstm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .cstm files in " + dir.string());

  NamedFactors out;
  std::vector<CoupledSample> samples;
  for (const auto& f : files) {
    const Bundle b = decode_bundle(read_file(f));
    out.names.push_back(f.filename().string());
    if (b.kind == BundleKind::factors) {
      out.factors.push_back(factors_from_bundle(b));
    } else if (b.kind == BundleKind::sample) {
      samples.push_back(sample_from_bundle(b));
      if (check_sample) check_sample(f.filename().string(), samples.back());
    } else {
      throw FormatError(f.string() + ": expected a sample or factors file, found a " + to_string(b.kind) + " file");
    }
  }
  if (!samples.empty() && !out.factors.empty()) throw FormatError("input directory mixes sample and factor files");
  if (!samples.empty()) {
    out.factors.resize(samples.size());
    const auto n = static_cast<long>(samples.size());
    std::vector<std::exception_ptr> errors(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
      try {
        out.factors[static_cast<std::size_t>(i)] = decompose_sample(samples[static_cast<std::size_t>(i)], c, static_cast<std::size_t>(i));
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return out;
}

int cmd_simulate(int case_id, std::size_t n_per_class, std::uint64_t seed, const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = gen_case(sim_case(case_id), n_per_class, seed);
  ensure_dir(out);
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof name, "sample_%04zu.cstm", i);
    save_bundle(out / name, sample_bundle(samples[i]));
  }
  RunManifest m;
  m.command = "simulate";
  m.seed = seed;
  m.values.emplace_back("case", std::to_string(case_id));
  m.values.emplace_back("n_per_class", std::to_string(n_per_class));
  m.stage_seconds.emplace_back("simulate", seconds_since(t0));
  write_manifest(out / "manifest.txt", m);
  return 0;
}

int cmd_decompose(const fs::path& in, const AcmtfHyperParams& h, bool normalize, std::uint64_t seed,
                  const fs::path& out) {
  h.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const CoupledSample raw = sample_from_bundle(load_bundle(in, BundleKind::sample));
  const CoupledSample s = normalize ? normalized_sample(raw) : raw;
  const AcmtfResult r = acmtf_solve(s, h, seed);
  save_bundle(out, factors_bundle(r.factors));

  RunManifest m;
  m.command = "decompose";
  m.seed = seed;
  m.values.emplace_back("input", in.string());
  m.values.emplace_back("normalize_input", normalize ? "true" : "false");
  add_hyper(m, h);
  m.values.emplace_back("final_objective", num(r.final_objective));
  m.values.emplace_back("saved_factors_objective", num(acmtf_objective(s, r.factors, h)));
  m.values.emplace_back("iterations", std::to_string(r.state.iteration));
  m.values.emplace_back("converged", r.converged ? "true" : "false");
  m.stage_seconds.emplace_back("decompose", seconds_since(t0));
  write_manifest(out.string() + ".manifest", m);
  return 0;
}

int cmd_fit(const fs::path& train_dir, const fs::path& config, const fs::path& out) {
  const std::string config_text = read_file(config);
  const ExperimentConfig c = parse_config_text(config_text, false);
  const auto t0 = std::chrono::steady_clock::now();
  const NamedFactors in = load_inputs(train_dir, c, {});
  const double t_decompose = seconds_since(t0);

  std::vector<int> labels;
  for (std::size_t i = 0; i < in.factors.size(); ++i) {
    if (!in.factors[i].label) throw FormatError(in.names[i] + " has no label");
    labels.push_back(*in.factors[i].label);
  }
  for (std::size_t i = 1; i < in.factors.size(); ++i) {
    const auto& a = in.factors[0];
    const auto& b = in.factors[i];
    for (std::size_t mode = 0; mode < 3; ++mode)
      if (a.tensor.factors[mode].rows() != b.tensor.factors[mode].rows())
        throw FormatError(in.names[i] + ": tensor dims differ from " + in.names[0]);
    if (a.matrix.factors[0].rows() != b.matrix.factors[0].rows())
      throw FormatError(in.names[i] + ": matrix dims differ from " + in.names[0]);
  }

  CoupledKernelSpec spec = c.kernel;
  const CoupledKernelSpec auto_spec = median_heuristic_spec(in.factors, spec.weights);
  if (c.auto_bandwidth[0]) spec.k1_mode1.bandwidth = auto_spec.k1_mode1.bandwidth;
  if (c.auto_bandwidth[1]) spec.k1_mode2.bandwidth = auto_spec.k1_mode2.bandwidth;
  if (c.auto_bandwidth[2]) spec.k2.bandwidth = auto_spec.k2.bandwidth;
  if (c.auto_bandwidth[3]) spec.k3.bandwidth = auto_spec.k3.bandwidth;

  QpOptions qp;
  qp.intercept = c.intercept;
  double lambda = 0.0;
  if (c.lambda && !c.tune_weights) {
    lambda = *c.lambda;
  } else {
    const auto parts = component_grams(in.factors, spec);
    std::vector<std::vector<double>> grid;
    if (c.tune_weights)
      for (const auto& w : simplex_grid(c.weight_step)) grid.push_back({w[0], w[1], w[2]});
    else
      grid.push_back({spec.weights[0], spec.weights[1], spec.weights[2]});
    const std::vector<double> lambdas = c.lambda ? std::vector<double>{*c.lambda} : c.lambda_grid;
    const CvChoice choice = cross_validate(parts, labels, grid, lambdas, c.cv_folds, c.seed, qp);
    spec.weights = {choice.weights[0], choice.weights[1], choice.weights[2]};
    lambda = choice.lambda;
  }
  const StmModel model = fit(in.factors, labels, spec, lambda, qp);
  Bundle b = model_bundle(model);
  b.add("decomposition", decomposition_array(c));
  save_bundle(out, b);

  RunManifest m;
  m.command = "fit";
  m.config_text = config_text;
  m.seed = c.seed;
  m.values.emplace_back("training_samples", std::to_string(in.factors.size()));
  m.values.emplace_back("lambda", num(lambda));
  m.values.emplace_back("weights", num(spec.weights[0]) + "," + num(spec.weights[1]) + "," + num(spec.weights[2]));
  m.values.emplace_back("bias", num(model.bias));
  m.values.emplace_back("qp_converged", model.converged ? "true" : "false");
  m.stage_seconds.emplace_back("decompose", t_decompose);
  m.stage_seconds.emplace_back("fit", seconds_since(t0) - t_decompose);
  write_manifest(out.string() + ".manifest", m);
  return 0;
}

int cmd_predict(const fs::path& model_path, const fs::path& in_dir, const fs::path& out) {
  const Bundle b = load_bundle(model_path, BundleKind::model);
  const StmModel model = model_from_bundle(b);
  if (model.training.empty()) throw FormatError("model has no training samples");
  const ExperimentConfig c = decomposition_config(b.at("decomposition"));
  const AcmtfFactors& ref = model.training.front();
  const auto i1 = ref.tensor.factors[0].rows(), i2 = ref.tensor.factors[1].rows(), i3 = ref.tensor.factors[2].rows();
  const auto i4 = ref.matrix.factors[0].rows();
  auto dims = [](auto a, auto b, auto c) {
    return std::to_string(a) + "x" + std::to_string(b) + "x" + std::to_string(c);
  };

  const NamedFactors in = load_inputs(in_dir, c, [&](const std::string& name, const CoupledSample& s) {
    const auto& d = s.tensor.dims();
    if (static_cast<Eigen::Index>(d[0]) != i1 || static_cast<Eigen::Index>(d[1]) != i2 ||
        static_cast<Eigen::Index>(d[2]) != i3 || s.matrix.rows() != i4)
      throw FormatError(name + ": sample dims " + dims(d[0], d[1], d[2]) + " / " + std::to_string(s.matrix.rows()) +
                        " do not match the model's " + dims(i1, i2, i3) + " / " + std::to_string(i4));
  });
  for (std::size_t i = 0; i < in.factors.size(); ++i) {
    const auto& f = in.factors[i];
    if (f.tensor.factors[0].rows() != i1 || f.tensor.factors[1].rows() != i2 || f.tensor.factors[2].rows() != i3 ||
        f.matrix.factors[0].rows() != i4)
      throw FormatError(in.names[i] + ": factor dims do not match the model's " + dims(i1, i2, i3) + " / " +
                        std::to_string(i4));
  }

  std::ostringstream csv;
  csv << "file,label,score,prediction\n";
  for (std::size_t i = 0; i < in.factors.size(); ++i) {
    const double score = decision(model, in.factors[i]);
    csv << in.names[i] << ',' << (in.factors[i].label ? std::to_string(*in.factors[i].label) : "NA") << ','
        << num(score) << ',' << predict_label(score) << '\n';
  }
  write_file_atomic(out, csv.str());
  return 0;
}

int cmd_benchmark(const fs::path& config, const fs::path& out) {
  const std::string config_text = read_file(config);
  const ExperimentConfig c = parse_config_text(config_text, true);
  const ExperimentResult r = run_experiment(c);
  ensure_dir(out);
  write_file_atomic(out / "results.csv", results_csv(r));
  write_file_atomic(out / "summary.csv", summary_csv(r));

  RunManifest m;
  m.command = "benchmark";
  m.config_text = serialize_config(c);
  m.seed = c.seed;
  m.stage_seconds = r.stage_seconds;
  m.values.emplace_back("mean_final_objective", num(r.mean_final_objective));
  m.values.emplace_back("failed_repetitions", std::to_string(r.failures.size()));
  for (const auto& f : r.failures)
    m.values.emplace_back("failure." + std::to_string(f.repetition), "seed " + std::to_string(f.seed) + ": " + f.message);
  for (const auto& rec : r.records) {
    const std::string key = to_string(rec.method) + "." + std::to_string(rec.repetition);
    m.values.emplace_back(key + ".lambda", num(rec.lambda));
    std::string w;
    for (std::size_t i = 0; i < rec.weights.size(); ++i) w += (i ? "," : "") + num(rec.weights[i]);
    m.values.emplace_back(key + ".weights", w);
  }
  write_manifest(out / "manifest.txt", m);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled support tensor machine"};
  app.require_subcommand(1);
  int threads = 0;

  auto* sim = app.add_subcommand("simulate", "Write a simulated dataset");
  int case_id = 1;
  std::size_t n_per_class = 50;
  std::uint64_t seed = 1;
  std::string out;
  sim->add_option("--case", case_id, "Simulation case (1-8)")->required();
  sim->add_option("--n-per-class", n_per_class, "Samples per class");
  sim->add_option("--seed", seed, "Random seed");
  sim->add_option("--out", out, "Output directory")->required();

  auto* dec = app.add_subcommand("decompose", "Factorize one sample");
  std::string in;
  AcmtfHyperParams h;
  bool raw = false;
  dec->add_option("--in", in, "Sample file")->required();
  dec->add_option("--rank", h.rank, "Number of components");
  dec->add_option("--beta", h.beta, "Sparsity weight");
  dec->add_option("--seed", seed, "Initialization seed");
  dec->add_flag("--raw", raw, "Skip unit-norm scaling of the modalities");
  dec->add_option("--out", out, "Factors file")->required();

  auto* fitc = app.add_subcommand("fit", "Train a classifier");
  std::string train, config;
  fitc->add_option("--train", train, "Directory of sample or factor files")->required();
  fitc->add_option("--config", config, "Configuration file")->required();
  fitc->add_option("--out", out, "Model file")->required();

  auto* pred = app.add_subcommand("predict", "Score samples with a model");
  std::string model;
  pred->add_option("--model", model, "Model file")->required();
  pred->add_option("--in", in, "Directory of sample or factor files")->required();
  pred->add_option("--out", out, "Output CSV")->required();

  auto* bench = app.add_subcommand("benchmark", "Run a repeated train/test experiment");
  bench->add_option("--config", config, "Configuration file")->required();
  bench->add_option("--out", out, "Output directory")->required();

  auto* insp = app.add_subcommand("inspect", "Print file header metadata");
  insp->add_option("--in", in, "Any CSTM file")->required();

  for (auto* sub : {sim, dec, fitc, pred, bench})
    sub->add_option("--threads", threads, "Worker threads (default: all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (threads < 0) {
    std::cerr << "error: --threads must be >= 0\n";
    return 1;
  }
  if (threads > 0) omp_set_num_threads(threads);

  try {
    if (*sim) return cmd_simulate(case_id, n_per_class, seed, out);
    if (*dec) return cmd_decompose(in, h, !raw, seed, out);
    if (*fitc) return cmd_fit(train, config, out);
    if (*pred) return cmd_predict(model, in, out);
    if (*bench) return cmd_benchmark(config, out);
    if (*insp) {
      std::cout << describe_file(in);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
