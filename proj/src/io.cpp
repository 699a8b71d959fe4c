#include "cstm/io.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include "cstm/errors.hpp"

static_assert(std::endian::native == std::endian::little, "CSTM files are little-endian");

namespace cstm {

namespace fs = std::filesystem;

std::string to_string(BundleKind k) {
  switch (k) {
    case BundleKind::sample: return "sample";
    case BundleKind::factors: return "factors";
    case BundleKind::model: return "model";
  }
  return "unknown(" + std::to_string(static_cast<std::uint32_t>(k)) + ")";
}

Array Array::of(const DenseMatrix& m) {
  Array a;
  a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  a.data.assign(m.data(), m.data() + m.size());
  return a;
}

Array Array::of(const Vector& v) {
  Array a;
  a.dims = {static_cast<std::uint64_t>(v.size())};
  a.data.assign(v.data(), v.data() + v.size());
  return a;
}

Array Array::of(const DenseTensor3& t) {
  Array a;
  for (auto d : t.dims()) a.dims.push_back(d);
  const auto s = t.data();
  a.data.assign(s.begin(), s.end());
  return a;
}

DenseMatrix Array::matrix() const {
  if (dims.size() != 2) throw FormatError("expected a 2-way array, found order " + std::to_string(dims.size()));
  return Eigen::Map<const DenseMatrix>(data.data(), static_cast<Eigen::Index>(dims[0]),
                                       static_cast<Eigen::Index>(dims[1]));
}

Vector Array::vector() const {
  if (dims.size() != 1) throw FormatError("expected a 1-way array, found order " + std::to_string(dims.size()));
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(dims[0]));
}

DenseTensor3 Array::tensor() const {
  if (dims.size() != 3) throw FormatError("expected a 3-way array, found order " + std::to_string(dims.size()));
  return DenseTensor3({dims[0], dims[1], dims[2]}, data);
}

bool Bundle::has(const std::string& name) const {
  return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.first == name; });
}

const Array& Bundle::at(const std::string& name) const {
  for (const auto& e : entries)
    if (e.first == name) return e.second;
  throw FormatError(to_string(kind) + " file has no entry '" + name + "'");
}

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated CSTM data");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void put_header(std::string& out, std::uint32_t order) {
  out.append(kMagic, 4);
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, order);
}

std::uint32_t get_header(Reader& r) {
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("not a CSTM file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw FormatError("unsupported CSTM format version: expected " + std::to_string(kFormatVersion) + ", found " +
                      std::to_string(version));
  return r.get<std::uint32_t>();
}

void put_body(std::string& out, const Array& a) {
  std::uint64_t n = 1;
  for (auto d : a.dims) {
    put<std::uint64_t>(out, d);
    n *= d;
  }
  if (n != a.data.size()) throw std::invalid_argument("array payload does not match its dims");
  out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(double));
}

Array get_body(Reader& r, std::uint32_t order) {
  if (order > 16) throw FormatError("implausible array order " + std::to_string(order));
  Array a;
  std::uint64_t n = 1;
  for (std::uint32_t k = 0; k < order; ++k) {
    a.dims.push_back(r.get<std::uint64_t>());
    if (a.dims.back() != 0 && n > (std::uint64_t{1} << 40) / a.dims.back()) throw FormatError("array too large");
    n *= a.dims.back();
  }
  const std::string payload = r.str(n * sizeof(double));
  a.data.resize(n);
  std::memcpy(a.data.data(), payload.data(), payload.size());
  return a;
}

}  // namespace

std::string encode_array(const Array& a) {
  if (a.dims.empty()) throw std::invalid_argument("array order must be >= 1");
  std::string out;
  put_header(out, static_cast<std::uint32_t>(a.dims.size()));
  put_body(out, a);
  return out;
}

Array decode_array(const std::string& bytes) {
  Reader r(bytes);
  const auto order = get_header(r);
  if (order == 0) throw FormatError("expected a plain array, found a bundle");
  Array a = get_body(r, order);
  if (!r.done()) throw FormatError("trailing bytes after array payload");
  return a;
}

std::string encode_bundle(const Bundle& b) {
  std::string out;
  put_header(out, 0);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(b.kind));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(b.entries.size()));
  for (const auto& [name, a] : b.entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.dims.size()));
    put_body(out, a);
  }
  return out;
}

Bundle decode_bundle(const std::string& bytes) {
  Reader r(bytes);
  if (get_header(r) != 0) throw FormatError("expected a bundle, found a plain array");
  Bundle b;
  const auto kind = r.get<std::uint32_t>();
  if (kind < 1 || kind > 3) throw FormatError("unknown bundle kind " + std::to_string(kind));
  b.kind = static_cast<BundleKind>(kind);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name = r.str(len);
    const auto order = r.get<std::uint32_t>();
    b.entries.emplace_back(std::move(name), get_body(r, order));
  }
  if (!r.done()) throw FormatError("trailing bytes after bundle");
  return b;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string() + ": " + std::strerror(errno));
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + p.string());
  return s;
}

void write_file_atomic(const fs::path& p, const std::string& bytes) {
  const fs::path tmp = p.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string() + ": " + std::strerror(errno));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("error writing " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at " + p.string());
  }
}

void write_tensor(const fs::path& p, const DenseTensor3& t) { write_file_atomic(p, encode_array(Array::of(t))); }
DenseTensor3 read_tensor(const fs::path& p) { return decode_array(read_file(p)).tensor(); }
void write_matrix(const fs::path& p, const DenseMatrix& m) { write_file_atomic(p, encode_array(Array::of(m))); }
DenseMatrix read_matrix(const fs::path& p) { return decode_array(read_file(p)).matrix(); }

namespace {

void check_kind(const Bundle& b, BundleKind k) {
  if (b.kind != k) throw FormatError("expected a " + to_string(k) + " file, found a " + to_string(b.kind) + " file");
}

std::optional<int> label_of(const Bundle& b, const std::string& key) {
  if (!b.has(key)) return std::nullopt;
  const Array& a = b.at(key);
  if (a.data.size() != 1 || (a.data[0] != 1.0 && a.data[0] != -1.0)) throw FormatError("label must be +1 or -1");
  return static_cast<int>(a.data[0]);
}

void add_factors(Bundle& b, const std::string& prefix, const AcmtfFactors& f) {
  b.add(prefix + "zeta", Array::of(f.tensor.weights));
  b.add(prefix + "A", Array::of(f.tensor.factors.at(0)));
  b.add(prefix + "B", Array::of(f.tensor.factors.at(1)));
  b.add(prefix + "C", Array::of(f.tensor.factors.at(2)));
  b.add(prefix + "sigma", Array::of(f.matrix.weights));
  b.add(prefix + "U", Array::of(f.matrix.factors.at(0)));
  b.add(prefix + "V", Array::of(f.matrix.factors.at(1)));
  b.add(prefix + "normalized", Array::scalar(f.tensor.normalized ? 1.0 : 0.0));
  if (f.label) b.add(prefix + "label", Array::scalar(*f.label));
}

AcmtfFactors get_factors(const Bundle& b, const std::string& prefix) {
  AcmtfFactors f;
  const bool normalized = b.has(prefix + "normalized") && b.at(prefix + "normalized").data.at(0) != 0.0;
  f.tensor = {b.at(prefix + "zeta").vector(),
              {b.at(prefix + "A").matrix(), b.at(prefix + "B").matrix(), b.at(prefix + "C").matrix()},
              normalized};
  f.matrix = {b.at(prefix + "sigma").vector(), {b.at(prefix + "U").matrix(), b.at(prefix + "V").matrix()}, normalized};
  f.label = label_of(b, prefix + "label");
  f.update_shared();
  try {
    f.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("inconsistent factors: ") + e.what());
  }
  return f;
}

Array kernel_array(const KernelSpec& k) {
  return {{4}, {static_cast<double>(k.kind), k.bandwidth, static_cast<double>(k.degree), k.offset}};
}

KernelSpec kernel_from(const Array& a) {
  if (a.data.size() != 4) throw FormatError("kernel entry must hold 4 values");
  const int kind = static_cast<int>(a.data[0]);
  if (kind < 0 || kind > 2) throw FormatError("unknown kernel kind " + std::to_string(kind));
  return {static_cast<KernelSpec::Kind>(kind), a.data[1], static_cast<int>(a.data[2]), a.data[3]};
}

}  // namespace

Bundle sample_bundle(const CoupledSample& s) {
  Bundle b{BundleKind::sample, {}};
  b.add("tensor", Array::of(s.tensor));
  b.add("matrix", Array::of(s.matrix));
  if (s.label) b.add("label", Array::scalar(*s.label));
  return b;
}

CoupledSample sample_from_bundle(const Bundle& b) {
  check_kind(b, BundleKind::sample);
  CoupledSample s{b.at("tensor").tensor(), b.at("matrix").matrix(), label_of(b, "label")};
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("inconsistent sample: ") + e.what());
  }
  return s;
}

Bundle factors_bundle(const AcmtfFactors& f) {
  Bundle b{BundleKind::factors, {}};
  add_factors(b, "", f);
  return b;
}

AcmtfFactors factors_from_bundle(const Bundle& b) {
  check_kind(b, BundleKind::factors);
  return get_factors(b, "");
}

Bundle model_bundle(const StmModel& m) {
  Bundle b{BundleKind::model, {}};
  b.add("alpha", Array::of(m.alpha));
  b.add("labels", Array::of(m.labels));
  b.add("lambda", Array::scalar(m.lambda));
  b.add("bias", Array::scalar(m.bias));
  b.add("converged", Array::scalar(m.converged ? 1.0 : 0.0));
  b.add("kernel/k1_mode1", kernel_array(m.kernel.k1_mode1));
  b.add("kernel/k1_mode2", kernel_array(m.kernel.k1_mode2));
  b.add("kernel/k2", kernel_array(m.kernel.k2));
  b.add("kernel/k3", kernel_array(m.kernel.k3));
  b.add("kernel/weights", {{3}, {m.kernel.weights[0], m.kernel.weights[1], m.kernel.weights[2]}});
  b.add("training/count", Array::scalar(static_cast<double>(m.training.size())));
  for (std::size_t i = 0; i < m.training.size(); ++i) add_factors(b, "training/" + std::to_string(i) + "/", m.training[i]);
  return b;
}

StmModel model_from_bundle(const Bundle& b) {
  check_kind(b, BundleKind::model);
  StmModel m;
  m.alpha = b.at("alpha").vector();
  m.labels = b.at("labels").vector();
  m.lambda = b.at("lambda").data.at(0);
  m.bias = b.at("bias").data.at(0);
  m.converged = b.at("converged").data.at(0) != 0.0;
  m.kernel.k1_mode1 = kernel_from(b.at("kernel/k1_mode1"));
  m.kernel.k1_mode2 = kernel_from(b.at("kernel/k1_mode2"));
  m.kernel.k2 = kernel_from(b.at("kernel/k2"));
  m.kernel.k3 = kernel_from(b.at("kernel/k3"));
  const Array& w = b.at("kernel/weights");
  if (w.data.size() != 3) throw FormatError("kernel weights must hold 3 values");
  m.kernel.weights = {w.data[0], w.data[1], w.data[2]};
  const auto n = static_cast<std::size_t>(b.at("training/count").data.at(0));
  if (n != static_cast<std::size_t>(m.alpha.size()) || n != static_cast<std::size_t>(m.labels.size()))
    throw FormatError("model has inconsistent training size");
  for (std::size_t i = 0; i < n; ++i) m.training.push_back(get_factors(b, "training/" + std::to_string(i) + "/"));
  for (Eigen::Index i = 0; i < m.alpha.size(); ++i)
    if (m.alpha(i) > 1e-10) m.support.push_back(static_cast<std::size_t>(i));
  return m;
}

void save_bundle(const fs::path& p, const Bundle& b) { write_file_atomic(p, encode_bundle(b)); }

Bundle load_bundle(const fs::path& p, BundleKind expected) {
  Bundle b;
  try {
    b = decode_bundle(read_file(p));
  } catch (const FormatError& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  if (b.kind != expected)
    throw FormatError(p.string() + ": expected a " + to_string(expected) + " file, found a " + to_string(b.kind) +
                      " file");
  return b;
}

namespace {

std::vector<fs::path> cstm_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".cstm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

std::vector<std::pair<std::string, CoupledSample>> load_sample_dir(const fs::path& dir) {
  std::vector<std::pair<std::string, CoupledSample>> out;
  for (const auto& f : cstm_files(dir))
    out.emplace_back(f.filename().string(), sample_from_bundle(load_bundle(f, BundleKind::sample)));
  return out;
}

std::vector<std::pair<std::string, AcmtfFactors>> load_factor_dir(const fs::path& dir) {
  std::vector<std::pair<std::string, AcmtfFactors>> out;
  for (const auto& f : cstm_files(dir))
    out.emplace_back(f.filename().string(), factors_from_bundle(load_bundle(f, BundleKind::factors)));
  return out;
}

namespace {

std::string dims_text(const std::vector<std::uint64_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s;
}

}  // namespace

std::string describe_file(const fs::path& p) {
  const std::string bytes = read_file(p);
  Reader r(bytes);
  const auto order = get_header(r);
  std::ostringstream os;
  os << "file: " << p.string() << "\nformat version: " << kFormatVersion << '\n';
  if (order > 0) {
    const Array a = decode_array(bytes);
    os << "type: array\norder: " << order << "\ndims: " << dims_text(a.dims) << '\n';
    return os.str();
  }
  const Bundle b = decode_bundle(bytes);
  os << "type: " << to_string(b.kind) << "\nentries: " << b.entries.size() << '\n';
  if (b.kind == BundleKind::model) {
    os << "training samples: " << static_cast<std::size_t>(b.at("training/count").data.at(0)) << '\n';
    os << "lambda: " << b.at("lambda").data.at(0) << '\n';
    return os.str();
  }
  for (const auto& [name, a] : b.entries) os << "  " << name << ": " << dims_text(a.dims) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Located {
  std::string key;
  int line;
};

class ConfigParser {
 public:
  explicit ConfigParser(ExperimentConfig& c) : c_(c) {}

  void set(const std::string& section, const std::string& name, const std::string& value, int line) {
    key_ = section.empty() ? name : section + "." + name;
    line_ = line;
    seen_.push_back({name, line});
    if (section == "experiment") return experiment(name, value);
    if (section == "acmtf") return acmtf(name, value);
    if (section == "kernel") return kernel(name, value);
    if (section == "classifier") return classifier(name, value);
    fail("unknown key");
  }

  int line_of(const std::string& name) const {
    for (auto it = seen_.rbegin(); it != seen_.rend(); ++it)
      if (it->key == name) return it->line;
    return 0;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("line " + std::to_string(line_) + ": " + key_ + ": " + why);
  }

  double real(const std::string& v) const {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) fail("expected a number, got '" + v + "'");
      return d;
    } catch (const std::logic_error&) {
      fail("expected a number, got '" + v + "'");
    }
  }

  long long integer(const std::string& v) const {
    try {
      std::size_t used = 0;
      const long long i = std::stoll(v, &used);
      if (used != v.size()) fail("expected an integer, got '" + v + "'");
      return i;
    } catch (const std::logic_error&) {
      fail("expected an integer, got '" + v + "'");
    }
  }

  std::size_t count(const std::string& v) const {
    const long long i = integer(v);
    if (i < 0) fail("must be >= 0");
    return static_cast<std::size_t>(i);
  }

  bool boolean(const std::string& v) const {
    if (v == "true") return true;
    if (v == "false") return false;
    fail("expected true or false, got '" + v + "'");
  }

  void experiment(const std::string& k, const std::string& v) {
    if (k == "case") c_.case_id = static_cast<int>(integer(v));
    else if (k == "dataset") c_.dataset = v;
    else if (k == "n_per_class") c_.n_per_class = count(v);
    else if (k == "test_fraction") c_.test_fraction = real(v);
    else if (k == "repetitions") c_.repetitions = static_cast<int>(integer(v));
    else if (k == "seed") {
      try {
        std::size_t used = 0;
        c_.seed = std::stoull(v, &used);
        if (used != v.size() || v.front() == '-') fail("expected a non-negative integer");
      } catch (const std::logic_error&) {
        fail("expected a non-negative integer, got '" + v + "'");
      }
    } else if (k == "tolerate_failures") c_.tolerate_failures = boolean(v);
    else if (k == "methods") {
      c_.methods.clear();
      for (const auto& m : split_list(v)) {
        try {
          c_.methods.push_back(method_from_string(m));
        } catch (const std::invalid_argument& e) {
          fail(e.what());
        }
      }
    } else fail("unknown key");
  }

  void acmtf(const std::string& k, const std::string& v) {
    auto& h = c_.acmtf;
    if (k == "gamma") h.gamma = real(v);
    else if (k == "beta") h.beta = real(v);
    else if (k == "xi") h.xi = real(v);
    else if (k == "theta") h.theta = real(v);
    else if (k == "epsilon") h.epsilon = real(v);
    else if (k == "rank") h.rank = count(v);
    else if (k == "cg_tol") h.cg_tol = real(v);
    else if (k == "max_iters") h.max_iters = static_cast<int>(integer(v));
    else if (k == "normalize_input") c_.normalize_input = boolean(v);
    else if (k == "prune_tolerance") c_.prune_tolerance = real(v);
    else fail("unknown key");
  }

  void kernel(const std::string& k, const std::string& v) {
    static const std::pair<const char*, int> comps[] = {{"k1_mode1", 0}, {"k1_mode2", 1}, {"k2", 2}, {"k3", 3}};
    if (k == "weights") {
      const auto parts = split_list(v);
      if (parts.size() != 3) fail("expected three comma-separated weights");
      for (int i = 0; i < 3; ++i) c_.kernel.weights[static_cast<std::size_t>(i)] = real(parts[static_cast<std::size_t>(i)]);
      return;
    }
    if (k == "tune_weights") {
      c_.tune_weights = boolean(v);
      return;
    }
    if (k == "weight_step") {
      c_.weight_step = real(v);
      return;
    }
    const auto dot = k.find('.');
    const std::string comp = k.substr(0, dot);
    const std::string field = dot == std::string::npos ? "" : k.substr(dot + 1);
    for (const auto& [name, idx] : comps) {
      if (comp != name) continue;
      KernelSpec& s = idx == 0 ? c_.kernel.k1_mode1 : idx == 1 ? c_.kernel.k1_mode2 : idx == 2 ? c_.kernel.k2 : c_.kernel.k3;
      if (field == "kind") {
        try {
          s.kind = kernel_kind_from_string(v);
        } catch (const std::invalid_argument& e) {
          fail(e.what());
        }
      } else if (field == "bandwidth") {
        const bool automatic = v == "auto";
        c_.auto_bandwidth[static_cast<std::size_t>(idx)] = automatic;
        if (!automatic) s.bandwidth = real(v);
      } else if (field == "degree") s.degree = static_cast<int>(integer(v));
      else if (field == "offset") s.offset = real(v);
      else fail("unknown key");
      return;
    }
    fail("unknown key");
  }

  void classifier(const std::string& k, const std::string& v) {
    if (k == "lambda") {
      if (v == "cv") c_.lambda.reset();
      else c_.lambda = real(v);
    } else if (k == "lambda_grid") {
      c_.lambda_grid.clear();
      for (const auto& x : split_list(v)) c_.lambda_grid.push_back(real(x));
    } else if (k == "cv_folds") c_.cv_folds = static_cast<int>(integer(v));
    else if (k == "intercept") c_.intercept = boolean(v);
    else fail("unknown key");
  }

  ExperimentConfig& c_;
  std::string key_;
  int line_ = 0;
  std::vector<Located> seen_;
};

}  // namespace

ExperimentConfig parse_config_text(const std::string& text, bool require_source) {
  ExperimentConfig c;
  ConfigParser parser(c);
  std::istringstream in(text);
  std::string raw, section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("line " + std::to_string(line) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section != "experiment" && section != "acmtf" && section != "kernel" && section != "classifier")
        throw ConfigError("line " + std::to_string(line) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line) + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (section.empty()) throw ConfigError("line " + std::to_string(line) + ": " + key + ": key outside any section");
    if (value.empty()) throw ConfigError("line " + std::to_string(line) + ": " + key + ": missing value");
    parser.set(section, key, value, line);
  }
  try {
    c.validate(require_source);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    const int at = colon == std::string::npos ? 0 : parser.line_of(msg.substr(0, colon));
    if (at > 0) throw ConfigError("line " + std::to_string(at) + ": " + msg);
    throw;
  }
  return c;
}

ExperimentConfig parse_config(const fs::path& p, bool require_source) {
  return parse_config_text(read_file(p), require_source);
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[experiment]\n";
  if (c.case_id) os << "case = " << *c.case_id << '\n';
  if (!c.dataset.empty()) os << "dataset = " << c.dataset << '\n';
  os << "n_per_class = " << c.n_per_class << '\n'
     << "test_fraction = " << num(c.test_fraction) << '\n'
     << "repetitions = " << c.repetitions << '\n'
     << "seed = " << c.seed << '\n'
     << "tolerate_failures = " << (c.tolerate_failures ? "true" : "false") << '\n'
     << "methods = ";
  for (std::size_t i = 0; i < c.methods.size(); ++i) os << (i ? ", " : "") << to_string(c.methods[i]);
  os << "\n\n[acmtf]\n"
     << "gamma = " << num(c.acmtf.gamma) << '\n'
     << "beta = " << num(c.acmtf.beta) << '\n'
     << "xi = " << num(c.acmtf.xi) << '\n'
     << "theta = " << num(c.acmtf.theta) << '\n'
     << "epsilon = " << num(c.acmtf.epsilon) << '\n'
     << "rank = " << c.acmtf.rank << '\n'
     << "cg_tol = " << num(c.acmtf.cg_tol) << '\n'
     << "max_iters = " << c.acmtf.max_iters << '\n'
     << "normalize_input = " << (c.normalize_input ? "true" : "false") << '\n'
     << "prune_tolerance = " << num(c.prune_tolerance) << '\n'
     << "\n[kernel]\n";
  const std::pair<const char*, const KernelSpec*> comps[] = {
      {"k1_mode1", &c.kernel.k1_mode1}, {"k1_mode2", &c.kernel.k1_mode2}, {"k2", &c.kernel.k2}, {"k3", &c.kernel.k3}};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& [name, s] = comps[i];
    os << name << ".kind = " << to_string(s->kind) << '\n';
    // The fixed value is written first so a later "auto" keeps it intact.
    os << name << ".bandwidth = " << num(s->bandwidth) << '\n';
    if (c.auto_bandwidth[i]) os << name << ".bandwidth = auto\n";
    os << name << ".degree = " << s->degree << '\n' << name << ".offset = " << num(s->offset) << '\n';
  }
  os << "weights = " << num(c.kernel.weights[0]) << ", " << num(c.kernel.weights[1]) << ", "
     << num(c.kernel.weights[2]) << '\n'
     << "tune_weights = " << (c.tune_weights ? "true" : "false") << '\n'
     << "weight_step = " << num(c.weight_step) << '\n'
     << "\n[classifier]\n"
     << "lambda = " << (c.lambda ? num(*c.lambda) : std::string("cv")) << '\n'
     << "lambda_grid = ";
  for (std::size_t i = 0; i < c.lambda_grid.size(); ++i) os << (i ? ", " : "") << num(c.lambda_grid[i]);
  os << "\ncv_folds = " << c.cv_folds << '\n'
     << "intercept = " << (c.intercept ? "true" : "false") << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Manifest

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string RunManifest::render() const {
  std::ostringstream os;
  char hash[20];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64(config_text)));
  os << "command = " << command << '\n'
     << "software_version = " << kSoftwareVersion << '\n'
     << "format_version = " << kFormatVersion << '\n';
  if (!config_text.empty()) os << "config_hash = fnv1a64:" << hash << '\n';
  os << "seed = " << seed << '\n';
  for (const auto& [k, v] : values) os << k << " = " << v << '\n';
  for (const auto& [k, s] : stage_seconds) os << "seconds." << k << " = " << num(s) << '\n';
  if (!config_text.empty()) {
    os << "\n# configuration\n";
    std::istringstream in(config_text);
    std::string line;
    while (std::getline(in, line)) os << "# " << line << '\n';
  }
  return os.str();
}

void write_manifest(const fs::path& p, const RunManifest& m) { write_file_atomic(p, m.render()); }

}  // namespace cstm
