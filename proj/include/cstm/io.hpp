#pragma once

// "CSTM" binary container.
//
// Plain array file (tensors, matrices):
//   bytes 0-3   magic "CSTM"
//   u32         format version (kFormatVersion)
//   u32         order N (>= 1)
//   u64 x N     dims
//   f64 x prod  payload, mode-1 fastest (column-major for matrices)
//
// Bundle file (samples, factors, models) starts the same way with order 0, then:
//   u32         bundle kind (BundleKind)
//   u32         entry count
//   per entry:  u32 name length, name bytes, u32 order, u64 x order dims, f64 payload
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cstm/acmtf.hpp"
#include "cstm/experiments.hpp"
#include "cstm/stm.hpp"
#include "cstm/tensor.hpp"

namespace cstm {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kMagic[4] = {'C', 'S', 'T', 'M'};
inline constexpr const char* kSoftwareVersion = "0.1.0";

enum class BundleKind : std::uint32_t { sample = 1, factors = 2, model = 3 };
std::string to_string(BundleKind k);

struct Array {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  static Array scalar(double v) { return {{1}, {v}}; }
  static Array of(const DenseMatrix& m);
  static Array of(const Vector& v);
  static Array of(const DenseTensor3& t);
  DenseMatrix matrix() const;
  Vector vector() const;
  DenseTensor3 tensor() const;
  bool operator==(const Array&) const = default;
};

struct Bundle {
  BundleKind kind = BundleKind::sample;
  std::vector<std::pair<std::string, Array>> entries;

  bool has(const std::string& name) const;
  /// Throws FormatError when the entry is missing.
  const Array& at(const std::string& name) const;
  void add(std::string name, Array a) { entries.emplace_back(std::move(name), std::move(a)); }
};

// Byte-level encoding.
std::string encode_array(const Array& a);
Array decode_array(const std::string& bytes);
std::string encode_bundle(const Bundle& b);
Bundle decode_bundle(const std::string& bytes);

std::string read_file(const std::filesystem::path& p);
/// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& p, const std::string& bytes);

void write_tensor(const std::filesystem::path& p, const DenseTensor3& t);
DenseTensor3 read_tensor(const std::filesystem::path& p);
void write_matrix(const std::filesystem::path& p, const DenseMatrix& m);
DenseMatrix read_matrix(const std::filesystem::path& p);

Bundle sample_bundle(const CoupledSample& s);
CoupledSample sample_from_bundle(const Bundle& b);
Bundle factors_bundle(const AcmtfFactors& f);
AcmtfFactors factors_from_bundle(const Bundle& b);
Bundle model_bundle(const StmModel& m);
StmModel model_from_bundle(const Bundle& b);

void save_bundle(const std::filesystem::path& p, const Bundle& b);
/// Reads a bundle and checks its kind.
Bundle load_bundle(const std::filesystem::path& p, BundleKind expected);

/// Sample files (*.cstm) of a directory, sorted by file name.
std::vector<std::pair<std::string, CoupledSample>> load_sample_dir(const std::filesystem::path& dir);
/// Factor files (*.cstm) of a directory, sorted by file name.
std::vector<std::pair<std::string, AcmtfFactors>> load_factor_dir(const std::filesystem::path& dir);

/// Human-readable header summary of any CSTM file.
std::string describe_file(const std::filesystem::path& p);

// ---------------------------------------------------------------------------
// Configuration: "key = value" lines grouped under [section] headers; '#' starts a comment.

ExperimentConfig parse_config_text(const std::string& text, bool require_source = true);
ExperimentConfig parse_config(const std::filesystem::path& p, bool require_source = true);
/// Canonical text form; parse_config_text(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& c);

// ---------------------------------------------------------------------------
// Run manifest

std::uint64_t fnv1a64(const std::string& bytes);

struct RunManifest {
  std::string command;
  std::string config_text;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> stage_seconds;
  std::vector<std::pair<std::string, std::string>> values;  // objectives, lambda / weight selections, ...

  std::string render() const;
};

void write_manifest(const std::filesystem::path& p, const RunManifest& m);

}  // namespace cstm
