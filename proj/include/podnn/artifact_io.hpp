#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "podnn/common.hpp"

// Persistence: a fixed binary container for numeric artifacts (header with
// magic, version, dims and payload digest; row-major 8-byte little-endian
// floats), SHA-256 manifests with provenance links, and deterministic CSV.

namespace podnn::io {

inline constexpr const char* kToolVersion = "podnn 1.0.0";

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

// Shortest decimal form that round-trips the exact double.
std::string format_double(double value);

struct NamedArray {
  std::string name;
  Eigen::MatrixXd data;
};

struct Artifact {
  nlohmann::json meta;  // free-form; keys serialize in sorted order
  std::vector<NamedArray> arrays;

  bool has(const std::string& name) const;
  const Eigen::MatrixXd& array(const std::string& name) const;
};

// Atomic write (temp file + rename); the header records the payload digest.
void write_artifact(const std::string& path, const Artifact& artifact);

// Verifies the embedded payload digest; mismatch raises a provenance error.
Artifact read_artifact(const std::string& path);

void write_text_atomic(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns);
  void row(const std::vector<std::string>& values);
  const std::string& str() const { return out_; }
  void save(const std::string& path) const { write_text_atomic(path, out_); }

 private:
  std::size_t width_;
  std::string out_;
};

struct ManifestEntry {
  std::string sha256;
  std::vector<std::string> parents;  // digests of upstream artifacts
  std::string config_sha256;
  std::string tool_version = kToolVersion;
};

struct Manifest {
  std::map<std::string, ManifestEntry> entries;  // keyed by path relative to dir
};

Manifest load_manifest(const std::string& dir);  // empty when absent
void save_manifest(const std::string& dir, const Manifest& manifest);

// Records (or replaces) one entry and rewrites the manifest file.
void record_artifact(const std::string& dir, const std::string& rel_path,
                     const std::vector<std::string>& parents, const std::string& config_sha);

// Digest check of dir/rel_path against the manifest; true when the entry
// exists and matches, provenance error when it exists and differs.
bool verify_against_manifest(const std::string& dir, const std::string& rel_path);

}  // namespace podnn::io
