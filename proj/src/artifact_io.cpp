#include "podnn/artifact_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace podnn::io {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- digests

namespace {

std::string digest_to_hex(const unsigned char* digest, unsigned len) {
  static const char* hex = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = hex[digest[i] >> 4];
    out[2 * i + 1] = hex[digest[i] & 0xf];
  }
  return out;
}

class Sha256Stream {
 public:
  Sha256Stream() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      fail(ErrorKind::Io, "sha256 init failed");
  }
  ~Sha256Stream() { EVP_MD_CTX_free(ctx_); }
  Sha256Stream(const Sha256Stream&) = delete;
  Sha256Stream& operator=(const Sha256Stream&) = delete;

  void update(const void* data, std::size_t size) {
    if (size > 0 && EVP_DigestUpdate(ctx_, data, size) != 1)
      fail(ErrorKind::Io, "sha256 update failed");
  }

  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned len = 0;
    if (EVP_DigestFinal_ex(ctx_, digest, &len) != 1) fail(ErrorKind::Io, "sha256 final failed");
    return digest_to_hex(digest, len);
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
  Sha256Stream s;
  s.update(data, size);
  return s.hex();
}

std::string sha256_hex(const std::string& bytes) { return sha256_hex(bytes.data(), bytes.size()); }

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open for digest: " + path);
  Sha256Stream s;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    s.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return s.hex();
}

// ------------------------------------------------------------- formatting

std::string format_double(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

// --------------------------------------------------------- binary payload

namespace {

constexpr char kMagic[8] = {'P', 'O', 'D', 'N', 'N', 'B', 'I', 'N'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t byteswap64(std::uint64_t v) {
  v = ((v & 0x00000000ffffffffULL) << 32) | (v >> 32);
  v = ((v & 0x0000ffff0000ffffULL) << 16) | ((v >> 16) & 0x0000ffff0000ffffULL);
  v = ((v & 0x00ff00ff00ff00ffULL) << 8) | ((v >> 8) & 0x00ff00ff00ff00ffULL);
  return v;
}

double to_little_endian(double x) {
  if constexpr (std::endian::native == std::endian::big)
    return std::bit_cast<double>(byteswap64(std::bit_cast<std::uint64_t>(x)));
  else
    return x;
}

std::string pack_arrays(const std::vector<NamedArray>& arrays) {
  std::size_t total = 0;
  for (const auto& a : arrays) total += static_cast<std::size_t>(a.data.size()) * sizeof(double);
  std::string bytes(total, '\0');
  std::size_t off = 0;
  for (const auto& a : arrays) {
    for (Eigen::Index r = 0; r < a.data.rows(); ++r)
      for (Eigen::Index c = 0; c < a.data.cols(); ++c) {
        const double v = to_little_endian(a.data(r, c));
        std::memcpy(bytes.data() + off, &v, sizeof v);
        off += sizeof v;
      }
  }
  return bytes;
}

template <typename T>
void put_u32(std::string& out, T value) {
  auto v = static_cast<std::uint32_t>(value);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

}  // namespace

bool Artifact::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

const Eigen::MatrixXd& Artifact::array(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a.data;
  fail(ErrorKind::Provenance, "artifact is missing array '" + name + "'");
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open for write: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorKind::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) fail(ErrorKind::Io, "rename failed: " + target.string() + " (" + ec.message() + ")");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open: " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}

void write_artifact(const std::string& path, const Artifact& artifact) {
  const std::string payload = pack_arrays(artifact.arrays);

  json header;
  header["meta"] = artifact.meta.is_null() ? json::object() : artifact.meta;
  header["payload_sha256"] = sha256_hex(payload);
  json dims = json::array();
  for (const auto& a : artifact.arrays)
    dims.push_back({{"name", a.name}, {"rows", a.data.rows()}, {"cols", a.data.cols()}});
  header["arrays"] = dims;
  const std::string header_str = header.dump();

  std::string bytes;
  bytes.reserve(16 + header_str.size() + payload.size());
  bytes.append(kMagic, sizeof kMagic);
  put_u32(bytes, kFormatVersion);
  put_u32(bytes, header_str.size());
  bytes += header_str;
  bytes += payload;
  write_text_atomic(path, bytes);
}

Artifact read_artifact(const std::string& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    fail(ErrorKind::Provenance, "not an artifact file: " + path);
  const std::uint32_t version = get_u32(bytes, 8);
  if (version != kFormatVersion)
    fail(ErrorKind::Provenance,
         "unsupported artifact version " + std::to_string(version) + ": " + path);
  const std::uint32_t header_len = get_u32(bytes, 12);
  if (bytes.size() < 16 + static_cast<std::size_t>(header_len))
    fail(ErrorKind::Provenance, "truncated artifact header: " + path);

  json header;
  try {
    header = json::parse(bytes.substr(16, header_len));
  } catch (const std::exception& e) {
    fail(ErrorKind::Provenance, "bad artifact header in " + path + ": " + e.what());
  }

  const std::string payload = bytes.substr(16 + header_len);
  const std::string expect = header.at("payload_sha256").get<std::string>();
  if (sha256_hex(payload) != expect)
    fail(ErrorKind::Provenance, "payload digest mismatch: " + path);

  Artifact artifact;
  artifact.meta = header.value("meta", json::object());
  std::size_t off = 0;
  for (const auto& d : header.at("arrays")) {
    NamedArray a;
    a.name = d.at("name").get<std::string>();
    const auto rows = d.at("rows").get<Eigen::Index>();
    const auto cols = d.at("cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0 ||
        off + static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * sizeof(double) >
            payload.size())
      fail(ErrorKind::Provenance, "array '" + a.name + "' overruns payload: " + path);
    a.data.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v;
        std::memcpy(&v, payload.data() + off, sizeof v);
        a.data(r, c) = to_little_endian(v);  // swap is an involution
        off += sizeof v;
      }
    artifact.arrays.push_back(std::move(a));
  }
  if (off != payload.size())
    fail(ErrorKind::Provenance, "payload has trailing bytes: " + path);
  return artifact;
}

// -------------------------------------------------------------------- csv

CsvWriter::CsvWriter(std::vector<std::string> columns) : width_(columns.size()) {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i > 0) out_ += ',';
    out_ += columns[i];
  }
  out_ += '\n';
}

void CsvWriter::row(const std::vector<std::string>& values) {
  if (values.size() != width_)
    fail(ErrorKind::Shape, "csv row has " + std::to_string(values.size()) + " fields, expected " +
                               std::to_string(width_));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out_ += ',';
    out_ += values[i];
  }
  out_ += '\n';
}

// --------------------------------------------------------------- manifest

namespace {
std::string manifest_path(const std::string& dir) {
  return (fs::path(dir) / "manifest.json").string();
}
}  // namespace

Manifest load_manifest(const std::string& dir) {
  Manifest m;
  const std::string path = manifest_path(dir);
  if (!fs::exists(path)) return m;
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const std::exception& e) {
    fail(ErrorKind::Provenance, "bad manifest " + path + ": " + e.what());
  }
  for (const auto& [key, val] : j.at("artifacts").items()) {
    ManifestEntry e;
    e.sha256 = val.at("sha256").get<std::string>();
    e.parents = val.value("parents", std::vector<std::string>{});
    e.config_sha256 = val.value("config_sha256", std::string{});
    e.tool_version = val.value("tool_version", std::string{kToolVersion});
    m.entries[key] = std::move(e);
  }
  return m;
}

void save_manifest(const std::string& dir, const Manifest& manifest) {
  json artifacts = json::object();
  for (const auto& [key, e] : manifest.entries) {
    artifacts[key] = {{"sha256", e.sha256},
                      {"parents", e.parents},
                      {"config_sha256", e.config_sha256},
                      {"tool_version", e.tool_version}};
  }
  json j = {{"artifacts", artifacts}};
  write_text_atomic(manifest_path(dir), j.dump(2) + "\n");
}

void record_artifact(const std::string& dir, const std::string& rel_path,
                     const std::vector<std::string>& parents, const std::string& config_sha) {
  Manifest m = load_manifest(dir);
  ManifestEntry e;
  e.sha256 = sha256_file((fs::path(dir) / rel_path).string());
  e.parents = parents;
  e.config_sha256 = config_sha;
  m.entries[rel_path] = std::move(e);
  save_manifest(dir, m);
}

bool verify_against_manifest(const std::string& dir, const std::string& rel_path) {
  Manifest m = load_manifest(dir);
  auto it = m.entries.find(rel_path);
  if (it == m.entries.end()) return false;
  const std::string actual = sha256_file((fs::path(dir) / rel_path).string());
  if (actual != it->second.sha256)
    fail(ErrorKind::Provenance, "manifest digest mismatch for " + rel_path + ": recorded " +
                                    it->second.sha256 + ", found " + actual);
  return true;
}

}  // namespace podnn::io
