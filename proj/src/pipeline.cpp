#include "podnn/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

namespace podnn::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------ conversions

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  Eigen::Index i = 0;
  for (const auto& x : a) v[i++] = x.get<double>();
  return v;
}

pod::SamplingKind sampling_kind_from_name(const std::string& name) {
  if (name == "sps") return pod::SamplingKind::Sps;
  if (name == "dps") return pod::SamplingKind::Dps;
  fail(ErrorKind::Provenance, "unknown sampling kind '" + name + "' in artifact");
}

sampling::SignalKind signal_kind_from_name(const std::string& name) {
  if (name == "constant") return sampling::SignalKind::Constant;
  if (name == "rectified_sine") return sampling::SignalKind::RectifiedSine;
  if (name == "poly2") return sampling::SignalKind::Poly2;
  fail(ErrorKind::Provenance, "unknown signal kind '" + name + "' in artifact");
}

std::string sanitize_csv_field(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r' || c == '"') c = ' ';
  return s;
}

}  // namespace

io::Artifact snapshots_to_artifact(const pod::SnapshotSet& set, const std::string& model) {
  set.validate();
  const auto n_s = static_cast<int>(set.trajectories.size());
  const auto per = set.trajectories.front().states.cols();
  const auto n = set.trajectories.front().states.rows();
  const auto n_mu = set.trajectories.front().params.rows();

  io::Artifact a;
  a.meta["model"] = model;
  a.meta["sampling"] = pod::sampling_kind_name(set.sampling_kind);
  a.meta["n_s"] = n_s;
  a.meta["k"] = static_cast<int>(per) - 1;
  a.meta["t_end"] = set.trajectories.front().times[per - 1];
  json signals = json::array();
  for (const auto& s : set.signals) {
    json js;
    js["kind"] = sampling::signal_kind_name(s.kind);
    js["base"] = vec_to_json(s.base);
    js["floor"] = vec_to_json(s.floor_val);
    js["omega"] = s.omega;
    json mod = json::array();
    for (const bool m : s.modulated) mod.push_back(m ? 1 : 0);
    js["modulated"] = mod;
    json poly = json::array();
    for (Eigen::Index r = 0; r < s.poly.rows(); ++r)
      poly.push_back(json::array({s.poly(r, 0), s.poly(r, 1), s.poly(r, 2), s.poly(r, 3)}));
    js["poly"] = poly;
    js["id"] = s.id;
    signals.push_back(js);
  }
  a.meta["signals"] = signals;

  Eigen::MatrixXd times(1, per);
  times.row(0) = set.trajectories.front().times.transpose();
  Eigen::MatrixXd states(n, static_cast<Eigen::Index>(n_s) * per);
  Eigen::MatrixXd params(n_mu, static_cast<Eigen::Index>(n_s) * per);
  for (int i = 0; i < n_s; ++i) {
    states.middleCols(static_cast<Eigen::Index>(i) * per, per) = set.trajectories[i].states;
    params.middleCols(static_cast<Eigen::Index>(i) * per, per) = set.trajectories[i].params;
  }
  a.arrays.push_back({"times", std::move(times)});
  a.arrays.push_back({"states", std::move(states)});
  a.arrays.push_back({"params", std::move(params)});
  return a;
}

pod::SnapshotSet snapshots_from_artifact(const io::Artifact& artifact) {
  pod::SnapshotSet set;
  set.sampling_kind = sampling_kind_from_name(artifact.meta.at("sampling").get<std::string>());
  const int n_s = artifact.meta.at("n_s").get<int>();
  const int k = artifact.meta.at("k").get<int>();
  const Eigen::Index per = k + 1;

  const Eigen::MatrixXd& times = artifact.array("times");
  const Eigen::MatrixXd& states = artifact.array("states");
  const Eigen::MatrixXd& params = artifact.array("params");
  if (times.cols() != per || states.cols() != n_s * per || params.cols() != n_s * per)
    fail(ErrorKind::Provenance, "snapshot artifact dims disagree with meta");

  const json& signals = artifact.meta.at("signals");
  if (static_cast<int>(signals.size()) != n_s)
    fail(ErrorKind::Provenance, "snapshot artifact signal count disagrees with n_s");
  for (const auto& js : signals) {
    sampling::ParameterSignal s;
    s.kind = signal_kind_from_name(js.at("kind").get<std::string>());
    s.base = vec_from_json(js.at("base"));
    s.floor_val = vec_from_json(js.at("floor"));
    s.omega = js.at("omega").get<double>();
    for (const auto& m : js.at("modulated")) s.modulated.push_back(m.get<int>() != 0);
    const auto& poly = js.at("poly");
    s.poly.resize(static_cast<Eigen::Index>(poly.size()), 4);
    Eigen::Index r = 0;
    for (const auto& row : poly) {
      for (int c = 0; c < 4; ++c) s.poly(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
      ++r;
    }
    s.id = js.at("id").get<std::string>();
    set.signals.push_back(std::move(s));
  }

  for (int i = 0; i < n_s; ++i) {
    fom::Trajectory t;
    t.times = times.row(0).transpose();
    t.states = states.middleCols(static_cast<Eigen::Index>(i) * per, per);
    t.params = params.middleCols(static_cast<Eigen::Index>(i) * per, per);
    t.signal_id = set.signals[static_cast<std::size_t>(i)].id;
    set.trajectories.push_back(std::move(t));
  }
  set.validate();
  return set;
}

io::Artifact basis_to_artifact(const pod::ReducedBasis& basis) {
  io::Artifact a;
  a.meta["n_r"] = basis.n_r;
  a.meta["rank_clamped"] = basis.rank_clamped;
  a.meta["warning"] = basis.warning;
  a.meta["source_hash"] = basis.source_hash;
  a.arrays.push_back({"basis", basis.basis});
  Eigen::MatrixXd sigma(basis.singular_values.size(), 1);
  sigma.col(0) = basis.singular_values;
  a.arrays.push_back({"singular_values", std::move(sigma)});
  Eigen::MatrixXd mean(basis.mean.size(), 1);
  if (basis.mean.size() > 0) mean.col(0) = basis.mean;
  a.arrays.push_back({"mean", std::move(mean)});
  return a;
}

pod::ReducedBasis basis_from_artifact(const io::Artifact& artifact) {
  pod::ReducedBasis b;
  b.basis = artifact.array("basis");
  b.singular_values = artifact.array("singular_values").col(0);
  const Eigen::MatrixXd& mean = artifact.array("mean");
  if (mean.rows() > 0) b.mean = mean.col(0);
  b.n_r = artifact.meta.at("n_r").get<int>();
  b.rank_clamped = artifact.meta.at("rank_clamped").get<bool>();
  b.warning = artifact.meta.at("warning").get<std::string>();
  b.source_hash = artifact.meta.at("source_hash").get<std::string>();
  if (b.basis.cols() != b.n_r)
    fail(ErrorKind::Provenance, "basis artifact n_r disagrees with column count");
  return b;
}

io::Artifact net_to_artifact(const surrogate::SurrogateNet& net) {
  io::Artifact a;
  a.meta["mode"] = surrogate::mode_name(net.mode);
  a.meta["tau_input"] = net.tau_input;
  a.meta["tau_train"] = net.tau_train;
  a.meta["n_r"] = net.n_r;
  a.meta["n_mu"] = net.n_mu;
  a.meta["activation"] = surrogate::activation_name(net.core.activation);
  a.meta["leaky_alpha"] = net.core.leaky_alpha;
  a.meta["diverged"] = net.diverged;
  a.meta["tau_mean"] = net.norm.tau_mean;
  a.meta["tau_scale"] = net.norm.tau_scale;
  a.meta["trained_with"] = {
      {"epochs", net.trained_with.epochs},
      {"batch_size", net.trained_with.batch_size},
      {"learning_rate", net.trained_with.learning_rate},
      {"beta1", net.trained_with.beta1},
      {"beta2", net.trained_with.beta2},
      {"adam_eps", net.trained_with.adam_eps},
      {"seed", net.trained_with.seed},
  };
  for (int l = 0; l < 3; ++l) {
    a.arrays.push_back({"w" + std::to_string(l), net.core.weights[static_cast<std::size_t>(l)]});
    Eigen::MatrixXd b(net.core.biases[static_cast<std::size_t>(l)].size(), 1);
    b.col(0) = net.core.biases[static_cast<std::size_t>(l)];
    a.arrays.push_back({"b" + std::to_string(l), std::move(b)});
  }
  auto push_vec = [&a](const char* name, const Eigen::VectorXd& v) {
    Eigen::MatrixXd m(v.size(), 1);
    if (v.size() > 0) m.col(0) = v;
    a.arrays.push_back({name, std::move(m)});
  };
  push_vec("state_mean", net.norm.state_mean);
  push_vec("state_scale", net.norm.state_scale);
  push_vec("param_mean", net.norm.param_mean);
  push_vec("param_scale", net.norm.param_scale);
  Eigen::MatrixXd loss(1, static_cast<Eigen::Index>(net.loss_history.size()));
  for (std::size_t i = 0; i < net.loss_history.size(); ++i)
    loss(0, static_cast<Eigen::Index>(i)) = net.loss_history[i];
  a.arrays.push_back({"loss_history", std::move(loss)});
  return a;
}

surrogate::SurrogateNet net_from_artifact(const io::Artifact& artifact) {
  surrogate::SurrogateNet net;
  net.mode = surrogate::mode_from_name(artifact.meta.at("mode").get<std::string>());
  net.tau_input = artifact.meta.at("tau_input").get<bool>();
  net.tau_train = artifact.meta.at("tau_train").get<double>();
  net.n_r = artifact.meta.at("n_r").get<int>();
  net.n_mu = artifact.meta.at("n_mu").get<int>();
  net.core.activation =
      surrogate::activation_from_name(artifact.meta.at("activation").get<std::string>());
  net.core.leaky_alpha = artifact.meta.at("leaky_alpha").get<double>();
  net.diverged = artifact.meta.at("diverged").get<bool>();
  net.norm.tau_mean = artifact.meta.at("tau_mean").get<double>();
  net.norm.tau_scale = artifact.meta.at("tau_scale").get<double>();
  const json& tw = artifact.meta.at("trained_with");
  net.trained_with.epochs = tw.at("epochs").get<int>();
  net.trained_with.batch_size = tw.at("batch_size").get<int>();
  net.trained_with.learning_rate = tw.at("learning_rate").get<double>();
  net.trained_with.beta1 = tw.at("beta1").get<double>();
  net.trained_with.beta2 = tw.at("beta2").get<double>();
  net.trained_with.adam_eps = tw.at("adam_eps").get<double>();
  net.trained_with.seed = tw.at("seed").get<std::uint64_t>();

  net.core.weights.resize(3);
  net.core.biases.resize(3);
  for (int l = 0; l < 3; ++l) {
    net.core.weights[static_cast<std::size_t>(l)] = artifact.array("w" + std::to_string(l));
    net.core.biases[static_cast<std::size_t>(l)] =
        artifact.array("b" + std::to_string(l)).col(0);
  }
  net.norm.state_mean = artifact.array("state_mean").col(0);
  net.norm.state_scale = artifact.array("state_scale").col(0);
  net.norm.param_mean = artifact.array("param_mean").col(0);
  net.norm.param_scale = artifact.array("param_scale").col(0);
  const Eigen::MatrixXd& loss = artifact.array("loss_history");
  for (Eigen::Index i = 0; i < loss.cols(); ++i) net.loss_history.push_back(loss(0, i));
  return net;
}

// -------------------------------------------------------------- FileStore

FileStore::FileStore(std::string out_dir, std::string config_sha)
    : dir_(std::move(out_dir)), config_sha_(std::move(config_sha)) {
  if (dir_.empty()) fail(ErrorKind::Config, "output directory is empty");
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec || !fs::is_directory(dir_))
    fail(ErrorKind::Io, "cannot create output directory " + dir_ +
                            (ec ? ": " + ec.message() : std::string{}));
}

std::string FileStore::rel_snapshots(const std::string& model, pod::SamplingKind kind) {
  return model + "/" + pod::sampling_kind_name(kind) + "/snapshots.bin";
}

std::string FileStore::rel_basis(const std::string& model, pod::SamplingKind kind) {
  return model + "/" + pod::sampling_kind_name(kind) + "/basis.bin";
}

std::string FileStore::rel_net(const std::string& model, pod::SamplingKind kind,
                               surrogate::Mode arch, int n_r, int member) {
  return model + "/" + pod::sampling_kind_name(kind) + "/models/" +
         surrogate::mode_name(arch) + "_nr" + std::to_string(n_r) + "_seed" +
         std::to_string(member) + ".bin";
}

std::string FileStore::abs(const std::string& rel) const {
  return (fs::path(dir_) / rel).string();
}

bool FileStore::exists(const std::string& rel) const { return fs::exists(abs(rel)); }

const std::string& FileStore::digest_of(const std::string& rel) const {
  static const std::string empty;
  auto it = digests_.find(rel);
  return it == digests_.end() ? empty : it->second;
}

void FileStore::write_config_echo(const std::string& raw_text) {
  record_text("config_echo.cfg", raw_text, {});
}

io::Artifact FileStore::load_verified(const std::string& rel) {
  const io::Manifest manifest = io::load_manifest(dir_);
  auto it = manifest.entries.find(rel);
  if (it == manifest.entries.end())
    fail(ErrorKind::Provenance, "artifact " + rel + " exists but is not in the manifest");
  const std::string sha = io::sha256_file(abs(rel));
  if (sha != it->second.sha256)
    fail(ErrorKind::Provenance, "digest mismatch for " + rel + ": manifest records " +
                                    it->second.sha256 + ", file has " + sha);
  digests_[rel] = sha;
  return io::read_artifact(abs(rel));
}

void FileStore::store(const std::string& rel, const io::Artifact& artifact,
                      const std::vector<std::string>& parents) {
  io::write_artifact(abs(rel), artifact);
  io::record_artifact(dir_, rel, parents, config_sha_);
  digests_[rel] = io::sha256_file(abs(rel));
}

void FileStore::record_text(const std::string& rel, const std::string& content,
                            const std::vector<std::string>& parents) {
  io::write_text_atomic(abs(rel), content);
  io::record_artifact(dir_, rel, parents, config_sha_);
  digests_[rel] = io::sha256_hex(content);
}

namespace {

// Human-readable mirror of a snapshot artifact, one row per stored instant.
std::string snapshots_csv(const pod::SnapshotSet& set) {
  const auto n = set.trajectories.front().states.rows();
  const auto n_mu = set.trajectories.front().params.rows();
  std::vector<std::string> cols = {"trajectory", "t"};
  for (Eigen::Index d = 0; d < n_mu; ++d) cols.push_back("mu" + std::to_string(d));
  for (Eigen::Index i = 0; i < n; ++i) cols.push_back("y" + std::to_string(i));
  io::CsvWriter csv(cols);
  std::vector<std::string> row(cols.size());
  for (std::size_t s = 0; s < set.trajectories.size(); ++s) {
    const auto& t = set.trajectories[s];
    for (Eigen::Index j = 0; j < t.times.size(); ++j) {
      std::size_t at = 0;
      row[at++] = std::to_string(s);
      row[at++] = io::format_double(t.times[j]);
      for (Eigen::Index d = 0; d < n_mu; ++d) row[at++] = io::format_double(t.params(d, j));
      for (Eigen::Index i = 0; i < n; ++i) row[at++] = io::format_double(t.states(i, j));
      csv.row(row);
    }
  }
  return csv.str();
}

std::string sigma_csv(const pod::ReducedBasis& basis) {
  io::CsvWriter csv({"index", "sigma"});
  for (Eigen::Index i = 0; i < basis.singular_values.size(); ++i)
    csv.row({std::to_string(i), io::format_double(basis.singular_values[i])});
  return csv.str();
}

}  // namespace

bool FileStore::load_snapshots(const std::string& model, pod::SamplingKind kind,
                               pod::SnapshotSet& out) {
  const std::string rel = rel_snapshots(model, kind);
  if (!exists(rel)) return false;
  const io::Manifest manifest = io::load_manifest(dir_);
  if (manifest.entries.find(rel) == manifest.entries.end()) return false;  // orphan: regenerate
  const io::Artifact a = load_verified(rel);
  if (a.meta.at("model").get<std::string>() != model)
    fail(ErrorKind::Provenance, rel + " was produced for model '" +
                                    a.meta.at("model").get<std::string>() + "'");
  out = snapshots_from_artifact(a);
  if (out.sampling_kind != kind) fail(ErrorKind::Provenance, rel + " has wrong sampling kind");
  return true;
}

void FileStore::store_snapshots(const std::string& model, pod::SamplingKind kind,
                                const pod::SnapshotSet& set) {
  const std::string rel = rel_snapshots(model, kind);
  store(rel, snapshots_to_artifact(set, model), {});
  const std::string mirror = model + "/" + pod::sampling_kind_name(kind) + "/snapshots.csv";
  record_text(mirror, snapshots_csv(set), {digests_[rel]});
}

bool FileStore::load_basis(const std::string& model, pod::SamplingKind kind,
                           pod::ReducedBasis& out) {
  const std::string rel = rel_basis(model, kind);
  if (!exists(rel)) return false;
  const io::Manifest manifest = io::load_manifest(dir_);
  if (manifest.entries.find(rel) == manifest.entries.end()) return false;
  out = basis_from_artifact(load_verified(rel));
  return true;
}

void FileStore::store_basis(const std::string& model, pod::SamplingKind kind,
                            const pod::ReducedBasis& basis) {
  const std::string rel = rel_basis(model, kind);
  std::vector<std::string> parents;
  const std::string snap_sha = digest_of(rel_snapshots(model, kind));
  if (!snap_sha.empty()) parents.push_back(snap_sha);
  store(rel, basis_to_artifact(basis), parents);
  const std::string spectrum = model + "/" + pod::sampling_kind_name(kind) + "/sigma.csv";
  record_text(spectrum, sigma_csv(basis), {digests_[rel]});
}

bool FileStore::load_net(const std::string& model, pod::SamplingKind kind, surrogate::Mode arch,
                         int n_r, int member, surrogate::SurrogateNet& out) {
  const std::string rel = rel_net(model, kind, arch, n_r, member);
  if (!exists(rel)) return false;
  const io::Manifest manifest = io::load_manifest(dir_);
  if (manifest.entries.find(rel) == manifest.entries.end()) return false;
  out = net_from_artifact(load_verified(rel));
  if (out.n_r != n_r || out.mode != arch)
    fail(ErrorKind::Provenance, rel + " does not match its cell coordinates");
  return true;
}

void FileStore::store_net(const std::string& model, pod::SamplingKind kind, surrogate::Mode arch,
                          int n_r, int member, const surrogate::SurrogateNet& net) {
  const std::string rel = rel_net(model, kind, arch, n_r, member);
  std::vector<std::string> parents;
  const std::string snap_sha = digest_of(rel_snapshots(model, kind));
  const std::string basis_sha = digest_of(rel_basis(model, kind));
  if (!snap_sha.empty()) parents.push_back(snap_sha);
  if (!basis_sha.empty()) parents.push_back(basis_sha);
  store(rel, net_to_artifact(net), parents);
  if (net.diverged) {
    const auto& lh = net.loss_history;
    const std::size_t best_epoch =
        lh.empty() ? 0
                   : static_cast<std::size_t>(std::min_element(lh.begin(), lh.end()) -
                                              lh.begin()) +
                         1;
    const std::string note = "training diverged; best weights kept from epoch " +
                             std::to_string(best_epoch) + "\n";
    record_text(rel + ".failed", note, {digests_[rel]});
  }
}

// ------------------------------------------------------------- report csv

namespace {

const std::vector<std::string> kReportColumns = {
    "model",         "sampling",        "arch",
    "n_r",           "test",            "seeds_total",
    "seeds_used",    "failed",          "error",
    "e_pod_prefixed", "e_pod_unprefixed", "eann_onestep_mean",
    "eann_onestep_std", "eann_rollout_mean", "eann_rollout_std",
    "eann_onestep_mean_prefixed", "eann_rollout_mean_prefixed"};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
}

}  // namespace

std::string report_csv_text(const eval::EvalReport& report) {
  io::CsvWriter csv(kReportColumns);
  for (const auto& cell : report.cells) {
    const auto& m = cell.metrics;
    csv.row({cell.model, cell.sampling, cell.arch, std::to_string(cell.n_r), cell.test,
             std::to_string(m.seeds_total), std::to_string(m.seeds_used),
             cell.failed ? "1" : "0", sanitize_csv_field(cell.error),
             io::format_double(m.e_pod.prefixed), io::format_double(m.e_pod.unprefixed),
             io::format_double(m.onestep_mean), io::format_double(m.onestep_std),
             io::format_double(m.rollout_mean), io::format_double(m.rollout_std),
             io::format_double(m.onestep_mean_prefixed),
             io::format_double(m.rollout_mean_prefixed)});
  }
  return csv.str();
}

std::string timing_csv_text(const eval::EvalReport& report) {
  io::CsvWriter csv({"model", "sampling", "arch", "n_r", "test", "wall_seconds"});
  for (const auto& cell : report.cells)
    csv.row({cell.model, cell.sampling, cell.arch, std::to_string(cell.n_r), cell.test,
             io::format_double(cell.wall_seconds)});
  return csv.str();
}

eval::EvalReport parse_report_csv(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string line =
        text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    if (!line.empty()) lines.push_back(line);
    pos = (nl == std::string::npos) ? text.size() : nl + 1;
  }
  if (lines.empty()) fail(ErrorKind::EmptyReport, "report CSV is empty");
  const auto header = split_csv_line(lines.front());
  if (header != kReportColumns) fail(ErrorKind::Provenance, "report CSV has unexpected columns");
  if (lines.size() == 1) fail(ErrorKind::EmptyReport, "report CSV has no data rows");

  eval::EvalReport report;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split_csv_line(lines[i]);
    if (f.size() != kReportColumns.size())
      fail(ErrorKind::Provenance, "report CSV row " + std::to_string(i) + " is malformed");
    eval::EvalCell cell;
    std::size_t at = 0;
    cell.model = f[at++];
    cell.sampling = f[at++];
    cell.arch = f[at++];
    cell.n_r = config::parse_int(f[at++], "report n_r");
    cell.test = f[at++];
    cell.metrics.seeds_total = config::parse_int(f[at++], "report seeds_total");
    cell.metrics.seeds_used = config::parse_int(f[at++], "report seeds_used");
    cell.failed = f[at++] == "1";
    cell.error = f[at++];
    cell.metrics.e_pod.prefixed = config::parse_double(f[at++], "report e_pod_prefixed");
    cell.metrics.e_pod.unprefixed = config::parse_double(f[at++], "report e_pod_unprefixed");
    cell.metrics.onestep_mean = config::parse_double(f[at++], "report onestep_mean");
    cell.metrics.onestep_std = config::parse_double(f[at++], "report onestep_std");
    cell.metrics.rollout_mean = config::parse_double(f[at++], "report rollout_mean");
    cell.metrics.rollout_std = config::parse_double(f[at++], "report rollout_std");
    cell.metrics.onestep_mean_prefixed =
        config::parse_double(f[at++], "report onestep_mean_prefixed");
    cell.metrics.rollout_mean_prefixed =
        config::parse_double(f[at++], "report rollout_mean_prefixed");
    report.cells.push_back(std::move(cell));
  }
  return report;
}

// ----------------------------------------------------------------- tables

namespace {

std::string pct(double fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

std::string pct_with_delta(double fraction, double delta_fraction) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f(%+.2f)", 100.0 * fraction, 100.0 * delta_fraction);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

}  // namespace

std::string render_tables(const eval::EvalReport& report) {
  if (report.cells.empty()) fail(ErrorKind::EmptyReport, "cannot render an empty report");

  // (model, arch, test) -> n_r -> sampling -> cell
  std::map<std::string, std::map<int, std::map<std::string, const eval::EvalCell*>>> groups;
  for (const auto& cell : report.cells)
    groups[cell.model + " | " + cell.arch + " | " + cell.test][cell.n_r][cell.sampling] = &cell;

  std::string out;
  out += "Rollout E_ann, mean over surviving seeds, percent of reference norm.\n";
  out += "DPS cells carry the delta against SPS in parentheses.\n";
  for (const auto& [key, rows] : groups) {
    out += "\n== " + key + "\n";
    out += pad("n_r", 5) + pad("sps", 14) + pad("dps", 18) + pad("e_pod sps", 14) +
           pad("e_pod dps", 14) + "\n";
    for (const auto& [n_r, cells] : rows) {
      auto sps = cells.find("sps");
      auto dps = cells.find("dps");
      const bool sps_ok = sps != cells.end() && !sps->second->failed;
      const bool dps_ok = dps != cells.end() && !dps->second->failed;
      std::string sps_txt = sps_ok ? pct(sps->second->metrics.rollout_mean) : "--";
      std::string dps_txt = "--";
      if (dps_ok && sps_ok)
        dps_txt = pct_with_delta(dps->second->metrics.rollout_mean,
                                 dps->second->metrics.rollout_mean -
                                     sps->second->metrics.rollout_mean);
      else if (dps_ok)
        dps_txt = pct(dps->second->metrics.rollout_mean);
      const std::string ep_sps = sps_ok ? pct(sps->second->metrics.e_pod.unprefixed) : "--";
      const std::string ep_dps = dps_ok ? pct(dps->second->metrics.e_pod.unprefixed) : "--";
      out += pad(std::to_string(n_r), 5) + pad(sps_txt, 14) + pad(dps_txt, 18) +
             pad(ep_sps, 14) + pad(ep_dps, 14) + "\n";
    }
  }
  return out;
}

// ------------------------------------------------------------------ stages

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Usage:
    case ErrorKind::Io:
    case ErrorKind::MissingInput:
    case ErrorKind::EmptyReport:
      return 2;
    case ErrorKind::Provenance:
      return 4;
    default:
      return 3;
  }
}

namespace {

struct Stage {
  config::PipelineConfig cfg;
  eval::MatrixSpec spec;
  FileStore store;

  explicit Stage(const config::PipelineConfig& c)
      : cfg(c), spec(config::to_matrix_spec(c)), store(c.out_dir, c.sha256) {
    store.write_config_echo(c.raw_text);
  }
};

void require_snapshots(Stage& stage) {
  for (const auto& plan : stage.spec.models)
    for (const auto kind : stage.spec.samplings) {
      const std::string rel = FileStore::rel_snapshots(plan.model.name, kind);
      if (!stage.store.exists(rel))
        fail(ErrorKind::MissingInput,
             "missing " + rel + " under " + stage.cfg.out_dir + "; run simulate first");
    }
}

pod::SnapshotSet load_snapshots_or_die(Stage& stage, const fom::FomModel& model,
                                       pod::SamplingKind kind) {
  pod::SnapshotSet snaps;
  if (!stage.store.load_snapshots(model.name, kind, snaps))
    fail(ErrorKind::MissingInput,
         "missing " + FileStore::rel_snapshots(model.name, kind) + " under " +
             stage.cfg.out_dir + "; run simulate first");
  return snaps;
}

pod::ReducedBasis load_basis_or_die(Stage& stage, const fom::FomModel& model,
                                    pod::SamplingKind kind) {
  pod::ReducedBasis basis;
  if (!stage.store.load_basis(model.name, kind, basis))
    fail(ErrorKind::MissingInput,
         "missing " + FileStore::rel_basis(model.name, kind) + " under " + stage.cfg.out_dir +
             "; run reduce first");
  return basis;
}

void run_step_study(Stage& stage);

}  // namespace

void cmd_simulate(const config::PipelineConfig& cfg) {
  Stage stage(cfg);
  for (const auto& plan : stage.spec.models)
    for (const auto kind : stage.spec.samplings) {
      const pod::SnapshotSet snaps =
          eval::simulate_snapshots(plan.model, plan.k, kind, stage.spec.n_s, stage.spec.method,
                                   stage.spec.seed, /*tolerant=*/true);
      stage.store.store_snapshots(plan.model.name, kind, snaps);
      std::cout << "simulate: " << FileStore::rel_snapshots(plan.model.name, kind) << " ("
                << snaps.trajectories.size() << " trajectories x "
                << snaps.trajectories.front().states.cols() << " points)\n";
    }
}

void cmd_reduce(const config::PipelineConfig& cfg) {
  Stage stage(cfg);
  for (const auto& plan : stage.spec.models)
    for (const auto kind : stage.spec.samplings) {
      const pod::SnapshotSet snaps = load_snapshots_or_die(stage, plan.model, kind);
      const Eigen::MatrixXd y = pod::assemble_snapshot_matrix(snaps);
      pod::ReducedBasis basis = pod::compute_pod(
          y, static_cast<int>(std::min(y.rows(), y.cols())), stage.spec.center_pod);
      basis.source_hash = stage.store.digest_of(FileStore::rel_snapshots(plan.model.name, kind));
      stage.store.store_basis(plan.model.name, kind, basis);
      std::cout << "reduce: " << FileStore::rel_basis(plan.model.name, kind) << " (rank "
                << basis.n_r << ", sigma_1 = " << basis.singular_values[0] << ")\n";
    }
}

void cmd_train(const config::PipelineConfig& cfg) {
  Stage stage(cfg);
  for (const auto& plan : stage.spec.models)
    for (const auto kind : stage.spec.samplings) {
      const pod::SnapshotSet snaps = load_snapshots_or_die(stage, plan.model, kind);
      const pod::ReducedBasis basis_full = load_basis_or_die(stage, plan.model, kind);
      for (const int n_r : stage.spec.n_r_list) {
        const pod::ReducedBasis basis_r = pod::truncate(basis_full, n_r);
        const surrogate::TransitionSet data =
            surrogate::build_transitions(basis_r, snaps.trajectories);
        for (const auto arch : stage.spec.archs) {
          std::vector<int> missing;
          for (int member = 0; member < stage.spec.ensemble; ++member) {
            surrogate::SurrogateNet existing;
            if (!stage.store.load_net(plan.model.name, kind, arch, n_r, member, existing))
              missing.push_back(member);
          }
          std::vector<surrogate::SurrogateNet> trained(missing.size());
          std::vector<std::optional<std::pair<ErrorKind, std::string>>> errors(missing.size());
          auto train_one = [&](std::size_t i) {
            const int member = missing[i];
            surrogate::TrainingConfig tc = stage.spec.training;
            tc.seed = eval::net_seed(stage.spec.seed, plan.model.name, kind, arch, n_r, member);
            try {
              trained[i] = surrogate::train_surrogate(arch, basis_r.n_r, plan.model.n_params,
                                                      stage.spec.hidden, stage.spec.activation,
                                                      data, tc);
            } catch (const Error& e) {
              errors[i] = {e.kind(), e.what()};
            }
          };
          const int jobs = std::max(1, stage.spec.jobs);
          if (jobs == 1 || missing.size() <= 1) {
            for (std::size_t i = 0; i < missing.size(); ++i) train_one(i);
          } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < jobs; ++t)
              pool.emplace_back([&, t] {
                for (std::size_t i = static_cast<std::size_t>(t); i < missing.size();
                     i += static_cast<std::size_t>(jobs))
                  train_one(i);
              });
            for (auto& th : pool) th.join();
          }
          for (std::size_t i = 0; i < missing.size(); ++i) {
            if (errors[i]) fail(errors[i]->first, errors[i]->second);
            stage.store.store_net(plan.model.name, kind, arch, n_r, missing[i], trained[i]);
          }
          if (!missing.empty())
            std::cout << "train: " << plan.model.name << "/" << pod::sampling_kind_name(kind)
                      << " " << surrogate::mode_name(arch) << " n_r=" << n_r << " ("
                      << missing.size() << " of " << stage.spec.ensemble << " members)\n";
        }
      }
    }
}

void cmd_evaluate(const config::PipelineConfig& cfg) {
  Stage stage(cfg);
  require_snapshots(stage);
  const eval::EvalReport report = eval::run_matrix(stage.spec, &stage.store);

  std::vector<std::string> parents;
  for (const auto& plan : stage.spec.models)
    for (const auto kind : stage.spec.samplings) {
      const std::string sha = stage.store.digest_of(FileStore::rel_basis(plan.model.name, kind));
      if (!sha.empty()) parents.push_back(sha);
    }
  stage.store.record_text("report.csv", report_csv_text(report), parents);
  io::write_text_atomic((fs::path(cfg.out_dir) / "timing.csv").string(),
                        timing_csv_text(report));

  int failed = 0;
  for (const auto& cell : report.cells) failed += cell.failed ? 1 : 0;
  std::cout << "evaluate: " << report.cells.size() << " cells, " << failed << " failed\n";

  if (cfg.step_study) run_step_study(stage);
}

namespace {

void run_step_study(Stage& stage) {
  const eval::ModelPlan* plan = nullptr;
  for (const auto& p : stage.spec.models)
    if (p.model.name == stage.cfg.step_study_model) plan = &p;
  if (plan == nullptr)
    fail(ErrorKind::Config, "step_study_model '" + stage.cfg.step_study_model +
                                "' is not one of the configured models");
  const eval::TestCase* test = nullptr;
  for (const auto& t : plan->tests)
    if (t.label == stage.cfg.step_study_test) test = &t;
  if (test == nullptr)
    fail(ErrorKind::Config, "step_study_test '" + stage.cfg.step_study_test +
                                "' is not a test of model '" + plan->model.name + "'");
  const pod::SamplingKind kind = stage.cfg.step_study_sampling;

  const pod::SnapshotSet snaps = load_snapshots_or_die(stage, plan->model, kind);
  const pod::ReducedBasis basis_full = load_basis_or_die(stage, plan->model, kind);
  const pod::ReducedBasis basis_r = pod::truncate(basis_full, stage.cfg.step_study_n_r);
  const surrogate::TransitionSet plain =
      surrogate::build_transitions(basis_r, snaps.trajectories);
  const surrogate::TransitionSet strided =
      surrogate::build_transitions_strided(basis_r, snaps.trajectories, {0, 1, 2});

  // The three study nets sit outside the ensemble member range on purpose.
  auto tc_for = [&](surrogate::Mode arch, int member) {
    surrogate::TrainingConfig tc = stage.spec.training;
    tc.seed = eval::net_seed(stage.spec.seed, plan->model.name, kind, arch,
                             stage.cfg.step_study_n_r, member);
    return tc;
  };
  const int n_mu = plan->model.n_params;
  const surrogate::SurrogateNet net_rknn = surrogate::train_surrogate(
      surrogate::Mode::Rknn, basis_r.n_r, n_mu, stage.spec.hidden, stage.spec.activation, plain,
      tc_for(surrogate::Mode::Rknn, 1000));
  const surrogate::SurrogateNet net_tau = surrogate::train_surrogate(
      surrogate::Mode::Direct, basis_r.n_r, n_mu, stage.spec.hidden, stage.spec.activation,
      strided, tc_for(surrogate::Mode::Direct, 1001), /*tau_input=*/true);
  const surrogate::SurrogateNet net_plain = surrogate::train_surrogate(
      surrogate::Mode::Direct, basis_r.n_r, n_mu, stage.spec.hidden, stage.spec.activation, plain,
      tc_for(surrogate::Mode::Direct, 1002));

  const auto rows =
      eval::step_size_study(net_rknn, net_tau, net_plain, basis_r, plan->model, *test,
                            stage.cfg.step_factors, stage.spec.ref_substep_multiplier);
  io::CsvWriter csv({"factor", "e_rknn", "e_direct_tau", "e_direct_naive"});
  for (const auto& row : rows)
    csv.row({io::format_double(row.factor), io::format_double(row.e_rknn),
             io::format_double(row.e_direct_tau), io::format_double(row.e_direct_naive)});
  stage.store.record_text("step_study.csv", csv.str(), {});
  std::cout << "step study: " << rows.size() << " factors -> step_study.csv\n";
}

}  // namespace

void cmd_report(const config::PipelineConfig& cfg) {
  Stage stage(cfg);
  const std::string report_path = (fs::path(cfg.out_dir) / "report.csv").string();
  if (!fs::exists(report_path))
    fail(ErrorKind::MissingInput, "missing report.csv under " + cfg.out_dir +
                                      "; run evaluate first");
  io::verify_against_manifest(cfg.out_dir, "report.csv");  // mismatch -> provenance error
  const eval::EvalReport report = parse_report_csv(io::read_text(report_path));

  stage.store.record_text("tables.txt", render_tables(report),
                          {io::sha256_file(report_path)});

  io::CsvWriter curves({"model", "test", "arch", "sampling", "n_r", "eann_rollout_mean"});
  for (const auto& cell : report.cells)
    curves.row({cell.model, cell.test, cell.arch, cell.sampling, std::to_string(cell.n_r),
                io::format_double(cell.metrics.rollout_mean)});
  stage.store.record_text("error_curves.csv", curves.str(), {});

  try {
    const auto summary = eval::sps_vs_dps_summary(report);
    io::CsvWriter csv({"model", "arch", "test", "mean_sps_minus_dps", "dps_wins", "sps_wins",
                       "compared", "partial"});
    for (const auto& row : summary)
      csv.row({row.model, row.arch, row.test, io::format_double(row.mean_difference),
               std::to_string(row.dps_wins), std::to_string(row.sps_wins),
               std::to_string(row.compared), row.partial ? "1" : "0"});
    stage.store.record_text("summary.csv", csv.str(), {});
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::MissingInput) throw;
    std::cerr << "note: skipping summary.csv: " << e.what() << "\n";
  }
  std::cout << "report: tables.txt, error_curves.csv written under " << cfg.out_dir << "\n";
}

}  // namespace podnn::pipeline
