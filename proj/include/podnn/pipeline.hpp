#pragma once

#include <map>
#include <string>

#include "podnn/artifact_io.hpp"
#include "podnn/config.hpp"
#include "podnn/eval.hpp"

// Stage commands over a file-system artifact store.  Layout under out_dir:
//   config_echo.cfg, manifest.json
//   <model>/<sps|dps>/snapshots.bin + snapshots.csv
//   <model>/<sps|dps>/basis.bin + sigma.csv
//   <model>/<sps|dps>/models/<arch>_nr<N>_seed<M>.bin (+ .failed marker)
//   report.csv, timing.csv, tables.txt, summary.csv, error_curves.csv,
//   step_study.csv
// Every binary artifact is digest-checked against manifest.json before use;
// timing.csv is the one deliberately unrecorded (non-deterministic) file.

namespace podnn::pipeline {

io::Artifact snapshots_to_artifact(const pod::SnapshotSet& set, const std::string& model);
pod::SnapshotSet snapshots_from_artifact(const io::Artifact& artifact);
io::Artifact basis_to_artifact(const pod::ReducedBasis& basis);
pod::ReducedBasis basis_from_artifact(const io::Artifact& artifact);
io::Artifact net_to_artifact(const surrogate::SurrogateNet& net);
surrogate::SurrogateNet net_from_artifact(const io::Artifact& artifact);

class FileStore : public eval::MatrixStore {
 public:
  FileStore(std::string out_dir, std::string config_sha);

  static std::string rel_snapshots(const std::string& model, pod::SamplingKind kind);
  static std::string rel_basis(const std::string& model, pod::SamplingKind kind);
  static std::string rel_net(const std::string& model, pod::SamplingKind kind,
                             surrogate::Mode arch, int n_r, int member);
  std::string abs(const std::string& rel) const;
  bool exists(const std::string& rel) const;
  const std::string& digest_of(const std::string& rel) const;  // after load/store

  void write_config_echo(const std::string& raw_text);

  // Writes dir/rel and records its digest (and parents) in the manifest.
  void record_text(const std::string& rel, const std::string& content,
                   const std::vector<std::string>& parents);

  bool load_snapshots(const std::string& model, pod::SamplingKind kind,
                      pod::SnapshotSet& out) override;
  void store_snapshots(const std::string& model, pod::SamplingKind kind,
                       const pod::SnapshotSet& set) override;
  bool load_basis(const std::string& model, pod::SamplingKind kind,
                  pod::ReducedBasis& out) override;
  void store_basis(const std::string& model, pod::SamplingKind kind,
                   const pod::ReducedBasis& basis) override;
  bool load_net(const std::string& model, pod::SamplingKind kind, surrogate::Mode arch, int n_r,
                int member, surrogate::SurrogateNet& out) override;
  void store_net(const std::string& model, pod::SamplingKind kind, surrogate::Mode arch, int n_r,
                 int member, const surrogate::SurrogateNet& net) override;

 private:
  io::Artifact load_verified(const std::string& rel);
  void store(const std::string& rel, const io::Artifact& artifact,
             const std::vector<std::string>& parents);

  std::string dir_;
  std::string config_sha_;
  std::map<std::string, std::string> digests_;  // rel path -> sha of last touch
};

// Stage commands; errors surface as podnn::Error, mapped by exit_code().
void cmd_simulate(const config::PipelineConfig& cfg);
void cmd_reduce(const config::PipelineConfig& cfg);
void cmd_train(const config::PipelineConfig& cfg);
void cmd_evaluate(const config::PipelineConfig& cfg);
void cmd_report(const config::PipelineConfig& cfg);

// 0 success, 2 config/usage/missing input, 3 numeric failure, 4 provenance.
int exit_code(ErrorKind kind);

std::string report_csv_text(const eval::EvalReport& report);
std::string timing_csv_text(const eval::EvalReport& report);
eval::EvalReport parse_report_csv(const std::string& text);

// Paper-style tables: per model/arch/test, rollout error in percent with the
// DPS column carrying its delta against SPS, e.g. "0.15(-0.23)".
std::string render_tables(const eval::EvalReport& report);

}  // namespace podnn::pipeline
