#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "podnn/common.hpp"
#include "podnn/fom.hpp"
#include "podnn/pod.hpp"
#include "podnn/surrogate.hpp"

// Comparison experiments: SPS vs DPS, direct MLP vs RKNN, constant vs dynamic
// load tests, and the step-size-halving study.

namespace podnn::eval {

struct TestCase {
  std::string model_id;
  double initial_temperature = 0.0;        // internal units
  sampling::ParameterSignal load_signal;   // full parameter vector over time
  double t_end = 0.0;
  int k = 0;
  std::string label;                       // constant_load | dynamic_load
};

// Relative approximation error in reduced coordinates over the prediction
// columns 1..k (the shared initial column is excluded).
pod::RelError e_ann(const Eigen::MatrixXd& y_r_ref, const Eigen::MatrixXd& y_r_pred, int n_s,
                    int k);

// Teacher-forced predictions: column j+1 is one step from the reference
// reduced state at t_j; column 0 copies the reference.
Eigen::MatrixXd one_step_predictions(const surrogate::SurrogateNet& net,
                                     const Eigen::MatrixXd& y_r_ref,
                                     const Eigen::MatrixXd& params_held);

struct CellMetrics {
  pod::RelError e_pod;
  double onestep_mean = 0.0, onestep_std = 0.0;   // unprefixed fractions
  double rollout_mean = 0.0, rollout_std = 0.0;
  double onestep_mean_prefixed = 0.0, rollout_mean_prefixed = 0.0;
  int seeds_total = 0;
  int seeds_used = 0;  // seeds surviving training and rollout
};

struct EvalCell {
  std::string model, sampling, arch, test;
  int n_r = 0;
  bool failed = false;
  std::string error;
  CellMetrics metrics;
  double wall_seconds = 0.0;  // kept out of the deterministic report CSV
};

struct EvalReport {
  std::vector<EvalCell> cells;
};

struct ModelPlan {
  fom::FomModel model;
  int k = 100;
  std::vector<TestCase> tests;
};

struct MatrixSpec {
  std::vector<ModelPlan> models;
  std::vector<pod::SamplingKind> samplings;
  std::vector<surrogate::Mode> archs;
  std::vector<int> n_r_list;
  int n_s = 30;
  sampling::SamplingMethod method = sampling::SamplingMethod::Halton;
  std::uint64_t seed = 42;
  int ensemble = 10;
  int hidden = 32;
  surrogate::Activation activation = surrogate::Activation::Relu;
  surrogate::TrainingConfig training;
  bool center_pod = false;
  int ref_substep_multiplier = 10;
  int jobs = 1;
};

// Deterministic per-net seed derived from the cell coordinates.
std::uint64_t net_seed(std::uint64_t base_seed, const std::string& model,
                       pod::SamplingKind sampling, surrogate::Mode arch, int n_r, int member);

// Optional write-through store so pipeline runs can persist and reuse
// intermediate artifacts; the default in-memory run ignores it.
class MatrixStore {
 public:
  virtual ~MatrixStore() = default;
  virtual bool load_snapshots(const std::string& model, pod::SamplingKind kind,
                              pod::SnapshotSet& out) {
    (void)model, (void)kind, (void)out;
    return false;
  }
  virtual void store_snapshots(const std::string& model, pod::SamplingKind kind,
                               const pod::SnapshotSet& set) {
    (void)model, (void)kind, (void)set;
  }
  virtual bool load_basis(const std::string& model, pod::SamplingKind kind,
                          pod::ReducedBasis& out) {
    (void)model, (void)kind, (void)out;
    return false;
  }
  virtual void store_basis(const std::string& model, pod::SamplingKind kind,
                           const pod::ReducedBasis& basis) {
    (void)model, (void)kind, (void)basis;
  }
  virtual bool load_net(const std::string& model, pod::SamplingKind kind, surrogate::Mode arch,
                        int n_r, int member, surrogate::SurrogateNet& out) {
    (void)model, (void)kind, (void)arch, (void)n_r, (void)member, (void)out;
    return false;
  }
  virtual void store_net(const std::string& model, pod::SamplingKind kind, surrogate::Mode arch,
                         int n_r, int member, const surrogate::SurrogateNet& net) {
    (void)model, (void)kind, (void)arch, (void)n_r, (void)member, (void)net;
  }
};

// Draws n_s parameter signals and integrates the reference trajectories.
// With tolerant set, a trajectory that fails to integrate is skipped (with a
// stderr note) instead of aborting the whole set.
pod::SnapshotSet simulate_snapshots(const fom::FomModel& model, int k, pod::SamplingKind kind,
                                    int n_s, sampling::SamplingMethod method, std::uint64_t seed,
                                    bool tolerant = false);

// Snapshot generation, POD, ensemble training, and both tests per model;
// per-cell failures are recorded and the run continues.
EvalReport run_matrix(const MatrixSpec& spec, MatrixStore* store = nullptr);

// High-accuracy reference for a test case (stability-rule substeps x multiplier).
fom::Trajectory test_reference(const fom::FomModel& model, const TestCase& test,
                               int substep_multiplier);

struct StepSizeRow {
  double factor = 1.0;
  double e_rknn = 0.0;         // RKNN re-stepped at factor*tau
  double e_direct_tau = 0.0;   // tau-augmented direct net fed factor*tau
  double e_direct_naive = 0.0; // plain direct net re-applied on the finer grid
};

std::vector<StepSizeRow> step_size_study(const surrogate::SurrogateNet& net_rknn,
                                         const surrogate::SurrogateNet& net_direct_tau,
                                         const surrogate::SurrogateNet& net_direct_plain,
                                         const pod::ReducedBasis& basis,
                                         const fom::FomModel& model, const TestCase& test,
                                         const std::vector<double>& factors,
                                         int ref_substep_multiplier = 10);

struct SpsDpsRow {
  std::string model, arch, test;
  double mean_difference = 0.0;  // mean over N_r of (E_sps - E_dps), rollout
  int dps_wins = 0;
  int sps_wins = 0;
  int compared = 0;
  bool partial = false;  // some requested cells were missing or failed
};

std::vector<SpsDpsRow> sps_vs_dps_summary(const EvalReport& report);

}  // namespace podnn::eval
