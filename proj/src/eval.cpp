#include "podnn/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <thread>

namespace podnn::eval {

pod::RelError e_ann(const Eigen::MatrixXd& y_r_ref, const Eigen::MatrixXd& y_r_pred, int n_s,
                    int k) {
  if (y_r_ref.rows() != y_r_pred.rows() || y_r_ref.cols() != y_r_pred.cols())
    fail(ErrorKind::Shape, "e_ann: grid mismatch");
  if (y_r_ref.cols() != k + 1) fail(ErrorKind::Shape, "e_ann: expected k+1 columns");
  if (n_s < 1 || k < 1) fail(ErrorKind::Config, "e_ann: bad n_s or k");
  const double ref_norm = y_r_ref.rightCols(k).norm();
  if (ref_norm <= 0.0) fail(ErrorKind::DivisionGuard, "e_ann: zero reference");
  pod::RelError e;
  e.unprefixed = (y_r_ref.rightCols(k) - y_r_pred.rightCols(k)).norm() / ref_norm;
  e.prefixed = e.unprefixed / (static_cast<double>(n_s) * static_cast<double>(k));
  return e;
}

Eigen::MatrixXd one_step_predictions(const surrogate::SurrogateNet& net,
                                     const Eigen::MatrixXd& y_r_ref,
                                     const Eigen::MatrixXd& params_held) {
  const int k = static_cast<int>(y_r_ref.cols()) - 1;
  if (k < 1) fail(ErrorKind::Shape, "one_step_predictions: need at least one step");
  if (params_held.cols() != y_r_ref.cols())
    fail(ErrorKind::Shape, "one_step_predictions: parameter grid mismatch");
  Eigen::MatrixXd pred(y_r_ref.rows(), k + 1);
  pred.col(0) = y_r_ref.col(0);
  for (int j = 0; j < k; ++j) {
    const Eigen::VectorXd y = y_r_ref.col(j);
    const Eigen::VectorXd mu = params_held.col(j);
    if (net.mode == surrogate::Mode::Rknn)
      pred.col(j + 1) = surrogate::forward_rknn(net, y, mu);
    else if (net.tau_input)
      pred.col(j + 1) = surrogate::forward_direct_with_tau(net, y, mu, net.tau_train);
    else
      pred.col(j + 1) = surrogate::forward_direct(net, y, mu);
  }
  return pred;
}

std::uint64_t net_seed(std::uint64_t base_seed, const std::string& model,
                       pod::SamplingKind sampling, surrogate::Mode arch, int n_r, int member) {
  const std::string key = "net/" + model + "/" + pod::sampling_kind_name(sampling) + "/" +
                          surrogate::mode_name(arch) + "/nr" + std::to_string(n_r) + "/m" +
                          std::to_string(member);
  return fnv1a64(key) ^ (base_seed * 0x9e3779b97f4a7c15ULL);
}

fom::Trajectory test_reference(const fom::FomModel& model, const TestCase& test,
                               int substep_multiplier) {
  const Eigen::VectorXd y0 =
      Eigen::VectorXd::Constant(model.n_state, test.initial_temperature);
  return fom::integrate_reference(model, y0, test.load_signal, test.t_end, test.k,
                                  substep_multiplier);
}

namespace {

void check_test_in_space(const fom::FomModel& model, const TestCase& test) {
  for (int i = 0; i <= 100; ++i) {
    const double t = test.t_end * i / 100.0;
    const Eigen::VectorXd mu = sampling::eval_signal(test.load_signal, t);
    if (!model.space.contains(mu, 1e-9))
      fail(ErrorKind::Config, "test '" + test.label + "' leaves the parameter space of " +
                                  model.name + " at t=" + std::to_string(t));
  }
}

struct SeedOutcome {
  bool trained = false;
  bool diverged = false;
  std::string error;
  surrogate::SurrogateNet net;
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (const double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

pod::SnapshotSet simulate_snapshots(const fom::FomModel& model, int k, pod::SamplingKind kind,
                                    int n_s, sampling::SamplingMethod method, std::uint64_t seed,
                                    bool tolerant) {
  if (k < 1 || n_s < 1) fail(ErrorKind::Config, "simulate_snapshots: bad k or n_s");
  pod::SnapshotSet snaps;
  snaps.sampling_kind = kind;
  // Excitation band: 1 to 8 full sine periods over the horizon, i.e. 2 to 16
  // load humps.  A single shared frequency leaves the training loads nearly
  // periodic in the snapshot grid; spreading the band breaks that up.
  double lo_mult = 2.0, hi_mult = 16.0;
  if (const char* b = std::getenv("PODNN_BAND")) std::sscanf(b, "%lf,%lf", &lo_mult, &hi_mult);
  const double pi_t = std::acos(-1.0) / model.t_end;
  const auto signals = (kind == pod::SamplingKind::Sps)
                           ? sampling::sample_sps(model.space, n_s, method, seed)
                           : sampling::sample_dps(model.space, n_s, method, seed, lo_mult * pi_t,
                                                  hi_mult * pi_t);
  for (const auto& signal : signals) {
    const Eigen::VectorXd y0 = fom::initial_state(model, signal.base);
    try {
      snaps.trajectories.push_back(
          fom::integrate_reference(model, y0, signal, model.t_end, k, 1));
      snaps.signals.push_back(signal);
    } catch (const Error& e) {
      if (!tolerant) throw;
      std::cerr << "warning: skipping trajectory " << signal.id << ": " << e.what() << "\n";
    }
  }
  if (snaps.trajectories.empty())
    fail(ErrorKind::NumericInput, "simulate_snapshots: every trajectory failed");
  return snaps;
}

EvalReport run_matrix(const MatrixSpec& spec, MatrixStore* store) {
  if (spec.models.empty() || spec.samplings.empty() || spec.archs.empty() ||
      spec.n_r_list.empty())
    fail(ErrorKind::Config, "run_matrix: empty matrix dimension");
  if (spec.n_s < 1 || spec.ensemble < 1) fail(ErrorKind::Config, "run_matrix: bad counts");

  EvalReport report;
  for (const auto& plan : spec.models) {
    fom::validate_model(plan.model);
    if (plan.tests.empty()) fail(ErrorKind::Config, "run_matrix: model without tests");
    for (const auto& test : plan.tests) check_test_in_space(plan.model, test);

    // Ground truth per test, shared by every cell of this model.
    std::vector<fom::Trajectory> refs;
    refs.reserve(plan.tests.size());
    for (const auto& test : plan.tests)
      refs.push_back(test_reference(plan.model, test, spec.ref_substep_multiplier));

    for (const auto kind : spec.samplings) {
      std::string stage_error;
      pod::SnapshotSet snaps;
      pod::ReducedBasis basis_full;
      try {
        if (store == nullptr || !store->load_snapshots(plan.model.name, kind, snaps)) {
          snaps = simulate_snapshots(plan.model, plan.k, kind, spec.n_s, spec.method, spec.seed);
          if (store != nullptr) store->store_snapshots(plan.model.name, kind, snaps);
        }
        if (store == nullptr || !store->load_basis(plan.model.name, kind, basis_full)) {
          const Eigen::MatrixXd y = pod::assemble_snapshot_matrix(snaps);
          basis_full = pod::compute_pod(
              y, static_cast<int>(std::min(y.rows(), y.cols())), spec.center_pod);
          if (store != nullptr) store->store_basis(plan.model.name, kind, basis_full);
        }
      } catch (const Error& e) {
        stage_error = std::string(error_kind_name(e.kind())) + ": " + e.what();
      }

      for (const int n_r : spec.n_r_list) {
        for (const auto arch : spec.archs) {
          const auto group_t0 = std::chrono::steady_clock::now();
          std::vector<SeedOutcome> members(static_cast<std::size_t>(spec.ensemble));
          pod::ReducedBasis basis;
          std::string group_error = stage_error;

          if (group_error.empty()) {
            try {
              basis = pod::truncate(basis_full, n_r);
              const surrogate::TransitionSet data =
                  surrogate::build_transitions(basis, snaps.trajectories);

              // Reuse stored nets, then train the missing members (in
              // parallel when jobs > 1; training is pure per member).
              std::vector<int> missing;
              for (int m = 0; m < spec.ensemble; ++m) {
                auto& slot = members[static_cast<std::size_t>(m)];
                if (store != nullptr &&
                    store->load_net(plan.model.name, kind, arch, basis.n_r, m, slot.net)) {
                  slot.trained = true;
                  slot.diverged = slot.net.diverged;
                } else {
                  missing.push_back(m);
                }
              }
              auto train_one = [&](int m) {
                auto& slot = members[static_cast<std::size_t>(m)];
                try {
                  surrogate::TrainingConfig tc = spec.training;
                  tc.seed = net_seed(spec.seed, plan.model.name, kind, arch, basis.n_r, m);
                  slot.net = surrogate::train_surrogate(arch, basis.n_r, plan.model.n_params,
                                                        spec.hidden, spec.activation, data, tc);
                  slot.trained = true;
                  slot.diverged = slot.net.diverged;
                } catch (const Error& e) {
                  slot.error = std::string(error_kind_name(e.kind())) + ": " + e.what();
                }
              };
              if (spec.jobs <= 1 || missing.size() <= 1) {
                for (const int m : missing) train_one(m);
              } else {
                const int width = std::min<int>(spec.jobs, static_cast<int>(missing.size()));
                std::vector<std::thread> pool;
                for (int w = 0; w < width; ++w) pool.emplace_back([&, w]() {
                  for (std::size_t i = static_cast<std::size_t>(w); i < missing.size();
                       i += static_cast<std::size_t>(width))
                    train_one(missing[i]);
                });
                for (auto& t : pool) t.join();
              }
              if (store != nullptr)
                for (const int m : missing) {
                  const auto& slot = members[static_cast<std::size_t>(m)];
                  if (slot.trained)
                    store->store_net(plan.model.name, kind, arch, basis.n_r, m, slot.net);
                }
              for (const auto& slot : members)
                if (!slot.error.empty()) group_error = slot.error;
            } catch (const Error& e) {
              group_error = std::string(error_kind_name(e.kind())) + ": " + e.what();
            }
          }
          const double train_seconds = seconds_since(group_t0);

          for (std::size_t ti = 0; ti < plan.tests.size(); ++ti) {
            const auto& test = plan.tests[ti];
            const auto cell_t0 = std::chrono::steady_clock::now();
            EvalCell cell;
            cell.model = plan.model.name;
            cell.sampling = pod::sampling_kind_name(kind);
            cell.arch = surrogate::mode_name(arch);
            cell.n_r = n_r;
            cell.test = test.label;
            if (!group_error.empty()) {
              cell.failed = true;
              cell.error = group_error;
              report.cells.push_back(cell);
              continue;
            }
            try {
              const auto& ref = refs[ti];
              const Eigen::MatrixXd y_r_ref = pod::project(basis, ref.states);
              cell.metrics.e_pod = pod::reprojection_error(basis, ref.states, 1, test.k);
              cell.metrics.seeds_total = spec.ensemble;

              std::vector<double> ones, rolls, ones_pref, rolls_pref;
              for (const auto& slot : members) {
                if (!slot.trained || slot.diverged) continue;
                try {
                  const Eigen::MatrixXd pred1 =
                      one_step_predictions(slot.net, y_r_ref, ref.params);
                  const pod::RelError e1 = e_ann(y_r_ref, pred1, 1, test.k);
                  const Eigen::MatrixXd predr = surrogate::rollout(
                      slot.net, y_r_ref.col(0), test.load_signal, test.t_end, test.k);
                  const pod::RelError er = e_ann(y_r_ref, predr, 1, test.k);
                  ones.push_back(e1.unprefixed);
                  rolls.push_back(er.unprefixed);
                  ones_pref.push_back(e1.prefixed);
                  rolls_pref.push_back(er.prefixed);
                } catch (const Error& e) {
                  if (e.kind() != ErrorKind::RolloutBlowUp) throw;
                }
              }
              cell.metrics.seeds_used = static_cast<int>(rolls.size());
              if (rolls.empty())
                fail(ErrorKind::TrainingDivergence,
                     "no ensemble member survived training and rollout");
              cell.metrics.onestep_mean = mean_of(ones);
              cell.metrics.onestep_std = pop_std(ones, cell.metrics.onestep_mean);
              cell.metrics.rollout_mean = mean_of(rolls);
              cell.metrics.rollout_std = pop_std(rolls, cell.metrics.rollout_mean);
              cell.metrics.onestep_mean_prefixed = mean_of(ones_pref);
              cell.metrics.rollout_mean_prefixed = mean_of(rolls_pref);
            } catch (const Error& e) {
              cell.failed = true;
              cell.error = std::string(error_kind_name(e.kind())) + ": " + e.what();
            }
            // Training is shared by this group's tests; split it evenly.
            cell.wall_seconds =
                seconds_since(cell_t0) + train_seconds / static_cast<double>(plan.tests.size());
            report.cells.push_back(cell);
          }
        }
      }
    }
  }
  return report;
}

std::vector<StepSizeRow> step_size_study(const surrogate::SurrogateNet& net_rknn,
                                         const surrogate::SurrogateNet& net_direct_tau,
                                         const surrogate::SurrogateNet& net_direct_plain,
                                         const pod::ReducedBasis& basis,
                                         const fom::FomModel& model, const TestCase& test,
                                         const std::vector<double>& factors,
                                         int ref_substep_multiplier) {
  if (net_rknn.mode != surrogate::Mode::Rknn || !net_direct_tau.tau_input ||
      net_direct_plain.mode != surrogate::Mode::Direct || net_direct_plain.tau_input)
    fail(ErrorKind::Usage, "step_size_study: nets do not match their roles");
  std::vector<StepSizeRow> rows;
  for (const double f : factors) {
    if (!(f > 0.0)) fail(ErrorKind::Config, "step_size_study: factor must be positive");
    const double k_exact = static_cast<double>(test.k) / f;
    const auto k_f = static_cast<int>(std::llround(k_exact));
    if (std::abs(k_exact - k_f) > 1e-9 || k_f < 1)
      fail(ErrorKind::Config, "step_size_study: factor does not divide the grid");

    TestCase scaled = test;
    scaled.k = k_f;
    const fom::Trajectory ref = test_reference(model, scaled, ref_substep_multiplier);
    const Eigen::MatrixXd y_r_ref = pod::project(basis, ref.states);
    const double tau_f = f * net_rknn.tau_train;

    StepSizeRow row;
    row.factor = f;
    row.e_rknn = e_ann(y_r_ref,
                       surrogate::rollout(net_rknn, y_r_ref.col(0), test.load_signal,
                                          test.t_end, k_f, tau_f),
                       1, k_f)
                     .unprefixed;
    row.e_direct_tau = e_ann(y_r_ref,
                             surrogate::rollout(net_direct_tau, y_r_ref.col(0),
                                                test.load_signal, test.t_end, k_f,
                                                f * net_direct_tau.tau_train),
                             1, k_f)
                           .unprefixed;
    row.e_direct_naive = e_ann(y_r_ref,
                               surrogate::rollout(net_direct_plain, y_r_ref.col(0),
                                                  test.load_signal, test.t_end, k_f),
                               1, k_f)
                             .unprefixed;
    rows.push_back(row);
  }
  return rows;
}

std::vector<SpsDpsRow> sps_vs_dps_summary(const EvalReport& report) {
  // (model, arch, test) -> n_r -> (sps, dps) rollout means
  std::map<std::tuple<std::string, std::string, std::string>,
           std::map<int, std::pair<std::optional<double>, std::optional<double>>>>
      groups;
  bool any_sps = false, any_dps = false;
  for (const auto& cell : report.cells) {
    if (cell.sampling == "sps") any_sps = true;
    if (cell.sampling == "dps") any_dps = true;
    auto& slot = groups[{cell.model, cell.arch, cell.test}][cell.n_r];
    if (cell.failed) continue;
    if (cell.sampling == "sps") slot.first = cell.metrics.rollout_mean;
    if (cell.sampling == "dps") slot.second = cell.metrics.rollout_mean;
  }
  if (!any_sps || !any_dps)
    fail(ErrorKind::MissingInput, "sps_vs_dps_summary: report lacks one sampling kind");

  std::vector<SpsDpsRow> rows;
  for (const auto& [key, by_nr] : groups) {
    SpsDpsRow row;
    row.model = std::get<0>(key);
    row.arch = std::get<1>(key);
    row.test = std::get<2>(key);
    double sum = 0.0;
    for (const auto& [n_r, pair] : by_nr) {
      (void)n_r;
      if (!pair.first.has_value() || !pair.second.has_value()) {
        row.partial = true;
        continue;
      }
      const double sps = *pair.first, dps = *pair.second;
      sum += sps - dps;
      ++row.compared;
      if (dps < sps) ++row.dps_wins;
      else if (sps < dps) ++row.sps_wins;
    }
    if (row.compared > 0) row.mean_difference = sum / row.compared;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace podnn::eval
