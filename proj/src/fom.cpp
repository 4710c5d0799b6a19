#include "podnn/fom.hpp"

#include <cmath>

namespace podnn::fom {

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::HeatSink: return "heat_sink";
    case ModelKind::GapRadiation: return "gap_radiation";
    case ModelKind::Synthetic: return "synthetic";
  }
  return "unknown";
}

double FomModel::rate_bound() const {
  double bound = 0.0;
  const double y3 = y_max_hint * y_max_hint * y_max_hint;
  for (int i = 0; i < n_state; ++i) {
    double row = conductivity.row(i).cwiseAbs().sum();
    if (has_radiation) row += 4.0 * y3 * radiation.row(i).cwiseAbs().sum();
    bound = std::max(bound, row / capacity[i]);
  }
  // Upwind quadratic term: |d q_i/d y_i| + |d q_i/d y_{i-1}| <= 3 g y_max.
  if (quad_gain != 0.0) bound += 3.0 * std::abs(quad_gain) * y_max_hint;
  return bound;
}

namespace {

// -g y_i (y_i - y_{i-1}) with upstream boundary value 0.
void add_quad_term(const FomModel& model, const Eigen::VectorXd& y, Eigen::VectorXd& acc) {
  const double g = model.quad_gain;
  if (g == 0.0) return;
  acc[0] -= g * y[0] * y[0];
  for (int i = 1; i < model.n_state; ++i) acc[i] -= g * y[i] * (y[i] - y[i - 1]);
}

}  // namespace

Eigen::VectorXd rhs(const FomModel& model, const Eigen::VectorXd& y, const Eigen::VectorXd& u) {
  if (y.size() != model.n_state) fail(ErrorKind::Shape, "rhs: state dimension mismatch");
  if (u.size() != model.n_params) fail(ErrorKind::Shape, "rhs: load dimension mismatch");
  if (!all_finite(y) || !all_finite(u)) fail(ErrorKind::NumericInput, "rhs: non-finite input");
  Eigen::VectorXd acc = model.conductivity * y + model.load_map * u;
  if (model.has_radiation) acc.noalias() += model.radiation * y.array().pow(4).matrix();
  add_quad_term(model, y, acc);
  return acc.array() / model.capacity.array();
}

Eigen::MatrixXd rhs_jacobian(const FomModel& model, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& u) {
  if (y.size() != model.n_state) fail(ErrorKind::Shape, "rhs_jacobian: state dimension mismatch");
  (void)u;  // RHS is affine in u
  Eigen::MatrixXd jac = model.conductivity;
  if (model.has_radiation) {
    const Eigen::VectorXd y3 = 4.0 * y.array().pow(3);
    jac += model.radiation * y3.asDiagonal();
  }
  if (model.quad_gain != 0.0) {
    const double g = model.quad_gain;
    jac(0, 0) -= g * 2.0 * y[0];
    for (int i = 1; i < model.n_state; ++i) {
      jac(i, i) -= g * (2.0 * y[i] - y[i - 1]);
      jac(i, i - 1) += g * y[i];
    }
  }
  return model.capacity.cwiseInverse().asDiagonal() * jac;
}

void validate_model(const FomModel& model) {
  const int n = model.n_state;
  if (n < 1) fail(ErrorKind::InvalidModel, "model has no state");
  if (model.capacity.size() != n || model.conductivity.rows() != n ||
      model.conductivity.cols() != n || model.load_map.rows() != n)
    fail(ErrorKind::InvalidModel, "model operator shapes inconsistent");
  if (model.load_map.cols() != model.n_params)
    fail(ErrorKind::InvalidModel, "load map width != n_params");
  if ((model.capacity.array() <= 0.0).any())
    fail(ErrorKind::InvalidModel, "capacity entries must be strictly positive");
  const double kscale = std::max(1.0, model.conductivity.cwiseAbs().maxCoeff());
  if ((model.conductivity - model.conductivity.transpose()).cwiseAbs().maxCoeff() >
      1e-12 * kscale)
    fail(ErrorKind::InvalidModel, "conductivity operator is not symmetric");
  // Gershgorin: every disc of C^{-1}K must sit in the closed left half plane.
  for (int i = 0; i < n; ++i) {
    const double center = model.conductivity(i, i) / model.capacity[i];
    double radius = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) radius += std::abs(model.conductivity(i, j)) / model.capacity[i];
    if (center + radius > 1e-10 * std::max(1.0, std::abs(center)))
      fail(ErrorKind::InvalidModel,
           "dissipativity check failed at row " + std::to_string(i));
  }
  if (model.has_radiation) {
    if (model.radiation.rows() != n || model.radiation.cols() != n)
      fail(ErrorKind::InvalidModel, "radiation operator shape mismatch");
    const double rscale = std::max(model.radiation.cwiseAbs().maxCoeff(), 1e-300);
    for (int i = 0; i < n; ++i)
      if (std::abs(model.radiation.row(i).sum()) > 1e-12 * rscale * n)
        fail(ErrorKind::InvalidModel, "radiation row " + std::to_string(i) + " has net generation");
  }
  model.space.validate();
  if (model.space.dim() != model.n_params)
    fail(ErrorKind::InvalidModel, "parameter space dimension != n_params");
}

int substeps_for(const FomModel& model, double tau) {
  if (!(tau > 0.0)) fail(ErrorKind::Config, "substeps_for: tau must be positive");
  const double m = std::ceil(tau * model.rate_bound() / 0.5);
  return std::max(1, static_cast<int>(m));
}

Trajectory integrate_reference(const FomModel& model, const Eigen::VectorXd& y0,
                               const sampling::ParameterSignal& signal, double t_end, int k,
                               int substep_multiplier) {
  if (k < 1) fail(ErrorKind::Config, "integrate_reference: need k >= 1 steps");
  if (!(t_end > 0.0)) fail(ErrorKind::Config, "integrate_reference: t_end must be positive");
  if (substep_multiplier < 1) fail(ErrorKind::Config, "substep multiplier must be >= 1");
  if (y0.size() != model.n_state)
    fail(ErrorKind::Shape, "integrate_reference: initial state dimension mismatch");
  if (signal.dim() != model.n_params)
    fail(ErrorKind::Shape, "integrate_reference: signal dimension mismatch");

  const double tau = t_end / k;
  const int m = substeps_for(model, tau) * substep_multiplier;
  const double dt = tau / m;
  constexpr double kOverflowGuard = 1e9;

  Trajectory traj;
  traj.signal_id = signal.id;
  traj.times = Eigen::VectorXd::LinSpaced(k + 1, 0.0, t_end);
  traj.states.resize(model.n_state, k + 1);
  traj.params.resize(model.n_params, k + 1);
  traj.states.col(0) = y0;

  Eigen::VectorXd y = y0;
  for (int j = 0; j < k; ++j) {
    const Eigen::VectorXd u = sampling::eval_signal(signal, traj.times[j]);
    traj.params.col(j) = u;
    for (int s = 0; s < m; ++s) {
      const Eigen::VectorXd k1 = rhs(model, y, u);
      const Eigen::VectorXd k2 = rhs(model, y + 0.5 * dt * k1, u);
      const Eigen::VectorXd k3 = rhs(model, y + 0.5 * dt * k2, u);
      const Eigen::VectorXd k4 = rhs(model, y + dt * k3, u);
      y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!all_finite(y) || y.cwiseAbs().maxCoeff() > kOverflowGuard)
        fail(ErrorKind::Stiffness, "integration blew up at step " + std::to_string(j) +
                                       " substep " + std::to_string(s));
    }
    traj.states.col(j + 1) = y;
  }
  traj.params.col(k) = sampling::eval_signal(signal, t_end);
  return traj;
}

namespace {

constexpr double kCellDx = 0.002;        // m, through-chain cell size
constexpr double kSinkArea = 1e-4;       // m^2, heat-sink chain cross-section
constexpr double kPlateArea = 0.01;      // m^2, radiating plate face
constexpr double kTailConductance = 0.5; // W/K, convective tail of the sink
constexpr double kSinkLoadScale = 500.0; // W per load unit, spread over the chip

// Series conductance of two half cells with different conductivities.
double interface_conductance(double k_left, double k_right, double area, double dx) {
  return 2.0 * k_left * k_right / (k_left + k_right) * area / dx;
}

void add_link(Eigen::MatrixXd& K, int i, int j, double g) {
  K(i, i) -= g;
  K(j, j) -= g;
  K(i, j) += g;
  K(j, i) += g;
}

}  // namespace

FomModel build_heat_sink(int n_chip, int n_fin) {
  if (n_chip < 2 || n_fin < 2)
    fail(ErrorKind::InvalidModel, "heat sink needs at least 2 cells per segment");
  const int n = n_chip + n_fin;
  FomModel m;
  m.kind = ModelKind::HeatSink;
  m.name = "heat_sink";
  m.n_state = n;
  m.n_params = 2;
  m.t_end = 500.0;
  m.y_max_hint = 700.0;

  // Copper chip cells, aluminum fin cells; temperatures relative to ambient.
  const double cell_vol = kSinkArea * kCellDx;
  const double c_cu = 8960.0 * 385.0 * cell_vol;
  const double c_al = 2700.0 * 963.0 * cell_vol;
  m.capacity.resize(n);
  m.capacity.head(n_chip).setConstant(c_cu);
  m.capacity.tail(n_fin).setConstant(c_al);

  const double g_cu = 387.0 * kSinkArea / kCellDx;
  const double g_al = 151.0 * kSinkArea / kCellDx;
  const double g_if = interface_conductance(387.0, 151.0, kSinkArea, kCellDx);
  m.conductivity = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) {
    const double g = (i + 1 < n_chip) ? g_cu : (i + 1 == n_chip ? g_if : g_al);
    add_link(m.conductivity, i, i + 1, g);
  }
  m.conductivity(n - 1, n - 1) -= kTailConductance;  // convective tail node

  m.radiation = Eigen::MatrixXd::Zero(n, n);
  m.load_map = Eigen::MatrixXd::Zero(n, 2);
  for (int i = 0; i < n_chip; ++i) m.load_map(i, 1) = kSinkLoadScale / n_chip;

  m.space.lower = Eigen::Vector2d(20.0, 0.05);
  m.space.upper = Eigen::Vector2d(50.0, 0.15);
  m.space.names = {"t0", "load"};
  m.space.roles = {sampling::ParamRole::InitialCondition, sampling::ParamRole::Load};
  validate_model(m);
  return m;
}

FomModel build_gap_radiation(int n_plate, double emissivity_coeff) {
  if (n_plate < 2) fail(ErrorKind::InvalidModel, "gap radiation needs at least 2 cells per plate");
  if (!(emissivity_coeff > 0.0))
    fail(ErrorKind::InvalidModel, "gap radiation needs a positive emissivity coefficient");
  const int n = 2 * n_plate;
  FomModel m;
  m.kind = ModelKind::GapRadiation;
  m.name = "gap_radiation";
  m.n_state = n;
  m.n_params = 2;
  m.t_end = 3600.0;
  m.y_max_hint = 1000.0;

  // Two identical steel plates, each numbered from outer face toward the gap:
  // plate a = cells [0, p), plate b = cells [p, 2p); gap couples p-1 and 2p-1.
  const double cell_vol = kPlateArea * kCellDx;
  const double c_st = 7850.0 * 434.0 * cell_vol;
  m.capacity = Eigen::VectorXd::Constant(n, c_st);

  const double g_st = 14.0 * kPlateArea / kCellDx;
  m.conductivity = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n_plate; ++i) {
    add_link(m.conductivity, i, i + 1, g_st);
    add_link(m.conductivity, n_plate + i, n_plate + i + 1, g_st);
  }

  m.radiation = Eigen::MatrixXd::Zero(n, n);
  const int ga = n_plate - 1, gb = n - 1;
  m.radiation(ga, ga) = -emissivity_coeff;
  m.radiation(ga, gb) = emissivity_coeff;
  m.radiation(gb, gb) = -emissivity_coeff;
  m.radiation(gb, ga) = emissivity_coeff;
  m.has_radiation = true;

  m.load_map = Eigen::MatrixXd::Zero(n, 2);
  m.load_map(0, 1) = 1.0;  // load units are W on plate a's outer face

  m.space.lower = Eigen::Vector2d(20.0 + kCelsiusToKelvin, 40.0);
  m.space.upper = Eigen::Vector2d(300.0 + kCelsiusToKelvin, 60.0);
  m.space.names = {"t0", "load"};
  m.space.roles = {sampling::ParamRole::InitialCondition, sampling::ParamRole::Load};
  validate_model(m);
  return m;
}

FomModel build_synthetic_nonlinear(int n_state, double nonlinearity_gain) {
  if (n_state < 3) fail(ErrorKind::InvalidModel, "synthetic model needs at least 3 cells");
  FomModel m;
  m.kind = ModelKind::Synthetic;
  m.name = "synthetic";
  m.n_state = n_state;
  m.n_params = 2;
  m.t_end = 50.0;
  m.y_max_hint = 200.0;
  m.quad_gain = nonlinearity_gain;

  m.capacity = Eigen::VectorXd::Ones(n_state);
  const double g = 25.0;
  m.conductivity = Eigen::MatrixXd::Zero(n_state, n_state);
  for (int i = 0; i + 1 < n_state; ++i) add_link(m.conductivity, i, i + 1, g);
  m.conductivity(0, 0) -= 1.0;  // leaks at both ends anchor the equilibrium
  m.conductivity(n_state - 1, n_state - 1) -= 1.0;

  m.radiation = Eigen::MatrixXd::Zero(n_state, n_state);
  m.load_map = Eigen::MatrixXd::Zero(n_state, 2);
  m.load_map(0, 1) = 1.0;

  m.space.lower = Eigen::Vector2d(20.0, 80.0);
  m.space.upper = Eigen::Vector2d(50.0, 120.0);
  m.space.names = {"y0", "load"};
  m.space.roles = {sampling::ParamRole::InitialCondition, sampling::ParamRole::Load};
  validate_model(m);
  return m;
}

Eigen::VectorXd initial_state(const FomModel& model, const Eigen::VectorXd& params) {
  if (params.size() != model.n_params) fail(ErrorKind::Shape, "initial_state: size mismatch");
  double t0 = 0.0;
  bool found = false;
  for (int d = 0; d < model.n_params; ++d) {
    if (model.space.roles[static_cast<std::size_t>(d)] == sampling::ParamRole::InitialCondition) {
      t0 = params[d];
      found = true;
      break;
    }
  }
  if (!found) fail(ErrorKind::Config, "model has no initial-condition parameter");
  return Eigen::VectorXd::Constant(model.n_state, t0);
}

}  // namespace podnn::fom
