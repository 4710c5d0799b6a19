#pragma once

#include <Eigen/Dense>
#include <string>

#include "podnn/common.hpp"
#include "podnn/sampling.hpp"

// Full-order thermal models: first-order ODE systems
//   C ẏ = K y + R y⁴ + B u(t)   (+ optional quadratic transport term)
// with diagonal positive capacity C, symmetric negative-semidefinite
// conductivity K, quartic radiation coupling R (zero row sums) and load map B.

namespace podnn::fom {

enum class ModelKind { HeatSink, GapRadiation, Synthetic };

const char* model_kind_name(ModelKind kind);

struct FomModel {
  ModelKind kind = ModelKind::HeatSink;
  std::string name;
  int n_state = 0;
  int n_params = 0;                // n_mu; load vector u has this dimension
  Eigen::VectorXd capacity;        // diagonal of C, strictly positive
  Eigen::MatrixXd conductivity;    // K, symmetric, dissipative
  Eigen::MatrixXd radiation;       // R applied to elementwise y^4; zero rows when absent
  Eigen::MatrixXd load_map;        // B, n_state x n_params
  bool has_radiation = false;
  double quad_gain = 0.0;          // synthetic upwind transport strength
  double y_max_hint = 0.0;         // state-magnitude bound for the stability rule
  double t_end = 0.0;              // nominal horizon, s
  sampling::ParameterSpace space;  // training parameter box, internal units

  // Gershgorin spectral-radius estimate of the RHS Jacobian: row bound of
  // C^{-1}K, augmented by 4·|R|·y_max³ and the quadratic term's slope.
  double rate_bound() const;
};

// ẏ = C^{-1}(K y + R y⁴ + B u) plus the quadratic term when enabled.
Eigen::VectorXd rhs(const FomModel& model, const Eigen::VectorXd& y, const Eigen::VectorXd& u);

// d(rhs)/dy at (y, u); used by tests and diagnostics.
Eigen::MatrixXd rhs_jacobian(const FomModel& model, const Eigen::VectorXd& y,
                             const Eigen::VectorXd& u);

// Shape checks, K symmetry, positive capacities, Gershgorin dissipativity of
// C^{-1}K, zero radiation row sums.  Throws InvalidModel.
void validate_model(const FomModel& model);

struct Trajectory {
  Eigen::VectorXd times;   // k+1 entries, uniform step tau, starting at 0
  Eigen::MatrixXd states;  // n_state x (k+1)
  Eigen::MatrixXd params;  // n_params x (k+1); column j is the value held over step j
  std::string signal_id;

  int steps() const { return static_cast<int>(times.size()) - 1; }
  double tau() const { return steps() > 0 ? times[1] - times[0] : 0.0; }
};

// Substep count per save interval of width tau: ceil(tau * rate_bound / 0.5).
int substeps_for(const FomModel& model, double tau);

// Classic RK4 on the sampled-and-held signal: u is evaluated at each stored
// grid point and frozen across that interval's substeps.  substep_multiplier
// scales the stability-rule count (reference runs use 10).
Trajectory integrate_reference(const FomModel& model, const Eigen::VectorXd& y0,
                               const sampling::ParameterSignal& signal, double t_end, int k,
                               int substep_multiplier = 1);

// Builders; material constants are fixed, geometry is the free choice.
FomModel build_heat_sink(int n_chip, int n_fin);
FomModel build_gap_radiation(int n_plate, double emissivity_coeff);
FomModel build_synthetic_nonlinear(int n_state, double nonlinearity_gain);

// Uniform initial state from a sampled parameter point: every cell starts at
// the initial-condition component; load components do not enter y0.
Eigen::VectorXd initial_state(const FomModel& model, const Eigen::VectorXd& params);

}  // namespace podnn::fom
