#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "podnn/common.hpp"

namespace podnn::sampling {

// Role of a parameter inside the sampled configuration. Initial conditions
// cannot vary in time, so dynamic sampling leaves them at their sampled base
// value and modulates only load-type parameters.
enum class ParamRole { InitialCondition, Load };

struct ParameterSpace {
  Eigen::VectorXd lower;  // per-parameter minimum
  Eigen::VectorXd upper;  // per-parameter maximum
  std::vector<std::string> names;
  std::vector<ParamRole> roles;

  int dim() const { return static_cast<int>(lower.size()); }
  void validate() const;
  bool contains(const Eigen::VectorXd& point, double slack = 1e-12) const;
};

enum class SignalKind {
  Constant,       // mu(t) = base for all t
  RectifiedSine,  // mu(t) = (base - floor)*|sin(omega t)| + floor on load params
  Poly2,          // mu(t) = a + b*t + c*(t - d)^2 per parameter (test loads)
};

// A time-dependent parameter configuration mu(t). Values are immutable after
// construction; evaluation is pure.
struct ParameterSignal {
  SignalKind kind = SignalKind::Constant;
  Eigen::VectorXd base;       // sampled configuration mu_i
  Eigen::VectorXd floor_val;  // mu_min of the space (RectifiedSine only)
  double omega = 0.0;         // rad/s (RectifiedSine only)
  // Per-parameter modulation mask: false entries stay at base. Initial
  // condition parameters are never modulated.
  std::vector<bool> modulated;
  // Poly2 coefficients, one row per parameter: value = a + b*t + c*(t-d)^2.
  Eigen::MatrixXd poly;  // n_params x 4, columns (a, b, c, d)
  std::string id;

  int dim() const;
};

ParameterSignal make_constant_signal(const Eigen::VectorXd& base, std::string id = {});
ParameterSignal make_rectified_sine_signal(const Eigen::VectorXd& base,
                                           const Eigen::VectorXd& floor_val, double omega,
                                           const std::vector<bool>& modulated,
                                           std::string id = {});
ParameterSignal make_poly2_signal(const Eigen::MatrixXd& coeffs, std::string id = {});

// Evaluates mu(t). Throws Domain for negative t.
Eigen::VectorXd eval_signal(const ParameterSignal& signal, double t);

enum class SamplingMethod { Halton, Lhs };

const char* sampling_method_name(SamplingMethod m);
const char* signal_kind_name(SignalKind k);

// Radical-inverse Halton point, 1-based index, unscrambled prime bases.
double halton_radical_inverse(std::uint64_t index, std::uint64_t base);

// Static-parameter sampling: n_s constant configurations inside the space.
// Halton ignores the seed (pure sequence); LHS is deterministic given it.
std::vector<ParameterSignal> sample_sps(const ParameterSpace& space, int n_s,
                                        SamplingMethod method, std::uint64_t seed);

// Dynamic-parameter sampling: the same underlying draw, load parameters
// turned into rectified sinusoids (base - floor)*|sin(omega t)| + floor.
std::vector<ParameterSignal> sample_dps(const ParameterSpace& space, int n_s,
                                        SamplingMethod method, std::uint64_t seed, double omega);

// Same, but the frequency is sampled too: log-uniform over [omega_lo, omega_hi]
// via one extra dimension of the same low-discrepancy draw, so trajectories
// excite the model at staggered time scales instead of one shared period.
std::vector<ParameterSignal> sample_dps(const ParameterSpace& space, int n_s,
                                        SamplingMethod method, std::uint64_t seed, double omega_lo,
                                        double omega_hi);

}  // namespace podnn::sampling
