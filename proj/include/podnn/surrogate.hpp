#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "podnn/common.hpp"
#include "podnn/pod.hpp"

// Reduced-space neural surrogates: a direct one-step MLP and an RKNN whose
// shared-weight core approximates the reduced RHS and is composed four times
// per step inside the classic RK4 stencil.  All forward/backward arithmetic
// is hand-written; Eigen supplies the matrix products.

namespace podnn::surrogate {

enum class Activation { Relu, LeakyRelu, Tanh };
enum class Mode { Direct, Rknn };

const char* activation_name(Activation a);
const char* mode_name(Mode m);
Activation activation_from_name(const std::string& name);
Mode mode_from_name(const std::string& name);

// Fixed shape: input, two hidden layers, linear output.
struct MlpCore {
  std::vector<Eigen::MatrixXd> weights;  // [h0 x in, h1 x h0, out x h1]
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::Relu;
  double leaky_alpha = 0.01;

  int n_in() const { return static_cast<int>(weights.front().cols()); }
  int n_out() const { return static_cast<int>(weights.back().rows()); }
  std::size_t parameter_count() const;
};

MlpCore make_core(int n_in, int hidden, int n_out, Activation act, std::uint64_t seed);

// Batched forward: columns are samples.
Eigen::MatrixXd core_forward(const MlpCore& core, const Eigen::MatrixXd& x);

struct CoreCache {
  Eigen::MatrixXd x;                 // input batch
  std::vector<Eigen::MatrixXd> act;  // hidden post-activations
};

struct CoreGrads {
  std::vector<Eigen::MatrixXd> d_weights;
  std::vector<Eigen::VectorXd> d_biases;

  static CoreGrads zeros_like(const MlpCore& core);
  void accumulate(const CoreGrads& other);
};

Eigen::MatrixXd core_forward_cached(const MlpCore& core, const Eigen::MatrixXd& x,
                                    CoreCache& cache);

// Reverse pass: grad_out is dL/d(output); accumulates weight/bias gradients
// into grads and returns dL/d(input).
Eigen::MatrixXd core_backward(const MlpCore& core, const CoreCache& cache,
                              const Eigen::MatrixXd& grad_out, CoreGrads& grads);

// Per-feature affine statistics; scales guarded away from zero.
struct Normalizer {
  Eigen::VectorXd state_mean, state_scale;  // reduced-state features
  Eigen::VectorXd param_mean, param_scale;  // parameter features
  double tau_mean = 0.0, tau_scale = 1.0;   // tau feature (tau-augmented nets)

  Eigen::MatrixXd norm_state(const Eigen::MatrixXd& y) const;
  Eigen::MatrixXd denorm_state(const Eigen::MatrixXd& z) const;
  Eigen::MatrixXd norm_param(const Eigen::MatrixXd& mu) const;
  double norm_tau(double tau) const { return (tau - tau_mean) / tau_scale; }
  void validate() const;
};

struct TrainingConfig {
  int epochs = 2000;
  int batch_size = 0;  // 0 = full batch
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

// One-step transition pairs in physical reduced coordinates; tau_feature
// carries the per-pair step size for tau-augmented training (otherwise all
// entries equal tau).
struct TransitionSet {
  Eigen::MatrixXd y_in;    // n_r x P
  Eigen::MatrixXd mu;      // n_mu x P
  Eigen::MatrixXd y_out;   // n_r x P
  Eigen::VectorXd tau_of;  // P
  double tau = 0.0;        // nominal grid step

  int count() const { return static_cast<int>(y_in.cols()); }
};

// Pairs (y_r(t_j), mu(t_j)) -> y_r(t_{j+1}) from projected snapshots.
TransitionSet build_transitions(const pod::ReducedBasis& basis,
                                const std::vector<fom::Trajectory>& trajectories);

// Multi-stride variant for the tau-augmented direct net: stride 0 adds the
// zero-step pairs (y, y) at tau = 0, stride s pairs y(t_j) -> y(t_{j+s}).
TransitionSet build_transitions_strided(const pod::ReducedBasis& basis,
                                        const std::vector<fom::Trajectory>& trajectories,
                                        const std::vector<int>& strides);

struct SurrogateNet {
  MlpCore core;
  Mode mode = Mode::Direct;
  bool tau_input = false;  // direct net with tau as an extra input feature
  double tau_train = 0.0;
  int n_r = 0;
  int n_mu = 0;
  Normalizer norm;
  TrainingConfig trained_with;
  std::vector<double> loss_history;
  bool diverged = false;
};

SurrogateNet make_surrogate(Mode mode, int n_r, int n_mu, int hidden, Activation act,
                            double tau, std::uint64_t seed, bool tau_input = false);

Normalizer fit_normalizer(const TransitionSet& data, bool with_tau);

// One step of each surrogate; inputs and outputs in physical reduced units.
Eigen::VectorXd forward_direct(const SurrogateNet& net, const Eigen::VectorXd& y_r,
                               const Eigen::VectorXd& mu);
Eigen::VectorXd forward_rknn(const SurrogateNet& net, const Eigen::VectorXd& y_r,
                             const Eigen::VectorXd& mu, double tau_override = 0.0);
Eigen::VectorXd forward_direct_with_tau(const SurrogateNet& net, const Eigen::VectorXd& y_r,
                                        const Eigen::VectorXd& mu, double tau);

// Mean squared error over normalized targets plus its weight gradients.
double loss_and_gradients(const SurrogateNet& net, const TransitionSet& batch, CoreGrads& grads);

SurrogateNet train_surrogate(Mode mode, int n_r, int n_mu, int hidden, Activation act,
                             const TransitionSet& data, const TrainingConfig& config,
                             bool tau_input = false);

// Closed-loop prediction: k steps from y_r0 feeding each output back in;
// returns n_r x (k+1).  tau_override re-steps an RKNN at a new step size.
Eigen::MatrixXd rollout(const SurrogateNet& net, const Eigen::VectorXd& y_r0,
                        const sampling::ParameterSignal& signal, double t_end, int k,
                        double tau_override = 0.0);

}  // namespace podnn::surrogate
