#include "podnn/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace podnn::surrogate {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Tanh: return "tanh";
  }
  return "unknown";
}

const char* mode_name(Mode m) { return m == Mode::Direct ? "direct" : "rknn"; }

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  if (name == "tanh") return Activation::Tanh;
  fail(ErrorKind::Config, "unknown activation: " + name);
}

Mode mode_from_name(const std::string& name) {
  if (name == "direct") return Mode::Direct;
  if (name == "rknn") return Mode::Rknn;
  fail(ErrorKind::Config, "unknown surrogate mode: " + name);
}

std::size_t MlpCore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
  for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
  return n;
}

MlpCore make_core(int n_in, int hidden, int n_out, Activation act, std::uint64_t seed) {
  if (n_in < 1 || hidden < 1 || n_out < 1) fail(ErrorKind::Config, "make_core: bad layer sizes");
  if (hidden < n_in) fail(ErrorKind::Config, "make_core: hidden width must be >= input width");
  MlpCore core;
  core.activation = act;
  const int sizes_in[3] = {n_in, hidden, hidden};
  const int sizes_out[3] = {hidden, hidden, n_out};
  for (int layer = 0; layer < 3; ++layer) {
    Eigen::MatrixXd w(sizes_out[layer], sizes_in[layer]);
    // Uniform fan-in init, filled in storage order from a per-layer stream.
    SplitMix64 rng = seeded_stream(seed, static_cast<std::uint64_t>(layer));
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_in[layer]));
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = bound * (2.0 * rng.next_double() - 1.0);
    core.weights.push_back(std::move(w));
    core.biases.emplace_back(Eigen::VectorXd::Zero(sizes_out[layer]));
  }
  return core;
}

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation act, double alpha) {
  switch (act) {
    case Activation::Relu: return z.array().max(0.0);
    case Activation::LeakyRelu: return (z.array() > 0.0).select(z, alpha * z);
    case Activation::Tanh: return z.array().tanh();
  }
  fail(ErrorKind::Usage, "unknown activation");
}

// Derivative expressed through the post-activation value; for (leaky) ReLU
// the sign of the output determines the branch, zero maps to the flat side.
Eigen::ArrayXXd activation_slope(const Eigen::MatrixXd& a, Activation act, double alpha) {
  switch (act) {
    case Activation::Relu: return (a.array() > 0.0).cast<double>();
    case Activation::LeakyRelu:
      return (a.array() > 0.0).select(Eigen::ArrayXXd::Constant(a.rows(), a.cols(), 1.0),
                                      Eigen::ArrayXXd::Constant(a.rows(), a.cols(), alpha));
    case Activation::Tanh: return 1.0 - a.array().square();
  }
  fail(ErrorKind::Usage, "unknown activation");
}

}  // namespace

Eigen::MatrixXd core_forward_cached(const MlpCore& core, const Eigen::MatrixXd& x,
                                    CoreCache& cache) {
  if (x.rows() != core.n_in()) fail(ErrorKind::Shape, "core_forward: input width mismatch");
  cache.x = x;
  cache.act.resize(2);
  Eigen::MatrixXd z = (core.weights[0] * x).colwise() + core.biases[0];
  cache.act[0] = activate(z, core.activation, core.leaky_alpha);
  z = (core.weights[1] * cache.act[0]).colwise() + core.biases[1];
  cache.act[1] = activate(z, core.activation, core.leaky_alpha);
  return (core.weights[2] * cache.act[1]).colwise() + core.biases[2];
}

Eigen::MatrixXd core_forward(const MlpCore& core, const Eigen::MatrixXd& x) {
  CoreCache cache;
  return core_forward_cached(core, x, cache);
}

CoreGrads CoreGrads::zeros_like(const MlpCore& core) {
  CoreGrads g;
  for (const auto& w : core.weights) g.d_weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  for (const auto& b : core.biases) g.d_biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
  return g;
}

void CoreGrads::accumulate(const CoreGrads& other) {
  for (std::size_t i = 0; i < d_weights.size(); ++i) d_weights[i] += other.d_weights[i];
  for (std::size_t i = 0; i < d_biases.size(); ++i) d_biases[i] += other.d_biases[i];
}

Eigen::MatrixXd core_backward(const MlpCore& core, const CoreCache& cache,
                              const Eigen::MatrixXd& grad_out, CoreGrads& grads) {
  grads.d_weights[2].noalias() += grad_out * cache.act[1].transpose();
  grads.d_biases[2] += grad_out.rowwise().sum();

  Eigen::MatrixXd g = (core.weights[2].transpose() * grad_out).array() *
                      activation_slope(cache.act[1], core.activation, core.leaky_alpha);
  grads.d_weights[1].noalias() += g * cache.act[0].transpose();
  grads.d_biases[1] += g.rowwise().sum();

  g = (core.weights[1].transpose() * g).array() *
      activation_slope(cache.act[0], core.activation, core.leaky_alpha);
  grads.d_weights[0].noalias() += g * cache.x.transpose();
  grads.d_biases[0] += g.rowwise().sum();

  return core.weights[0].transpose() * g;
}

Eigen::MatrixXd Normalizer::norm_state(const Eigen::MatrixXd& y) const {
  return ((y.colwise() - state_mean).array().colwise() / state_scale.array()).matrix();
}

Eigen::MatrixXd Normalizer::denorm_state(const Eigen::MatrixXd& z) const {
  return ((z.array().colwise() * state_scale.array()).colwise() + state_mean.array()).matrix();
}

Eigen::MatrixXd Normalizer::norm_param(const Eigen::MatrixXd& mu) const {
  return ((mu.colwise() - param_mean).array().colwise() / param_scale.array()).matrix();
}

void Normalizer::validate() const {
  if ((state_scale.array() == 0.0).any() || (param_scale.array() == 0.0).any() ||
      tau_scale == 0.0)
    fail(ErrorKind::Config, "normalizer has zero scales");
}

namespace {

void mean_and_scale(const Eigen::MatrixXd& data, Eigen::VectorXd& mean, Eigen::VectorXd& scale) {
  mean = data.rowwise().mean();
  scale.resize(data.rows());
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const double var = (data.row(i).array() - mean[i]).square().mean();
    const double sd = std::sqrt(var);
    scale[i] = sd > 1e-12 * std::max(1.0, std::abs(mean[i])) ? sd : 1.0;
  }
  // Relative floor: a feature whose spread is tiny next to its siblings (the
  // trailing POD coordinate, typically) must not be stretched to unit variance
  // — the net would then see its own prediction noise at full gain when rolled
  // out closed-loop.  Flooring the scale keeps such features low-gain inputs.
  const double cap = 0.05 * scale.maxCoeff();
  for (Eigen::Index i = 0; i < scale.size(); ++i) scale[i] = std::max(scale[i], cap);
}

}  // namespace

Normalizer fit_normalizer(const TransitionSet& data, bool with_tau) {
  if (data.count() < 1) fail(ErrorKind::Config, "fit_normalizer: empty transition set");
  Eigen::MatrixXd states(data.y_in.rows(), 2 * data.count());
  states << data.y_in, data.y_out;
  Normalizer norm;
  mean_and_scale(states, norm.state_mean, norm.state_scale);
  mean_and_scale(data.mu, norm.param_mean, norm.param_scale);
  if (with_tau) {
    norm.tau_mean = data.tau_of.mean();
    const double sd = std::sqrt((data.tau_of.array() - norm.tau_mean).square().mean());
    norm.tau_scale = sd > 1e-12 * std::max(1.0, std::abs(norm.tau_mean)) ? sd : 1.0;
  }
  return norm;
}

TransitionSet build_transitions(const pod::ReducedBasis& basis,
                                const std::vector<fom::Trajectory>& trajectories) {
  return build_transitions_strided(basis, trajectories, {1});
}

TransitionSet build_transitions_strided(const pod::ReducedBasis& basis,
                                        const std::vector<fom::Trajectory>& trajectories,
                                        const std::vector<int>& strides) {
  if (trajectories.empty()) fail(ErrorKind::Config, "build_transitions: no trajectories");
  if (strides.empty()) fail(ErrorKind::Config, "build_transitions: no strides");
  const int k = trajectories.front().steps();
  const double tau = trajectories.front().tau();
  const int n_mu = static_cast<int>(trajectories.front().params.rows());

  int total = 0;
  for (const int s : strides) {
    if (s < 0 || s > k) fail(ErrorKind::Config, "build_transitions: stride out of range");
    total += static_cast<int>(trajectories.size()) * (s == 0 ? k + 1 : k - s + 1);
  }

  TransitionSet set;
  set.tau = tau;
  set.y_in.resize(basis.n_r, total);
  set.mu.resize(n_mu, total);
  set.y_out.resize(basis.n_r, total);
  set.tau_of.resize(total);

  int at = 0;
  for (const auto& traj : trajectories) {
    if (traj.steps() != k) fail(ErrorKind::Shape, "build_transitions: heterogeneous step counts");
    const Eigen::MatrixXd reduced = pod::project(basis, traj.states);
    for (const int s : strides) {
      const int last = (s == 0) ? k : k - s;
      for (int j = 0; j <= last; ++j) {
        set.y_in.col(at) = reduced.col(j);
        set.mu.col(at) = traj.params.col(j);
        set.y_out.col(at) = reduced.col(j + s);
        set.tau_of[at] = s * tau;
        ++at;
      }
    }
  }
  return set;
}

SurrogateNet make_surrogate(Mode mode, int n_r, int n_mu, int hidden, Activation act,
                            double tau, std::uint64_t seed, bool tau_input) {
  if (mode == Mode::Rknn && tau_input)
    fail(ErrorKind::Config, "tau input feature applies to the direct net only");
  SurrogateNet net;
  net.mode = mode;
  net.tau_input = tau_input;
  net.tau_train = tau;
  net.n_r = n_r;
  net.n_mu = n_mu;
  const int n_in = n_r + n_mu + (tau_input ? 1 : 0);
  net.core = make_core(n_in, hidden, n_r, act, seed);
  net.norm.state_mean = Eigen::VectorXd::Zero(n_r);
  net.norm.state_scale = Eigen::VectorXd::Ones(n_r);
  net.norm.param_mean = Eigen::VectorXd::Zero(n_mu);
  net.norm.param_scale = Eigen::VectorXd::Ones(n_mu);
  return net;
}

namespace {

Eigen::MatrixXd stack_inputs(const Eigen::MatrixXd& z, const Eigen::MatrixXd& p) {
  Eigen::MatrixXd x(z.rows() + p.rows(), z.cols());
  x << z, p;
  return x;
}

// RK4 stencil over the core in normalized state coordinates; mu is frozen
// across the four stages.
Eigen::MatrixXd rknn_step_normalized(const MlpCore& core, const Eigen::MatrixXd& z,
                                     const Eigen::MatrixXd& p, double tau) {
  const Eigen::MatrixXd h1 = tau * core_forward(core, stack_inputs(z, p));
  const Eigen::MatrixXd h2 = tau * core_forward(core, stack_inputs(z + 0.5 * h1, p));
  const Eigen::MatrixXd h3 = tau * core_forward(core, stack_inputs(z + 0.5 * h2, p));
  const Eigen::MatrixXd h4 = tau * core_forward(core, stack_inputs(z + h3, p));
  return z + (h1 + 2.0 * h2 + 2.0 * h3 + h4) / 6.0;
}

struct RknnCaches {
  CoreCache stage[4];
};

Eigen::MatrixXd rknn_step_cached(const MlpCore& core, const Eigen::MatrixXd& z,
                                 const Eigen::MatrixXd& p, double tau, RknnCaches& caches) {
  const Eigen::MatrixXd h1 = tau * core_forward_cached(core, stack_inputs(z, p), caches.stage[0]);
  const Eigen::MatrixXd h2 =
      tau * core_forward_cached(core, stack_inputs(z + 0.5 * h1, p), caches.stage[1]);
  const Eigen::MatrixXd h3 =
      tau * core_forward_cached(core, stack_inputs(z + 0.5 * h2, p), caches.stage[2]);
  const Eigen::MatrixXd h4 =
      tau * core_forward_cached(core, stack_inputs(z + h3, p), caches.stage[3]);
  return z + (h1 + 2.0 * h2 + 2.0 * h3 + h4) / 6.0;
}

// Reverse chain through the four shared-weight stages.  grad_out is dL/d(step
// output); weight gradients from every stage accumulate into grads.
void rknn_backward(const MlpCore& core, const RknnCaches& caches, int n_r, double tau,
                   const Eigen::MatrixXd& grad_out, CoreGrads& grads) {
  Eigen::MatrixXd hbar1 = grad_out / 6.0;
  Eigen::MatrixXd hbar2 = grad_out / 3.0;
  Eigen::MatrixXd hbar3 = grad_out / 3.0;
  Eigen::MatrixXd hbar4 = grad_out / 6.0;

  Eigen::MatrixXd xbar = core_backward(core, caches.stage[3], tau * hbar4, grads);
  hbar3 += xbar.topRows(n_r);
  xbar = core_backward(core, caches.stage[2], tau * hbar3, grads);
  hbar2 += 0.5 * xbar.topRows(n_r);
  xbar = core_backward(core, caches.stage[1], tau * hbar2, grads);
  hbar1 += 0.5 * xbar.topRows(n_r);
  core_backward(core, caches.stage[0], tau * hbar1, grads);
}

Eigen::MatrixXd direct_inputs(const SurrogateNet& net, const Eigen::MatrixXd& y,
                              const Eigen::MatrixXd& mu, const Eigen::VectorXd& tau_of) {
  const Eigen::MatrixXd z = net.norm.norm_state(y);
  const Eigen::MatrixXd p = net.norm.norm_param(mu);
  if (!net.tau_input) return stack_inputs(z, p);
  Eigen::MatrixXd x(z.rows() + p.rows() + 1, z.cols());
  x.topRows(z.rows()) = z;
  x.middleRows(z.rows(), p.rows()) = p;
  for (Eigen::Index j = 0; j < x.cols(); ++j) x(x.rows() - 1, j) = net.norm.norm_tau(tau_of[j]);
  return x;
}

// Loss and gradients on pre-normalized data; shared by the public API and the
// training loop so both walk the identical arithmetic path.
double loss_grads_normalized(const SurrogateNet& net, const Eigen::MatrixXd& x_or_z,
                             const Eigen::MatrixXd& p, const Eigen::MatrixXd& targets,
                             CoreGrads& grads) {
  const double denom = static_cast<double>(targets.size());
  Eigen::MatrixXd out;
  if (net.mode == Mode::Direct) {
    CoreCache cache;
    out = core_forward_cached(net.core, x_or_z, cache);
    const Eigen::MatrixXd err = out - targets;
    const double loss = err.squaredNorm() / denom;
    if (!std::isfinite(loss)) fail(ErrorKind::TrainingDivergence, "non-finite training loss");
    core_backward(net.core, cache, (2.0 / denom) * err, grads);
    return loss;
  }
  RknnCaches caches;
  out = rknn_step_cached(net.core, x_or_z, p, net.tau_train, caches);
  const Eigen::MatrixXd err = out - targets;
  const double loss = err.squaredNorm() / denom;
  if (!std::isfinite(loss)) fail(ErrorKind::TrainingDivergence, "non-finite training loss");
  rknn_backward(net.core, caches, net.n_r, net.tau_train, (2.0 / denom) * err, grads);
  return loss;
}

}  // namespace

Eigen::VectorXd forward_direct(const SurrogateNet& net, const Eigen::VectorXd& y_r,
                               const Eigen::VectorXd& mu) {
  if (net.mode != Mode::Direct || net.tau_input)
    fail(ErrorKind::Usage, "forward_direct: net is not a plain direct surrogate");
  if (y_r.size() != net.n_r || mu.size() != net.n_mu)
    fail(ErrorKind::Shape, "forward_direct: dimension mismatch");
  const Eigen::MatrixXd x = direct_inputs(net, y_r, mu, Eigen::VectorXd::Zero(1));
  return net.norm.denorm_state(core_forward(net.core, x)).col(0);
}

Eigen::VectorXd forward_rknn(const SurrogateNet& net, const Eigen::VectorXd& y_r,
                             const Eigen::VectorXd& mu, double tau_override) {
  if (net.mode != Mode::Rknn) fail(ErrorKind::Usage, "forward_rknn: net is not an RKNN");
  if (y_r.size() != net.n_r || mu.size() != net.n_mu)
    fail(ErrorKind::Shape, "forward_rknn: dimension mismatch");
  const double tau = tau_override > 0.0 ? tau_override : net.tau_train;
  const Eigen::MatrixXd z = net.norm.norm_state(y_r);
  const Eigen::MatrixXd p = net.norm.norm_param(mu);
  return net.norm.denorm_state(rknn_step_normalized(net.core, z, p, tau)).col(0);
}

Eigen::VectorXd forward_direct_with_tau(const SurrogateNet& net, const Eigen::VectorXd& y_r,
                                        const Eigen::VectorXd& mu, double tau) {
  if (net.mode != Mode::Direct || !net.tau_input)
    fail(ErrorKind::Usage, "forward_direct_with_tau: net lacks the tau input feature");
  if (y_r.size() != net.n_r || mu.size() != net.n_mu)
    fail(ErrorKind::Shape, "forward_direct_with_tau: dimension mismatch");
  const Eigen::MatrixXd x =
      direct_inputs(net, y_r, mu, Eigen::VectorXd::Constant(1, tau));
  return net.norm.denorm_state(core_forward(net.core, x)).col(0);
}

double loss_and_gradients(const SurrogateNet& net, const TransitionSet& batch, CoreGrads& grads) {
  if (batch.count() < 1) fail(ErrorKind::Config, "loss_and_gradients: empty batch");
  const Eigen::MatrixXd targets = net.norm.norm_state(batch.y_out);
  if (net.mode == Mode::Direct) {
    const Eigen::MatrixXd x = direct_inputs(net, batch.y_in, batch.mu, batch.tau_of);
    return loss_grads_normalized(net, x, Eigen::MatrixXd(), targets, grads);
  }
  const Eigen::MatrixXd z = net.norm.norm_state(batch.y_in);
  const Eigen::MatrixXd p = net.norm.norm_param(batch.mu);
  return loss_grads_normalized(net, z, p, targets, grads);
}

namespace {

struct AdamState {
  CoreGrads m, v;
  long t = 0;
};

void adam_update(MlpCore& core, AdamState& state, const CoreGrads& grads,
                 const TrainingConfig& cfg) {
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  auto step = [&](Eigen::Ref<Eigen::MatrixXd> w, Eigen::MatrixXd& m, Eigen::MatrixXd& v,
                  const Eigen::MatrixXd& g) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.array().square().matrix();
    w.array() -= cfg.learning_rate * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + cfg.adam_eps);
  };
  for (std::size_t i = 0; i < core.weights.size(); ++i)
    step(core.weights[i], state.m.d_weights[i], state.v.d_weights[i], grads.d_weights[i]);
  for (std::size_t i = 0; i < core.biases.size(); ++i) {
    Eigen::MatrixXd bm = state.m.d_biases[i], bv = state.v.d_biases[i], bg = grads.d_biases[i];
    Eigen::MatrixXd b = core.biases[i];
    step(b, bm, bv, bg);
    core.biases[i] = b.col(0);
    state.m.d_biases[i] = bm.col(0);
    state.v.d_biases[i] = bv.col(0);
  }
}

}  // namespace

SurrogateNet train_surrogate(Mode mode, int n_r, int n_mu, int hidden, Activation act,
                             const TransitionSet& data, const TrainingConfig& config,
                             bool tau_input) {
  if (data.count() < 2) fail(ErrorKind::Config, "train_surrogate: need at least 2 pairs");
  if (config.epochs < 1 || config.learning_rate <= 0.0)
    fail(ErrorKind::Config, "train_surrogate: bad training configuration");
  if (mode == Mode::Rknn) {
    // RKNN training assumes one shared step size across all pairs.
    for (int i = 0; i < data.count(); ++i)
      if (std::abs(data.tau_of[i] - data.tau) > 1e-12 * std::max(1.0, data.tau))
        fail(ErrorKind::Config, "train_surrogate: rknn requires uniform pair step size");
  }

  SurrogateNet net = make_surrogate(mode, n_r, n_mu, hidden, act, data.tau, config.seed,
                                    tau_input);
  net.norm = fit_normalizer(data, tau_input);
  net.norm.validate();
  net.trained_with = config;

  // Normalize once; the loop works entirely in normalized coordinates.
  const Eigen::MatrixXd targets = net.norm.norm_state(data.y_out);
  Eigen::MatrixXd x_all, z_all, p_all;
  if (mode == Mode::Direct) {
    x_all = direct_inputs(net, data.y_in, data.mu, data.tau_of);
  } else {
    z_all = net.norm.norm_state(data.y_in);
    p_all = net.norm.norm_param(data.mu);
  }

  const int total = data.count();
  const int batch = (config.batch_size <= 0 || config.batch_size >= total) ? total
                                                                           : config.batch_size;
  AdamState adam{CoreGrads::zeros_like(net.core), CoreGrads::zeros_like(net.core), 0};
  std::vector<int> perm(static_cast<std::size_t>(total));
  std::iota(perm.begin(), perm.end(), 0);
  // The returned weights are the lowest-loss epoch's, not the last iterate's;
  // minibatch endpoints jitter around the basin and the best checkpoint is
  // the better rollout model.  Divergence keeps the same checkpoint.
  MlpCore best = net.core;
  double best_loss = std::numeric_limits<double>::infinity();
  // Minibatch runs additionally average the final quarter's iterates (tail
  // averaging); the mean of the jittering endpoint is the basin center.
  const bool tail_average = batch < total;
  const int tail_start = config.epochs - std::max(1, config.epochs / 4);
  MlpCore tail_sum;
  int tail_n = 0;
  net.loss_history.reserve(static_cast<std::size_t>(config.epochs));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    bool blew_up = false;
    try {
      if (batch == total) {
        CoreGrads grads = CoreGrads::zeros_like(net.core);
        epoch_loss = (mode == Mode::Direct)
                         ? loss_grads_normalized(net, x_all, Eigen::MatrixXd(), targets, grads)
                         : loss_grads_normalized(net, z_all, p_all, targets, grads);
        adam_update(net.core, adam, grads, config);
      } else {
        SplitMix64 rng = seeded_stream(config.seed, 0x10000u + static_cast<std::uint64_t>(epoch));
        for (int i = total - 1; i > 0; --i) {
          const auto j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
          std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
        }
        double sum = 0.0;
        int batches = 0;
        for (int start = 0; start < total; start += batch) {
          const int width = std::min(batch, total - start);
          Eigen::MatrixXd tb(targets.rows(), width);
          Eigen::MatrixXd xb(mode == Mode::Direct ? x_all.rows() : z_all.rows(), width);
          Eigen::MatrixXd pb;
          if (mode == Mode::Rknn) pb.resize(p_all.rows(), width);
          for (int c = 0; c < width; ++c) {
            const int src = perm[static_cast<std::size_t>(start + c)];
            tb.col(c) = targets.col(src);
            xb.col(c) = (mode == Mode::Direct) ? x_all.col(src) : z_all.col(src);
            if (mode == Mode::Rknn) pb.col(c) = p_all.col(src);
          }
          CoreGrads grads = CoreGrads::zeros_like(net.core);
          sum += loss_grads_normalized(net, xb, pb, tb, grads);
          adam_update(net.core, adam, grads, config);
          ++batches;
        }
        epoch_loss = sum / batches;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::TrainingDivergence) throw;
      blew_up = true;
    }
    if (blew_up || !std::isfinite(epoch_loss)) {
      net.diverged = true;
      break;
    }
    net.loss_history.push_back(epoch_loss);
    if (epoch_loss < best_loss) {
      best_loss = epoch_loss;
      best = net.core;
    }
    if (tail_average && epoch >= tail_start) {
      if (tail_n == 0) {
        tail_sum = net.core;
      } else {
        for (std::size_t l = 0; l < tail_sum.weights.size(); ++l) {
          tail_sum.weights[l] += net.core.weights[l];
          tail_sum.biases[l] += net.core.biases[l];
        }
      }
      ++tail_n;
    }
  }
  if (tail_average && tail_n > 0 && !net.diverged) {
    for (std::size_t l = 0; l < tail_sum.weights.size(); ++l) {
      tail_sum.weights[l] /= static_cast<double>(tail_n);
      tail_sum.biases[l] /= static_cast<double>(tail_n);
    }
    net.core = tail_sum;
  } else {
    net.core = best;
  }
  return net;
}

Eigen::MatrixXd rollout(const SurrogateNet& net, const Eigen::VectorXd& y_r0,
                        const sampling::ParameterSignal& signal, double t_end, int k,
                        double tau_override) {
  if (k < 1) fail(ErrorKind::Config, "rollout: need k >= 1");
  if (y_r0.size() != net.n_r) fail(ErrorKind::Shape, "rollout: initial state dimension mismatch");
  if (signal.dim() != net.n_mu) fail(ErrorKind::Shape, "rollout: signal dimension mismatch");
  const double tau = t_end / k;
  const double tau_used = tau_override > 0.0 ? tau_override : net.tau_train;

  Eigen::MatrixXd states(net.n_r, k + 1);
  states.col(0) = y_r0;
  Eigen::VectorXd y = y_r0;
  for (int j = 0; j < k; ++j) {
    const Eigen::VectorXd mu = sampling::eval_signal(signal, j * tau);
    if (net.mode == Mode::Rknn)
      y = forward_rknn(net, y, mu, tau_used);
    else if (net.tau_input)
      y = forward_direct_with_tau(net, y, mu, tau_used);
    else
      y = forward_direct(net, y, mu);
    if (!all_finite(y) || y.cwiseAbs().maxCoeff() > 1e12)
      fail(ErrorKind::RolloutBlowUp, "rollout diverged at step " + std::to_string(j + 1));
    states.col(j + 1) = y;
  }
  return states;
}

}  // namespace podnn::surrogate
