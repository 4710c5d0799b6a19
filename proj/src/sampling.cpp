#include "podnn/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace podnn::sampling {

void ParameterSpace::validate() const {
  const auto n = lower.size();
  if (n < 1) fail(ErrorKind::Config, "parameter space needs at least one parameter");
  if (upper.size() != n) fail(ErrorKind::Shape, "parameter bounds length mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(lower[i] < upper[i]))
      fail(ErrorKind::Config, "parameter " + std::to_string(i) + ": min must be < max");
  }
  if (!names.empty() && names.size() != static_cast<std::size_t>(n))
    fail(ErrorKind::Shape, "parameter names length mismatch");
  if (roles.size() != static_cast<std::size_t>(n))
    fail(ErrorKind::Shape, "parameter roles length mismatch");
}

bool ParameterSpace::contains(const Eigen::VectorXd& point, double slack) const {
  if (point.size() != lower.size()) return false;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    const double pad = slack * std::max(1.0, upper[i] - lower[i]);
    if (point[i] < lower[i] - pad || point[i] > upper[i] + pad) return false;
  }
  return true;
}

int ParameterSignal::dim() const {
  if (kind == SignalKind::Poly2) return static_cast<int>(poly.rows());
  return static_cast<int>(base.size());
}

ParameterSignal make_constant_signal(const Eigen::VectorXd& base, std::string id) {
  ParameterSignal s;
  s.kind = SignalKind::Constant;
  s.base = base;
  s.id = std::move(id);
  return s;
}

ParameterSignal make_rectified_sine_signal(const Eigen::VectorXd& base,
                                           const Eigen::VectorXd& floor_val, double omega,
                                           const std::vector<bool>& modulated, std::string id) {
  if (base.size() != floor_val.size()) fail(ErrorKind::Shape, "signal base/floor size mismatch");
  if (modulated.size() != static_cast<std::size_t>(base.size()))
    fail(ErrorKind::Shape, "signal modulation mask size mismatch");
  if (!(omega > 0.0)) fail(ErrorKind::Config, "rectified sine needs omega > 0");
  ParameterSignal s;
  s.kind = SignalKind::RectifiedSine;
  s.base = base;
  s.floor_val = floor_val;
  s.omega = omega;
  s.modulated = modulated;
  s.id = std::move(id);
  return s;
}

ParameterSignal make_poly2_signal(const Eigen::MatrixXd& coeffs, std::string id) {
  if (coeffs.cols() != 4) fail(ErrorKind::Shape, "poly2 signal expects n_params x 4 coefficients");
  ParameterSignal s;
  s.kind = SignalKind::Poly2;
  s.poly = coeffs;
  s.base = coeffs.col(0);
  s.id = std::move(id);
  return s;
}

Eigen::VectorXd eval_signal(const ParameterSignal& signal, double t) {
  if (t < 0.0) fail(ErrorKind::Domain, "signal evaluated at negative time");
  switch (signal.kind) {
    case SignalKind::Constant:
      return signal.base;
    case SignalKind::RectifiedSine: {
      const double s = std::abs(std::sin(signal.omega * t));
      Eigen::VectorXd value = signal.base;
      for (Eigen::Index i = 0; i < value.size(); ++i) {
        if (signal.modulated[static_cast<std::size_t>(i)])
          value[i] = (signal.base[i] - signal.floor_val[i]) * s + signal.floor_val[i];
      }
      return value;
    }
    case SignalKind::Poly2: {
      Eigen::VectorXd value(signal.poly.rows());
      for (Eigen::Index i = 0; i < value.size(); ++i) {
        const double a = signal.poly(i, 0), b = signal.poly(i, 1);
        const double c = signal.poly(i, 2), d = signal.poly(i, 3);
        const double dt = t - d;
        value[i] = a + b * t + c * dt * dt;
      }
      return value;
    }
  }
  fail(ErrorKind::Usage, "unknown signal kind");
}

const char* sampling_method_name(SamplingMethod m) {
  return m == SamplingMethod::Halton ? "halton" : "lhs";
}

const char* signal_kind_name(SignalKind k) {
  switch (k) {
    case SignalKind::Constant: return "constant";
    case SignalKind::RectifiedSine: return "rectified_sine";
    case SignalKind::Poly2: return "poly2";
  }
  return "unknown";
}

double halton_radical_inverse(std::uint64_t index, std::uint64_t base) {
  double result = 0.0;
  double f = 1.0 / static_cast<double>(base);
  while (index > 0) {
    result += f * static_cast<double>(index % base);
    index /= base;
    f /= static_cast<double>(base);
  }
  return result;
}

namespace {

constexpr std::uint64_t kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29,
                                     31, 37, 41, 43, 47, 53, 59, 61, 67, 71};

// Unit-cube draws, one row per sample.
Eigen::MatrixXd unit_samples(int n_s, int dim, SamplingMethod method, std::uint64_t seed) {
  Eigen::MatrixXd u(n_s, dim);
  if (method == SamplingMethod::Halton) {
    if (dim > static_cast<int>(std::size(kPrimes)))
      fail(ErrorKind::Config, "halton sampling supports at most 20 dimensions");
    for (int i = 0; i < n_s; ++i)
      for (int d = 0; d < dim; ++d)
        u(i, d) = halton_radical_inverse(static_cast<std::uint64_t>(i) + 1, kPrimes[d]);
    return u;
  }
  // LHS: one stratum per sample and dimension, jitter and permutation drawn
  // from per-dimension SplitMix64 streams so the result depends only on seed.
  for (int d = 0; d < dim; ++d) {
    SplitMix64 rng = seeded_stream(seed, static_cast<std::uint64_t>(d));
    std::vector<int> perm(static_cast<std::size_t>(n_s));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n_s - 1; i > 0; --i) {
      const auto j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    for (int i = 0; i < n_s; ++i) {
      const double jitter = rng.next_double();
      u(i, d) = (static_cast<double>(perm[static_cast<std::size_t>(i)]) + jitter) /
                static_cast<double>(n_s);
    }
  }
  return u;
}

Eigen::MatrixXd scaled_samples(const ParameterSpace& space, int n_s, SamplingMethod method,
                               std::uint64_t seed) {
  space.validate();
  if (n_s < 1) fail(ErrorKind::Config, "need at least one sample");
  const Eigen::MatrixXd u = unit_samples(n_s, space.dim(), method, seed);
  Eigen::MatrixXd points(n_s, space.dim());
  for (int i = 0; i < n_s; ++i)
    points.row(i) =
        space.lower.transpose().array() +
        u.row(i).array() * (space.upper - space.lower).transpose().array();
  return points;
}

std::string sample_id(const char* kind, SamplingMethod method, std::uint64_t seed, int index) {
  return std::string(kind) + "/" + sampling_method_name(method) + "/seed" + std::to_string(seed) +
         "/" + std::to_string(index);
}

}  // namespace

std::vector<ParameterSignal> sample_sps(const ParameterSpace& space, int n_s,
                                        SamplingMethod method, std::uint64_t seed) {
  const Eigen::MatrixXd points = scaled_samples(space, n_s, method, seed);
  std::vector<ParameterSignal> signals;
  signals.reserve(static_cast<std::size_t>(n_s));
  for (int i = 0; i < n_s; ++i)
    signals.push_back(make_constant_signal(points.row(i), sample_id("sps", method, seed, i)));
  return signals;
}

std::vector<ParameterSignal> sample_dps(const ParameterSpace& space, int n_s,
                                        SamplingMethod method, std::uint64_t seed, double omega) {
  return sample_dps(space, n_s, method, seed, omega, omega);
}

std::vector<ParameterSignal> sample_dps(const ParameterSpace& space, int n_s,
                                        SamplingMethod method, std::uint64_t seed, double omega_lo,
                                        double omega_hi) {
  if (!(omega_lo > 0.0) || omega_hi < omega_lo)
    fail(ErrorKind::Config, "dps needs 0 < omega_lo <= omega_hi");
  space.validate();
  if (n_s < 1) fail(ErrorKind::Config, "need at least one sample");
  // Frequency rides along as one more dimension of the same draw; the
  // parameter columns stay identical to the fixed-omega variant.
  const Eigen::MatrixXd u = unit_samples(n_s, space.dim() + 1, method, seed);
  std::vector<bool> modulated(static_cast<std::size_t>(space.dim()));
  for (int d = 0; d < space.dim(); ++d)
    modulated[static_cast<std::size_t>(d)] = space.roles[static_cast<std::size_t>(d)] == ParamRole::Load;
  std::vector<ParameterSignal> signals;
  signals.reserve(static_cast<std::size_t>(n_s));
  for (int i = 0; i < n_s; ++i) {
    const Eigen::VectorXd point =
        space.lower.array() +
        u.row(i).head(space.dim()).transpose().array() *
            (space.upper - space.lower).array();
    const double omega = omega_lo * std::pow(omega_hi / omega_lo, u(i, space.dim()));
    signals.push_back(make_rectified_sine_signal(point, space.lower, omega, modulated,
                                                 sample_id("dps", method, seed, i)));
  }
  return signals;
}

}  // namespace podnn::sampling
