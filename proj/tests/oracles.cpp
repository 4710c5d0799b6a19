#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracles {

Eigen::MatrixXd naive_matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

Eigen::VectorXd naive_matvec(const Eigen::MatrixXd& a, const Eigen::VectorXd& x) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * x[k];
    y[i] = acc;
  }
  return y;
}

void one_sided_jacobi_svd(const Eigen::MatrixXd& a, Eigen::MatrixXd& u, Eigen::VectorXd& s,
                          Eigen::MatrixXd& v) {
  Eigen::MatrixXd b = a;
  const Eigen::Index m = b.cols();
  v = Eigen::MatrixXd::Identity(m, m);

  const double eps = 1e-15;
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p < m; ++p) {
      for (Eigen::Index q = p + 1; q < m; ++q) {
        const double app = b.col(p).squaredNorm();
        const double aqq = b.col(q).squaredNorm();
        const double apq = b.col(p).dot(b.col(q));
        if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t =
            (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = c * t;
        for (Eigen::Index i = 0; i < b.rows(); ++i) {
          const double bip = b(i, p), biq = b(i, q);
          b(i, p) = c * bip - sn * biq;
          b(i, q) = sn * bip + c * biq;
        }
        for (Eigen::Index i = 0; i < m; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - sn * viq;
          v(i, q) = sn * vip + c * viq;
        }
      }
    }
    if (!rotated) break;
  }

  s.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) s[j] = b.col(j).norm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return s[i] > s[j]; });

  Eigen::VectorXd s_sorted(m);
  Eigen::MatrixXd v_sorted(m, m);
  u.resize(b.rows(), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Eigen::Index src = order[static_cast<std::size_t>(j)];
    s_sorted[j] = s[src];
    v_sorted.col(j) = v.col(src);
    u.col(j) = s[src] > 0.0 ? Eigen::VectorXd(b.col(src) / s[src])
                            : Eigen::VectorXd(Eigen::VectorXd::Zero(b.rows()));
  }
  s = s_sorted;
  v = v_sorted;
}

Eigen::VectorXd rk4_step(const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& f,
                         double t, const Eigen::VectorXd& y, double h) {
  const Eigen::VectorXd k1 = f(t, y);
  const Eigen::VectorXd k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
  const Eigen::VectorXd k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
  const Eigen::VectorXd k4 = f(t + h, y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Eigen::MatrixXd rk4_integrate(
    const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& y0, double t_end, int k, int m) {
  const double tau = t_end / k;
  const double h = tau / m;
  Eigen::MatrixXd out(y0.size(), k + 1);
  Eigen::VectorXd y = y0;
  out.col(0) = y;
  for (int j = 0; j < k; ++j) {
    for (int sub = 0; sub < m; ++sub) y = rk4_step(f, j * tau + sub * h, y, h);
    out.col(j + 1) = y;
  }
  return out;
}

double halton(std::uint64_t index, std::uint64_t base) {
  std::vector<std::uint64_t> digits;
  while (index > 0) {
    digits.push_back(index % base);
    index /= base;
  }
  double r = 0.0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it)
    r = (r + static_cast<double>(*it)) / static_cast<double>(base);
  return r;
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double eps) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    g[i] = (f(xp) - f(xm)) / (2.0 * eps);
  }
  return g;
}

podnn::surrogate::MlpCore rigged_linear_core(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                             double input_bound) {
  using podnn::surrogate::MlpCore;
  const Eigen::Index n_in = a.cols();
  const Eigen::Index n_out = a.rows();

  // h1 = relu([x; -x] + c1) stays affine while |x|_inf < c1.
  const double c1 = 4.0 * input_bound + 4.0;
  MlpCore core;
  core.activation = podnn::surrogate::Activation::Relu;
  core.weights.resize(3);
  core.biases.resize(3);
  core.weights[0].resize(2 * n_in, n_in);
  core.weights[0] << Eigen::MatrixXd::Identity(n_in, n_in),
      -Eigen::MatrixXd::Identity(n_in, n_in);
  core.biases[0] = Eigen::VectorXd::Constant(2 * n_in, c1);

  // h2 = relu([a/2, -a/2] h1 + c2) = relu(a x + c2), affine while
  // |a x|_inf < c2.
  const double row_gain = a.cwiseAbs().rowwise().sum().maxCoeff();
  const double c2 = 4.0 * row_gain * input_bound + 4.0;
  core.weights[1].resize(n_out, 2 * n_in);
  core.weights[1] << 0.5 * a, -0.5 * a;
  core.biases[1] = Eigen::VectorXd::Constant(n_out, c2);

  // linear output peels the shift off: out = h2 - c2 + b = a x + b.
  core.weights[2] = Eigen::MatrixXd::Identity(n_out, n_out);
  core.biases[2] = b - Eigen::VectorXd::Constant(n_out, c2);
  return core;
}

podnn::surrogate::Normalizer identity_normalizer(int n_r, int n_mu) {
  podnn::surrogate::Normalizer norm;
  norm.state_mean = Eigen::VectorXd::Zero(n_r);
  norm.state_scale = Eigen::VectorXd::Ones(n_r);
  norm.param_mean = Eigen::VectorXd::Zero(n_mu);
  norm.param_scale = Eigen::VectorXd::Ones(n_mu);
  norm.tau_mean = 0.0;
  norm.tau_scale = 1.0;
  return norm;
}

}  // namespace oracles
