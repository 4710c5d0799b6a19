#include "podnn/pod.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace podnn::pod {

const char* sampling_kind_name(SamplingKind kind) {
  return kind == SamplingKind::Sps ? "sps" : "dps";
}

void SnapshotSet::validate() const {
  if (trajectories.empty()) fail(ErrorKind::Shape, "snapshot set is empty");
  if (signals.size() != trajectories.size())
    fail(ErrorKind::Shape, "snapshot set: signal/trajectory count mismatch");
  const auto n = trajectories.front().states.rows();
  const auto cols = trajectories.front().states.cols();
  const double tau = trajectories.front().tau();
  for (const auto& t : trajectories) {
    if (t.states.rows() != n || t.states.cols() != cols)
      fail(ErrorKind::Shape, "snapshot set: heterogeneous trajectory dimensions");
    if (std::abs(t.tau() - tau) > 1e-12 * std::max(1.0, tau))
      fail(ErrorKind::Shape, "snapshot set: heterogeneous time step");
    if (!all_finite(t.states)) fail(ErrorKind::NumericInput, "snapshot set: non-finite states");
  }
}

Eigen::MatrixXd assemble_snapshot_matrix(const SnapshotSet& set) {
  set.validate();
  const auto n = set.trajectories.front().states.rows();
  const auto per = set.trajectories.front().states.cols();
  Eigen::MatrixXd y(n, static_cast<Eigen::Index>(set.trajectories.size()) * per);
  Eigen::Index at = 0;
  for (const auto& t : set.trajectories) {
    y.middleCols(at, per) = t.states;
    at += per;
  }
  return y;
}

void jacobi_eigensymmetric(const Eigen::MatrixXd& a, Eigen::VectorXd& eigenvalues,
                           Eigen::MatrixXd& eigenvectors) {
  const auto n = a.rows();
  if (a.cols() != n) fail(ErrorKind::Shape, "jacobi: matrix must be square");
  Eigen::MatrixXd m = 0.5 * (a + a.transpose());  // symmetrize roundoff
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

  const double scale = std::max(m.norm(), 1e-300);
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += 2.0 * m(p, q) * m(p, q);
    if (std::sqrt(off) <= 1e-12 * scale) break;
    if (sweep == kMaxSweeps - 1) fail(ErrorKind::NumericInput, "jacobi: no convergence");

    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // m <- Jᵀ m J on rows/cols p, q
        for (Eigen::Index i = 0; i < n; ++i) {
          const double mip = m(i, p), miq = m(i, q);
          m(i, p) = c * mip - s * miq;
          m(i, q) = s * mip + c * miq;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
          const double mpi = m(p, i), mqi = m(q, i);
          m(p, i) = c * mpi - s * mqi;
          m(q, i) = s * mpi + c * mqi;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return m(i, i) > m(j, j); });
  eigenvalues.resize(n);
  eigenvectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    eigenvalues[i] = m(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    eigenvectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
}

namespace {

void fix_column_signs(Eigen::MatrixXd& v) {
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    Eigen::Index at = 0;
    v.col(j).cwiseAbs().maxCoeff(&at);
    if (v(at, j) < 0.0) v.col(j) = -v.col(j);
  }
}

}  // namespace

ReducedBasis compute_pod(const Eigen::MatrixXd& y_raw, int n_r, bool center) {
  const auto n = y_raw.rows();
  const auto cols = y_raw.cols();
  if (n < 1 || cols < 1) fail(ErrorKind::Shape, "compute_pod: empty snapshot matrix");
  if (n_r < 1 || n_r > std::min(n, cols))
    fail(ErrorKind::Config, "compute_pod: n_r out of range");
  if (!all_finite(y_raw)) fail(ErrorKind::NumericInput, "compute_pod: non-finite snapshots");

  Eigen::VectorXd mean;
  Eigen::MatrixXd y = y_raw;
  if (center) {
    mean = y.rowwise().mean();
    y.colwise() -= mean;
  }

  Eigen::VectorXd lambda;
  Eigen::MatrixXd w;
  Eigen::MatrixXd left;  // full orthonormal set spanning the data range
  const Eigen::Index rmax = std::min(n, cols);

  if (cols <= n) {
    // Method of snapshots on the small Gram matrix YᵀY.
    jacobi_eigensymmetric(y.transpose() * y, lambda, w);
  } else {
    jacobi_eigensymmetric(y * y.transpose(), lambda, w);
  }

  Eigen::VectorXd sigma(rmax);
  for (Eigen::Index i = 0; i < rmax; ++i) sigma[i] = std::sqrt(std::max(lambda[i], 0.0));

  const double tol = static_cast<double>(std::max(n, cols)) * 1e-15 * std::max(sigma[0], 0.0);
  Eigen::Index rank = 0;
  while (rank < rmax && sigma[rank] > tol) ++rank;

  if (cols <= n) {
    left.resize(n, rank);
    for (Eigen::Index i = 0; i < rank; ++i) left.col(i) = y * w.col(i) / sigma[i];
  } else {
    left = w.leftCols(rank);
  }
  fix_column_signs(left);

  ReducedBasis basis;
  basis.singular_values = sigma;
  basis.mean = mean;
  basis.n_r = n_r;
  if (n_r > rank) {
    basis.n_r = static_cast<int>(rank);
    basis.rank_clamped = true;
    basis.warning = "requested n_r " + std::to_string(n_r) + " exceeds numerical rank " +
                    std::to_string(rank) + "; clamped";
  }
  basis.basis = left.leftCols(basis.n_r);
  return basis;
}

ReducedBasis truncate(const ReducedBasis& basis, int n_r) {
  if (n_r < 1) fail(ErrorKind::Config, "truncate: n_r must be positive");
  ReducedBasis out = basis;
  if (n_r >= basis.n_r) {
    if (n_r > basis.n_r) {
      out.rank_clamped = true;
      out.warning = "requested n_r " + std::to_string(n_r) + " exceeds available rank " +
                    std::to_string(basis.n_r) + "; clamped";
    }
    return out;
  }
  out.n_r = n_r;
  out.basis = basis.basis.leftCols(n_r);
  return out;
}

Eigen::VectorXd project(const ReducedBasis& basis, const Eigen::VectorXd& y) {
  if (y.size() != basis.basis.rows()) fail(ErrorKind::Shape, "project: dimension mismatch");
  if (basis.centered()) return basis.basis.transpose() * (y - basis.mean);
  return basis.basis.transpose() * y;
}

Eigen::MatrixXd project(const ReducedBasis& basis, const Eigen::MatrixXd& y) {
  if (y.rows() != basis.basis.rows()) fail(ErrorKind::Shape, "project: dimension mismatch");
  if (basis.centered()) return basis.basis.transpose() * (y.colwise() - basis.mean);
  return basis.basis.transpose() * y;
}

Eigen::VectorXd lift(const ReducedBasis& basis, const Eigen::VectorXd& y_r) {
  if (y_r.size() != basis.n_r) fail(ErrorKind::Shape, "lift: dimension mismatch");
  if (basis.centered()) return basis.mean + basis.basis * y_r;
  return basis.basis * y_r;
}

Eigen::MatrixXd lift(const ReducedBasis& basis, const Eigen::MatrixXd& y_r) {
  if (y_r.rows() != basis.n_r) fail(ErrorKind::Shape, "lift: dimension mismatch");
  if (basis.centered()) return (basis.basis * y_r).colwise() + basis.mean;
  return basis.basis * y_r;
}

RelError reprojection_error(const ReducedBasis& basis, const Eigen::MatrixXd& y_ref, int n_s,
                            int k) {
  if (n_s < 1 || k < 1) fail(ErrorKind::Config, "reprojection_error: bad n_s or k");
  const double ref_norm = y_ref.norm();
  if (ref_norm <= 0.0) fail(ErrorKind::DivisionGuard, "reprojection_error: zero reference");
  const Eigen::MatrixXd residual = y_ref - lift(basis, project(basis, y_ref));
  RelError e;
  e.unprefixed = residual.norm() / ref_norm;
  e.prefixed = e.unprefixed / (static_cast<double>(n_s) * static_cast<double>(k));
  return e;
}

}  // namespace podnn::pod
