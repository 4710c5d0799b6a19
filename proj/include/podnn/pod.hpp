#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "podnn/common.hpp"
#include "podnn/fom.hpp"

namespace podnn::pod {

enum class SamplingKind { Sps, Dps };

const char* sampling_kind_name(SamplingKind kind);

struct SnapshotSet {
  std::vector<fom::Trajectory> trajectories;
  std::vector<sampling::ParameterSignal> signals;
  SamplingKind sampling_kind = SamplingKind::Sps;

  void validate() const;  // non-empty, homogeneous N / k / tau
};

// Columns are states in trajectory order, time-major within each trajectory:
// Y is N x (N_s * (k+1)), initial columns included.
Eigen::MatrixXd assemble_snapshot_matrix(const SnapshotSet& set);

struct ReducedBasis {
  Eigen::MatrixXd basis;             // V_r, N x n_r, orthonormal columns
  Eigen::VectorXd singular_values;   // full spectrum, descending
  Eigen::VectorXd mean;              // size 0 unless snapshots were centered
  int n_r = 0;
  bool rank_clamped = false;         // requested n_r exceeded numerical rank
  std::string warning;
  std::string source_hash;           // digest of the generating snapshot set

  bool centered() const { return mean.size() > 0; }
};

// Symmetric eigendecomposition by cyclic Jacobi rotations; eigenvalues
// descending, eigenvectors orthonormal in matching column order.  The sweep
// stops when the off-diagonal Frobenius norm falls below 1e-12 relative.
void jacobi_eigensymmetric(const Eigen::MatrixXd& a, Eigen::VectorXd& eigenvalues,
                           Eigen::MatrixXd& eigenvectors);

// POD by the method of snapshots: eigendecomposition of YᵀY when the column
// count does not exceed N, of YYᵀ otherwise.  Column signs are fixed by
// making each basis vector's largest-magnitude entry positive.  With center
// set, the column mean is subtracted first and kept for project/lift.
ReducedBasis compute_pod(const Eigen::MatrixXd& y, int n_r, bool center = false);

// Narrower view of an already-computed basis (POD bases nest by column).
ReducedBasis truncate(const ReducedBasis& basis, int n_r);

Eigen::VectorXd project(const ReducedBasis& basis, const Eigen::VectorXd& y);
Eigen::MatrixXd project(const ReducedBasis& basis, const Eigen::MatrixXd& y);
Eigen::VectorXd lift(const ReducedBasis& basis, const Eigen::VectorXd& y_r);
Eigen::MatrixXd lift(const ReducedBasis& basis, const Eigen::MatrixXd& y_r);

struct RelError {
  double prefixed = 0.0;    // 1/(N_s k) * ||err||_F / ||ref||_F
  double unprefixed = 0.0;  //             ||err||_F / ||ref||_F
};

// Re-projection error of Y_ref through V Vᵀ; n_s and k feed the prefactor.
RelError reprojection_error(const ReducedBasis& basis, const Eigen::MatrixXd& y_ref, int n_s,
                            int k);

}  // namespace podnn::pod
