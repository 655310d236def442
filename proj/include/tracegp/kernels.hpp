/*
 * Copyright 2026 The tracegp authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef TRACEGP_KERNELS_HPP
#define TRACEGP_KERNELS_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tracegp/common.hpp"

namespace tracegp::kernels {

// Relative tolerances for the covariance-matrix invariants.
inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kPsdTol = 1e-8;
inline constexpr double kDefaultEigFloor = 1e-10;

struct GraphEdge {
  Index i = 0;
  Index j = 0;
  double w = 1.0;
};

/// Undirected weighted graph. Each edge may be stored once; it is always
/// interpreted symmetrically. Self-loops and negative weights are rejected.
class GraphAdjacency {
 public:
  GraphAdjacency(Index n_nodes, std::vector<GraphEdge> edges)
      : n_nodes_(n_nodes), edges_(std::move(edges)) {
    if (n_nodes_ <= 0) throw DataError("graph must have at least one node");
    for (const GraphEdge& e : edges_) {
      if (e.i < 0 || e.i >= n_nodes_ || e.j < 0 || e.j >= n_nodes_) {
        throw DataError("graph edge endpoint out of range: (" +
                        std::to_string(e.i) + ", " + std::to_string(e.j) + ")");
      }
      if (e.i == e.j) {
        throw DataError("self-loop rejected at node " + std::to_string(e.i));
      }
      if (e.w < 0.0 || !std::isfinite(e.w)) {
        throw DataError("negative or non-finite edge weight rejected: " +
                        std::to_string(e.w));
      }
    }
  }

  Index n_nodes() const { return n_nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }

  /// Dense symmetric adjacency matrix; duplicate edge lines accumulate.
  Matrix adjacency() const {
    Matrix a = Matrix::Zero(n_nodes_, n_nodes_);
    for (const GraphEdge& e : edges_) {
      a(e.i, e.j) += e.w;
      a(e.j, e.i) += e.w;
    }
    return a;
  }

 private:
  Index n_nodes_;
  std::vector<GraphEdge> edges_;
};

/// L = I - D^{-1/2} A D^{-1/2} with D_ii the row sums of A. Isolated nodes
/// (zero degree) use D^{-1/2} = 0, giving L_ii = 1 with zero off-diagonals.
inline Matrix normalized_laplacian(const GraphAdjacency& g) {
  const Matrix a = g.adjacency();
  const Index n = g.n_nodes();
  Vector d_inv_sqrt(n);
  for (Index i = 0; i < n; ++i) {
    const double deg = a.row(i).sum();
    d_inv_sqrt(i) = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Matrix l = -(d_inv_sqrt.asDiagonal() * a * d_inv_sqrt.asDiagonal());
  l.diagonal().array() += 1.0;
  return l;
}

inline void validate_kernel_entries(const Matrix& k) {
  if (k.rows() != k.cols() || k.rows() == 0) {
    throw DataError("kernel matrix must be square and non-empty");
  }
  const double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
  const double asym = (k - k.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTol * scale) {
    throw DataError("kernel matrix not symmetric: max asymmetry " +
                    std::to_string(asym));
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(k, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues().maxCoeff();
  const double lmin = es.eigenvalues().minCoeff();
  if (lmin < -kPsdTol * std::max(lmax, 0.0)) {
    throw NumericalError("kernel matrix not PSD within tolerance: min eigenvalue " +
                         std::to_string(lmin) + ", max eigenvalue " +
                         std::to_string(lmax));
  }
}

/// Dense symmetric PSD covariance matrix. The constructor enforces symmetry
/// to 1e-10 relative and eigenvalues >= -1e-8 * (max eigenvalue).
struct KernelMatrix {
  Matrix entries;

  explicit KernelMatrix(Matrix m) : entries(std::move(m)) {
    validate_kernel_entries(entries);
  }

  Index dim() const { return entries.rows(); }
};

/// K = U exp(-Lambda) U^T through the symmetric eigendecomposition of L,
/// optionally shifted by the identity.
inline KernelMatrix exponential_kernel(const Matrix& laplacian,
                                       bool add_identity) {
  if (laplacian.rows() != laplacian.cols() || laplacian.rows() == 0) {
    throw DataError("laplacian must be square and non-empty");
  }
  const double scale = std::max(1.0, laplacian.cwiseAbs().maxCoeff());
  const double asym = (laplacian - laplacian.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTol * scale) {
    throw DataError("exponential_kernel requires a symmetric matrix");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(laplacian);
  if (es.info() != Eigen::Success) {
    throw NumericalError("eigendecomposition failed in exponential_kernel");
  }
  const Vector expvals = (-es.eigenvalues().array()).exp();
  Matrix k = es.eigenvectors() * expvals.asDiagonal() *
             es.eigenvectors().transpose();
  if (add_identity) k.diagonal().array() += 1.0;
  k = 0.5 * (k + k.transpose()).eval();
  return KernelMatrix(std::move(k));
}

/// Factor G with G G^T = K. Columns are ordered by decreasing eigenvalue;
/// eigenvalues below eig_floor * lambda_max are clamped to zero and dropped,
/// so dim() tracks the effective rank of K.
struct KernelBasis {
  Matrix entries;  // rows x dim

  Index rows() const { return entries.rows(); }
  Index dim() const { return entries.cols(); }
};

inline KernelBasis kernel_basis(const KernelMatrix& k,
                                double eig_floor = kDefaultEigFloor) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(k.entries);
  if (es.info() != Eigen::Success) {
    throw NumericalError("eigendecomposition failed in kernel_basis");
  }
  const Vector& lam = es.eigenvalues();  // ascending
  const Index n = k.dim();
  const double lmax = std::max(lam(n - 1), 0.0);
  if (lam(0) < -kPsdTol * lmax) {
    throw NumericalError(
        "kernel_basis: matrix outside PSD tolerance (min eigenvalue " +
        std::to_string(lam(0)) + " vs max " + std::to_string(lmax) + ")");
  }
  std::vector<Index> kept;
  for (Index i = n - 1; i >= 0; --i) {
    if (lam(i) > 0.0 && lam(i) >= eig_floor * lmax) kept.push_back(i);
  }
  Matrix g(n, static_cast<Index>(kept.size()));
  for (Index c = 0; c < static_cast<Index>(kept.size()); ++c) {
    g.col(c) = es.eigenvectors().col(kept[c]) * std::sqrt(lam(kept[c]));
  }
  return KernelBasis{std::move(g)};
}

}  // namespace tracegp::kernels

#endif  // TRACEGP_KERNELS_HPP
