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

#include "tracegp/kernels.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "test_oracles.hpp"

using namespace tracegp;
using namespace tracegp::kernels;

namespace {

GraphAdjacency triangle() {
  return GraphAdjacency(3, {{0, 1, 1.0}, {1, 2, 1.0}, {0, 2, 1.0}});
}

}  // namespace

TEST(GraphAdjacency, RejectsBadInput) {
  EXPECT_THROW(GraphAdjacency(2, {{0, 1, -0.5}}), DataError);  // negative weight
  EXPECT_THROW(GraphAdjacency(2, {{0, 0, 1.0}}), DataError);   // self loop
  EXPECT_THROW(GraphAdjacency(2, {{0, 2, 1.0}}), DataError);   // out of range
  EXPECT_THROW(GraphAdjacency(0, {}), DataError);
}

TEST(GraphAdjacency, SymmetrizesSingleListedEdges) {
  const GraphAdjacency g(3, {{0, 1, 2.0}});
  const Matrix a = g.adjacency();
  EXPECT_DOUBLE_EQ(a(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(a(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(a(2, 2), 0.0);
}

TEST(NormalizedLaplacian, SingleIsolatedNode) {
  const GraphAdjacency g(1, {});
  const Matrix l = normalized_laplacian(g);
  ASSERT_EQ(l.rows(), 1);
  EXPECT_DOUBLE_EQ(l(0, 0), 1.0);
}

TEST(NormalizedLaplacian, TwoNodeUnitEdge) {
  const GraphAdjacency g(2, {{0, 1, 1.0}});
  const Matrix l = normalized_laplacian(g);
  Matrix expected(2, 2);
  expected << 1.0, -1.0, -1.0, 1.0;
  EXPECT_LT((l - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(NormalizedLaplacian, TriangleMatchesDenseFormulaOracle) {
  const GraphAdjacency g = triangle();
  const Matrix l = normalized_laplacian(g);
  // all degrees 2, so L = I - A/2
  const Matrix expected = Matrix::Identity(3, 3) - g.adjacency() / 2.0;
  EXPECT_LT((l - expected).cwiseAbs().maxCoeff(), 1e-15);

  // dense formula oracle on a weighted random graph
  Rng rng(7);
  std::uniform_real_distribution<double> uni(0.1, 3.0);
  std::vector<GraphEdge> edges;
  for (Index i = 0; i < 6; ++i) {
    for (Index j = i + 1; j < 6; ++j) {
      if ((i + j) % 2 == 0) edges.push_back({i, j, uni(rng)});
    }
  }
  const GraphAdjacency g2(6, edges);
  const Matrix a = g2.adjacency();
  Matrix d_inv_sqrt = Matrix::Zero(6, 6);
  for (Index i = 0; i < 6; ++i) {
    const double deg = a.row(i).sum();
    d_inv_sqrt(i, i) = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  const Matrix oracle = Matrix::Identity(6, 6) - d_inv_sqrt * a * d_inv_sqrt;
  EXPECT_LT((normalized_laplacian(g2) - oracle).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(NormalizedLaplacian, IsolatedNodeConvention) {
  const GraphAdjacency g(3, {{0, 1, 1.0}});  // node 2 isolated
  const Matrix l = normalized_laplacian(g);
  EXPECT_DOUBLE_EQ(l(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(l(2, 0), 0.0);
  EXPECT_DOUBLE_EQ(l(0, 2), 0.0);
}

TEST(ExponentialKernel, ZeroLaplacianGivesIdentity) {
  const Matrix l = Matrix::Zero(4, 4);
  const KernelMatrix k = exponential_kernel(l, false);
  EXPECT_LT((k.entries - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-14);
  const KernelMatrix k2 = exponential_kernel(l, true);
  EXPECT_LT((k2.entries - 2.0 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ExponentialKernel, ScalarCase) {
  Matrix l(1, 1);
  l << 1.0;
  const KernelMatrix k = exponential_kernel(l, false);
  EXPECT_NEAR(k.entries(0, 0), std::exp(-1.0), 1e-15);
}

TEST(ExponentialKernel, TwoNodeEigenvaluesWithIdentity) {
  const GraphAdjacency g(2, {{0, 1, 1.0}});
  const KernelMatrix k = exponential_kernel(normalized_laplacian(g), true);
  Eigen::SelfAdjointEigenSolver<Matrix> es(k.entries, Eigen::EigenvaluesOnly);
  // Laplacian eigenvalues 0 and 2, so the kernel has e^0 + 1 and e^-2 + 1.
  EXPECT_NEAR(es.eigenvalues()(0), std::exp(-2.0) + 1.0, 1e-12);
  EXPECT_NEAR(es.eigenvalues()(1), 2.0, 1e-12);
}

TEST(ExponentialKernel, RejectsNonSymmetric) {
  Matrix l(2, 2);
  l << 0.0, 1.0, 0.0, 0.0;
  EXPECT_THROW(exponential_kernel(l, false), DataError);
}

TEST(ExponentialKernel, EigenvalueRangeProperty) {
  Rng rng(11);
  std::uniform_real_distribution<double> uni(0.2, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<GraphEdge> edges;
    const Index n = 8;
    for (Index i = 0; i < n; ++i) {
      for (Index j = i + 1; j < n; ++j) {
        if (rng() % 3 == 0) edges.push_back({i, j, uni(rng)});
      }
    }
    const GraphAdjacency g(n, edges);
    const Matrix l = normalized_laplacian(g);
    {
      const KernelMatrix k = exponential_kernel(l, false);
      Eigen::SelfAdjointEigenSolver<Matrix> es(k.entries, Eigen::EigenvaluesOnly);
      EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
      EXPECT_LE(es.eigenvalues().maxCoeff(), 1.0 + 1e-12);
    }
    {
      const KernelMatrix k = exponential_kernel(l, true);
      Eigen::SelfAdjointEigenSolver<Matrix> es(k.entries, Eigen::EigenvaluesOnly);
      EXPECT_GT(es.eigenvalues().minCoeff(), 1.0);
      EXPECT_LE(es.eigenvalues().maxCoeff(), 2.0 + 1e-12);
    }
  }
}

TEST(KernelMatrix, RejectsAsymmetric) {
  Matrix m(2, 2);
  m << 1.0, 0.5, 0.2, 1.0;
  EXPECT_THROW(KernelMatrix{m}, DataError);
}

TEST(KernelMatrix, RejectsIndefinite) {
  Matrix m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3 and -1
  EXPECT_THROW(KernelMatrix{m}, NumericalError);
}

TEST(KernelBasis, IdentityKernel) {
  const KernelMatrix k(Matrix::Identity(3, 3));
  const KernelBasis g = kernel_basis(k);
  EXPECT_EQ(g.dim(), 3);
  EXPECT_LT((g.entries * g.entries.transpose() - k.entries).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(KernelBasis, RankOneKernel) {
  Vector v(3);
  v << 1.0, -2.0, 0.5;
  const KernelMatrix k(v * v.transpose());
  const KernelBasis g = kernel_basis(k);
  EXPECT_EQ(g.dim(), 1);
  EXPECT_LT((g.entries * g.entries.transpose() - k.entries).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(KernelBasis, FloorDropsNullDirections) {
  Rng rng(3);
  const Matrix q = oracles::random_psd(3, rng, 1.0, 1.0);  // orthogonal-ish base
  Eigen::SelfAdjointEigenSolver<Matrix> es(q);
  Vector eigs(3);
  eigs << 1.0, 0.5, 1e-15;
  const Matrix k = es.eigenvectors() * eigs.asDiagonal() * es.eigenvectors().transpose();
  const KernelBasis g = kernel_basis(KernelMatrix(0.5 * (k + k.transpose())));
  EXPECT_EQ(g.dim(), 2);
}

TEST(KernelBasis, RoundTripOnRandomPsd) {
  Rng rng(42);
  for (Index dim : {5, 50, 200}) {
    const Matrix k = oracles::random_psd(dim, rng, 0.1, 4.0);
    const KernelMatrix kernel(k);
    const KernelBasis g = kernel_basis(kernel);
    const double rel = (g.entries * g.entries.transpose() - k).norm() / k.norm();
    EXPECT_LT(rel, 1e-8) << "dim " << dim;
  }
}

TEST(KernelBasis, ColumnsOrderedByEigenvalue) {
  Rng rng(5);
  const Matrix k = oracles::random_psd(6, rng, 0.1, 3.0);
  const KernelBasis g = kernel_basis(KernelMatrix(k));
  for (Index c = 0; c + 1 < g.dim(); ++c) {
    EXPECT_GE(g.entries.col(c).squaredNorm(), g.entries.col(c + 1).squaredNorm());
  }
}
