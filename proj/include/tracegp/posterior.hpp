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

#ifndef TRACEGP_POSTERIOR_HPP
#define TRACEGP_POSTERIOR_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tracegp/common.hpp"
#include "tracegp/kernels.hpp"
#include "tracegp/meanfit.hpp"

namespace tracegp::posterior {

using kernels::KernelBasis;
using kernels::KernelMatrix;
using meanfit::MeanModel;
using meanfit::SparseObservations;

using IndexPair = std::pair<Index, Index>;

/// Posterior process over matrix entries: Kronecker prior covariance
/// K_N (x) K_M conditioned on the entries in train_index.
struct PosteriorGP {
  KernelMatrix kernel_m;
  KernelMatrix kernel_n;
  std::vector<IndexPair> train_index;
  double sigma2 = 1.0;
  MeanModel mean_model;
};

struct FactorModel {
  Matrix u;  // M x F
  Matrix v;  // N x F
};

namespace detail {

inline void check_index_range(const std::vector<IndexPair>& idx, Index m_dim,
                              Index n_dim, const char* what) {
  for (const auto& [m, n] : idx) {
    if (m < 0 || m >= m_dim || n < 0 || n >= n_dim) {
      throw DataError(std::string(what) + ": index out of range: (" +
                      std::to_string(m) + ", " + std::to_string(n) + ")");
    }
  }
}

// Kronecker covariance restricted to two index lists:
// K((m,n),(m',n')) = K_M(m,m') * K_N(n,n').
inline Matrix kron_cov(const Matrix& km, const Matrix& kn,
                       const std::vector<IndexPair>& a,
                       const std::vector<IndexPair>& b) {
  Matrix out(static_cast<Index>(a.size()), static_cast<Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      out(static_cast<Index>(i), static_cast<Index>(j)) =
          km(a[i].first, b[j].first) * kn(a[i].second, b[j].second);
    }
  }
  return out;
}

inline bool has_duplicates(const std::vector<IndexPair>& idx, Index n_cols) {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(idx.size());
  for (const auto& [m, n] : idx) {
    const std::uint64_t key =
        static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(n_cols) +
        static_cast<std::uint64_t>(n);
    if (!seen.insert(key).second) return true;
  }
  return false;
}

}  // namespace detail

/// Posterior mean over the full M x N grid:
///   Phi(m, n) = k_T(m, n) (K_TT + sigma^2 I)^{-1} r
/// with the Kronecker prior covariance restricted to the training set.
/// Oracle-scale only: forms the |T| x |T| system.
inline Matrix posterior_mean_closed_form(const KernelMatrix& k_m, const KernelMatrix& k_n,
                                         const std::vector<IndexPair>& t, const Vector& r,
                                         double sigma2) {
  if (t.empty()) throw DataError("posterior_mean_closed_form: empty training set");
  if (static_cast<Index>(t.size()) != r.size()) {
    throw DataError("posterior_mean_closed_form: index/value size mismatch");
  }
  if (sigma2 < 0.0) throw DataError("sigma2 must be nonnegative");
  detail::check_index_range(t, k_m.dim(), k_n.dim(), "posterior_mean_closed_form");
  if (sigma2 == 0.0 && detail::has_duplicates(t, k_n.dim())) {
    throw DataError(
        "posterior_mean_closed_form: singular system (duplicate indices with sigma2 = 0)");
  }
  Matrix ktt = detail::kron_cov(k_m.entries, k_n.entries, t, t);
  ktt.diagonal().array() += sigma2;
  const Vector w = llt_with_jitter(ktt).solve(r);
  // Phi = K_M W K_N with W the solution scattered over the training cells.
  Matrix scatter = Matrix::Zero(k_m.dim(), k_n.dim());
  for (std::size_t i = 0; i < t.size(); ++i) {
    scatter(t[i].first, t[i].second) += w(static_cast<Index>(i));
  }
  return k_m.entries * scatter * k_n.entries;
}

/// Posterior covariance over a query batch:
///   S_q = K_qq - K_qT (K_TT + sigma^2 I)^{-1} K_Tq.
/// Never materializes the MN x MN joint; memory is O(|T|^2 + |q| |T|).
inline Matrix posterior_covariance(const PosteriorGP& gp,
                                   const std::vector<IndexPair>& queries) {
  if (queries.empty()) throw DataError("posterior_covariance: empty query batch");
  detail::check_index_range(queries, gp.kernel_m.dim(), gp.kernel_n.dim(),
                            "posterior_covariance");
  detail::check_index_range(gp.train_index, gp.kernel_m.dim(), gp.kernel_n.dim(),
                            "posterior_covariance");
  const Matrix kqq =
      detail::kron_cov(gp.kernel_m.entries, gp.kernel_n.entries, queries, queries);
  if (gp.train_index.empty()) return kqq;  // no conditioning
  if (gp.sigma2 < 0.0) throw DataError("sigma2 must be nonnegative");
  if (gp.sigma2 == 0.0 && detail::has_duplicates(gp.train_index, gp.kernel_n.dim())) {
    throw DataError(
        "posterior_covariance: singular system (duplicate indices with sigma2 = 0)");
  }
  Matrix ktt = detail::kron_cov(gp.kernel_m.entries, gp.kernel_n.entries,
                                gp.train_index, gp.train_index);
  ktt.diagonal().array() += gp.sigma2;
  const Matrix kqt = detail::kron_cov(gp.kernel_m.entries, gp.kernel_n.entries, queries,
                                      gp.train_index);
  Matrix s = kqq - kqt * llt_with_jitter(ktt).solve(kqt.transpose());
  s = 0.5 * (s + s.transpose()).eval();
  return s;
}

/// Exact draw from GP(0, K_N (x) K_M): Z = G_M W G_N^T with W i.i.d. standard
/// normal, since cov(vec Z) = K_N (x) K_M. Deterministic under the seed.
inline Matrix sample_prior(const KernelMatrix& k_m, const KernelMatrix& k_n,
                           std::uint64_t seed) {
  const KernelBasis gm = kernels::kernel_basis(k_m);
  const KernelBasis gn = kernels::kernel_basis(k_n);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix w(gm.dim(), gn.dim());
  for (Index i = 0; i < w.rows(); ++i) {
    for (Index j = 0; j < w.cols(); ++j) w(i, j) = normal(rng);
  }
  return gm.entries * w * gn.entries.transpose();
}

/// Low-rank prior draw for synthetic experiments: the mixing matrix is the
/// product of two i.i.d. normal factors of the requested rank.
inline Matrix sample_prior_low_rank(const KernelMatrix& k_m, const KernelMatrix& k_n,
                                    Index rank, std::uint64_t seed) {
  if (rank < 1) throw DataError("sample_prior_low_rank: rank must be >= 1");
  const KernelBasis gm = kernels::kernel_basis(k_m);
  const KernelBasis gn = kernels::kernel_basis(k_n);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix w1(gm.dim(), rank), w2(gn.dim(), rank);
  for (Index i = 0; i < w1.rows(); ++i) {
    for (Index j = 0; j < rank; ++j) w1(i, j) = normal(rng);
  }
  for (Index i = 0; i < w2.rows(); ++i) {
    for (Index j = 0; j < rank; ++j) w2(i, j) = normal(rng);
  }
  return gm.entries * (w1 * w2.transpose()) * gn.entries.transpose();
}

struct FactorFitResult {
  FactorModel model;
  double objective = 0.0;
  std::vector<double> objective_trace;  // best restart
  bool jittered = false;
  bool converged = false;
};

namespace detail {

// Exact minimization over U of
//   (1/sigma^2) sum_T (r - u_m.v_n)^2 + tr(U^T Km^{-1} U)
// for fixed V, via the (M F) x (M F) normal equations scaled by sigma^2.
// Rows of U couple through Km^{-1}; the data term is block diagonal per row.
inline Matrix solve_factor_side(const SparseObservations& data, const Matrix& km_inv,
                                const Matrix& other, Index dim, Index rank,
                                double sigma2, bool row_side, JitterReport* jr) {
  const Index size = dim * rank;
  Matrix a = Matrix::Zero(size, size);
  Vector c = Vector::Zero(size);
  for (const meanfit::Observation& t : data.triples) {
    const Index self = row_side ? t.row : t.col;
    const Index peer = row_side ? t.col : t.row;
    const auto block = other.row(peer);
    a.block(self * rank, self * rank, rank, rank) += block.transpose() * block;
    c.segment(self * rank, rank) += t.value * block.transpose();
  }
  for (Index i = 0; i < dim; ++i) {
    for (Index j = 0; j < dim; ++j) {
      const double w = sigma2 * km_inv(i, j);
      for (Index f = 0; f < rank; ++f) a(i * rank + f, j * rank + f) += w;
    }
  }
  const Vector x = llt_with_jitter(a, jr, 1e-10, 1e-4).solve(c);
  Matrix out(dim, rank);
  for (Index i = 0; i < dim; ++i) out.row(i) = x.segment(i * rank, rank).transpose();
  return out;
}

inline double factor_objective(const SparseObservations& data, const Matrix& u,
                               const Matrix& v, const Matrix& km_inv,
                               const Matrix& kn_inv, double sigma2) {
  double sse = 0.0;
  for (const meanfit::Observation& t : data.triples) {
    const double res = t.value - u.row(t.row).dot(v.row(t.col));
    sse += res * res;
  }
  return sse / sigma2 + (u.transpose() * km_inv * u).trace() +
         (v.transpose() * kn_inv * v).trace();
}

}  // namespace detail

/// MAP estimate of the factor model by alternating exact ridge solves for
/// U | V and V | U. The objective is non-increasing per half-step; the
/// problem is non-convex, so the best of `restarts` random initializations
/// is returned with no global-optimality guarantee.
inline FactorFitResult factor_gp_map(const SparseObservations& data,
                                     const KernelMatrix& k_m, const KernelMatrix& k_n,
                                     Index f, double sigma2, int restarts = 5,
                                     std::uint64_t seed = 0) {
  data.validate();
  if (f < 1) throw DataError("factor_gp_map: rank F must be >= 1");
  if (sigma2 <= 0.0) throw DataError("factor_gp_map: sigma2 must be positive");
  if (k_m.dim() != data.n_rows || k_n.dim() != data.n_cols) {
    throw DataError("factor_gp_map: kernel dims do not match observation dims");
  }
  if (restarts < 1) throw DataError("factor_gp_map: restarts must be >= 1");

  const Index m = data.n_rows;
  const Index n = data.n_cols;
  Matrix km_inv = llt_with_jitter(k_m.entries).solve(Matrix::Identity(m, m));
  km_inv = 0.5 * (km_inv + km_inv.transpose()).eval();
  Matrix kn_inv = llt_with_jitter(k_n.entries).solve(Matrix::Identity(n, n));
  kn_inv = 0.5 * (kn_inv + kn_inv.transpose()).eval();

  constexpr int kMaxIter = 500;
  constexpr double kRelTol = 1e-12;

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double init_scale = 1.0 / std::sqrt(static_cast<double>(f));

  FactorFitResult best;
  best.objective = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < restarts; ++restart) {
    Matrix u(m, f), v(n, f);
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < f; ++j) u(i, j) = normal(rng) * init_scale;
    }
    for (Index i = 0; i < n; ++i) {
      for (Index j = 0; j < f; ++j) v(i, j) = normal(rng) * init_scale;
    }
    FactorFitResult cur;
    Matrix best_u = u;
    Matrix best_v = v;
    cur.objective = detail::factor_objective(data, u, v, km_inv, kn_inv, sigma2);
    cur.objective_trace.push_back(cur.objective);
    for (int it = 0; it < kMaxIter; ++it) {
      JitterReport jr;
      u = detail::solve_factor_side(data, km_inv, v, m, f, sigma2, true, &jr);
      cur.jittered = cur.jittered || jr.jittered;
      JitterReport jr2;
      v = detail::solve_factor_side(data, kn_inv, u, n, f, sigma2, false, &jr2);
      cur.jittered = cur.jittered || jr2.jittered;
      const double obj = detail::factor_objective(data, u, v, km_inv, kn_inv, sigma2);
      const double prev = cur.objective_trace.back();
      if (obj < cur.objective) {
        cur.objective = obj;
        best_u = u;
        best_v = v;
      }
      cur.objective_trace.push_back(std::min(obj, prev));
      if (std::abs(prev - obj) <= kRelTol * std::max(1.0, std::abs(prev))) {
        cur.converged = true;
        break;
      }
    }
    cur.model = FactorModel{std::move(best_u), std::move(best_v)};
    if (cur.objective < best.objective) best = std::move(cur);
  }
  return best;
}

/// Both sides of the low-rank bound on the trace norm:
///   lhs = 1/2 (||U||_F^2 + ||V||_F^2), rhs = ||U V^T||_tr.
/// Always lhs >= rhs; equality holds for the balanced factorization
/// U = A S^{1/2}, V = B S^{1/2} from an SVD A S B^T.
inline std::pair<double, double> variational_trace_identity(const Matrix& u,
                                                            const Matrix& v) {
  if (u.cols() != v.cols()) {
    throw DataError("variational_trace_identity: factor ranks differ");
  }
  const double lhs = 0.5 * (u.squaredNorm() + v.squaredNorm());
  const double rhs = meanfit::trace_norm(u * v.transpose());
  return {lhs, rhs};
}

}  // namespace tracegp::posterior

#endif  // TRACEGP_POSTERIOR_HPP
