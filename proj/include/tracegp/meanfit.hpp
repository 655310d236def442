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

#ifndef TRACEGP_MEANFIT_HPP
#define TRACEGP_MEANFIT_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tracegp/common.hpp"
#include "tracegp/kernels.hpp"

namespace tracegp::meanfit {

using kernels::KernelBasis;

struct Observation {
  Index row = 0;
  Index col = 0;
  double value = 0.0;
};

/// Partially observed matrix entries over an M x N index grid.
struct SparseObservations {
  Index n_rows = 0;
  Index n_cols = 0;
  std::vector<Observation> triples;

  void validate() const {
    if (n_rows <= 0 || n_cols <= 0) throw DataError("observation dims must be positive");
    if (triples.empty()) throw DataError("observations must be nonempty");
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(triples.size());
    for (const Observation& t : triples) {
      if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols) {
        throw DataError("observation index out of range: (" + std::to_string(t.row) +
                        ", " + std::to_string(t.col) + ")");
      }
      if (!std::isfinite(t.value)) throw DataError("non-finite observation value");
      const std::uint64_t key = static_cast<std::uint64_t>(t.row) *
                                    static_cast<std::uint64_t>(n_cols) +
                                static_cast<std::uint64_t>(t.col);
      if (!seen.insert(key).second) {
        throw DataError("duplicate observation at (" + std::to_string(t.row) + ", " +
                        std::to_string(t.col) + ")");
      }
    }
  }
};

struct Hyperparams {
  double lambda = 0.0;   // total regularization weight
  double alpha = 1.0;    // trace/Frobenius mix in [0, 1]
  double sigma2 = 1.0;   // observation noise variance
  int max_iter = 2000;
  double tol = 1e-6;     // relative proximal fixed-point tolerance
  int factor_rank = 1;   // rank F of the factor baseline
  std::optional<double> trace_bound;  // recorded metadata; solved via the penalty form
  bool use_row_bias = false;

  void validate() const {
    if (lambda < 0.0 || !std::isfinite(lambda)) throw DataError("lambda must be >= 0");
    if (alpha < 0.0 || alpha > 1.0) throw DataError("alpha must be in [0, 1]");
    if (sigma2 <= 0.0) throw DataError("sigma2 must be positive");
    if (tol <= 0.0) throw DataError("tol must be positive");
    if (max_iter < 1) throw DataError("max_iter must be >= 1");
    if (trace_bound.has_value() && *trace_bound < 0.0) {
      throw DataError("trace_bound must be nonnegative");
    }
  }
};

/// Mean function in basis coordinates: psi(m, n) = G_M(m) B G_N(n)^T, plus
/// per-row offsets b_m (zero for rows unseen in training).
struct MeanModel {
  Matrix b;             // D_M x D_N
  KernelBasis basis_m;  // M x D_M
  KernelBasis basis_n;  // N x D_N
  Vector row_bias;      // length M; zeros when biases are disabled
};

struct FitReport {
  std::vector<double> objective_trace;
  int iterations = 0;
  double stationarity = std::numeric_limits<double>::infinity();
  Index rank_of_b = 0;
  bool converged = false;
};

inline double hilbert_norm_sq(const MeanModel& model) { return model.b.squaredNorm(); }

inline double trace_norm(const Matrix& b) {
  if (b.size() == 0) return 0.0;
  if (!b.allFinite()) throw NumericalError("trace_norm: non-finite entries");
  return singular_values(b).sum();
}

inline double spectral_elastic_net(const Matrix& b, double a, double bw) {
  if (b.size() == 0) return 0.0;
  const Vector sv = singular_values(b);
  return a * sv.squaredNorm() + bw * sv.sum();
}

namespace detail {

// Predictions at the observed entries, aligned with data.triples.
inline Vector predictions_at(const SparseObservations& data, const Matrix& gm,
                             const Matrix& gn, const Matrix& b) {
  Vector out(static_cast<Index>(data.triples.size()));
  if (b.size() == 0) {
    out.setZero();
    return out;
  }
  const Matrix u = gm * b;  // M x D_N
  for (std::size_t i = 0; i < data.triples.size(); ++i) {
    const Observation& t = data.triples[i];
    out(static_cast<Index>(i)) = u.row(t.row).dot(gn.row(t.col));
  }
  return out;
}

inline Vector residuals_from(const SparseObservations& data, const Vector& predictions,
                             const Vector& row_bias) {
  Vector res(static_cast<Index>(data.triples.size()));
  for (std::size_t i = 0; i < data.triples.size(); ++i) {
    const Observation& t = data.triples[i];
    const double bias = row_bias.size() > 0 ? row_bias(t.row) : 0.0;
    res(static_cast<Index>(i)) = t.value - predictions(static_cast<Index>(i)) - bias;
  }
  return res;
}

// G_M^T R G_N where R is the sparse residual matrix scattered over M x N.
inline Matrix basis_scatter(const SparseObservations& data, const Matrix& gm,
                            const Matrix& gn, const Vector& residuals) {
  Matrix rg = Matrix::Zero(gm.rows(), gn.cols());
  for (std::size_t i = 0; i < data.triples.size(); ++i) {
    const Observation& t = data.triples[i];
    rg.row(t.row) += residuals(static_cast<Index>(i)) * gn.row(t.col);
  }
  return gm.transpose() * rg;
}

struct SvtResult {
  Matrix value;
  double trace_norm = 0.0;
};

// Singular value soft-thresholding: prox of thresh * ||.||_tr.
inline SvtResult svt(const Matrix& a, double thresh) {
  if (thresh <= 0.0) return {a, 0.0};
  if (!a.allFinite()) {
    throw NumericalError("svt: non-finite entries in the proximal step input");
  }
  const ThinSvd svd = thin_svd(a);
  Index kept = 0;
  double tn = 0.0;
  Vector sv = svd.values;
  for (Index i = 0; i < sv.size(); ++i) {
    sv(i) = std::max(sv(i) - thresh, 0.0);
    if (sv(i) > 0.0) {
      ++kept;
      tn += sv(i);
    }
  }
  if (kept == 0) return {Matrix::Zero(a.rows(), a.cols()), 0.0};
  SvtResult out;
  out.value = svd.u.leftCols(kept) * sv.head(kept).asDiagonal() *
              svd.v.leftCols(kept).transpose();
  out.trace_norm = tn;
  return out;
}

inline Index numerical_rank(const Matrix& b) {
  if (b.size() == 0) return 0;
  const Vector sv = singular_values(b);
  const double top = sv.size() > 0 ? sv(0) : 0.0;
  if (top <= 0.0) return 0;
  Index r = 0;
  for (Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > 1e-8 * top) ++r;
  }
  return r;
}

}  // namespace detail

/// Exact value of the regularized objective:
///   1/2 sum (r - psi - b_m)^2 + lambda(1-alpha)/2 ||B||_F^2 + lambda alpha ||B||_tr
inline double objective(const MeanModel& model, const SparseObservations& data,
                        const Hyperparams& h) {
  const Vector pred =
      detail::predictions_at(data, model.basis_m.entries, model.basis_n.entries, model.b);
  const Vector res = detail::residuals_from(data, pred, model.row_bias);
  double value = 0.5 * res.squaredNorm() +
                 0.5 * h.lambda * (1.0 - h.alpha) * model.b.squaredNorm();
  if (h.lambda * h.alpha > 0.0) value += h.lambda * h.alpha * trace_norm(model.b);
  return value;
}

/// Largest singular value of the loss gradient at B = 0, i.e.
/// sigma_max(G_M^T R G_N) over the (bias-adjusted) observed residuals.
/// B = 0 is optimal exactly when lambda * alpha >= this value.
inline double lambda_max(const SparseObservations& data, const KernelBasis& g_m,
                         const KernelBasis& g_n, const Vector& row_bias = Vector()) {
  data.validate();
  if (g_m.rows() != data.n_rows || g_n.rows() != data.n_cols) {
    throw DataError("lambda_max: basis rows do not match observation dims");
  }
  Vector zeros = Vector::Zero(static_cast<Index>(data.triples.size()));
  const Vector res = detail::residuals_from(data, zeros, row_bias);
  if (res.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  return operator_norm(detail::basis_scatter(data, g_m.entries, g_n.entries, res));
}

/// Closed-form row offsets: b_m = mean residual over row m's observations;
/// rows without observations get 0.
inline Vector fit_row_bias(const SparseObservations& data,
                           const Vector& predictions_without_bias) {
  if (predictions_without_bias.size() != static_cast<Index>(data.triples.size())) {
    throw DataError("fit_row_bias: predictions not aligned with observations");
  }
  Vector sums = Vector::Zero(data.n_rows);
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(data.n_rows);
  for (std::size_t i = 0; i < data.triples.size(); ++i) {
    const Observation& t = data.triples[i];
    sums(t.row) += t.value - predictions_without_bias(static_cast<Index>(i));
    counts(t.row) += 1;
  }
  for (Index m = 0; m < data.n_rows; ++m) {
    sums(m) = counts(m) > 0 ? sums(m) / counts(m) : 0.0;
  }
  return sums;
}

inline Vector predict(const MeanModel& model,
                      const std::vector<std::pair<Index, Index>>& queries,
                      bool include_bias) {
  Vector out(static_cast<Index>(queries.size()));
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto [m, n] = queries[i];
    if (m < 0 || m >= model.basis_m.rows() || n < 0 || n >= model.basis_n.rows()) {
      throw DataError("predict: query index out of range: (" + std::to_string(m) +
                      ", " + std::to_string(n) + ")");
    }
    double v = model.b.size() > 0
                   ? model.basis_m.entries.row(m).dot(
                         (model.b * model.basis_n.entries.row(n).transpose()).col(0))
                   : 0.0;
    if (include_bias && model.row_bias.size() > 0) v += model.row_bias(m);
    out(static_cast<Index>(i)) = v;
  }
  return out;
}

/// Full M x N prediction matrix G_M B G_N^T (+ row offsets when requested).
inline Matrix dense_predictions(const MeanModel& model, bool include_bias) {
  Matrix psi = model.basis_m.entries * model.b * model.basis_n.entries.transpose();
  if (include_bias && model.row_bias.size() > 0) psi.colwise() += model.row_bias;
  return psi;
}

/// Solves the spectral-elastic-net regression
///   min_B 1/2 sum_T (r - b_m - (G_M B G_N^T))^2
///         + lambda(1-alpha)/2 ||B||_F^2 + lambda alpha ||B||_tr
/// by monotone accelerated proximal gradient with singular value
/// soft-thresholding and a backtracking line search. Row offsets, when
/// enabled, are re-estimated in closed form between proximal epochs.
inline std::pair<MeanModel, FitReport> fit(const SparseObservations& data,
                                           const KernelBasis& g_m, const KernelBasis& g_n,
                                           const Hyperparams& h,
                                           const MeanModel* init = nullptr) {
  data.validate();
  h.validate();
  if (g_m.rows() != data.n_rows || g_n.rows() != data.n_cols) {
    throw DataError("fit: basis rows do not match observation dims");
  }
  const Index d_m = g_m.dim();
  const Index d_n = g_n.dim();
  const Matrix& gm = g_m.entries;
  const Matrix& gn = g_n.entries;
  const double lam_f = h.lambda * (1.0 - h.alpha);
  const double lam_t = h.lambda * h.alpha;

  MeanModel model;
  model.basis_m = g_m;
  model.basis_n = g_n;
  model.row_bias = Vector::Zero(data.n_rows);
  FitReport report;

  const Index n_obs = static_cast<Index>(data.triples.size());
  const Vector zero_pred = Vector::Zero(n_obs);

  // Subgradient zero rule: B = 0 (with closed-form offsets) is the global
  // optimum whenever lambda * alpha >= sigma_max of the gradient at zero.
  {
    Vector bias0 = h.use_row_bias ? fit_row_bias(data, zero_pred) : Vector::Zero(data.n_rows);
    const Vector res0 = detail::residuals_from(data, zero_pred, bias0);
    const double lmax = res0.cwiseAbs().maxCoeff() == 0.0
                            ? 0.0
                            : operator_norm(detail::basis_scatter(data, gm, gn, res0));
    if (lam_t >= lmax) {
      model.b = Matrix::Zero(d_m, d_n);
      model.row_bias = bias0;
      report.objective_trace = {0.5 * res0.squaredNorm()};
      report.converged = true;
      report.stationarity = 0.0;
      report.rank_of_b = 0;
      return {std::move(model), std::move(report)};
    }
  }

  Matrix x = Matrix::Zero(d_m, d_n);
  if (init != nullptr && init->b.size() > 0) {
    if (init->b.rows() != d_m || init->b.cols() != d_n) {
      throw DataError("fit: init model dimensions do not match bases");
    }
    x = init->b;
  }
  Vector bias = Vector::Zero(data.n_rows);

  auto smooth_value = [&](const Matrix& b, Vector* res_out) {
    const Vector pred = detail::predictions_at(data, gm, gn, b);
    const Vector res = detail::residuals_from(data, pred, bias);
    if (res_out != nullptr) *res_out = res;
    return 0.5 * res.squaredNorm() + 0.5 * lam_f * b.squaredNorm();
  };
  auto smooth_grad = [&](const Matrix& b, const Vector& res) {
    Matrix g = -detail::basis_scatter(data, gm, gn, res);
    if (lam_f > 0.0) g += lam_f * b;
    return g;
  };
  auto full_value = [&](const Matrix& b) {
    double v = smooth_value(b, nullptr);
    if (lam_t > 0.0) v += lam_t * trace_norm(b);
    return v;
  };

  const double lip0 = operator_norm(gm) * operator_norm(gm) * operator_norm(gn) *
                          operator_norm(gn) +
                      lam_f;
  double eta = lip0 > 0.0 ? 1.0 / lip0 : 1.0;

  if (h.use_row_bias) {
    bias = fit_row_bias(data, detail::predictions_at(data, gm, gn, x));
  }
  double f_x = full_value(x);
  report.objective_trace.push_back(f_x);

  const int max_bias_passes = h.use_row_bias ? 50 : 1;
  for (int pass = 0; pass < max_bias_passes; ++pass) {
    // Monotone accelerated proximal gradient on B with the offsets fixed.
    Matrix y = x;
    double t_momentum = 1.0;
    bool apg_converged = false;
    while (report.iterations < h.max_iter) {
      ++report.iterations;
      Vector res_y;
      const double f_smooth_y = smooth_value(y, &res_y);
      const Matrix grad_y = smooth_grad(y, res_y);

      detail::SvtResult z;
      double f_smooth_z = 0.0;
      while (true) {
        z = detail::svt(y - eta * grad_y, eta * lam_t);
        f_smooth_z = smooth_value(z.value, nullptr);
        const Matrix diff = z.value - y;
        const double quad = f_smooth_y + grad_y.cwiseProduct(diff).sum() +
                            diff.squaredNorm() / (2.0 * eta);
        if (f_smooth_z <= quad + 1e-12 * std::max(1.0, std::abs(quad))) break;
        eta *= 0.5;
        if (eta < 1e-18 / std::max(lip0, 1.0)) {
          throw NumericalError("fit: backtracking line search collapsed");
        }
      }
      const double f_z = f_smooth_z + lam_t * z.trace_norm;

      Matrix x_new = f_z <= f_x ? z.value : x;
      const double f_new = std::min(f_z, f_x);

      // The prox residual at the momentum point is free here and approaches
      // the fixed-point residual at the iterate near convergence; the exact
      // check (an extra gradient and SVT) runs only once it looks small.
      const double residual_at_y = (y - z.value).norm() / std::max(1.0, y.norm());
      bool checked_exact = false;
      if (residual_at_y <= 2.0 * h.tol || report.iterations >= h.max_iter) {
        Vector res_x;
        smooth_value(x_new, &res_x);
        const Matrix grad_x = smooth_grad(x_new, res_x);
        const detail::SvtResult p = detail::svt(x_new - eta * grad_x, eta * lam_t);
        report.stationarity =
            (x_new - p.value).norm() / std::max(1.0, x_new.norm());
        checked_exact = true;
      }
      report.objective_trace.push_back(f_new);

      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_momentum * t_momentum));
      y = x_new + (t_momentum / t_next) * (z.value - x_new) +
          ((t_momentum - 1.0) / t_next) * (x_new - x);
      x = std::move(x_new);
      f_x = f_new;
      t_momentum = t_next;

      if (checked_exact && report.stationarity <= h.tol) {
        apg_converged = true;
        break;
      }
    }

    if (!h.use_row_bias) {
      report.converged = apg_converged;
      break;
    }

    const Vector new_bias = fit_row_bias(data, detail::predictions_at(data, gm, gn, x));
    const double bias_delta = (new_bias - bias).norm() / std::max(1.0, bias.norm());
    const Vector old_bias = bias;
    bias = new_bias;
    const double f_with_new_bias = full_value(x);
    if (f_with_new_bias <= f_x) {
      f_x = f_with_new_bias;
      report.objective_trace.push_back(f_x);
    } else {
      bias = old_bias;  // roundoff tie: keep the objective non-increasing
    }
    if (bias_delta <= h.tol && apg_converged) {
      report.converged = true;
      break;
    }
    if (report.iterations >= h.max_iter) {
      report.converged = false;
      break;
    }
  }

  report.rank_of_b = detail::numerical_rank(x);
  model.b = std::move(x);
  model.row_bias = bias;
  return {std::move(model), std::move(report)};
}

/// Default warm-start grid: `count` multipliers of lambda_max, logarithmically
/// spaced and descending from s_max to s_min.
inline std::vector<double> default_s_grid(int count = 30, double s_min = 1e-3,
                                          double s_max = 1.0) {
  if (count < 1 || s_min <= 0.0 || s_max < s_min) throw DataError("invalid s grid");
  std::vector<double> grid(static_cast<std::size_t>(count));
  if (count == 1) {
    grid[0] = s_max;
    return grid;
  }
  const double lo = std::log(s_min);
  const double hi = std::log(s_max);
  for (int i = 0; i < count; ++i) {
    grid[static_cast<std::size_t>(i)] =
        std::exp(hi + (lo - hi) * static_cast<double>(i) / (count - 1));
  }
  grid.front() = s_max;
  grid.back() = s_min;
  return grid;
}

struct PathEntry {
  double alpha = 0.0;
  double s = 0.0;
  double lambda = 0.0;
  MeanModel model;
  FitReport report;
  std::string error;  // empty on success
};

/// Fits every (alpha, s) grid point with lambda = s * lambda_max, iterating s
/// descending and seeding each fit with the previous solution on its alpha
/// branch. Per-point failures are recorded without aborting the path.
inline std::vector<PathEntry> fit_path(const SparseObservations& data,
                                       const KernelBasis& g_m, const KernelBasis& g_n,
                                       const std::vector<double>& alphas,
                                       const std::vector<double>& s_grid,
                                       const Hyperparams& base) {
  if (alphas.empty() || s_grid.empty()) throw DataError("fit_path: empty grid");
  for (std::size_t i = 0; i + 1 < s_grid.size(); ++i) {
    if (s_grid[i] < s_grid[i + 1]) throw DataError("fit_path: s_grid must be descending");
  }
  for (double s : s_grid) {
    if (s <= 0.0 || s > 1.0) throw DataError("fit_path: s values must lie in (0, 1]");
  }
  data.validate();
  Vector bias0 = Vector();
  if (base.use_row_bias) {
    bias0 = fit_row_bias(data, Vector::Zero(static_cast<Index>(data.triples.size())));
  }
  const double lmax = lambda_max(data, g_m, g_n, bias0);

  std::vector<PathEntry> out;
  out.reserve(alphas.size() * s_grid.size());
  for (double alpha : alphas) {
    std::optional<MeanModel> warm;
    for (double s : s_grid) {
      PathEntry entry;
      entry.alpha = alpha;
      entry.s = s;
      entry.lambda = s * lmax;
      Hyperparams h = base;
      h.alpha = alpha;
      h.lambda = entry.lambda;
      try {
        auto [model, rep] = fit(data, g_m, g_n, h, warm ? &*warm : nullptr);
        entry.model = model;
        entry.report = std::move(rep);
        warm = std::move(model);
      } catch (const std::exception& e) {
        entry.error = e.what();
      }
      out.push_back(std::move(entry));
    }
  }
  return out;
}

}  // namespace tracegp::meanfit

#endif  // TRACEGP_MEANFIT_HPP
