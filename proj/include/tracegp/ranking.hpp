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

#ifndef TRACEGP_RANKING_HPP
#define TRACEGP_RANKING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tracegp/common.hpp"
#include "tracegp/kernels.hpp"
#include "tracegp/meanfit.hpp"

namespace tracegp::ranking {

using kernels::KernelBasis;
using meanfit::Hyperparams;
using meanfit::MeanModel;
using meanfit::SparseObservations;

struct LabeledObservation {
  Index row = 0;
  Index col = 0;
  int label = 1;  // +1 or -1
};

struct LabeledObservations {
  Index n_rows = 0;
  Index n_cols = 0;
  std::vector<LabeledObservation> triples;

  void validate() const {
    if (n_rows <= 0 || n_cols <= 0) throw DataError("label dims must be positive");
    if (triples.empty()) throw DataError("labels must be nonempty");
    std::unordered_set<std::uint64_t> seen;
    seen.reserve(triples.size());
    for (const LabeledObservation& t : triples) {
      if (t.row < 0 || t.row >= n_rows || t.col < 0 || t.col >= n_cols) {
        throw DataError("label index out of range: (" + std::to_string(t.row) + ", " +
                        std::to_string(t.col) + ")");
      }
      if (t.label != 1 && t.label != -1) {
        throw DataError("labels must be +1 or -1, got " + std::to_string(t.label));
      }
      const std::uint64_t key = static_cast<std::uint64_t>(t.row) *
                                    static_cast<std::uint64_t>(n_cols) +
                                static_cast<std::uint64_t>(t.col);
      if (!seen.insert(key).second) {
        throw DataError("duplicate label at (" + std::to_string(t.row) + ", " +
                        std::to_string(t.col) + ")");
      }
    }
  }
};

/// One task's labeled items, columns ascending. Tasks without entries have
/// empty item lists.
struct TaskView {
  std::vector<Index> items;
  std::vector<int> labels;
};

inline std::vector<TaskView> task_views(const LabeledObservations& data) {
  std::vector<std::vector<std::pair<Index, int>>> per_row(
      static_cast<std::size_t>(data.n_rows));
  for (const LabeledObservation& t : data.triples) {
    per_row[static_cast<std::size_t>(t.row)].emplace_back(t.col, t.label);
  }
  std::vector<TaskView> out(static_cast<std::size_t>(data.n_rows));
  for (std::size_t m = 0; m < per_row.size(); ++m) {
    std::sort(per_row[m].begin(), per_row[m].end());
    out[m].items.reserve(per_row[m].size());
    out[m].labels.reserve(per_row[m].size());
    for (const auto& [col, label] : per_row[m]) {
      out[m].items.push_back(col);
      out[m].labels.push_back(label);
    }
  }
  return out;
}

/// Map from the simplex onto descending ordered-simplex vectors. The implicit
/// matrix has C(i, j) = 1/j for j >= i (1-indexed); both products run in O(d)
/// through suffix and prefix sums.
class OrderSimplexMap {
 public:
  explicit OrderSimplexMap(Index dim) : dim_(dim) {
    if (dim < 1) throw DataError("OrderSimplexMap: dimension must be >= 1");
  }

  Index dim() const { return dim_; }

  Vector apply(const Vector& x) const {
    if (x.size() != dim_) throw DataError("OrderSimplexMap::apply: size mismatch");
    Vector y(dim_);
    double acc = 0.0;
    for (Index i = dim_ - 1; i >= 0; --i) {
      acc += x(i) / static_cast<double>(i + 1);
      y(i) = acc;
    }
    return y;
  }

  Vector transpose_apply(const Vector& y) const {
    if (y.size() != dim_) throw DataError("OrderSimplexMap::transpose_apply: size mismatch");
    Vector out(dim_);
    double acc = 0.0;
    for (Index j = 0; j < dim_; ++j) {
      acc += y(j);
      out(j) = acc / static_cast<double>(j + 1);
    }
    return out;
  }

 private:
  Index dim_;
};

inline OrderSimplexMap build_c_apply(Index dim) { return OrderSimplexMap(dim); }

/// True iff min over positive scores >= max over negative scores; vacuously
/// true when either class is empty.
inline bool check_compatibility(const Vector& scores, const std::vector<int>& labels) {
  if (scores.size() != static_cast<Index>(labels.size())) {
    throw DataError("check_compatibility: size mismatch");
  }
  double min_pos = std::numeric_limits<double>::infinity();
  double max_neg = -std::numeric_limits<double>::infinity();
  bool has_pos = false, has_neg = false;
  for (Index i = 0; i < scores.size(); ++i) {
    if (labels[static_cast<std::size_t>(i)] == 1) {
      has_pos = true;
      min_pos = std::min(min_pos, scores(i));
    } else {
      has_neg = true;
      max_neg = std::max(max_neg, scores(i));
    }
  }
  if (!has_pos || !has_neg) return true;
  return min_pos >= max_neg;
}

/// Permutation placing positive items first, each class block sorted by score
/// descending with ties broken by ascending original index. Entry [slot]
/// holds the item position assigned to that slot.
inline std::vector<Index> block_sort_permutation(const Vector& psi,
                                                 const std::vector<int>& labels) {
  if (psi.size() != static_cast<Index>(labels.size())) {
    throw DataError("block_sort_permutation: size mismatch");
  }
  std::vector<Index> pos, neg;
  for (Index i = 0; i < psi.size(); ++i) {
    (labels[static_cast<std::size_t>(i)] == 1 ? pos : neg).push_back(i);
  }
  const auto by_score_desc = [&psi](Index a, Index b) { return psi(a) > psi(b); };
  std::stable_sort(pos.begin(), pos.end(), by_score_desc);
  std::stable_sort(neg.begin(), neg.end(), by_score_desc);
  pos.insert(pos.end(), neg.begin(), neg.end());
  return pos;
}

struct SimplexSolveOptions {
  int max_iter = 5000;
  double tol = 1e-8;
  double initial_step = 0.0;  // 0: derive from the map's Lipschitz bound
};

struct SimplexSolveResult {
  Vector x;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

inline Vector project_simplex(Vector v) {
  const Index d = v.size();
  std::vector<double> u(v.data(), v.data() + d);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double tau = 0.0;
  Index rho = 0;
  for (Index j = 0; j < d; ++j) {
    cumsum += u[static_cast<std::size_t>(j)];
    const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) {
      rho = j + 1;
      tau = t;
    }
  }
  (void)rho;
  for (Index i = 0; i < d; ++i) v(i) = std::max(v(i) - tau, 0.0);
  return v;
}

}  // namespace detail

/// min_x 1/2 ||C x - target||^2 over the probability simplex, by
/// exponentiated gradient with a backtracking step size; falls back to
/// projected gradient when the multiplicative updates stall. Termination is
/// by the linear-minimization gap max_s <x - s, grad> over the simplex.
inline SimplexSolveResult simplex_least_squares(const OrderSimplexMap& c,
                                                const Vector& target, Vector x0,
                                                const SimplexSolveOptions& opt = {}) {
  const Index d = c.dim();
  if (target.size() != d) throw DataError("simplex_least_squares: size mismatch");
  if (x0.size() != d) throw DataError("simplex_least_squares: bad start");
  if (opt.tol <= 0.0 || opt.max_iter < 1) throw DataError("simplex_least_squares: bad options");

  // Frobenius bound on ||C||_2^2: sum_j j * (1/j)^2 = H_d.
  double lipschitz = 0.0;
  for (Index j = 1; j <= d; ++j) lipschitz += 1.0 / static_cast<double>(j);
  double step = opt.initial_step > 0.0 ? opt.initial_step : 1.0 / lipschitz;

  auto objective_of = [&](const Vector& x) {
    return 0.5 * (c.apply(x) - target).squaredNorm();
  };
  auto gradient_of = [&](const Vector& x) {
    return c.transpose_apply(c.apply(x) - target);
  };

  SimplexSolveResult result;
  result.x = std::move(x0);
  result.objective = objective_of(result.x);

  bool use_projected = false;
  int stalled = 0;
  while (result.iterations < opt.max_iter) {
    ++result.iterations;
    const Vector grad = gradient_of(result.x);
    const double gap = result.x.dot(grad) - grad.minCoeff();
    if (gap <= opt.tol * std::max(1.0, result.objective)) {
      result.converged = true;
      break;
    }

    Vector candidate;
    double cand_obj = 0.0;
    bool accepted = false;
    double eta = step;
    for (int bt = 0; bt < 60; ++bt) {
      if (!use_projected) {
        candidate = result.x;
        double z = 0.0;
        const double gmin = grad.minCoeff();
        for (Index i = 0; i < d; ++i) {
          const double e = std::clamp(-eta * (grad(i) - gmin), -700.0, 700.0);
          candidate(i) *= std::exp(e);
          z += candidate(i);
        }
        if (z <= 0.0 || !std::isfinite(z)) {
          eta *= 0.5;
          continue;
        }
        candidate /= z;
      } else {
        candidate = detail::project_simplex(result.x - eta * grad);
      }
      cand_obj = objective_of(candidate);
      if (cand_obj <= result.objective) {
        accepted = true;
        break;
      }
      eta *= 0.5;
    }

    if (accepted && cand_obj < result.objective) {
      const double improvement = result.objective - cand_obj;
      result.x = std::move(candidate);
      result.objective = cand_obj;
      step = std::min(eta * 1.5, 1e6 / std::max(lipschitz, 1e-12));
      stalled = improvement <= 1e-16 * std::max(1.0, result.objective) ? stalled + 1 : 0;
    } else {
      ++stalled;
    }
    if (!use_projected && stalled >= 10) {
      use_projected = true;
      step = 1.0 / lipschitz;
      stalled = 0;
    }
  }
  return result;
}

/// Per-task retargeting state. `perm[slot]` is the item position occupying
/// slot `slot` of the sorted target; `r` holds the targets in item order.
struct TaskState {
  Vector x;
  Index k_pos = 0;
  std::vector<Index> perm;
  Vector r;
  bool inner_converged = true;
  bool trivial = false;  // single-class task; target fixed at the uniform image
};

struct RankingState {
  std::vector<TaskState> tasks;  // size M; empty x for tasks without entries
};

enum class InitX { kUniform, kRandomSimplex };

struct RankTrainConfig {
  Hyperparams hyperparams;
  int outer_max_iter = 100;
  double outer_tol = 1e-6;
  SimplexSolveOptions inner;
  InitX init_x = InitX::kUniform;
  std::uint64_t init_seed = 0;
};

namespace detail {

inline void set_trivial_state(TaskState& state, Index d, Index k_pos) {
  const OrderSimplexMap c(d);
  state.x = Vector::Constant(d, 1.0 / static_cast<double>(d));
  state.perm.resize(static_cast<std::size_t>(d));
  std::iota(state.perm.begin(), state.perm.end(), Index{0});
  state.r = c.apply(state.x);
  state.k_pos = k_pos;
  state.trivial = true;
  state.inner_converged = true;
}

}  // namespace detail

/// One retargeting pass for a task: block-sort the permutation against the
/// current scores, then solve the simplex-constrained least squares for x.
/// The resulting r is compatible with the labels by construction. Tasks with
/// an empty class keep the fixed uniform image.
inline void retarget_task(const Vector& psi, const std::vector<int>& labels,
                          TaskState& state, const SimplexSolveOptions& opt = {}) {
  const Index d = psi.size();
  if (d != static_cast<Index>(labels.size())) throw DataError("retarget_task: size mismatch");
  if (d == 0) throw DataError("retarget_task: empty task");
  Index n_pos = 0;
  for (int label : labels) n_pos += label == 1 ? 1 : 0;
  const Index n_neg = d - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    if (state.x.size() != d || !state.trivial) detail::set_trivial_state(state, d, n_pos);
    return;
  }

  state.trivial = false;
  state.k_pos = n_pos;
  state.perm = block_sort_permutation(psi, labels);
  Vector target(d);
  for (Index slot = 0; slot < d; ++slot) {
    target(slot) = psi(state.perm[static_cast<std::size_t>(slot)]);
  }
  if (state.x.size() != d) state.x = Vector::Constant(d, 1.0 / static_cast<double>(d));

  const OrderSimplexMap c(d);
  SimplexSolveResult solved = simplex_least_squares(c, target, state.x, opt);
  state.x = std::move(solved.x);
  state.inner_converged = solved.converged;
  const Vector y = c.apply(state.x);
  state.r.resize(d);
  for (Index slot = 0; slot < d; ++slot) {
    state.r(state.perm[static_cast<std::size_t>(slot)]) = y(slot);
  }
}

/// Joint cost of the alternating scheme, in the same parametrization the mean
/// fit minimizes:
///   1/2 sum (r - psi)^2 + lambda(1-alpha)/2 ||B||_F^2 + lambda alpha ||B||_tr
/// Returns +infinity when any task's targets violate compatibility.
inline double joint_objective(const MeanModel& model, const RankingState& state,
                              const LabeledObservations& data, const Hyperparams& h) {
  const std::vector<TaskView> tasks = task_views(data);
  if (state.tasks.size() != tasks.size()) {
    throw DataError("joint_objective: state does not match data");
  }
  const Matrix psi = meanfit::dense_predictions(model, h.use_row_bias);
  double sse = 0.0;
  for (std::size_t m = 0; m < tasks.size(); ++m) {
    const TaskView& task = tasks[m];
    if (task.items.empty()) continue;
    const TaskState& ts = state.tasks[m];
    if (ts.r.size() != static_cast<Index>(task.items.size())) {
      throw DataError("joint_objective: target size mismatch at task " + std::to_string(m));
    }
    if (!ts.trivial && !check_compatibility(ts.r, task.labels)) {
      return std::numeric_limits<double>::infinity();
    }
    for (std::size_t i = 0; i < task.items.size(); ++i) {
      const double res =
          ts.r(static_cast<Index>(i)) - psi(static_cast<Index>(m), task.items[i]);
      sse += res * res;
    }
  }
  double value = 0.5 * sse + 0.5 * h.lambda * (1.0 - h.alpha) * model.b.squaredNorm();
  if (h.lambda * h.alpha > 0.0) value += h.lambda * h.alpha * meanfit::trace_norm(model.b);
  return value;
}

struct TrainResult {
  MeanModel model;
  RankingState state;
  std::vector<double> objective_trace;  // evaluated after every half-step
  meanfit::FitReport last_fit;
  int outer_iterations = 0;
  bool converged = false;
  int tasks_inner_nonconverged = 0;
};

namespace detail {

inline SparseObservations targets_to_observations(const LabeledObservations& data,
                                                  const std::vector<TaskView>& tasks,
                                                  const RankingState& state) {
  SparseObservations obs;
  obs.n_rows = data.n_rows;
  obs.n_cols = data.n_cols;
  obs.triples.reserve(data.triples.size());
  for (std::size_t m = 0; m < tasks.size(); ++m) {
    const TaskView& task = tasks[m];
    for (std::size_t i = 0; i < task.items.size(); ++i) {
      obs.triples.push_back({static_cast<Index>(m), task.items[i],
                             state.tasks[m].r(static_cast<Index>(i))});
    }
  }
  return obs;
}

}  // namespace detail

/// Deterministic starting state: x uniform (or a seeded random simplex point)
/// and gamma taken at psi = 0, i.e. class blocks in ascending item order.
inline RankingState initial_state(const LabeledObservations& labels,
                                  InitX init_x = InitX::kUniform,
                                  std::uint64_t init_seed = 0) {
  const std::vector<TaskView> tasks = task_views(labels);
  RankingState state;
  state.tasks.resize(tasks.size());
  Rng rng(init_seed);
  std::exponential_distribution<double> expo(1.0);
  for (std::size_t m = 0; m < tasks.size(); ++m) {
    const TaskView& task = tasks[m];
    if (task.items.empty()) continue;
    const Index d = static_cast<Index>(task.items.size());
    Index n_pos = 0;
    for (int label : task.labels) n_pos += label == 1 ? 1 : 0;
    TaskState& ts = state.tasks[m];
    if (n_pos == 0 || n_pos == d) {
      detail::set_trivial_state(ts, d, n_pos);
      continue;
    }
    ts.k_pos = n_pos;
    ts.perm = block_sort_permutation(Vector::Zero(d), task.labels);
    if (init_x == InitX::kUniform) {
      ts.x = Vector::Constant(d, 1.0 / static_cast<double>(d));
    } else {
      ts.x.resize(d);
      double total = 0.0;
      for (Index i = 0; i < d; ++i) {
        ts.x(i) = expo(rng);
        total += ts.x(i);
      }
      ts.x /= total;
    }
    const OrderSimplexMap c(d);
    const Vector y = c.apply(ts.x);
    ts.r.resize(d);
    for (Index slot = 0; slot < d; ++slot) {
      ts.r(ts.perm[static_cast<std::size_t>(slot)]) = y(slot);
    }
  }
  return state;
}

/// The regression targets implied by the initial state; anchors the
/// lambda = s * lambda_max grid for the alternating trainer.
inline SparseObservations initial_targets(const LabeledObservations& labels) {
  return detail::targets_to_observations(labels, task_views(labels),
                                         initial_state(labels));
}

/// Alternating optimization: fit the mean on the current targets, then
/// re-target every task (block sort + simplex solve) against the new scores.
/// The joint objective is non-increasing at every half-step; tasks are
/// independent within an r-pass, so scheduling order cannot change results.
inline TrainResult train(const LabeledObservations& labels, const KernelBasis& g_m,
                         const KernelBasis& g_n, const RankTrainConfig& cfg,
                         const TrainResult* warm = nullptr) {
  labels.validate();
  if (g_m.rows() != labels.n_rows || g_n.rows() != labels.n_cols) {
    throw DataError("train: basis rows do not match label dims");
  }
  cfg.hyperparams.validate();
  const std::vector<TaskView> tasks = task_views(labels);

  TrainResult result;
  result.model.b = Matrix::Zero(g_m.dim(), g_n.dim());
  result.model.basis_m = g_m;
  result.model.basis_n = g_n;
  result.model.row_bias = Vector::Zero(labels.n_rows);
  result.state = initial_state(labels, cfg.init_x, cfg.init_seed);
  if (warm != nullptr) {
    if (warm->model.b.rows() == g_m.dim() && warm->model.b.cols() == g_n.dim() &&
        warm->state.tasks.size() == tasks.size()) {
      result.model = warm->model;
      result.state = warm->state;
    } else {
      throw DataError("train: warm start does not match problem dimensions");
    }
  }

  SparseObservations targets =
      detail::targets_to_observations(labels, tasks, result.state);
  double previous = joint_objective(result.model, result.state, labels, cfg.hyperparams);
  result.objective_trace.push_back(previous);

  for (int outer = 0; outer < cfg.outer_max_iter; ++outer) {
    ++result.outer_iterations;
    // psi-step: regularized regression onto the current targets.
    auto fitted = meanfit::fit(targets, g_m, g_n, cfg.hyperparams, &result.model);
    result.model = std::move(fitted.first);
    result.last_fit = std::move(fitted.second);
    result.objective_trace.push_back(
        joint_objective(result.model, result.state, labels, cfg.hyperparams));

    // r-step: per-task block sort and simplex solve against the new scores.
    const Matrix psi = meanfit::dense_predictions(result.model, cfg.hyperparams.use_row_bias);
    result.tasks_inner_nonconverged = 0;
    for (std::size_t m = 0; m < tasks.size(); ++m) {
      const TaskView& task = tasks[m];
      if (task.items.empty() || result.state.tasks[m].trivial) continue;
      Vector psi_m(static_cast<Index>(task.items.size()));
      for (std::size_t i = 0; i < task.items.size(); ++i) {
        psi_m(static_cast<Index>(i)) = psi(static_cast<Index>(m), task.items[i]);
      }
      retarget_task(psi_m, task.labels, result.state.tasks[m], cfg.inner);
      if (!result.state.tasks[m].inner_converged) ++result.tasks_inner_nonconverged;
    }
    targets = detail::targets_to_observations(labels, tasks, result.state);
    const double current =
        joint_objective(result.model, result.state, labels, cfg.hyperparams);
    result.objective_trace.push_back(current);

    if (std::abs(previous - current) <= cfg.outer_tol * std::max(1.0, std::abs(previous))) {
      result.converged = true;
      break;
    }
    previous = current;
  }
  return result;
}

/// Synthetic label generator: per row, the top-q entries of z (plus optional
/// Gaussian noise) are labeled +1 and a uniform sample of q other items is
/// labeled -1. Deterministic under the seed.
inline LabeledObservations sample_labels(const Matrix& z, Index positives_per_row,
                                         double noise_sigma2, std::uint64_t seed) {
  const Index m_rows = z.rows();
  const Index n_cols = z.cols();
  if (m_rows < 1 || n_cols < 1) throw DataError("sample_labels: empty score matrix");
  if (positives_per_row < 1) {
    throw DataError("sample_labels: positives_per_row must be >= 1");
  }
  if (positives_per_row >= n_cols) {
    throw DataError("sample_labels: positives_per_row must be < n_cols");
  }
  if (2 * positives_per_row > n_cols) {
    throw DataError("sample_labels: not enough items to draw matching negatives");
  }
  if (noise_sigma2 < 0.0) throw DataError("sample_labels: negative noise variance");

  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_sd = std::sqrt(noise_sigma2);

  LabeledObservations out;
  out.n_rows = m_rows;
  out.n_cols = n_cols;
  out.triples.reserve(static_cast<std::size_t>(2 * positives_per_row * m_rows));
  std::vector<Index> order(static_cast<std::size_t>(n_cols));
  for (Index m = 0; m < m_rows; ++m) {
    Vector scores = z.row(m).transpose();
    if (noise_sd > 0.0) {
      for (Index n = 0; n < n_cols; ++n) scores(n) += noise_sd * normal(rng);
    }
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&scores](Index a, Index b) { return scores(a) > scores(b); });
    std::vector<Index> positives(order.begin(), order.begin() + positives_per_row);
    std::vector<Index> rest(order.begin() + positives_per_row, order.end());
    // partial Fisher-Yates for a uniform sample without replacement
    for (Index i = 0; i < positives_per_row; ++i) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                      rest.size() - 1);
      std::swap(rest[static_cast<std::size_t>(i)], rest[pick(rng)]);
    }
    std::vector<std::pair<Index, int>> row_labels;
    row_labels.reserve(static_cast<std::size_t>(2 * positives_per_row));
    for (Index n : positives) row_labels.emplace_back(n, 1);
    for (Index i = 0; i < positives_per_row; ++i) {
      row_labels.emplace_back(rest[static_cast<std::size_t>(i)], -1);
    }
    std::sort(row_labels.begin(), row_labels.end());
    for (const auto& [n, label] : row_labels) out.triples.push_back({m, n, label});
  }
  return out;
}

}  // namespace tracegp::ranking

#endif  // TRACEGP_RANKING_HPP
