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

#ifndef TRACEGP_EVAL_HPP
#define TRACEGP_EVAL_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tracegp/common.hpp"
#include "tracegp/meanfit.hpp"
#include "tracegp/ranking.hpp"

namespace tracegp::eval {

using meanfit::MeanModel;
using ranking::LabeledObservations;

inline constexpr int kCurveLength = 100;

/// Macro-averaged ranking metrics with full curves at k = 1..100.
struct RankMetrics {
  double auc = 0.0;
  double map100 = 0.0;
  std::array<double, kCurveLength> precision_at{};
  std::array<double, kCurveLength> recall_at{};
  int n_tasks_evaluated = 0;  // tasks contributing to precision/recall/MAP
  int n_tasks_auc = 0;        // tasks with both classes in the filtered pool
  int n_tasks_excluded_no_positive = 0;
  int n_tasks_excluded_single_class = 0;
};

/// Fraction of correctly ordered positive/negative pairs, half credit for
/// ties. Sort-based, but exactly equal to the O(d^2) pair count: credits are
/// accumulated as integers (doubled). Single-class input yields nullopt.
inline std::optional<double> auc(const Vector& scores, const std::vector<int>& labels) {
  if (scores.size() != static_cast<Index>(labels.size())) {
    throw DataError("auc: size mismatch");
  }
  const Index d = scores.size();
  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(),
            [&scores](Index a, Index b) { return scores(a) < scores(b); });

  std::int64_t credit2 = 0;  // doubled pair credit
  std::int64_t n_pos = 0, n_neg = 0, negs_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::int64_t tie_pos = 0, tie_neg = 0;
    while (j < order.size() && scores(order[j]) == scores(order[i])) {
      if (labels[static_cast<std::size_t>(order[j])] == 1) {
        ++tie_pos;
      } else {
        ++tie_neg;
      }
      ++j;
    }
    credit2 += tie_pos * (2 * negs_below + tie_neg);
    negs_below += tie_neg;
    n_pos += tie_pos;
    n_neg += tie_neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return static_cast<double>(credit2) / (2.0 * static_cast<double>(n_pos) *
                                         static_cast<double>(n_neg));
}

/// sorted_labels is the +1/-1 label vector ordered by descending predicted
/// score (ties broken by ascending item index upstream).
inline double precision_at_k(const std::vector<int>& sorted_labels, int k) {
  if (k < 1) throw DataError("precision_at_k: k must be >= 1");
  int hits = 0;
  const int limit = std::min<int>(k, static_cast<int>(sorted_labels.size()));
  for (int l = 0; l < limit; ++l) hits += sorted_labels[static_cast<std::size_t>(l)] == 1;
  return static_cast<double>(hits) / static_cast<double>(k);
}

inline double recall_at_k(const std::vector<int>& sorted_labels, int k, int g_m) {
  if (k < 1) throw DataError("recall_at_k: k must be >= 1");
  if (g_m < 1) throw DataError("recall_at_k: no relevant items");
  int hits = 0;
  const int limit = std::min<int>(k, static_cast<int>(sorted_labels.size()));
  for (int l = 0; l < limit; ++l) hits += sorted_labels[static_cast<std::size_t>(l)] == 1;
  return static_cast<double>(hits) / static_cast<double>(std::min(g_m, k));
}

inline double average_precision_at(const std::vector<int>& sorted_labels, int k, int g_m) {
  if (k < 1) throw DataError("average_precision_at: k must be >= 1");
  if (g_m < 1) throw DataError("average_precision_at: no relevant items");
  double sum = 0.0;
  int hits = 0;
  const int limit = std::min<int>(k, static_cast<int>(sorted_labels.size()));
  for (int l = 0; l < limit; ++l) {
    if (sorted_labels[static_cast<std::size_t>(l)] == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(l + 1);
    }
  }
  return sum / static_cast<double>(std::min(g_m, k));
}

using ScoreFn = std::function<double(Index, Index)>;

/// Full evaluation protocol: per task, items observed positive in training
/// are removed from the candidate pool, the remaining items are ranked by
/// score (ties by ascending index), and metrics are macro-averaged over the
/// tasks that retain at least one relevant item.
inline RankMetrics evaluate(const ScoreFn& scores, const LabeledObservations& test_labels,
                            const std::vector<std::pair<Index, Index>>& train_positives) {
  test_labels.validate();
  const Index m_rows = test_labels.n_rows;
  const Index n_cols = test_labels.n_cols;

  std::vector<std::unordered_set<Index>> train_pos(static_cast<std::size_t>(m_rows));
  for (const auto& [m, n] : train_positives) {
    if (m < 0 || m >= m_rows || n < 0 || n >= n_cols) {
      throw DataError("evaluate: train positive out of range");
    }
    train_pos[static_cast<std::size_t>(m)].insert(n);
  }
  std::vector<std::unordered_set<Index>> relevant(static_cast<std::size_t>(m_rows));
  for (const ranking::LabeledObservation& t : test_labels.triples) {
    if (t.label == 1) relevant[static_cast<std::size_t>(t.row)].insert(t.col);
  }

  RankMetrics out;
  double auc_sum = 0.0;
  double map_sum = 0.0;
  std::array<double, kCurveLength> prec_sum{};
  std::array<double, kCurveLength> rec_sum{};

  std::vector<std::pair<double, Index>> pool;
  for (Index m = 0; m < m_rows; ++m) {
    const auto& rel = relevant[static_cast<std::size_t>(m)];
    if (rel.empty()) continue;  // no test positives: task not in the average

    pool.clear();
    int g_m = 0;
    for (Index n = 0; n < n_cols; ++n) {
      if (train_pos[static_cast<std::size_t>(m)].count(n) > 0) continue;
      pool.emplace_back(scores(m, n), n);
      g_m += rel.count(n) > 0 ? 1 : 0;
    }
    if (g_m == 0) {
      ++out.n_tasks_excluded_no_positive;
      continue;
    }
    // descending score, ties by ascending item index
    std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::vector<int> sorted_labels(pool.size());
    Vector pool_scores(static_cast<Index>(pool.size()));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      sorted_labels[i] = rel.count(pool[i].second) > 0 ? 1 : -1;
      pool_scores(static_cast<Index>(i)) = pool[i].first;
    }

    ++out.n_tasks_evaluated;
    map_sum += average_precision_at(sorted_labels, kCurveLength, g_m);
    for (int k = 1; k <= kCurveLength; ++k) {
      prec_sum[static_cast<std::size_t>(k - 1)] += precision_at_k(sorted_labels, k);
      rec_sum[static_cast<std::size_t>(k - 1)] += recall_at_k(sorted_labels, k, g_m);
    }
    const std::optional<double> task_auc = auc(pool_scores, sorted_labels);
    if (task_auc.has_value()) {
      auc_sum += *task_auc;
      ++out.n_tasks_auc;
    } else {
      ++out.n_tasks_excluded_single_class;
    }
  }

  if (out.n_tasks_evaluated == 0) {
    throw DataError("evaluate: no task retains an evaluable positive");
  }
  out.map100 = map_sum / out.n_tasks_evaluated;
  for (int k = 0; k < kCurveLength; ++k) {
    out.precision_at[static_cast<std::size_t>(k)] =
        prec_sum[static_cast<std::size_t>(k)] / out.n_tasks_evaluated;
    out.recall_at[static_cast<std::size_t>(k)] =
        rec_sum[static_cast<std::size_t>(k)] / out.n_tasks_evaluated;
  }
  out.auc = out.n_tasks_auc > 0 ? auc_sum / out.n_tasks_auc : 0.0;
  return out;
}

/// n_sets uniform samples without replacement from the cells not listed as
/// positives. Deterministic under the seed; sets are disjoint from the
/// positives but independent of each other.
inline std::vector<std::vector<std::pair<Index, Index>>> sample_negatives(
    const std::vector<std::pair<Index, Index>>& positives, Index m_rows, Index n_cols,
    int n_sets, std::size_t per_set_size, std::uint64_t seed) {
  if (m_rows < 1 || n_cols < 1) throw DataError("sample_negatives: empty grid");
  if (n_sets < 1) throw DataError("sample_negatives: n_sets must be >= 1");
  std::unordered_set<std::uint64_t> pos_keys;
  pos_keys.reserve(positives.size());
  for (const auto& [m, n] : positives) {
    if (m < 0 || m >= m_rows || n < 0 || n >= n_cols) {
      throw DataError("sample_negatives: positive out of range");
    }
    pos_keys.insert(static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(n_cols) +
                    static_cast<std::uint64_t>(n));
  }
  std::vector<std::uint64_t> complement;
  complement.reserve(static_cast<std::size_t>(m_rows) * static_cast<std::size_t>(n_cols) -
                     pos_keys.size());
  for (Index m = 0; m < m_rows; ++m) {
    for (Index n = 0; n < n_cols; ++n) {
      const std::uint64_t key =
          static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(n_cols) +
          static_cast<std::uint64_t>(n);
      if (pos_keys.count(key) == 0) complement.push_back(key);
    }
  }
  if (per_set_size == 0 || per_set_size > complement.size()) {
    throw DataError("sample_negatives: infeasible set size " +
                    std::to_string(per_set_size) + " with " +
                    std::to_string(complement.size()) + " unobserved cells");
  }

  Rng rng(seed);
  std::vector<std::vector<std::pair<Index, Index>>> sets;
  sets.reserve(static_cast<std::size_t>(n_sets));
  std::vector<std::uint64_t> cells = complement;
  for (int s = 0; s < n_sets; ++s) {
    cells = complement;
    for (std::size_t i = 0; i < per_set_size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, cells.size() - 1);
      std::swap(cells[i], cells[pick(rng)]);
    }
    std::vector<std::pair<Index, Index>> chosen(per_set_size);
    for (std::size_t i = 0; i < per_set_size; ++i) {
      chosen[i] = {static_cast<Index>(cells[i] / static_cast<std::uint64_t>(n_cols)),
                   static_cast<Index>(cells[i] % static_cast<std::uint64_t>(n_cols))};
    }
    std::sort(chosen.begin(), chosen.end());
    sets.push_back(std::move(chosen));
  }
  return sets;
}

/// Arithmetic mean of bias-free predictions across models.
inline Vector ensemble_scores(const std::vector<MeanModel>& models,
                              const std::vector<std::pair<Index, Index>>& queries) {
  if (models.empty()) throw DataError("ensemble_scores: no models");
  Vector sum = Vector::Zero(static_cast<Index>(queries.size()));
  for (const MeanModel& model : models) {
    sum += meanfit::predict(model, queries, /*include_bias=*/false);
  }
  return sum / static_cast<double>(models.size());
}

enum class SplitMode { kEntrywise, kRowwise };

struct SplitPlan {
  SplitMode mode = SplitMode::kEntrywise;
  std::array<std::vector<std::size_t>, 5> folds;  // observation indices
  std::uint64_t seed = 0;
};

/// Five-fold split plan over observation indices. Entrywise mode shuffles the
/// observations; rowwise mode shuffles the distinct rows and keeps all of a
/// row's observations in one fold.
inline SplitPlan make_splits(const std::vector<Index>& observation_rows, SplitMode mode,
                             std::uint64_t seed) {
  SplitPlan plan;
  plan.mode = mode;
  plan.seed = seed;
  Rng rng(seed);
  if (mode == SplitMode::kEntrywise) {
    if (observation_rows.size() < 5) {
      throw DataError("make_splits: need at least 5 observations");
    }
    std::vector<std::size_t> order(observation_rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
      plan.folds[i % 5].push_back(order[i]);
    }
  } else {
    std::vector<Index> rows = observation_rows;
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    if (rows.size() < 5) {
      throw DataError("make_splits: need at least 5 distinct rows with observations");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    std::vector<int> fold_of_row;
    Index max_row = *std::max_element(rows.begin(), rows.end());
    fold_of_row.assign(static_cast<std::size_t>(max_row) + 1, -1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      fold_of_row[static_cast<std::size_t>(rows[i])] = static_cast<int>(i % 5);
    }
    for (std::size_t i = 0; i < observation_rows.size(); ++i) {
      plan.folds[static_cast<std::size_t>(
                     fold_of_row[static_cast<std::size_t>(observation_rows[i])])]
          .push_back(i);
    }
  }
  for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
  return plan;
}

struct CvCell {
  double alpha = 0.0;
  double lambda = 0.0;
  double map100 = 0.0;
};

/// Grid cell maximizing mean validation MAP@100; ties go to the larger
/// lambda, then the larger alpha.
inline std::pair<double, double> select_model(const std::vector<CvCell>& cells) {
  if (cells.empty()) throw DataError("select_model: empty grid");
  const CvCell* best = &cells.front();
  for (const CvCell& c : cells) {
    if (c.map100 > best->map100 ||
        (c.map100 == best->map100 &&
         (c.lambda > best->lambda ||
          (c.lambda == best->lambda && c.alpha > best->alpha)))) {
      best = &c;
    }
  }
  return {best->alpha, best->lambda};
}

}  // namespace tracegp::eval

#endif  // TRACEGP_EVAL_HPP
