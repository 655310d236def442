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

#ifndef TRACEGP_CLI_HPP
#define TRACEGP_CLI_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tracegp/common.hpp"
#include "tracegp/eval.hpp"
#include "tracegp/io.hpp"
#include "tracegp/kernels.hpp"
#include "tracegp/meanfit.hpp"
#include "tracegp/posterior.hpp"
#include "tracegp/ranking.hpp"

namespace tracegp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Config-level failure (bad keys, missing seed, malformed config JSON).
/// Maps to exit code 1, while DataError maps to 2 and NumericalError to 3.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Declarative run description, loadable from a JSON config file. Command
/// line flags override individual keys. A seed is mandatory: every command
/// must be bit-reproducible from its config.
struct ExperimentConfig {
  fs::path row_graph;
  fs::path col_graph;
  fs::path labels;
  fs::path observations;
  fs::path output_dir = "out";
  std::optional<std::uint64_t> seed;

  bool add_identity = true;
  double eig_floor = 1e-10;

  std::vector<double> alphas = {1.0, 0.8, 0.6, 0.4, 0.0};
  int s_count = 30;
  double s_min = 1e-3;
  double s_max = 1.0;

  double sigma2 = 1.0;
  double fit_tol = 1e-6;
  int fit_max_iter = 2000;
  int outer_max_iter = 100;
  double outer_tol = 1e-6;
  int inner_max_iter = 5000;
  double inner_tol = 1e-8;
  bool use_row_bias = false;

  std::string eval_mode = "entrywise";  // or "rowwise"
  int n_negative_sets = 10;
  std::uint64_t negative_set_size = 0;  // 0: match the positive count
  double subsample_fraction = 1.0;      // fraction of positive associations kept

  Index synth_rank = 0;  // 0: full-rank prior draw
  Index positives_per_row = 10;
  double noise_sigma2 = 0.0;
  bool write_scores = true;

  ranking::RankTrainConfig train_config() const {
    ranking::RankTrainConfig cfg;
    cfg.hyperparams.sigma2 = sigma2;
    cfg.hyperparams.tol = fit_tol;
    cfg.hyperparams.max_iter = fit_max_iter;
    cfg.hyperparams.use_row_bias = use_row_bias;
    cfg.outer_max_iter = outer_max_iter;
    cfg.outer_tol = outer_tol;
    cfg.inner.max_iter = inner_max_iter;
    cfg.inner.tol = inner_tol;
    return cfg;
  }

  json echo() const {
    json j;
    j["paths"] = {{"row_graph", row_graph.string()},
                  {"col_graph", col_graph.string()},
                  {"labels", labels.string()},
                  {"observations", observations.string()},
                  {"output_dir", output_dir.string()}};
    j["seed"] = seed.has_value() ? json(*seed) : json(nullptr);
    j["kernel"] = {{"add_identity", add_identity}, {"eig_floor", eig_floor}};
    j["grid"] = {{"alphas", alphas}, {"s_count", s_count}, {"s_min", s_min},
                 {"s_max", s_max}};
    j["trainer"] = {{"sigma2", sigma2},
                    {"fit_tol", fit_tol},
                    {"fit_max_iter", fit_max_iter},
                    {"outer_max_iter", outer_max_iter},
                    {"outer_tol", outer_tol},
                    {"inner_max_iter", inner_max_iter},
                    {"inner_tol", inner_tol},
                    {"use_row_bias", use_row_bias}};
    j["eval"] = {{"mode", eval_mode},
                 {"n_negative_sets", n_negative_sets},
                 {"negative_set_size", negative_set_size},
                 {"subsample_fraction", subsample_fraction}};
    j["synth"] = {{"rank", synth_rank},
                  {"positives_per_row", positives_per_row},
                  {"noise_sigma2", noise_sigma2},
                  {"write_scores", write_scores}};
    return j;
  }
};

namespace detail {

template <typename T>
void read_key(const json& j, const char* key, T& target) {
  if (j.contains(key)) target = j.at(key).get<T>();
}

inline void read_path(const json& j, const char* key, fs::path& target) {
  if (j.contains(key)) target = fs::path(j.at(key).get<std::string>());
}

inline void reject_unknown(const json& j, const std::set<std::string>& known,
                           const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (known.count(key) == 0) {
      throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  detail::reject_unknown(
      j, {"paths", "seed", "kernel", "grid", "trainer", "eval", "synth"}, "top level");
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    detail::reject_unknown(
        p, {"row_graph", "col_graph", "labels", "observations", "output_dir"}, "paths");
    detail::read_path(p, "row_graph", cfg.row_graph);
    detail::read_path(p, "col_graph", cfg.col_graph);
    detail::read_path(p, "labels", cfg.labels);
    detail::read_path(p, "observations", cfg.observations);
    detail::read_path(p, "output_dir", cfg.output_dir);
  }
  if (j.contains("seed") && !j.at("seed").is_null()) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("kernel")) {
    const json& k = j.at("kernel");
    detail::reject_unknown(k, {"add_identity", "eig_floor"}, "kernel");
    detail::read_key(k, "add_identity", cfg.add_identity);
    detail::read_key(k, "eig_floor", cfg.eig_floor);
  }
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    detail::reject_unknown(g, {"alphas", "s_count", "s_min", "s_max"}, "grid");
    detail::read_key(g, "alphas", cfg.alphas);
    detail::read_key(g, "s_count", cfg.s_count);
    detail::read_key(g, "s_min", cfg.s_min);
    detail::read_key(g, "s_max", cfg.s_max);
  }
  if (j.contains("trainer")) {
    const json& t = j.at("trainer");
    detail::reject_unknown(t,
                           {"sigma2", "fit_tol", "fit_max_iter", "outer_max_iter",
                            "outer_tol", "inner_max_iter", "inner_tol", "use_row_bias"},
                           "trainer");
    detail::read_key(t, "sigma2", cfg.sigma2);
    detail::read_key(t, "fit_tol", cfg.fit_tol);
    detail::read_key(t, "fit_max_iter", cfg.fit_max_iter);
    detail::read_key(t, "outer_max_iter", cfg.outer_max_iter);
    detail::read_key(t, "outer_tol", cfg.outer_tol);
    detail::read_key(t, "inner_max_iter", cfg.inner_max_iter);
    detail::read_key(t, "inner_tol", cfg.inner_tol);
    detail::read_key(t, "use_row_bias", cfg.use_row_bias);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    detail::reject_unknown(
        e, {"mode", "n_negative_sets", "negative_set_size", "subsample_fraction"},
        "eval");
    detail::read_key(e, "mode", cfg.eval_mode);
    detail::read_key(e, "n_negative_sets", cfg.n_negative_sets);
    detail::read_key(e, "negative_set_size", cfg.negative_set_size);
    detail::read_key(e, "subsample_fraction", cfg.subsample_fraction);
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    detail::reject_unknown(
        s, {"rank", "positives_per_row", "noise_sigma2", "write_scores"}, "synth");
    detail::read_key(s, "rank", cfg.synth_rank);
    detail::read_key(s, "positives_per_row", cfg.positives_per_row);
    detail::read_key(s, "noise_sigma2", cfg.noise_sigma2);
    detail::read_key(s, "write_scores", cfg.write_scores);
  }
  if (cfg.eval_mode != "entrywise" && cfg.eval_mode != "rowwise") {
    throw ConfigError("config: eval mode must be 'entrywise' or 'rowwise'");
  }
  if (cfg.subsample_fraction <= 0.0 || cfg.subsample_fraction > 1.0) {
    throw ConfigError("config: subsample_fraction must be in (0, 1]");
  }
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

namespace detail {

inline void require_seed(const ExperimentConfig& cfg) {
  if (!cfg.seed.has_value()) {
    throw ConfigError("config: a seed is required (reproducibility contract)");
  }
}

inline void write_json(const fs::path& path, const json& j) {
  io::detail::atomic_write(path, [&](std::ostream& out) { out << j.dump(2) << "\n"; },
                           /*binary=*/false);
}

inline kernels::KernelMatrix kernel_for_side(const fs::path& graph_path, Index dim,
                                             bool add_identity, const char* side) {
  if (graph_path.empty()) {
    // no similarity graph on this side: independent units
    return kernels::KernelMatrix(Matrix::Identity(dim, dim));
  }
  const kernels::GraphAdjacency g = io::load_graph(graph_path);
  if (g.n_nodes() != dim) {
    throw DataError(std::string(side) + " graph has " + std::to_string(g.n_nodes()) +
                    " nodes but data expects " + std::to_string(dim));
  }
  return kernels::exponential_kernel(kernels::normalized_laplacian(g), add_identity);
}

inline json metrics_to_json(const eval::RankMetrics& m) {
  json j;
  j["auc"] = m.auc;
  j["map100"] = m.map100;
  j["p_at_100"] = m.precision_at.back();
  j["r_at_100"] = m.recall_at.back();
  j["precision_at"] = m.precision_at;
  j["recall_at"] = m.recall_at;
  j["n_tasks_evaluated"] = m.n_tasks_evaluated;
  j["n_tasks_auc"] = m.n_tasks_auc;
  j["n_tasks_excluded_no_positive"] = m.n_tasks_excluded_no_positive;
  j["n_tasks_excluded_single_class"] = m.n_tasks_excluded_single_class;
  return j;
}

inline std::vector<std::pair<Index, Index>> positive_cells(
    const ranking::LabeledObservations& labels) {
  std::vector<std::pair<Index, Index>> out;
  for (const ranking::LabeledObservation& t : labels.triples) {
    if (t.label == 1) out.emplace_back(t.row, t.col);
  }
  return out;
}

// Deterministic sub-sample of the positive associations.
inline std::vector<std::pair<Index, Index>> subsample_positives(
    std::vector<std::pair<Index, Index>> positives, double fraction, Rng& rng) {
  if (fraction >= 1.0) return positives;
  const std::size_t keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * positives.size())));
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, positives.size() - 1);
    std::swap(positives[i], positives[pick(rng)]);
  }
  positives.resize(keep);
  std::sort(positives.begin(), positives.end());
  return positives;
}

inline ranking::LabeledObservations combine_labels(
    Index n_rows, Index n_cols, const std::vector<std::pair<Index, Index>>& positives,
    const std::vector<std::pair<Index, Index>>& negatives) {
  ranking::LabeledObservations out;
  out.n_rows = n_rows;
  out.n_cols = n_cols;
  out.triples.reserve(positives.size() + negatives.size());
  for (const auto& [m, n] : positives) out.triples.push_back({m, n, 1});
  for (const auto& [m, n] : negatives) out.triples.push_back({m, n, -1});
  std::sort(out.triples.begin(), out.triples.end(),
            [](const ranking::LabeledObservation& a, const ranking::LabeledObservation& b) {
              return std::tie(a.row, a.col) < std::tie(b.row, b.col);
            });
  out.validate();
  return out;
}

struct TrainedGridPoint {
  int set_index = 0;
  double alpha = 0.0;
  double s = 0.0;
  double lambda = 0.0;
  double objective = 0.0;
  int outer_iterations = 0;
  bool converged = false;
  int tasks_inner_nonconverged = 0;
  std::vector<double> objective_trace;
  meanfit::MeanModel model;
  ranking::RankingState state;
};

// Trains the full (alpha, s) grid for one labeled set, warm-starting each
// alpha branch across descending s.
inline std::vector<TrainedGridPoint> train_grid(
    const ranking::LabeledObservations& labeled, const kernels::KernelBasis& gm,
    const kernels::KernelBasis& gn, const ExperimentConfig& cfg, int set_index) {
  // Anchor the lambda grid on row-centered initial targets: every feasible
  // target vector has row mean exactly 1/d, and that rank-one component
  // would otherwise dominate lambda_max and hence the whole grid scale.
  const meanfit::SparseObservations targets0 = ranking::initial_targets(labeled);
  const Vector bias0 = meanfit::fit_row_bias(
      targets0, Vector::Zero(static_cast<Index>(targets0.triples.size())));
  const double lambda_max0 = meanfit::lambda_max(targets0, gm, gn, bias0);
  const std::vector<double> s_grid =
      meanfit::default_s_grid(cfg.s_count, cfg.s_min, cfg.s_max);

  std::vector<TrainedGridPoint> out;
  ranking::RankTrainConfig tc = cfg.train_config();
  for (double alpha : cfg.alphas) {
    std::optional<ranking::TrainResult> warm;
    for (double s : s_grid) {
      tc.hyperparams.alpha = alpha;
      tc.hyperparams.lambda = s * lambda_max0;
      ranking::TrainResult result =
          ranking::train(labeled, gm, gn, tc, warm ? &*warm : nullptr);
      TrainedGridPoint point;
      point.set_index = set_index;
      point.alpha = alpha;
      point.s = s;
      point.lambda = tc.hyperparams.lambda;
      point.objective = result.objective_trace.back();
      point.outer_iterations = result.outer_iterations;
      point.converged = result.converged;
      point.tasks_inner_nonconverged = result.tasks_inner_nonconverged;
      point.objective_trace = result.objective_trace;
      point.model = result.model;
      point.state = result.state;
      out.push_back(std::move(point));
      warm = std::move(result);
    }
  }
  return out;
}

inline std::string grid_file_name(int set_index, std::size_t alpha_index,
                                  std::size_t s_index) {
  return "model_set" + std::to_string(set_index) + "_a" + std::to_string(alpha_index) +
         "_s" + std::to_string(s_index) + ".mvgm";
}

inline Matrix mean_dense_scores(const std::vector<meanfit::MeanModel>& models) {
  Matrix sum = meanfit::dense_predictions(models.front(), /*include_bias=*/false);
  for (std::size_t i = 1; i < models.size(); ++i) {
    sum += meanfit::dense_predictions(models[i], /*include_bias=*/false);
  }
  return sum / static_cast<double>(models.size());
}

inline double sample_std(const std::vector<double>& values, double mean) {
  if (values.size() < 2) return 0.0;
  double acc = 0.0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(values.size() - 1));
}

inline double mean_of(const std::vector<double>& values) {
  double acc = 0.0;
  for (double v : values) acc += v;
  return values.empty() ? 0.0 : acc / static_cast<double>(values.size());
}

}  // namespace detail

/// kernel: build the exponential graph kernel and its basis, write both as
/// binary matrix files, and report the spectrum.
inline void cmd_kernel(const fs::path& graph_path, const fs::path& out_path,
                       bool add_identity, double eig_floor, std::ostream& log = std::cout) {
  const kernels::GraphAdjacency g = io::load_graph(graph_path);
  const Matrix laplacian = kernels::normalized_laplacian(g);
  const kernels::KernelMatrix kernel = kernels::exponential_kernel(laplacian, add_identity);
  const kernels::KernelBasis basis = kernels::kernel_basis(kernel, eig_floor);

  io::save_matrix(out_path, kernel.entries);
  const fs::path basis_path = out_path.string() + ".basis";
  io::save_matrix(basis_path, basis.entries);

  Eigen::SelfAdjointEigenSolver<Matrix> es(kernel.entries, Eigen::EigenvaluesOnly);
  log << "kernel: dim=" << kernel.dim() << " eig_min=" << es.eigenvalues().minCoeff()
      << " eig_max=" << es.eigenvalues().maxCoeff() << " basis_dim=" << basis.dim()
      << "\n";
  log << "wrote " << out_path.string() << " and " << basis_path.string() << "\n";
}

/// train: negative sampling (unless the labels file already carries explicit
/// negatives), one alternating-trainer run per (set, alpha, s) grid point,
/// model files plus a manifest and objective-trace report.
inline void cmd_train(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
  detail::require_seed(cfg);
  if (cfg.labels.empty()) throw ConfigError("train: config must name a labels file");
  const ranking::LabeledObservations all = io::load_labels(cfg.labels);
  Rng rng(*cfg.seed);

  std::vector<std::pair<Index, Index>> positives = detail::positive_cells(all);
  std::vector<std::pair<Index, Index>> explicit_negatives;
  for (const ranking::LabeledObservation& t : all.triples) {
    if (t.label == -1) explicit_negatives.emplace_back(t.row, t.col);
  }
  positives = detail::subsample_positives(std::move(positives), cfg.subsample_fraction, rng);
  if (positives.empty()) throw DataError("train: no positive associations");

  const kernels::KernelMatrix km =
      detail::kernel_for_side(cfg.row_graph, all.n_rows, cfg.add_identity, "row");
  const kernels::KernelMatrix kn =
      detail::kernel_for_side(cfg.col_graph, all.n_cols, cfg.add_identity, "column");
  const kernels::KernelBasis gm = kernels::kernel_basis(km, cfg.eig_floor);
  const kernels::KernelBasis gn = kernels::kernel_basis(kn, cfg.eig_floor);

  std::vector<ranking::LabeledObservations> sets;
  if (!explicit_negatives.empty()) {
    sets.push_back(detail::combine_labels(all.n_rows, all.n_cols, positives,
                                          explicit_negatives));
  } else {
    const std::size_t per_set = cfg.negative_set_size > 0
                                    ? static_cast<std::size_t>(cfg.negative_set_size)
                                    : positives.size();
    const std::uint64_t neg_seed = rng();
    const auto neg_sets = eval::sample_negatives(positives, all.n_rows, all.n_cols,
                                                 cfg.n_negative_sets, per_set, neg_seed);
    for (const auto& negs : neg_sets) {
      sets.push_back(detail::combine_labels(all.n_rows, all.n_cols, positives, negs));
    }
  }

  fs::create_directories(cfg.output_dir);
  const fs::path train_pos_path = cfg.output_dir / "train_positives.labels";
  {
    ranking::LabeledObservations pos_only;
    pos_only.n_rows = all.n_rows;
    pos_only.n_cols = all.n_cols;
    for (const auto& [m, n] : positives) pos_only.triples.push_back({m, n, 1});
    io::save_labels(train_pos_path, pos_only, {"effective training positives"});
  }

  const std::vector<double> s_grid =
      meanfit::default_s_grid(cfg.s_count, cfg.s_min, cfg.s_max);
  json manifest;
  manifest["config"] = cfg.echo();
  manifest["dims"] = {{"n_rows", all.n_rows}, {"n_cols", all.n_cols}};
  manifest["basis_dims"] = {{"d_m", gm.dim()}, {"d_n", gn.dim()}};
  manifest["n_sets"] = sets.size();
  manifest["train_positives_file"] = train_pos_path.filename().string();
  manifest["s_grid"] = s_grid;
  json entries = json::array();
  json reports = json::array();

  int failures = 0;
  std::string last_error;
  for (std::size_t set_index = 0; set_index < sets.size(); ++set_index) {
    try {
      const auto grid = detail::train_grid(sets[set_index], gm, gn, cfg,
                                           static_cast<int>(set_index));
      for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        const detail::TrainedGridPoint& point = grid[gi];
        const std::size_t alpha_index = gi / s_grid.size();
        const std::size_t s_index = gi % s_grid.size();
        const std::string name =
            detail::grid_file_name(point.set_index, alpha_index, s_index);
        meanfit::Hyperparams used = cfg.train_config().hyperparams;
        used.alpha = point.alpha;
        used.lambda = point.lambda;
        io::save_model(cfg.output_dir / name, point.model, used, &point.state);
        entries.push_back({{"file", name},
                           {"set", point.set_index},
                           {"alpha", point.alpha},
                           {"s", point.s},
                           {"lambda", point.lambda},
                           {"objective", point.objective},
                           {"outer_iterations", point.outer_iterations},
                           {"converged", point.converged},
                           {"tasks_inner_nonconverged", point.tasks_inner_nonconverged}});
        reports.push_back({{"file", name}, {"objective_trace", point.objective_trace}});
      }
    } catch (const std::exception& e) {
      ++failures;
      last_error = e.what();
      entries.push_back({{"set", static_cast<int>(set_index)}, {"error", e.what()}});
    }
  }
  if (failures == static_cast<int>(sets.size())) {
    throw NumericalError("train: every negative set failed; last error: " + last_error);
  }
  manifest["models"] = entries;
  detail::write_json(cfg.output_dir / "manifest.json", manifest);
  detail::write_json(cfg.output_dir / "fit_reports.json", reports);
  log << "trained " << entries.size() << " grid points over " << sets.size()
      << " negative set(s); manifest at "
      << (cfg.output_dir / "manifest.json").string() << "\n";
}

/// evaluate: ensemble the per-set models of every (alpha, s) group, score the
/// test labels under the train-positive filtering protocol, emit metrics JSON
/// and a plot-ready precision/recall TSV for the best group.
inline void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& manifest_path,
                         const fs::path& test_labels_path, std::ostream& log = std::cout) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest: " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::parse_error& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  const fs::path model_dir = manifest_path.parent_path();
  const ranking::LabeledObservations test_labels = io::load_labels(test_labels_path);
  const ranking::LabeledObservations train_pos = io::load_labels(
      model_dir / manifest.at("train_positives_file").get<std::string>());
  if (train_pos.n_rows != test_labels.n_rows || train_pos.n_cols != test_labels.n_cols) {
    throw DataError("evaluate: test labels dims do not match the trained model");
  }

  // group model files by (alpha, s)
  std::map<std::pair<double, double>, std::vector<fs::path>> groups;
  std::map<std::pair<double, double>, double> lambdas;
  for (const json& entry : manifest.at("models")) {
    if (entry.contains("error")) continue;
    const double alpha = entry.at("alpha").get<double>();
    const double s = entry.at("s").get<double>();
    groups[{alpha, s}].push_back(model_dir / entry.at("file").get<std::string>());
    lambdas[{alpha, s}] = entry.at("lambda").get<double>();
  }
  if (groups.empty()) throw DataError("evaluate: manifest lists no usable models");

  json out;
  out["test_labels"] = test_labels_path.string();
  json group_list = json::array();
  std::vector<eval::CvCell> cells;
  std::map<std::pair<double, double>, eval::RankMetrics> metrics_by_group;
  for (const auto& [key, files] : groups) {
    std::vector<meanfit::MeanModel> models;
    models.reserve(files.size());
    for (const fs::path& file : files) {
      io::LoadedModel loaded = io::load_model(file);
      if (loaded.model.basis_m.rows() != test_labels.n_rows ||
          loaded.model.basis_n.rows() != test_labels.n_cols) {
        throw DataError("evaluate: model " + file.string() + " does not match test dims");
      }
      models.push_back(std::move(loaded.model));
    }
    const Matrix scores = detail::mean_dense_scores(models);
    const eval::RankMetrics metrics = eval::evaluate(
        [&scores](Index m, Index n) { return scores(m, n); }, test_labels,
        detail::positive_cells(train_pos));
    metrics_by_group[key] = metrics;
    json gj = detail::metrics_to_json(metrics);
    gj["alpha"] = key.first;
    gj["s"] = key.second;
    gj["lambda"] = lambdas[key];
    gj["n_models"] = files.size();
    group_list.push_back(std::move(gj));
    cells.push_back({key.first, lambdas[key], metrics_by_group[key].map100});
  }
  out["groups"] = group_list;

  const auto [best_alpha, best_lambda] = eval::select_model(cells);
  std::pair<double, double> best_key{0.0, 0.0};
  for (const auto& [key, files] : groups) {
    if (key.first == best_alpha && lambdas[key] == best_lambda) best_key = key;
  }
  out["best"] = {{"alpha", best_alpha}, {"lambda", best_lambda}, {"s", best_key.second}};

  fs::create_directories(cfg.output_dir);
  detail::write_json(cfg.output_dir / "metrics.json", out);
  const eval::RankMetrics& best = metrics_by_group[best_key];
  io::detail::atomic_write(cfg.output_dir / "curves.tsv", [&](std::ostream& tsv) {
    tsv << "k\tprecision\trecall\n";
    for (int k = 1; k <= eval::kCurveLength; ++k) {
      tsv << k << "\t" << io::detail::format_real(best.precision_at[k - 1]) << "\t"
          << io::detail::format_real(best.recall_at[k - 1]) << "\n";
    }
  }, /*binary=*/false);
  log << "evaluated " << groups.size() << " grid group(s); metrics at "
      << (cfg.output_dir / "metrics.json").string() << "\n";
}

/// cv: five-fold protocol, entrywise or rowwise. Trains the full grid per
/// fold, selects (alpha, lambda) by mean validation MAP@100, and aggregates
/// mean/std across folds at the selected point.
inline void cmd_cv(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
  detail::require_seed(cfg);
  if (cfg.labels.empty()) throw ConfigError("cv: config must name a labels file");
  const ranking::LabeledObservations all = io::load_labels(cfg.labels);
  Rng rng(*cfg.seed);

  std::vector<std::pair<Index, Index>> positives = detail::positive_cells(all);
  std::vector<std::pair<Index, Index>> explicit_negatives;
  for (const ranking::LabeledObservation& t : all.triples) {
    if (t.label == -1) explicit_negatives.emplace_back(t.row, t.col);
  }
  positives = detail::subsample_positives(std::move(positives), cfg.subsample_fraction, rng);
  if (positives.empty()) throw DataError("cv: no positive associations");
  const bool fully_labeled = !explicit_negatives.empty();

  const kernels::KernelMatrix km =
      detail::kernel_for_side(cfg.row_graph, all.n_rows, cfg.add_identity, "row");
  const kernels::KernelMatrix kn =
      detail::kernel_for_side(cfg.col_graph, all.n_cols, cfg.add_identity, "column");
  const kernels::KernelBasis gm = kernels::kernel_basis(km, cfg.eig_floor);
  const kernels::KernelBasis gn = kernels::kernel_basis(kn, cfg.eig_floor);

  // Fold units: labeled entries when explicit negatives exist, else positives.
  std::vector<std::pair<Index, Index>> units = positives;
  std::vector<int> unit_labels(positives.size(), 1);
  if (fully_labeled) {
    units.clear();
    unit_labels.clear();
    for (const auto& [m, n] : positives) {
      units.emplace_back(m, n);
      unit_labels.push_back(1);
    }
    for (const auto& [m, n] : explicit_negatives) {
      units.emplace_back(m, n);
      unit_labels.push_back(-1);
    }
  }
  std::vector<Index> unit_rows;
  unit_rows.reserve(units.size());
  for (const auto& [m, n] : units) unit_rows.push_back(m);
  const std::uint64_t split_seed = rng();
  const eval::SplitPlan plan = eval::make_splits(
      unit_rows, cfg.eval_mode == "rowwise" ? eval::SplitMode::kRowwise
                                            : eval::SplitMode::kEntrywise,
      split_seed);
  const std::uint64_t negatives_seed = rng();

  const std::vector<double> s_grid =
      meanfit::default_s_grid(cfg.s_count, cfg.s_min, cfg.s_max);
  json folds_json = json::array();
  std::map<std::pair<double, double>, std::vector<double>> map_by_cell;    // (alpha, s)
  std::map<std::pair<double, double>, std::vector<double>> lambda_by_cell;
  std::map<std::pair<double, double>,
           std::vector<eval::RankMetrics>> metrics_by_cell;

  for (int fold = 0; fold < 5; ++fold) {
    try {
      std::vector<char> in_test(units.size(), 0);
      for (std::size_t idx : plan.folds[static_cast<std::size_t>(fold)]) in_test[idx] = 1;

      std::vector<std::pair<Index, Index>> train_pos, test_pos, train_neg;
      ranking::LabeledObservations test_labels;
      test_labels.n_rows = all.n_rows;
      test_labels.n_cols = all.n_cols;
      for (std::size_t i = 0; i < units.size(); ++i) {
        if (in_test[i]) {
          test_labels.triples.push_back({units[i].first, units[i].second, unit_labels[i]});
          if (unit_labels[i] == 1) test_pos.push_back(units[i]);
        } else if (unit_labels[i] == 1) {
          train_pos.push_back(units[i]);
        } else {
          train_neg.push_back(units[i]);
        }
      }
      if (train_pos.empty() || test_pos.empty()) {
        throw DataError("fold has no positives on one side");
      }
      if (cfg.eval_mode == "rowwise") {
        std::set<Index> train_rows, test_rows;
        for (const auto& [m, n] : train_pos) train_rows.insert(m);
        for (const auto& [m, n] : train_neg) train_rows.insert(m);
        for (const auto& t : test_labels.triples) test_rows.insert(t.row);
        for (Index m : test_rows) {
          if (train_rows.count(m) > 0) {
            throw NumericalError("rowwise split integrity violated at row " +
                                 std::to_string(m));
          }
        }
      }

      std::vector<ranking::LabeledObservations> sets;
      if (fully_labeled) {
        sets.push_back(detail::combine_labels(all.n_rows, all.n_cols, train_pos, train_neg));
      } else {
        const std::size_t per_set = cfg.negative_set_size > 0
                                        ? static_cast<std::size_t>(cfg.negative_set_size)
                                        : train_pos.size();
        // Derive a per-fold seed so folds are independent but reproducible.
        const std::uint64_t fold_seed = negatives_seed + static_cast<std::uint64_t>(fold);
        if (cfg.eval_mode == "rowwise") {
          // Sample negatives inside the training rows only, so no test row
          // leaks into training.
          std::vector<Index> train_row_list;
          {
            std::set<Index> rows;
            for (const auto& [m, n] : train_pos) rows.insert(m);
            train_row_list.assign(rows.begin(), rows.end());
          }
          std::map<Index, Index> to_compact;
          for (std::size_t i = 0; i < train_row_list.size(); ++i) {
            to_compact[train_row_list[i]] = static_cast<Index>(i);
          }
          std::vector<std::pair<Index, Index>> compact_pos;
          compact_pos.reserve(train_pos.size());
          for (const auto& [m, n] : train_pos) compact_pos.emplace_back(to_compact[m], n);
          const auto neg_sets = eval::sample_negatives(
              compact_pos, static_cast<Index>(train_row_list.size()), all.n_cols,
              cfg.n_negative_sets, per_set, fold_seed);
          for (const auto& negs : neg_sets) {
            std::vector<std::pair<Index, Index>> mapped;
            mapped.reserve(negs.size());
            for (const auto& [cm, n] : negs) {
              mapped.emplace_back(train_row_list[static_cast<std::size_t>(cm)], n);
            }
            sets.push_back(detail::combine_labels(all.n_rows, all.n_cols, train_pos, mapped));
          }
        } else {
          const auto neg_sets =
              eval::sample_negatives(train_pos, all.n_rows, all.n_cols,
                                     cfg.n_negative_sets, per_set, fold_seed);
          for (const auto& negs : neg_sets) {
            sets.push_back(detail::combine_labels(all.n_rows, all.n_cols, train_pos, negs));
          }
        }
      }

      // set -> grid points, regrouped per (alpha, s) for the set ensemble
      std::map<std::pair<double, double>, std::vector<meanfit::MeanModel>> ensemble;
      std::map<std::pair<double, double>, double> fold_lambda;
      for (std::size_t set_index = 0; set_index < sets.size(); ++set_index) {
        auto grid = detail::train_grid(sets[set_index], gm, gn, cfg,
                                       static_cast<int>(set_index));
        for (auto& point : grid) {
          ensemble[{point.alpha, point.s}].push_back(std::move(point.model));
          fold_lambda[{point.alpha, point.s}] = point.lambda;
        }
      }

      json fold_json;
      fold_json["fold"] = fold;
      fold_json["n_train_positives"] = train_pos.size();
      fold_json["n_test_positives"] = test_pos.size();
      json cell_list = json::array();
      for (const auto& [key, models] : ensemble) {
        const Matrix scores = detail::mean_dense_scores(models);
        const eval::RankMetrics metrics = eval::evaluate(
            [&scores](Index m, Index n) { return scores(m, n); }, test_labels, train_pos);
        map_by_cell[key].push_back(metrics.map100);
        lambda_by_cell[key].push_back(fold_lambda[key]);
        metrics_by_cell[key].push_back(metrics);
        json cj = detail::metrics_to_json(metrics);
        cj["alpha"] = key.first;
        cj["s"] = key.second;
        cj["lambda"] = fold_lambda[key];
        cell_list.push_back(std::move(cj));
      }
      fold_json["cells"] = cell_list;
      folds_json.push_back(std::move(fold_json));
    } catch (const DataError& e) {
      throw DataError("cv fold " + std::to_string(fold) + ": " + e.what());
    } catch (const NumericalError& e) {
      throw NumericalError("cv fold " + std::to_string(fold) + ": " + e.what());
    }
  }

  std::vector<eval::CvCell> cells;
  for (const auto& [key, maps] : map_by_cell) {
    cells.push_back({key.first, detail::mean_of(lambda_by_cell[key]),
                     detail::mean_of(maps)});
  }
  const auto [sel_alpha, sel_lambda] = eval::select_model(cells);
  std::pair<double, double> sel_key{0.0, 0.0};
  for (const auto& [key, ls] : lambda_by_cell) {
    if (key.first == sel_alpha && detail::mean_of(ls) == sel_lambda) sel_key = key;
  }

  json aggregate;
  {
    const auto& ms = metrics_by_cell[sel_key];
    std::vector<double> aucs, maps, p100, r100;
    for (const eval::RankMetrics& m : ms) {
      aucs.push_back(m.auc);
      maps.push_back(m.map100);
      p100.push_back(m.precision_at.back());
      r100.push_back(m.recall_at.back());
    }
    const auto block = [&](const std::vector<double>& v) {
      const double mean = detail::mean_of(v);
      return json{{"mean", mean}, {"std", detail::sample_std(v, mean)}};
    };
    aggregate["auc"] = block(aucs);
    aggregate["map100"] = block(maps);
    aggregate["p_at_100"] = block(p100);
    aggregate["r_at_100"] = block(r100);
  }

  json out;
  out["config"] = cfg.echo();
  out["mode"] = cfg.eval_mode;
  out["folds"] = folds_json;
  out["selected"] = {{"alpha", sel_alpha},
                     {"lambda", sel_lambda},
                     {"s", sel_key.second},
                     {"per_fold_lambda", lambda_by_cell[sel_key]}};
  out["aggregate"] = aggregate;
  fs::create_directories(cfg.output_dir);
  detail::write_json(cfg.output_dir / "cv_results.json", out);
  log << "cv complete; selected alpha=" << sel_alpha << " lambda=" << sel_lambda
      << "; results at " << (cfg.output_dir / "cv_results.json").string() << "\n";
}

/// synth: draw a (optionally low-rank) matrix from the Kronecker prior, label
/// the top entries per row, and write the dataset files with a provenance
/// header.
inline void cmd_synth(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
  detail::require_seed(cfg);
  if (cfg.row_graph.empty() || cfg.col_graph.empty()) {
    throw ConfigError("synth: row and column graphs are required");
  }
  const kernels::GraphAdjacency gr = io::load_graph(cfg.row_graph);
  const kernels::GraphAdjacency gc = io::load_graph(cfg.col_graph);
  const kernels::KernelMatrix km =
      kernels::exponential_kernel(kernels::normalized_laplacian(gr), cfg.add_identity);
  const kernels::KernelMatrix kn =
      kernels::exponential_kernel(kernels::normalized_laplacian(gc), cfg.add_identity);

  Rng rng(*cfg.seed);
  const std::uint64_t z_seed = rng();
  const std::uint64_t label_seed = rng();
  const Matrix z = cfg.synth_rank > 0
                       ? posterior::sample_prior_low_rank(km, kn, cfg.synth_rank, z_seed)
                       : posterior::sample_prior(km, kn, z_seed);
  const ranking::LabeledObservations labels =
      ranking::sample_labels(z, cfg.positives_per_row, cfg.noise_sigma2, label_seed);

  const std::vector<std::string> provenance = {
      "generated by tracegp synth",
      "seed=" + std::to_string(*cfg.seed),
      "rank=" + std::to_string(cfg.synth_rank),
      "positives_per_row=" + std::to_string(cfg.positives_per_row),
      "noise_sigma2=" + io::detail::format_real(cfg.noise_sigma2),
      "row_graph=" + cfg.row_graph.string(),
      "col_graph=" + cfg.col_graph.string(),
      "add_identity=" + std::string(cfg.add_identity ? "true" : "false"),
  };
  fs::create_directories(cfg.output_dir);
  const fs::path labels_path = cfg.output_dir / "synthetic.labels";
  io::save_labels(labels_path, labels, provenance);
  log << "wrote " << labels_path.string() << "\n";
  if (cfg.write_scores) {
    meanfit::SparseObservations scores;
    scores.n_rows = z.rows();
    scores.n_cols = z.cols();
    scores.triples.reserve(static_cast<std::size_t>(z.size()));
    for (Index m = 0; m < z.rows(); ++m) {
      for (Index n = 0; n < z.cols(); ++n) scores.triples.push_back({m, n, z(m, n)});
    }
    const fs::path scores_path = cfg.output_dir / "synthetic.observations";
    io::save_observations(scores_path, scores, provenance);
    log << "wrote " << scores_path.string() << "\n";
  }
}

}  // namespace tracegp::cli

#endif  // TRACEGP_CLI_HPP
