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

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tracegp/cli.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::string labels;
  std::string row_graph;
  std::string col_graph;
  std::string mode;
  std::optional<int> n_negative_sets;
  std::optional<int> s_count;
  std::vector<double> alphas;
  std::optional<bool> use_row_bias;
};

tracegp::cli::ExperimentConfig resolve_config(const CommonFlags& flags) {
  tracegp::cli::ExperimentConfig cfg;
  if (!flags.config_path.empty()) cfg = tracegp::cli::load_config(flags.config_path);
  if (flags.seed.has_value()) cfg.seed = *flags.seed;
  if (!flags.output_dir.empty()) cfg.output_dir = flags.output_dir;
  if (!flags.labels.empty()) cfg.labels = flags.labels;
  if (!flags.row_graph.empty()) cfg.row_graph = flags.row_graph;
  if (!flags.col_graph.empty()) cfg.col_graph = flags.col_graph;
  if (!flags.mode.empty()) {
    if (flags.mode != "entrywise" && flags.mode != "rowwise") {
      throw tracegp::cli::ConfigError("--mode must be 'entrywise' or 'rowwise'");
    }
    cfg.eval_mode = flags.mode;
  }
  if (flags.n_negative_sets.has_value()) cfg.n_negative_sets = *flags.n_negative_sets;
  if (flags.s_count.has_value()) cfg.s_count = *flags.s_count;
  if (!flags.alphas.empty()) cfg.alphas = flags.alphas;
  if (flags.use_row_bias.has_value()) cfg.use_row_bias = *flags.use_row_bias;
  return cfg;
}

void add_common_flags(CLI::App* cmd, CommonFlags& flags, bool with_grid) {
  cmd->add_option("-c,--config", flags.config_path, "JSON config file");
  cmd->add_option("--seed", flags.seed, "override the config seed");
  cmd->add_option("--output-dir", flags.output_dir, "override the output directory");
  cmd->add_option("--labels", flags.labels, "override the labels file");
  cmd->add_option("--row-graph", flags.row_graph, "override the row graph file");
  cmd->add_option("--col-graph", flags.col_graph, "override the column graph file");
  if (with_grid) {
    cmd->add_option("--mode", flags.mode, "split mode: entrywise or rowwise");
    cmd->add_option("--negative-sets", flags.n_negative_sets,
                    "number of sampled negative sets");
    cmd->add_option("--s-count", flags.s_count, "number of s grid points");
    cmd->add_option("--alphas", flags.alphas, "alpha grid values");
    cmd->add_flag("--row-bias,!--no-row-bias",
                  [&flags](std::int64_t count) { flags.use_row_bias = count > 0; },
                  "learn per-row offsets during training");
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("TRACEGP_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{
      "tracegp: trace-norm constrained matrix-variate GP regression and "
      "multitask bipartite ranking"};
  app.require_subcommand(1);

  // kernel
  std::string graph_path, kernel_out;
  bool no_identity = false;
  double eig_floor = tracegp::kernels::kDefaultEigFloor;
  CLI::App* kernel_cmd =
      app.add_subcommand("kernel", "build a graph kernel and its basis");
  kernel_cmd->add_option("--graph", graph_path, "input graph file")->required();
  kernel_cmd->add_option("--out", kernel_out, "output kernel file")->required();
  kernel_cmd->add_flag("--no-identity", no_identity,
                       "skip adding the identity to the exponential kernel");
  kernel_cmd->add_option("--eig-floor", eig_floor,
                         "relative eigenvalue floor for the basis");

  CommonFlags train_flags, cv_flags, synth_flags, eval_flags;
  CLI::App* train_cmd = app.add_subcommand(
      "train", "train ranking models over negative sets and the (alpha, s) grid");
  add_common_flags(train_cmd, train_flags, /*with_grid=*/true);

  std::string manifest_path, test_labels_path;
  CLI::App* eval_cmd =
      app.add_subcommand("evaluate", "evaluate trained models on test labels");
  add_common_flags(eval_cmd, eval_flags, /*with_grid=*/false);
  eval_cmd->add_option("--manifest", manifest_path, "manifest.json from train")->required();
  eval_cmd->add_option("--test-labels", test_labels_path, "held-out labels file")
      ->required();

  CLI::App* cv_cmd =
      app.add_subcommand("cv", "five-fold cross validation with model selection");
  add_common_flags(cv_cmd, cv_flags, /*with_grid=*/true);

  CLI::App* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic dataset from the prior");
  add_common_flags(synth_cmd, synth_flags, /*with_grid=*/false);
  std::optional<long long> synth_rank, synth_q;
  std::optional<double> synth_noise;
  synth_cmd->add_option("--rank", synth_rank, "rank of the sampled matrix (0 = full)");
  synth_cmd->add_option("--positives-per-row", synth_q, "positives labeled per row");
  synth_cmd->add_option("--noise-sigma2", synth_noise, "label noise variance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (kernel_cmd->parsed()) {
      tracegp::cli::cmd_kernel(graph_path, kernel_out, !no_identity, eig_floor);
    } else if (train_cmd->parsed()) {
      tracegp::cli::cmd_train(resolve_config(train_flags));
    } else if (eval_cmd->parsed()) {
      tracegp::cli::cmd_evaluate(resolve_config(eval_flags), manifest_path,
                                 test_labels_path);
    } else if (cv_cmd->parsed()) {
      tracegp::cli::cmd_cv(resolve_config(cv_flags));
    } else if (synth_cmd->parsed()) {
      tracegp::cli::ExperimentConfig cfg = resolve_config(synth_flags);
      if (synth_rank.has_value()) cfg.synth_rank = static_cast<tracegp::Index>(*synth_rank);
      if (synth_q.has_value()) {
        cfg.positives_per_row = static_cast<tracegp::Index>(*synth_q);
      }
      if (synth_noise.has_value()) cfg.noise_sigma2 = *synth_noise;
      tracegp::cli::cmd_synth(cfg);
    }
  } catch (const tracegp::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const tracegp::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const tracegp::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
