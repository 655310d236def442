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

#include "tracegp/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "test_oracles.hpp"

using namespace tracegp;
using namespace tracegp::cli;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tracegp_cli_" +
            std::string(
                ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path file(const std::string& name) const { return dir_ / name; }

  // simple chain graph 0-1-2-...-(n-1)
  fs::path write_chain_graph(const std::string& name, Index n) {
    std::ofstream out(file(name));
    out << "nodes\t" << n << "\n";
    for (Index i = 0; i + 1 < n; ++i) out << i << "\t" << i + 1 << "\t1\n";
    return file(name);
  }

  static std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  }

  // small experiment config over a synthetic labeled dataset
  ExperimentConfig small_config(Index m, Index n, Index q, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.row_graph = write_chain_graph("rows.graph", m);
    cfg.col_graph = write_chain_graph("cols.graph", n);
    cfg.output_dir = file("out");
    cfg.seed = seed;
    cfg.alphas = {1.0, 0.0};
    cfg.s_count = 2;
    cfg.s_min = 0.05;
    cfg.s_max = 0.5;
    cfg.n_negative_sets = 2;
    cfg.outer_max_iter = 4;
    cfg.outer_tol = 1e-4;
    cfg.fit_max_iter = 300;
    cfg.fit_tol = 1e-6;
    cfg.positives_per_row = q;
    cfg.synth_rank = 2;
    return cfg;
  }

  // writes a labels file generated from a low-rank prior draw
  fs::path write_synth_labels(ExperimentConfig& cfg) {
    std::ostringstream log;
    cmd_synth(cfg, log);
    cfg.labels = cfg.output_dir / "synthetic.labels";
    return cfg.labels;
  }

  fs::path dir_;
};

}  // namespace

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(config_from_json(nlohmann::json{{"unknown_section", 1}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"grid", {{"typo", 1}}}}), ConfigError);
}

TEST(Config, ParsesNestedKeys) {
  const nlohmann::json j = {
      {"paths", {{"labels", "x.labels"}, {"output_dir", "results"}}},
      {"seed", 7},
      {"grid", {{"alphas", {1.0, 0.5}}, {"s_count", 4}}},
      {"trainer", {{"use_row_bias", true}}},
      {"eval", {{"mode", "rowwise"}}},
  };
  const ExperimentConfig cfg = config_from_json(j);
  EXPECT_EQ(cfg.labels, fs::path("x.labels"));
  EXPECT_EQ(cfg.output_dir, fs::path("results"));
  ASSERT_TRUE(cfg.seed.has_value());
  EXPECT_EQ(*cfg.seed, 7u);
  EXPECT_EQ(cfg.alphas, (std::vector<double>{1.0, 0.5}));
  EXPECT_EQ(cfg.s_count, 4);
  EXPECT_TRUE(cfg.use_row_bias);
  EXPECT_EQ(cfg.eval_mode, "rowwise");
}

TEST(Config, BadModeRejected) {
  EXPECT_THROW(config_from_json(nlohmann::json{{"eval", {{"mode", "sideways"}}}}),
               ConfigError);
}

TEST_F(CliTest, KernelCommandWritesKernelAndBasis) {
  const fs::path graph = write_chain_graph("g.graph", 5);
  std::ostringstream log;
  cmd_kernel(graph, file("k.bin"), true, 1e-10, log);
  EXPECT_TRUE(fs::exists(file("k.bin")));
  EXPECT_TRUE(fs::exists(file("k.bin.basis")));
  const Matrix k = io::load_matrix(file("k.bin"));
  const Matrix g = io::load_matrix(file("k.bin.basis"));
  EXPECT_EQ(k.rows(), 5);
  EXPECT_LT((g * g.transpose() - k).norm() / k.norm(), 1e-8);
  EXPECT_NE(log.str().find("basis_dim="), std::string::npos);
}

TEST_F(CliTest, KernelCommandOnEdgelessGraph) {
  // no edges: the Laplacian is the identity, so K = e^{-1} I (+ I)
  std::ofstream(file("empty.graph")) << "nodes\t3\n";
  std::ostringstream log;
  cmd_kernel(file("empty.graph"), file("k.bin"), true, 1e-10, log);
  const Matrix k = io::load_matrix(file("k.bin"));
  const Matrix expected =
      (std::exp(-1.0) + 1.0) * Matrix::Identity(3, 3);
  EXPECT_LT((k - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(CliTest, KernelCommandIsDeterministic) {
  const fs::path graph = write_chain_graph("g.graph", 6);
  std::ostringstream log;
  cmd_kernel(graph, file("k1.bin"), true, 1e-10, log);
  cmd_kernel(graph, file("k2.bin"), true, 1e-10, log);
  EXPECT_EQ(read_bytes(file("k1.bin")), read_bytes(file("k2.bin")));
}

TEST_F(CliTest, KernelCommandReportsMalformedLine) {
  std::ofstream(file("bad.graph")) << "nodes\t3\n0\tbroken\n";
  std::ostringstream log;
  try {
    cmd_kernel(file("bad.graph"), file("k.bin"), true, 1e-10, log);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST_F(CliTest, SynthIsDeterministicAndHonorsRank) {
  ExperimentConfig cfg = small_config(8, 12, 2, 99);
  std::ostringstream log;
  cmd_synth(cfg, log);
  const std::string labels_first = read_bytes(cfg.output_dir / "synthetic.labels");
  const std::string scores_first = read_bytes(cfg.output_dir / "synthetic.observations");
  cmd_synth(cfg, log);
  EXPECT_EQ(read_bytes(cfg.output_dir / "synthetic.labels"), labels_first);
  EXPECT_EQ(read_bytes(cfg.output_dir / "synthetic.observations"), scores_first);

  const meanfit::SparseObservations z_obs =
      io::load_observations(cfg.output_dir / "synthetic.observations");
  Matrix z(z_obs.n_rows, z_obs.n_cols);
  for (const meanfit::Observation& t : z_obs.triples) z(t.row, t.col) = t.value;
  const Eigen::JacobiSVD<Matrix> svd(z);
  Index rank = 0;
  for (Index i = 0; i < svd.singularValues().size(); ++i) {
    if (svd.singularValues()(i) > 1e-8 * svd.singularValues()(0)) ++rank;
  }
  EXPECT_LE(rank, 2);
}

TEST_F(CliTest, SynthRejectsZeroPositives) {
  ExperimentConfig cfg = small_config(6, 8, 2, 3);
  cfg.positives_per_row = 0;
  std::ostringstream log;
  EXPECT_THROW(cmd_synth(cfg, log), DataError);
}

TEST_F(CliTest, SynthRequiresSeedAndGraphs) {
  ExperimentConfig cfg = small_config(6, 8, 2, 3);
  cfg.seed.reset();
  std::ostringstream log;
  EXPECT_THROW(cmd_synth(cfg, log), ConfigError);
  cfg.seed = 3;
  cfg.row_graph.clear();
  EXPECT_THROW(cmd_synth(cfg, log), ConfigError);
}

TEST_F(CliTest, TrainProducesGridTimesSetsModels) {
  ExperimentConfig cfg = small_config(6, 10, 2, 42);
  write_synth_labels(cfg);
  cfg.output_dir = file("train_out");
  std::ostringstream log;
  cmd_train(cfg, log);

  std::ifstream in(cfg.output_dir / "manifest.json");
  nlohmann::json manifest;
  in >> manifest;
  // labels from synth carry explicit negatives: exactly one training set,
  // 2 alphas x 2 s values
  EXPECT_EQ(manifest.at("n_sets").get<int>(), 1);
  EXPECT_EQ(manifest.at("models").size(), 4u);
  for (const auto& entry : manifest.at("models")) {
    ASSERT_TRUE(entry.contains("file"));
    EXPECT_TRUE(fs::exists(cfg.output_dir / entry.at("file").get<std::string>()));
  }
  EXPECT_TRUE(fs::exists(cfg.output_dir / "fit_reports.json"));
  EXPECT_TRUE(fs::exists(cfg.output_dir / "train_positives.labels"));
}

TEST_F(CliTest, TrainSamplesNegativeSetsForPositiveOnlyLabels) {
  ExperimentConfig cfg = small_config(6, 10, 2, 47);
  write_synth_labels(cfg);
  // strip the negatives to force the PU path
  const ranking::LabeledObservations all = io::load_labels(cfg.labels);
  ranking::LabeledObservations pos_only;
  pos_only.n_rows = all.n_rows;
  pos_only.n_cols = all.n_cols;
  for (const auto& t : all.triples) {
    if (t.label == 1) pos_only.triples.push_back(t);
  }
  io::save_labels(file("pos.labels"), pos_only);
  cfg.labels = file("pos.labels");
  cfg.output_dir = file("train_out");
  cfg.n_negative_sets = 3;
  cfg.alphas = {1.0};
  std::ostringstream log;
  cmd_train(cfg, log);

  std::ifstream in(cfg.output_dir / "manifest.json");
  nlohmann::json manifest;
  in >> manifest;
  EXPECT_EQ(manifest.at("n_sets").get<int>(), 3);
  EXPECT_EQ(manifest.at("models").size(), 6u);  // 3 sets x 1 alpha x 2 s
}

TEST_F(CliTest, TrainRerunsAreByteIdentical) {
  ExperimentConfig cfg = small_config(6, 10, 2, 52);
  write_synth_labels(cfg);
  cfg.output_dir = file("run1");
  std::ostringstream log;
  cmd_train(cfg, log);
  const std::string manifest1 = read_bytes(file("run1") / "manifest.json");
  const std::string reports1 = read_bytes(file("run1") / "fit_reports.json");
  fs::remove_all(file("run1"));
  cmd_train(cfg, log);
  EXPECT_EQ(read_bytes(file("run1") / "manifest.json"), manifest1);
  EXPECT_EQ(read_bytes(file("run1") / "fit_reports.json"), reports1);
}

TEST_F(CliTest, EvaluatePipeline) {
  ExperimentConfig cfg = small_config(6, 10, 2, 58);
  write_synth_labels(cfg);
  // hold out every fifth labeled entry for testing
  const ranking::LabeledObservations all = io::load_labels(cfg.labels);
  ranking::LabeledObservations train_part, test_part;
  train_part.n_rows = test_part.n_rows = all.n_rows;
  train_part.n_cols = test_part.n_cols = all.n_cols;
  for (std::size_t i = 0; i < all.triples.size(); ++i) {
    (i % 5 == 0 ? test_part : train_part).triples.push_back(all.triples[i]);
  }
  io::save_labels(file("train.labels"), train_part);
  io::save_labels(file("test.labels"), test_part);
  cfg.labels = file("train.labels");
  cfg.output_dir = file("models");
  std::ostringstream log;
  cmd_train(cfg, log);

  ExperimentConfig eval_cfg = cfg;
  eval_cfg.output_dir = file("eval_out");
  cmd_evaluate(eval_cfg, file("models") / "manifest.json", file("test.labels"), log);
  ASSERT_TRUE(fs::exists(file("eval_out") / "metrics.json"));
  ASSERT_TRUE(fs::exists(file("eval_out") / "curves.tsv"));

  std::ifstream in(file("eval_out") / "metrics.json");
  nlohmann::json metrics;
  in >> metrics;
  EXPECT_EQ(metrics.at("groups").size(), 4u);
  EXPECT_TRUE(metrics.contains("best"));
  for (const auto& g : metrics.at("groups")) {
    EXPECT_GE(g.at("auc").get<double>(), 0.0);
    EXPECT_LE(g.at("auc").get<double>(), 1.0);
    EXPECT_EQ(g.at("precision_at").size(), 100u);
  }

  // TSV has a header and 100 rows
  std::ifstream tsv(file("eval_out") / "curves.tsv");
  std::string line;
  int lines = 0;
  while (std::getline(tsv, line)) ++lines;
  EXPECT_EQ(lines, 101);
}

TEST_F(CliTest, EvaluateRejectsMissingModelFile) {
  ExperimentConfig cfg = small_config(6, 10, 2, 61);
  write_synth_labels(cfg);
  cfg.output_dir = file("models");
  std::ostringstream log;
  cmd_train(cfg, log);
  fs::remove(file("models") / "model_set0_a0_s0.mvgm");
  ExperimentConfig eval_cfg = cfg;
  eval_cfg.output_dir = file("eval_out");
  EXPECT_THROW(
      cmd_evaluate(eval_cfg, file("models") / "manifest.json", cfg.labels, log),
      DataError);
}

TEST_F(CliTest, CvEntrywiseProducesFiveFoldBlocks) {
  ExperimentConfig cfg = small_config(6, 10, 2, 64);
  write_synth_labels(cfg);
  cfg.output_dir = file("cv_out");
  cfg.alphas = {1.0};
  std::ostringstream log;
  cmd_cv(cfg, log);
  std::ifstream in(file("cv_out") / "cv_results.json");
  nlohmann::json results;
  in >> results;
  EXPECT_EQ(results.at("folds").size(), 5u);
  EXPECT_TRUE(results.contains("selected"));
  EXPECT_TRUE(results.contains("aggregate"));

  // aggregate mean equals the hand average of the selected cell's fold values
  const double sel_alpha = results.at("selected").at("alpha").get<double>();
  const double sel_s = results.at("selected").at("s").get<double>();
  double sum = 0.0;
  int count = 0;
  for (const auto& fold : results.at("folds")) {
    for (const auto& cell : fold.at("cells")) {
      if (cell.at("alpha").get<double>() == sel_alpha &&
          cell.at("s").get<double>() == sel_s) {
        sum += cell.at("auc").get<double>();
        ++count;
      }
    }
  }
  ASSERT_EQ(count, 5);
  EXPECT_NEAR(results.at("aggregate").at("auc").at("mean").get<double>(), sum / 5.0,
              1e-12);
}

TEST_F(CliTest, CvRowwiseRunsWithIntegrityChecks) {
  ExperimentConfig cfg = small_config(10, 12, 2, 70);
  write_synth_labels(cfg);
  cfg.output_dir = file("cv_row");
  cfg.eval_mode = "rowwise";
  cfg.alphas = {1.0};
  cfg.s_count = 1;
  std::ostringstream log;
  cmd_cv(cfg, log);  // internal integrity assertions throw on violation
  std::ifstream in(file("cv_row") / "cv_results.json");
  nlohmann::json results;
  in >> results;
  EXPECT_EQ(results.at("mode").get<std::string>(), "rowwise");
  EXPECT_EQ(results.at("folds").size(), 5u);
}

TEST_F(CliTest, CvRerunsAreByteIdentical) {
  ExperimentConfig cfg = small_config(6, 10, 2, 77);
  write_synth_labels(cfg);
  cfg.output_dir = file("cv_out");
  cfg.alphas = {1.0};
  cfg.s_count = 1;
  std::ostringstream log;
  cmd_cv(cfg, log);
  const std::string first = read_bytes(file("cv_out") / "cv_results.json");
  fs::remove_all(file("cv_out"));
  cmd_cv(cfg, log);
  EXPECT_EQ(read_bytes(file("cv_out") / "cv_results.json"), first);
}
