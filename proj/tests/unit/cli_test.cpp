/*
 * Copyright 2026 The smoothda Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "smoothda/cli.hpp"

namespace smoothda {
namespace {

namespace fs = std::filesystem;
using train::ExperimentConfig;
using train::Json;
using Mode = nets::DiscriminatorMode;

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("smoothda_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.data.spec.image_h = c.data.spec.image_w = 16;
  c.data.spec.max_objects = 3;
  c.extractor.image_h = c.extractor.image_w = 16;
  c.extractor.patch_size = 4;
  c.extractor.window_size = 2;
  c.extractor.embed_dim = 8;
  c.extractor.depth = 1;
  c.extractor.heads = 2;
  c.extractor.mlp_ratio = 2;
  c.head_hidden = 8;
  c.batch_size = 2;
  c.data.n_source = c.data.n_target = 8;
  c.data.n_test = 4;
  c.diagnostics.probe_size = 2;
  c.schedule = {4, 3, 2};
  c.optim.lr_fc = 1e-3;
  c.optim.fc_warmup_steps = 1;
  c.discriminator = Mode::binary;
  c.dynamic_weights = true;
  c.smoothing = {true, true, 0.99};
  return c;
}

cli::RunOptions quiet() {
  cli::RunOptions o;
  o.checkpoint_every = 0;
  return o;
}

Json manifest(const fs::path& dir) { return Json::parse(slurp(dir / cli::kManifest)); }

// --- Aggregates -------------------------------------------------------------------

TEST(Summary, MeanStdUsesSampleDeviation) {
  const auto s = cli::mean_std({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_NEAR(s.std, std::sqrt(32.0 / 7.0), 1e-12);
  EXPECT_EQ(cli::mean_std({3.5}).std, 0.0);
}

TEST(Summary, AggregateRowsMatchRecomputationFromRunRows) {
  std::vector<cli::MatrixJob> jobs;
  std::vector<cli::RunResult> results;
  const double miou[2][3] = {{0.41, 0.47, 0.52}, {0.3, 0.33, 0.0}};
  for (int g = 0; g < 2; ++g)
    for (int s = 0; s < 3; ++s) {
      jobs.push_back({{g ? "b" : "a"}, static_cast<std::uint64_t>(s), {}, {}});
      cli::RunResult r{cli::RunStatus::ok, {}, {}, {}};
      r.metrics.target_miou = miou[g][s];
      r.metrics.mean_change_classifier = 1.0 + g + 0.1 * s;
      if (g == 1 && s == 2) r.status = cli::RunStatus::numeric_abort;  // excluded from the aggregate
      results.push_back(r);
    }
  const auto dir = fresh_dir("summary");
  fs::create_directories(dir);
  cli::write_text(dir / "s.csv", cli::detail::summary_csv({"group"}, jobs, results));
  const auto rows = read_csv(dir / "s.csv");
  ASSERT_EQ(rows.size(), 1u + 2 * 4);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"group", "seed", "target_miou", "mean_change_classifier",
                                               "mean_change_discriminator"}));
  for (std::size_t base : {1u, 5u}) {
    std::vector<double> vals;
    for (std::size_t i = base; i < base + 3; ++i)
      if (!rows[i][2].empty()) vals.push_back(std::stod(rows[i][2]));
    const auto& agg = rows[base + 3];
    EXPECT_EQ(agg[1], "mean±std");
    const auto pm = agg[2].find("±");
    ASSERT_NE(pm, std::string::npos);
    double mean = 0, ss = 0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    for (double v : vals) ss += (v - mean) * (v - mean);
    EXPECT_NEAR(std::stod(agg[2].substr(0, pm)), mean, 1e-9);
    EXPECT_NEAR(std::stod(agg[2].substr(pm + 2)), std::sqrt(ss / (vals.size() - 1)), 1e-9);
    EXPECT_TRUE(agg[4].empty());
  }
  EXPECT_TRUE(rows[7][2].empty());  // failed run keeps its row with empty metrics
}

// --- Variants ---------------------------------------------------------------------

TEST(Variants, EighteenLegalPerBackboneAndIllegalOnesExplained) {
  const auto set = cli::ablation_variants(tiny(), {nets::ExtractorKind::local_vit});
  EXPECT_EQ(set.legal.size(), 18u);
  EXPECT_EQ(set.illegal.size(), 6u);
  std::size_t none = 0;
  for (const auto& v : set.legal) none += v.discriminator == Mode::none;
  EXPECT_EQ(none, 2u);
  for (const auto& [v, why] : set.illegal) {
    EXPECT_EQ(v.discriminator, Mode::none);
    EXPECT_NE(why.find("requires a discriminator"), std::string::npos) << why;
  }
  EXPECT_EQ(cli::ablation_variants(tiny(), {nets::ExtractorKind::local_vit, nets::ExtractorKind::cnn}).legal.size(),
            36u);
}

// --- Single runs ------------------------------------------------------------------

TEST(Run, EveryArtifactIsReferencedFromTheManifest) {
  const auto dir = fresh_dir("artifacts");
  const auto r = cli::run_experiment(tiny(), dir, quiet());
  ASSERT_EQ(r.status, cli::RunStatus::ok) << r.message;
  const auto m = manifest(dir);
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["config_hash"], train::hex(train::config_hash(tiny())));
  EXPECT_EQ(m["version"], cli::version_string());
  EXPECT_TRUE(m["wall_seconds"].is_number());
  std::set<std::string> referenced;
  for (const auto& [k, v] : m["outputs"].items()) referenced.insert(v.get<std::string>());
  std::set<std::string> present;
  for (const auto& e : fs::directory_iterator(dir)) present.insert(e.path().filename().string());
  EXPECT_EQ(present, referenced);
  for (const char* f : {"losses.csv", "iou_target.csv", "metrics.csv", "change_classifier.csv",
                        "spectrum_classifier.csv", "plots.svg", "checkpoint.tdac"})
    EXPECT_TRUE(referenced.count(f)) << f;
  EXPECT_NEAR(m["metrics"]["target_miou"].get<double>(), r.metrics.target_miou, 0);
}

TEST(Run, IdenticalConfigsGiveIdenticalMetricFiles) {
  const auto a = fresh_dir("det_a"), b = fresh_dir("det_b");
  ASSERT_TRUE(cli::run_experiment(tiny(), a, quiet()).succeeded());
  ASSERT_TRUE(cli::run_experiment(tiny(), b, quiet()).succeeded());
  for (const char* f : {"metrics.csv", "iou_target.csv", "iou_source.csv", "losses.csv", "change_classifier.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Run, SplitRunReproducesEveryArtifact) {
  const auto whole = fresh_dir("whole"), split = fresh_dir("split");
  ASSERT_TRUE(cli::run_experiment(tiny(), whole, quiet()).succeeded());
  auto o = quiet();
  o.max_steps = 3;
  auto r = cli::run_experiment(tiny(), split, o);
  EXPECT_EQ(r.status, cli::RunStatus::partial);
  EXPECT_EQ(manifest(split)["status"], "partial");
  o.max_steps = 4;  // crosses the warm-up / round boundary
  EXPECT_EQ(cli::run_experiment(tiny(), split, o).status, cli::RunStatus::partial);
  o.max_steps = -1;
  r = cli::run_experiment(tiny(), split, o);
  ASSERT_EQ(r.status, cli::RunStatus::ok) << r.message;
  EXPECT_EQ(manifest(split)["resumed_from_iteration"], 7);
  for (const auto& e : fs::directory_iterator(whole)) {
    const auto f = e.path().filename();
    if (f == cli::kManifest) continue;
    EXPECT_EQ(slurp(whole / f), slurp(split / f)) << f;
  }
}

TEST(Run, FinishedRunIsReusedUnlessResumeIsOff) {
  const auto dir = fresh_dir("reuse");
  const auto first = cli::run_experiment(tiny(), dir, quiet());
  ASSERT_TRUE(first.succeeded());
  const auto second = cli::run_experiment(tiny(), dir, quiet());
  EXPECT_EQ(second.status, cli::RunStatus::cached);
  EXPECT_EQ(second.metrics.target_miou, first.metrics.target_miou);
  auto o = quiet();
  o.resume = false;
  EXPECT_EQ(cli::run_experiment(tiny(), dir, o).status, cli::RunStatus::ok);
  auto other = tiny();
  other.seed = 5;
  EXPECT_THROW(cli::run_experiment(other, dir, quiet()), ConfigError);  // another config's results
  EXPECT_EQ(cli::run_experiment(other, dir, o).status, cli::RunStatus::ok);
}

TEST(Run, NumericAbortIsReportedInTheManifest) {
  auto c = tiny();
  c.optim.lr_fc = 1e30;
  const auto dir = fresh_dir("abort");
  const auto r = cli::run_experiment(c, dir, quiet());
  EXPECT_EQ(r.status, cli::RunStatus::numeric_abort);
  EXPECT_EQ(r.exit_code(), cli::kExitNumeric);
  const auto m = manifest(dir);
  EXPECT_EQ(m["status"], "numeric_abort");
  EXPECT_NE(m["error"].get<std::string>().find("iteration"), std::string::npos);
}

TEST(Config, LoadAppliesOverridesAndRejectsMissingFiles) {
  const auto dir = fresh_dir("load");
  fs::create_directories(dir);
  cli::write_text(dir / "c.json", train::to_json(tiny()).dump());
  EXPECT_EQ(cli::load_config(dir / "c.json", {"seed=3"}).seed, 3u);
  EXPECT_THROW(cli::load_config(dir / "missing.json"), ConfigError);
  EXPECT_THROW(cli::load_config(dir / "c.json", {"nope=1"}), ConfigError);
}

// --- Matrices ---------------------------------------------------------------------

TEST(Matrix, MomentumGridSortsAndAggregates) {
  auto c = tiny();
  c.schedule = {2, 2, 1};
  const auto root = fresh_dir("mgrid");
  const auto rep = cli::momentum_grid(c, {0.99, 0.0, 0.9}, {0, 1}, root, {quiet(), 2});
  EXPECT_EQ(rep.exit_code(), cli::kExitOk);
  const auto rows = read_csv(rep.summary);
  ASSERT_EQ(rows.size(), 1u + 3 * 2 + 3);
  EXPECT_EQ(rows[0][0], "m");
  std::vector<std::string> order;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (order.empty() || order.back() != rows[i][0]) order.push_back(rows[i][0]);
  EXPECT_EQ(order, (std::vector<std::string>{"0", "0.9", "0.99"}));
  EXPECT_EQ(rows[3][1], "mean±std");
}

TEST(Matrix, AblationResumesAndRecordsFailures) {
  auto c = tiny();
  c.schedule = {1, 1, 1};
  const auto root = fresh_dir("ablate");
  const auto rep = cli::ablation_matrix(c, {0}, {nets::ExtractorKind::cnn}, root, {quiet(), 1});
  EXPECT_EQ(rep.jobs.size(), 18u);
  EXPECT_EQ(rep.skipped.size(), 6u);
  EXPECT_EQ(rep.exit_code(), cli::kExitOk);
  EXPECT_EQ(read_csv(rep.summary).size(), 1u + 18 * 2);
  const auto again = cli::ablation_matrix(c, {0}, {nets::ExtractorKind::cnn}, root, {quiet(), 1});
  for (const auto& r : again.results) EXPECT_EQ(r.status, cli::RunStatus::cached);
  EXPECT_EQ(slurp(rep.summary), slurp(again.summary));

  c.optim.lr_fc = 1e30;
  c.schedule = {3, 1, 1};  // the first step of a linear warm-up has zero learning rate
  const auto bad = cli::ablation_matrix(c, {0}, {nets::ExtractorKind::cnn}, fresh_dir("ablate_bad"), {quiet(), 1});
  EXPECT_EQ(bad.failures(), 18u);
  EXPECT_EQ(bad.exit_code(), cli::kExitPartial);
  EXPECT_TRUE(fs::exists(bad.root / "failures.csv"));
  EXPECT_EQ(manifest(bad.root)["status"], "partial");
}

// --- Toy --------------------------------------------------------------------------

TEST(Toy, ThreeSpectraAndDeterministicFiles) {
  diag::ToyConfig cfg;
  cfg.seeds = {0, 1, 2, 3};
  const auto a = cli::toy_report(fresh_dir("toy_a"), cfg);
  const auto b = cli::toy_report(fresh_dir("toy_b"), cfg);
  std::size_t spectra = 0;
  for (const auto& e : fs::directory_iterator(a.files.front().parent_path()))
    spectra += e.path().filename().string().rfind("toy_spectrum_", 0) == 0;
  EXPECT_EQ(spectra, 3u);
  ASSERT_EQ(a.files.size(), b.files.size());
  for (std::size_t i = 0; i < a.files.size(); ++i) EXPECT_EQ(slurp(a.files[i]), slurp(b.files[i]));
}

// --- Binary -----------------------------------------------------------------------

struct Invocation {
  int code;
  std::string err;
};

Invocation invoke(const std::string& args, const fs::path& out_root) {
  const auto err = fs::temp_directory_path() / "smoothda_cli_stderr.txt";
  const std::string cmd = "SMOOTHDA_OUT='" + out_root.string() + "' '" + SMOOTHDA_CLI_PATH + "' " + args +
                          " >/dev/null 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

class Binary : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fresh_dir("bin");
    fs::create_directories(root);
    cfg = root / "exp.json";
    auto c = tiny();
    c.schedule = {2, 2, 1};
    cli::write_text(cfg, train::to_json(c).dump(2));
  }
  fs::path root, cfg;
};

TEST_F(Binary, ExitCodes) {
  const auto out = root / "out";
  auto r = invoke("run --config '" + (root / "missing.json").string() + "'", out);
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_FALSE(fs::exists(out));
  r = invoke("run --config '" + cfg.string() + "' --set model.bogus=1", out);
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("valid keys here: kind, patch_size"), std::string::npos) << r.err;
  r = invoke("run --config '" + cfg.string() + "' --set discriminator=none", out);
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("dynamic_weights requires a discriminator"), std::string::npos) << r.err;
  EXPECT_EQ(invoke("frobnicate", out).code, cli::kExitConfig);
  EXPECT_EQ(invoke("run --config '" + cfg.string() + "' --set optim.lr_fc=1e30", out).code, cli::kExitNumeric);
  EXPECT_EQ(invoke("ablate --config '" + cfg.string() + "' --set optim.lr_fc=1e30 --backbones cnn", out).code,
            cli::kExitPartial);
  EXPECT_EQ(invoke("toy --seeds 5 --assert-ordering", out).code, cli::kExitOk);
  EXPECT_NE(invoke("toy --seeds 5 --sigmas 10,1,0.5 --assert-ordering --out '" + (out / "rev").string() + "'", out).code,
            cli::kExitOk);
}

TEST_F(Binary, OverridesAndDefaultOutputRoot) {
  const auto out = root / "env_root";
  ASSERT_EQ(invoke("run --config '" + cfg.string() + "' --set seed=3", out).code, 0);
  std::vector<fs::path> runs;
  for (const auto& e : fs::directory_iterator(out)) runs.push_back(e.path());
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_NE(runs[0].filename().string().find("seed3"), std::string::npos);
  EXPECT_EQ(manifest(runs[0])["seed"], 3);

  ASSERT_EQ(invoke("eval --checkpoint '" + (runs[0] / "checkpoint.tdac").string() + "'", out).code, 0);
  ASSERT_EQ(invoke("export-data --config '" + cfg.string() + "' --out '" + (root / "data").string() + "'", out).code, 0);
  const auto ds = data::read_dataset((root / "data" / "target_test.tdad").string(), data::Domain::target);
  EXPECT_EQ(ds.samples.size(), tiny().data.n_test);
}

TEST_F(Binary, RestartedProcessesGiveIdenticalMetricFiles) {
  const auto a = root / "a", b = root / "b";
  ASSERT_EQ(invoke("run --config '" + cfg.string() + "' --out '" + a.string() + "'", root).code, 0);
  ASSERT_EQ(invoke("run --config '" + cfg.string() + "' --out '" + b.string() + "' --max-steps 3", root).code, 0);
  ASSERT_EQ(invoke("run --config '" + cfg.string() + "' --out '" + b.string() + "'", root).code, 0);
  for (const char* f : {"metrics.csv", "iou_target.csv", "iou_source.csv", "losses.csv", "checkpoint.tdac"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

}  // namespace
}  // namespace smoothda
