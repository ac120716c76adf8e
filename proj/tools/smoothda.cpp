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


// smoothda: batch experiment runner.
//
//   smoothda run --config exp.json [--set key=value ...]
//   smoothda ablate --config exp.json --seeds 0,1,2 [--backbones local_vit,cnn]
//   smoothda mgrid --config exp.json --seeds 0,1,2 [--m 0,0.9,0.99,0.999,0.9999]
//   smoothda toy [--seeds 20] [--assert-ordering]
//   smoothda eval --checkpoint run/checkpoint.tdac [--config run/config.json]
//   smoothda export-data --config exp.json --out data/
//
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 numeric abort,
// 4 some matrix runs failed.

#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "smoothda/cli.hpp"

namespace {

namespace cli = smoothda::cli;
namespace fs = std::filesystem;
using smoothda::train::Json;

void report_error(const char* kind, const std::string& message) {
  std::cerr << Json{{"error", kind}, {"message", message}}.dump() << '\n';
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::int64_t log_every = 100;
  std::size_t workers = 1;
};

void add_common(CLI::App* app, Common& c, bool config_required = true) {
  auto* opt = app->add_option("--config", c.config, "experiment JSON");
  if (config_required) opt->required();
  app->add_option("--set", c.sets, "dot-path override key=value (repeatable)");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--log-every", c.log_every, "progress line interval in iterations, 0 for quiet");
  app->add_option("--workers", c.workers, "data generation threads")->check(CLI::PositiveNumber);
}

cli::RunOptions run_options(const Common& c, bool resume) {
  cli::RunOptions o;
  o.resume = resume;
  o.log_every = c.log_every;
  o.log = &std::cerr;
  o.workers = c.workers;
  return o;
}

std::vector<std::uint64_t> seed_list(const std::vector<std::uint64_t>& given, std::uint64_t fallback) {
  return given.empty() ? std::vector<std::uint64_t>{fallback} : given;
}

int print_matrix(const cli::MatrixReport& rep) {
  std::cout << rep.summary.string() << '\n';
  if (rep.failures())
    std::cerr << rep.failures() << " of " << rep.jobs.size() << " runs failed; see "
              << (rep.root / "failures.csv").string() << '\n';
  return rep.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smoothda: momentum-smoothed domain adaptation experiments on synthetic scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", cli::version_string());

  Common run_c;
  bool no_resume = false;
  std::int64_t ckpt_every = 1000;
  auto* run = app.add_subcommand("run", "train one configuration");
  add_common(run, run_c);
  run->add_flag("--no-resume", no_resume, "ignore existing checkpoints and finished runs");
  run->add_option("--checkpoint-every", ckpt_every, "iterations between checkpoints, 0 for final only");
  std::int64_t max_steps = -1;
  run->add_option("--max-steps", max_steps, "stop after this many steps; rerun to resume");

  Common abl_c;
  std::vector<std::uint64_t> abl_seeds;
  std::vector<std::string> backbones;
  std::size_t jobs = 1;
  auto* ablate = app.add_subcommand("ablate", "discriminator x dynamic x MoPL x MoFA matrix");
  add_common(ablate, abl_c);
  ablate->add_option("--seeds", abl_seeds, "seeds, comma separated")->delimiter(',');
  ablate->add_option("--backbones", backbones, "local_vit and/or cnn, comma separated")->delimiter(',');
  ablate->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);
  ablate->add_flag("--no-resume", no_resume, "recompute finished runs");

  Common mg_c;
  std::vector<std::uint64_t> mg_seeds;
  std::vector<double> momenta = cli::kDefaultMomenta;
  auto* mgrid = app.add_subcommand("mgrid", "momentum grid");
  add_common(mgrid, mg_c);
  mgrid->add_option("--seeds", mg_seeds, "seeds, comma separated")->delimiter(',');
  mgrid->add_option("--m", momenta, "momentum values, comma separated")->delimiter(',');
  mgrid->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);
  mgrid->add_flag("--no-resume", no_resume, "recompute finished runs");

  std::string toy_out;
  std::size_t toy_seeds = 20;
  std::uint64_t toy_first_seed = 0;
  smoothda::diag::ToyConfig toy_cfg;
  bool assert_ordering = false;
  double min_fraction = 0.95;
  auto* toy = app.add_subcommand("toy", "Gaussian logit toy: change of predictions and spectra");
  toy->add_option("--out", toy_out, "output directory");
  toy->add_option("--seeds", toy_seeds, "number of seeds")->check(CLI::PositiveNumber);
  toy->add_option("--first-seed", toy_first_seed, "first seed");
  toy->add_option("--sigmas", toy_cfg.sigmas, "logit standard deviations, comma separated")->delimiter(',');
  toy->add_option("--classes", toy_cfg.num_classes, "categories");
  toy->add_option("--steps", toy_cfg.steps, "time steps");
  toy->add_flag("--assert-ordering", assert_ordering, "exit 1 unless both statistics are ordered by sigma");
  toy->add_option("--min-fraction", min_fraction, "fraction of seeds that must be ordered");

  Common ev_c;
  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, ev_c, false);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);

  Common ex_c;
  auto* exp = app.add_subcommand("export-data", "write the synthetic data pools as TDAD files");
  add_common(exp, ex_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitConfig;
  }

  try {
    if (*run) {
      auto cfg = cli::load_config(run_c.config, run_c.sets);
      const fs::path dir = run_c.out.empty() ? cli::default_run_dir(cfg) : fs::path(run_c.out);
      auto opt = run_options(run_c, !no_resume);
      opt.checkpoint_every = ckpt_every;
      opt.max_steps = max_steps;
      const auto res = cli::run_experiment(cfg, dir, opt);
      if (res.failed()) report_error(res.status == cli::RunStatus::numeric_abort ? "numeric" : "run", res.message);
      std::cout << (dir / cli::kManifest).string() << '\n';
      return res.exit_code();
    }
    if (*ablate) {
      const auto cfg = cli::load_config(abl_c.config, abl_c.sets);
      std::vector<smoothda::nets::ExtractorKind> kinds;
      for (const auto& b : backbones) kinds.push_back(smoothda::nets::extractor_kind_from(b));
      if (kinds.empty()) kinds.push_back(cfg.extractor.kind);
      const fs::path root = abl_c.out.empty() ? cli::default_output_root() / "ablation" : fs::path(abl_c.out);
      return print_matrix(cli::ablation_matrix(cfg, seed_list(abl_seeds, cfg.seed), kinds, root,
                                               {run_options(abl_c, !no_resume), jobs}));
    }
    if (*mgrid) {
      const auto cfg = cli::load_config(mg_c.config, mg_c.sets);
      const fs::path root = mg_c.out.empty() ? cli::default_output_root() / "mgrid" : fs::path(mg_c.out);
      return print_matrix(cli::momentum_grid(cfg, momenta, seed_list(mg_seeds, cfg.seed), root,
                                             {run_options(mg_c, !no_resume), jobs}));
    }
    if (*toy) {
      toy_cfg.seeds.resize(toy_seeds);
      std::iota(toy_cfg.seeds.begin(), toy_cfg.seeds.end(), toy_first_seed);
      const fs::path out = toy_out.empty() ? cli::default_output_root() / "toy" : fs::path(toy_out);
      const auto res = cli::toy_report(out, toy_cfg);
      std::cout << "ordered_fraction_change " << res.report.ordered_fraction_change << "\nordered_fraction_high_band "
                << res.report.ordered_fraction_high_band << '\n';
      if (assert_ordering && (res.report.ordered_fraction_change < min_fraction ||
                              res.report.ordered_fraction_high_band < min_fraction)) {
        report_error("assertion", "sigma ordering holds in fewer than " + std::to_string(min_fraction) +
                                      " of seeds");
        return cli::kExitFailure;
      }
      return cli::kExitOk;
    }
    if (*eval) {
      const fs::path cfg_path = ev_c.config.empty() ? fs::path(checkpoint).parent_path() / "config.json"
                                                    : fs::path(ev_c.config);
      const auto cfg = cli::load_config(cfg_path, ev_c.sets);
      const auto res = cli::evaluate_checkpoint(checkpoint, cfg, ev_c.workers);
      if (!ev_c.out.empty()) {
        fs::create_directories(ev_c.out);
        std::ostringstream t, s;
        smoothda::metrics::write_iou_csv(t, res.target);
        smoothda::metrics::write_iou_csv(s, res.source);
        cli::write_text(fs::path(ev_c.out) / "iou_target.csv", t.str());
        cli::write_text(fs::path(ev_c.out) / "iou_source.csv", s.str());
      }
      std::cout << cli::to_json(res).dump(2) << '\n';
      return cli::kExitOk;
    }
    if (*exp) {
      const auto cfg = cli::load_config(ex_c.config, ex_c.sets);
      const fs::path out = ex_c.out.empty() ? cli::default_output_root() /
                                                  ("data-" + smoothda::train::hex(smoothda::train::config_hash(cfg)).substr(0, 8))
                                            : fs::path(ex_c.out);
      for (const auto& f : cli::export_data(cfg, out, ex_c.workers)) std::cout << f.string() << '\n';
      return cli::kExitOk;
    }
  } catch (const smoothda::ConfigError& e) {
    report_error("config", e.what());
    return cli::kExitConfig;
  } catch (const smoothda::train::NumericAbort& e) {
    report_error("numeric", e.what());
    return cli::kExitNumeric;
  } catch (const std::exception& e) {
    report_error("failure", e.what());
    return cli::kExitFailure;
  }
  return cli::kExitOk;
}
