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


#pragma once

// Multi-run sweeps: the discriminator x dynamic x MoPL x MoFA ablation and
// the momentum grid. Runs are independent and may execute concurrently;
// summary assembly happens after all of them finish.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "smoothda/cli/run.hpp"

namespace smoothda::cli {

struct MatrixOptions {
  RunOptions run;
  std::size_t jobs = 1;
};

/// One run of a sweep. `key` holds the leading summary cells of its group.
struct MatrixJob {
  std::vector<std::string> key;
  std::uint64_t seed = 0;
  train::ExperimentConfig cfg;
  fs::path dir;
};

struct MatrixReport {
  fs::path root;
  fs::path summary;
  std::vector<MatrixJob> jobs;
  std::vector<RunResult> results;                           // parallel to jobs
  std::vector<std::pair<std::string, std::string>> skipped;  // (name, reason)

  std::size_t failures() const {
    return static_cast<std::size_t>(
        std::count_if(results.begin(), results.end(), [](const RunResult& r) { return r.failed(); }));
  }
  int exit_code() const { return failures() ? kExitPartial : kExitOk; }
};

/// Mean and sample standard deviation (n - 1; zero for a single value).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  r.n = v.size();
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double x : v) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return r;
}

/// Executes every job; failures are captured, never thrown.
inline std::vector<RunResult> execute(const std::vector<MatrixJob>& jobs, const MatrixOptions& opt) {
  std::vector<RunResult> out(jobs.size());
  std::mutex log_mutex;
  RunOptions ro = opt.run;
  if (!ro.log_mutex) ro.log_mutex = &log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        out[i] = run_experiment(jobs[i].cfg, jobs[i].dir, ro);
      } catch (const std::exception& e) {
        out[i] = RunResult{RunStatus::failed, jobs[i].dir, {}, e.what()};
      }
      if (out[i].failed()) detail::say(ro, "[" + jobs[i].dir.string() + "] failed: " + out[i].message);
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(opt.jobs, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

namespace detail {

inline std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline std::string agg_cell(const std::vector<double>& v) {
  if (v.empty()) return {};
  const auto s = mean_std(v);
  return format_double(s.mean) + "±" + format_double(s.std);
}

inline std::string join(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s;
}

/// Per-run rows grouped by key (in first-appearance order), each group
/// followed by one mean+-std aggregate row over its successful runs.
inline std::string summary_csv(const std::vector<std::string>& key_header, const std::vector<MatrixJob>& jobs,
                               const std::vector<RunResult>& results) {
  std::ostringstream os;
  auto header = key_header;
  for (const char* h : {"seed", "target_miou", "mean_change_classifier", "mean_change_discriminator"})
    header.push_back(h);
  os << join(header) << '\n';
  std::vector<std::vector<std::string>> keys;
  for (const auto& j : jobs)
    if (std::find(keys.begin(), keys.end(), j.key) == keys.end()) keys.push_back(j.key);
  for (const auto& key : keys) {
    std::vector<double> miou, cc, cd;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].key != key) continue;
      auto row = key;
      row.push_back(std::to_string(jobs[i].seed));
      if (results[i].succeeded()) {
        const auto& m = results[i].metrics;
        row.push_back(format_double(m.target_miou));
        row.push_back(cell(m.mean_change_classifier));
        row.push_back(cell(m.mean_change_discriminator));
        miou.push_back(m.target_miou);
        if (m.mean_change_classifier) cc.push_back(*m.mean_change_classifier);
        if (m.mean_change_discriminator) cd.push_back(*m.mean_change_discriminator);
      } else {
        row.insert(row.end(), {"", "", ""});
      }
      os << join(row) << '\n';
    }
    auto agg = key;
    agg.push_back("mean±std");
    agg.push_back(agg_cell(miou));
    agg.push_back(agg_cell(cc));
    agg.push_back(agg_cell(cd));
    os << join(agg) << '\n';
  }
  return os.str();
}

inline std::string csv_quote(const std::string& s) {
  std::string o = "\"";
  for (char c : s) o += c == '"' ? std::string("\"\"") : std::string(1, c);
  return o + "\"";
}

/// Runs the jobs and writes summary.csv, failures.csv (when any) and a
/// manifest under `root`.
inline MatrixReport run_matrix(const std::string& kind, const fs::path& root, const std::vector<std::string>& key_header,
                               std::vector<MatrixJob> jobs, std::vector<std::pair<std::string, std::string>> skipped,
                               const MatrixOptions& opt) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root))
    throw ConfigError("cannot create output directory '" + root.string() + "': " + ec.message());
  Json manifest{{"kind", kind},           {"version", version_string()}, {"status", "running"},
                {"started", utc_now()},   {"finished", nullptr},         {"wall_seconds", nullptr},
                {"outputs", Json::object()}, {"runs", Json::array()},     {"skipped", Json::array()}};
  for (const auto& [name, why] : skipped) manifest["skipped"].push_back({{"variant", name}, {"reason", why}});
  write_text(root / kManifest, manifest.dump(2) + "\n");

  MatrixReport rep;
  rep.root = root;
  rep.summary = root / "summary.csv";
  rep.results = execute(jobs, opt);
  rep.jobs = std::move(jobs);
  rep.skipped = std::move(skipped);

  write_text(rep.summary, summary_csv(key_header, rep.jobs, rep.results));
  Json outputs{{"manifest", kManifest}, {"summary", "summary.csv"}};
  if (rep.failures()) {
    std::ostringstream os;
    os << "run,seed,status,message\n";
    for (std::size_t i = 0; i < rep.jobs.size(); ++i) {
      if (!rep.results[i].failed()) continue;
      os << fs::relative(rep.jobs[i].dir, root).string() << ',' << rep.jobs[i].seed << ','
         << to_string(rep.results[i].status) << ',' << csv_quote(rep.results[i].message) << '\n';
    }
    write_text(root / "failures.csv", os.str());
    outputs["failures"] = "failures.csv";
  }
  for (std::size_t i = 0; i < rep.jobs.size(); ++i) {
    manifest["runs"].push_back({{"dir", fs::relative(rep.jobs[i].dir, root).string()},
                                {"seed", rep.jobs[i].seed},
                                {"status", std::string(to_string(rep.results[i].status))},
                                {"manifest", (fs::relative(rep.jobs[i].dir, root) / kManifest).string()}});
  }
  manifest["outputs"] = outputs;
  manifest["status"] = rep.failures() ? "partial" : "ok";
  manifest["finished"] = utc_now();
  manifest["wall_seconds"] = std::chrono::duration<double>(clock::now() - t0).count();
  write_text(root / kManifest, manifest.dump(2) + "\n");
  return rep;
}

}  // namespace detail

// --- Ablation ---------------------------------------------------------------------

struct Variant {
  nets::DiscriminatorMode discriminator = nets::DiscriminatorMode::none;
  bool dynamic = false;
  bool mo_pl = false;
  bool mo_fa = false;
  nets::ExtractorKind backbone = nets::ExtractorKind::local_vit;

  std::string name() const {
    return std::string(nets::to_string(discriminator)) + "-dyn" + std::to_string(dynamic) + "-pl" +
           std::to_string(mo_pl) + "-fa" + std::to_string(mo_fa) + "-" + std::string(nets::to_string(backbone));
  }
  std::vector<std::string> key() const {
    return {std::string(nets::to_string(discriminator)), std::to_string(dynamic), std::to_string(mo_pl),
            std::to_string(mo_fa), std::string(nets::to_string(backbone))};
  }
};

/// `base` with the variant applied; throws ConfigError for illegal combinations.
inline train::ExperimentConfig apply_variant(train::ExperimentConfig cfg, const Variant& v) {
  cfg.discriminator = v.discriminator;
  cfg.dynamic_weights = v.dynamic;
  cfg.smoothing.mo_pl = v.mo_pl;
  cfg.smoothing.mo_fa = v.mo_fa;
  cfg.extractor.kind = v.backbone;
  cfg.validate();
  return cfg;
}

struct VariantSet {
  std::vector<Variant> legal;
  std::vector<std::pair<Variant, std::string>> illegal;  // with the rejection message
};

/// Full {none, binary, class} x dynamic x MoPL x MoFA product per backbone,
/// split by config validation.
inline VariantSet ablation_variants(const train::ExperimentConfig& base,
                                    const std::vector<nets::ExtractorKind>& backbones) {
  VariantSet out;
  for (auto bb : backbones)
    for (auto d : {nets::DiscriminatorMode::none, nets::DiscriminatorMode::binary, nets::DiscriminatorMode::class_level})
      for (bool dyn : {false, true})
        for (bool pl : {false, true})
          for (bool fa : {false, true}) {
            const Variant v{d, dyn, pl, fa, bb};
            try {
              apply_variant(base, v);
              out.legal.push_back(v);
            } catch (const ConfigError& e) {
              out.illegal.emplace_back(v, e.what());
            }
          }
  return out;
}

inline MatrixReport ablation_matrix(const train::ExperimentConfig& base, const std::vector<std::uint64_t>& seeds,
                                    const std::vector<nets::ExtractorKind>& backbones, const fs::path& root,
                                    const MatrixOptions& opt = {}) {
  if (seeds.empty()) throw ConfigError("ablate: no seeds given");
  if (backbones.empty()) throw ConfigError("ablate: no backbones given");
  const auto set = ablation_variants(base, backbones);
  std::vector<std::pair<std::string, std::string>> skipped;
  for (const auto& [v, why] : set.illegal) {
    skipped.emplace_back(v.name(), why);
    detail::say(opt.run, "skipping illegal variant " + v.name() + ": " + why);
  }
  std::vector<MatrixJob> jobs;
  for (const auto& v : set.legal)
    for (auto seed : seeds) {
      MatrixJob j{v.key(), seed, apply_variant(base, v), root / v.name() / ("seed" + std::to_string(seed))};
      j.cfg.seed = seed;
      j.cfg.output_dir = j.dir.string();
      jobs.push_back(std::move(j));
    }
  return detail::run_matrix("ablation", root, {"discriminator", "dynamic", "mo_pl", "mo_fa", "backbone"},
                            std::move(jobs), std::move(skipped), opt);
}

// --- Momentum grid ----------------------------------------------------------------

inline const std::vector<double> kDefaultMomenta = {0.0, 0.9, 0.99, 0.999, 0.9999};

/// Sweeps only m. When the base config enables no smoothing branch, MoPL
/// (and MoFA when a discriminator exists) is switched on.
inline MatrixReport momentum_grid(const train::ExperimentConfig& base, std::vector<double> m_values,
                                  const std::vector<std::uint64_t>& seeds, const fs::path& root,
                                  const MatrixOptions& opt = {}) {
  if (seeds.empty()) throw ConfigError("mgrid: no seeds given");
  if (m_values.empty()) throw ConfigError("mgrid: no momentum values given");
  std::sort(m_values.begin(), m_values.end());
  m_values.erase(std::unique(m_values.begin(), m_values.end()), m_values.end());
  train::ExperimentConfig b = base;
  if (!b.smoothing.active()) {
    b.smoothing.mo_pl = true;
    b.smoothing.mo_fa = b.has_discriminator();
  }
  std::vector<MatrixJob> jobs;
  for (double m : m_values) {
    train::ExperimentConfig c = b;
    c.smoothing.m = m;
    c.validate();
    const auto label = detail::format_double(m);
    for (auto seed : seeds) {
      MatrixJob j{{label}, seed, c, root / ("m" + label) / ("seed" + std::to_string(seed))};
      j.cfg.seed = seed;
      j.cfg.output_dir = j.dir.string();
      jobs.push_back(std::move(j));
    }
  }
  return detail::run_matrix("momentum_grid", root, {"m"}, std::move(jobs), {}, opt);
}

}  // namespace smoothda::cli
