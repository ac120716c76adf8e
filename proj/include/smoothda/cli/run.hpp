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

// Single experiment runs: output layout, manifest, resume, artifacts.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "smoothda/diagnostics.hpp"
#include "smoothda/metrics.hpp"
#include "smoothda/svg.hpp"
#include "smoothda/trainer.hpp"

#ifndef SMOOTHDA_DESCRIBE
#define SMOOTHDA_DESCRIBE "v0.0.0-unknown"
#endif

namespace smoothda::cli {

namespace fs = std::filesystem;
using train::Json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitPartial = 4;

inline constexpr const char* kOutEnv = "SMOOTHDA_OUT";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kCheckpoint = "checkpoint.tdac";
inline constexpr const char* kTraceState = "traces.json";

inline std::string version_string() { return SMOOTHDA_DESCRIBE; }

/// $SMOOTHDA_OUT when set and non-empty, else ./runs.
inline fs::path default_output_root() {
  const char* env = std::getenv(kOutEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw ConfigError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Write to a sibling temp file then rename, so readers never see a torn file.
inline void write_text(const fs::path& p, const std::string& text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write '" + tmp.string() + "'");
    os << text;
    if (!os.flush()) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, p);
}

/// Config file plus `key=value` overrides, validated.
inline train::ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides = {}) {
  if (!fs::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  for (const auto& o : overrides) train::apply_override(j, o);
  return train::from_json(j);
}

/// Config with overrides applied to the in-memory document.
inline train::ExperimentConfig with_overrides(const train::ExperimentConfig& base,
                                              const std::vector<std::string>& overrides) {
  Json j = train::to_json(base);
  for (const auto& o : overrides) train::apply_override(j, o);
  return train::from_json(j);
}

inline fs::path default_run_dir(const train::ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return default_output_root() / ("run-" + train::hex(train::config_hash(cfg)).substr(0, 8) + "-seed" +
                                  std::to_string(cfg.seed));
}

/// Wall-clock seconds recorded in a finished run's manifest.
inline double manifest_seconds(const fs::path& dir) {
  const auto j = Json::parse(read_text(dir / kManifest));
  return j.value("wall_seconds", 0.0);
}

// --- Run --------------------------------------------------------------------------

struct RunMetrics {
  double target_miou = 0.0;
  double source_miou = 0.0;
  std::optional<double> target_miou_momentum;
  std::optional<double> mean_change_classifier;
  std::optional<double> mean_change_discriminator;
  std::int64_t iterations = 0;
};

inline Json to_json(const RunMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  return Json{{"target_miou", m.target_miou},
              {"source_miou", m.source_miou},
              {"target_miou_momentum", opt(m.target_miou_momentum)},
              {"mean_change_classifier", opt(m.mean_change_classifier)},
              {"mean_change_discriminator", opt(m.mean_change_discriminator)},
              {"iterations", m.iterations}};
}

inline RunMetrics metrics_from_json(const Json& j) {
  auto opt = [&j](const char* k) {
    return j.contains(k) && j[k].is_number() ? std::optional<double>(j[k].get<double>()) : std::nullopt;
  };
  RunMetrics m;
  m.target_miou = j.at("target_miou").get<double>();
  m.source_miou = j.at("source_miou").get<double>();
  m.target_miou_momentum = opt("target_miou_momentum");
  m.mean_change_classifier = opt("mean_change_classifier");
  m.mean_change_discriminator = opt("mean_change_discriminator");
  m.iterations = j.at("iterations").get<std::int64_t>();
  return m;
}

struct RunOptions {
  bool resume = true;                    // continue from checkpoint / reuse a finished run
  std::int64_t checkpoint_every = 1000;  // 0: final checkpoint only
  std::int64_t log_every = 0;            // progress lines on `log`; 0 disables
  std::ostream* log = nullptr;
  std::mutex* log_mutex = nullptr;       // shared when runs execute concurrently
  std::size_t workers = 1;               // data generation threads
  std::int64_t max_steps = -1;           // >= 0: stop after this many steps, resumable
};

enum class RunStatus { ok, cached, partial, numeric_abort, failed };

inline std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::cached: return "cached";
    case RunStatus::partial: return "partial";
    case RunStatus::numeric_abort: return "numeric_abort";
    case RunStatus::failed: return "failed";
  }
  return "failed";
}

struct RunResult {
  RunStatus status = RunStatus::failed;
  fs::path dir;
  RunMetrics metrics;
  std::string message;

  bool succeeded() const { return status == RunStatus::ok || status == RunStatus::cached; }
  bool failed() const { return status == RunStatus::numeric_abort || status == RunStatus::failed; }
  int exit_code() const {
    switch (status) {
      case RunStatus::ok:
      case RunStatus::cached:
      case RunStatus::partial: return kExitOk;
      case RunStatus::numeric_abort: return kExitNumeric;
      case RunStatus::failed: return kExitFailure;
    }
    return kExitFailure;
  }
};

namespace detail {

inline void say(const RunOptions& o, const std::string& line) {
  if (!o.log) return;
  std::unique_lock<std::mutex> lock;
  if (o.log_mutex) lock = std::unique_lock<std::mutex>(*o.log_mutex);
  *o.log << line << '\n' << std::flush;
}

/// Keeps the header and the rows logged before `iteration`.
inline void truncate_loss_csv(const fs::path& p, std::int64_t iteration) {
  std::ifstream is(p);
  std::ostringstream kept;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      kept << line << '\n';
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) < iteration) kept << line << '\n';
  }
  is.close();
  write_text(p, kept.str());
}

inline std::vector<double> as_x(const std::vector<std::uint64_t>& it, std::size_t skip) {
  std::vector<double> x;
  for (std::size_t i = skip; i < it.size(); ++i) x.push_back(static_cast<double>(it[i]));
  return x;
}

/// Mean amplitude over categories, positive bins only.
inline svg::Series spectrum_series(const diag::Spectrum& s, const std::string& name) {
  svg::Series out{name, {}, {}};
  for (std::size_t i = 0; i < s.frequencies.size(); ++i) {
    if (s.frequencies[i] <= 0) continue;
    double a = 0;
    for (const auto& row : s.amplitude) a += row[i];
    out.x.push_back(s.frequencies[i]);
    out.y.push_back(a / static_cast<double>(s.amplitude.size()));
  }
  return out;
}

inline Json trace_to_json(const diag::DynamicsTrace& t) {
  Json j{{"iterations", t.iterations()}, {"changes", t.changes()}, {"channel_means", t.channel_means()}};
  if (t.count()) {
    j["shape"] = t.shape();
    j["last"] = t.snapshots().back();
  }
  return j;
}

inline void trace_from_json(diag::DynamicsTrace& t, const Json& j) {
  if (j.at("iterations").empty()) return;
  t.restore(j.at("iterations").get<std::vector<std::uint64_t>>(), j.at("changes").get<std::vector<double>>(),
            j.at("channel_means").get<std::vector<std::vector<double>>>(), j.at("shape").get<ad::Shape>(),
            j.at("last").get<std::vector<float>>());
}

/// Probe trace history next to a checkpoint, so resumed runs keep it.
inline void save_trace_state(const fs::path& p, std::int64_t iteration, const train::TrainLog& log) {
  Json j{{"iteration", iteration},
         {"classifier", trace_to_json(log.pseudo_label())},
         {"discriminator", trace_to_json(log.discriminator())},
         {"student", trace_to_json(log.student())}};
  write_text(p, j.dump() + "\n");
}

/// False when the sidecar belongs to another iteration; the traces then
/// start afresh.
inline bool load_trace_state(const fs::path& p, std::int64_t iteration, train::TrainLog& log) {
  Json j;
  try {
    j = Json::parse(read_text(p));
  } catch (const std::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  if (j.value("iteration", std::int64_t{-1}) != iteration) return false;
  trace_from_json(log.pseudo_label(), j.at("classifier"));
  trace_from_json(log.discriminator(), j.at("discriminator"));
  trace_from_json(log.student(), j.at("student"));
  return true;
}

/// Loss curves read back from the CSV, so resumed runs plot every row.
inline svg::Chart loss_chart(const fs::path& csv) {
  svg::Chart chart{"Losses", "iteration", "loss", {}};
  std::vector<svg::Series> cols{{"ce_source", {}, {}}, {"ce_target", {}, {}}, {"adv", {}, {}}, {"sim", {}, {}}};
  std::ifstream is(csv);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 5) continue;
    const double x = std::stod(f[0]);
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (f[c + 1].empty()) continue;
      cols[c].x.push_back(x);
      cols[c].y.push_back(std::stod(f[c + 1]));
    }
  }
  for (auto& c : cols)
    if (!c.x.empty()) chart.series.push_back(std::move(c));
  return chart;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace detail

/// Runs warm-up and train phases for `cfg` in `dir`.
///
/// Layout: manifest.json, config.json, losses.csv, iou_target.csv,
/// iou_source.csv, metrics.csv, change_<trace>.csv, spectrum_<trace>.csv,
/// plots.svg, checkpoint.tdac. The manifest is written as a stub before
/// training and finalized afterwards. With `resume`, a finished run with the
/// same config hash is returned as cached and an unfinished one continues
/// from its checkpoint. `max_steps` ends the call early with a checkpoint
/// and status "partial". Throws ConfigError for unusable configs or
/// directories; training failures are reported in the result.
inline RunResult run_experiment(const train::ExperimentConfig& cfg, const fs::path& dir, const RunOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const std::string hash = train::hex(train::config_hash(cfg));
  const std::string tag = (dir.parent_path().filename() / dir.filename()).string();

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());

  const fs::path manifest_path = dir / kManifest;
  if (opt.resume && fs::exists(manifest_path)) {
    Json old;
    try {
      old = Json::parse(read_text(manifest_path));
    } catch (const std::exception&) {
      old = Json::object();
    }
    const std::string old_hash = old.value("config_hash", "");
    if (!old_hash.empty() && old_hash != hash) {
      throw ConfigError("output directory '" + dir.string() + "' holds a run with config hash " + old_hash +
                        " (current " + hash + "); choose another directory or disable resume to overwrite it");
    }
    if (old_hash == hash && old.value("status", "") == "ok" && old.contains("metrics")) {
      RunResult r{RunStatus::cached, dir, metrics_from_json(old["metrics"]), "completed run reused"};
      detail::say(opt, "[" + tag + "] already complete, reusing");
      return r;
    }
  }

  Json manifest{{"config_hash", hash},
                {"seed", cfg.seed},
                {"version", version_string()},
                {"status", "running"},
                {"started", utc_now()},
                {"finished", nullptr},
                {"wall_seconds", nullptr},
                {"resumed_from_iteration", nullptr},
                {"outputs", Json::object()},
                {"metrics", nullptr},
                {"error", nullptr}};
  write_text(manifest_path, manifest.dump(2) + "\n");
  write_text(dir / "config.json", train::to_json(cfg).dump(2) + "\n");
  Json outputs{{"manifest", kManifest}, {"config", "config.json"}, {"losses", "losses.csv"}};

  auto finalize = [&](RunResult r, const char* status) {
    manifest["status"] = status;
    manifest["finished"] = utc_now();
    manifest["wall_seconds"] = std::chrono::duration<double>(clock::now() - t0).count();
    if (fs::exists(dir / kCheckpoint)) outputs["checkpoint"] = kCheckpoint;
    if (fs::exists(dir / kTraceState)) outputs["trace_state"] = kTraceState;
    manifest["outputs"] = outputs;
    if (r.succeeded()) manifest["metrics"] = to_json(r.metrics);
    if (!r.message.empty() && r.failed()) manifest["error"] = r.message;
    write_text(manifest_path, manifest.dump(2) + "\n");
    return r;
  };

  const auto pools = train::make_pools(cfg, opt.workers);
  train::TrainLog log(derive_seed({cfg.seed, train::kSeedProbe}));
  train::TrainState st;
  const fs::path ckpt = dir / kCheckpoint;
  const fs::path loss_path = dir / "losses.csv";
  bool resumed = false;
  if (opt.resume && fs::exists(ckpt) && fs::exists(loss_path)) {
    st = train::load_checkpoint(ckpt.string(), cfg);
    resumed = true;
    manifest["resumed_from_iteration"] = st.iteration;
    detail::truncate_loss_csv(loss_path, st.iteration);
    if (!fs::exists(dir / kTraceState) || !detail::load_trace_state(dir / kTraceState, st.iteration, log))
      detail::say(opt, "[" + tag + "] no trace state for iteration " + std::to_string(st.iteration) +
                           ", probe traces restart");
    detail::say(opt, "[" + tag + "] resuming at iteration " + std::to_string(st.iteration));
  } else {
    st = train::init_state(cfg);
  }

  std::ofstream loss(loss_path, resumed ? std::ios::app : std::ios::trunc);
  if (!loss) throw ConfigError("cannot write '" + loss_path.string() + "'");
  if (!resumed) loss << train::kLossCsvHeader << '\n';

  log.sink = &loss;
  const auto total = cfg.schedule.total();
  log.on_step = [&](const train::TrainState& s) {
    if (opt.checkpoint_every > 0 && s.iteration % opt.checkpoint_every == 0 && s.iteration < total) {
      loss.flush();
      train::save_checkpoint(ckpt.string(), cfg, s);
      detail::save_trace_state(dir / kTraceState, s.iteration, log);
    }
    if (opt.log_every > 0 && s.iteration % opt.log_every == 0) {
      const auto& r = log.rows().back();
      std::ostringstream os;
      os << std::setprecision(4) << "[" << tag << "] iter " << s.iteration << "/" << total << " round " << s.round
         << " ce_s " << r.losses.ce_source;
      if (r.losses.ce_target) os << " ce_t " << *r.losses.ce_target;
      if (r.losses.adv) os << " adv " << *r.losses.adv;
      detail::say(opt, os.str());
    }
  };

  try {
    train::train(cfg, st, pools, &log, opt.max_steps);
  } catch (const train::NumericAbort& e) {
    loss.flush();
    detail::say(opt, "[" + tag + "] " + e.what());
    return finalize(RunResult{RunStatus::numeric_abort, dir, {}, e.what()}, "numeric_abort");
  } catch (const NonFiniteError& e) {
    loss.flush();
    detail::say(opt, "[" + tag + "] " + e.what());
    return finalize(RunResult{RunStatus::numeric_abort, dir, {}, e.what()}, "numeric_abort");
  } catch (const Error& e) {
    loss.flush();
    return finalize(RunResult{RunStatus::failed, dir, {}, e.what()}, "failed");
  }
  loss.close();
  train::save_checkpoint(ckpt.string(), cfg, st);
  detail::save_trace_state(dir / kTraceState, st.iteration, log);
  if (!train::finished(cfg, st)) {
    detail::say(opt, "[" + tag + "] stopped at iteration " + std::to_string(st.iteration) + " of " +
                         std::to_string(total));
    return finalize(RunResult{RunStatus::partial, dir, {}, "stopped at iteration " + std::to_string(st.iteration)},
                    "partial");
  }

  RunResult res{RunStatus::ok, dir, {}, {}};
  auto& m = res.metrics;
  m.iterations = st.iteration;
  const auto cm_t = train::evaluate(cfg, st.live.extractor, st.live.classifier, pools.test);
  const auto cm_s = train::evaluate(cfg, st.live.extractor, st.live.classifier, pools.source_test);
  m.target_miou = metrics::miou(cm_t);
  m.source_miou = metrics::miou(cm_s);
  {
    std::ostringstream t, s;
    metrics::write_iou_csv(t, cm_t);
    metrics::write_iou_csv(s, cm_s);
    write_text(dir / "iou_target.csv", t.str());
    write_text(dir / "iou_source.csv", s.str());
    outputs["iou_target"] = "iou_target.csv";
    outputs["iou_source"] = "iou_source.csv";
  }
  if (st.momentum.extractor && st.momentum.classifier) {
    const auto cm_m = train::evaluate(cfg, st.momentum.extractor->target, st.momentum.classifier->target, pools.test);
    m.target_miou_momentum = metrics::miou(cm_m);
    std::ostringstream t;
    metrics::write_iou_csv(t, cm_m);
    write_text(dir / "iou_target_momentum.csv", t.str());
    outputs["iou_target_momentum"] = "iou_target_momentum.csv";
  }

  // Traces and spectra.
  std::vector<svg::Chart> charts;
  svg::Chart change_chart{"Change of predictions", "iteration", "L1 change", {}};
  svg::Chart spec_chart{"Spectrum of mean predictions", "frequency", "amplitude", {}};
  auto emit = [&](const diag::DynamicsTrace& t, const std::string& name) -> std::optional<double> {
    if (t.count() < 2) return std::nullopt;
    std::ostringstream c, s;
    diag::write_change_csv(c, t);
    write_text(dir / ("change_" + name + ".csv"), c.str());
    outputs["change_" + name] = "change_" + name + ".csv";
    const auto spectrum = diag::dft(diag::channel_series(t));
    diag::write_spectrum_csv(s, spectrum);
    write_text(dir / ("spectrum_" + name + ".csv"), s.str());
    outputs["spectrum_" + name] = "spectrum_" + name + ".csv";
    change_chart.series.push_back({name, detail::as_x(t.iterations(), 1), t.changes()});
    spec_chart.series.push_back(detail::spectrum_series(spectrum, name));
    return diag::tail_mean(t.changes(), cfg.diagnostics.tail);
  };
  m.mean_change_classifier = emit(log.pseudo_label(), "classifier");
  m.mean_change_discriminator = emit(log.discriminator(), "discriminator");
  emit(log.student(), "student");

  {
    std::ostringstream os;
    os << "metric,value\n" << std::setprecision(10);
    os << "target_miou," << m.target_miou << "\nsource_miou," << m.source_miou << '\n';
    if (m.target_miou_momentum) os << "target_miou_momentum," << *m.target_miou_momentum << '\n';
    if (m.mean_change_classifier) os << "mean_change_classifier," << *m.mean_change_classifier << '\n';
    if (m.mean_change_discriminator) os << "mean_change_discriminator," << *m.mean_change_discriminator << '\n';
    os << "iterations," << m.iterations << '\n';
    write_text(dir / "metrics.csv", os.str());
    outputs["metrics"] = "metrics.csv";
  }

  charts.push_back(detail::loss_chart(loss_path));
  if (!change_chart.series.empty()) charts.push_back(std::move(change_chart));
  if (!spec_chart.series.empty()) charts.push_back(std::move(spec_chart));
  write_text(dir / "plots.svg", svg::render(charts, 1, 640, 320));
  outputs["plots"] = "plots.svg";

  {
    std::ostringstream os;
    os << std::setprecision(4) << "[" << tag << "] done: target mIoU " << m.target_miou << ", source mIoU "
       << m.source_miou;
    detail::say(opt, os.str());
  }
  return finalize(std::move(res), "ok");
}

}  // namespace smoothda::cli
