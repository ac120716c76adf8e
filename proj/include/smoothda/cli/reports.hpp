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

// Toy Gaussian report, checkpoint evaluation and dataset export.

#include "smoothda/cli/run.hpp"

namespace smoothda::cli {

// --- Toy --------------------------------------------------------------------------

struct ToyReportFiles {
  diag::ToyReport report;
  std::vector<fs::path> files;
};

/// Writes toy_summary.csv (per sigma and seed), toy_traces.csv and
/// toy_change.csv (first seed), one toy_spectrum_sigma<s>.csv per sigma
/// (amplitude averaged over seeds), toy.svg and a manifest.
inline ToyReportFiles toy_report(const fs::path& out, const diag::ToyConfig& cfg) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out))
    throw ConfigError("cannot create output directory '" + out.string() + "': " + ec.message());
  Json manifest{{"kind", "toy"}, {"version", version_string()}, {"status", "running"}, {"started", utc_now()},
                {"outputs", Json::object()}};
  write_text(out / kManifest, manifest.dump(2) + "\n");

  ToyReportFiles res{diag::toy_gaussian_experiment(cfg), {}};
  const auto& rep = res.report;
  Json outputs{{"manifest", kManifest}};
  auto put = [&](const std::string& key, const std::string& name, const std::string& text) {
    write_text(out / name, text);
    outputs[key] = name;
    res.files.push_back(out / name);
  };

  std::ostringstream summary, traces, change;
  summary << "sigma,seed,mean_change,high_band\n" << std::setprecision(10);
  traces << "sigma,t,category,p\n" << std::setprecision(10);
  change << "sigma,t,change\n" << std::setprecision(10);
  std::vector<svg::Chart> charts;
  std::vector<svg::Chart> change_charts, spectrum_charts;
  for (const auto& s : rep.per_sigma) {
    const auto sig = detail::format_double(s.sigma);
    for (std::size_t j = 0; j < s.runs.size(); ++j)
      summary << sig << ',' << rep.config.seeds[j] << ',' << s.runs[j].mean_change << ',' << s.runs[j].high_band
              << '\n';
    summary << sig << ",mean," << s.mean_change << ',' << s.mean_high_band << '\n';

    const auto& first = s.runs.front();
    svg::Chart pred{"Predictions, sigma " + sig, "t", "p", {}};
    for (std::size_t k = 0; k < rep.config.num_classes; ++k) {
      svg::Series ser{"class " + std::to_string(k), {}, {}};
      for (std::size_t t = 0; t < first.predictions.size(); ++t) {
        traces << sig << ',' << t << ',' << k << ',' << first.predictions[t][k] << '\n';
        ser.x.push_back(static_cast<double>(t));
        ser.y.push_back(first.predictions[t][k]);
      }
      pred.series.push_back(std::move(ser));
    }
    charts.push_back(std::move(pred));

    svg::Chart ch{"Change of predictions, sigma " + sig, "t", "L1 change", {{"change", {}, {}}}};
    for (std::size_t t = 0; t < first.change.size(); ++t) {
      change << sig << ',' << t + 1 << ',' << first.change[t] << '\n';
      ch.series[0].x.push_back(static_cast<double>(t + 1));
      ch.series[0].y.push_back(first.change[t]);
    }
    change_charts.push_back(std::move(ch));

    diag::Spectrum mean = first.spectrum;
    for (std::size_t j = 1; j < s.runs.size(); ++j)
      for (std::size_t k = 0; k < mean.amplitude.size(); ++k)
        for (std::size_t i = 0; i < mean.frequencies.size(); ++i) mean.amplitude[k][i] += s.runs[j].spectrum.amplitude[k][i];
    for (auto& row : mean.amplitude)
      for (auto& a : row) a /= static_cast<double>(s.runs.size());
    std::ostringstream sp;
    diag::write_spectrum_csv(sp, mean);
    put("spectrum_sigma_" + sig, "toy_spectrum_sigma" + sig + ".csv", sp.str());
    svg::Chart spc{"Spectrum, sigma " + sig, "frequency", "amplitude", {}};
    for (std::size_t k = 0; k < mean.amplitude.size(); ++k) {
      svg::Series ser{"class " + std::to_string(k), {}, {}};
      for (std::size_t i = 0; i < mean.frequencies.size(); ++i) {
        ser.x.push_back(mean.frequencies[i]);
        ser.y.push_back(mean.amplitude[k][i]);
      }
      spc.series.push_back(std::move(ser));
    }
    spectrum_charts.push_back(std::move(spc));
  }
  summary << "ordered_fraction_change," << rep.ordered_fraction_change << ",,\n";
  summary << "ordered_fraction_high_band," << rep.ordered_fraction_high_band << ",,\n";
  put("summary", "toy_summary.csv", summary.str());
  put("traces", "toy_traces.csv", traces.str());
  put("change", "toy_change.csv", change.str());
  for (auto& c : change_charts) charts.push_back(std::move(c));
  for (auto& c : spectrum_charts) charts.push_back(std::move(c));
  put("plots", "toy.svg", svg::render(charts, rep.per_sigma.size(), 420, 280));

  manifest["outputs"] = outputs;
  manifest["status"] = "ok";
  manifest["finished"] = utc_now();
  manifest["metrics"] = {{"ordered_fraction_change", rep.ordered_fraction_change},
                         {"ordered_fraction_high_band", rep.ordered_fraction_high_band}};
  write_text(out / kManifest, manifest.dump(2) + "\n");
  return res;
}

// --- Checkpoint evaluation ----------------------------------------------------------

struct EvalResult {
  std::int64_t iteration = 0;
  metrics::ConfusionMatrix target{1};
  metrics::ConfusionMatrix source{1};
  std::optional<metrics::ConfusionMatrix> target_momentum;
};

/// Student (and momentum teacher) mIoU of a checkpoint on the config's test pools.
inline EvalResult evaluate_checkpoint(const fs::path& checkpoint, const train::ExperimentConfig& cfg,
                                      std::size_t workers = 1) {
  const auto st = train::load_checkpoint(checkpoint.string(), cfg);
  const auto pools = train::make_pools(cfg, workers);
  EvalResult r;
  r.iteration = st.iteration;
  r.target = train::evaluate(cfg, st.live.extractor, st.live.classifier, pools.test);
  r.source = train::evaluate(cfg, st.live.extractor, st.live.classifier, pools.source_test);
  if (st.momentum.extractor && st.momentum.classifier)
    r.target_momentum = train::evaluate(cfg, st.momentum.extractor->target, st.momentum.classifier->target, pools.test);
  return r;
}

inline Json to_json(const EvalResult& r) {
  Json j{{"iteration", r.iteration},
         {"target_miou", metrics::miou(r.target)},
         {"source_miou", metrics::miou(r.source)},
         {"target_miou_momentum", r.target_momentum ? Json(metrics::miou(*r.target_momentum)) : Json(nullptr)}};
  return j;
}

// --- Dataset export ---------------------------------------------------------------

/// Writes the run's data pools as TDAD files plus a manifest.
inline std::vector<fs::path> export_data(const train::ExperimentConfig& cfg, const fs::path& out,
                                         std::size_t workers = 1) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out))
    throw ConfigError("cannot create output directory '" + out.string() + "': " + ec.message());
  Json manifest{{"kind", "export-data"},
                {"config_hash", train::hex(train::config_hash(cfg))},
                {"seed", cfg.seed},
                {"version", version_string()},
                {"status", "running"},
                {"started", utc_now()},
                {"outputs", Json::object()}};
  write_text(out / kManifest, manifest.dump(2) + "\n");
  const auto pools = train::make_pools(cfg, workers);
  const auto k_total = cfg.data.spec.num_total();
  std::vector<fs::path> files;
  Json outputs{{"manifest", kManifest}};
  auto put = [&](const std::string& key, const std::vector<data::SceneSample>& samples) {
    const auto name = key + ".tdad";
    data::write_dataset((out / name).string(), data::Dataset{samples, k_total});
    outputs[key] = name;
    files.push_back(out / name);
  };
  put("source_train", pools.source);
  put("target_train", pools.target);
  put("source_test", pools.source_test);
  put("target_test", pools.test);
  manifest["outputs"] = outputs;
  manifest["status"] = "ok";
  manifest["finished"] = utc_now();
  write_text(out / kManifest, manifest.dump(2) + "\n");
  return files;
}

}  // namespace smoothda::cli
