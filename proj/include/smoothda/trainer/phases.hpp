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

// Warm-up phase, train-phase rounds, probe tracking, loss log, evaluation.

#include <functional>
#include <iomanip>
#include <ostream>
#include <vector>

#include "smoothda/diagnostics.hpp"
#include "smoothda/metrics.hpp"
#include "smoothda/trainer/step.hpp"

namespace smoothda::train {

inline constexpr const char* kLossCsvHeader = "iter,ce_source,ce_target,adv,sim,lr_fc,lr_ds";

inline void write_loss_row(std::ostream& os, const StepRecord& r) {
  auto opt = [&os](const std::optional<double>& v) {
    os << ',';
    if (v) os << *v;
  };
  os << std::setprecision(9) << r.iteration << ',' << r.losses.ce_source;
  opt(r.losses.ce_target);
  opt(r.losses.adv);
  opt(r.losses.sim);
  os << ',' << r.lr_fc << ',' << r.lr_ds << '\n';
}

/// Append-only record of a run: loss rows and probe traces.
class TrainLog {
 public:
  TrainLog(std::uint64_t probe_seed = 0)
      : pseudo_label_("classifier_target", 2, probe_seed),
        discriminator_("discriminator_target", 2, probe_seed),
        student_("student_target", 2, probe_seed) {}

  void append(const StepRecord& r) {
    if (!rows_.empty() && r.iteration <= rows_.back().iteration) {
      throw InvalidArgument("loss log: iteration " + std::to_string(r.iteration) + " does not follow " +
                            std::to_string(rows_.back().iteration));
    }
    rows_.push_back(r);
    if (sink) write_loss_row(*sink, r);
  }

  const std::vector<StepRecord>& rows() const { return rows_; }
  diag::DynamicsTrace& pseudo_label() { return pseudo_label_; }
  diag::DynamicsTrace& discriminator() { return discriminator_; }
  diag::DynamicsTrace& student() { return student_; }
  const diag::DynamicsTrace& pseudo_label() const { return pseudo_label_; }
  const diag::DynamicsTrace& discriminator() const { return discriminator_; }
  const diag::DynamicsTrace& student() const { return student_; }

  std::ostream* sink = nullptr;  // optional streaming CSV (rows only)
  std::function<void(const TrainState&)> on_step;  // called after each step
  StepObserver observer;                           // forwarded to step()

 private:
  std::vector<StepRecord> rows_;
  diag::DynamicsTrace pseudo_label_, discriminator_, student_;
};

/// Probe predictions after a step. Runs without gradient and consumes no
/// randomness, so it never perturbs training.
inline void track(const ExperimentConfig& cfg, const TrainState& st, const DataPools& pools, TrainLog& log) {
  const auto stride = cfg.diagnostics.track_stride;
  if (stride == 0 || (st.iteration - 1) % stride) return;
  ad::NoGradGuard ng;
  const auto it = static_cast<std::uint64_t>(st.iteration);
  const auto [pf, pc] = pl_branch(cfg, st);
  log.pseudo_label().track(it, predict(cfg, *pc, features(cfg, *pf, pools.probe)));
  if (cfg.diagnostics.track_discriminator && cfg.has_discriminator()) {
    log.discriminator().track(
        it, nets::discriminator_forward(disc_head(cfg), st.disc, features(cfg, fa_branch(cfg, st), pools.probe)));
  }
  if (cfg.diagnostics.track_student) {
    log.student().track(it, predict(cfg, st.live.classifier, features(cfg, st.live.extractor, pools.probe)));
  }
}

inline void run_step(const ExperimentConfig& cfg, TrainState& st, const DataPools& pools, TrainLog* log,
                     bool with_target) {
  const auto rec = step(cfg, st, sample_batch(cfg, pools, st.iteration), with_target,
                        log && log->observer ? &log->observer : nullptr);
  if (log) {
    log->append(rec);
    try {
      track(cfg, st, pools, *log);
    } catch (const NonFiniteError& e) {
      throw NumericAbort(st.iteration, std::string("probe tracking: ") + e.what());
    }
    if (log->on_step) log->on_step(st);
  }
}

/// Runs the remaining warm-up iterations (none when resumed past warm-up).
inline void warmup_phase(const ExperimentConfig& cfg, TrainState& st, const DataPools& pools, TrainLog* log = nullptr,
                         std::int64_t max_steps = -1) {
  while (st.round == 0 && st.iteration < cfg.schedule.warmup_iters && max_steps != 0) {
    run_step(cfg, st, pools, log, false);
    if (max_steps > 0) --max_steps;
  }
}

/// Round boundary: the teacher takes the finishing weights, the student
/// restarts from the t = 0 snapshot with a fresh optimizer.
inline void begin_round(const ExperimentConfig& cfg, TrainState& st) {
  const Params finished{st.live.extractor.detached(), st.live.classifier.detached()};
  if (st.momentum.extractor) reset_momentum(*st.momentum.extractor, finished.extractor);
  if (st.momentum.classifier) reset_momentum(*st.momentum.classifier, finished.classifier);
  if (!cfg.smoothing.mo_pl) st.teacher = finished;
  st.live.extractor.copy_values_from(st.snapshot.extractor);
  st.live.classifier.copy_values_from(st.snapshot.classifier);
  const auto len = cfg.schedule.iters_per_round;
  st.opt_f = ad::make_optimizer_state(st.live.extractor, fc_schedule(cfg, len), cfg.optim.weight_decay);
  st.opt_c = ad::make_optimizer_state(st.live.classifier, fc_schedule(cfg, len), cfg.optim.weight_decay);
  ++st.round;
  st.round_iter = 0;
}

/// Runs the remaining train-phase iterations over all rounds. `max_steps`
/// (>= 0) stops early, for split runs.
inline void train_phase(const ExperimentConfig& cfg, TrainState& st, const DataPools& pools, TrainLog* log = nullptr,
                        std::int64_t max_steps = -1) {
  if (st.iteration < cfg.schedule.warmup_iters) throw InvalidArgument("train_phase: warm-up not completed");
  while (max_steps != 0) {
    if (st.round == 0 || st.round_iter == cfg.schedule.iters_per_round) {
      if (st.round == cfg.schedule.rounds) break;
      begin_round(cfg, st);
    }
    run_step(cfg, st, pools, log, true);
    if (max_steps > 0) --max_steps;
  }
}

inline bool finished(const ExperimentConfig& cfg, const TrainState& st) {
  return st.round == cfg.schedule.rounds && st.round_iter == cfg.schedule.iters_per_round;
}

/// Warm-up then train phase, each resuming from the state's counters.
inline void train(const ExperimentConfig& cfg, TrainState& st, const DataPools& pools, TrainLog* log = nullptr,
                  std::int64_t max_steps = -1) {
  const auto before = st.iteration;
  warmup_phase(cfg, st, pools, log, max_steps);
  if (max_steps >= 0) max_steps -= st.iteration - before;
  if (max_steps != 0) train_phase(cfg, st, pools, log, max_steps);
}

// --- Evaluation ---------------------------------------------------------------------

/// Confusion matrix over the common classes. Ground-truth ids outside them
/// (private classes) are ignored.
inline metrics::ConfusionMatrix evaluate(const ExperimentConfig& cfg, const Store& f, const Store& c,
                                         const std::vector<data::SceneSample>& samples, std::size_t batch = 8) {
  metrics::ConfusionMatrix cm(cfg.num_classes());
  ad::NoGradGuard ng;
  for (std::size_t i = 0; i < samples.size(); i += batch) {
    std::vector<data::SceneSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(i),
                                         samples.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch, samples.size())));
    auto b = data::stack(chunk);
    restrict_to_common(b.labels, cfg.num_classes());
    const auto pred = obj::argmax_labels(predict(cfg, c, features(cfg, f, b.images)));
    cm.accumulate(pred, b.labels, b.images.dim(3));
  }
  return cm;
}

}  // namespace smoothda::train
