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

// Training state and the data feeding it.

#include <cstdint>
#include <optional>
#include <vector>

#include "smoothda/autodiff.hpp"
#include "smoothda/momentum.hpp"
#include "smoothda/nets.hpp"
#include "smoothda/synthdata.hpp"
#include "smoothda/trainer/config.hpp"

namespace smoothda::train {

using Real = float;
using Tensor = ad::Tensor<Real>;
using Store = ad::ParameterStore<Real>;
using Params = SegmentationParams<Real>;

/// Stream tags for derive_seed({seed, tag, ...}).
enum SeedTag : std::uint64_t {
  kSeedExtractor = 1,
  kSeedClassifier = 2,
  kSeedDiscriminator = 3,
  kSeedSimilarity = 4,
  kSeedSourcePool = 10,
  kSeedTargetPool = 11,
  kSeedTestPool = 12,
  kSeedProbe = 13,
  kSeedSourceTestPool = 14,
  kSeedBatch = 20,
};

struct TrainState {
  Params live;
  Params snapshot;  // values at t = 0, never modified
  SegmentationMomentum<Real> momentum;
  std::optional<Params> teacher;  // frozen previous-round network (train phase, no MoPL)
  Store disc{ad::NetworkKind::discriminator};
  Store sim{ad::NetworkKind::similarity};
  ad::OptimizerState<Real> opt_f, opt_c, opt_d, opt_s;
  std::int64_t iteration = 0;    // completed steps
  std::int64_t round = 0;        // 0 during warm-up, then 1..rounds
  std::int64_t round_iter = 0;   // completed steps in the current round
};

inline ad::Schedule fc_schedule(const ExperimentConfig& cfg, std::int64_t phase_len) {
  return {ad::ScheduleKind::linear_warmup, cfg.optim.lr_fc, phase_len,
          std::min(cfg.optim.fc_warmup_steps, phase_len), cfg.optim.poly_power};
}

inline ad::Schedule ds_schedule(const ExperimentConfig& cfg) {
  return {ad::ScheduleKind::poly, cfg.optim.lr_ds, cfg.schedule.total(), 0, cfg.optim.poly_power};
}

inline nets::DomainHeadConfig disc_head(const ExperimentConfig& cfg) {
  return nets::discriminator_config(cfg.discriminator, cfg.extractor.embed_dim, cfg.num_classes(), cfg.head_hidden);
}

inline nets::DomainHeadConfig sim_head(const ExperimentConfig& cfg) {
  return nets::similarity_config(cfg.extractor.embed_dim, cfg.head_hidden);
}

/// Fresh state: networks initialized from the config seed, snapshot taken,
/// momentum copies equal to the initial weights.
inline TrainState init_state(const ExperimentConfig& cfg) {
  cfg.validate();
  TrainState st;
  Rng rf(derive_seed({cfg.seed, kSeedExtractor}));
  Rng rc(derive_seed({cfg.seed, kSeedClassifier}));
  st.live.extractor = nets::init_extractor<Real>(cfg.extractor, rf);
  st.live.classifier = nets::init_classifier<Real>(cfg.extractor.embed_dim, cfg.num_classes(), rc);
  st.snapshot = {st.live.extractor.detached(), st.live.classifier.detached()};
  st.momentum = init_segmentation_momentum(cfg.smoothing, st.live);
  if (cfg.has_discriminator()) {
    Rng rd(derive_seed({cfg.seed, kSeedDiscriminator}));
    st.disc = nets::init_domain_head<Real>(disc_head(cfg), ad::NetworkKind::discriminator, rd);
  }
  if (cfg.has_similarity()) {
    Rng rs(derive_seed({cfg.seed, kSeedSimilarity}));
    st.sim = nets::init_domain_head<Real>(sim_head(cfg), ad::NetworkKind::similarity, rs);
  }
  const auto warm = std::max<std::int64_t>(cfg.schedule.warmup_iters, 1);
  st.opt_f = ad::make_optimizer_state(st.live.extractor, fc_schedule(cfg, warm), cfg.optim.weight_decay);
  st.opt_c = ad::make_optimizer_state(st.live.classifier, fc_schedule(cfg, warm), cfg.optim.weight_decay);
  st.opt_d = ad::make_optimizer_state(st.disc, ds_schedule(cfg));
  st.opt_s = ad::make_optimizer_state(st.sim, ds_schedule(cfg));
  return st;
}

// --- Data ---------------------------------------------------------------------------

struct DataPools {
  std::vector<data::SceneSample> source;
  std::vector<data::SceneSample> target;
  std::vector<data::SceneSample> test;         // held-out target scenes with labels
  std::vector<data::SceneSample> source_test;  // held-out source scenes
  Tensor probe;                         // (N_probe, 3, H, W) fixed target images
};

inline DataPools make_pools(const ExperimentConfig& cfg, std::size_t workers = 1) {
  const auto& d = cfg.data;
  DataPools p;
  p.source = data::generate(d.spec, data::Domain::source, d.n_source, derive_seed({cfg.seed, kSeedSourcePool}), workers);
  p.target = data::generate(d.spec, data::Domain::target, d.n_target, derive_seed({cfg.seed, kSeedTargetPool}), workers);
  p.test = data::generate(d.spec, data::Domain::target, d.n_test, derive_seed({cfg.seed, kSeedTestPool}), workers);
  p.source_test =
      data::generate(d.spec, data::Domain::source, d.n_test, derive_seed({cfg.seed, kSeedSourceTestPool}), workers);
  p.probe = data::stack(data::generate(d.spec, data::Domain::target, cfg.diagnostics.probe_size,
                                       derive_seed({cfg.seed, kSeedProbe}), workers))
                .images;
  return p;
}

/// Source labels over the common classes: source-private pixels are ignored.
inline void restrict_to_common(std::vector<std::uint8_t>& labels, std::size_t num_common) {
  for (auto& l : labels)
    if (l != data::kIgnore && l >= num_common) l = data::kIgnore;
}

struct DomainBatch {
  Tensor source_images;
  std::vector<std::uint8_t> source_labels;
  Tensor target_images;
};

/// Batch for a given iteration. Stateless: depends only on (seed, iteration),
/// so a resumed run sees the same batches.
inline DomainBatch sample_batch(const ExperimentConfig& cfg, const DataPools& pools, std::int64_t iteration) {
  Rng rng(derive_seed({cfg.seed, kSeedBatch, static_cast<std::uint64_t>(iteration)}));
  std::vector<data::SceneSample> src, tgt;
  for (std::size_t i = 0; i < cfg.batch_size; ++i)
    src.push_back(data::augment(pools.source[rng.below(pools.source.size())], cfg.data.augment, rng));
  for (std::size_t i = 0; i < cfg.batch_size; ++i)
    tgt.push_back(data::augment(pools.target[rng.below(pools.target.size())], cfg.data.augment, rng));
  auto s = data::stack(src);
  restrict_to_common(s.labels, cfg.num_classes());
  return {std::move(s.images), std::move(s.labels), data::stack(tgt).images};
}

// --- Forward helpers ----------------------------------------------------------------

inline Tensor features(const ExperimentConfig& cfg, const Store& f, const Tensor& images) {
  return nets::extractor_forward(cfg.extractor, f, images);
}

inline Tensor predict(const ExperimentConfig& cfg, const Store& c, const Tensor& feat) {
  return nets::classifier_forward(c, feat, cfg.num_classes(), cfg.extractor.patch_size);
}

/// Pseudo-label network: the EMA teacher with MoPL, the frozen round
/// teacher in the train phase without it, the live network otherwise.
inline std::pair<const Store*, const Store*> pl_branch(const ExperimentConfig& cfg, const TrainState& st) {
  if (cfg.smoothing.mo_pl) return {&st.momentum.extractor->target, &st.momentum.classifier->target};
  if (st.round > 0 && st.teacher) return {&st.teacher->extractor, &st.teacher->classifier};
  return {&st.live.extractor, &st.live.classifier};
}

/// Extractor producing the target features seen by D and S.
inline const Store& fa_branch(const ExperimentConfig& cfg, const TrainState& st) {
  return cfg.smoothing.mo_fa ? st.momentum.extractor->target : st.live.extractor;
}

}  // namespace smoothda::train
