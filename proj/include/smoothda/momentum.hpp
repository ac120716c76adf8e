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

// Momentum (EMA) teacher: target <- m * target + (1 - m) * source, applied
// once per optimizer step of the live network.

#include <optional>
#include <string>

#include "smoothda/autodiff.hpp"
#include "smoothda/error.hpp"

namespace smoothda {

struct SmoothingConfig {
  bool mo_pl = false;  // pseudo labels from the momentum teacher
  bool mo_fa = false;  // target features for D and S from the momentum teacher
  double m = 0.999;

  bool active() const { return mo_pl || mo_fa; }

  void validate() const {
    if (!(m >= 0.0 && m < 1.0)) {
      throw ConfigError("smoothing.m must lie in [0, 1), got " + std::to_string(m));
    }
  }
};

template <typename T>
struct MomentumPair {
  ad::ParameterStore<T> source;  // live, shares tensors with the trained network
  ad::ParameterStore<T> target;  // EMA copy, never requires grad
  double m = 0.999;
};

/// Target is a deep, gradient-free copy of `source`; `source` keeps its handles.
template <typename T>
MomentumPair<T> init_momentum(const ad::ParameterStore<T>& source, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw InvalidArgument("init_momentum: m must lie in [0, 1)");
  return {source, source.detached(), m};
}

/// Re-seeds the EMA copy from `values` (e.g. at a phase or round boundary).
template <typename T>
void reset_momentum(MomentumPair<T>& pair, const ad::ParameterStore<T>& values) {
  pair.target.copy_values_from(values);
}

template <typename T>
void ema_update(MomentumPair<T>& pair) {
  pair.target.check_aligned(pair.source, "ema_update");
  const T m = static_cast<T>(pair.m);
  const T a = static_cast<T>(1.0 - pair.m);
  auto& te = pair.target.entries();
  const auto& se = pair.source.entries();
  for (std::size_t i = 0; i < te.size(); ++i) {
    auto t = te[i].second.mutable_values();
    const auto s = se[i].second.values();
    if (pair.m == 0.0) {
      std::copy(s.begin(), s.end(), t.begin());
    } else {
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = m * t[j] + a * s[j];
    }
  }
}

/// Live segmentation network: extractor F and classifier C.
template <typename T>
struct SegmentationParams {
  ad::ParameterStore<T> extractor;
  ad::ParameterStore<T> classifier;
};

/// Momentum state for one segmentation network. The classifier pair exists
/// only when pseudo labels come from the teacher.
template <typename T>
struct SegmentationMomentum {
  std::optional<MomentumPair<T>> extractor;
  std::optional<MomentumPair<T>> classifier;

  bool empty() const { return !extractor && !classifier; }
};

template <typename T>
SegmentationMomentum<T> init_segmentation_momentum(const SmoothingConfig& cfg,
                                                   const SegmentationParams<T>& live) {
  SegmentationMomentum<T> out;
  if (!cfg.active()) return out;
  out.extractor = init_momentum(live.extractor, cfg.m);
  if (cfg.mo_pl) out.classifier = init_momentum(live.classifier, cfg.m);
  return out;
}

template <typename T>
void ema_update(SegmentationMomentum<T>& mp) {
  if (mp.extractor) ema_update(*mp.extractor);
  if (mp.classifier) ema_update(*mp.classifier);
}

/// Parameter stores feeding pseudo-label generation (C o F) and the target
/// features seen by the discriminator and similarity network (F). A branch
/// flagged `live` shares tensors with the trained network; the caller runs it
/// under stop-gradient.
template <typename T>
struct TeacherBranches {
  const ad::ParameterStore<T>* pl_extractor = nullptr;
  const ad::ParameterStore<T>* pl_classifier = nullptr;
  const ad::ParameterStore<T>* fa_extractor = nullptr;
  bool pl_live = true;
  bool fa_live = true;
};

template <typename T>
TeacherBranches<T> teacher_branches(const SmoothingConfig& cfg, const SegmentationParams<T>& live,
                                    const SegmentationMomentum<T>* mp) {
  if (cfg.active() && (!mp || !mp->extractor || (cfg.mo_pl && !mp->classifier))) {
    throw InvalidArgument("teacher_branches: smoothing enabled but momentum pair is missing");
  }
  TeacherBranches<T> b;
  b.pl_extractor = &live.extractor;
  b.pl_classifier = &live.classifier;
  b.fa_extractor = &live.extractor;
  if (cfg.mo_pl) {
    b.pl_extractor = &mp->extractor->target;
    b.pl_classifier = &mp->classifier->target;
    b.pl_live = false;
  }
  if (cfg.mo_fa) {
    b.fa_extractor = &mp->extractor->target;
    b.fa_live = false;
  }
  return b;
}

}  // namespace smoothda
