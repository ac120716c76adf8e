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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "smoothda/autodiff/parameter_store.hpp"

namespace smoothda::ad {

enum class ScheduleKind : std::uint8_t { constant = 0, linear_warmup = 1, poly = 2 };

struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  double base_lr = 1e-3;
  std::int64_t total_steps = 1;
  std::int64_t warmup_steps = 0;
  double power = 0.9;
};

/// Learning rate at `step` (0-based). Past `total_steps` the rate is 0.
///   linear_warmup: base*step/warmup, then linear decay to 0 at total_steps
///   poly:          base*(1 - step/total)^power
inline double lr_at(const Schedule& s, std::int64_t step) {
  if (step < 0) throw InvalidArgument("lr_at: negative step");
  if (s.kind == ScheduleKind::constant) return s.base_lr;
  if (step > s.total_steps || s.total_steps <= 0) return 0.0;
  const auto st = static_cast<double>(step);
  const auto total = static_cast<double>(s.total_steps);
  if (s.kind == ScheduleKind::poly) return s.base_lr * std::pow(1.0 - st / total, s.power);
  const auto warm = static_cast<double>(s.warmup_steps);
  if (step < s.warmup_steps) return s.base_lr * st / warm;
  if (s.total_steps <= s.warmup_steps) return 0.0;
  return s.base_lr * (total - st) / (total - warm);
}

/// Adam moment constants.
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> m, v;
  std::int64_t step = 0;
  double weight_decay = 0.0;
  Schedule schedule;

  double current_lr() const { return lr_at(schedule, step); }
};

template <typename T>
OptimizerState<T> make_optimizer_state(const ParameterStore<T>& store, Schedule schedule,
                                       double weight_decay = 0.0) {
  OptimizerState<T> st;
  st.schedule = schedule;
  st.weight_decay = weight_decay;
  for (const auto& [name, t] : store.entries()) {
    st.m.emplace_back(t.size(), T(0));
    st.v.emplace_back(t.size(), T(0));
  }
  return st;
}

namespace detail {
template <typename T>
void adam_update(ParameterStore<T>& store, OptimizerState<T>& st, bool decoupled) {
  if (st.m.size() != store.size()) {
    throw ShapeError("optimizer: state tracks " + std::to_string(st.m.size()) +
                     " parameters, store has " + std::to_string(store.size()));
  }
  const double lr = lr_at(st.schedule, st.step);
  const auto t = static_cast<double>(st.step + 1);
  const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
  const double wd = st.weight_decay;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& [name, p] = store.entries()[i];
    if (!p.requires_grad()) continue;
    if (!p.has_grad()) throw InvalidArgument("optimizer: parameter '" + name + "' has no gradient");
    auto w = p.mutable_values();
    const auto g = p.grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    if (m.size() != w.size()) throw ShapeError("optimizer: moment shape mismatch for '" + name + "'");
    for (std::size_t j = 0; j < w.size(); ++j) {
      double gj = static_cast<double>(g[j]);
      double wj = static_cast<double>(w[j]);
      if (decoupled) {
        wj -= lr * wd * wj;
      } else if (wd != 0.0) {
        gj += wd * wj;
      }
      const double mj = kAdamBeta1 * static_cast<double>(m[j]) + (1.0 - kAdamBeta1) * gj;
      const double vj = kAdamBeta2 * static_cast<double>(v[j]) + (1.0 - kAdamBeta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      wj -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + kAdamEps);
      w[j] = static_cast<T>(wj);
    }
  }
  ++st.step;
}
}  // namespace detail

/// Adam with L2 folded into the gradient (weight_decay is usually 0 here).
template <typename T>
void adam_step(ParameterStore<T>& store, OptimizerState<T>& st) {
  detail::adam_update(store, st, false);
}

/// AdamW: decay applied to the weights directly, p -= lr*wd*p, before the
/// adaptive step.
template <typename T>
void adamw_step(ParameterStore<T>& store, OptimizerState<T>& st) {
  detail::adam_update(store, st, true);
}

}  // namespace smoothda::ad
