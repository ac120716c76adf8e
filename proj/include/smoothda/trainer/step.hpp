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

// One training iteration: D update, S update, weights, pseudo labels, F/C
// update, EMA update.

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>

#include "smoothda/objectives.hpp"
#include "smoothda/trainer/state.hpp"

namespace smoothda::train {

/// Non-finite value during a step. The message carries the iteration, the
/// sub-step, the loss values computed so far and per-network gradient norms.
class NumericAbort : public Error {
 public:
  NumericAbort(std::int64_t iteration, std::string detail)
      : Error("numeric abort at iteration " + std::to_string(iteration) + ": " + detail), iteration_(iteration) {}
  std::int64_t iteration() const noexcept { return iteration_; }

 private:
  std::int64_t iteration_;
};

/// Called after sub-steps 1..7 with the sub-step index (0 before the first).
using StepObserver = std::function<void(int, const TrainState&)>;

struct StepRecord {
  std::int64_t iteration = 0;
  obj::LossBundle losses;
  double lr_fc = 0.0;
  double lr_ds = 0.0;
};

namespace detail {

inline double grad_norm(const Store& s) {
  double n = 0;
  for (const auto& [name, t] : s.entries())
    for (auto g : t.grad()) n += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(n);
}

inline std::string diagnostic(const char* stage, const obj::LossBundle& b, const TrainState& st,
                              const std::string& cause) {
  std::ostringstream os;
  os << "in " << stage << " (" << cause << "); losses: ce_source=" << b.ce_source;
  if (b.ce_target) os << " ce_target=" << *b.ce_target;
  if (b.adv) os << " adv=" << *b.adv;
  if (b.sim) os << " sim=" << *b.sim;
  os << "; grad norms: F=" << grad_norm(st.live.extractor) << " C=" << grad_norm(st.live.classifier)
     << " D=" << grad_norm(st.disc) << " S=" << grad_norm(st.sim);
  return os.str();
}

inline double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteError(what);
  return v;
}

}  // namespace detail

/// Runs one iteration on `batch` and advances the counters. `with_target`
/// adds the pseudo-label cross-entropy (train phase).
inline StepRecord step(const ExperimentConfig& cfg, TrainState& st, const DomainBatch& batch, bool with_target,
                       const StepObserver* observe = nullptr) {
  auto at = [&](int k) {
    if (observe) (*observe)(k, st);
  };
  at(0);
  StepRecord rec;
  rec.iteration = st.iteration;
  rec.losses.variant = cfg.adv_variant();
  rec.lr_fc = st.opt_f.current_lr();
  rec.lr_ds = cfg.has_discriminator() ? st.opt_d.current_lr() : 0.0;
  auto& b = rec.losses;
  const char* stage = "features";
  try {
    auto& F = st.live.extractor;
    auto& C = st.live.classifier;
    F.zero_grad();
    C.zero_grad();

    // (1) features and predictions
    auto f_src = features(cfg, F, batch.source_images);
    auto f_tgt = features(cfg, F, batch.target_images);
    auto p_src = predict(cfg, C, f_src);
    auto p_tgt = predict(cfg, C, f_tgt);
    const auto p_src_d = ad::stop_gradient(p_src);
    const auto p_tgt_d = ad::stop_gradient(p_tgt);
    const bool cls = obj::is_class_level(rec.losses.variant);
    at(1);

    std::optional<obj::WeightMaps<Real>> w;
    if (cfg.has_discriminator()) {
      const auto fs_d = ad::stop_gradient(f_src);
      Tensor ft_d;
      if (cfg.smoothing.mo_fa) {
        ad::NoGradGuard ng;
        ft_d = features(cfg, fa_branch(cfg, st), batch.target_images);
      } else {
        ft_d = ad::stop_gradient(f_tgt);
      }

      std::optional<Tensor> s_src, s_tgt;
      if (cfg.has_similarity()) {
        s_src = nets::similarity_forward(sim_head(cfg), st.sim, fs_d);
        s_tgt = nets::similarity_forward(sim_head(cfg), st.sim, ft_d);
        w = obj::dynamic_weights(p_src_d, p_tgt_d, ad::stop_gradient(*s_src), ad::stop_gradient(*s_tgt));
      }

      // (2) discriminator
      stage = "discriminator update";
      st.disc.zero_grad();
      const auto dh = disc_head(cfg);
      auto d_src = nets::discriminator_forward(dh, st.disc, fs_d);
      auto d_tgt = nets::discriminator_forward(dh, st.disc, ft_d);
      auto l_adv = obj::adv_loss<Real>(d_src, d_tgt, w ? &w->source : nullptr, w ? &w->target : nullptr,
                                       cls ? &p_src_d : nullptr, cls ? &p_tgt_d : nullptr);
      b.adv = detail::finite_or_throw(l_adv.item(), "adv");
      ad::backward(l_adv);
      ad::adam_step(st.disc, st.opt_d);
      at(2);

      // (3) similarity network
      if (cfg.has_similarity()) {
        stage = "similarity update";
        st.sim.zero_grad();
        auto l_sim = obj::sim_loss(*s_src, *s_tgt);
        b.sim = detail::finite_or_throw(l_sim.item(), "sim");
        ad::backward(l_sim);
        ad::adam_step(st.sim, st.opt_s);
        at(3);

        // (4) weights from the updated S
        stage = "weights";
        ad::NoGradGuard ng;
        w = obj::dynamic_weights(p_src_d, p_tgt_d, nets::similarity_forward(sim_head(cfg), st.sim, fs_d),
                                 nets::similarity_forward(sim_head(cfg), st.sim, ft_d));
        at(4);
      }
    }

    // (5) pseudo labels
    std::optional<Tensor> yhat;
    if (with_target) {
      stage = "pseudo labels";
      ad::NoGradGuard ng;
      const auto [pf, pc] = pl_branch(cfg, st);
      yhat = obj::pseudo_label(predict(cfg, *pc, features(cfg, *pf, batch.target_images)));
      at(5);
    }

    // (6) segmentation network
    stage = "segmentation update";
    auto loss = obj::ce_source(p_src, batch.source_labels);
    b.ce_source = detail::finite_or_throw(loss.item(), "ce_source");
    if (yhat) {
      auto l_t = obj::ce_target(p_tgt, *yhat);
      b.ce_target = detail::finite_or_throw(l_t.item(), "ce_target");
      loss = ad::add(loss, ad::scalar_mul(l_t, static_cast<Real>(cfg.loss.lambda_target)));
    }
    if (cfg.has_discriminator()) {
      ad::FreezeGuard<Real> freeze(st.disc);
      const auto dh = disc_head(cfg);
      auto g_src = nets::discriminator_forward(dh, st.disc, f_src);
      auto g_tgt = nets::discriminator_forward(dh, st.disc, f_tgt);
      auto gen = obj::generator_adv_loss<Real>({&g_src, w ? &w->source : nullptr, cls ? &p_src_d : nullptr},
                                               {&g_tgt, w ? &w->target : nullptr, cls ? &p_tgt_d : nullptr},
                                               cfg.loss.saturating_generator);
      loss = ad::add(loss, ad::scalar_mul(gen, static_cast<Real>(cfg.loss.lambda_adv)));
    }
    detail::finite_or_throw(loss.item(), "total loss");
    ad::backward(loss);
    ad::adamw_step(F, st.opt_f);
    ad::adamw_step(C, st.opt_c);
    at(6);

    // (7) momentum
    ema_update(st.momentum);
    at(7);
  } catch (const NonFiniteError& e) {
    throw NumericAbort(st.iteration, detail::diagnostic(stage, b, st, e.what()));
  }
  ++st.iteration;
  if (st.round > 0) ++st.round_iter;
  return rec;
}

}  // namespace smoothda::train
