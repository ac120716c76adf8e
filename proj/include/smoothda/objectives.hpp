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

// Segmentation, similarity and adversarial losses, pseudo labels and the
// entropy/similarity-based per-pixel adversarial weights.
//
// Conventions: prediction maps are (B, K, H, W) probabilities, domain maps
// (B, 1 or K, h, w) sigmoid outputs, weight maps (B, 1, h, w). Every log is
// taken of a value clamped at 1e-12.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smoothda/autodiff.hpp"
#include "smoothda/error.hpp"

namespace smoothda::obj {

inline constexpr double kLogFloor = 1e-12;
inline constexpr std::uint8_t kIgnoreIndex = 255;

namespace detail {

template <typename T>
ad::Tensor<T> safe_log(const ad::Tensor<T>& x) {
  return ad::log_clamped(x, static_cast<T>(kLogFloor));
}

template <typename T>
ad::Tensor<T> one_minus(const ad::Tensor<T>& x) {
  return ad::affine(x, T(-1), T(1));
}

template <typename T>
void require_rank4(const char* op, const ad::Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected (B,C,H,W), got " + ad::to_string(x.shape()));
}

/// Cross-entropy at the given per-pixel classes; entries equal to `ignore`
/// are skipped.
template <typename T>
ad::Tensor<T> ce_at(const char* op, const ad::Tensor<T>& p, std::span<const std::uint8_t> labels,
                    std::uint8_t ignore) {
  require_rank4(op, p);
  const std::size_t B = p.dim(0), K = p.dim(1), HW = p.dim(2) * p.dim(3);
  if (labels.size() != B * HW) {
    throw ShapeError(std::string(op) + ": label mask has " + std::to_string(labels.size()) +
                     " pixels, prediction " + ad::to_string(p.shape()));
  }
  std::vector<std::uint32_t> idx;
  idx.reserve(labels.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t q = 0; q < HW; ++q) {
      const std::uint8_t y = labels[b * HW + q];
      if (y == ignore) continue;
      if (y >= K) {
        throw InvalidArgument(std::string(op) + ": label " + std::to_string(y) + " at pixel " +
                              std::to_string(q) + " of image " + std::to_string(b) +
                              " is outside [0, " + std::to_string(K) + ")");
      }
      idx.push_back(static_cast<std::uint32_t>((b * K + y) * HW + q));
    }
  if (idx.empty()) throw InvalidArgument(std::string(op) + ": every pixel is ignored");
  const std::size_t n = idx.size();
  auto picked = ad::take(p, {n}, std::move(idx));
  return ad::scalar_mul(ad::mean(safe_log(picked)), T(-1));
}

/// Mean over k x k blocks of a plain value map (B, C, H, W), no graph.
template <typename T>
ad::Tensor<T> pool_values(const ad::Tensor<T>& x, std::size_t h, std::size_t w) {
  if (x.dim(2) == h && x.dim(3) == w) return x;
  if (h == 0 || x.dim(2) % h || x.dim(3) % w || x.dim(2) / h != x.dim(3) / w) {
    throw ShapeError("resolution bridge: cannot pool " + ad::to_string(x.shape()) + " to " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
  ad::NoGradGuard ng;
  return ad::avg_pool2d(ad::stop_gradient(x), x.dim(2) / h);
}

}  // namespace detail

// --- Segmentation -------------------------------------------------------------

/// -mean over non-ignored pixels of log p[y].
template <typename T>
ad::Tensor<T> ce_source(const ad::Tensor<T>& p, std::span<const std::uint8_t> labels,
                        std::uint8_t ignore_index = kIgnoreIndex) {
  return detail::ce_at("ce_source", p, labels, ignore_index);
}

/// Per-pixel argmax class (B*H*W), ties to the lowest index.
template <typename T>
std::vector<std::uint8_t> argmax_labels(const ad::Tensor<T>& p) {
  detail::require_rank4("argmax", p);
  const std::size_t B = p.dim(0), K = p.dim(1), HW = p.dim(2) * p.dim(3);
  if (K > 255) throw InvalidArgument("argmax: at most 255 classes supported");
  std::vector<std::uint8_t> out(B * HW);
  const auto v = p.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t q = 0; q < HW; ++q) {
      std::size_t best = 0;
      T bv = v[b * K * HW + q];
      for (std::size_t k = 1; k < K; ++k) {
        const T x = v[(b * K + k) * HW + q];
        if (x > bv) bv = x, best = k;
      }
      out[b * HW + q] = static_cast<std::uint8_t>(best);
    }
  return out;
}

/// One-hot map at the per-pixel argmax; carries no gradient.
template <typename T>
ad::Tensor<T> pseudo_label(const ad::Tensor<T>& p) {
  const auto lab = argmax_labels(p);
  const std::size_t B = p.dim(0), K = p.dim(1), HW = p.dim(2) * p.dim(3);
  std::vector<T> v(p.size(), T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t q = 0; q < HW; ++q) v[(b * K + lab[b * HW + q]) * HW + q] = T(1);
  return ad::Tensor<T>::from(p.shape(), std::move(v));
}

/// Recovers class ids from a one-hot map; throws if any pixel is not one-hot.
template <typename T>
std::vector<std::uint8_t> one_hot_labels(const ad::Tensor<T>& y) {
  detail::require_rank4("ce_target", y);
  const std::size_t B = y.dim(0), K = y.dim(1), HW = y.dim(2) * y.dim(3);
  std::vector<std::uint8_t> out(B * HW);
  const auto v = y.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t q = 0; q < HW; ++q) {
      int hot = -1;
      for (std::size_t k = 0; k < K; ++k) {
        const T x = v[(b * K + k) * HW + q];
        if (x == T(1) && hot < 0) {
          hot = static_cast<int>(k);
        } else if (x != T(0)) {
          hot = -2;
          break;
        }
      }
      if (hot < 0) {
        throw InvalidArgument("ce_target: pseudo label at pixel " + std::to_string(q) + " of image " +
                              std::to_string(b) + " is not one-hot");
      }
      out[b * HW + q] = static_cast<std::uint8_t>(hot);
    }
  return out;
}

/// -mean over pixels of sum_k yhat_k log p_k, with yhat one-hot.
template <typename T>
ad::Tensor<T> ce_target(const ad::Tensor<T>& p, const ad::Tensor<T>& yhat) {
  if (p.shape() != yhat.shape()) {
    throw ShapeError("ce_target: prediction " + ad::to_string(p.shape()) + " and pseudo label " +
                     ad::to_string(yhat.shape()) + " differ");
  }
  const auto lab = one_hot_labels(yhat);
  return detail::ce_at("ce_target", p, lab, kIgnoreIndex);
}

// --- Entropy and weights ------------------------------------------------------

/// Per-pixel E(p) / log K as a (B, 1, H, W) map without gradient.
template <typename T>
ad::Tensor<T> entropy_norm(const ad::Tensor<T>& p) {
  detail::require_rank4("entropy_norm", p);
  const std::size_t B = p.dim(0), K = p.dim(1), HW = p.dim(2) * p.dim(3);
  if (K < 2) throw InvalidArgument("entropy_norm: needs at least 2 classes");
  const double logk = std::log(static_cast<double>(K));
  std::vector<T> out(B * HW);
  const auto v = p.values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t q = 0; q < HW; ++q) {
      double e = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const double x = std::max(static_cast<double>(v[(b * K + k) * HW + q]), kLogFloor);
        e -= x * std::log(x);
      }
      out[b * HW + q] = static_cast<T>(std::clamp(e / logk, 0.0, 1.0));
    }
  return ad::Tensor<T>::from({B, 1, p.dim(2), p.dim(3)}, std::move(out));
}

/// In-place min-max normalization to [0, 1]; constant input becomes all ones.
template <typename T>
void minmax_normalize(std::span<T> v) {
  if (v.empty()) return;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const T mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    std::fill(v.begin(), v.end(), T(1));
    return;
  }
  const T range = mx - mn;
  for (auto& x : v) x = (x - mn) / range;
}

template <typename T>
struct WeightMaps {
  ad::Tensor<T> source;  // (B, 1, h, w)
  ad::Tensor<T> target;
};

/// Raw weights w^s = E(p^s)/logK - S_src and w^t = S_tgt - E(phat^t)/logK at
/// the similarity-map resolution, min-max normalized per domain over the
/// batch. Outputs are plain data (no gradient).
template <typename T>
WeightMaps<T> dynamic_weights(const ad::Tensor<T>& p_src, const ad::Tensor<T>& p_tgt, const ad::Tensor<T>& s_src,
                              const ad::Tensor<T>& s_tgt) {
  detail::require_rank4("dynamic_weights", s_src);
  detail::require_rank4("dynamic_weights", s_tgt);
  if (s_src.dim(1) != 1 || s_tgt.dim(1) != 1) throw ShapeError("dynamic_weights: similarity maps need one channel");
  auto make = [](const ad::Tensor<T>& p, const ad::Tensor<T>& s, bool source) {
    auto e = detail::pool_values(entropy_norm(p), s.dim(2), s.dim(3));
    if (e.shape() != s.shape()) {
      throw ShapeError("dynamic_weights: entropy " + ad::to_string(e.shape()) + " vs similarity " +
                       ad::to_string(s.shape()));
    }
    std::vector<T> w(s.size());
    const auto ev = e.values();
    const auto sv = s.values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = source ? ev[i] - sv[i] : sv[i] - ev[i];
    minmax_normalize(std::span<T>(w));
    return ad::Tensor<T>::from(s.shape(), std::move(w));
  };
  return {make(p_src, s_src, true), make(p_tgt, s_tgt, false)};
}

template <typename T>
WeightMaps<T> unit_weights(const ad::Shape& src, const ad::Shape& tgt) {
  return {ad::Tensor<T>::full(src, T(1)), ad::Tensor<T>::full(tgt, T(1))};
}

// --- Similarity ---------------------------------------------------------------

/// -mean log S_src - mean log(1 - S_tgt).
template <typename T>
ad::Tensor<T> sim_loss(const ad::Tensor<T>& s_src, const ad::Tensor<T>& s_tgt) {
  auto a = ad::mean(detail::safe_log(s_src));
  auto b = ad::mean(detail::safe_log(detail::one_minus(s_tgt)));
  return ad::scalar_mul(ad::add(a, b), T(-1));
}

// --- Adversarial --------------------------------------------------------------

enum class AdvVariant { none, bin, wbin, cls, wcls };

inline std::string_view to_string(AdvVariant v) {
  switch (v) {
    case AdvVariant::none: return "none";
    case AdvVariant::bin: return "bin";
    case AdvVariant::wbin: return "wbin";
    case AdvVariant::cls: return "cls";
    case AdvVariant::wcls: return "wcls";
  }
  return "?";
}

inline bool is_weighted(AdvVariant v) { return v == AdvVariant::wbin || v == AdvVariant::wcls; }
inline bool is_class_level(AdvVariant v) { return v == AdvVariant::cls || v == AdvVariant::wcls; }

namespace detail {

template <typename T>
void check_weight(const char* op, const ad::Tensor<T>& d, const ad::Tensor<T>* w) {
  if (!w) return;
  if (w->rank() != 4 || w->dim(0) != d.dim(0) || w->dim(1) != 1 || w->dim(2) != d.dim(2) || w->dim(3) != d.dim(3)) {
    throw ShapeError(std::string(op) + ": weight map " + ad::to_string(w->shape()) +
                     " does not match domain map " + ad::to_string(d.shape()));
  }
}

/// mean over (B, h, w) of  w * sum_k p_k * log(d_k or 1 - d_k). `p` may be
/// null for the binary form (single channel, no channel weighting).
template <typename T>
ad::Tensor<T> weighted_log_term(const char* op, const ad::Tensor<T>& d, bool complement, const ad::Tensor<T>* w,
                                const ad::Tensor<T>* p) {
  require_rank4(op, d);
  check_weight(op, d, w);
  auto l = safe_log(complement ? one_minus(d) : d);
  if (p) {
    auto pp = pool_values(*p, d.dim(2), d.dim(3));
    if (pp.dim(0) != d.dim(0) || pp.dim(1) != d.dim(1)) {
      throw ShapeError(std::string(op) + ": class weights " + ad::to_string(p->shape()) +
                       " do not match domain map " + ad::to_string(d.shape()));
    }
    l = ad::sum(ad::mul(ad::stop_gradient(pp), l), 1, true);
  } else if (d.dim(1) != 1) {
    throw ShapeError(std::string(op) + ": binary domain map must have one channel, got " + ad::to_string(d.shape()));
  }
  if (w) l = ad::mul(l, *w);
  return ad::mean(l);
}

}  // namespace detail

/// Discriminator-side loss, variant chosen by the presence of weights and
/// class posteriors:
///   -mean[w^s sum_k p^s_k log D_k(src)] - mean[w^t sum_k p^t_k log(1 - D_k(tgt))]
template <typename T>
ad::Tensor<T> adv_loss(const ad::Tensor<T>& d_src, const ad::Tensor<T>& d_tgt, const ad::Tensor<T>* w_src,
                       const ad::Tensor<T>* w_tgt, const ad::Tensor<T>* p_src, const ad::Tensor<T>* p_tgt) {
  auto a = detail::weighted_log_term("adv", d_src, false, w_src, p_src);
  auto b = detail::weighted_log_term("adv", d_tgt, true, w_tgt, p_tgt);
  return ad::scalar_mul(ad::add(a, b), T(-1));
}

template <typename T>
ad::Tensor<T> adv_bin(const ad::Tensor<T>& d_src, const ad::Tensor<T>& d_tgt) {
  return adv_loss<T>(d_src, d_tgt, nullptr, nullptr, nullptr, nullptr);
}

template <typename T>
ad::Tensor<T> adv_wbin(const ad::Tensor<T>& d_src, const ad::Tensor<T>& d_tgt, const ad::Tensor<T>& w_src,
                       const ad::Tensor<T>& w_tgt) {
  return adv_loss<T>(d_src, d_tgt, &w_src, &w_tgt, nullptr, nullptr);
}

template <typename T>
ad::Tensor<T> adv_cls(const ad::Tensor<T>& p_src, const ad::Tensor<T>& p_tgt, const ad::Tensor<T>& d_src,
                      const ad::Tensor<T>& d_tgt) {
  return adv_loss<T>(d_src, d_tgt, nullptr, nullptr, &p_src, &p_tgt);
}

template <typename T>
ad::Tensor<T> adv_wcls(const ad::Tensor<T>& p_src, const ad::Tensor<T>& p_tgt, const ad::Tensor<T>& d_src,
                       const ad::Tensor<T>& d_tgt, const ad::Tensor<T>& w_src, const ad::Tensor<T>& w_tgt) {
  return adv_loss<T>(d_src, d_tgt, &w_src, &w_tgt, &p_src, &p_tgt);
}

/// One branch of the generator (feature extractor) objective. `d` must come
/// from a discriminator forward with frozen parameters.
template <typename T>
struct GeneratorBranch {
  const ad::Tensor<T>* d = nullptr;
  const ad::Tensor<T>* w = nullptr;  // null: unit weights
  const ad::Tensor<T>* p = nullptr;  // null: binary form
};

/// Fooling loss summed over the supplied branches. Non-saturating form
/// (default): the source branch is pushed towards the target label and the
/// target branch towards the source label,
///   -mean[w^s sum_k p^s_k log(1 - D_k(src))] - mean[w^t sum_k p^t_k log D_k(tgt)].
/// Saturating form: the negated discriminator loss on the same branches.
template <typename T>
ad::Tensor<T> generator_adv_loss(const GeneratorBranch<T>& src, const GeneratorBranch<T>& tgt,
                                 bool saturating = false) {
  std::optional<ad::Tensor<T>> total;
  auto accumulate = [&total](ad::Tensor<T> t) { total = total ? ad::add(*total, t) : t; };
  if (src.d) {
    auto t = detail::weighted_log_term("generator_adv", *src.d, !saturating, src.w, src.p);
    accumulate(saturating ? t : ad::scalar_mul(t, T(-1)));
  }
  if (tgt.d) {
    auto t = detail::weighted_log_term("generator_adv", *tgt.d, saturating, tgt.w, tgt.p);
    accumulate(saturating ? t : ad::scalar_mul(t, T(-1)));
  }
  if (!total) throw InvalidArgument("generator_adv_loss: no branch supplied");
  return *total;
}

// --- Bundle -------------------------------------------------------------------

/// Scalar loss values of one training iteration. Absent entries were not
/// computed in that iteration's configuration.
struct LossBundle {
  double ce_source = 0.0;
  std::optional<double> ce_target;
  std::optional<double> adv;
  std::optional<double> sim;
  AdvVariant variant = AdvVariant::none;
};

}  // namespace smoothda::obj
