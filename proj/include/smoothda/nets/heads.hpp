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

#include <string>

#include "smoothda/autodiff.hpp"
#include "smoothda/nets/config.hpp"
#include "smoothda/nets/init.hpp"

namespace smoothda::nets {

// --- Classifier C -----------------------------------------------------------

template <typename T>
ad::ParameterStore<T> init_classifier(std::size_t in_channels, std::size_t num_classes, Rng& rng) {
  ad::ParameterStore<T> s(ad::NetworkKind::classifier);
  init::conv(s, rng, "proj", num_classes, in_channels, 1);
  return s;
}

/// 1x1 projection to K logits, bilinear upsample by `upsample`, softmax over
/// channels. Returns the PredictionMap (B, K, h*upsample, w*upsample).
template <typename T>
ad::Tensor<T> classifier_forward(const ad::ParameterStore<T>& p, const ad::Tensor<T>& feat,
                                 std::size_t num_classes, std::size_t upsample) {
  const auto& w = p.at("proj.weight");
  if (w.dim(0) != num_classes) {
    throw ShapeError("classifier_forward: parameters produce " + std::to_string(w.dim(0)) +
                     " classes, expected " + std::to_string(num_classes));
  }
  if (feat.rank() != 4 || feat.dim(1) != w.dim(1)) {
    throw ShapeError("classifier_forward: feature map " + ad::to_string(feat.shape()) +
                     " does not match classifier input channels " + std::to_string(w.dim(1)));
  }
  auto logits = ad::conv2d<T>(feat, w, p.at("proj.bias"), 1, 0);
  if (upsample > 1) logits = ad::upsample_bilinear(logits, upsample);
  return ad::softmax(logits, 1);
}

// --- Discriminators D (binary / class-level) and similarity network S ---------
//
// Three 3x3 convs, stride 1, padding 1, leaky ReLU between layers, sigmoid
// on the output. Binary D and S have one output channel; the class-level D
// has K channels (D_k = channel k).

template <typename T>
ad::ParameterStore<T> init_domain_head(const DomainHeadConfig& c, ad::NetworkKind kind, Rng& rng) {
  ad::ParameterStore<T> s(kind);
  init::conv(s, rng, "conv1", c.hidden, c.in_channels, 3);
  init::conv(s, rng, "conv2", c.hidden, c.hidden, 3);
  init::conv(s, rng, "conv3", c.out_channels, c.hidden, 3);
  return s;
}

template <typename T>
ad::Tensor<T> domain_head_forward(const DomainHeadConfig& c, const ad::ParameterStore<T>& p,
                                  const ad::Tensor<T>& feat) {
  const auto& w3 = p.at("conv3.weight");
  if (w3.dim(0) != c.out_channels) {
    throw ShapeError("domain head: parameters produce " + std::to_string(w3.dim(0)) +
                     " channels, mode expects " + std::to_string(c.out_channels));
  }
  if (feat.rank() != 4 || feat.dim(1) != p.at("conv1.weight").dim(1)) {
    throw ShapeError("domain head: feature map " + ad::to_string(feat.shape()) +
                     " does not match input channels " + std::to_string(p.at("conv1.weight").dim(1)));
  }
  const T slope = static_cast<T>(c.leaky_slope);
  auto x = ad::conv2d<T>(feat, p.at("conv1.weight"), p.at("conv1.bias"), 1, 1);
  x = ad::leaky_relu(x, slope);
  x = ad::conv2d<T>(x, p.at("conv2.weight"), p.at("conv2.bias"), 1, 1);
  x = ad::leaky_relu(x, slope);
  x = ad::conv2d<T>(x, w3, p.at("conv3.bias"), 1, 1);
  return ad::sigmoid(x);
}

enum class DiscriminatorMode { none, binary, class_level };

inline std::string_view to_string(DiscriminatorMode m) {
  switch (m) {
    case DiscriminatorMode::none: return "none";
    case DiscriminatorMode::binary: return "binary";
    case DiscriminatorMode::class_level: return "class";
  }
  return "?";
}

inline DiscriminatorMode discriminator_mode_from(std::string_view s) {
  if (s == "none") return DiscriminatorMode::none;
  if (s == "binary") return DiscriminatorMode::binary;
  if (s == "class") return DiscriminatorMode::class_level;
  throw ConfigError("unknown discriminator mode '" + std::string(s) + "' (expected none, binary or class)");
}

inline DomainHeadConfig discriminator_config(DiscriminatorMode m, std::size_t in_channels,
                                             std::size_t num_classes, std::size_t hidden = 64) {
  if (m == DiscriminatorMode::none) throw ConfigError("discriminator_config: mode is none");
  return {in_channels, hidden, m == DiscriminatorMode::binary ? std::size_t{1} : num_classes, 0.2};
}

inline DomainHeadConfig similarity_config(std::size_t in_channels, std::size_t hidden = 64) {
  return {in_channels, hidden, 1, 0.2};
}

/// DomainMap (B, 1 or K, h, w) with values in (0, 1).
template <typename T>
ad::Tensor<T> discriminator_forward(const DomainHeadConfig& c, const ad::ParameterStore<T>& p,
                                    const ad::Tensor<T>& feat) {
  return domain_head_forward(c, p, feat);
}

/// SimilarityMap (B, 1, h, w) in (0, 1): how source-like each location is.
template <typename T>
ad::Tensor<T> similarity_forward(const DomainHeadConfig& c, const ad::ParameterStore<T>& p,
                                 const ad::Tensor<T>& feat) {
  if (c.out_channels != 1) throw ShapeError("similarity_forward: similarity net has one output channel");
  return domain_head_forward(c, p, feat);
}

}  // namespace smoothda::nets
