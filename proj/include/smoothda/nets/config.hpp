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

#include <cstddef>
#include <string>
#include <string_view>

#include "smoothda/error.hpp"

namespace smoothda::nets {

enum class ExtractorKind { local_vit, cnn };

inline std::string_view to_string(ExtractorKind k) { return k == ExtractorKind::cnn ? "cnn" : "local_vit"; }

inline ExtractorKind extractor_kind_from(std::string_view s) {
  if (s == "local_vit") return ExtractorKind::local_vit;
  if (s == "cnn") return ExtractorKind::cnn;
  throw ConfigError("unknown extractor kind '" + std::string(s) + "' (expected local_vit or cnn)");
}

struct ExtractorConfig {
  ExtractorKind kind = ExtractorKind::local_vit;
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  std::size_t patch_size = 4;
  std::size_t window_size = 4;  // in patches
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;

  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }

  /// No padding is applied: the patch grid must tile into whole windows.
  void validate() const {
    if (patch_size == 0 || image_h % patch_size || image_w % patch_size) {
      throw ConfigError("extractor: image size " + std::to_string(image_h) + "x" +
                        std::to_string(image_w) + " is not divisible by patch size " +
                        std::to_string(patch_size));
    }
    if (embed_dim == 0 || depth == 0) throw ConfigError("extractor: embed_dim and depth must be positive");
    if (kind == ExtractorKind::local_vit) {
      if (window_size == 0 || grid_h() % window_size || grid_w() % window_size) {
        throw ConfigError("extractor: patch grid " + std::to_string(grid_h()) + "x" +
                          std::to_string(grid_w()) + " is not divisible by window size " +
                          std::to_string(window_size));
      }
      if (heads == 0 || embed_dim % heads) {
        throw ConfigError("extractor: embed_dim " + std::to_string(embed_dim) +
                          " is not divisible by heads " + std::to_string(heads));
      }
    }
  }
};

/// Shared by the binary / class-level discriminators and the similarity net.
struct DomainHeadConfig {
  std::size_t in_channels = 64;
  std::size_t hidden = 64;
  std::size_t out_channels = 1;
  double leaky_slope = 0.2;
};

}  // namespace smoothda::nets
