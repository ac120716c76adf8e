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

// Feature extractors F: images (B, 3, H, W) in [0, 1] -> feature map
// (B, embed_dim, H/patch, W/patch).
//
// local_vit: patch embedding followed by pre-norm transformer blocks whose
// self-attention is restricted to ws x ws windows of patches. Odd blocks
// cyclically shift the map by ws/2 before partitioning and mask attention
// between patches that were not neighbours before the shift.
//
// cnn: patch-stride stem followed by residual conv blocks at the same
// output resolution.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "smoothda/autodiff.hpp"
#include "smoothda/nets/config.hpp"
#include "smoothda/nets/init.hpp"

namespace smoothda::nets {

namespace detail {

inline std::string block_name(std::size_t i) { return "blocks." + std::to_string(i); }

/// Shift applied by block `i`; zero when a single window covers the map.
inline std::size_t block_shift(const ExtractorConfig& c, std::size_t i) {
  if (i % 2 == 0) return 0;
  if (c.grid_h() <= c.window_size && c.grid_w() <= c.window_size) return 0;
  return c.window_size / 2;
}

/// Attention bias (nW, 1, N, N): 0 inside a contiguous region of the
/// unshifted map, -100 across regions.
template <typename T>
ad::Tensor<T> shift_mask(std::size_t H, std::size_t W, std::size_t ws, std::size_t shift) {
  const std::size_t nh = H / ws, nw = W / ws, N = ws * ws;
  auto region = [ws, shift](std::size_t r, std::size_t n) -> std::size_t {
    if (r < n - ws) return 0;
    if (r < n - shift) return 1;
    return 2;
  };
  std::vector<T> m(nh * nw * N * N, T(0));
  for (std::size_t wy = 0; wy < nh; ++wy)
    for (std::size_t wx = 0; wx < nw; ++wx) {
      std::vector<std::size_t> id(N);
      for (std::size_t p = 0; p < N; ++p) {
        id[p] = region(wy * ws + p / ws, H) * 3 + region(wx * ws + p % ws, W);
      }
      T* mw = m.data() + (wy * nw + wx) * N * N;
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) mw[i * N + j] = id[i] == id[j] ? T(0) : T(-100);
    }
  return ad::Tensor<T>::from({nh * nw, 1, N, N}, std::move(m));
}

/// Flat indices into the ((2ws-1)^2, heads) bias table producing (heads, N, N).
inline std::vector<std::uint32_t> relative_bias_index(std::size_t ws, std::size_t heads) {
  const std::size_t N = ws * ws, span = 2 * ws - 1;
  std::vector<std::uint32_t> idx(heads * N * N);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        const std::size_t dy = i / ws + ws - 1 - j / ws;
        const std::size_t dx = i % ws + ws - 1 - j % ws;
        idx[(h * N + i) * N + j] = static_cast<std::uint32_t>((dy * span + dx) * heads + h);
      }
  return idx;
}

template <typename T>
ad::Tensor<T> linear(const ad::ParameterStore<T>& p, const std::string& name, const ad::Tensor<T>& x) {
  return ad::add(ad::matmul(x, p.at(name + ".weight")), p.at(name + ".bias"));
}

template <typename T>
ad::Tensor<T> norm(const ad::ParameterStore<T>& p, const std::string& name, const ad::Tensor<T>& x) {
  return ad::layernorm(x, p.at(name + ".weight"), p.at(name + ".bias"));
}

template <typename T>
ad::Tensor<T> conv(const ad::ParameterStore<T>& p, const std::string& name, const ad::Tensor<T>& x,
                   std::size_t stride, std::size_t pad) {
  return ad::conv2d<T>(x, p.at(name + ".weight"), p.at(name + ".bias"), stride, pad);
}

/// LayerNorm over the channel axis of an NCHW map.
template <typename T>
ad::Tensor<T> channel_norm(const ad::ParameterStore<T>& p, const std::string& name, const ad::Tensor<T>& x) {
  return ad::permute(norm(p, name, ad::permute(x, {0, 2, 3, 1})), {0, 3, 1, 2});
}

/// Multi-head self-attention inside each window. x: (B*nW, N, C).
template <typename T>
ad::Tensor<T> window_attention(const ExtractorConfig& c, const ad::ParameterStore<T>& p,
                               const std::string& name, const ad::Tensor<T>& x, std::size_t batch,
                               const ad::Tensor<T>* mask) {
  const std::size_t BW = x.dim(0), N = x.dim(1), C = c.embed_dim, h = c.heads, d = C / h;
  // No key bias: it would shift every logit of a query row equally and so
  // cancel in the softmax.
  const auto& qb = p.at(name + ".q_bias");
  auto qkv_bias = ad::concat<T>({qb, ad::Tensor<T>::zeros({C}), p.at(name + ".v_bias")}, 0);
  auto qkv = ad::add(ad::matmul(x, p.at(name + ".qkv.weight")), qkv_bias);  // (BW, N, 3C)
  qkv = ad::permute(ad::reshape(qkv, {BW, N, 3, h, d}), {2, 0, 3, 1, 4});  // (3, BW, h, N, d)
  auto q = ad::reshape(ad::slice(qkv, 0, 0, 1), {BW, h, N, d});
  auto k = ad::reshape(ad::slice(qkv, 0, 1, 1), {BW, h, N, d});
  auto v = ad::reshape(ad::slice(qkv, 0, 2, 1), {BW, h, N, d});

  auto attn = ad::scalar_mul(ad::matmul_nt(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  auto bias = ad::take(p.at(name + ".rel_bias"), {h, N, N}, relative_bias_index(c.window_size, h));
  attn = ad::add(attn, bias);
  if (mask) {
    const std::size_t nW = BW / batch;
    attn = ad::reshape(ad::add(ad::reshape(attn, {batch, nW, h, N, N}), *mask), {BW, h, N, N});
  }
  attn = ad::softmax(attn, -1);
  auto out = ad::matmul(attn, v);                                     // (BW, h, N, d)
  out = ad::reshape(ad::permute(out, {0, 2, 1, 3}), {BW, N, C});
  return linear(p, name + ".proj", out);
}

}  // namespace detail

template <typename T>
ad::ParameterStore<T> init_extractor(const ExtractorConfig& c, Rng& rng) {
  c.validate();
  ad::ParameterStore<T> s(ad::NetworkKind::extractor);
  const std::size_t C = c.embed_dim;
  init::conv(s, rng, "patch_embed", C, 3, c.patch_size);
  init::norm(s, "patch_norm", C);
  for (std::size_t i = 0; i < c.depth; ++i) {
    const auto b = detail::block_name(i);
    if (c.kind == ExtractorKind::local_vit) {
      const std::size_t span = 2 * c.window_size - 1;
      init::norm(s, b + ".norm1", C);
      s.add(b + ".attn.qkv.weight", init::trunc_normal<T>(rng, {C, 3 * C}, 0.02));
      s.add(b + ".attn.q_bias", init::constant<T>({C}, 0.0));
      s.add(b + ".attn.v_bias", init::constant<T>({C}, 0.0));
      s.add(b + ".attn.rel_bias", init::constant<T>({span * span, c.heads}, 0.0));
      init::linear(s, rng, b + ".attn.proj", C, C);
      init::norm(s, b + ".norm2", C);
      init::linear(s, rng, b + ".mlp.fc1", C, c.mlp_ratio * C);
      init::linear(s, rng, b + ".mlp.fc2", c.mlp_ratio * C, C);
    } else {
      init::norm(s, b + ".norm", C);
      init::conv(s, rng, b + ".conv3", C, C, 3);
      init::conv(s, rng, b + ".expand", 2 * C, C, 1);
      init::conv(s, rng, b + ".reduce", C, 2 * C, 1);
    }
  }
  init::norm(s, "norm", C);
  return s;
}

/// images (B, 3, H, W) -> FeatureMap (B, embed_dim, H/patch, W/patch).
template <typename T>
ad::Tensor<T> extractor_forward(const ExtractorConfig& c, const ad::ParameterStore<T>& p,
                                const ad::Tensor<T>& images) {
  c.validate();
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != c.image_h || images.dim(3) != c.image_w) {
    throw ShapeError("extractor_forward: images " + ad::to_string(images.shape()) +
                     " do not match config (B,3," + std::to_string(c.image_h) + "," +
                     std::to_string(c.image_w) + ")");
  }
  const std::size_t B = images.dim(0), H = c.grid_h(), W = c.grid_w(), ws = c.window_size;
  auto x = detail::conv(p, "patch_embed", images, c.patch_size, 0);  // (B, C, H, W)

  if (c.kind == ExtractorKind::cnn) {
    x = detail::channel_norm(p, "patch_norm", x);
    for (std::size_t i = 0; i < c.depth; ++i) {
      const auto b = detail::block_name(i);
      auto h = detail::channel_norm(p, b + ".norm", x);
      h = detail::conv(p, b + ".conv3", h, 1, 1);
      h = ad::gelu(detail::conv(p, b + ".expand", h, 1, 0));
      h = detail::conv(p, b + ".reduce", h, 1, 0);
      x = ad::add(x, h);
    }
    return detail::channel_norm(p, "norm", x);
  }

  x = detail::norm(p, "patch_norm", ad::permute(x, {0, 2, 3, 1}));  // (B, H, W, C)
  std::optional<ad::Tensor<T>> mask;
  for (std::size_t i = 0; i < c.depth; ++i) {
    const auto b = detail::block_name(i);
    const std::size_t shift = detail::block_shift(c, i);
    if (shift && !mask) mask = detail::shift_mask<T>(H, W, ws, shift);
    auto h = detail::norm(p, b + ".norm1", x);
    h = ad::window_partition(h, ws, shift);
    h = detail::window_attention(c, p, b + ".attn", h, B, shift ? &*mask : nullptr);
    x = ad::add(x, ad::window_merge(h, B, H, W, ws, shift));
    h = detail::norm(p, b + ".norm2", x);
    h = detail::linear(p, b + ".mlp.fc2", ad::gelu(detail::linear(p, b + ".mlp.fc1", h)));
    x = ad::add(x, h);
  }
  x = detail::norm(p, "norm", x);
  return ad::permute(x, {0, 3, 1, 2});
}

}  // namespace smoothda::nets
