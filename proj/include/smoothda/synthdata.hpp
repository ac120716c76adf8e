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

// Synthetic sim2real segmentation data.
//
// A scene is a smooth background with non-overlapping geometric objects,
// one shape type per class. The source domain renders scenes cleanly; the
// target domain renders the same kind of scene and then applies a shift
// stack (global hue/brightness shift, box blur, illumination ramp, Gaussian
// pixel noise) to the image only.
//
// Class ids: 0 background, 1..K^c-1 common object classes, then an optional
// source-private class, then an optional target-private class.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "smoothda/autodiff/tensor.hpp"
#include "smoothda/error.hpp"
#include "smoothda/rng.hpp"

namespace smoothda::data {

inline constexpr std::uint8_t kIgnore = 255;

enum class Domain : std::uint8_t { source = 0, target = 1 };

inline std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

enum class Shape : std::uint8_t { circle, rectangle, triangle, stripe, ellipse, diamond, cross, ring };

inline constexpr std::array<const char*, 8> kShapeNames = {"circle",  "rectangle", "triangle", "stripe",
                                                          "ellipse", "diamond",   "cross",    "ring"};

struct ShiftParams {
  double noise_sigma = 0.06;
  double hue_shift = 0.08;          // fraction of the hue circle
  double brightness_shift = -0.08;  // additive
  std::size_t blur_radius = 1;      // box filter (2r+1)^2
  double illumination = 0.35;       // ramp amplitude, multiplicative

  bool is_zero() const {
    return noise_sigma == 0.0 && hue_shift == 0.0 && brightness_shift == 0.0 && blur_radius == 0 &&
           illumination == 0.0;
  }
};

struct DomainSpec {
  std::size_t num_common = 5;  // K^c, including background
  bool include_source_private = false;
  bool include_target_private = false;
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  std::size_t min_objects = 2;
  std::size_t max_objects = 6;
  ShiftParams shift;

  std::size_t num_total() const {
    return num_common + (include_source_private ? 1 : 0) + (include_target_private ? 1 : 0);
  }
  /// Class id of the source-private class, or kIgnore when absent.
  std::uint8_t source_private_id() const {
    return include_source_private ? static_cast<std::uint8_t>(num_common) : kIgnore;
  }
  std::uint8_t target_private_id() const {
    return include_target_private ? static_cast<std::uint8_t>(num_common + (include_source_private ? 1 : 0))
                                  : kIgnore;
  }

  void validate() const {
    if (num_common < 2) throw ConfigError("data.num_common must be at least 2");
    if (num_total() - 1 > kShapeNames.size()) {
      throw ConfigError("data: at most " + std::to_string(kShapeNames.size()) +
                        " object classes (common + private) are available");
    }
    if (image_h < 16 || image_w < 16) throw ConfigError("data: images must be at least 16x16");
    if (min_objects > max_objects) throw ConfigError("data.min_objects exceeds data.max_objects");
    if (shift.noise_sigma < 0 || shift.illumination < 0) throw ConfigError("data.shift amplitudes must be >= 0");
  }
};

struct SceneSample {
  std::vector<float> image;        // (3, H, W) in [0, 1]
  std::vector<std::uint8_t> mask;  // (H, W)
  std::size_t h = 0, w = 0;
  Domain domain = Domain::source;
  std::uint64_t sample_seed = 0;
};

// --- Colour helpers -------------------------------------------------------------

namespace detail {

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.f;
  if (d <= 0) {
    h = 0;
    return;
  }
  if (mx == r) h = (g - b) / d;
  else if (mx == g) h = 2.f + (b - r) / d;
  else h = 4.f + (r - g) / d;
  h /= 6.f;
  if (h < 0) h += 1.f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float hh = h * 6.f;
  const int i = static_cast<int>(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

inline void shift_hue(std::vector<float>& img, std::size_t hw, float dh) {
  for (std::size_t q = 0; q < hw; ++q) {
    float h, s, v;
    rgb_to_hsv(img[q], img[hw + q], img[2 * hw + q], h, s, v);
    hsv_to_rgb(h + dh, s, v, img[q], img[hw + q], img[2 * hw + q]);
  }
}

inline void clamp01(std::vector<float>& img) {
  for (auto& x : img) x = std::clamp(x, 0.f, 1.f);
}

inline void box_blur(std::vector<float>& img, std::size_t H, std::size_t W, std::size_t r) {
  if (r == 0) return;
  std::vector<float> tmp(img.size());
  const auto R = static_cast<std::ptrdiff_t>(r);
  for (std::size_t c = 0; c < 3; ++c) {
    const float* src = img.data() + c * H * W;
    float* dst = tmp.data() + c * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0;
        int n = 0;
        for (std::ptrdiff_t dy = -R; dy <= R; ++dy)
          for (std::ptrdiff_t dx = -R; dx <= R; ++dx) {
            const auto yy = static_cast<std::ptrdiff_t>(y) + dy, xx = static_cast<std::ptrdiff_t>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(H) || xx >= static_cast<std::ptrdiff_t>(W))
              continue;
            s += src[yy * static_cast<std::ptrdiff_t>(W) + xx];
            ++n;
          }
        dst[y * W + x] = static_cast<float>(s / n);
      }
  }
  img.swap(tmp);
}

inline constexpr std::array<std::array<float, 3>, 8> kShapeColors = {{
    {0.85f, 0.25f, 0.20f},  // circle
    {0.20f, 0.72f, 0.30f},  // rectangle
    {0.22f, 0.35f, 0.85f},  // triangle
    {0.90f, 0.82f, 0.20f},  // stripe
    {0.80f, 0.30f, 0.80f},  // ellipse
    {0.20f, 0.80f, 0.82f},  // diamond
    {0.95f, 0.95f, 0.92f},  // cross
    {0.95f, 0.55f, 0.15f},  // ring
}};

struct Placed {
  std::ptrdiff_t y0, x0, y1, x1;  // inclusive bounding box
};

inline bool overlaps(const Placed& a, const Placed& b) {
  return !(a.x1 + 1 < b.x0 || b.x1 + 1 < a.x0 || a.y1 + 1 < b.y0 || b.y1 + 1 < a.y0);
}

/// Inside test for a shape centred at the origin with size r.
inline bool inside(Shape s, double dy, double dx, double r, double a, double b, bool vertical) {
  switch (s) {
    case Shape::circle: return dy * dy + dx * dx <= r * r;
    case Shape::rectangle: return std::abs(dx) <= a && std::abs(dy) <= b;
    case Shape::triangle: {
      // apex at top, base at bottom
      if (dy < -r || dy > r) return false;
      const double half = r * (dy + r) / (2 * r);
      return std::abs(dx) <= half;
    }
    case Shape::stripe: {
      const double t = std::max(1.5, r / 3.5);
      return vertical ? (std::abs(dx) <= t && std::abs(dy) <= r) : (std::abs(dy) <= t && std::abs(dx) <= r);
    }
    case Shape::ellipse: return (dx * dx) / (r * r) + (dy * dy) / (0.3 * r * r) <= 1.0;
    case Shape::diamond: return std::abs(dx) + std::abs(dy) <= r;
    case Shape::cross: {
      const double t = std::max(1.5, r / 4.0);
      return (std::abs(dx) <= t && std::abs(dy) <= r) || (std::abs(dy) <= t && std::abs(dx) <= r);
    }
    case Shape::ring: {
      const double d2 = dy * dy + dx * dx;
      return d2 <= r * r && d2 >= 0.3 * r * r;
    }
  }
  return false;
}

}  // namespace detail

/// Object classes that may appear in `domain`: (class id, shape) pairs.
inline std::vector<std::pair<std::uint8_t, Shape>> object_classes(const DomainSpec& spec, Domain domain) {
  std::vector<std::pair<std::uint8_t, Shape>> out;
  for (std::size_t k = 1; k < spec.num_common; ++k) out.emplace_back(k, static_cast<Shape>(k - 1));
  std::size_t next_shape = spec.num_common - 1;
  if (spec.include_source_private) {
    if (domain == Domain::source) out.emplace_back(spec.source_private_id(), static_cast<Shape>(next_shape));
    ++next_shape;
  }
  if (spec.include_target_private && domain == Domain::target) {
    out.emplace_back(spec.target_private_id(), static_cast<Shape>(next_shape));
  }
  return out;
}

/// Applies the target shift stack in place. Zero parameters leave the image
/// untouched bit for bit.
inline void apply_shift(std::vector<float>& img, std::size_t H, std::size_t W, const ShiftParams& s, Rng& rng) {
  const std::size_t hw = H * W;
  if (s.hue_shift != 0.0) detail::shift_hue(img, hw, static_cast<float>(s.hue_shift));
  if (s.brightness_shift != 0.0)
    for (auto& x : img) x += static_cast<float>(s.brightness_shift);
  detail::clamp01(img);
  detail::box_blur(img, H, W, s.blur_radius);
  if (s.illumination != 0.0) {
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double cy = std::sin(ang), cx = std::cos(ang);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        // ramp in [-0.5, 0.5] along a random direction
        const double t = 0.5 * (cy * (2.0 * y / (H - 1) - 1.0) + cx * (2.0 * x / (W - 1) - 1.0)) / std::sqrt(2.0);
        const auto g = static_cast<float>(1.0 + s.illumination * t);
        for (std::size_t c = 0; c < 3; ++c) img[c * hw + y * W + x] *= g;
      }
  }
  if (s.noise_sigma != 0.0)
    for (auto& x : img) x += static_cast<float>(rng.normal(0.0, s.noise_sigma));
  detail::clamp01(img);
}

/// Renders one scene from `sample_seed`. The scene layout depends only on
/// the seed and the domain's class set; the shift stack draws from an
/// independent stream.
inline SceneSample render_scene(const DomainSpec& spec, Domain domain, std::uint64_t sample_seed) {
  const std::size_t H = spec.image_h, W = spec.image_w, hw = H * W;
  Rng rng(sample_seed);
  SceneSample s;
  s.h = H, s.w = W, s.domain = domain, s.sample_seed = sample_seed;
  s.image.assign(3 * hw, 0.f);
  s.mask.assign(hw, 0);

  // background: tinted vertical gradient with a faint low-frequency texture
  std::array<double, 3> top, bottom;
  for (std::size_t c = 0; c < 3; ++c) {
    top[c] = 0.42 + rng.uniform(-0.06, 0.06);
    bottom[c] = 0.32 + rng.uniform(-0.06, 0.06);
  }
  const double fy = rng.uniform(1.0, 3.0), fx = rng.uniform(1.0, 3.0), ph = rng.uniform(0.0, 6.28);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double t = static_cast<double>(y) / (H - 1);
      const double tex = 0.03 * std::sin(fy * 6.28 * y / H + fx * 6.28 * x / W + ph);
      for (std::size_t c = 0; c < 3; ++c)
        s.image[c * hw + y * W + x] = static_cast<float>(top[c] * (1 - t) + bottom[c] * t + tex);
    }

  const auto classes = object_classes(spec, domain);
  const std::size_t n_obj = spec.min_objects + rng.below(spec.max_objects - spec.min_objects + 1);
  const double rmin = std::max(3.0, std::min(H, W) / 12.0), rmax = std::min(H, W) / 5.0;
  std::vector<detail::Placed> placed;
  for (std::size_t o = 0; o < n_obj; ++o) {
    const auto [cls, shape] = classes[rng.below(classes.size())];
    const double r = rng.uniform(rmin, rmax);
    const double a = r * rng.uniform(0.6, 1.0), b = r * rng.uniform(0.6, 1.0);
    const bool vertical = rng.bernoulli(0.5);
    const auto base = detail::kShapeColors[static_cast<std::size_t>(shape)];
    std::array<float, 3> col;
    for (std::size_t c = 0; c < 3; ++c) col[c] = std::clamp(base[c] + static_cast<float>(rng.uniform(-0.08, 0.08)), 0.f, 1.f);
    const auto R = static_cast<std::ptrdiff_t>(std::ceil(r));
    bool ok = false;
    detail::Placed box{};
    std::ptrdiff_t cy = 0, cx = 0;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      cy = R + static_cast<std::ptrdiff_t>(rng.below(H - 2 * R));
      cx = R + static_cast<std::ptrdiff_t>(rng.below(W - 2 * R));
      box = {cy - R, cx - R, cy + R, cx + R};
      ok = std::none_of(placed.begin(), placed.end(), [&](const auto& p) { return detail::overlaps(box, p); });
    }
    if (!ok) continue;  // crowded scene: emit fewer objects
    placed.push_back(box);
    for (std::ptrdiff_t y = box.y0; y <= box.y1; ++y)
      for (std::ptrdiff_t x = box.x0; x <= box.x1; ++x) {
        if (!detail::inside(shape, static_cast<double>(y - cy), static_cast<double>(x - cx), r, a, b, vertical))
          continue;
        const std::size_t q = static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x);
        s.mask[q] = cls;
        for (std::size_t c = 0; c < 3; ++c) s.image[c * hw + q] = col[c];
      }
  }
  detail::clamp01(s.image);
  if (domain == Domain::target && !spec.shift.is_zero()) {
    Rng srng(derive_seed({sample_seed, 0x5348494654ull}));
    apply_shift(s.image, H, W, spec.shift, srng);
  }
  return s;
}

/// Per-sample seeds are derive_seed(seed, i): sample i is the same whatever
/// the worker count, and does not depend on the domain.
inline std::vector<SceneSample> generate(const DomainSpec& spec, Domain domain, std::size_t n, std::uint64_t seed,
                                         std::size_t workers = 1) {
  spec.validate();
  if (n == 0) throw InvalidArgument("generate: n must be at least 1");
  std::vector<SceneSample> out(n);
  auto job = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step) out[i] = render_scene(spec, domain, derive_seed({seed, i}));
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    job(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(job, t, workers);
    for (auto& t : pool) t.join();
  }
  return out;
}

/// Pixel count per class id (size K_total); ignored pixels are not counted.
inline std::vector<std::size_t> class_histogram(const std::vector<SceneSample>& samples, std::size_t k_total) {
  std::vector<std::size_t> h(k_total, 0);
  for (const auto& s : samples)
    for (auto m : s.mask)
      if (m != kIgnore && m < k_total) ++h[m];
  return h;
}

// --- Augmentation -------------------------------------------------------------

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double brightness = 0.2;
  double contrast = 0.2;
  double saturation = 0.2;
  double hue = 0.05;
};

/// Geometric part of an augmentation: optional horizontal flip, rescale by
/// `scale`, then crop (scaled size larger) or zero-pad (smaller) back to the
/// original size at offset (oy, ox) in scaled coordinates.
struct Warp {
  bool flip = false;
  double scale = 1.0;
  std::ptrdiff_t oy = 0, ox = 0;
};

enum class Interp { bilinear, nearest };

/// Resamples a (C, H, W) plane stack through `warp`. Pixels that fall into
/// the padding take `fill`.
inline std::vector<float> warp_planes(const std::vector<float>& src, std::size_t C, std::size_t H, std::size_t W,
                                      const Warp& warp, Interp interp, float fill) {
  const auto Hs = static_cast<std::ptrdiff_t>(std::lround(H * warp.scale));
  const auto Ws = static_cast<std::ptrdiff_t>(std::lround(W * warp.scale));
  const double sy = static_cast<double>(Hs) / H, sx = static_cast<double>(Ws) / W;
  std::vector<float> out(C * H * W, fill);
  for (std::size_t y = 0; y < H; ++y) {
    const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + warp.oy;
    if (yy < 0 || yy >= Hs) continue;
    for (std::size_t x = 0; x < W; ++x) {
      const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + warp.ox;
      if (xx < 0 || xx >= Ws) continue;
      // position in the (possibly flipped) original image
      double fy = (yy + 0.5) / sy - 0.5, fx = (xx + 0.5) / sx - 0.5;
      if (warp.flip) fx = static_cast<double>(W) - 1.0 - fx;
      for (std::size_t c = 0; c < C; ++c) {
        const float* p = src.data() + c * H * W;
        float v;
        if (interp == Interp::nearest) {
          const auto iy = std::clamp<std::ptrdiff_t>(std::lround(std::floor(fy + 0.5)), 0, H - 1);
          const auto ix = std::clamp<std::ptrdiff_t>(std::lround(std::floor(fx + 0.5)), 0, W - 1);
          v = p[iy * W + ix];
        } else {
          const double cy = std::clamp(fy, 0.0, H - 1.0), cx = std::clamp(fx, 0.0, W - 1.0);
          const auto y0 = static_cast<std::size_t>(std::floor(cy)), x0 = static_cast<std::size_t>(std::floor(cx));
          const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
          const double wy = cy - y0, wx = cx - x0;
          const double top = p[y0 * W + x0] * (1 - wx) + p[y0 * W + x1] * wx;
          const double bot = p[y1 * W + x0] * (1 - wx) + p[y1 * W + x1] * wx;
          v = static_cast<float>(top * (1 - wy) + bot * wy);
        }
        out[c * H * W + y * W + x] = v;
      }
    }
  }
  return out;
}

inline std::vector<std::uint8_t> warp_mask(const std::vector<std::uint8_t>& mask, std::size_t H, std::size_t W,
                                           const Warp& warp) {
  std::vector<float> m(mask.begin(), mask.end());
  auto w = warp_planes(m, 1, H, W, warp, Interp::nearest, static_cast<float>(kIgnore));
  return std::vector<std::uint8_t>(w.begin(), w.end());
}

struct Jitter {
  double brightness = 1.0, contrast = 1.0, saturation = 1.0, hue = 0.0;
};

inline void color_jitter(std::vector<float>& img, std::size_t hw, const Jitter& j) {
  if (j.brightness != 1.0)
    for (auto& x : img) x *= static_cast<float>(j.brightness);
  auto gray = [&](std::size_t q) { return 0.299f * img[q] + 0.587f * img[hw + q] + 0.114f * img[2 * hw + q]; };
  if (j.contrast != 1.0) {
    double m = 0;
    for (std::size_t q = 0; q < hw; ++q) m += gray(q);
    m /= hw;
    for (auto& x : img) x = static_cast<float>((x - m) * j.contrast + m);
  }
  if (j.saturation != 1.0) {
    for (std::size_t q = 0; q < hw; ++q) {
      const float g = gray(q);
      for (std::size_t c = 0; c < 3; ++c) img[c * hw + q] = static_cast<float>(g + (img[c * hw + q] - g) * j.saturation);
    }
  }
  if (j.hue != 0.0) detail::shift_hue(img, hw, static_cast<float>(j.hue));
  detail::clamp01(img);
}

inline Warp draw_warp(const AugmentConfig& cfg, std::size_t H, std::size_t W, Rng& rng) {
  Warp w;
  w.flip = rng.bernoulli(cfg.flip_prob);
  w.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const auto Hs = static_cast<std::ptrdiff_t>(std::lround(H * w.scale));
  const auto Ws = static_cast<std::ptrdiff_t>(std::lround(W * w.scale));
  auto offset = [&rng](std::ptrdiff_t scaled, std::ptrdiff_t n) -> std::ptrdiff_t {
    // crop offset in [0, scaled - n] or pad offset in [scaled - n, 0]
    const std::ptrdiff_t lo = std::min<std::ptrdiff_t>(0, scaled - n), hi = std::max<std::ptrdiff_t>(0, scaled - n);
    return lo + static_cast<std::ptrdiff_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  };
  w.oy = offset(Hs, static_cast<std::ptrdiff_t>(H));
  w.ox = offset(Ws, static_cast<std::ptrdiff_t>(W));
  return w;
}

inline Jitter draw_jitter(const AugmentConfig& cfg, Rng& rng) {
  Jitter j;
  j.brightness = 1.0 + rng.uniform(-cfg.brightness, cfg.brightness);
  j.contrast = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast);
  j.saturation = 1.0 + rng.uniform(-cfg.saturation, cfg.saturation);
  j.hue = rng.uniform(-cfg.hue, cfg.hue);
  return j;
}

/// Applies a fixed warp and jitter; the mask follows the warp only.
inline SceneSample apply_augment(const SceneSample& s, const Warp& warp, const Jitter& jitter) {
  SceneSample out = s;
  out.image = warp_planes(s.image, 3, s.h, s.w, warp, Interp::bilinear, 0.f);
  out.mask = warp_mask(s.mask, s.h, s.w, warp);
  color_jitter(out.image, s.h * s.w, jitter);
  return out;
}

inline SceneSample augment(const SceneSample& s, const AugmentConfig& cfg, Rng& rng) {
  if (!cfg.enabled) return s;
  const Warp w = draw_warp(cfg, s.h, s.w, rng);
  const Jitter j = draw_jitter(cfg, rng);
  return apply_augment(s, w, j);
}

// --- Batches ------------------------------------------------------------------

struct Batch {
  ad::Tensor<float> images;           // (B, 3, H, W)
  std::vector<std::uint8_t> labels;   // (B, H, W)
};

inline Batch stack(const std::vector<SceneSample>& samples) {
  if (samples.empty()) throw InvalidArgument("stack: empty batch");
  const std::size_t H = samples[0].h, W = samples[0].w;
  std::vector<float> img;
  std::vector<std::uint8_t> lab;
  img.reserve(samples.size() * 3 * H * W);
  lab.reserve(samples.size() * H * W);
  for (const auto& s : samples) {
    if (s.h != H || s.w != W) throw ShapeError("stack: samples differ in size");
    img.insert(img.end(), s.image.begin(), s.image.end());
    lab.insert(lab.end(), s.mask.begin(), s.mask.end());
  }
  return {ad::Tensor<float>::from({samples.size(), 3, H, W}, std::move(img)), std::move(lab)};
}

// --- TDAD files -----------------------------------------------------------------
//
// "TDAD", u32 version, u32 n, u32 H, u32 W, u32 K_total, then n*3*H*W f32
// images, then n*H*W u8 masks. Little-endian.

inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
  std::vector<SceneSample> samples;
  std::size_t k_total = 0;
};

namespace detail {

template <typename U>
void put(std::ostream& os, U v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const std::string& path) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw FormatError(path + ": truncated file");
  return v;
}

}  // namespace detail

inline void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  const std::size_t n = ds.samples.size();
  const std::size_t H = n ? ds.samples[0].h : 0, W = n ? ds.samples[0].w : 0;
  os.write("TDAD", 4);
  detail::put<std::uint32_t>(os, kDatasetVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(n));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(H));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(W));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ds.k_total));
  for (const auto& s : ds.samples) {
    if (s.h != H || s.w != W) throw ShapeError("write_dataset: samples differ in size");
    os.write(reinterpret_cast<const char*>(s.image.data()), static_cast<std::streamsize>(s.image.size() * 4));
  }
  for (const auto& s : ds.samples)
    os.write(reinterpret_cast<const char*>(s.mask.data()), static_cast<std::streamsize>(s.mask.size()));
  if (!os) throw Error("write to '" + path + "' failed");
}

inline Dataset read_dataset(const std::string& path, Domain domain = Domain::source) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TDAD", 4) != 0) throw FormatError(path + ": bad magic (expected TDAD)");
  const auto version = detail::get<std::uint32_t>(is, path);
  if (version != kDatasetVersion) {
    throw FormatError(path + ": unsupported version " + std::to_string(version));
  }
  const auto n = detail::get<std::uint32_t>(is, path);
  const auto H = detail::get<std::uint32_t>(is, path);
  const auto W = detail::get<std::uint32_t>(is, path);
  Dataset ds;
  ds.k_total = detail::get<std::uint32_t>(is, path);
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    s.h = H, s.w = W, s.domain = domain;
    s.image.resize(std::size_t{3} * H * W);
    is.read(reinterpret_cast<char*>(s.image.data()), static_cast<std::streamsize>(s.image.size() * 4));
    if (!is) throw FormatError(path + ": truncated image data");
  }
  for (auto& s : ds.samples) {
    s.mask.resize(std::size_t{H} * W);
    is.read(reinterpret_cast<char*>(s.mask.data()), static_cast<std::streamsize>(s.mask.size()));
    if (!is) throw FormatError(path + ": truncated mask data");
    for (auto m : s.mask)
      if (m != kIgnore && m >= ds.k_total) throw FormatError(path + ": mask id " + std::to_string(m) + " out of range");
  }
  return ds;
}

}  // namespace smoothda::data
