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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "smoothda/objectives.hpp"
#include "test_util.hpp"

namespace smoothda {
namespace {

using namespace smoothda::testing;
using Fn = std::function<TD(const std::vector<TD>&)>;
using Labels = std::vector<std::uint8_t>;

double check(const Fn& f, std::vector<TD> xs) { return ad::grad_check<double>(f, std::move(xs), 1e-6); }

TD uniform_probs(std::size_t b, std::size_t k, std::size_t h, std::size_t w) {
  return TD::full({b, k, h, w}, 1.0 / static_cast<double>(k));
}

TD one_hot(const Labels& lab, std::size_t b, std::size_t k, std::size_t h, std::size_t w) {
  std::vector<double> v(b * k * h * w, 0.0);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t q = 0; q < h * w; ++q) v[(n * k + lab[n * h * w + q]) * h * w + q] = 1.0;
  return TD::from({b, k, h, w}, std::move(v));
}

// --- Cross-entropy ----------------------------------------------------------

TEST(CeSource, PerfectPredictionIsZero) {
  Labels lab = {0, 2, 1, 1};
  EXPECT_LE(obj::ce_source(one_hot(lab, 1, 3, 2, 2), lab).item(), 1e-10);
}

TEST(CeSource, UniformIsLogK) {
  Labels lab = {0, 4, 1, 3};
  EXPECT_NEAR(obj::ce_source(uniform_probs(1, 5, 2, 2), lab).item(), std::log(5.0), 1e-12);
}

TEST(CeSource, MatchesHandSummationAndIgnores) {
  Rng rng(1);
  auto p = random_probs(rng, 1, 3, 2, 2);
  Labels lab = {2, 0, 255, 1};
  double s = 0;
  for (std::size_t q : {0u, 1u, 3u}) s -= std::log(p[lab[q] * 4 + q]);
  EXPECT_NEAR(obj::ce_source(p, lab).item(), s / 3.0, 1e-15);
}

TEST(CeSource, Errors) {
  auto p = uniform_probs(1, 3, 1, 2);
  EXPECT_THROW(obj::ce_source(p, Labels{255, 255}), InvalidArgument);
  EXPECT_THROW(obj::ce_source(p, Labels{0, 3}), InvalidArgument);
  EXPECT_THROW(obj::ce_source(p, Labels{0}), ShapeError);
}

TEST(PseudoLabel, OneHotAtArgmaxWithLowestTieBreak) {
  auto p = TD::from({1, 3, 1, 2}, {0.1, 0.5, 0.7, 0.5, 0.2, 0.0});
  auto y = obj::pseudo_label(p);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()),
            (std::vector<double>{0, 1, 1, 0, 0, 0}));
  EXPECT_FALSE(y.requires_grad());
}

TEST(PseudoLabel, ArgmaxPreservedOnRandomMaps) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto p = random_probs(rng, 2, 5, 3, 3);
    auto y = obj::pseudo_label(p);
    EXPECT_EQ(obj::argmax_labels(y), obj::argmax_labels(p));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t q = 0; q < 9; ++q) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += y[(n * 5 + k) * 9 + q];
        EXPECT_EQ(s, 1.0);
      }
  }
}

TEST(CeTarget, Basics) {
  Labels lab = {1, 0, 4, 2};
  auto y = one_hot(lab, 1, 5, 2, 2);
  EXPECT_LE(obj::ce_target(y, y).item(), 1e-10);
  EXPECT_NEAR(obj::ce_target(uniform_probs(1, 5, 2, 2), y).item(), std::log(5.0), 1e-12);
  auto bad = TD::full({1, 5, 2, 2}, 0.2);
  EXPECT_THROW(obj::ce_target(bad, bad), InvalidArgument);
}

TEST(CeTarget, EqualsSourceCeAtPseudoClass) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto p = random_probs(rng, 2, 4, 3, 3);
    auto y = obj::pseudo_label(random_probs(rng, 2, 4, 3, 3));
    EXPECT_EQ(obj::ce_target(p, y).item(), obj::ce_source(p, obj::argmax_labels(y)).item());
  }
}

// --- Entropy and weights ----------------------------------------------------

TEST(EntropyNorm, Contracts) {
  EXPECT_NEAR(obj::entropy_norm(uniform_probs(1, 5, 2, 2))[0], 1.0, 1e-12);
  EXPECT_LE(obj::entropy_norm(one_hot({0, 1, 2, 3}, 1, 5, 2, 2))[3], 1e-10);
  auto half = TD::from({1, 5, 1, 1}, {0.5, 0.5, 0, 0, 0});
  // the 1e-12 clamp on the three zero entries contributes ~5e-11
  EXPECT_NEAR(obj::entropy_norm(half)[0], std::log(2.0) / std::log(5.0), 1e-10);
  EXPECT_NEAR(obj::entropy_norm(half)[0], 0.4307, 1e-4);
  EXPECT_THROW(obj::entropy_norm(TD::full({1, 1, 1, 1}, 1.0)), InvalidArgument);
  Rng rng(3);
  auto e = obj::entropy_norm(random_probs(rng, 2, 5, 4, 4));
  for (double v : e.values()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(DynamicWeights, TwoPointMinMaxIsExact) {
  std::vector<double> w = {-0.2, 0.6};
  obj::minmax_normalize(std::span<double>(w));
  EXPECT_EQ(w[0], 0.0);
  EXPECT_EQ(w[1], 1.0);
}

TEST(DynamicWeights, DegenerateCasesFallBackToOnes) {
  // uniform source prediction and S = 0.5: raw w^s = 0.5 everywhere
  auto ps = uniform_probs(2, 5, 4, 4);
  // one-hot target prediction and S = 0.5: raw w^t = 0.5 everywhere
  auto pt = one_hot(Labels(32, 1), 2, 5, 4, 4);
  auto s = TD::full({2, 1, 2, 2}, 0.5);
  auto w = obj::dynamic_weights(ps, pt, s, s);
  ASSERT_EQ(w.source.shape(), (ad::Shape{2, 1, 2, 2}));
  for (double v : w.source.values()) EXPECT_EQ(v, 1.0);
  for (double v : w.target.values()) EXPECT_EQ(v, 1.0);
}

TEST(DynamicWeights, RangeGradientFreeAndOracle) {
  Rng rng(4);
  auto ps = random_probs(rng, 2, 3, 4, 4);
  auto pt = random_probs(rng, 2, 3, 4, 4);
  auto ss = random_tensor(rng, {2, 1, 2, 2}, 0.05, 0.95, true);
  auto st = random_tensor(rng, {2, 1, 2, 2}, 0.05, 0.95, true);
  ps.set_requires_grad(true);
  auto w = obj::dynamic_weights(ps, pt, ss, st);
  EXPECT_FALSE(w.source.requires_grad());
  EXPECT_FALSE(w.target.requires_grad());
  EXPECT_FALSE(w.source.node()->backward_fn);
  // oracle: pool entropy by hand, subtract, min-max
  auto es = obj::entropy_norm(ps);
  std::vector<double> raw(8);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) {
        double m = 0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) m += es[b * 16 + (2 * y + dy) * 4 + 2 * x + dx];
        raw[b * 4 + y * 2 + x] = m / 4.0 - ss[b * 4 + y * 2 + x];
      }
  const double mn = *std::min_element(raw.begin(), raw.end());
  const double mx = *std::max_element(raw.begin(), raw.end());
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(w.source[i], (raw[i] - mn) / (mx - mn), 1e-12);
    EXPECT_TRUE(w.target[i] >= 0.0 && w.target[i] <= 1.0);
  }
}

// --- Similarity ---------------------------------------------------------------

TEST(SimLoss, Values) {
  const double eps = 1e-9;
  EXPECT_NEAR(obj::sim_loss(TD::full({1, 1, 2, 2}, 1 - eps), TD::full({1, 1, 2, 2}, eps)).item(), 0.0, 1e-8);
  EXPECT_NEAR(obj::sim_loss(TD::full({1, 1, 2, 2}, 0.5), TD::full({1, 1, 2, 2}, 0.5)).item(), 2 * std::log(2.0),
              1e-12);
  Rng rng(5);
  auto a = random_tensor(rng, {2, 1, 2, 2}, 0.01, 0.99);
  auto b = random_tensor(rng, {2, 1, 2, 2}, 0.01, 0.99);
  double s = 0;
  for (std::size_t i = 0; i < 8; ++i) s += -std::log(a[i]) / 8.0 - std::log(1.0 - b[i]) / 8.0;
  EXPECT_NEAR(obj::sim_loss(a, b).item(), s, 1e-12);
}

// --- Adversarial ----------------------------------------------------------------

TEST(Adversarial, HandSummationBinary) {
  Rng rng(6);
  auto ds = random_tensor(rng, {1, 1, 2, 2}, 0.01, 0.99);
  auto dt = random_tensor(rng, {1, 1, 2, 2}, 0.01, 0.99);
  auto ws = random_tensor(rng, {1, 1, 2, 2}, 0, 1);
  auto wt = random_tensor(rng, {1, 1, 2, 2}, 0, 1);
  double bin = 0, wbin = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    bin += -std::log(ds[i]) / 4 - std::log(1 - dt[i]) / 4;
    wbin += -ws[i] * std::log(ds[i]) / 4 - wt[i] * std::log(1 - dt[i]) / 4;
  }
  EXPECT_NEAR(obj::adv_bin(ds, dt).item(), bin, 1e-12);
  EXPECT_NEAR(obj::adv_wbin(ds, dt, ws, wt).item(), wbin, 1e-12);
  const double eps = 1e-9;
  EXPECT_NEAR(obj::adv_bin(TD::full({1, 1, 2, 2}, 1 - eps), TD::full({1, 1, 2, 2}, eps)).item(), 0.0, 1e-8);
}

TEST(Adversarial, HandSummationClassLevel) {
  Rng rng(7);
  auto ps = random_probs(rng, 1, 2, 2, 2);
  auto pt = random_probs(rng, 1, 2, 2, 2);
  auto ds = random_tensor(rng, {1, 2, 2, 2}, 0.01, 0.99);
  auto dt = random_tensor(rng, {1, 2, 2, 2}, 0.01, 0.99);
  auto ws = random_tensor(rng, {1, 1, 2, 2}, 0, 1);
  auto wt = random_tensor(rng, {1, 1, 2, 2}, 0, 1);
  double cls = 0, wcls = 0;
  for (std::size_t q = 0; q < 4; ++q) {
    double a = 0, b = 0;
    for (std::size_t k = 0; k < 2; ++k) {
      a += ps[k * 4 + q] * std::log(ds[k * 4 + q]);
      b += pt[k * 4 + q] * std::log(1 - dt[k * 4 + q]);
    }
    cls += -(a + b) / 4;
    wcls += -(ws[q] * a + wt[q] * b) / 4;
  }
  EXPECT_NEAR(obj::adv_cls(ps, pt, ds, dt).item(), cls, 1e-12);
  EXPECT_NEAR(obj::adv_wcls(ps, pt, ds, dt, ws, wt).item(), wcls, 1e-12);
}

TEST(Adversarial, ReductionChain) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto ps = random_probs(rng, 2, 3, 8, 8);  // pooled 2x to D resolution
    auto pt = random_probs(rng, 2, 3, 8, 8);
    auto ds = random_tensor(rng, {2, 3, 4, 4}, 0.01, 0.99);
    auto dt = random_tensor(rng, {2, 3, 4, 4}, 0.01, 0.99);
    auto ones = TD::full({2, 1, 4, 4}, 1.0);
    EXPECT_NEAR(obj::adv_wcls(ps, pt, ds, dt, ones, ones).item(), obj::adv_cls(ps, pt, ds, dt).item(), 1e-12);
    auto bs = random_tensor(rng, {2, 1, 4, 4}, 0.01, 0.99);
    auto bt = random_tensor(rng, {2, 1, 4, 4}, 0.01, 0.99);
    EXPECT_NEAR(obj::adv_wbin(bs, bt, ones, ones).item(), obj::adv_bin(bs, bt).item(), 1e-12);
    auto p1 = TD::full({2, 1, 4, 4}, 1.0);
    EXPECT_NEAR(obj::adv_cls(p1, p1, bs, bt).item(), obj::adv_bin(bs, bt).item(), 1e-12);
  }
}

TEST(Adversarial, ResolutionAndChannelErrors) {
  auto d = TD::full({1, 1, 2, 2}, 0.5);
  auto w = TD::full({1, 1, 3, 3}, 1.0);
  EXPECT_THROW(obj::adv_wbin(d, d, w, w), ShapeError);
  auto d2 = TD::full({1, 2, 2, 2}, 0.5);
  EXPECT_THROW(obj::adv_bin(d2, d2), ShapeError);
  auto p3 = uniform_probs(1, 3, 2, 2);
  EXPECT_THROW(obj::adv_cls(p3, p3, d2, d2), ShapeError);
}

TEST(Generator, HalfEverywhereGivesLogTwoPerBranch) {
  auto d = TD::full({1, 1, 2, 2}, 0.5);
  obj::GeneratorBranch<double> src{&d}, tgt{&d}, none{};
  EXPECT_NEAR(obj::generator_adv_loss(src, tgt).item(), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(obj::generator_adv_loss(src, none).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(obj::generator_adv_loss(src, tgt, true).item(), -2 * std::log(2.0), 1e-12);
  EXPECT_THROW(obj::generator_adv_loss(none, none), InvalidArgument);
}

TEST(Generator, SaturatingFormIsNegatedDiscriminatorLoss) {
  Rng rng(8);
  auto ds = random_tensor(rng, {1, 1, 2, 2}, 0.01, 0.99);
  auto dt = random_tensor(rng, {1, 1, 2, 2}, 0.01, 0.99);
  auto ws = random_tensor(rng, {1, 1, 2, 2}, 0, 1);
  auto wt = random_tensor(rng, {1, 1, 2, 2}, 0, 1);
  obj::GeneratorBranch<double> s{&ds, &ws}, t{&dt, &wt};
  EXPECT_NEAR(obj::generator_adv_loss(s, t, true).item(), -obj::adv_wbin(ds, dt, ws, wt).item(), 1e-12);
}

// --- Gradients ------------------------------------------------------------------

TEST(LossGradients, EveryLossOverTwentySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto ps = random_probs(rng, 2, 3, 4, 4);
    auto pt = random_probs(rng, 2, 3, 4, 4);
    auto ds = random_tensor(rng, {2, 3, 2, 2}, 0.05, 0.95);
    auto dt = random_tensor(rng, {2, 3, 2, 2}, 0.05, 0.95);
    auto bs = random_tensor(rng, {2, 1, 2, 2}, 0.05, 0.95);
    auto bt = random_tensor(rng, {2, 1, 2, 2}, 0.05, 0.95);
    auto ws = random_tensor(rng, {2, 1, 2, 2}, 0.0, 1.0);
    auto wt = random_tensor(rng, {2, 1, 2, 2}, 0.0, 1.0);
    Labels lab(32);
    for (auto& l : lab) l = static_cast<std::uint8_t>(rng.below(3));
    lab[5] = 255;
    auto y = obj::pseudo_label(random_probs(rng, 2, 3, 4, 4));

    EXPECT_LT(check([&](const std::vector<TD>& x) { return obj::ce_source(x[0], lab); }, {ps}), 1e-4);
    EXPECT_LT(check([&](const std::vector<TD>& x) { return obj::ce_target(x[0], y); }, {pt}), 1e-4);
    EXPECT_LT(check([&](const std::vector<TD>& x) { return obj::sim_loss(x[0], x[1]); }, {bs, bt}), 1e-4);
    EXPECT_LT(check([&](const std::vector<TD>& x) { return obj::adv_bin(x[0], x[1]); }, {bs, bt}), 1e-4);
    EXPECT_LT(check([&](const std::vector<TD>& x) { return obj::adv_wbin(x[0], x[1], ws, wt); }, {bs, bt}), 1e-4);
    EXPECT_LT(check([&](const std::vector<TD>& x) { return obj::adv_cls(ps, pt, x[0], x[1]); }, {ds, dt}), 1e-4);
    EXPECT_LT(check([&](const std::vector<TD>& x) { return obj::adv_wcls(ps, pt, x[0], x[1], ws, wt); }, {ds, dt}),
              1e-4);
    EXPECT_LT(check(
                  [&](const std::vector<TD>& x) {
                    return obj::generator_adv_loss<double>({&x[0], &ws, &ps}, {&x[1], &wt, &pt});
                  },
                  {ds, dt}),
              1e-4);
  }
}

TEST(LossGradients, ChannelWeightsCarryNoGradient) {
  Rng rng(9);
  auto ps = random_probs(rng, 1, 2, 2, 2);
  auto pt = random_probs(rng, 1, 2, 2, 2);
  ps.set_requires_grad(true);
  pt.set_requires_grad(true);
  auto ds = random_tensor(rng, {1, 2, 2, 2}, 0.1, 0.9, true);
  auto dt = random_tensor(rng, {1, 2, 2, 2}, 0.1, 0.9, true);
  ad::backward(obj::adv_cls(ps, pt, ds, dt));
  EXPECT_TRUE(ds.has_grad());
  EXPECT_FALSE(ps.has_grad());
  EXPECT_FALSE(pt.has_grad());
}

}  // namespace
}  // namespace smoothda
