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

#include "smoothda/momentum.hpp"
#include "test_util.hpp"

namespace smoothda {
namespace {

using namespace smoothda::testing;
using Store = ad::ParameterStore<double>;

Store random_store(std::uint64_t seed) {
  Rng rng(seed);
  Store s(ad::NetworkKind::extractor);
  s.add("a.weight", random_tensor(rng, {3, 4}, -1, 1, true));
  s.add("a.bias", random_tensor(rng, {4}, -1, 1, true));
  s.add("b", random_tensor(rng, {2, 2, 2}, -1, 1, true));
  return s;
}

void fill(Store& s, double c) {
  for (auto& e : s.entries())
    for (auto& v : e.second.mutable_values()) v = c;
}

double max_abs_diff(const Store& a, const Store& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a.entries()[i].second.values();
    const auto y = b.entries()[i].second.values();
    for (std::size_t j = 0; j < x.size(); ++j) d = std::max(d, std::abs(x[j] - y[j]));
  }
  return d;
}

TEST(Momentum, InitCopiesExactlyWithoutGrad) {
  auto s = random_store(1);
  auto p = init_momentum(s, 0.99);
  EXPECT_TRUE(p.target.values_equal(s));
  for (const auto& e : p.target.entries()) EXPECT_FALSE(e.second.requires_grad());
  EXPECT_TRUE(p.source.entries()[0].second.same_storage(s.entries()[0].second));
  EXPECT_FALSE(p.target.entries()[0].second.same_storage(s.entries()[0].second));
  auto q = init_momentum(s, 0.5);
  EXPECT_TRUE(q.target.values_equal(p.target));
}

TEST(Momentum, FixedPointWhenSourceEqualsTarget) {
  auto s = random_store(2);
  for (double m : {0.0, 0.5, 0.999}) {
    auto p = init_momentum(s, m);
    ema_update(p);
    EXPECT_TRUE(p.target.values_equal(s)) << m;
  }
}

TEST(Momentum, ZeroCoefficientCopies) {
  auto s = random_store(3);
  auto p = init_momentum(s, 0.0);
  fill(p.target, 7.0);
  ema_update(p);
  EXPECT_TRUE(p.target.values_equal(s));
}

TEST(Momentum, NearOneCoefficientFreezes) {
  auto s = random_store(4);
  auto p = init_momentum(s, 1.0 - 1e-12);
  fill(p.target, 0.25);
  ema_update(p);
  for (const auto& e : p.target.entries())
    for (double v : e.second.values()) EXPECT_NEAR(v, 0.25, 1e-11);
}

// Closed form of the geometric series: t_k = (1 - m^k) c from t_0 = 0.
TEST(Momentum, ConstantSourceClosedForm) {
  const double c = 1.7;
  for (double m : {0.0, 0.9, 0.99, 0.999, 0.9999}) {
    auto s = random_store(5);
    fill(s, c);
    auto p = init_momentum(s, m);
    fill(p.target, 0.0);
    for (int k = 0; k < 100; ++k) ema_update(p);
    const double expect = (1.0 - std::pow(m, 100)) * c;
    for (const auto& e : p.target.entries())
      for (double v : e.second.values()) EXPECT_NEAR(v, expect, 1e-10) << "m=" << m;
  }
}

TEST(Momentum, DistanceNonIncreasingWithFrozenSource) {
  auto s = random_store(6);
  auto p = init_momentum(s, 0.9);
  auto other = random_store(7);
  p.target.copy_values_from(other);
  double prev = max_abs_diff(p.target, s);
  for (int k = 0; k < 50; ++k) {
    ema_update(p);
    const double d = max_abs_diff(p.target, s);
    EXPECT_LE(d, prev);
    prev = d;
  }
}

TEST(Momentum, MisalignedStoresAreAnError) {
  auto s = random_store(8);
  auto p = init_momentum(s, 0.9);
  Rng rng(0);
  p.source.add("extra", random_tensor(rng, {2}));
  EXPECT_THROW(ema_update(p), ShapeError);
  EXPECT_THROW(init_momentum(s, 1.0), InvalidArgument);
  EXPECT_THROW((SmoothingConfig{true, true, 1.0}.validate()), ConfigError);
}

TEST(Momentum, TargetNeverReceivesGradient) {
  auto s = random_store(9);
  auto p = init_momentum(s, 0.9);
  auto loss = ad::add(ad::sum(ad::mul(s.at("b"), p.target.at("b"))), ad::sum(p.target.at("a.bias")));
  ad::backward(loss);
  EXPECT_TRUE(s.at("b").has_grad());
  for (const auto& e : p.target.entries()) EXPECT_FALSE(e.second.has_grad());
}

TEST(TeacherBranches, Routing) {
  SegmentationParams<double> live{random_store(10), random_store(11)};
  {
    SmoothingConfig cfg;
    auto b = teacher_branches<double>(cfg, live, nullptr);
    EXPECT_EQ(b.pl_extractor, &live.extractor);
    EXPECT_EQ(b.pl_classifier, &live.classifier);
    EXPECT_EQ(b.fa_extractor, &live.extractor);
    EXPECT_TRUE(b.pl_live && b.fa_live);
    EXPECT_TRUE(init_segmentation_momentum(cfg, live).empty());
  }
  {
    SmoothingConfig cfg{true, false, 0.99};
    auto mp = init_segmentation_momentum(cfg, live);
    ASSERT_TRUE(mp.extractor && mp.classifier);
    auto b = teacher_branches(cfg, live, &mp);
    EXPECT_EQ(b.pl_extractor, &mp.extractor->target);
    EXPECT_EQ(b.pl_classifier, &mp.classifier->target);
    EXPECT_EQ(b.fa_extractor, &live.extractor);
    EXPECT_FALSE(b.pl_live);
    EXPECT_TRUE(b.fa_live);
  }
  {
    SmoothingConfig cfg{false, true, 0.99};
    auto mp = init_segmentation_momentum(cfg, live);
    EXPECT_TRUE(mp.extractor && !mp.classifier);
    auto b = teacher_branches(cfg, live, &mp);
    EXPECT_EQ(b.pl_extractor, &live.extractor);
    EXPECT_EQ(b.fa_extractor, &mp.extractor->target);
  }
  {
    SmoothingConfig cfg{true, true, 0.99};
    EXPECT_THROW(teacher_branches<double>(cfg, live, nullptr), InvalidArgument);
  }
}

}  // namespace
}  // namespace smoothda
