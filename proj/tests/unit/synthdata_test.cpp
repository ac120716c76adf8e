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

#include <filesystem>
#include <fstream>
#include <set>

#include "smoothda/synthdata.hpp"

namespace smoothda {
namespace {

using data::Domain;
using data::DomainSpec;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("smoothda_" + name)).string();
}

TEST(Generate, ZeroShiftMakesDomainsIdentical) {
  DomainSpec spec;
  spec.shift = {0.0, 0.0, 0.0, 0, 0.0};
  auto s = data::generate(spec, Domain::source, 5, 42);
  auto t = data::generate(spec, Domain::target, 5, 42);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(s[i].image, t[i].image);
    EXPECT_EQ(s[i].mask, t[i].mask);
  }
  DomainSpec shifted;
  auto u = data::generate(shifted, Domain::target, 1, 42);
  EXPECT_NE(u[0].image, s[0].image);
  EXPECT_EQ(u[0].mask, s[0].mask);
}

TEST(Generate, MaskIdsAndImageRange) {
  DomainSpec spec;
  spec.include_source_private = spec.include_target_private = true;
  for (auto d : {Domain::source, Domain::target}) {
    auto xs = data::generate(spec, d, 20, 7);
    for (const auto& s : xs) {
      for (auto m : s.mask) ASSERT_LT(m, spec.num_total());
      if (d == Domain::source)
        for (auto m : s.mask) ASSERT_NE(m, spec.target_private_id());
      else
        for (auto m : s.mask) ASSERT_NE(m, spec.source_private_id());
      for (float v : s.image) ASSERT_TRUE(v >= 0.f && v <= 1.f);
    }
  }
  auto hist_s = data::class_histogram(data::generate(spec, Domain::source, 50, 1), spec.num_total());
  auto hist_t = data::class_histogram(data::generate(spec, Domain::target, 50, 1), spec.num_total());
  EXPECT_GT(hist_s[spec.source_private_id()], 0u);
  EXPECT_EQ(hist_s[spec.target_private_id()], 0u);
  EXPECT_GT(hist_t[spec.target_private_id()], 0u);
  EXPECT_EQ(hist_t[spec.source_private_id()], 0u);
}

TEST(Generate, DeterministicPerSeedAndWorkerCount) {
  DomainSpec spec;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto a = data::generate(spec, Domain::target, 3, seed);
    auto b = data::generate(spec, Domain::target, 3, seed, 3);
    auto c = data::generate(spec, Domain::target, 3, seed + 100);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_EQ(a[i].image, b[i].image);
      EXPECT_EQ(a[i].mask, b[i].mask);
      EXPECT_NE(a[i].image, c[i].image);
    }
  }
}

TEST(Generate, ClassFrequencyRegression) {
  DomainSpec spec;
  auto h1 = data::class_histogram(data::generate(spec, Domain::source, 30, 11), 5);
  auto h2 = data::class_histogram(data::generate(spec, Domain::source, 30, 11), 5);
  EXPECT_EQ(h1, h2);
  std::size_t total = 0;
  for (auto c : h1) total += c;
  EXPECT_EQ(total, 30u * 64 * 64);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_GT(h1[k], 0u) << "class " << k;
  EXPECT_GT(h1[0], total / 2);  // background dominates
}

TEST(Generate, CrowdedScenesEmitFewerObjects) {
  DomainSpec spec;
  spec.image_h = spec.image_w = 16;
  spec.min_objects = spec.max_objects = 40;
  EXPECT_NO_THROW(data::generate(spec, Domain::source, 5, 3));
  spec.num_common = 1;
  EXPECT_THROW(data::generate(spec, Domain::source, 1, 3), ConfigError);
}

TEST(Augment, DoubleFlipIsIdentity) {
  auto s = data::generate(DomainSpec{}, Domain::source, 1, 5)[0];
  data::Warp flip{true, 1.0, 0, 0};
  data::Jitter none;
  auto twice = data::apply_augment(data::apply_augment(s, flip, none), flip, none);
  EXPECT_EQ(twice.image, s.image);
  EXPECT_EQ(twice.mask, s.mask);
  auto once = data::apply_augment(s, flip, none);
  EXPECT_NE(once.mask, s.mask);
}

TEST(Augment, UnitScaleNoFlipNoJitterIsIdentity) {
  auto s = data::generate(DomainSpec{}, Domain::target, 1, 6)[0];
  auto a = data::apply_augment(s, data::Warp{}, data::Jitter{});
  EXPECT_EQ(a.image, s.image);
  EXPECT_EQ(a.mask, s.mask);
  data::AugmentConfig off;
  off.enabled = false;
  Rng rng(0);
  EXPECT_EQ(data::augment(s, off, rng).image, s.image);
}

TEST(Augment, MaskKeepsOriginalIdsPlusIgnore) {
  DomainSpec spec;
  data::AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = data::generate(spec, Domain::source, 1, seed)[0];
    std::set<std::uint8_t> ids(s.mask.begin(), s.mask.end());
    ids.insert(data::kIgnore);
    Rng rng(seed);
    auto a = data::augment(s, cfg, rng);
    for (auto m : a.mask) ASSERT_TRUE(ids.count(m)) << int(m);
    for (float v : a.image) ASSERT_TRUE(v >= 0.f && v <= 1.f);
  }
}

TEST(Augment, ImageAndMaskStayRegistered) {
  auto s = data::generate(DomainSpec{}, Domain::source, 1, 9)[0];
  data::AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto w = data::draw_warp(cfg, s.h, s.w, rng);
    // the mask rendered as an image goes through the same geometric path
    std::vector<float> as_image(s.mask.begin(), s.mask.end());
    auto warped = data::warp_planes(as_image, 1, s.h, s.w, w, data::Interp::nearest,
                                    static_cast<float>(data::kIgnore));
    auto mask = data::apply_augment(s, w, data::draw_jitter(cfg, rng)).mask;
    for (std::size_t q = 0; q < mask.size(); ++q) ASSERT_EQ(static_cast<float>(mask[q]), warped[q]);
    // padding is ignore in the mask and zero in the image
    auto img = data::warp_planes(s.image, 3, s.h, s.w, w, data::Interp::bilinear, 0.f);
    for (std::size_t q = 0; q < mask.size(); ++q)
      if (mask[q] == data::kIgnore) ASSERT_EQ(img[q], 0.f);
  }
}

TEST(Augment, JitterLeavesMaskUntouched) {
  auto s = data::generate(DomainSpec{}, Domain::source, 1, 10)[0];
  data::Jitter j{1.2, 0.8, 1.1, 0.05};
  auto a = data::apply_augment(s, data::Warp{}, j);
  EXPECT_EQ(a.mask, s.mask);
  EXPECT_NE(a.image, s.image);
}

TEST(DatasetFile, RoundTripAndErrors) {
  DomainSpec spec;
  data::Dataset ds{data::generate(spec, Domain::target, 4, 3), spec.num_total()};
  const auto path = temp_path("roundtrip.tdad");
  data::write_dataset(path, ds);
  auto back = data::read_dataset(path, Domain::target);
  ASSERT_EQ(back.samples.size(), 4u);
  EXPECT_EQ(back.k_total, 5u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back.samples[i].image, ds.samples[i].image);
    EXPECT_EQ(back.samples[i].mask, ds.samples[i].mask);
  }
  EXPECT_EQ(std::filesystem::file_size(path), 24u + 4u * (3 * 64 * 64 * 4 + 64 * 64));

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XDAD", 4);
  }
  try {
    data::read_dataset(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
  }
  data::write_dataset(path, ds);
  std::filesystem::resize_file(path, 100);
  EXPECT_THROW(data::read_dataset(path), FormatError);
  std::filesystem::remove(path);
}

TEST(Batching, StackShapes) {
  auto xs = data::generate(DomainSpec{}, Domain::source, 3, 2);
  auto b = data::stack(xs);
  EXPECT_EQ(b.images.shape(), (ad::Shape{3, 3, 64, 64}));
  EXPECT_EQ(b.labels.size(), 3u * 64 * 64);
  EXPECT_EQ(b.images[64 * 64 * 3], xs[1].image[0]);
}

}  // namespace
}  // namespace smoothda
