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

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "smoothda/diagnostics.hpp"
#include "smoothda/svg.hpp"
#include "test_util.hpp"

namespace smoothda {
namespace {

using namespace smoothda::testing;
using Cplx = std::complex<double>;

std::vector<Cplx> naive_dft(const std::vector<double>& x) {
  const std::size_t T = x.size();
  std::vector<Cplx> X(T);
  for (std::size_t f = 0; f < T; ++f)
    for (std::size_t t = 0; t < T; ++t)
      X[f] += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(f * t) / static_cast<double>(T));
  return X;
}

// --- Change series ------------------------------------------------------------

TEST(ChangeSeries, ConstantPredictionsGiveZeros) {
  diag::DynamicsTrace tr("const");
  auto p = TD::full({2, 3, 2, 2}, 1.0 / 3.0);
  for (std::uint64_t i = 0; i < 5; ++i) tr.track(i, p);
  for (double c : diag::change_series(tr)) EXPECT_EQ(c, 0.0);
  EXPECT_EQ(diag::change_series(tr).size(), 4u);
}

TEST(ChangeSeries, SingleEntryShift) {
  diag::DynamicsTrace tr;
  auto a = TD::full({1, 2, 1, 1}, 0.25);
  auto b = TD::from({1, 2, 1, 1}, {0.75, 0.25});
  tr.track(0, a);
  tr.track(1, b);
  EXPECT_EQ(diag::change_series(tr), (std::vector<double>{0.5}));
}

TEST(ChangeSeries, MatchesNestedLoopOracle) {
  Rng rng(1);
  const std::size_t N = 3, K = 4, H = 2, W = 3;
  diag::DynamicsTrace tr("rand", 2);
  std::vector<TD> snaps;
  for (std::uint64_t i = 0; i < 6; ++i) {
    snaps.push_back(random_probs(rng, N, K, H, W));
    tr.track(10 * i, snaps.back());
  }
  const auto c = diag::change_series(tr);
  ASSERT_EQ(c.size(), 5u);
  for (std::size_t i = 0; i + 1 < snaps.size(); ++i) {
    double s = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t j = ((n * K + k) * H + y) * W + x;
            s += std::abs(snaps[i + 1][j] - snaps[i][j]);
          }
    EXPECT_NEAR(c[i], s / N, 1e-6);
  }
  // ring buffer keeps only the last two snapshots
  EXPECT_EQ(tr.snapshots().size(), 2u);
  EXPECT_EQ(tr.iterations().back(), 50u);
}

TEST(ChangeSeries, TriangleInequality) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_probs(rng, 2, 3, 2, 2), b = random_probs(rng, 2, 3, 2, 2), c = random_probs(rng, 2, 3, 2, 2);
    diag::DynamicsTrace ab, bc, ac;
    ab.track(0, a), ab.track(1, b);
    bc.track(0, b), bc.track(1, c);
    ac.track(0, a), ac.track(1, c);
    EXPECT_LE(ac.changes()[0], ab.changes()[0] + bc.changes()[0] + 1e-9);
  }
}

TEST(ChangeSeries, Errors) {
  diag::DynamicsTrace tr("x");
  EXPECT_THROW(tr.track(0, TD::full({2, 3}, 0.5)), ShapeError);
  tr.track(5, TD::full({1, 2, 1, 1}, 0.5));
  EXPECT_THROW(diag::change_series(tr), InvalidArgument);
  EXPECT_THROW(tr.track(5, TD::full({1, 2, 1, 1}, 0.5)), InvalidArgument);
  EXPECT_THROW(tr.track(6, TD::full({1, 3, 1, 1}, 0.5)), ShapeError);
}

TEST(ChangeSeries, ChannelMeansAndCsv) {
  diag::DynamicsTrace tr;
  tr.track(1, TD::from({2, 2, 1, 1}, {0.2, 0.8, 0.4, 0.6}));
  tr.track(3, TD::from({2, 2, 1, 1}, {0.6, 0.4, 0.6, 0.4}));
  auto cs = diag::channel_series(tr);
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_NEAR(cs[0][0], 0.3, 1e-7);
  EXPECT_NEAR(cs[1][1], 0.4, 1e-7);
  std::ostringstream os;
  diag::write_change_csv(os, tr);
  EXPECT_EQ(os.str().rfind("iter,change\n3,", 0), 0u);
}

// --- Spectrum ---------------------------------------------------------------------

TEST(Spectrum, ConstantIsDcOnly) {
  const auto s = diag::dft(std::vector<double>(16, 0.3));
  for (std::size_t i = 0; i < 16; ++i) {
    if (s.frequencies[i] == 0) EXPECT_NEAR(s.amplitude[0][i], 16 * 0.3, 1e-12);
    else EXPECT_NEAR(s.amplitude[0][i], 0.0, 1e-12);
  }
  EXPECT_EQ(s.frequencies.front(), -8);
  EXPECT_EQ(s.frequencies.back(), 7);
  EXPECT_EQ(diag::centered_bins(5), (std::vector<int>{-2, -1, 0, 1, 2}));
}

TEST(Spectrum, AlternatingIsNyquistOnly) {
  std::vector<double> x(20);
  for (std::size_t t = 0; t < 20; ++t) x[t] = t % 2 ? -1.0 : 1.0;
  const auto s = diag::dft(x);
  for (std::size_t i = 0; i < 20; ++i) {
    if (s.frequencies[i] == -10) EXPECT_NEAR(s.amplitude[0][i], 20.0, 1e-12);
    else EXPECT_NEAR(s.amplitude[0][i], 0.0, 1e-12);
  }
  EXPECT_NEAR(diag::high_band_mean(s, 5), 20.0 / 11.0, 1e-12);
}

TEST(Spectrum, MatchesNaiveDftParsevalAndSymmetry) {
  Rng rng(3);
  for (std::size_t T : {2u, 7u, 20u, 33u}) {
    std::vector<double> x(T);
    for (auto& v : x) v = rng.uniform(-1, 1);
    const auto X = diag::dft_complex(x);
    const auto R = naive_dft(x);
    double e_t = 0, e_f = 0;
    for (std::size_t i = 0; i < T; ++i) {
      EXPECT_NEAR(std::abs(X[i] - R[i]), 0.0, 1e-9);
      e_t += x[i] * x[i];
      e_f += std::norm(X[i]);
    }
    EXPECT_NEAR(e_f / static_cast<double>(T), e_t, 1e-9);
    const auto s = diag::dft(x);
    for (std::size_t i = 0; i < T; ++i) {
      const int f = s.frequencies[i];
      for (std::size_t j = 0; j < T; ++j)
        if (s.frequencies[j] == -f) EXPECT_NEAR(s.amplitude[0][i], s.amplitude[0][j], 1e-9);
    }
  }
  EXPECT_THROW(diag::dft(std::vector<double>{1.0}), InvalidArgument);
  EXPECT_THROW(diag::dft(std::vector<std::vector<double>>{{1, 2}, {1, 2, 3}}), ShapeError);
}

TEST(Spectrum, CsvLayout) {
  std::ostringstream os;
  diag::write_spectrum_csv(os, diag::dft(std::vector<std::vector<double>>{{1, 0}, {0, 1}}));
  EXPECT_EQ(os.str(), "freq,category,amplitude\n-1,0,1\n0,0,1\n-1,1,1\n0,1,1\n");
}

// --- Toy process ------------------------------------------------------------------

TEST(Toy, ZeroSigmaHasNoChange) {
  const auto r = diag::toy_run(0.0, 5, 20, 1, 5);
  for (double c : r.change) EXPECT_EQ(c, 0.0);
  EXPECT_NEAR(r.high_band, 0.0, 1e-12);
}

TEST(Toy, OrderingHoldsOnTwentySeedsQuickly) {
  diag::ToyConfig cfg;
  for (std::uint64_t s = 0; s < 20; ++s) cfg.seeds.push_back(s);
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = diag::toy_gaussian_experiment(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 10.0);
  EXPECT_GE(rep.ordered_fraction_change, 0.95);
  EXPECT_GE(rep.ordered_fraction_high_band, 0.95);
  ASSERT_EQ(rep.per_sigma.size(), 3u);
  EXPECT_LT(rep.per_sigma[0].mean_change, rep.per_sigma[2].mean_change);
  // deterministic
  EXPECT_EQ(diag::toy_gaussian_experiment(cfg).per_sigma[1].mean_high_band, rep.per_sigma[1].mean_high_band);
}

TEST(Svg, RendersSeries) {
  svg::Chart c{"a<b", "iter", "change", {{"s1", {0, 1, 2}, {1, 4, 2}}, {"s2", {0, 1}, {0, NAN}}}};
  const auto s = svg::render({c, c}, 2);
  EXPECT_EQ(s.rfind("<svg", 0), 0u);
  EXPECT_NE(s.find("a&lt;b"), std::string::npos);
  EXPECT_NE(s.find("<polyline"), std::string::npos);
  EXPECT_NE(s.find("</svg>"), std::string::npos);
}

}  // namespace
}  // namespace smoothda
