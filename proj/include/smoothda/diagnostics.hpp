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

// Learning-dynamics instrumentation: prediction snapshots on a fixed probe
// set, the L1 change-of-prediction series and its spectrum.

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstdint>
#include <deque>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include "smoothda/autodiff/tensor.hpp"
#include "smoothda/error.hpp"
#include "smoothda/rng.hpp"

namespace smoothda::diag {

/// Per-iteration snapshots of a (N_probe, K, h, w) prediction tensor.
///
/// The change series and per-category means are accumulated as snapshots
/// arrive, so only the last `capacity` snapshots (0 = all) need to be kept.
class DynamicsTrace {
 public:
  explicit DynamicsTrace(std::string tag = "", std::size_t capacity = 0, std::uint64_t probe_seed = 0)
      : tag_(std::move(tag)), capacity_(capacity), probe_seed_(probe_seed) {}

  const std::string& tag() const { return tag_; }
  std::uint64_t probe_seed() const { return probe_seed_; }
  const ad::Shape& shape() const { return shape_; }
  std::size_t count() const { return iterations_.size(); }
  const std::vector<std::uint64_t>& iterations() const { return iterations_; }

  /// Stored snapshots (the last `capacity` ones in ring-buffer mode).
  const std::deque<std::vector<float>>& snapshots() const { return snapshots_; }

  /// L1 change between consecutive tracked snapshots: element i is
  /// (1/N_probe) sum |s_{i+1} - s_i| over images, positions and channels.
  const std::vector<double>& changes() const { return changes_; }

  /// Mean prediction per channel over probe images and positions, one row
  /// per tracked iteration.
  const std::vector<std::vector<double>>& channel_means() const { return channel_means_; }

  template <typename T>
  void track(std::uint64_t iteration, const ad::Tensor<T>& pred) {
    if (pred.rank() != 4) throw ShapeError("track: expected (N, K, h, w), got " + ad::to_string(pred.shape()));
    if (iterations_.empty()) {
      shape_ = pred.shape();
    } else {
      if (pred.shape() != shape_) {
        throw ShapeError("track '" + tag_ + "': snapshot shape " + ad::to_string(pred.shape()) +
                         " differs from " + ad::to_string(shape_));
      }
      if (iteration <= iterations_.back()) {
        throw InvalidArgument("track '" + tag_ + "': iteration " + std::to_string(iteration) +
                              " is not after " + std::to_string(iterations_.back()));
      }
    }
    std::vector<float> snap(pred.size());
    const auto v = pred.values();
    for (std::size_t i = 0; i < snap.size(); ++i) snap[i] = static_cast<float>(v[i]);

    const std::size_t N = shape_[0], K = shape_[1], HW = shape_[2] * shape_[3];
    std::vector<double> means(K, 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t q = 0; q < HW; ++q) means[k] += snap[(n * K + k) * HW + q];
    for (auto& m : means) m /= static_cast<double>(N * HW);
    channel_means_.push_back(std::move(means));

    if (!snapshots_.empty()) changes_.push_back(l1_change(snapshots_.back(), snap, N));
    iterations_.push_back(iteration);
    snapshots_.push_back(std::move(snap));
    if (capacity_ && snapshots_.size() > capacity_) snapshots_.pop_front();
  }

  /// Rebuilds a trace from saved history so tracking can continue after a
  /// restart. `last` is the newest snapshot.
  void restore(std::vector<std::uint64_t> iterations, std::vector<double> changes,
               std::vector<std::vector<double>> channel_means, ad::Shape shape, std::vector<float> last) {
    const std::size_t n = iterations.size();
    if (n == 0) {
      *this = DynamicsTrace(tag_, capacity_, probe_seed_);
      return;
    }
    if (changes.size() + 1 != n || channel_means.size() != n)
      throw InvalidArgument("restore '" + tag_ + "': history lengths do not agree");
    if (last.size() != ad::numel(shape))
      throw ShapeError("restore '" + tag_ + "': snapshot size does not match " + ad::to_string(shape));
    iterations_ = std::move(iterations);
    changes_ = std::move(changes);
    channel_means_ = std::move(channel_means);
    shape_ = std::move(shape);
    snapshots_.clear();
    snapshots_.push_back(std::move(last));
  }

  static double l1_change(const std::vector<float>& a, const std::vector<float>& b, std::size_t n_probe) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(b[i]) - static_cast<double>(a[i]));
    return s / static_cast<double>(n_probe);
  }

 private:
  std::string tag_;
  std::size_t capacity_;
  std::uint64_t probe_seed_;
  ad::Shape shape_;
  std::vector<std::uint64_t> iterations_;
  std::deque<std::vector<float>> snapshots_;
  std::vector<double> changes_;
  std::vector<std::vector<double>> channel_means_;
};

inline std::vector<double> change_series(const DynamicsTrace& t) {
  if (t.count() < 2) throw InvalidArgument("change_series: trace '" + t.tag() + "' has fewer than 2 snapshots");
  return t.changes();
}

/// Mean of the last `n` entries (all when fewer).
inline double tail_mean(const std::vector<double>& v, std::size_t n) {
  if (v.empty()) throw InvalidArgument("tail_mean: empty series");
  const std::size_t k = std::min(n, v.size());
  double s = 0;
  for (std::size_t i = v.size() - k; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(k);
}

// --- Spectra --------------------------------------------------------------------

struct Spectrum {
  std::vector<int> frequencies;                // centred bins -floor(T/2) .. ceil(T/2)-1
  std::vector<std::vector<double>> amplitude;  // [category][bin]
};

/// Unnormalized DFT X(f) = sum_t x_t exp(-2 pi i f t / T), in natural bin order.
inline std::vector<std::complex<double>> dft_complex(const std::vector<double>& x) {
  const std::size_t T = x.size();
  if (T < 2) throw InvalidArgument("dft: series needs at least 2 samples");
  std::vector<std::complex<double>> in(x.begin(), x.end()), out(T);
  static std::mutex planner;  // FFTW planning is not thread-safe
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(planner);
    plan = fftw_plan_dft_1d(static_cast<int>(T), reinterpret_cast<fftw_complex*>(in.data()),
                            reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(planner);
    fftw_destroy_plan(plan);
  }
  return out;
}

inline std::vector<int> centered_bins(std::size_t T) {
  std::vector<int> f(T);
  const int lo = -static_cast<int>(T / 2);
  for (std::size_t i = 0; i < T; ++i) f[i] = lo + static_cast<int>(i);
  return f;
}

/// Amplitudes |X(f)| of each series on centred bins.
inline Spectrum dft(const std::vector<std::vector<double>>& series) {
  if (series.empty()) throw InvalidArgument("dft: no series");
  const std::size_t T = series[0].size();
  Spectrum s;
  s.frequencies = centered_bins(T);
  for (const auto& x : series) {
    if (x.size() != T) throw ShapeError("dft: series lengths differ");
    const auto X = dft_complex(x);
    std::vector<double> a(T);
    for (std::size_t i = 0; i < T; ++i) {
      const int f = s.frequencies[i];
      a[i] = std::abs(X[static_cast<std::size_t>((f + static_cast<int>(T)) % static_cast<int>(T))]);
    }
    s.amplitude.push_back(std::move(a));
  }
  return s;
}

inline Spectrum dft(const std::vector<double>& series) { return dft(std::vector<std::vector<double>>{series}); }

/// Mean amplitude over categories and bins with |f| >= band.
inline double high_band_mean(const Spectrum& s, double band) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& a : s.amplitude)
    for (std::size_t i = 0; i < a.size(); ++i)
      if (std::abs(s.frequencies[i]) >= band) sum += a[i], ++n;
  if (n == 0) throw InvalidArgument("high_band_mean: band contains no bins");
  return sum / static_cast<double>(n);
}

/// Per-channel mean-prediction series of a trace, [channel][iteration].
inline std::vector<std::vector<double>> channel_series(const DynamicsTrace& t) {
  const auto& m = t.channel_means();
  if (m.empty()) return {};
  std::vector<std::vector<double>> out(m[0].size(), std::vector<double>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t k = 0; k < m[i].size(); ++k) out[k][i] = m[i][k];
  return out;
}

// --- CSV ------------------------------------------------------------------------

inline void write_change_csv(std::ostream& os, const DynamicsTrace& t) {
  os << "iter,change\n" << std::setprecision(10);
  const auto& it = t.iterations();
  const auto& c = t.changes();
  for (std::size_t i = 0; i < c.size(); ++i) os << it[i + 1] << ',' << c[i] << '\n';
}

inline void write_spectrum_csv(std::ostream& os, const Spectrum& s) {
  os << "freq,category,amplitude\n" << std::setprecision(10);
  for (std::size_t k = 0; k < s.amplitude.size(); ++k)
    for (std::size_t i = 0; i < s.frequencies.size(); ++i)
      os << s.frequencies[i] << ',' << k << ',' << s.amplitude[k][i] << '\n';
}

// --- Gaussian toy process ---------------------------------------------------------

struct ToyConfig {
  std::vector<double> sigmas = {0.5, 1.0, 10.0};
  std::size_t num_classes = 5;
  std::size_t steps = 20;
  std::vector<std::uint64_t> seeds;
  double band = 0.0;  // 0: T/4
};

struct ToyRun {
  std::vector<std::vector<double>> predictions;  // [t][k]
  std::vector<double> change;                    // length T-1
  Spectrum spectrum;                             // per category
  double mean_change = 0.0;
  double high_band = 0.0;
};

struct ToySigmaResult {
  double sigma = 0.0;
  std::vector<ToyRun> runs;  // one per seed
  double mean_change = 0.0;
  double mean_high_band = 0.0;
};

struct ToyReport {
  ToyConfig config;
  std::vector<ToySigmaResult> per_sigma;
  double ordered_fraction_change = 0.0;  // seeds with strictly increasing change over sigma order
  double ordered_fraction_high_band = 0.0;
};

/// Softmax of i.i.d. N(0, sigma^2) logits at every step, per category DFT.
inline ToyRun toy_run(double sigma, std::size_t K, std::size_t T, std::uint64_t seed, double band) {
  Rng rng(seed);
  ToyRun r;
  r.predictions.assign(T, std::vector<double>(K));
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> z(K);
    double mx = -1e300;
    for (auto& v : z) v = sigma * rng.normal(), mx = std::max(mx, v);
    double s = 0;
    for (std::size_t k = 0; k < K; ++k) s += (z[k] = std::exp(z[k] - mx));
    for (std::size_t k = 0; k < K; ++k) r.predictions[t][k] = z[k] / s;
  }
  for (std::size_t t = 0; t + 1 < T; ++t) {
    double c = 0;
    for (std::size_t k = 0; k < K; ++k) c += std::abs(r.predictions[t + 1][k] - r.predictions[t][k]);
    r.change.push_back(c);
  }
  std::vector<std::vector<double>> cat(K, std::vector<double>(T));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < K; ++k) cat[k][t] = r.predictions[t][k];
  r.spectrum = dft(cat);
  double s = 0;
  for (double c : r.change) s += c;
  r.mean_change = r.change.empty() ? 0.0 : s / static_cast<double>(r.change.size());
  r.high_band = high_band_mean(r.spectrum, band);
  return r;
}

inline ToyReport toy_gaussian_experiment(ToyConfig cfg) {
  if (cfg.seeds.empty()) throw InvalidArgument("toy experiment: no seeds");
  if (cfg.steps < 2 || cfg.num_classes < 2) throw InvalidArgument("toy experiment: need T >= 2 and K >= 2");
  const double band = cfg.band > 0 ? cfg.band : static_cast<double>(cfg.steps) / 4.0;
  ToyReport rep;
  rep.config = cfg;
  for (std::size_t si = 0; si < cfg.sigmas.size(); ++si) {
    ToySigmaResult res;
    res.sigma = cfg.sigmas[si];
    for (auto seed : cfg.seeds) {
      res.runs.push_back(toy_run(res.sigma, cfg.num_classes, cfg.steps, derive_seed({seed, si}), band));
      res.mean_change += res.runs.back().mean_change;
      res.mean_high_band += res.runs.back().high_band;
    }
    res.mean_change /= static_cast<double>(cfg.seeds.size());
    res.mean_high_band /= static_cast<double>(cfg.seeds.size());
    rep.per_sigma.push_back(std::move(res));
  }
  std::size_t ok_c = 0, ok_h = 0;
  for (std::size_t j = 0; j < cfg.seeds.size(); ++j) {
    bool c = true, h = true;
    for (std::size_t si = 0; si + 1 < rep.per_sigma.size(); ++si) {
      c = c && rep.per_sigma[si].runs[j].mean_change < rep.per_sigma[si + 1].runs[j].mean_change;
      h = h && rep.per_sigma[si].runs[j].high_band < rep.per_sigma[si + 1].runs[j].high_band;
    }
    ok_c += c, ok_h += h;
  }
  rep.ordered_fraction_change = static_cast<double>(ok_c) / static_cast<double>(cfg.seeds.size());
  rep.ordered_fraction_high_band = static_cast<double>(ok_h) / static_cast<double>(cfg.seeds.size());
  return rep;
}

}  // namespace smoothda::diag
