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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "smoothda/autodiff/tensor.hpp"

namespace smoothda::ad {

/// Compares the reverse-mode gradient of scalar `f` at every input against
/// central differences. Returns
///   max_i |analytic_i - fd_i| / max(|analytic_i|, |fd_i|, floor)
/// over all elements of all inputs, where
///   floor = max(1e-8, rel_floor * max_j |analytic_j|).
/// A positive `rel_floor` keeps elements whose gradient sits at round-off
/// scale relative to the rest from dominating. `f` must be deterministic.
template <typename T>
double grad_check(const std::function<Tensor<T>(const std::vector<Tensor<T>>&)>& f,
                  std::vector<Tensor<T>> inputs, double eps, double rel_floor = 0.0) {
  if (!(eps > 0.0)) throw InvalidArgument("grad_check: eps must be positive");
  if (rel_floor < 0.0) throw InvalidArgument("grad_check: rel_floor must be >= 0");
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.clear_grad();
  }
  {
    auto loss = f(inputs);
    backward(loss);
  }
  std::vector<std::vector<T>> analytic;
  double scale = 0.0;
  for (auto& x : inputs) {
    analytic.emplace_back(x.size(), T(0));
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.back().begin());
    for (T g : analytic.back()) scale = std::max(scale, std::abs(static_cast<double>(g)));
  }
  const double floor = std::max(1e-8, rel_floor * scale);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto vals = inputs[k].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const T orig = vals[i];
      double fp, fm;
      {
        NoGradGuard ng;
        vals[i] = static_cast<T>(orig + eps);
        fp = static_cast<double>(f(inputs).item());
        vals[i] = static_cast<T>(orig - eps);
        fm = static_cast<double>(f(inputs).item());
      }
      vals[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) throw NonFiniteError("grad_check probe");
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = static_cast<double>(analytic[k][i]);
      const double denom = std::max({std::abs(an), std::abs(fd), floor});
      worst = std::max(worst, std::abs(an - fd) / denom);
    }
  }
  return worst;
}

/// Single-input convenience overload.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x, double eps) {
  return grad_check<T>(
      std::function<Tensor<T>(const std::vector<Tensor<T>>&)>(
          [&f](const std::vector<Tensor<T>>& xs) { return f(xs[0]); }),
      std::vector<Tensor<T>>{std::move(x)}, eps);
}

}  // namespace smoothda::ad
