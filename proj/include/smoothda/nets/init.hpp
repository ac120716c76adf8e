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

#include <cmath>
#include <string>

#include "smoothda/autodiff.hpp"
#include "smoothda/rng.hpp"

namespace smoothda::nets::init {

template <typename T>
ad::Tensor<T> trunc_normal(Rng& rng, ad::Shape shape, double std) {
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    x = static_cast<T>(z * std);
  }
  return ad::Tensor<T>::from(std::move(shape), std::move(v), true);
}

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
ad::Tensor<T> fan_in_uniform(Rng& rng, ad::Shape shape, std::size_t fan_in) {
  const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-b, b));
  return ad::Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <typename T>
ad::Tensor<T> constant(ad::Shape shape, double c) {
  return ad::Tensor<T>::full(std::move(shape), static_cast<T>(c), true);
}

template <typename T>
void conv(ad::ParameterStore<T>& s, Rng& rng, const std::string& name, std::size_t out, std::size_t in,
          std::size_t k) {
  s.add(name + ".weight", fan_in_uniform<T>(rng, {out, in, k, k}, in * k * k));
  s.add(name + ".bias", constant<T>({out}, 0.0));
}

template <typename T>
void linear(ad::ParameterStore<T>& s, Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
  s.add(name + ".weight", trunc_normal<T>(rng, {in, out}, 0.02));
  s.add(name + ".bias", constant<T>({out}, 0.0));
}

template <typename T>
void norm(ad::ParameterStore<T>& s, const std::string& name, std::size_t c) {
  s.add(name + ".weight", constant<T>({c}, 1.0));
  s.add(name + ".bias", constant<T>({c}, 0.0));
}

}  // namespace smoothda::nets::init
