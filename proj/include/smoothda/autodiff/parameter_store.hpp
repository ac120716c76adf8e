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

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "smoothda/autodiff/tensor.hpp"

namespace smoothda::ad {

enum class NetworkKind : std::uint8_t { extractor = 0, classifier = 1, discriminator = 2, similarity = 3 };

inline std::string_view to_string(NetworkKind k) {
  switch (k) {
    case NetworkKind::extractor: return "extractor";
    case NetworkKind::classifier: return "classifier";
    case NetworkKind::discriminator: return "discriminator";
    case NetworkKind::similarity: return "similarity";
  }
  return "?";
}

/// Ordered, uniquely named parameters of one network. Copying a store
/// copies the handles (the tensors are shared); use `clone()` for an
/// independent copy.
template <typename T>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  ParameterStore() = default;
  explicit ParameterStore(NetworkKind kind) : kind_(kind) {}

  NetworkKind kind() const { return kind_; }

  Tensor<T>& add(std::string name, Tensor<T> t) {
    if (find(name)) throw InvalidArgument("parameter store: duplicate name '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(t));
    return entries_.back().second;
  }

  const Tensor<T>* find(std::string_view name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }

  const Tensor<T>& at(std::string_view name) const {
    if (const auto* t = find(name)) return *t;
    throw InvalidArgument("parameter store: no parameter named '" + std::string(name) + "'");
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  void set_requires_grad(bool r) {
    for (auto& e : entries_) e.second.set_requires_grad(r);
  }

  /// Independent copy with the same names, values and grad flags.
  ParameterStore clone() const {
    ParameterStore out(kind_);
    for (const auto& [n, t] : entries_) out.entries_.emplace_back(n, t.clone());
    return out;
  }

  /// Independent copy whose tensors never take part in backward.
  ParameterStore detached() const {
    ParameterStore out = clone();
    out.set_requires_grad(false);
    return out;
  }

  /// Throws unless `other` has identical names, shapes and order.
  void check_aligned(const ParameterStore& other, std::string_view what) const {
    if (other.entries_.size() != entries_.size()) {
      throw ShapeError(std::string(what) + ": stores differ in parameter count (" +
                       std::to_string(entries_.size()) + " vs " +
                       std::to_string(other.entries_.size()) + ")");
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& [na, ta] = entries_[i];
      const auto& [nb, tb] = other.entries_[i];
      if (na != nb || ta.shape() != tb.shape()) {
        throw ShapeError(std::string(what) + ": parameter " + std::to_string(i) + " is '" + na +
                         "' " + ad::to_string(ta.shape()) + " vs '" + nb + "' " +
                         ad::to_string(tb.shape()));
      }
    }
  }

  /// Overwrites values in place, keeping tensor identity (and hence any
  /// handles held elsewhere) intact.
  void copy_values_from(const ParameterStore& other) {
    check_aligned(other, "copy_values_from");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto dst = entries_[i].second.mutable_values();
      const auto src = other.entries_[i].second.values();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  bool values_equal(const ParameterStore& other) const {
    if (other.entries_.size() != entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto a = entries_[i].second.values();
      const auto b = other.entries_[i].second.values();
      if (entries_[i].first != other.entries_[i].first || a.size() != b.size() ||
          !std::equal(a.begin(), a.end(), b.begin()))
        return false;
    }
    return true;
  }

 private:
  NetworkKind kind_ = NetworkKind::extractor;
  std::vector<Entry> entries_;
};

/// Temporarily marks every parameter of a store as constant, so a forward
/// pass through the network records no gradient for its weights while
/// gradients still flow to its inputs. Restores the previous flags.
template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(const ParameterStore<T>& s) : store_(s) {
    for (const auto& e : store_.entries()) {
      prev_.push_back(e.second.requires_grad());
      const_cast<Tensor<T>&>(e.second).set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < prev_.size(); ++i)
      const_cast<Tensor<T>&>(store_.entries()[i].second).set_requires_grad(prev_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  const ParameterStore<T>& store_;
  std::vector<bool> prev_;
};

}  // namespace smoothda::ad
