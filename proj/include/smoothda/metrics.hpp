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
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "smoothda/error.hpp"

namespace smoothda::metrics {

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {
    if (k == 0) throw InvalidArgument("confusion matrix needs at least one class");
  }

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * k_ + pred]; }
  std::uint64_t ignored() const { return ignored_; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  /// Adds one (H, W) mask pair. Pixels whose ground truth is `ignore_index`
  /// are counted as ignored; any other id must be < K.
  void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::size_t width,
                  std::uint8_t ignore_index = 255) {
    if (pred.size() != gt.size()) {
      throw ShapeError("accumulate: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                       std::to_string(gt.size()));
    }
    if (width == 0 || gt.size() % width) throw ShapeError("accumulate: width does not divide the mask size");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore_index) {
        ++ignored_;
        continue;
      }
      if (gt[i] >= k_ || pred[i] >= k_) {
        throw InvalidArgument("accumulate: invalid class id " + std::to_string(gt[i] >= k_ ? gt[i] : pred[i]) +
                              " in " + (gt[i] >= k_ ? "ground truth" : "prediction") + " at pixel (" +
                              std::to_string(i / width) + ", " + std::to_string(i % width) + ")");
      }
      ++counts_[gt[i] * k_ + pred[i]];
    }
  }

  void merge(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw ShapeError("merge: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    ignored_ += o.ignored_;
  }

  bool operator==(const ConfusionMatrix& o) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t ignored_ = 0;
};

/// Per-class IoU = TP / (TP + FP + FN); empty optional when the denominator
/// is zero (class absent from both ground truth and prediction).
inline std::vector<std::optional<double>> iou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InvalidArgument("iou: confusion matrix is empty");
  const std::size_t K = cm.num_classes();
  std::vector<std::optional<double>> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
    for (std::size_t j = 0; j < K; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    const std::uint64_t d = tp + fp + fn;
    if (d) out[k] = static_cast<double>(tp) / static_cast<double>(d);
  }
  return out;
}

/// Mean IoU over classes with a defined IoU, optionally restricted to `subset`.
inline double miou(const ConfusionMatrix& cm, const std::vector<std::size_t>* subset = nullptr) {
  const auto v = iou(cm);
  double s = 0;
  std::size_t n = 0;
  auto add = [&](std::size_t k) {
    if (k >= v.size()) throw InvalidArgument("miou: class " + std::to_string(k) + " out of range");
    if (v[k]) s += *v[k], ++n;
  };
  if (subset) {
    for (auto k : *subset) add(k);
  } else {
    for (std::size_t k = 0; k < v.size(); ++k) add(k);
  }
  if (n == 0) throw InvalidArgument("miou: no class with a defined IoU");
  return s / static_cast<double>(n);
}

/// `class,iou` rows (empty field for undefined IoU) and a `mIoU` footer.
inline void write_iou_csv(std::ostream& os, const ConfusionMatrix& cm) {
  const auto v = iou(cm);
  os << "class,iou\n" << std::setprecision(17);
  for (std::size_t k = 0; k < v.size(); ++k) {
    os << k << ',';
    if (v[k]) os << *v[k];
    os << '\n';
  }
  os << "mIoU," << miou(cm) << '\n';
}

}  // namespace smoothda::metrics
