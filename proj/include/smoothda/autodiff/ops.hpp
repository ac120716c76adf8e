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

// Differentiable primitive set. Every op validates shapes up front (throwing
// ShapeError that names the op and the operand shapes), rejects non-finite
// outputs, and records a backward closure when any input requires a
// gradient and grad mode is on.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "smoothda/autodiff/tensor.hpp"

namespace smoothda::ad {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

[[noreturn]] inline void shape_fail(const char* op, const Shape& a, const Shape& b,
                                    const std::string& why) {
  throw ShapeError(std::string("op '") + op + "': shapes " + to_string(a) + " and " +
                   to_string(b) + " " + why);
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(std::string("op '") + op + "': shape " + to_string(a) + " " + why);
}

inline std::size_t norm_axis(const char* op, const Shape& s, std::ptrdiff_t axis) {
  const auto r = static_cast<std::ptrdiff_t>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) shape_fail(op, s, "has no axis " + std::to_string(axis));
  return static_cast<std::size_t>(axis);
}

using Index = std::vector<std::uint32_t>;

template <typename T, typename F, typename DF>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, DF df) {
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return make_result<T>(op, x.shape(), std::move(y), {x}, [df](Node<T>& n) {
    T* gx = parent_grad(n, 0);
    if (!gx) return;
    const auto& xv = n.parents[0]->value;
    for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i] * df(xv[i], n.value[i]);
  });
}

/// For broadcasting binary ops: flat input offsets for every output element.
struct BroadcastPlan {
  Shape out;
  bool same = false;
  std::shared_ptr<Index> ia, ib;
};

inline BroadcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape ap(r, 1), bp(r, 1);
  std::copy(a.begin(), a.end(), ap.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), bp.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  p.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (ap[i] == bp[i] || bp[i] == 1) {
      p.out[i] = ap[i];
    } else if (ap[i] == 1) {
      p.out[i] = bp[i];
    } else {
      shape_fail(op, a, b, "do not broadcast");
    }
  }
  std::vector<std::size_t> sa(r, 0), sb(r, 0);
  std::size_t ka = 1, kb = 1;
  for (std::size_t i = r; i-- > 0;) {
    sa[i] = ap[i] == 1 ? 0 : ka;
    sb[i] = bp[i] == 1 ? 0 : kb;
    ka *= ap[i];
    kb *= bp[i];
  }
  const std::size_t n = numel(p.out);
  p.ia = std::make_shared<Index>(n);
  p.ib = std::make_shared<Index>(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*p.ia)[i] = static_cast<std::uint32_t>(oa);
    (*p.ib)[i] = static_cast<std::uint32_t>(ob);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < p.out[d]) {
        oa += sa[d];
        ob += sb[d];
        break;
      }
      oa -= sa[d] * (p.out[d] - 1);
      ob -= sb[d] * (p.out[d] - 1);
      idx[d] = 0;
    }
  }
  return p;
}

enum class BinOp { add, sub, mul };

template <typename T>
Tensor<T> binary(const char* op, BinOp kind, const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = broadcast_plan(op, a.shape(), b.shape());
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t n = numel(plan.out);
  std::vector<T> y(n);
  auto apply = [kind](T x, T z) {
    switch (kind) {
      case BinOp::add: return x + z;
      case BinOp::sub: return x - z;
      default: return x * z;
    }
  };
  if (plan.same) {
    for (std::size_t i = 0; i < n; ++i) y[i] = apply(av[i], bv[i]);
  } else {
    const auto& ia = *plan.ia;
    const auto& ib = *plan.ib;
    for (std::size_t i = 0; i < n; ++i) y[i] = apply(av[ia[i]], bv[ib[i]]);
  }
  return make_result<T>(op, plan.out, std::move(y), {a, b}, [kind, plan](Node<T>& nd) {
    T* ga = parent_grad(nd, 0);
    T* gb = parent_grad(nd, 1);
    const auto& av = nd.parents[0]->value;
    const auto& bv = nd.parents[1]->value;
    const std::size_t n = nd.grad.size();
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t i_a = plan.same ? i : (*plan.ia)[i];
      const std::size_t i_b = plan.same ? i : (*plan.ib)[i];
      const T g = nd.grad[i];
      switch (kind) {
        case BinOp::add:
          if (ga) ga[i_a] += g;
          if (gb) gb[i_b] += g;
          break;
        case BinOp::sub:
          if (ga) ga[i_a] += g;
          if (gb) gb[i_b] -= g;
          break;
        case BinOp::mul:
          if (ga) ga[i_a] += g * bv[i_b];
          if (gb) gb[i_b] += g * av[i_a];
          break;
      }
    }
  });
}

template <typename T>
Tensor<T> gather(const char* op, const Tensor<T>& x, Shape out_shape,
                 std::shared_ptr<const Index> idx) {
  const auto xv = x.values();
  std::vector<T> y(idx->size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[(*idx)[i]];
  return make_result<T>(op, std::move(out_shape), std::move(y), {x}, [idx](Node<T>& n) {
    T* gx = parent_grad(n, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < n.grad.size(); ++i) gx[(*idx)[i]] += n.grad[i];
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return detail::unary<T>(
      "leaky_relu", x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
  return detail::unary<T>(
      "gelu", x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

/// log(max(x, floor)); the gradient is zero where the clamp is active.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& x, T floor) {
  return detail::unary<T>(
      "log_clamped", x, [floor](T v) { return std::log(v > floor ? v : floor); },
      [floor](T v, T) { return v > floor ? T(1) / v : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// scale * x + shift
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  return detail::unary<T>(
      "affine", x, [scale, shift](T v) { return scale * v + shift; },
      [scale](T, T) { return scale; });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& x, T s) {
  return detail::unary<T>(
      "scalar_mul", x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

/// Numpy-style broadcasting.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>("add", detail::BinOp::add, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>("sub", detail::BinOp::sub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>("mul", detail::BinOp::mul, a, b);
}

/// Same values, no history: gradients never flow through the result.
template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return Tensor<T>::from(x.shape(), std::vector<T>(x.values().begin(), x.values().end()), false);
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (const T v : x.values()) s += v;
  return detail::make_result<T>("sum", {}, {s}, {x}, [](Node<T>& n) {
    T* gx = detail::parent_grad(n, 0);
    if (!gx) return;
    const T g = n.grad[0];
    for (std::size_t i = 0; i < n.parents[0]->value.size(); ++i) gx[i] += g;
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.size());
  T s = T(0);
  for (const T v : x.values()) s += v;
  return detail::make_result<T>("mean", {}, {s * inv}, {x}, [inv](Node<T>& n) {
    T* gx = detail::parent_grad(n, 0);
    if (!gx) return;
    const T g = n.grad[0] * inv;
    for (std::size_t i = 0; i < n.parents[0]->value.size(); ++i) gx[i] += g;
  });
}

namespace detail {
template <typename T>
Tensor<T> reduce_axis(const char* op, const Tensor<T>& x, std::ptrdiff_t axis, bool keepdim,
                      T scale) {
  const std::size_t ax = norm_axis(op, x.shape(), axis);
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  Shape out = s;
  if (keepdim) {
    out[ax] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  const auto xv = x.values();
  std::vector<T> y(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < len; ++a)
      for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += xv[(o * len + a) * inner + i];
  if (scale != T(1))
    for (auto& v : y) v *= scale;
  return make_result<T>(op, std::move(out), std::move(y), {x},
                        [outer, inner, len, scale](Node<T>& n) {
                          T* gx = parent_grad(n, 0);
                          if (!gx) return;
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t a = 0; a < len; ++a)
                              for (std::size_t i = 0; i < inner; ++i)
                                gx[(o * len + a) * inner + i] += scale * n.grad[o * inner + i];
                        });
}
}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::ptrdiff_t axis, bool keepdim = false) {
  return detail::reduce_axis<T>("sum_axis", x, axis, keepdim, T(1));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::ptrdiff_t axis, bool keepdim = false) {
  const std::size_t ax = detail::norm_axis("mean_axis", x.shape(), axis);
  return detail::reduce_axis<T>("mean_axis", x, axis, keepdim,
                                T(1) / static_cast<T>(x.shape()[ax]));
}

// ---------------------------------------------------------------------------
// Normalizers

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::ptrdiff_t axis) {
  const std::size_t ax = detail::norm_axis("softmax", x.shape(), axis);
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T mx = xv[base];
      for (std::size_t a = 1; a < len; ++a) mx = std::max(mx, xv[base + a * inner]);
      T z = T(0);
      for (std::size_t a = 0; a < len; ++a) {
        const T e = std::exp(xv[base + a * inner] - mx);
        y[base + a * inner] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (std::size_t a = 0; a < len; ++a) y[base + a * inner] *= inv;
    }
  }
  return detail::make_result<T>("softmax", s, std::move(y), {x}, [outer, inner, len](Node<T>& n) {
    T* gx = detail::parent_grad(n, 0);
    if (!gx) return;
    const auto& y = n.value;
    const auto& g = n.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        T dot = T(0);
        for (std::size_t a = 0; a < len; ++a) dot += g[base + a * inner] * y[base + a * inner];
        for (std::size_t a = 0; a < len; ++a) {
          const std::size_t k = base + a * inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

/// Normalizes over the last axis, then applies per-channel gamma and beta.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5)) {
  if (x.rank() == 0) detail::shape_fail("layernorm", x.shape(), "must have rank >= 1");
  const std::size_t c = x.shape().back();
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    detail::shape_fail("layernorm", x.shape(), gamma.shape(), "(input, gamma) mismatch");
  }
  const std::size_t rows = x.size() / c;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * c;
    T mu = T(0);
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xr[j] - mu) * rs;
      (*xhat)[r * c + j] = h;
      y[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return detail::make_result<T>(
      "layernorm", x.shape(), std::move(y), {x, gamma, beta}, [xhat, rstd, rows, c](Node<T>& n) {
        T* gx = detail::parent_grad(n, 0);
        T* gg = detail::parent_grad(n, 1);
        T* gb = detail::parent_grad(n, 2);
        const auto& gv = n.parents[1]->value;
        const auto& dy = n.grad;
        const T invc = T(1) / static_cast<T>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* h = xhat->data() + r * c;
          const T* d = dy.data() + r * c;
          if (gg || gb) {
            for (std::size_t j = 0; j < c; ++j) {
              if (gg) gg[j] += d[j] * h[j];
              if (gb) gb[j] += d[j];
            }
          }
          if (gx) {
            T m1 = T(0), m2 = T(0);
            for (std::size_t j = 0; j < c; ++j) {
              const T dh = d[j] * gv[j];
              m1 += dh;
              m2 += dh * h[j];
            }
            m1 *= invc;
            m2 *= invc;
            const T rs = (*rstd)[r];
            for (std::size_t j = 0; j < c; ++j) {
              gx[r * c + j] += rs * (d[j] * gv[j] - m1 - h[j] * m2);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {
template <typename T>
Tensor<T> matmul_impl(const Tensor<T>& a, const Tensor<T>& b, bool tb) {
  const char* op = tb ? "matmul_nt" : "matmul";
  if (a.rank() < 2 || b.rank() < 2) shape_fail(op, a.shape(), b.shape(), "need rank >= 2");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::size_t k = as.back();
  const std::size_t kb = tb ? bs.back() : bs[bs.size() - 2];
  const std::size_t n = tb ? bs[bs.size() - 2] : bs.back();
  if (k != kb) shape_fail(op, as, bs, "have mismatched inner dimensions");

  std::size_t batch = 1, m = 0;
  bool shared_b = b.rank() == 2;
  if (shared_b) {
    m = a.size() / k;  // every leading dim folds into rows
  } else {
    if (a.rank() != b.rank() || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
      shape_fail(op, as, bs, "have mismatched batch dimensions");
    }
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
    m = as[as.size() - 2];
  }
  Shape out = as;
  out.back() = n;

  const auto av = a.values();
  const auto bv = b.values();
  std::vector<T> y(batch * m * n);
  const std::size_t bsz = k * n;
  for (std::size_t q = 0; q < batch; ++q) {
    MapC<T> A(av.data() + q * m * k, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    MapM<T> C(y.data() + q * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    const T* bp = bv.data() + (shared_b ? 0 : q * bsz);
    if (tb) {
      MapC<T> B(bp, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
      C.noalias() = A * B.transpose();
    } else {
      MapC<T> B(bp, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
      C.noalias() = A * B;
    }
  }
  return make_result<T>(op, std::move(out), std::move(y), {a, b},
                        [batch, m, k, n, shared_b, tb, bsz](Node<T>& nd) {
                          T* ga = parent_grad(nd, 0);
                          T* gb = parent_grad(nd, 1);
                          const auto& av = nd.parents[0]->value;
                          const auto& bv = nd.parents[1]->value;
                          const auto M = static_cast<Eigen::Index>(m);
                          const auto K = static_cast<Eigen::Index>(k);
                          const auto N = static_cast<Eigen::Index>(n);
                          for (std::size_t q = 0; q < batch; ++q) {
                            MapC<T> G(nd.grad.data() + q * m * n, M, N);
                            MapC<T> A(av.data() + q * m * k, M, K);
                            const std::size_t boff = shared_b ? 0 : q * bsz;
                            if (tb) {
                              MapC<T> B(bv.data() + boff, N, K);
                              if (ga) MapM<T>(ga + q * m * k, M, K).noalias() += G * B;
                              if (gb) MapM<T>(gb + boff, N, K).noalias() += G.transpose() * A;
                            } else {
                              MapC<T> B(bv.data() + boff, K, N);
                              if (ga) MapM<T>(ga + q * m * k, M, K).noalias() += G * B.transpose();
                              if (gb) MapM<T>(gb + boff, K, N).noalias() += A.transpose() * G;
                            }
                          }
                        });
}
}  // namespace detail

/// a (..., M, K) x b (..., K, N). A rank-2 `b` is shared across all leading
/// dims of `a`; otherwise batch dims must match exactly.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::matmul_impl(a, b, false);
}

/// a (..., M, K) x b(..., N, K)^T
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::matmul_impl(a, b, true);
}

/// x (B, Cin, H, W), weight (Cout, Cin, kh, kw), optional bias (Cout).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 std::size_t stride = 1, std::size_t padding = 0) {
  if (x.rank() != 4 || weight.rank() != 4) {
    detail::shape_fail("conv2d", x.shape(), weight.shape(), "need rank-4 input and weight");
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != C) detail::shape_fail("conv2d", x.shape(), weight.shape(), "channel mismatch");
  if (bias && bias->shape() != Shape{O}) {
    detail::shape_fail("conv2d", weight.shape(), bias->shape(), "(weight, bias) mismatch");
  }
  if (stride == 0 || H + 2 * padding < kh || W + 2 * padding < kw) {
    detail::shape_fail("conv2d", x.shape(), weight.shape(), "kernel does not fit");
  }
  const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
  const std::size_t CKK = C * kh * kw, P = Ho * Wo;

  // im2col; column entries that fall into padding stay zero.
  auto cols = std::make_shared<std::vector<T>>(B * CKK * P, T(0));
  const auto xv = x.values();
  for (std::size_t b = 0; b < B; ++b) {
    T* cb = cols->data() + b * CKK * P;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          T* row = cb + ((c * kh + i) * kw + j) * P;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            const T* xrow = xv.data() + ((b * C + c) * H + static_cast<std::size_t>(iy)) * W;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              row[oy * Wo + ox] = xrow[ix];
            }
          }
        }
  }
  std::vector<T> y(B * O * P);
  const auto wv = weight.values();
  detail::MapC<T> Wm(wv.data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(CKK));
  for (std::size_t b = 0; b < B; ++b) {
    detail::MapC<T> Cm(cols->data() + b * CKK * P, static_cast<Eigen::Index>(CKK),
                       static_cast<Eigen::Index>(P));
    detail::MapM<T> Y(y.data() + b * O * P, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
    Y.noalias() = Wm * Cm;
    if (bias) {
      const auto bv = bias->values();
      for (std::size_t o = 0; o < O; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += bv[o];
    }
  }
  std::vector<Tensor<T>> parents{x, weight};
  if (bias) parents.push_back(*bias);
  return detail::make_result<T>(
      "conv2d", {B, O, Ho, Wo}, std::move(y), std::move(parents),
      [=](Node<T>& n) {
        T* gx = detail::parent_grad(n, 0);
        T* gw = detail::parent_grad(n, 1);
        T* gbias = n.parents.size() > 2 ? detail::parent_grad(n, 2) : nullptr;
        const auto& wv = n.parents[1]->value;
        const auto Oi = static_cast<Eigen::Index>(O), Ki = static_cast<Eigen::Index>(CKK),
                   Pi = static_cast<Eigen::Index>(P);
        detail::MapC<T> Wm(wv.data(), Oi, Ki);
        std::vector<T> dcols(gx ? CKK * P : 0);
        for (std::size_t b = 0; b < B; ++b) {
          detail::MapC<T> G(n.grad.data() + b * O * P, Oi, Pi);
          detail::MapC<T> Cm(cols->data() + b * CKK * P, Ki, Pi);
          if (gw) detail::MapM<T>(gw, Oi, Ki).noalias() += G * Cm.transpose();
          if (gbias) {
            for (std::size_t o = 0; o < O; ++o) gbias[o] += G.row(static_cast<Eigen::Index>(o)).sum();
          }
          if (gx) {
            detail::MapM<T> D(dcols.data(), Ki, Pi);
            D.noalias() = Wm.transpose() * G;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                  const T* row = dcols.data() + ((c * kh + i) * kw + j) * P;
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                              static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    T* grow = gx + ((b * C + c) * H + static_cast<std::size_t>(iy)) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                                static_cast<std::ptrdiff_t>(padding);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                      grow[ix] += row[oy * Wo + ox];
                    }
                  }
                }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layout ops (all pure index permutations or selections)

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) detail::shape_fail("reshape", x.shape(), shape, "differ in size");
  auto y = std::vector<T>(x.values().begin(), x.values().end());
  return detail::make_result<T>("reshape", std::move(shape), std::move(y), {x}, [](Node<T>& n) {
    T* gx = detail::parent_grad(n, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
  const auto& s = x.shape();
  const std::size_t r = s.size();
  std::vector<bool> used(r, false);
  if (axes.size() != r) detail::shape_fail("permute", s, "got wrong number of axes");
  for (auto a : axes) {
    if (a >= r || used[a]) detail::shape_fail("permute", s, "got an invalid axis list");
    used[a] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * s[i];
  Shape out(r);
  std::vector<std::size_t> st(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = s[axes[i]];
    st[i] = in_strides[axes[i]];
  }
  auto idx = std::make_shared<detail::Index>(x.size());
  std::vector<std::size_t> ctr(r, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    (*idx)[i] = static_cast<std::uint32_t>(off);
    for (std::size_t d = r; d-- > 0;) {
      if (++ctr[d] < out[d]) {
        off += st[d];
        break;
      }
      off -= st[d] * (out[d] - 1);
      ctr[d] = 0;
    }
  }
  return detail::gather<T>("permute", x, std::move(out), std::move(idx));
}

/// Contiguous range [start, start+length) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::ptrdiff_t axis, std::size_t start, std::size_t length) {
  const std::size_t ax = detail::norm_axis("slice", x.shape(), axis);
  const auto& s = x.shape();
  if (start + length > s[ax] || length == 0) detail::shape_fail("slice", s, "range out of bounds");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  Shape out = s;
  out[ax] = length;
  auto idx = std::make_shared<detail::Index>();
  idx->reserve(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < length; ++a)
      for (std::size_t i = 0; i < inner; ++i)
        idx->push_back(static_cast<std::uint32_t>((o * s[ax] + start + a) * inner + i));
  return detail::gather<T>("slice", x, std::move(out), std::move(idx));
}

/// Arbitrary differentiable selection: out[i] = x[indices[i]].
template <typename T>
Tensor<T> take(const Tensor<T>& x, Shape out_shape, std::vector<std::uint32_t> indices) {
  if (numel(out_shape) != indices.size()) {
    detail::shape_fail("take", x.shape(), out_shape, "index count mismatch");
  }
  for (auto i : indices) {
    if (i >= x.size()) detail::shape_fail("take", x.shape(), out_shape, "index out of range");
  }
  return detail::gather<T>("take", x, std::move(out_shape),
                           std::make_shared<detail::Index>(std::move(indices)));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::ptrdiff_t axis) {
  if (xs.empty()) throw ShapeError("op 'concat': no inputs");
  const std::size_t ax = detail::norm_axis("concat", xs[0].shape(), axis);
  Shape out = xs[0].shape();
  out[ax] = 0;
  for (const auto& t : xs) {
    Shape a = t.shape(), b = xs[0].shape();
    if (a.size() != b.size()) detail::shape_fail("concat", b, a, "differ in rank");
    a[ax] = b[ax] = 0;
    if (a != b) detail::shape_fail("concat", xs[0].shape(), t.shape(), "differ off the concat axis");
    out[ax] += t.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out[i];
  for (std::size_t i = ax + 1; i < out.size(); ++i) inner *= out[i];
  std::vector<T> y;
  y.reserve(numel(out));
  std::vector<std::size_t> lens;
  for (const auto& t : xs) lens.push_back(t.shape()[ax]);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const auto v = xs[k].values();
      const std::size_t chunk = lens[k] * inner;
      y.insert(y.end(), v.begin() + static_cast<std::ptrdiff_t>(o * chunk),
               v.begin() + static_cast<std::ptrdiff_t>((o + 1) * chunk));
    }
  return detail::make_result<T>("concat", std::move(out), std::move(y), xs,
                                [outer, inner, lens](Node<T>& n) {
                                  std::size_t pos = 0;
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t k = 0; k < lens.size(); ++k) {
                                      const std::size_t chunk = lens[k] * inner;
                                      T* g = detail::parent_grad(n, k);
                                      if (g) {
                                        for (std::size_t i = 0; i < chunk; ++i)
                                          g[o * chunk + i] += n.grad[pos + i];
                                      }
                                      pos += chunk;
                                    }
                                });
}

namespace detail {
/// Index table mapping window-major layout (B*nW, ws*ws, C) to the
/// channel-last map (B, H, W, C) after a cyclic shift of -shift in both
/// spatial dims.
inline std::shared_ptr<Index> window_index(std::size_t B, std::size_t H, std::size_t W,
                                           std::size_t C, std::size_t ws, std::size_t shift) {
  const std::size_t nh = H / ws, nw = W / ws;
  auto idx = std::make_shared<Index>(B * H * W * C);
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t wy = 0; wy < nh; ++wy)
      for (std::size_t wx = 0; wx < nw; ++wx)
        for (std::size_t py = 0; py < ws; ++py)
          for (std::size_t px = 0; px < ws; ++px) {
            const std::size_t y = (wy * ws + py + shift) % H;
            const std::size_t x = (wx * ws + px + shift) % W;
            const std::size_t base = ((b * H + y) * W + x) * C;
            for (std::size_t c = 0; c < C; ++c) (*idx)[o++] = static_cast<std::uint32_t>(base + c);
          }
  return idx;
}

inline std::shared_ptr<Index> invert(const Index& p) {
  auto inv = std::make_shared<Index>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) (*inv)[p[i]] = static_cast<std::uint32_t>(i);
  return inv;
}
}  // namespace detail

/// (B, H, W, C) -> (B * H/ws * W/ws, ws*ws, C), after rolling the map by
/// -shift along H and W (shift = 0 gives the regular partition).
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, std::size_t ws, std::size_t shift = 0) {
  if (x.rank() != 4) detail::shape_fail("window_partition", x.shape(), "must be (B,H,W,C)");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (ws == 0 || H % ws || W % ws) {
    detail::shape_fail("window_partition", x.shape(), "is not divisible by window " + std::to_string(ws));
  }
  auto idx = detail::window_index(B, H, W, C, ws, shift);
  return detail::gather<T>("window_partition", x, {B * (H / ws) * (W / ws), ws * ws, C}, std::move(idx));
}

/// Inverse of window_partition for the same (ws, shift).
template <typename T>
Tensor<T> window_merge(const Tensor<T>& windows, std::size_t B, std::size_t H, std::size_t W,
                       std::size_t ws, std::size_t shift = 0) {
  if (windows.rank() != 3 || ws == 0 || H % ws || W % ws ||
      windows.dim(0) != B * (H / ws) * (W / ws) || windows.dim(1) != ws * ws) {
    detail::shape_fail("window_merge", windows.shape(), Shape{B, H, W},
                       "is inconsistent with window " + std::to_string(ws));
  }
  const std::size_t C = windows.dim(2);
  auto fwd = detail::window_index(B, H, W, C, ws, shift);
  return detail::gather<T>("window_merge", windows, {B, H, W, C}, detail::invert(*fwd));
}

/// Cyclic shift of a (B, H, W, C) map by (dy, dx): out[y][x] = in[y-dy][x-dx].
template <typename T>
Tensor<T> roll(const Tensor<T>& x, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  if (x.rank() != 4) detail::shape_fail("roll", x.shape(), "must be (B,H,W,C)");
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  auto mod = [](std::ptrdiff_t a, std::size_t m) {
    const auto mm = static_cast<std::ptrdiff_t>(m);
    return static_cast<std::size_t>(((a % mm) + mm) % mm);
  };
  auto idx = std::make_shared<detail::Index>(x.size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        const std::size_t sy = mod(static_cast<std::ptrdiff_t>(y) - dy, H);
        const std::size_t sx = mod(static_cast<std::ptrdiff_t>(xx) - dx, W);
        for (std::size_t c = 0; c < C; ++c)
          (*idx)[o++] = static_cast<std::uint32_t>(((b * H + sy) * W + sx) * C + c);
      }
  return detail::gather<T>("roll", x, x.shape(), std::move(idx));
}

// ---------------------------------------------------------------------------
// Resampling

/// (B, C, h, w) -> (B, C, h*factor, w*factor), half-pixel centers
/// (align_corners = false), edge-clamped.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor) {
  if (x.rank() != 4 || factor == 0) detail::shape_fail("upsample_bilinear", x.shape(), "must be (B,C,h,w)");
  const std::size_t B = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t Ho = h * factor, Wo = w * factor;
  struct Tap {
    std::size_t i0, i1;
    T l;
  };
  auto taps = [factor](std::size_t n_in, std::size_t n_out) {
    std::vector<Tap> t(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      T src = (static_cast<T>(o) + T(0.5)) / static_cast<T>(factor) - T(0.5);
      if (src < T(0)) src = T(0);
      std::size_t i0 = static_cast<std::size_t>(src);
      if (i0 > n_in - 1) i0 = n_in - 1;
      const std::size_t i1 = std::min(i0 + 1, n_in - 1);
      t[o] = {i0, i1, src - static_cast<T>(i0)};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(h, Ho));
  auto tx = std::make_shared<std::vector<Tap>>(taps(w, Wo));
  const auto xv = x.values();
  std::vector<T> y(B * C * Ho * Wo);
  for (std::size_t p = 0; p < B * C; ++p) {
    const T* src = xv.data() + p * h * w;
    T* dst = y.data() + p * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const auto& a = (*ty)[oy];
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const auto& b = (*tx)[ox];
        const T top = src[a.i0 * w + b.i0] * (T(1) - b.l) + src[a.i0 * w + b.i1] * b.l;
        const T bot = src[a.i1 * w + b.i0] * (T(1) - b.l) + src[a.i1 * w + b.i1] * b.l;
        dst[oy * Wo + ox] = top * (T(1) - a.l) + bot * a.l;
      }
    }
  }
  return detail::make_result<T>("upsample_bilinear", {B, C, Ho, Wo}, std::move(y), {x},
                                [=](Node<T>& n) {
                                  T* gx = detail::parent_grad(n, 0);
                                  if (!gx) return;
                                  for (std::size_t p = 0; p < B * C; ++p) {
                                    T* g = gx + p * h * w;
                                    const T* d = n.grad.data() + p * Ho * Wo;
                                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                                      const auto& a = (*ty)[oy];
                                      for (std::size_t ox = 0; ox < Wo; ++ox) {
                                        const auto& b = (*tx)[ox];
                                        const T v = d[oy * Wo + ox];
                                        g[a.i0 * w + b.i0] += v * (T(1) - a.l) * (T(1) - b.l);
                                        g[a.i0 * w + b.i1] += v * (T(1) - a.l) * b.l;
                                        g[a.i1 * w + b.i0] += v * a.l * (T(1) - b.l);
                                        g[a.i1 * w + b.i1] += v * a.l * b.l;
                                      }
                                    }
                                  }
                                });
}

/// Non-overlapping k x k mean pooling of a (B, C, H, W) map.
template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t k) {
  if (x.rank() != 4 || k == 0 || x.dim(2) % k || x.dim(3) % k) {
    detail::shape_fail("avg_pool2d", x.shape(), "is not divisible by pool " + std::to_string(k));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t h = H / k, w = W / k;
  const T inv = T(1) / static_cast<T>(k * k);
  const auto xv = x.values();
  std::vector<T> y(B * C * h * w, T(0));
  for (std::size_t p = 0; p < B * C; ++p)
    for (std::size_t yy = 0; yy < H; ++yy)
      for (std::size_t xx = 0; xx < W; ++xx) y[(p * h + yy / k) * w + xx / k] += xv[(p * H + yy) * W + xx];
  for (auto& v : y) v *= inv;
  return detail::make_result<T>("avg_pool2d", {B, C, h, w}, std::move(y), {x}, [=](Node<T>& n) {
    T* gx = detail::parent_grad(n, 0);
    if (!gx) return;
    for (std::size_t p = 0; p < B * C; ++p)
      for (std::size_t yy = 0; yy < H; ++yy)
        for (std::size_t xx = 0; xx < W; ++xx)
          gx[(p * H + yy) * W + xx] += inv * n.grad[(p * h + yy / k) * w + xx / k];
  });
}

}  // namespace smoothda::ad
