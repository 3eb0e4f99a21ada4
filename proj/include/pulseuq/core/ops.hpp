/*
 * Copyright 2026 PulseUQ Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pulseuq/core/parallel.hpp"
#include "pulseuq/core/rng.hpp"
#include "pulseuq/core/tensor.hpp"

namespace pulseuq {

namespace detail {

using EMat =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  check_arg(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch between " +
                shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

/// Chunked loop for large elementwise kernels; small workloads stay serial
/// to dodge pool overhead. Writes are disjoint, so results are schedule-free.
/// `per_item_cost` scales the cutoff for loops whose items are themselves
/// inner loops (pool windows, whole channels).
template <typename Fn>
void for_span(std::int64_t n, Fn&& fn, std::int64_t per_item_cost = 1) {
  constexpr std::int64_t kParallelCutoff = 1 << 15;
  if (n * per_item_cost < kParallelCutoff) {
    fn(std::int64_t{0}, n);
  } else {
    parallel_chunks(n, [&](std::int64_t b, std::int64_t e, int) { fn(b, e); });
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  auto out = detail::make_node(a.shape(), a.requires_grad() || b.requires_grad());
  const auto ad = a.data();
  const auto bd = b.data();
  detail::for_span(out->numel(), [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i) out->data[i] = ad[i] + bd[i];
  });
  if (out->requires_grad) {
    auto an = a.node(), bn = b.node();
    detail::TensorNode* o = out.get();
    out->parents = {an, bn};
    out->backward_fn = [o, an, bn] {
      for (auto& p : {an, bn}) {
        if (!p->requires_grad) continue;
        p->ensure_grad();
        detail::for_span(o->numel(), [&](std::int64_t i0, std::int64_t i1) {
          for (std::int64_t i = i0; i < i1; ++i) p->grad[i] += o->grad[i];
        });
      }
    };
  }
  return Tensor(out);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = detail::make_node(a.shape(), a.requires_grad() || b.requires_grad());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::int64_t i = 0; i < out->numel(); ++i) out->data[i] = ad[i] - bd[i];
  if (out->requires_grad) {
    auto an = a.node(), bn = b.node();
    detail::TensorNode* o = out.get();
    out->parents = {an, bn};
    out->backward_fn = [o, an, bn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < o->numel(); ++i) an->grad[i] += o->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < o->numel(); ++i) bn->grad[i] -= o->grad[i];
      }
    };
  }
  return Tensor(out);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = detail::make_node(a.shape(), a.requires_grad() || b.requires_grad());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::int64_t i = 0; i < out->numel(); ++i) out->data[i] = ad[i] * bd[i];
  if (out->requires_grad) {
    auto an = a.node(), bn = b.node();
    detail::TensorNode* o = out.get();
    out->parents = {an, bn};
    out->backward_fn = [o, an, bn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < o->numel(); ++i)
          an->grad[i] += o->grad[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < o->numel(); ++i)
          bn->grad[i] += o->grad[i] * an->data[i];
      }
    };
  }
  return Tensor(out);
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "div");
  auto out = detail::make_node(a.shape(), a.requires_grad() || b.requires_grad());
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::int64_t i = 0; i < out->numel(); ++i) out->data[i] = ad[i] / bd[i];
  if (out->requires_grad) {
    auto an = a.node(), bn = b.node();
    detail::TensorNode* o = out.get();
    out->parents = {an, bn};
    out->backward_fn = [o, an, bn] {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::int64_t i = 0; i < o->numel(); ++i)
          an->grad[i] += o->grad[i] / bn->data[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < o->numel(); ++i)
          bn->grad[i] -= o->grad[i] * an->data[i] / (bn->data[i] * bn->data[i]);
      }
    };
  }
  return Tensor(out);
}

inline Tensor add_scalar(const Tensor& a, float s) {
  auto out = detail::make_node(a.shape(), a.requires_grad());
  const auto ad = a.data();
  for (std::int64_t i = 0; i < out->numel(); ++i) out->data[i] = ad[i] + s;
  if (out->requires_grad) {
    auto an = a.node();
    detail::TensorNode* o = out.get();
    out->parents = {an};
    out->backward_fn = [o, an] {
      an->ensure_grad();
      for (std::int64_t i = 0; i < o->numel(); ++i) an->grad[i] += o->grad[i];
    };
  }
  return Tensor(out);
}

inline Tensor mul_scalar(const Tensor& a, float s) {
  auto out = detail::make_node(a.shape(), a.requires_grad());
  const auto ad = a.data();
  for (std::int64_t i = 0; i < out->numel(); ++i) out->data[i] = ad[i] * s;
  if (out->requires_grad) {
    auto an = a.node();
    detail::TensorNode* o = out.get();
    out->parents = {an};
    out->backward_fn = [o, an, s] {
      an->ensure_grad();
      for (std::int64_t i = 0; i < o->numel(); ++i)
        an->grad[i] += o->grad[i] * s;
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const auto xd = x.data();
  detail::for_span(out->numel(), [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i)
      out->data[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
  });
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn] {
      xn->ensure_grad();
      detail::for_span(o->numel(), [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i)
          if (xn->data[i] > 0.0f) xn->grad[i] += o->grad[i];
      });
    };
  }
  return Tensor(out);
}

inline Tensor leaky_relu(const Tensor& x, float negative_slope = 0.01f) {
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const auto xd = x.data();
  detail::for_span(out->numel(), [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i)
      out->data[i] = xd[i] > 0.0f ? xd[i] : negative_slope * xd[i];
  });
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn, negative_slope] {
      xn->ensure_grad();
      detail::for_span(o->numel(), [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i)
          xn->grad[i] +=
              o->grad[i] * (xn->data[i] > 0.0f ? 1.0f : negative_slope);
      });
    };
  }
  return Tensor(out);
}

/// softplus(x) = ln(1 + e^x), evaluated in the overflow-safe form.
inline Tensor softplus(const Tensor& x) {
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const auto xd = x.data();
  for (std::int64_t i = 0; i < out->numel(); ++i) {
    const float v = xd[i];
    out->data[i] = std::max(v, 0.0f) + std::log1p(std::exp(-std::fabs(v)));
  }
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn] {
      xn->ensure_grad();
      for (std::int64_t i = 0; i < o->numel(); ++i) {
        const float sig = 1.0f / (1.0f + std::exp(-xn->data[i]));
        xn->grad[i] += o->grad[i] * sig;
      }
    };
  }
  return Tensor(out);
}

inline Tensor exp(const Tensor& x) {
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const auto xd = x.data();
  for (std::int64_t i = 0; i < out->numel(); ++i)
    out->data[i] = std::exp(xd[i]);
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn] {
      xn->ensure_grad();
      for (std::int64_t i = 0; i < o->numel(); ++i)
        xn->grad[i] += o->grad[i] * o->data[i];
    };
  }
  return Tensor(out);
}

inline Tensor log(const Tensor& x) {
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const auto xd = x.data();
  for (std::int64_t i = 0; i < out->numel(); ++i)
    out->data[i] = std::log(xd[i]);
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn] {
      xn->ensure_grad();
      for (std::int64_t i = 0; i < o->numel(); ++i)
        xn->grad[i] += o->grad[i] / xn->data[i];
    };
  }
  return Tensor(out);
}

inline Tensor square(const Tensor& x) {
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const auto xd = x.data();
  for (std::int64_t i = 0; i < out->numel(); ++i)
    out->data[i] = xd[i] * xd[i];
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn] {
      xn->ensure_grad();
      for (std::int64_t i = 0; i < o->numel(); ++i)
        xn->grad[i] += o->grad[i] * 2.0f * xn->data[i];
    };
  }
  return Tensor(out);
}

/// Elementwise clamp; gradient passes through inside [lo, hi].
inline Tensor clamp(const Tensor& x, float lo, float hi) {
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const auto xd = x.data();
  for (std::int64_t i = 0; i < out->numel(); ++i)
    out->data[i] = std::min(std::max(xd[i], lo), hi);
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn, lo, hi] {
      xn->ensure_grad();
      for (std::int64_t i = 0; i < o->numel(); ++i)
        if (xn->data[i] >= lo && xn->data[i] <= hi)
          xn->grad[i] += o->grad[i];
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Softmax and reductions
// ---------------------------------------------------------------------------

/// Row-wise softmax on a (rows, cols) tensor.
inline Tensor softmax(const Tensor& x) {
  check_arg(x.shape().size() == 2,
            "softmax expects a 2-d tensor, got " + shape_str(x.shape()));
  const std::int64_t rows = x.size(0), cols = x.size(1);
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const auto xd = x.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const float* in = xd.data() + r * cols;
    float* y = out->data.data() + r * cols;
    float m = in[0];
    for (std::int64_t c = 1; c < cols; ++c) m = std::max(m, in[c]);
    double denom = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      y[c] = std::exp(in[c] - m);
      denom += y[c];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (std::int64_t c = 0; c < cols; ++c) y[c] *= inv;
  }
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn, rows, cols] {
      xn->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const float* y = o->data.data() + r * cols;
        const float* gy = o->grad.data() + r * cols;
        float* gx = xn->grad.data() + r * cols;
        double dot = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) dot += double(gy[c]) * y[c];
        for (std::int64_t c = 0; c < cols; ++c)
          gx[c] += y[c] * (gy[c] - static_cast<float>(dot));
      }
    };
  }
  return Tensor(out);
}

inline Tensor sum(const Tensor& x) {
  auto out = detail::make_node(Shape{1}, x.requires_grad());
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  out->data[0] = static_cast<float>(acc);
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn] {
      xn->ensure_grad();
      const float g = o->grad[0];
      for (std::int64_t i = 0; i < xn->numel(); ++i) xn->grad[i] += g;
    };
  }
  return Tensor(out);
}

inline Tensor mean(const Tensor& x) {
  const std::int64_t n = x.numel();
  check_arg(n > 0, "mean of an empty tensor");
  auto out = detail::make_node(Shape{1}, x.requires_grad());
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  out->data[0] = static_cast<float>(acc / static_cast<double>(n));
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn, n] {
      xn->ensure_grad();
      const float g = o->grad[0] / static_cast<float>(n);
      for (std::int64_t i = 0; i < n; ++i) xn->grad[i] += g;
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  check_arg(shape_numel(new_shape) == x.numel(),
            "reshape from " + shape_str(x.shape()) + " to " +
                shape_str(new_shape) + " changes element count");
  auto out = detail::make_node(std::move(new_shape), x.requires_grad());
  std::copy(x.data().begin(), x.data().end(), out->data.begin());
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn] {
      xn->ensure_grad();
      for (std::int64_t i = 0; i < o->numel(); ++i) xn->grad[i] += o->grad[i];
    };
  }
  return Tensor(out);
}

/// Column slice of a (rows, cols) tensor: out = x[:, start:start+len].
inline Tensor slice_cols(const Tensor& x, std::int64_t start,
                         std::int64_t len) {
  check_arg(x.shape().size() == 2,
            "slice_cols expects a 2-d tensor, got " + shape_str(x.shape()));
  const std::int64_t rows = x.size(0), cols = x.size(1);
  check_arg(start >= 0 && len > 0 && start + len <= cols,
            "slice_cols [" + std::to_string(start) + ", " +
                std::to_string(start + len) + ") out of range for " +
                shape_str(x.shape()));
  auto out = detail::make_node(Shape{rows, len}, x.requires_grad());
  const auto xd = x.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < len; ++c)
      out->data[r * len + c] = xd[r * cols + start + c];
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn, rows, cols, start, len] {
      xn->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < len; ++c)
          xn->grad[r * cols + start + c] += o->grad[r * len + c];
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Dense algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check_arg(a.shape().size() == 2 && b.shape().size() == 2 &&
                a.size(1) == b.size(0),
            "matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
  const std::int64_t m = a.size(0), k = a.size(1), n = b.size(1);
  auto out = detail::make_node(Shape{m, n}, a.requires_grad() || b.requires_grad());
  detail::ECMap A(a.data().data(), m, k), B(b.data().data(), k, n);
  detail::EMap(out->data.data(), m, n).noalias() = A * B;
  if (out->requires_grad) {
    auto an = a.node(), bn = b.node();
    detail::TensorNode* o = out.get();
    out->parents = {an, bn};
    out->backward_fn = [o, an, bn, m, k, n] {
      detail::ECMap G(o->grad.data(), m, n);
      if (an->requires_grad) {
        an->ensure_grad();
        detail::ECMap B(bn->data.data(), k, n);
        detail::EMap(an->grad.data(), m, k).noalias() += G * B.transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::ECMap A(an->data.data(), m, k);
        detail::EMap(bn->grad.data(), k, n).noalias() += A.transpose() * G;
      }
    };
  }
  return Tensor(out);
}

/// x: (B, F) plus per-feature bias (F).
inline Tensor bias_add(const Tensor& x, const Tensor& b) {
  check_arg(x.shape().size() == 2 && b.shape().size() == 1 &&
                x.size(1) == b.size(0),
            "bias_add: incompatible shapes " + shape_str(x.shape()) + " and " +
                shape_str(b.shape()));
  const std::int64_t rows = x.size(0), cols = x.size(1);
  auto out = detail::make_node(x.shape(), x.requires_grad() || b.requires_grad());
  const auto xd = x.data();
  const auto bd = b.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c)
      out->data[r * cols + c] = xd[r * cols + c] + bd[c];
  if (out->requires_grad) {
    auto xn = x.node(), bn = b.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn, bn};
    out->backward_fn = [o, xn, bn, rows, cols] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::int64_t i = 0; i < o->numel(); ++i) xn->grad[i] += o->grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t c = 0; c < cols; ++c) {
          double acc = 0.0;
          for (std::int64_t r = 0; r < rows; ++r) acc += o->grad[r * cols + c];
          bn->grad[c] += static_cast<float>(acc);
        }
      }
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// 1-d convolution (im2col + GEMM), pooling
// ---------------------------------------------------------------------------

inline std::int64_t conv1d_out_len(std::int64_t in_len, std::int64_t kernel,
                                   std::int64_t stride, std::int64_t pad) {
  return (in_len + 2 * pad - kernel) / stride + 1;
}

namespace detail {

inline void im2col(const float* x, std::int64_t c_in, std::int64_t in_len,
                   std::int64_t kernel, std::int64_t stride, std::int64_t pad,
                   std::int64_t out_len, float* patches) {
  for (std::int64_t c = 0; c < c_in; ++c) {
    const float* xc = x + c * in_len;
    for (std::int64_t i = 0; i < kernel; ++i) {
      float* row = patches + (c * kernel + i) * out_len;
      for (std::int64_t o = 0; o < out_len; ++o) {
        const std::int64_t src = o * stride + i - pad;
        row[o] = (src >= 0 && src < in_len) ? xc[src] : 0.0f;
      }
    }
  }
}

}  // namespace detail

/// x: (B, C_in, L), w: (C_out, C_in, k), optional bias (C_out).
/// Zero padding `pad` on both sides, stride `stride`.
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     std::int64_t stride = 1, std::int64_t pad = 0) {
  check_arg(x.shape().size() == 3 && w.shape().size() == 3,
            "conv1d expects x (B, C_in, L) and w (C_out, C_in, k), got " +
                shape_str(x.shape()) + " and " + shape_str(w.shape()));
  check_arg(x.size(1) == w.size(1),
            "conv1d: channel mismatch between input " + shape_str(x.shape()) +
                " and weight " + shape_str(w.shape()));
  check_arg(stride >= 1 && pad >= 0, "conv1d: bad stride/pad");
  const std::int64_t batch = x.size(0), c_in = x.size(1), in_len = x.size(2);
  const std::int64_t c_out = w.size(0), kernel = w.size(2);
  const std::int64_t out_len = conv1d_out_len(in_len, kernel, stride, pad);
  check_arg(out_len >= 1, "conv1d: input length " + std::to_string(in_len) +
                              " too short for kernel " +
                              std::to_string(kernel) + " with pad " +
                              std::to_string(pad));
  const bool has_bias = bias.defined();
  if (has_bias)
    check_arg(bias.shape() == Shape{c_out},
              "conv1d: bias shape " + shape_str(bias.shape()) +
                  " does not match C_out " + std::to_string(c_out));

  bool rg = x.requires_grad() || w.requires_grad() ||
            (has_bias && bias.requires_grad());
  auto out = detail::make_node(Shape{batch, c_out, out_len}, rg);

  const std::int64_t patch_rows = c_in * kernel;
  const float* xd = x.data().data();
  const float* wd = w.data().data();
  const float* bd = has_bias ? bias.data().data() : nullptr;
  float* od = out->data.data();

  parallel_chunks(batch, [&](std::int64_t b0, std::int64_t b1, int) {
    std::vector<float> patches(patch_rows * out_len);
    detail::ECMap W(wd, c_out, patch_rows);
    for (std::int64_t b = b0; b < b1; ++b) {
      detail::im2col(xd + b * c_in * in_len, c_in, in_len, kernel, stride, pad,
                     out_len, patches.data());
      detail::ECMap P(patches.data(), patch_rows, out_len);
      detail::EMap Y(od + b * c_out * out_len, c_out, out_len);
      Y.noalias() = W * P;
      if (bd)
        for (std::int64_t c = 0; c < c_out; ++c)
          Y.row(c).array() += bd[c];
    }
  });

  if (rg) {
    auto xn = x.node(), wn = w.node();
    auto bn = has_bias ? bias.node() : nullptr;
    detail::TensorNode* o = out.get();
    out->parents = {xn, wn};
    if (bn) out->parents.push_back(bn);
    out->backward_fn = [o, xn, wn, bn, batch, c_in, in_len, c_out, kernel,
                        stride, pad, out_len, patch_rows] {
      const bool need_dx = xn->requires_grad;
      const bool need_dw = wn->requires_grad;
      const bool need_db = bn && bn->requires_grad;
      if (need_dx) xn->ensure_grad();
      if (need_dw) wn->ensure_grad();
      if (need_db) bn->ensure_grad();

      const int n_chunks = std::min<std::int64_t>(
          ThreadPool::instance().size(), batch);
      std::vector<std::vector<double>> dw_parts, db_parts;
      if (need_dw)
        dw_parts.assign(n_chunks, std::vector<double>(c_out * patch_rows, 0.0));
      if (need_db)
        db_parts.assign(n_chunks, std::vector<double>(c_out, 0.0));

      parallel_chunks(batch, [&](std::int64_t b0, std::int64_t b1, int chunk) {
        std::vector<float> patches(patch_rows * out_len);
        std::vector<float> dpatches(need_dx ? patch_rows * out_len : 0);
        std::vector<float> dw_local(need_dw ? c_out * patch_rows : 0, 0.0f);
        detail::ECMap W(wn->data.data(), c_out, patch_rows);
        for (std::int64_t b = b0; b < b1; ++b) {
          detail::ECMap G(o->grad.data() + b * c_out * out_len, c_out,
                          out_len);
          if (need_dw) {
            detail::im2col(xn->data.data() + b * c_in * in_len, c_in, in_len,
                           kernel, stride, pad, out_len, patches.data());
            detail::ECMap P(patches.data(), patch_rows, out_len);
            detail::EMap DW(dw_local.data(), c_out, patch_rows);
            DW.noalias() = G * P.transpose();
            auto& acc = dw_parts[chunk];
            for (std::int64_t i = 0; i < c_out * patch_rows; ++i)
              acc[i] += dw_local[i];
          }
          if (need_db) {
            auto& acc = db_parts[chunk];
            for (std::int64_t c = 0; c < c_out; ++c) {
              double s = 0.0;
              const float* g = o->grad.data() + (b * c_out + c) * out_len;
              for (std::int64_t t = 0; t < out_len; ++t) s += g[t];
              acc[c] += s;
            }
          }
          if (need_dx) {
            detail::EMap DP(dpatches.data(), patch_rows, out_len);
            DP.noalias() = W.transpose() * G;
            float* gx = xn->grad.data() + b * c_in * in_len;
            for (std::int64_t c = 0; c < c_in; ++c) {
              float* gxc = gx + c * in_len;
              for (std::int64_t i = 0; i < kernel; ++i) {
                const float* row = dpatches.data() + (c * kernel + i) * out_len;
                for (std::int64_t t = 0; t < out_len; ++t) {
                  const std::int64_t dst = t * stride + i - pad;
                  if (dst >= 0 && dst < in_len) gxc[dst] += row[t];
                }
              }
            }
          }
        }
      });
      // Fixed chunk-order reduction keeps results bit-reproducible.
      if (need_dw)
        for (int c = 0; c < n_chunks; ++c)
          for (std::int64_t i = 0; i < c_out * patch_rows; ++i)
            wn->grad[i] += static_cast<float>(dw_parts[c][i]);
      if (need_db)
        for (int c = 0; c < n_chunks; ++c)
          for (std::int64_t i = 0; i < c_out; ++i)
            bn->grad[i] += static_cast<float>(db_parts[c][i]);
    };
  }
  return Tensor(out);
}

inline Tensor conv1d(const Tensor& x, const Tensor& w, std::int64_t stride = 1,
                     std::int64_t pad = 0) {
  return conv1d(x, w, Tensor(), stride, pad);
}

/// Max pooling over the last axis of (B, C, L); padded positions never win.
inline Tensor maxpool1d(const Tensor& x, std::int64_t kernel,
                        std::int64_t stride, std::int64_t pad = 0) {
  check_arg(x.shape().size() == 3,
            "maxpool1d expects (B, C, L), got " + shape_str(x.shape()));
  check_arg(kernel >= 1 && stride >= 1 && pad >= 0 && pad < kernel,
            "maxpool1d: bad kernel/stride/pad");
  const std::int64_t batch = x.size(0), ch = x.size(1), in_len = x.size(2);
  const std::int64_t out_len = (in_len + 2 * pad - kernel) / stride + 1;
  check_arg(out_len >= 1, "maxpool1d: input length " + std::to_string(in_len) +
                              " too short for kernel " +
                              std::to_string(kernel));
  auto out = detail::make_node(Shape{batch, ch, out_len}, x.requires_grad());
  std::vector<std::int32_t> argmax(out->numel());
  const auto xd = x.data();
  detail::for_span(batch * ch, [&](std::int64_t bc0, std::int64_t bc1) {
    for (std::int64_t bc = bc0; bc < bc1; ++bc) {
      const float* in = xd.data() + bc * in_len;
      float* y = out->data.data() + bc * out_len;
      std::int32_t* am = argmax.data() + bc * out_len;
      for (std::int64_t o = 0; o < out_len; ++o) {
        float best = -std::numeric_limits<float>::infinity();
        std::int32_t best_i = -1;
        for (std::int64_t i = 0; i < kernel; ++i) {
          const std::int64_t src = o * stride + i - pad;
          if (src < 0 || src >= in_len) continue;
          if (in[src] > best) {
            best = in[src];
            best_i = static_cast<std::int32_t>(src);
          }
        }
        y[o] = best;
        am[o] = best_i;
      }
    }
  }, kernel * out_len);
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn, argmax = std::move(argmax), batch, ch, in_len,
                        out_len] {
      xn->ensure_grad();
      detail::for_span(batch * ch, [&](std::int64_t bc0, std::int64_t bc1) {
        for (std::int64_t bc = bc0; bc < bc1; ++bc) {
          const float* gy = o->grad.data() + bc * out_len;
          float* gx = xn->grad.data() + bc * in_len;
          const std::int32_t* am = argmax.data() + bc * out_len;
          for (std::int64_t t = 0; t < out_len; ++t)
            if (am[t] >= 0) gx[am[t]] += gy[t];
        }
      }, out_len);
    };
  }
  return Tensor(out);
}

/// Average pooling of (B, C, L) to a fixed number of output bins; bin i
/// covers [floor(i*L/out), ceil((i+1)*L/out)). Upsamples by replication when
/// out_len > L.
inline Tensor avgpool1d(const Tensor& x, std::int64_t out_len) {
  check_arg(x.shape().size() == 3,
            "avgpool1d expects (B, C, L), got " + shape_str(x.shape()));
  check_arg(out_len >= 1, "avgpool1d: output length must be positive");
  const std::int64_t batch = x.size(0), ch = x.size(1), in_len = x.size(2);
  auto out = detail::make_node(Shape{batch, ch, out_len}, x.requires_grad());
  std::vector<std::int32_t> starts(out_len), ends(out_len);
  for (std::int64_t o = 0; o < out_len; ++o) {
    starts[o] = static_cast<std::int32_t>((o * in_len) / out_len);
    ends[o] = static_cast<std::int32_t>(((o + 1) * in_len + out_len - 1) /
                                        out_len);
  }
  const auto xd = x.data();
  for (std::int64_t bc = 0; bc < batch * ch; ++bc) {
    const float* in = xd.data() + bc * in_len;
    float* y = out->data.data() + bc * out_len;
    for (std::int64_t o = 0; o < out_len; ++o) {
      double acc = 0.0;
      for (std::int32_t i = starts[o]; i < ends[o]; ++i) acc += in[i];
      y[o] = static_cast<float>(acc / (ends[o] - starts[o]));
    }
  }
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn, starts = std::move(starts),
                        ends = std::move(ends), batch, ch, in_len, out_len] {
      xn->ensure_grad();
      for (std::int64_t bc = 0; bc < batch * ch; ++bc) {
        const float* gy = o->grad.data() + bc * out_len;
        float* gx = xn->grad.data() + bc * in_len;
        for (std::int64_t t = 0; t < out_len; ++t) {
          const float g = gy[t] / (ends[t] - starts[t]);
          for (std::int32_t i = starts[t]; i < ends[t]; ++i) gx[i] += g;
        }
      }
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: survivors are scaled by 1/(1-rate) at sampling time, so
/// inactive evaluation needs no rescaling. rate == 0 or inactive is identity.
/// Element i keeps its value iff bits_at(base + i) >= rate * 2^64, a pure
/// function of the stream state, so the backward pass recomputes the mask
/// from the counters instead of storing it.
inline Tensor dropout(const Tensor& x, float rate, RngStream& rng,
                      bool active = true) {
  check_arg(rate >= 0.0f && rate < 1.0f,
            "dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!active || rate == 0.0f) return x;
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const float scale = 1.0f / (1.0f - rate);
  const std::uint64_t rate_bits =
      static_cast<std::uint64_t>(static_cast<double>(rate) * 0x1.0p64);
  const auto xd = x.data();
  const RngStream frozen = rng;  // keyed view; counter advances below
  const std::uint64_t base = rng.counter();
  rng.set_counter(base + out->numel());
  detail::for_span(out->numel(), [&](std::int64_t i0, std::int64_t i1) {
    for (std::int64_t i = i0; i < i1; ++i)
      out->data[i] =
          frozen.bits_at(base + i) >= rate_bits ? xd[i] * scale : 0.0f;
  });
  if (out->requires_grad) {
    auto xn = x.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn};
    out->backward_fn = [o, xn, frozen, base, rate_bits, scale] {
      xn->ensure_grad();
      detail::for_span(o->numel(), [&](std::int64_t i0, std::int64_t i1) {
        for (std::int64_t i = i0; i < i1; ++i)
          if (frozen.bits_at(base + i) >= rate_bits)
            xn->grad[i] += o->grad[i] * scale;
      });
    };
  }
  return Tensor(out);
}

// ---------------------------------------------------------------------------
// Batch normalisation over (B, C, L)
// ---------------------------------------------------------------------------

/// Training mode normalises with batch statistics and updates the running
/// estimates in place (momentum-weighted, unbiased variance); inference mode
/// uses the running estimates only.
inline Tensor batchnorm1d(const Tensor& x, const Tensor& gamma,
                          const Tensor& beta, std::span<float> running_mean,
                          std::span<float> running_var, bool training,
                          float momentum = 0.1f, float eps = 1e-5f) {
  check_arg(x.shape().size() == 3,
            "batchnorm1d expects (B, C, L), got " + shape_str(x.shape()));
  const std::int64_t batch = x.size(0), ch = x.size(1), len = x.size(2);
  check_arg(gamma.shape() == Shape{ch} && beta.shape() == Shape{ch},
            "batchnorm1d: gamma/beta must have shape (" + std::to_string(ch) +
                ")");
  check_arg(static_cast<std::int64_t>(running_mean.size()) == ch &&
                static_cast<std::int64_t>(running_var.size()) == ch,
            "batchnorm1d: running stats size mismatch");
  const std::int64_t n = batch * len;

  std::vector<float> mean_c(ch), inv_std_c(ch);
  if (training) {
    check_arg(n > 1, "batchnorm1d: need more than one value per channel");
    detail::for_span(ch, [&](std::int64_t c0, std::int64_t c1) {
      for (std::int64_t c = c0; c < c1; ++c) {
        double s = 0.0, s2 = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const float* in = x.data().data() + (b * ch + c) * len;
          for (std::int64_t l = 0; l < len; ++l) {
            s += in[l];
            s2 += double(in[l]) * in[l];
          }
        }
        const double mu = s / n;
        const double var = std::max(0.0, s2 / n - mu * mu);
        mean_c[c] = static_cast<float>(mu);
        inv_std_c[c] = static_cast<float>(1.0 / std::sqrt(var + eps));
        running_mean[c] = (1.0f - momentum) * running_mean[c] +
                          momentum * static_cast<float>(mu);
        running_var[c] =
            (1.0f - momentum) * running_var[c] +
            momentum * static_cast<float>(var * n / (n - 1));
      }
    }, n);
  } else {
    for (std::int64_t c = 0; c < ch; ++c) {
      mean_c[c] = running_mean[c];
      inv_std_c[c] = 1.0f / std::sqrt(running_var[c] + eps);
    }
  }

  bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  auto out = detail::make_node(x.shape(), rg);
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  detail::for_span(batch * ch, [&](std::int64_t bc0, std::int64_t bc1) {
    for (std::int64_t bc = bc0; bc < bc1; ++bc) {
      const std::int64_t c = bc % ch;
      const float* in = xd.data() + bc * len;
      float* y = out->data.data() + bc * len;
      const float mu = mean_c[c], is = inv_std_c[c], g = gd[c], be = bd[c];
      for (std::int64_t l = 0; l < len; ++l)
        y[l] = (in[l] - mu) * is * g + be;
    }
  }, len);

  if (rg) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    detail::TensorNode* o = out.get();
    out->parents = {xn, gn, bn};
    out->backward_fn = [o, xn, gn, bn, mean_c = std::move(mean_c),
                        inv_std_c = std::move(inv_std_c), batch, ch, len, n,
                        training] {
      const bool need_dx = xn->requires_grad;
      if (need_dx) xn->ensure_grad();
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      detail::for_span(ch, [&](std::int64_t c0, std::int64_t c1) {
      for (std::int64_t c = c0; c < c1; ++c) {
        const float mu = mean_c[c], is = inv_std_c[c];
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::int64_t b = 0; b < batch; ++b) {
          const float* in = xn->data.data() + (b * ch + c) * len;
          const float* gy = o->grad.data() + (b * ch + c) * len;
          for (std::int64_t l = 0; l < len; ++l) {
            sum_gy += gy[l];
            sum_gy_xhat += double(gy[l]) * (in[l] - mu) * is;
          }
        }
        if (gn->requires_grad)
          gn->grad[c] += static_cast<float>(sum_gy_xhat);
        if (bn->requires_grad) bn->grad[c] += static_cast<float>(sum_gy);
        if (!need_dx) continue;
        const float g = gn->data[c];
        if (training) {
          const float mean_gy = static_cast<float>(sum_gy / n);
          const float mean_gy_xhat = static_cast<float>(sum_gy_xhat / n);
          for (std::int64_t b = 0; b < batch; ++b) {
            const float* in = xn->data.data() + (b * ch + c) * len;
            const float* gy = o->grad.data() + (b * ch + c) * len;
            float* gx = xn->grad.data() + (b * ch + c) * len;
            for (std::int64_t l = 0; l < len; ++l) {
              const float xhat = (in[l] - mu) * is;
              gx[l] += g * is * (gy[l] - mean_gy - xhat * mean_gy_xhat);
            }
          }
        } else {
          for (std::int64_t b = 0; b < batch; ++b) {
            const float* gy = o->grad.data() + (b * ch + c) * len;
            float* gx = xn->grad.data() + (b * ch + c) * len;
            for (std::int64_t l = 0; l < len; ++l) gx[l] += g * is * gy[l];
          }
        }
      }
      }, n);
    };
  }
  return Tensor(out);
}

}  // namespace pulseuq
