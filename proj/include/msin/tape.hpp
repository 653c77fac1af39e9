// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "msin/tensor.hpp"

namespace msin {

namespace detail {

/// Key giving IEEE values a total order (negatives below positives).
template <typename T>
auto order_key(T v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr U kSign = U(1) << (sizeof(T) * 8 - 1);
  U u = std::bit_cast<U>(v);
  return (u & kSign) ? U(~u) : U(u | kSign);
}

/// Sum whose result does not depend on the order of `terms`.
///
/// Terms are sorted before accumulation, so any permutation of the same
/// multiset produces the same bits. Used for every reduction across
/// documents.
template <typename T>
T canonical_sum(std::vector<T>& terms) {
  std::sort(terms.begin(), terms.end(),
            [](T a, T b) { return order_key(a) < order_key(b); });
  T acc = T(0);
  for (T t : terms) acc += t;
  return acc;
}

/// y += a x.
template <typename T>
void axpy(T a, const T* __restrict x, T* __restrict y, std::size_t n) {
  if (a == T(0)) return;
  for (std::size_t p = 0; p < n; ++p) y[p] += a * x[p];
}

/// Dot product over eight interleaved partial sums, combined pairwise. The
/// order is fixed, so results are reproducible, and the compiler can
/// vectorize the lanes.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T lane[8] = {};
  std::size_t p = 0;
  for (; p + 8 <= n; p += 8)
    for (std::size_t j = 0; j < 8; ++j) lane[j] += a[p + j] * b[p + j];
  for (std::size_t j = 0; p < n; ++p, ++j) lane[j] += a[p] * b[p];
  return ((lane[0] + lane[4]) + (lane[2] + lane[6])) + ((lane[1] + lane[5]) + (lane[3] + lane[7]));
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace detail

/// Records differentiable operations and replays their backward rules.
///
/// Every op returns a fresh tensor. When the tape is recording and at least
/// one operand requires a gradient, the op appends a backward rule and the
/// result requires a gradient too. A non-recording tape is a plain evaluator.
template <typename T>
class BasicTape {
 public:
  using TensorT = BasicTensor<T>;

  explicit BasicTape(bool recording = true) : recording_(recording) {}
  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Accumulates d(loss)/d(t) into the grad slot of every reachable tensor.
  void backward(const TensorT& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward needs a scalar loss, got " +
                          (loss.defined() ? shape_str(loss.shape())
                                          : std::string("undefined")));
    }
    if (!loss.requires_grad()) return;
    auto& g = grad_buf(loss.s_);
    g[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->out->grad.empty()) continue;
      it->rule();
    }
  }

  // ---------------------------------------------------------------- linear

  /// Standard product a[r x c] * b[c x k].
  TensorT matmul(const TensorT& a, const TensorT& b) {
    const std::size_t r = a.rows(), c = a.cols(), k = b.cols();
    if (b.rows() != c) {
      throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) +
                       " x " + shape_str(b.shape()));
    }
    std::vector<T> y(r * k, T(0));
    const T* A = a.data();
    const T* B = b.data();
    for (std::size_t i = 0; i < r; ++i) {
      T* yi = y.data() + i * k;
      for (std::size_t p = 0; p < c; ++p) {
        const T aip = A[i * c + p];
        const T* bp = B + p * k;
        for (std::size_t j = 0; j < k; ++j) yi[j] += aip * bp[j];
      }
    }
    auto out = make({r, k}, std::move(y));
    if (track(a, b)) {
      auto as = a.s_, bs = b.s_, os = out.s_;
      record(os, [as, bs, os, r, c, k] {
        const T* dy = os->grad.data();
        if (as->requires_grad) {
          T* da = grad_buf(as).data();
          const T* B = bs->value.data();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t p = 0; p < c; ++p) {
              T acc = T(0);
              for (std::size_t j = 0; j < k; ++j) acc += dy[i * k + j] * B[p * k + j];
              da[i * c + p] += acc;
            }
        }
        if (bs->requires_grad) {
          T* db = grad_buf(bs).data();
          const T* A = as->value.data();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t p = 0; p < c; ++p) {
              const T aip = A[i * c + p];
              for (std::size_t j = 0; j < k; ++j) db[p * k + j] += aip * dy[i * k + j];
            }
        }
      });
    }
    return out;
  }

  /// x[r x in] * w[out x in]^T, i.e. w applied to every row of x.
  TensorT linear(const TensorT& x, const TensorT& w) {
    const std::size_t r = x.rows(), in = x.cols(), o = w.rows();
    if (w.cols() != in) {
      throw ShapeError("linear: weight " + shape_str(w.shape()) +
                       " does not accept input " + shape_str(x.shape()));
    }
    std::vector<T> y(r * o);
    const T* X = x.data();
    const T* W = w.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t q = 0; q < o; ++q) {
        y[i * o + q] = detail::dot(X + i * in, W + q * in, in);
      }
    auto out = make({r, o}, std::move(y));
    if (track(x, w)) {
      auto xs = x.s_, ws = w.s_, os = out.s_;
      record(os, [xs, ws, os, r, in, o] {
        const T* dy = os->grad.data();
        if (xs->requires_grad) {
          T* dx = grad_buf(xs).data();
          const T* W = ws->value.data();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t q = 0; q < o; ++q)
              detail::axpy(dy[i * o + q], W + q * in, dx + i * in, in);
        }
        if (ws->requires_grad) {
          T* dw = grad_buf(ws).data();
          const T* X = xs->value.data();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t q = 0; q < o; ++q)
              detail::axpy(dy[i * o + q], X + i * in, dw + q * in, in);
        }
      });
    }
    return out;
  }

  // ----------------------------------------------------------- elementwise

  TensorT add(const TensorT& a, const TensorT& b) {
    require_same(a, b, "add");
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
    auto out = make(a.shape(), std::move(y));
    if (track(a, b)) {
      auto as = a.s_, bs = b.s_, os = out.s_;
      record(os, [as, bs, os] {
        accumulate(as, os->grad, T(1));
        accumulate(bs, os->grad, T(1));
      });
    }
    return out;
  }

  TensorT sub(const TensorT& a, const TensorT& b) {
    require_same(a, b, "sub");
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
    auto out = make(a.shape(), std::move(y));
    if (track(a, b)) {
      auto as = a.s_, bs = b.s_, os = out.s_;
      record(os, [as, bs, os] {
        accumulate(as, os->grad, T(1));
        accumulate(bs, os->grad, T(-1));
      });
    }
    return out;
  }

  TensorT hadamard(const TensorT& a, const TensorT& b) {
    require_same(a, b, "hadamard");
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
    auto out = make(a.shape(), std::move(y));
    if (track(a, b)) {
      auto as = a.s_, bs = b.s_, os = out.s_;
      record(os, [as, bs, os] {
        const auto& dy = os->grad;
        if (as->requires_grad) {
          auto& da = grad_buf(as);
          for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bs->value[i];
        }
        if (bs->requires_grad) {
          auto& db = grad_buf(bs);
          for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * as->value[i];
        }
      });
    }
    return out;
  }

  TensorT scale(const TensorT& a, T s) {
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * s;
    auto out = make(a.shape(), std::move(y));
    if (track(a)) {
      auto as = a.s_, os = out.s_;
      record(os, [as, os, s] { accumulate(as, os->grad, s); });
    }
    return out;
  }

  /// Adds a vector of length cols(x) to every row of x.
  TensorT add_row(const TensorT& x, const TensorT& bias) {
    const std::size_t r = x.rows(), c = x.cols();
    if (bias.numel() != c) {
      throw ShapeError("add_row: bias " + shape_str(bias.shape()) +
                       " does not match rows of " + shape_str(x.shape()));
    }
    std::vector<T> y(x.numel());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + j] + bias[j];
    auto out = make(x.shape(), std::move(y));
    if (track(x, bias)) {
      auto xs = x.s_, bs = bias.s_, os = out.s_;
      record(os, [xs, bs, os, r, c] {
        accumulate(xs, os->grad, T(1));
        if (bs->requires_grad) {
          auto& db = grad_buf(bs);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) db[j] += os->grad[i * c + j];
        }
      });
    }
    return out;
  }

  TensorT tanh(const TensorT& x) {
    return unary(x, [](T v) { return std::tanh(v); },
                 [](T, T y) { return T(1) - y * y; });
  }

  TensorT sigmoid(const TensorT& x) {
    return unary(x, [](T v) { return detail::sigmoid(v); },
                 [](T, T y) { return y * (T(1) - y); });
  }

  /// log(1 + exp(x)), evaluated without overflow.
  TensorT softplus(const TensorT& x) {
    return unary(
        x,
        [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
        [](T v, T) { return detail::sigmoid(v); });
  }

  TensorT square(const TensorT& x) {
    return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
  }

  /// |x| with subgradient 0 at the origin.
  TensorT abs(const TensorT& x) {
    return unary(x, [](T v) { return std::abs(v); },
                 [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
  }

  /// Clamp into [lo, hi]; the gradient is zero where clamping was active.
  TensorT clamp(const TensorT& x, T lo, T hi) {
    return unary(x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
                 [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1); });
  }

  // ------------------------------------------------------------- structure

  /// Concatenate along the last axis. Rank-1 parts give a rank-1 result.
  TensorT concat_cols(std::span<const TensorT> parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    const std::size_t r = parts[0].rows();
    bool all_rank1 = true;
    std::size_t total = 0;
    for (const auto& p : parts) {
      if (p.rows() != r) {
        throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) +
                         " vs " + shape_str(p.shape()));
      }
      all_rank1 = all_rank1 && p.rank() == 1;
      total += p.cols();
    }
    std::vector<T> y(r * total);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
      offsets.push_back(off);
      const std::size_t c = p.cols();
      for (std::size_t i = 0; i < r; ++i)
        std::copy_n(p.data() + i * c, c, y.data() + i * total + off);
      off += c;
    }
    auto out = make(all_rank1 ? Shape{total} : Shape{r, total}, std::move(y));
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (recording_ && any) {
      std::vector<std::shared_ptr<TensorStorage<T>>> ins;
      for (const auto& p : parts) ins.push_back(p.s_);
      auto os = out.s_;
      record(os, [ins, offsets, os, r, total] {
        for (std::size_t n = 0; n < ins.size(); ++n) {
          if (!ins[n]->requires_grad) continue;
          auto& d = grad_buf(ins[n]);
          const std::size_t c = ins[n]->shape.back();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              d[i * c + j] += os->grad[i * total + offsets[n] + j];
        }
      });
    }
    return out;
  }

  TensorT concat_cols(std::initializer_list<TensorT> parts) {
    return concat_cols(std::span<const TensorT>(parts.begin(), parts.size()));
  }

  /// Stack matrices with equal column counts on top of each other.
  TensorT concat_rows(std::span<const TensorT> parts) {
    if (parts.empty()) throw ShapeError("concat_rows of nothing");
    const std::size_t c = parts[0].cols();
    std::size_t total = 0;
    for (const auto& p : parts) {
      if (p.cols() != c) {
        throw ShapeError("concat_rows: column mismatch " +
                         shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
      }
      total += p.rows();
    }
    std::vector<T> y;
    y.reserve(total * c);
    for (const auto& p : parts) y.insert(y.end(), p.values().begin(), p.values().end());
    auto out = make({total, c}, std::move(y));
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (recording_ && any) {
      std::vector<std::shared_ptr<TensorStorage<T>>> ins;
      for (const auto& p : parts) ins.push_back(p.s_);
      auto os = out.s_;
      record(os, [ins, os] {
        std::size_t off = 0;
        for (const auto& in : ins) {
          const std::size_t n = in->value.size();
          if (in->requires_grad) {
            auto& d = grad_buf(in);
            for (std::size_t i = 0; i < n; ++i) d[i] += os->grad[off + i];
          }
          off += n;
        }
      });
    }
    return out;
  }

  TensorT slice_cols(const TensorT& x, std::size_t begin, std::size_t end) {
    const std::size_t r = x.rows(), c = x.cols();
    if (begin >= end || end > c) {
      throw ShapeError("slice_cols [" + std::to_string(begin) + "," +
                       std::to_string(end) + ") out of " + shape_str(x.shape()));
    }
    const std::size_t w = end - begin;
    std::vector<T> y(r * w);
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(x.data() + i * c + begin, w, y.data() + i * w);
    auto out = make(x.rank() == 1 ? Shape{w} : Shape{r, w}, std::move(y));
    if (track(x)) {
      auto xs = x.s_, os = out.s_;
      record(os, [xs, os, r, c, w, begin] {
        auto& d = grad_buf(xs);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) d[i * c + begin + j] += os->grad[i * w + j];
      });
    }
    return out;
  }

  TensorT slice_rows(const TensorT& x, std::size_t begin, std::size_t end) {
    const std::size_t r = x.rows(), c = x.cols();
    if (begin >= end || end > r) {
      throw ShapeError("slice_rows [" + std::to_string(begin) + "," +
                       std::to_string(end) + ") out of " + shape_str(x.shape()));
    }
    std::vector<T> y(x.data() + begin * c, x.data() + end * c);
    auto out = make({end - begin, c}, std::move(y));
    if (track(x)) {
      auto xs = x.s_, os = out.s_;
      record(os, [xs, os, begin, c] {
        auto& d = grad_buf(xs);
        for (std::size_t i = 0; i < os->grad.size(); ++i) d[begin * c + i] += os->grad[i];
      });
    }
    return out;
  }

  TensorT reshape(const TensorT& x, Shape shape) {
    check_shape(shape);
    if (shape_numel(shape) != x.numel()) {
      throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    auto out = make(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
    if (track(x)) {
      auto xs = x.s_, os = out.s_;
      record(os, [xs, os] { accumulate(xs, os->grad, T(1)); });
    }
    return out;
  }

  /// Row i of the result is row i of `a` where mask[i] is set, else of `b`.
  /// Rows are copied, never blended, so unselected values cannot leak.
  TensorT where_rows(std::span<const std::uint8_t> mask, const TensorT& a,
                     const TensorT& b) {
    require_same(a, b, "where_rows");
    const std::size_t r = a.rows(), c = a.cols();
    if (mask.size() != r) {
      throw ShapeError("where_rows: mask of " + std::to_string(mask.size()) +
                       " for " + shape_str(a.shape()));
    }
    std::vector<T> y(a.numel());
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n((mask[i] ? a : b).data() + i * c, c, y.data() + i * c);
    auto out = make(a.shape(), std::move(y));
    if (track(a, b)) {
      auto as = a.s_, bs = b.s_, os = out.s_;
      Mask m(mask.begin(), mask.end());
      record(os, [as, bs, os, m, c] {
        for (std::size_t i = 0; i < m.size(); ++i) {
          auto& target = m[i] ? as : bs;
          if (!target->requires_grad) continue;
          auto& d = grad_buf(target);
          for (std::size_t j = 0; j < c; ++j) d[i * c + j] += os->grad[i * c + j];
        }
      });
    }
    return out;
  }

  /// Multiplies row i of x by w[i].
  TensorT scale_rows(const TensorT& x, const TensorT& w) {
    const std::size_t r = x.rows(), c = x.cols();
    if (w.numel() != r) {
      throw ShapeError("scale_rows: weights " + shape_str(w.shape()) + " for " +
                       shape_str(x.shape()));
    }
    std::vector<T> y(x.numel());
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + j] * w[i];
    auto out = make(x.shape(), std::move(y));
    if (track(x, w)) {
      auto xs = x.s_, ws = w.s_, os = out.s_;
      record(os, [xs, ws, os, r, c] {
        const auto& dy = os->grad;
        if (xs->requires_grad) {
          auto& dx = grad_buf(xs);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += dy[i * c + j] * ws->value[i];
        }
        if (ws->requires_grad) {
          auto& dw = grad_buf(ws);
          for (std::size_t i = 0; i < r; ++i) {
            T acc = T(0);
            for (std::size_t j = 0; j < c; ++j) acc += dy[i * c + j] * xs->value[i * c + j];
            dw[i] += acc;
          }
        }
      });
    }
    return out;
  }

  /// sum_i w[i] * x[i, :] as a 1 x c row. Permutation invariant bit for bit.
  TensorT weighted_sum_rows(const TensorT& w, const TensorT& x) {
    const std::size_t r = x.rows(), c = x.cols();
    if (w.numel() != r) {
      throw ShapeError("weighted_sum_rows: weights " + shape_str(w.shape()) +
                       " for " + shape_str(x.shape()));
    }
    std::vector<T> y(c);
    std::vector<T> terms(r);
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t i = 0; i < r; ++i) terms[i] = w[i] * x[i * c + j];
      y[j] = detail::canonical_sum(terms);
    }
    auto out = make({1, c}, std::move(y));
    if (track(w, x)) {
      auto ws = w.s_, xs = x.s_, os = out.s_;
      record(os, [ws, xs, os, r, c] {
        const auto& dy = os->grad;
        if (ws->requires_grad) {
          auto& dw = grad_buf(ws);
          for (std::size_t i = 0; i < r; ++i) {
            T acc = T(0);
            for (std::size_t j = 0; j < c; ++j) acc += dy[j] * xs->value[i * c + j];
            dw[i] += acc;
          }
        }
        if (xs->requires_grad) {
          auto& dx = grad_buf(xs);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += ws->value[i] * dy[j];
        }
      });
    }
    return out;
  }

  /// Gathers table rows. Id 0 is padding: it yields a zero row and
  /// receives no gradient.
  TensorT gather_rows(const TensorT& table, std::span<const std::int32_t> ids) {
    const std::size_t v = table.rows(), d = table.cols();
    if (ids.empty()) throw ShapeError("gather_rows with no ids");
    std::vector<T> y(ids.size() * d, T(0));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto id = ids[i];
      if (id < 0 || static_cast<std::size_t>(id) >= v) {
        throw VocabularyError("token id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(v));
      }
      if (id == 0) continue;
      std::copy_n(table.data() + static_cast<std::size_t>(id) * d, d, y.data() + i * d);
    }
    auto out = make({ids.size(), d}, std::move(y));
    if (track(table)) {
      auto ts = table.s_, os = out.s_;
      std::vector<std::int32_t> idv(ids.begin(), ids.end());
      record(os, [ts, os, idv, d] {
        auto& g = grad_buf(ts);
        for (std::size_t i = 0; i < idv.size(); ++i) {
          if (idv[i] == 0) continue;
          const std::size_t row = static_cast<std::size_t>(idv[i]) * d;
          for (std::size_t j = 0; j < d; ++j) g[row + j] += os->grad[i * d + j];
        }
      });
    }
    return out;
  }

  // ------------------------------------------------------------ reductions

  TensorT sum(const TensorT& x) {
    T acc = T(0);
    for (T v : x.values()) acc += v;
    auto out = make({1}, {acc});
    if (track(x)) {
      auto xs = x.s_, os = out.s_;
      record(os, [xs, os] {
        auto& d = grad_buf(xs);
        for (auto& g : d) g += os->grad[0];
      });
    }
    return out;
  }

  /// Mean over `axis`. Rank 1: axis 0 gives a scalar. Rank 2: axis 0 gives
  /// a 1 x c row, axis 1 an r x 1 column.
  TensorT mean(const TensorT& x, std::size_t axis) {
    if (axis >= x.rank()) {
      throw ShapeError("mean over axis " + std::to_string(axis) + " of " +
                       shape_str(x.shape()));
    }
    const std::size_t r = x.rows(), c = x.cols();
    const bool over_rows = x.rank() == 2 && axis == 0;
    const std::size_t n = x.rank() == 1 ? c : (over_rows ? r : c);
    Shape shape = x.rank() == 1 ? Shape{1} : (over_rows ? Shape{1, c} : Shape{r, 1});
    std::vector<T> y(shape_numel(shape), T(0));
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t o = x.rank() == 1 ? 0 : (over_rows ? j : i);
        y[o] += x[i * c + j];
      }
    for (auto& v : y) v /= static_cast<T>(n);
    auto out = make(std::move(shape), std::move(y));
    if (track(x)) {
      auto xs = x.s_, os = out.s_;
      const bool rank1 = x.rank() == 1;
      record(os, [xs, os, r, c, n, rank1, over_rows] {
        auto& d = grad_buf(xs);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t o = rank1 ? 0 : (over_rows ? j : i);
            d[i * c + j] += os->grad[o] / static_cast<T>(n);
          }
      });
    }
    return out;
  }

  /// Softmax along the last axis restricted to entries where mask is set.
  ///
  /// Masked entries come out as exact zeros. Logits are shifted by the
  /// unmasked row maximum before exponentiation.
  TensorT masked_softmax(const TensorT& logits, std::span<const std::uint8_t> mask) {
    const std::size_t r = logits.rows(), c = logits.cols();
    if (mask.size() != logits.numel()) {
      throw ShapeError("masked_softmax: mask of " + std::to_string(mask.size()) +
                       " for logits " + shape_str(logits.shape()));
    }
    std::vector<T> y(logits.numel(), T(0));
    std::vector<T> terms;
    for (std::size_t i = 0; i < r; ++i) {
      const T* x = logits.data() + i * c;
      const std::uint8_t* m = mask.data() + i * c;
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < c; ++j)
        if (m[j]) {
          mx = any ? std::max(mx, x[j]) : x[j];
          any = true;
        }
      if (!any) {
        throw DegenerateMaskError("masked_softmax: row " + std::to_string(i) +
                                  " has no unmasked entry");
      }
      terms.clear();
      for (std::size_t j = 0; j < c; ++j)
        if (m[j]) {
          y[i * c + j] = std::exp(x[j] - mx);
          terms.push_back(y[i * c + j]);
        }
      const T z = detail::canonical_sum(terms);
      for (std::size_t j = 0; j < c; ++j)
        if (m[j]) y[i * c + j] /= z;
    }
    auto out = make(logits.shape(), std::move(y));
    if (track(logits)) {
      auto ls = logits.s_, os = out.s_;
      Mask mv(mask.begin(), mask.end());
      record(os, [ls, os, mv, r, c] {
        auto& d = grad_buf(ls);
        const auto& y = os->value;
        const auto& dy = os->grad;
        std::vector<T> terms;
        for (std::size_t i = 0; i < r; ++i) {
          terms.clear();
          for (std::size_t j = 0; j < c; ++j)
            if (mv[i * c + j]) terms.push_back(y[i * c + j] * dy[i * c + j]);
          const T dot = detail::canonical_sum(terms);
          for (std::size_t j = 0; j < c; ++j)
            if (mv[i * c + j]) d[i * c + j] += y[i * c + j] * (dy[i * c + j] - dot);
        }
      });
    }
    return out;
  }

 private:
  using StoragePtr = std::shared_ptr<TensorStorage<T>>;

  struct Node {
    StoragePtr out;
    std::function<void()> rule;
  };

  static TensorT make(Shape shape, std::vector<T> values) {
    return TensorT(std::move(shape), std::move(values), false);
  }

  static std::vector<T>& grad_buf(const StoragePtr& s) {
    if (s->grad.empty()) s->grad.assign(s->value.size(), T(0));
    return s->grad;
  }

  static void accumulate(const StoragePtr& s, const std::vector<T>& g, T factor) {
    if (!s->requires_grad) return;
    auto& d = grad_buf(s);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += factor * g[i];
  }

  static void require_same(const TensorT& a, const TensorT& b, const char* op) {
    if (a.shape() != b.shape()) {
      throw ShapeError(std::string(op) + ": shapes differ " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
    }
  }

  template <typename... Ts>
  bool track(const Ts&... ins) const {
    return recording_ && (ins.requires_grad() || ...);
  }

  void record(const StoragePtr& out, std::function<void()> rule) {
    out->requires_grad = true;
    nodes_.push_back(Node{out, std::move(rule)});
  }

  template <typename F, typename G>
  TensorT unary(const TensorT& x, F f, G df) {
    std::vector<T> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
    auto out = make(x.shape(), std::move(y));
    if (track(x)) {
      auto xs = x.s_, os = out.s_;
      record(os, [xs, os, df] {
        auto& d = grad_buf(xs);
        for (std::size_t i = 0; i < d.size(); ++i)
          d[i] += os->grad[i] * df(xs->value[i], os->value[i]);
      });
    }
    return out;
  }

  bool recording_;
  std::vector<Node> nodes_;
};

using Tape = BasicTape<float>;

}  // namespace msin
