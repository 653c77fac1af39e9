// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "msin/init.hpp"
#include "msin/tape.hpp"

namespace msin {

/// Weights of one gate family. `uv` is left undefined for a plain LSTM.
template <typename T>
struct GateWeights {
  BasicTensor<T> ux;  // d_s x D
  BasicTensor<T> uh;  // d_s x d_s
  BasicTensor<T> uv;  // d_s x 2h
  BasicTensor<T> b;   // d_s
};

/// Parameters of the multi-step interrelation cell.
///
/// Matrices are stored output x input and applied as W * x. Shapes:
/// u_c0, u_h0: d_s x 2h; w_a: d_a x d_s; u_a: d_a x 2h; v_a: d_a.
template <typename T>
struct MsinParams {
  BasicTensor<T> u_c0, u_h0, b_c0, b_h0;
  BasicTensor<T> w_a, u_a, b_a, v_a;
  GateWeights<T> input, forget, output, cell;
};

template <typename T>
struct MsinState {
  BasicTensor<T> c;  // 1 x d_s
  BasicTensor<T> h;  // 1 x d_s
  BasicTensor<T> v;  // 1 x 2h
  BasicTensor<T> p;  // n, unset before the first step
};

template <typename T>
struct AttentionTrace {
  std::vector<BasicTensor<T>> per_step;  // p_1 .. p_m
  const BasicTensor<T>& final() const { return per_step.back(); }
};

template <typename T>
struct SequenceOutput {
  BasicTensor<T> hiddens;  // m x d_s
  AttentionTrace<T> trace;
  MsinState<T> last;
};

inline constexpr double kLogitClamp = 50.0;

struct CellShapes {
  std::size_t d_s = 0, d_a = 0, doc_dim = 0, features = 0;
  bool context = true;     // allocate uv (MSIN); plain LSTM leaves it out
  bool init_maps = true;   // allocate u_c0/u_h0/b_c0/b_h0
  bool attention = true;   // allocate w_a/u_a/b_a/v_a
};

inline MsinParams<float> init_msin(const CellShapes& s, Rng& rng,
                                   const std::string& prefix = "cell") {
  MsinParams<float> p;
  if (s.init_maps) {
    p.u_c0 = init_weight({s.d_s, s.doc_dim}, rng, prefix + ".u_c0");
    p.u_h0 = init_weight({s.d_s, s.doc_dim}, rng, prefix + ".u_h0");
    p.b_c0 = init_bias(s.d_s, prefix + ".b_c0");
    p.b_h0 = init_bias(s.d_s, prefix + ".b_h0");
  }
  if (s.attention) {
    p.w_a = init_weight({s.d_a, s.d_s}, rng, prefix + ".w_a");
    p.u_a = init_weight({s.d_a, s.doc_dim}, rng, prefix + ".u_a");
    p.b_a = init_bias(s.d_a, prefix + ".b_a");
    auto v = init_weight({1, s.d_a}, rng, prefix + ".v_a");
    p.v_a = Tensor::from_values({s.d_a}, {v.values().begin(), v.values().end()}, true);
    p.v_a.set_name(prefix + ".v_a");
  }
  auto gate = [&](const char* g, float bias) {
    GateWeights<float> w;
    const std::string base = prefix + ".";
    w.ux = init_weight({s.d_s, s.features}, rng, base + "u_" + g + "x");
    w.uh = init_weight({s.d_s, s.d_s}, rng, base + "u_" + g + "h");
    if (s.context) w.uv = init_weight({s.d_s, s.doc_dim}, rng, base + "u_" + g + "v");
    w.b = init_bias(s.d_s, base + "b_" + g, bias);
    return w;
  };
  p.input = gate("i", 0.0f);
  p.forget = gate("f", 1.0f);
  p.output = gate("o", 0.0f);
  p.cell = gate("c", 0.0f);
  return p;
}

namespace detail {

inline std::size_t count_valid(std::span<const std::uint8_t> mask) {
  std::size_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

template <typename T>
void check_mask(const BasicTensor<T>& docs, std::span<const std::uint8_t> mask) {
  if (mask.size() != docs.rows()) {
    throw ShapeError("document mask of " + std::to_string(mask.size()) + " for " +
                     std::to_string(docs.rows()) + " documents");
  }
}

/// U_x x + U_h h (+ U_v v) + b. The context term is skipped when `v` or
/// `w.uv` is undefined.
template <typename T>
BasicTensor<T> gate_preact(BasicTape<T>& tape, const BasicTensor<T>& x,
                           const BasicTensor<T>& h, const BasicTensor<T>& v,
                           const GateWeights<T>& w) {
  auto acc = tape.add(tape.linear(x, w.ux), tape.linear(h, w.uh));
  if (v.defined() && w.uv.defined()) acc = tape.add(acc, tape.linear(v, w.uv));
  return tape.add_row(acc, w.b);
}

/// Gate, cell and hidden update shared by the MSIN cell and the plain LSTM.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> lstm_update(
    BasicTape<T>& tape, const BasicTensor<T>& x, const BasicTensor<T>& c_prev,
    const BasicTensor<T>& h_prev, const BasicTensor<T>& v, const MsinParams<T>& p) {
  auto i = tape.sigmoid(gate_preact(tape, x, h_prev, v, p.input));
  auto f = tape.sigmoid(gate_preact(tape, x, h_prev, v, p.forget));
  auto o = tape.sigmoid(gate_preact(tape, x, h_prev, v, p.output));
  auto g = tape.tanh(gate_preact(tape, x, h_prev, v, p.cell));
  auto c = tape.add(tape.hadamard(f, c_prev), tape.hadamard(i, g));
  auto h = tape.hadamard(o, tape.tanh(c));
  return {c, h};
}

}  // namespace detail

/// c_0 and h_0 from the mean of the valid document rows; v_0 = 0.
template <typename T>
MsinState<T> init_states(BasicTape<T>& tape, const BasicTensor<T>& docs,
                         std::span<const std::uint8_t> mask, const MsinParams<T>& p) {
  detail::check_mask(docs, mask);
  const std::size_t valid = detail::count_valid(mask);
  if (valid == 0) throw EmptyDayError("no valid documents for state initialization");
  std::vector<T> w(docs.rows(), T(0));
  for (std::size_t j = 0; j < w.size(); ++j)
    if (mask[j]) w[j] = T(1) / static_cast<T>(valid);
  auto mean = tape.weighted_sum_rows(
      BasicTensor<T>::from_values({docs.rows()}, std::move(w)), docs);
  MsinState<T> s;
  s.c = tape.tanh(tape.add_row(tape.linear(mean, p.u_c0), p.b_c0));
  s.h = tape.tanh(tape.add_row(tape.linear(mean, p.u_h0), p.b_h0));
  s.v = BasicTensor<T>::zeros({1, docs.cols()});
  return s;
}

/// Attention mass over the documents given the previous hidden state.
template <typename T>
BasicTensor<T> attend(BasicTape<T>& tape, const BasicTensor<T>& h_prev,
                      const BasicTensor<T>& docs, std::span<const std::uint8_t> mask,
                      const MsinParams<T>& p) {
  detail::check_mask(docs, mask);
  auto query = tape.add_row(tape.linear(h_prev, p.w_a), p.b_a);
  auto a = tape.tanh(tape.add_row(tape.linear(docs, p.u_a), query));
  auto logits = tape.reshape(tape.linear(a, p.v_a), {docs.rows()});
  logits = tape.clamp(logits, T(-kLogitClamp), T(kLogitClamp));
  return tape.masked_softmax(logits, mask);
}

/// v = (sum_j p_j s_j + v_prev) / 2.
template <typename T>
BasicTensor<T> update_context(BasicTape<T>& tape, const BasicTensor<T>& p,
                              const BasicTensor<T>& docs, const BasicTensor<T>& v_prev) {
  auto summary = tape.weighted_sum_rows(p, docs);
  return tape.scale(tape.add(summary, tape.reshape(v_prev, summary.shape())), T(0.5));
}

/// One step: attend, context, gates, cell, hidden.
template <typename T>
MsinState<T> cell_step(BasicTape<T>& tape, const BasicTensor<T>& x,
                       const MsinState<T>& state, const BasicTensor<T>& docs,
                       std::span<const std::uint8_t> mask, const MsinParams<T>& p) {
  MsinState<T> next;
  next.p = attend(tape, state.h, docs, mask, p);
  next.v = update_context(tape, next.p, docs, state.v);
  auto [c, h] = detail::lstm_update(tape, x, state.c, state.h, next.v, p);
  next.c = c;
  next.h = h;
  return next;
}

/// Runs the cell over the m window rows (m x D) against the n documents.
template <typename T>
SequenceOutput<T> run_sequence(BasicTape<T>& tape, const BasicTensor<T>& window,
                               const BasicTensor<T>& docs,
                               std::span<const std::uint8_t> mask,
                               const MsinParams<T>& p) {
  const std::size_t m = window.rows();
  SequenceOutput<T> out;
  auto state = init_states(tape, docs, mask, p);
  std::vector<BasicTensor<T>> hs;
  for (std::size_t l = 0; l < m; ++l) {
    state = cell_step(tape, tape.slice_rows(window, l, l + 1), state, docs, mask, p);
    hs.push_back(state.h);
    out.trace.per_step.push_back(state.p);
  }
  out.hiddens = tape.concat_rows(hs);
  out.last = state;
  return out;
}

/// Conventional LSTM over the window from the given initial states, using
/// the gate weights of `p` without any context term.
template <typename T>
SequenceOutput<T> run_plain_lstm(BasicTape<T>& tape, const BasicTensor<T>& window,
                                 const BasicTensor<T>& c0, const BasicTensor<T>& h0,
                                 const MsinParams<T>& p) {
  const std::size_t m = window.rows();
  SequenceOutput<T> out;
  MsinState<T> state{c0, h0, {}, {}};
  std::vector<BasicTensor<T>> hs;
  for (std::size_t l = 0; l < m; ++l) {
    auto [c, h] = detail::lstm_update(tape, tape.slice_rows(window, l, l + 1), state.c,
                                      state.h, BasicTensor<T>{}, p);
    state.c = c;
    state.h = h;
    hs.push_back(h);
  }
  out.hiddens = tape.concat_rows(hs);
  out.last = state;
  return out;
}

}  // namespace msin
