// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msin/msin_cell.hpp"
#include "msin/text_encoder.hpp"

namespace msin {

enum class Variant { kMsin, kLstmWo, kLstmPar };
enum class Objective { kNextValue, kMovement };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::kMsin: return "msin";
    case Variant::kLstmWo: return "lstm_wo";
    case Variant::kLstmPar: return "lstm_par";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "msin") return Variant::kMsin;
  if (s == "lstm_wo") return Variant::kLstmWo;
  if (s == "lstm_par") return Variant::kLstmPar;
  throw UsageError("unknown variant '" + s + "' (msin, lstm_wo, lstm_par)");
}

inline std::string to_string(Objective o) {
  return o == Objective::kNextValue ? "next_value" : "movement";
}

inline Objective parse_objective(const std::string& s) {
  if (s == "next_value") return Objective::kNextValue;
  if (s == "movement") return Objective::kMovement;
  throw UsageError("unknown objective '" + s + "' (next_value, movement)");
}

inline std::string to_string(PoolDivisor d) {
  return d == PoolDivisor::kActualLength ? "actual_len" : "max_len";
}

inline PoolDivisor parse_pool_divisor(const std::string& s) {
  if (s == "actual_len") return PoolDivisor::kActualLength;
  if (s == "max_len") return PoolDivisor::kMaxLength;
  throw UsageError("unknown pool divisor '" + s + "' (actual_len, max_len)");
}

struct ModelConfig {
  Variant variant = Variant::kMsin;
  std::size_t d_s = 32;
  std::size_t d_h = 32;
  std::size_t d_w = 50;
  std::size_t d_a = 0;  // 0 means d_s
  std::size_t vocab_size = 5000;
  std::size_t window = 5;  // m
  std::size_t features = 1;  // D
  std::size_t max_len = 16;  // K
  std::size_t daily_doc_cap = 25;
  double dropout = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  Objective objective = Objective::kNextValue;
  PoolDivisor pool_divisor = PoolDivisor::kActualLength;

  std::size_t attention_width() const { return d_a == 0 ? d_s : d_a; }

  void validate() const {
    if (window < 1) throw UsageError("window (m) must be >= 1");
    if (daily_doc_cap < 1) throw UsageError("daily doc cap must be >= 1");
    if (vocab_size < 2) throw UsageError("vocabulary size must be >= 2");
    if (d_s < 1 || d_h < 1 || d_w < 1 || features < 1 || max_len < 1) {
      throw UsageError("model dimensions must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout must lie in [0, 1)");
    if (l1 < 0.0 || l2 < 0.0) throw UsageError("l1/l2 must be non-negative");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"d_s", c.d_s},
          {"d_h", c.d_h},
          {"d_w", c.d_w},
          {"d_a", c.attention_width()},
          {"vocab_size", c.vocab_size},
          {"window", c.window},
          {"features", c.features},
          {"max_len", c.max_len},
          {"daily_doc_cap", c.daily_doc_cap},
          {"dropout", c.dropout},
          {"l1", c.l1},
          {"l2", c.l2},
          {"objective", to_string(c.objective)},
          {"pool_divisor", to_string(c.pool_divisor)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.d_s = j.at("d_s").get<std::size_t>();
  c.d_h = j.at("d_h").get<std::size_t>();
  c.d_w = j.at("d_w").get<std::size_t>();
  c.d_a = j.at("d_a").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.features = j.at("features").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.daily_doc_cap = j.at("daily_doc_cap").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.l1 = j.at("l1").get<double>();
  c.l2 = j.at("l2").get<double>();
  c.objective = parse_objective(j.at("objective").get<std::string>());
  c.pool_divisor = parse_pool_divisor(j.at("pool_divisor").get<std::string>());
  return c;
}

enum class ParamRole { kEmbedding, kWeight, kBias };

template <typename T>
struct ParamSlot {
  std::string name;
  BasicTensor<T>* tensor;
  ParamRole role;
};

/// Every trainable tensor of one model variant. Slots a variant does not
/// use stay undefined.
template <typename T>
struct ModelParams {
  EmbeddingTable<T> embedding;
  TextEncoderParams<T> encoder;
  MsinParams<T> cell;
  BasicTensor<T> text_w, text_b;  // lstm_par text branch
  BasicTensor<T> head_w, head_b;

  /// Canonical ordered list of slots, defined or not.
  std::vector<ParamSlot<T>> all_slots() {
    using R = ParamRole;
    std::vector<ParamSlot<T>> s = {
        {"embedding.table", &embedding.table, R::kEmbedding},
        {"encoder.fwd.w_ih", &encoder.fwd.w_ih, R::kWeight},
        {"encoder.fwd.w_hh", &encoder.fwd.w_hh, R::kWeight},
        {"encoder.fwd.b", &encoder.fwd.bias, R::kBias},
        {"encoder.bwd.w_ih", &encoder.bwd.w_ih, R::kWeight},
        {"encoder.bwd.w_hh", &encoder.bwd.w_hh, R::kWeight},
        {"encoder.bwd.b", &encoder.bwd.bias, R::kBias},
        {"encoder.pool.u", &encoder.pool_u, R::kWeight},
        {"encoder.pool.w", &encoder.pool_w, R::kWeight},
        {"encoder.pool.b", &encoder.pool_b, R::kBias},
        {"cell.u_c0", &cell.u_c0, R::kWeight},
        {"cell.u_h0", &cell.u_h0, R::kWeight},
        {"cell.b_c0", &cell.b_c0, R::kBias},
        {"cell.b_h0", &cell.b_h0, R::kBias},
        {"cell.w_a", &cell.w_a, R::kWeight},
        {"cell.u_a", &cell.u_a, R::kWeight},
        {"cell.b_a", &cell.b_a, R::kBias},
        {"cell.v_a", &cell.v_a, R::kWeight},
    };
    auto gate = [&](const char* g, GateWeights<T>& w) {
      const std::string base = "cell.";
      s.push_back({base + "u_" + g + "x", &w.ux, R::kWeight});
      s.push_back({base + "u_" + g + "h", &w.uh, R::kWeight});
      s.push_back({base + "u_" + g + "v", &w.uv, R::kWeight});
      s.push_back({base + "b_" + g, &w.b, R::kBias});
    };
    gate("i", cell.input);
    gate("f", cell.forget);
    gate("o", cell.output);
    gate("c", cell.cell);
    s.push_back({"text.w", &text_w, R::kWeight});
    s.push_back({"text.b", &text_b, R::kBias});
    s.push_back({"head.w", &head_w, R::kWeight});
    s.push_back({"head.b", &head_b, R::kBias});
    return s;
  }

  /// Defined slots only, in canonical order.
  std::vector<ParamSlot<T>> slots() {
    std::vector<ParamSlot<T>> out;
    for (auto& s : all_slots())
      if (s.tensor->defined()) out.push_back(s);
    return out;
  }

  std::vector<BasicTensor<T>> tensors() {
    std::vector<BasicTensor<T>> out;
    for (auto& s : slots()) out.push_back(*s.tensor);
    return out;
  }

  std::size_t count() {
    std::size_t n = 0;
    for (auto& s : slots()) n += s.tensor->numel();
    return n;
  }

  /// Deep copy in precision U.
  template <typename U>
  ModelParams<U> cast() {
    ModelParams<U> out;
    auto src = all_slots();
    auto dst = out.all_slots();
    for (std::size_t i = 0; i < src.size(); ++i)
      if (src[i].tensor->defined()) *dst[i].tensor = src[i].tensor->template cast<U>();
    return out;
  }

  ModelParams clone() { return cast<T>(); }

  void zero_grad() {
    for (auto& s : slots()) s.tensor->zero_grad();
  }
};

/// Draws a fresh parameter set for `config` from the "init" stream of `rng`.
inline ModelParams<float> init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams<float> p;
  const std::size_t doc_dim = 2 * config.d_h;
  p.embedding = init_embedding(config.vocab_size, config.d_w, rng);
  p.encoder = init_text_encoder(config.d_w, config.d_h, rng);
  CellShapes shapes;
  shapes.d_s = config.d_s;
  shapes.d_a = config.attention_width();
  shapes.doc_dim = doc_dim;
  shapes.features = config.features;
  shapes.context = config.variant == Variant::kMsin;
  shapes.init_maps = config.variant == Variant::kMsin;
  shapes.attention = config.variant != Variant::kLstmPar;
  p.cell = init_msin(shapes, rng);
  std::size_t head_in = config.d_s + doc_dim;
  if (config.variant == Variant::kLstmPar) {
    p.text_w = init_weight({config.d_s, doc_dim}, rng, "text.w");
    p.text_b = init_bias(config.d_s, "text.b");
    head_in = 2 * config.d_s;
  }
  p.head_w = init_weight({1, head_in}, rng, "head.w");
  p.head_b = init_bias(1, "head.b");
  return p;
}

/// Window rows plus prediction target, all in normalized series space.
struct SeriesWindow {
  std::vector<float> values;  // m x D, oldest first
  std::size_t features = 1;
  float target = 0.0f;        // x_t, first feature
  float prev = 0.0f;          // x_{t-1}, first feature
  bool up = true;             // raw x_t - x_{t-1} >= 0
  std::string date;

  std::size_t length() const { return values.size() / features; }
};

struct Sample {
  SeriesWindow window;
  DocumentBatch docs;
};

template <typename T>
struct Prediction {
  BasicTensor<T> value;      // scalar
  BasicTensor<T> relevance;  // n, undefined for lstm_par
  AttentionTrace<T> trace;   // MSIN: p_1..p_m; lstm_wo: the single pass
  BasicTensor<T> hiddens;    // m x d_s series hidden states
  BasicTensor<T> docs;       // n x 2h document rows

  bool up() const { return value.item() >= T(0); }
};

/// Source of dropout masks; absent means no dropout.
struct DropoutSource {
  Rng* rng = nullptr;
  double rate = 0.0;
};

namespace detail {

template <typename T>
BasicTensor<T> window_tensor(const SeriesWindow& w) {
  std::vector<T> v(w.values.begin(), w.values.end());
  return BasicTensor<T>::from_values({w.length(), w.features}, std::move(v));
}

template <typename T>
BasicTensor<T> apply_dropout(BasicTape<T>& tape, const BasicTensor<T>& x,
                             const DropoutSource& drop) {
  if (drop.rng == nullptr || drop.rate <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - drop.rate);
  const T scale = T(1) / static_cast<T>(1.0 - drop.rate);
  std::vector<T> m(x.numel());
  for (auto& v : m) v = keep(*drop.rng) ? scale : T(0);
  return tape.hadamard(x, BasicTensor<T>::from_values(x.shape(), std::move(m)));
}

template <typename T>
BasicTensor<T> dense_head(BasicTape<T>& tape, const BasicTensor<T>& features,
                          const ModelParams<T>& p, const DropoutSource& drop) {
  auto z = apply_dropout(tape, features, drop);
  return tape.reshape(tape.add_row(tape.linear(z, p.head_w), p.head_b), {1});
}

}  // namespace detail

/// Text encoder, MSIN over the window, then [h_m ; sum_j p_mj s_j] -> dense.
template <typename T>
Prediction<T> forward_msin(BasicTape<T>& tape, const Sample& sample,
                           const ModelParams<T>& p, const ModelConfig& config,
                           const DropoutSource& drop = {}) {
  Prediction<T> pred;
  auto rep = encode_documents(tape, sample.docs, p.embedding, p.encoder, config.pool_divisor);
  pred.docs = rep.vectors;
  auto window = detail::window_tensor<T>(sample.window);
  auto seq = run_sequence(tape, window, rep.vectors, sample.docs.mask, p.cell);
  pred.hiddens = seq.hiddens;
  pred.trace = seq.trace;
  pred.relevance = seq.trace.final();
  auto u_txt = tape.weighted_sum_rows(pred.relevance, rep.vectors);
  pred.value = detail::dense_head(tape, tape.concat_cols({seq.last.h, u_txt}), p, drop);
  return pred;
}

/// Conventional LSTM from zero states, one attention pass at its last state.
template <typename T>
Prediction<T> forward_lstm_wo(BasicTape<T>& tape, const Sample& sample,
                              const ModelParams<T>& p, const ModelConfig& config,
                              const DropoutSource& drop = {}) {
  Prediction<T> pred;
  auto rep = encode_documents(tape, sample.docs, p.embedding, p.encoder, config.pool_divisor);
  pred.docs = rep.vectors;
  auto window = detail::window_tensor<T>(sample.window);
  auto zero = BasicTensor<T>::zeros({1, config.d_s});
  auto seq = run_plain_lstm(tape, window, zero, zero, p.cell);
  pred.hiddens = seq.hiddens;
  pred.relevance = attend(tape, seq.last.h, rep.vectors, sample.docs.mask, p.cell);
  pred.trace.per_step.push_back(pred.relevance);
  auto u_txt = tape.weighted_sum_rows(pred.relevance, rep.vectors);
  pred.value = detail::dense_head(tape, tape.concat_cols({seq.last.h, u_txt}), p, drop);
  return pred;
}

/// Series LSTM and mean-pooled text branch run independently, fused at the
/// dense layer. No relevance output.
template <typename T>
Prediction<T> forward_lstm_par(BasicTape<T>& tape, const Sample& sample,
                               const ModelParams<T>& p, const ModelConfig& config,
                               const DropoutSource& drop = {}) {
  Prediction<T> pred;
  auto rep = encode_documents(tape, sample.docs, p.embedding, p.encoder, config.pool_divisor);
  pred.docs = rep.vectors;
  auto window = detail::window_tensor<T>(sample.window);
  auto zero = BasicTensor<T>::zeros({1, config.d_s});
  auto seq = run_plain_lstm(tape, window, zero, zero, p.cell);
  pred.hiddens = seq.hiddens;
  const auto& mask = sample.docs.mask;
  const std::size_t valid = detail::count_valid(mask);
  if (valid == 0) throw EmptyDayError("no valid documents");
  std::vector<T> w(mask.size(), T(0));
  for (std::size_t j = 0; j < w.size(); ++j)
    if (mask[j]) w[j] = T(1) / static_cast<T>(valid);
  auto mean = tape.weighted_sum_rows(BasicTensor<T>::from_values({mask.size()}, std::move(w)),
                                     rep.vectors);
  auto text = tape.tanh(tape.add_row(tape.linear(mean, p.text_w), p.text_b));
  pred.value = detail::dense_head(tape, tape.concat_cols({seq.last.h, text}), p, drop);
  return pred;
}

template <typename T>
Prediction<T> forward(BasicTape<T>& tape, const Sample& sample, const ModelParams<T>& p,
                      const ModelConfig& config, const DropoutSource& drop = {}) {
  if (sample.docs.size() == 0) throw EmptyDayError("sample has no documents");
  switch (config.variant) {
    case Variant::kMsin: return forward_msin(tape, sample, p, config, drop);
    case Variant::kLstmWo: return forward_lstm_wo(tape, sample, p, config, drop);
    case Variant::kLstmPar: return forward_lstm_par(tape, sample, p, config, drop);
  }
  throw UsageError("unknown variant");
}

/// Squared error on the next value, or logistic loss on the movement label.
template <typename T>
BasicTensor<T> data_loss(BasicTape<T>& tape, const Prediction<T>& pred,
                         const SeriesWindow& target, const ModelConfig& config) {
  if (config.objective == Objective::kNextValue) {
    auto t = BasicTensor<T>::scalar(static_cast<T>(target.target));
    return tape.square(tape.sub(pred.value, t));
  }
  // softplus(z) - y z is the cross entropy of sigmoid(z) against y.
  const T y = target.up ? T(1) : T(0);
  return tape.sub(tape.softplus(pred.value), tape.scale(pred.value, y));
}

/// l1 * sum|w| + l2 * sum w^2 over weights (embedding and biases excluded).
template <typename T>
BasicTensor<T> regularization(BasicTape<T>& tape, ModelParams<T>& p,
                              const ModelConfig& config) {
  auto total = BasicTensor<T>::scalar(T(0));
  if (config.l1 == 0.0 && config.l2 == 0.0) return total;
  for (auto& s : p.slots()) {
    if (s.role != ParamRole::kWeight) continue;
    if (config.l1 != 0.0)
      total = tape.add(total, tape.scale(tape.sum(tape.abs(*s.tensor)), T(config.l1)));
    if (config.l2 != 0.0)
      total = tape.add(total, tape.scale(tape.sum(tape.square(*s.tensor)), T(config.l2)));
  }
  return total;
}

template <typename T>
BasicTensor<T> loss(BasicTape<T>& tape, const Prediction<T>& pred, const SeriesWindow& target,
                    ModelParams<T>& p, const ModelConfig& config) {
  return tape.add(data_loss(tape, pred, target, config), regularization(tape, p, config));
}

/// Movement implied by a prediction: the sign of the predicted change for
/// the regression objective, the logit sign for the movement objective.
template <typename T>
bool predicted_up(const Prediction<T>& pred, const SeriesWindow& w, const ModelConfig& config) {
  const double v = pred.value.item();
  if (config.objective == Objective::kMovement) return v >= 0.0;
  return v - w.prev >= 0.0;
}

}  // namespace msin
