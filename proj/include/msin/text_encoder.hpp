// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msin/init.hpp"
#include "msin/tape.hpp"

namespace msin {

/// One day's tokenized documents, padded to a common length.
struct DocumentBatch {
  std::size_t max_len = 0;              // K
  std::vector<std::int32_t> tokens;     // n x K, 0 = padding
  std::vector<std::size_t> lengths;     // valid tokens per document
  Mask mask;                            // documents taking part in attention
  std::vector<std::optional<bool>> relevant;  // ground truth, evaluator only
  std::vector<std::string> texts;       // original text, for display

  std::size_t size() const { return lengths.size(); }
  std::span<const std::int32_t> doc(std::size_t j) const {
    return {tokens.data() + j * max_len, max_len};
  }
};

enum class PoolDivisor { kActualLength, kMaxLength };

/// Word embedding matrix, one row per vocabulary id. Row 0 is padding.
template <typename T>
struct EmbeddingTable {
  BasicTensor<T> table;  // V x d_w
  std::size_t vocab_size() const { return table.rows(); }
  std::size_t dim() const { return table.cols(); }
};

/// Fused weights of one LSTM direction; gate blocks ordered i, f, o, g.
template <typename T>
struct LstmWeights {
  BasicTensor<T> w_ih;  // 4h x in
  BasicTensor<T> w_hh;  // 4h x h
  BasicTensor<T> bias;  // 4h
  std::size_t hidden() const { return w_hh.cols(); }
};

template <typename T>
struct TextEncoderParams {
  LstmWeights<T> fwd;
  LstmWeights<T> bwd;
  BasicTensor<T> pool_u;  // 2h
  BasicTensor<T> pool_w;  // 2h x 2h
  BasicTensor<T> pool_b;  // 2h
};

template <typename T>
struct DocRepresentation {
  BasicTensor<T> vectors;         // n x 2h, the s_j rows
  BasicTensor<T> word_attention;  // n x K, zero beyond each document length
};

inline EmbeddingTable<float> init_embedding(std::size_t vocab, std::size_t dim, Rng& rng) {
  if (vocab < 2) throw VocabularyError("vocabulary needs at least pad and unk");
  EmbeddingTable<float> e{init_weight({vocab, dim}, rng, "embedding.table")};
  for (std::size_t j = 0; j < dim; ++j) e.table.at(0, j) = 0.0f;
  return e;
}

inline LstmWeights<float> init_lstm(std::size_t in, std::size_t hidden, Rng& rng,
                                    const std::string& prefix) {
  LstmWeights<float> w;
  w.w_ih = init_weight({4 * hidden, in}, rng, prefix + ".w_ih");
  w.w_hh = init_weight({4 * hidden, hidden}, rng, prefix + ".w_hh");
  w.bias = init_bias(4 * hidden, prefix + ".b");
  for (std::size_t j = hidden; j < 2 * hidden; ++j) w.bias[j] = 1.0f;  // forget gate
  return w;
}

inline TextEncoderParams<float> init_text_encoder(std::size_t d_w, std::size_t d_h,
                                                  Rng& rng) {
  TextEncoderParams<float> p;
  p.fwd = init_lstm(d_w, d_h, rng, "encoder.fwd");
  p.bwd = init_lstm(d_w, d_h, rng, "encoder.bwd");
  p.pool_w = init_weight({2 * d_h, 2 * d_h}, rng, "encoder.pool.w");
  p.pool_b = init_bias(2 * d_h, "encoder.pool.b");
  auto u = init_weight({1, 2 * d_h}, rng, "encoder.pool.u");
  p.pool_u = BasicTensor<float>::from_values({2 * d_h},
                                             {u.values().begin(), u.values().end()}, true);
  p.pool_u.set_name("encoder.pool.u");
  return p;
}

namespace detail {

/// Runs one LSTM direction over K positions for a block of n documents.
/// valid[l][j] says whether position l belongs to document j. Invalid
/// positions leave the state untouched and emit a zero row.
template <typename T>
std::vector<BasicTensor<T>> lstm_direction(BasicTape<T>& tape,
                                           std::span<const BasicTensor<T>> inputs,
                                           const std::vector<Mask>& valid,
                                           const LstmWeights<T>& w, bool reverse) {
  const std::size_t K = inputs.size();
  const std::size_t n = inputs[0].rows();
  const std::size_t h = w.hidden();
  auto zeros = BasicTensor<T>::zeros({n, h});
  BasicTensor<T> c = zeros, hid = zeros;
  std::vector<BasicTensor<T>> out(K);
  for (std::size_t step = 0; step < K; ++step) {
    const std::size_t l = reverse ? K - 1 - step : step;
    auto pre = tape.add_row(
        tape.add(tape.linear(inputs[l], w.w_ih), tape.linear(hid, w.w_hh)), w.bias);
    auto act = tape.sigmoid(pre);
    auto i = tape.slice_cols(act, 0, h);
    auto f = tape.slice_cols(act, h, 2 * h);
    auto o = tape.slice_cols(act, 2 * h, 3 * h);
    auto g = tape.tanh(tape.slice_cols(pre, 3 * h, 4 * h));
    auto c_new = tape.add(tape.hadamard(f, c), tape.hadamard(i, g));
    auto h_new = tape.hadamard(o, tape.tanh(c_new));
    c = tape.where_rows(valid[l], c_new, c);
    hid = tape.where_rows(valid[l], h_new, hid);
    out[l] = tape.where_rows(valid[l], h_new, zeros);
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> bilstm_block(BasicTape<T>& tape,
                                         std::span<const BasicTensor<T>> inputs,
                                         const std::vector<Mask>& valid,
                                         const TextEncoderParams<T>& p) {
  auto fwd = lstm_direction(tape, inputs, valid, p.fwd, false);
  auto bwd = lstm_direction(tape, inputs, valid, p.bwd, true);
  std::vector<BasicTensor<T>> out(inputs.size());
  for (std::size_t l = 0; l < inputs.size(); ++l) out[l] = tape.concat_cols({fwd[l], bwd[l]});
  return out;
}

/// Attention-weighted mean pooling over positions for a block of documents.
/// Returns (s [n x 2h], beta [n x K]).
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> pool_block(
    BasicTape<T>& tape, std::span<const BasicTensor<T>> hidden,
    std::span<const std::size_t> lengths, const TextEncoderParams<T>& p,
    PoolDivisor divisor) {
  const std::size_t K = hidden.size();
  const std::size_t n = lengths.size();
  std::vector<BasicTensor<T>> scores(K);
  for (std::size_t l = 0; l < K; ++l) {
    auto a = tape.tanh(tape.add_row(tape.linear(hidden[l], p.pool_w), p.pool_b));
    scores[l] = tape.linear(a, p.pool_u);
  }
  auto logits = tape.concat_cols(scores);
  Mask valid(n * K, 0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t l = 0; l < lengths[j]; ++l) valid[j * K + l] = 1;
  auto beta = tape.masked_softmax(logits, valid);
  BasicTensor<T> acc;
  for (std::size_t l = 0; l < K; ++l) {
    auto term = tape.scale_rows(hidden[l], tape.slice_cols(beta, l, l + 1));
    acc = l == 0 ? term : tape.add(acc, term);
  }
  std::vector<T> inv(n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto d = divisor == PoolDivisor::kMaxLength ? K : lengths[j];
    inv[j] = T(1) / static_cast<T>(d);
  }
  auto s = tape.scale_rows(acc, BasicTensor<T>::from_values({n}, std::move(inv)));
  return {s, beta};
}

}  // namespace detail

/// Rows of the embedding table for `ids`; padding id 0 yields zeros.
template <typename T>
BasicTensor<T> embed_lookup(BasicTape<T>& tape, std::span<const std::int32_t> ids,
                            const EmbeddingTable<T>& table) {
  return tape.gather_rows(table.table, ids);
}

/// Bidirectional LSTM over one document. Rows at or beyond `length` are zero.
template <typename T>
BasicTensor<T> bilstm_forward(BasicTape<T>& tape, const BasicTensor<T>& embeds,
                              std::size_t length, const TextEncoderParams<T>& p) {
  const std::size_t K = embeds.rows();
  if (length < 1) throw EmptyDocumentError("document has no tokens");
  if (length > K) {
    throw ShapeError("document length " + std::to_string(length) + " exceeds " +
                     std::to_string(K) + " embedded rows");
  }
  std::vector<BasicTensor<T>> inputs(K);
  std::vector<Mask> valid(K);
  for (std::size_t l = 0; l < K; ++l) {
    inputs[l] = tape.slice_rows(embeds, l, l + 1);
    valid[l] = Mask{static_cast<std::uint8_t>(l < length)};
  }
  auto rows = detail::bilstm_block<T>(tape, inputs, valid, p);
  return tape.concat_rows(rows);
}

/// Pools BiLSTM rows of one document into (s [2h], beta [length]).
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> attention_pool(
    BasicTape<T>& tape, const BasicTensor<T>& hiddens, std::size_t length,
    const TextEncoderParams<T>& p, PoolDivisor divisor = PoolDivisor::kActualLength) {
  const std::size_t K = hiddens.rows();
  if (length < 1) throw EmptyDocumentError("document has no tokens");
  if (length > K) throw ShapeError("pool length exceeds hidden rows");
  std::vector<BasicTensor<T>> rows(K);
  for (std::size_t l = 0; l < K; ++l) rows[l] = tape.slice_rows(hiddens, l, l + 1);
  const std::size_t len[] = {length};
  auto [s, beta] = detail::pool_block<T>(tape, rows, len, p, divisor);
  return {tape.reshape(s, {s.cols()}), tape.slice_cols(tape.reshape(beta, {K}), 0, length)};
}

/// Encodes every document of the batch into one representative row.
template <typename T>
DocRepresentation<T> encode_documents(BasicTape<T>& tape, const DocumentBatch& batch,
                                      const EmbeddingTable<T>& table,
                                      const TextEncoderParams<T>& p,
                                      PoolDivisor divisor = PoolDivisor::kActualLength) {
  const std::size_t n = batch.size();
  const std::size_t K = batch.max_len;
  if (n == 0) throw EmptyDayError("no documents to encode");
  if (batch.tokens.size() != n * K) {
    throw ShapeError("document batch holds " + std::to_string(batch.tokens.size()) +
                     " tokens, expected " + std::to_string(n * K));
  }
  const auto V = static_cast<std::int32_t>(table.vocab_size());
  for (std::size_t j = 0; j < n; ++j) {
    const auto len = batch.lengths[j];
    if (len < 1) throw EmptyDocumentError("document " + std::to_string(j) + " has no tokens");
    if (len > K) {
      throw ShapeError("document " + std::to_string(j) + ": length " + std::to_string(len) +
                       " exceeds max_len " + std::to_string(K));
    }
    for (auto id : batch.doc(j)) {
      if (id < 0 || id >= V) {
        throw VocabularyError("document " + std::to_string(j) + ": token id " +
                              std::to_string(id) + " outside vocabulary of " +
                              std::to_string(V));
      }
    }
  }
  std::vector<BasicTensor<T>> inputs(K);
  std::vector<Mask> valid(K, Mask(n, 0));
  std::vector<std::int32_t> ids(n);
  for (std::size_t l = 0; l < K; ++l) {
    for (std::size_t j = 0; j < n; ++j) {
      ids[j] = batch.tokens[j * K + l];
      valid[l][j] = l < batch.lengths[j];
    }
    inputs[l] = embed_lookup(tape, ids, table);
  }
  auto hidden = detail::bilstm_block<T>(tape, inputs, valid, p);
  auto [s, beta] = detail::pool_block<T>(tape, hidden, batch.lengths, p, divisor);
  return {s, beta};
}

}  // namespace msin
