// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <vector>

#include "msin/grad_check.hpp"
#include "msin/model.hpp"

namespace msin {

/// d_s=4, d_h=3, d_a=4, d_w=5, V=20, m=3, K=4, D=1.
inline ModelConfig tiny_config(Variant variant) {
  ModelConfig c;
  c.variant = variant;
  c.d_s = 4;
  c.d_h = 3;
  c.d_a = 4;
  c.d_w = 5;
  c.vocab_size = 20;
  c.window = 3;
  c.features = 1;
  c.max_len = 4;
  return c;
}

/// Random window and n documents of random lengths drawn from `rng`.
inline Sample random_sample(const ModelConfig& config, std::size_t n, Rng& rng) {
  Sample s;
  std::normal_distribution<float> val(0.0f, 1.0f);
  s.window.features = config.features;
  s.window.values.resize(config.window * config.features);
  for (auto& v : s.window.values) v = val(rng);
  s.window.target = val(rng);
  s.window.prev = s.window.values[(config.window - 1) * config.features];
  s.window.up = s.window.target >= s.window.prev;
  const std::size_t K = config.max_len;
  std::uniform_int_distribution<std::size_t> len(1, K);
  std::uniform_int_distribution<std::int32_t> tok(1, static_cast<std::int32_t>(config.vocab_size) - 1);
  s.docs.max_len = K;
  s.docs.tokens.assign(n * K, 0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto l = len(rng);
    s.docs.lengths.push_back(l);
    for (std::size_t k = 0; k < l; ++k) s.docs.tokens[j * K + k] = tok(rng);
  }
  s.docs.mask.assign(n, 1);
  s.docs.relevant.assign(n, std::nullopt);
  return s;
}

/// Central-difference check of every trainable tensor of one variant on a
/// random sample with n documents. Dropout must be off.
///
/// Parameters are redrawn uniformly from [-spread, spread] (padding row
/// kept at zero). At the training init the document vectors are nearly
/// identical, attention gradients nearly cancel and fall below what
/// central differences can resolve; a wider point avoids that.
inline GradCheckReport check_model_gradients(const ModelConfig& config, std::uint64_t seed,
                                             std::size_t n = 3, double h = 1e-5,
                                             double spread = 1.0) {
  if (config.dropout > 0.0) {
    throw DeterminismError("gradient check needs a deterministic forward pass; dropout " +
                           std::to_string(config.dropout) + " is enabled");
  }
  auto init_rng = make_stream(seed, "init");
  auto pf = init_params(config, init_rng);
  auto data_rng = make_stream(seed, "synth");
  const auto sample = random_sample(config, n, data_rng);
  auto p = pf.cast<double>();
  if (spread > 0.0) {
    std::uniform_real_distribution<double> u(-spread, spread);
    for (auto& slot : p.slots())
      for (auto& v : slot.tensor->values()) v = u(init_rng);
    for (std::size_t k = 0; k < p.embedding.dim(); ++k) p.embedding.table.at(0, k) = 0.0;
  }
  auto params = p.tensors();
  auto fn = [&](BasicTape<double>& tape) {
    auto pred = forward(tape, sample, p, config);
    auto l = loss(tape, pred, sample.window, p, config);
    if (pred.relevance.defined()) {
      // Couple the relevance vector directly so attention gradients are
      // exercised even where the head is insensitive to them.
      std::vector<double> w(pred.relevance.numel());
      for (std::size_t j = 0; j < w.size(); ++j) w[j] = 0.5 - 0.3 * double(j);
      l = tape.add(l, tape.sum(tape.hadamard(
                          pred.relevance, BasicTensor<double>::from_values({w.size()}, w))));
    }
    return l;
  };
  return grad_check(fn, params, h);
}

}  // namespace msin
