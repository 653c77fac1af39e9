// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>

#include "msin/rng.hpp"
#include "msin/tensor.hpp"

namespace msin {

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights; fan_in is the last dim.
inline Tensor init_weight(Shape shape, Rng& rng, std::string name) {
  auto t = Tensor::zeros(std::move(shape), true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = static_cast<float>(dist(rng));
  t.set_name(std::move(name));
  return t;
}

inline Tensor init_bias(std::size_t n, std::string name, float value = 0.0f) {
  auto t = Tensor::filled({n}, value, true);
  t.set_name(std::move(name));
  return t;
}

}  // namespace msin
