// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "msin/tape.hpp"

namespace msin {

struct TensorGradError {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double tape_grad = 0.0;
  double fd_grad = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<TensorGradError> per_tensor;
};

/// Scalar objective evaluated on a caller-supplied tape.
using GradCheckFn = std::function<BasicTensor<double>(BasicTape<double>&)>;

/// |a - b| / max(|a|, |b|, 1e-8).
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares reverse-mode gradients against central differences.
///
/// Everything runs in double precision. `f` must be deterministic: it is
/// evaluated twice up front and any bitwise disagreement raises
/// DeterminismError. Gradients already held by `params` are discarded.
inline GradCheckReport grad_check(const GradCheckFn& f,
                                  std::span<BasicTensor<double>> params,
                                  double h = 1e-5) {
  auto eval = [&f] {
    BasicTape<double> tape(false);
    auto out = f(tape);
    if (out.numel() != 1) throw ContractError("grad_check objective is not scalar");
    return out.item();
  };

  const double first = eval();
  const double second = eval();
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw DeterminismError("objective differs between two identical forward passes (" +
                           std::to_string(first) + " vs " + std::to_string(second) +
                           "); disable dropout and other stochastic layers");
  }

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  {
    BasicTape<double> tape;
    auto loss = f(tape);
    tape.backward(loss);
  }

  GradCheckReport report;
  for (auto& p : params) {
    TensorGradError te;
    te.name = p.name();
    std::vector<double> tape_grad(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), tape_grad.begin());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double up = eval();
      p[i] = saved - h;
      const double down = eval();
      p[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double err = relative_error(tape_grad[i], fd);
      if (err > te.max_rel_err || i == 0) {
        te.max_rel_err = std::max(te.max_rel_err, err);
        te.worst_index = i;
        te.tape_grad = tape_grad[i];
        te.fd_grad = fd;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, te.max_rel_err);
    report.per_tensor.push_back(std::move(te));
  }
  return report;
}

}  // namespace msin
