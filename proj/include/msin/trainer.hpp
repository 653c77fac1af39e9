// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "msin/data.hpp"
#include "msin/model.hpp"

namespace msin {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_steps = 2000;
  double clip_norm = 5.0;
  std::size_t patience = 10;  // evaluations without improvement
  std::uint64_t seed = 7;
  std::size_t eval_every = 50;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw UsageError("learning rate must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) {
      throw UsageError("adam betas must lie in (0, 1)");
    }
    if (!(eps > 0.0)) throw UsageError("adam eps must be positive");
    if (!(clip_norm > 0.0)) throw UsageError("clip norm must be positive");
    if (batch_size < 1) throw UsageError("batch size must be >= 1");
    if (patience < 1) throw UsageError("patience must be >= 1");
    if (eval_every < 1) throw UsageError("eval_every must be >= 1");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1},
          {"beta2", c.beta2},                 {"eps", c.eps},
          {"batch_size", c.batch_size},       {"max_steps", c.max_steps},
          {"clip_norm", c.clip_norm},         {"patience", c.patience},
          {"seed", c.seed},                   {"eval_every", c.eval_every}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
  return c;
}

/// Worker count from MSIN_THREADS, default 1.
inline std::size_t thread_count() {
  const char* env = std::getenv("MSIN_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError(std::string("MSIN_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(n);
}

/// Runs fn(i, worker) for i < n on up to `threads` workers. Worker w takes
/// indices w, w + T, ...; results must be written by index.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t, std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Copies parameter values of `src` into `dst` (same structure).
inline void copy_values(ModelParams<float>& dst, ModelParams<float>& src) {
  auto d = dst.slots();
  auto s = src.slots();
  for (std::size_t i = 0; i < s.size(); ++i)
    std::copy(s[i].tensor->values().begin(), s[i].tensor->values().end(),
              d[i].tensor->values().begin());
}

/// Mean data loss of `params` over `samples`, forward only.
inline double mean_data_loss(ModelParams<float>& params, const ModelConfig& config,
                             const std::vector<Sample>& samples, std::size_t threads = 1) {
  if (samples.empty()) throw ContractError("mean loss over an empty sample set");
  std::vector<double> losses(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i, std::size_t) {
    BasicTape<float> tape(false);
    auto pred = forward(tape, samples[i], params, config);
    losses[i] = data_loss(tape, pred, samples[i].window, config).item();
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / double(samples.size());
}

struct HistoryRow {
  std::size_t step = 0;
  std::optional<double> train_loss;
  std::optional<double> valid_loss;
};

inline void write_history(std::ostream& out, const std::vector<HistoryRow>& rows) {
  out << "step,train_loss,valid_loss\n";
  for (const auto& r : rows) {
    out << r.step << ',';
    if (r.train_loss) out << format_number(*r.train_loss);
    out << ',';
    if (r.valid_loss) out << format_number(*r.valid_loss);
    out << '\n';
  }
}

struct TrainResult {
  ModelParams<float> params;  // best validation parameters
  std::vector<HistoryRow> history;
  std::size_t steps = 0;
  std::size_t best_step = 0;
  double best_valid_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

/// Adam state over a flat parameter vector.
class Adam {
 public:
  Adam(const TrainConfig& c, std::size_t n) : c_(c), m_(n, 0.0f), v_(n, 0.0f) {}

  void step(ModelParams<float>& params, const std::vector<float>& grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(c_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(c_.beta2, double(t_));
    const float b1 = float(c_.beta1), b2 = float(c_.beta2);
    std::size_t k = 0;
    for (auto& s : params.slots()) {
      for (auto& w : s.tensor->values()) {
        const float g = grad[k];
        m_[k] = b1 * m_[k] + (1.0f - b1) * g;
        v_[k] = b2 * v_[k] + (1.0f - b2) * g * g;
        const double mhat = m_[k] / bc1, vhat = v_[k] / bc2;
        w -= float(c_.learning_rate * mhat / (std::sqrt(vhat) + c_.eps));
        ++k;
      }
    }
  }

 private:
  TrainConfig c_;
  std::vector<float> m_, v_;
  std::size_t t_ = 0;
};

/// Scales `grad` so its L2 norm is at most `max_norm`; returns the norm
/// before clipping.
inline double clip_global_norm(std::vector<float>& grad, double max_norm) {
  double sq = 0.0;
  for (float g : grad) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const float s = float(max_norm / norm);
    for (auto& g : grad) g *= s;
  }
  return norm;
}

/// Called after every step with the history row and the current parameters.
using TrainObserver = std::function<void(const HistoryRow&, ModelParams<float>&)>;

namespace detail {

inline void flatten_grad(ModelParams<float>& p, std::vector<float>& out) {
  std::size_t k = 0;
  for (auto& s : p.slots()) {
    auto* t = s.tensor;
    if (t->has_grad()) {
      std::copy(t->grad().begin(), t->grad().end(), out.begin() + std::ptrdiff_t(k));
    } else {
      std::fill_n(out.begin() + std::ptrdiff_t(k), t->numel(), 0.0f);
    }
    k += t->numel();
  }
}

}  // namespace detail

/// Mini-batch Adam on the training split with early stopping on the
/// validation split. Each sample gets its own tape; per-sample gradients
/// are reduced in sample order, so results do not depend on MSIN_THREADS.
inline TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& valid_set,
                         ModelParams<float> params, const ModelConfig& config,
                         const TrainConfig& tc, const TrainObserver& observer = {},
                         std::size_t threads = thread_count()) {
  config.validate();
  tc.validate();
  if (train_set.empty()) throw DatasetError("training split is empty");
  if (valid_set.empty()) throw DatasetError("validation split is empty");

  const std::size_t n_params = params.count();
  const std::size_t B = std::min(tc.batch_size, train_set.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, B));
  std::vector<ModelParams<float>> replicas;
  for (std::size_t w = 0; w < workers; ++w) replicas.push_back(params.clone());
  std::vector<std::vector<float>> sample_grads(B, std::vector<float>(n_params));
  std::vector<double> sample_loss(B);
  std::vector<float> grad(n_params);
  Adam adam(tc, n_params);

  TrainResult result;
  auto evaluate = [&](std::size_t step, std::optional<double> train_loss) {
    HistoryRow row{step, train_loss, std::nullopt};
    if (step % tc.eval_every == 0) {
      row.valid_loss = mean_data_loss(params, config, valid_set, threads);
      if (*row.valid_loss < result.best_valid_loss) {
        result.best_valid_loss = *row.valid_loss;
        result.best_step = step;
        result.params = params.clone();
      }
    }
    result.history.push_back(row);
    if (observer) observer(row, params);
    return row;
  };
  evaluate(0, std::nullopt);

  std::vector<std::size_t> order;
  std::size_t cursor = 0, epoch = 0, stale = 0;
  for (std::size_t step = 1; step <= tc.max_steps; ++step) {
    std::vector<std::size_t> batch;
    while (batch.size() < B) {
      if (cursor == order.size()) {
        order.resize(train_set.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        auto rng = make_stream(tc.seed, "shuffle", epoch++);
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
        if (!batch.empty()) break;
      }
      batch.push_back(order[cursor++]);
    }
    const std::size_t nb = batch.size();
    for (auto& r : replicas) copy_values(r, params);
    parallel_for(nb, workers, [&](std::size_t i, std::size_t w) {
      auto& rep = replicas[w];
      rep.zero_grad();
      Rng drop_rng = make_stream(tc.seed, "dropout", (step << 16) + i);
      DropoutSource drop{&drop_rng, config.dropout};
      BasicTape<float> tape;
      const auto& sample = train_set[batch[i]];
      auto pred = forward(tape, sample, rep, config, drop);
      auto l = data_loss(tape, pred, sample.window, config);
      sample_loss[i] = l.item();
      if (!std::isfinite(sample_loss[i])) return;
      tape.backward(l);
      detail::flatten_grad(rep, sample_grads[i]);
    });

    double data_total = 0.0;
    for (std::size_t i = 0; i < nb; ++i) data_total += sample_loss[i];
    std::fill(grad.begin(), grad.end(), 0.0f);
    for (std::size_t i = 0; i < nb; ++i)
      for (std::size_t k = 0; k < n_params; ++k) grad[k] += sample_grads[i][k];
    const float inv = 1.0f / float(nb);
    for (auto& g : grad) g *= inv;

    params.zero_grad();
    BasicTape<float> reg_tape;
    auto reg = regularization(reg_tape, params, config);
    double reg_value = reg.item();
    if (reg.requires_grad()) {
      reg_tape.backward(reg);
      std::vector<float> reg_grad(n_params);
      detail::flatten_grad(params, reg_grad);
      for (std::size_t k = 0; k < n_params; ++k) grad[k] += reg_grad[k];
    }
    const double batch_loss = data_total / double(nb) + reg_value;
    if (!std::isfinite(batch_loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step << "; batch samples [";
      for (std::size_t i = 0; i < nb; ++i) {
        msg << (i ? ", " : "") << batch[i] << " (" << train_set[batch[i]].window.date
            << ", data loss " << sample_loss[i] << ")";
      }
      msg << "]; regularization " << reg_value;
      throw NumericError(msg.str());
    }
    clip_global_norm(grad, tc.clip_norm);
    adam.step(params, grad);
    result.steps = step;

    auto row = evaluate(step, batch_loss);
    if (row.valid_loss) {
      if (result.best_step == step) {
        stale = 0;
      } else if (++stale >= tc.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  return result;
}

struct SearchSpace {
  std::vector<std::size_t> d_s{16, 32, 64, 128};
  std::vector<std::size_t> d_h{16, 32, 64, 128};
  std::vector<double> l1{0.1, 0.05, 0.01, 0.005, 0.001};
  std::vector<double> l2{0.1, 0.05, 0.01, 0.005, 0.001};
  std::vector<double> dropout{0.0, 0.1, 0.2, 0.4};
  std::vector<std::size_t> window{3, 5, 7, 10};
};

struct SearchEntry {
  std::size_t draw = 0;
  ModelConfig config;
  double valid_loss = 0.0;
  std::size_t best_step = 0;
};

struct SearchResult {
  ModelConfig best;
  std::vector<SearchEntry> leaderboard;  // ascending validation loss
};

/// Train and validation samples for a configuration (the window length
/// changes which samples exist).
using SplitProvider =
    std::function<std::pair<std::vector<Sample>, std::vector<Sample>>(const ModelConfig&)>;

/// Draws a configuration uniformly from the grids.
inline ModelConfig draw_config(const SearchSpace& space, const ModelConfig& base, Rng& rng) {
  auto pick = [&](const auto& grid) {
    if (grid.empty()) throw UsageError("empty search grid");
    std::uniform_int_distribution<std::size_t> d(0, grid.size() - 1);
    return grid[d(rng)];
  };
  ModelConfig c = base;
  c.d_s = pick(space.d_s);
  c.d_h = pick(space.d_h);
  c.l1 = pick(space.l1);
  c.l2 = pick(space.l2);
  c.dropout = pick(space.dropout);
  c.window = pick(space.window);
  return c;
}

/// Trains `budget` random configurations, each from its own "init" stream
/// of the search seed, and ranks them by best validation loss.
inline SearchResult random_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                                  const ModelConfig& base, const TrainConfig& tc,
                                  const SplitProvider& splits,
                                  std::size_t threads = thread_count()) {
  if (budget < 1) throw UsageError("search budget must be >= 1");
  auto rng = make_stream(seed, "search");
  SearchResult out;
  for (std::size_t d = 0; d < budget; ++d) {
    const auto config = draw_config(space, base, rng);
    auto [tr, va] = splits(config);
    auto init_rng = make_stream(seed, "init", d);
    TrainConfig run = tc;
    run.seed = seed + d;
    auto r = train(tr, va, init_params(config, init_rng), config, run, {}, threads);
    out.leaderboard.push_back({d, config, r.best_valid_loss, r.best_step});
  }
  std::stable_sort(out.leaderboard.begin(), out.leaderboard.end(),
                   [](const SearchEntry& a, const SearchEntry& b) {
                     return a.valid_loss < b.valid_loss;
                   });
  out.best = out.leaderboard.front().config;
  return out;
}

}  // namespace msin
