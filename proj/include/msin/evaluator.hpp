// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msin/model.hpp"
#include "msin/trainer.hpp"

namespace msin {

/// Document indices by descending mass, ties by ascending index.
inline std::vector<std::size_t> rank_order(const std::vector<double>& mass) {
  std::vector<std::size_t> order(mass.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mass[a] > mass[b]; });
  return order;
}

struct DayRanking {
  std::string date;
  std::vector<double> mass;
  std::vector<std::size_t> gtn;  // ascending
  std::vector<std::size_t> ranked;
};

/// Builds a ranking; `mass` must be a distribution over the day's documents.
inline DayRanking make_day_ranking(std::string date, std::vector<double> mass,
                                   std::vector<std::size_t> gtn) {
  if (mass.empty()) throw ContractError("ranking of day " + date + " has no documents");
  double total = 0.0;
  for (double m : mass) {
    if (!(m >= 0.0)) throw ContractError("negative or NaN mass on day " + date);
    total += m;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("mass on day " + date + " sums to " + std::to_string(total));
  }
  std::sort(gtn.begin(), gtn.end());
  gtn.erase(std::unique(gtn.begin(), gtn.end()), gtn.end());
  for (auto g : gtn)
    if (g >= mass.size()) throw ContractError("ground-truth index out of range on day " + date);
  DayRanking d{std::move(date), std::move(mass), std::move(gtn), {}};
  d.ranked = rank_order(d.mass);
  return d;
}

/// Shortest descending-mass prefix whose cumulative mass reaches 0.5.
/// Masses are used as given (published tables are rounded and need not
/// sum to one).
inline std::vector<std::size_t> select_relevant(const std::vector<double>& mass) {
  std::vector<std::size_t> out;
  double cum = 0.0;
  for (auto j : rank_order(mass)) {
    out.push_back(j);
    cum += mass[j];
    if (cum >= 0.5) break;
  }
  return out;
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t gtd = 0;  // days averaged over
};

/// Pre@k and Rec@k averaged over days with at least one ground-truth
/// document. Precision divides by min(k, n_i), recall by min(k, |gtn_i|).
inline PrecisionRecall precision_recall_at_k(const std::vector<DayRanking>& days, std::size_t k) {
  if (k < 1) throw UsageError("k must be >= 1");
  PrecisionRecall pr;
  for (const auto& d : days) {
    if (d.gtn.empty()) continue;
    const std::size_t top = std::min(k, d.ranked.size());
    std::size_t tp = 0;
    for (std::size_t r = 0; r < top; ++r)
      tp += std::binary_search(d.gtn.begin(), d.gtn.end(), d.ranked[r]);
    pr.precision += double(tp) / double(top);
    pr.recall += double(tp) / double(std::min(k, d.gtn.size()));
    ++pr.gtd;
  }
  if (pr.gtd == 0) {
    throw UndefinedMetricError("precision/recall at k undefined: no day has a ground-truth document");
  }
  pr.precision /= double(pr.gtd);
  pr.recall /= double(pr.gtd);
  return pr;
}

struct MovementMetrics {
  std::size_t n = 0;
  std::size_t tp_up = 0, fp_up = 0, tp_down = 0, fp_down = 0;
  double accuracy = 0.0;
  std::optional<double> up_precision, up_recall, down_precision, down_recall;
};

/// Confusion-matrix metrics for {up, down}. Rates with a zero denominator
/// are left empty.
inline MovementMetrics movement_metrics(const std::vector<bool>& predicted,
                                        const std::vector<bool>& actual) {
  if (predicted.empty()) throw UsageError("movement metrics need at least one prediction");
  if (predicted.size() != actual.size()) {
    throw ContractError("movement metrics: " + std::to_string(predicted.size()) +
                        " predictions for " + std::to_string(actual.size()) + " targets");
  }
  MovementMetrics m;
  m.n = predicted.size();
  for (std::size_t i = 0; i < m.n; ++i) {
    if (predicted[i]) (actual[i] ? m.tp_up : m.fp_up)++;
    else (actual[i] ? m.fp_down : m.tp_down)++;
  }
  auto rate = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return double(num) / double(den);
  };
  const std::size_t actual_up = m.tp_up + m.fp_down, actual_down = m.tp_down + m.fp_up;
  m.accuracy = double(m.tp_up + m.tp_down) / double(m.n);
  m.up_precision = rate(m.tp_up, m.tp_up + m.fp_up);
  m.up_recall = rate(m.tp_up, actual_up);
  m.down_precision = rate(m.tp_down, m.tp_down + m.fp_down);
  m.down_recall = rate(m.tp_down, actual_down);
  return m;
}

inline nlohmann::json to_json(const MovementMetrics& m) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"n", m.n},
          {"accuracy", m.accuracy},
          {"precision", {{"up", opt(m.up_precision)}, {"down", opt(m.down_precision)}}},
          {"recall", {{"up", opt(m.up_recall)}, {"down", opt(m.down_recall)}}}};
}

struct RankReport {
  std::string config_hash;
  bool relevance_available = false;
  std::string relevance_note;  // why relevance metrics are missing
  std::vector<DayRanking> days;
  std::vector<std::vector<std::size_t>> selected;
  std::vector<std::pair<std::size_t, PrecisionRecall>> per_k;
  MovementMetrics movement;
  std::size_t gtd = 0;
};

inline std::string config_hash(const ModelConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(to_json(config).dump())));
  return buf;
}

/// Runs the model over `samples` (one per day) and scores its final-step
/// attention against the ground-truth flags.
inline RankReport rank_report(ModelParams<float>& params, const ModelConfig& config,
                              const std::vector<Sample>& samples, std::size_t k_max = 5,
                              std::size_t threads = thread_count()) {
  if (samples.empty()) throw DatasetError("no samples to evaluate");
  if (k_max < 1) throw UsageError("k_max must be >= 1");
  std::vector<std::vector<double>> masses(samples.size());
  std::vector<bool> predicted(samples.size()), actual(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i, std::size_t) {
    BasicTape<float> tape(false);
    auto pred = forward(tape, samples[i], params, config);
    predicted[i] = predicted_up(pred, samples[i].window, config);
    actual[i] = samples[i].window.up;
    if (pred.relevance.defined())
      for (float v : pred.relevance.values()) masses[i].push_back(v);
  });

  RankReport r;
  r.config_hash = config_hash(config);
  r.movement = movement_metrics(predicted, actual);
  r.relevance_available = config.variant != Variant::kLstmPar;
  if (!r.relevance_available) {
    r.relevance_note = "variant lstm_par has no attention";
    return r;
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::vector<std::size_t> gtn;
    const auto& rel = samples[i].docs.relevant;
    for (std::size_t j = 0; j < rel.size(); ++j)
      if (rel[j].value_or(false)) gtn.push_back(j);
    r.gtd += !gtn.empty();
    r.selected.push_back(select_relevant(masses[i]));
    r.days.push_back(make_day_ranking(samples[i].window.date, std::move(masses[i]), std::move(gtn)));
  }
  if (r.gtd == 0) {
    r.relevance_available = false;
    r.relevance_note = "no day has a ground-truth document";
    return r;
  }
  for (std::size_t k = 1; k <= k_max; ++k) r.per_k.push_back({k, precision_recall_at_k(r.days, k)});
  return r;
}

inline nlohmann::json to_json(const RankReport& r) {
  nlohmann::json j;
  j["config_hash"] = r.config_hash;
  j["days"] = r.movement.n;
  j["gtd"] = r.gtd;
  j["movement"] = to_json(r.movement);
  j["relevance_available"] = r.relevance_available;
  if (r.relevance_available) {
    j["precision_denominator"] = "min(k, n_i)";
    j["recall_denominator"] = "min(k, |gtn_i|)";
    auto per_k = nlohmann::json::array();
    for (const auto& [k, pr] : r.per_k) per_k.push_back({{"k", k}, {"pre", pr.precision}, {"rec", pr.recall}});
    j["per_k"] = per_k;
  } else {
    j["per_k"] = nullptr;
    j["relevance_note"] = r.relevance_note;
  }
  return j;
}

/// One JSON line per day: {date, mass, gtn, selected}.
inline void write_day_dump(std::ostream& out, const RankReport& r) {
  for (std::size_t i = 0; i < r.days.size(); ++i) {
    const auto& d = r.days[i];
    nlohmann::json j = {{"date", d.date}, {"mass", d.mass}, {"gtn", d.gtn}, {"selected", r.selected[i]}};
    out << j.dump() << '\n';
  }
}

inline void write_curve(std::ostream& out, const RankReport& r) {
  out << "k,precision,recall\n";
  for (const auto& [k, pr] : r.per_k)
    out << k << ',' << format_number(pr.precision) << ',' << format_number(pr.recall) << '\n';
}

}  // namespace msin
