#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "msin/data.hpp"
#include "msin/evaluator.hpp"
#include "msin/model_check.hpp"
#include "oracles.hpp"

namespace {

using Idx = std::vector<std::size_t>;

// Fixture documents are numbered from 1.
Idx one_based(const Idx& v) {
  Idx out;
  for (auto i : v) out.push_back(i + 1);
  return out;
}

TEST(SelectRelevant, PublishedMasses20130122) {
  std::vector<double> mass{0.00, 0.15, 0.03, 0.21, 0.09, 0.03, 0.04,
                           0.02, 0.03, 0.01, 0.00, 0.01, 0.40};
  EXPECT_EQ(one_based(msin::select_relevant(mass)), (Idx{13, 4}));
}

TEST(SelectRelevant, PublishedMasses20130814) {
  std::vector<double> mass{0.00, 0.00, 0.00, 0.00, 0.00, 0.03, 0.00, 0.02, 0.01, 0.76, 0.17};
  EXPECT_EQ(one_based(msin::select_relevant(mass)), (Idx{10}));
}

TEST(SelectRelevant, PublishedMasses20130109) {
  std::vector<double> mass{0.00, 0.87, 0.00, 0.00};
  EXPECT_EQ(one_based(msin::select_relevant(mass)), (Idx{2}));
}

TEST(SelectRelevant, InclusiveBoundaryAndTies) {
  EXPECT_EQ(msin::select_relevant({0.25, 0.25, 0.25, 0.25}), (Idx{0, 1}));
  EXPECT_EQ(msin::select_relevant({1.0}), (Idx{0}));
}

TEST(SelectRelevant, ShortestPrefixProperty) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::uniform_int_distribution<int> n_dist(1, 25);
    std::vector<double> mass(n_dist(rng));
    std::gamma_distribution<double> g(0.3, 1.0);
    double total = 0.0;
    for (auto& m : mass) total += (m = g(rng));
    for (auto& m : mass) m /= total;
    auto sel = msin::select_relevant(mass);
    double cum = 0.0;
    for (auto j : sel) cum += mass[j];
    EXPECT_GE(cum, 0.5 - 1e-12);
    EXPECT_LT(cum - mass[sel.back()], 0.5);
    for (std::size_t i = 1; i < sel.size(); ++i) EXPECT_GE(mass[sel[i - 1]], mass[sel[i]]);
  }
}

TEST(PrecisionRecall, Examples) {
  auto day = msin::make_day_ranking("d", {0.1, 0.1, 0.1, 0.6, 0.1}, {3});
  auto pr = msin::precision_recall_at_k({day}, 1);
  EXPECT_EQ(pr.precision, 1.0);
  EXPECT_EQ(pr.recall, 1.0);
  auto two = msin::make_day_ranking("d", {0.3, 0.05, 0.2, 0.15, 0.1, 0.08, 0.07, 0.05}, {0, 7});
  auto pr5 = msin::precision_recall_at_k({two}, 5);
  EXPECT_DOUBLE_EQ(pr5.precision, 0.2);
  EXPECT_DOUBLE_EQ(pr5.recall, 0.5);
}

TEST(PrecisionRecall, FewerDocumentsThanK) {
  auto day = msin::make_day_ranking("d", {0.5, 0.5}, {1});
  auto pr = msin::precision_recall_at_k({day}, 5);
  EXPECT_DOUBLE_EQ(pr.precision, 0.5);
  EXPECT_DOUBLE_EQ(pr.recall, 1.0);
}

TEST(PrecisionRecall, MatchesBruteForceOn200Instances) {
  std::mt19937_64 rng(11);
  for (int inst = 0; inst < 200; ++inst) {
    std::uniform_int_distribution<int> days_dist(1, 6), n_dist(1, 12), k_dist(1, 8);
    const int n_days = days_dist(rng);
    std::vector<std::vector<double>> masses;
    std::vector<std::set<std::size_t>> gts;
    std::vector<msin::DayRanking> days;
    for (int d = 0; d < n_days; ++d) {
      const int n = n_dist(rng);
      std::vector<double> m(n);
      // Coarse masses force frequent ties.
      std::uniform_int_distribution<int> q(0, 4);
      double total = 0.0;
      for (auto& v : m) total += (v = q(rng) + 1);
      for (auto& v : m) v /= total;
      std::set<std::size_t> gt;
      std::bernoulli_distribution pick(d == 0 ? 0.5 : 0.25);
      for (int j = 0; j < n; ++j)
        if (pick(rng)) gt.insert(j);
      if (d == 0 && gt.empty()) gt.insert(0);
      masses.push_back(m);
      gts.push_back(gt);
      days.push_back(msin::make_day_ranking("d" + std::to_string(d), m, Idx(gt.begin(), gt.end())));
    }
    const std::size_t k = k_dist(rng);
    auto got = msin::precision_recall_at_k(days, k);
    auto want = oracle::precision_recall(masses, gts, k);
    EXPECT_NEAR(got.precision, want.first, 1e-12);
    EXPECT_NEAR(got.recall, want.second, 1e-12);
  }
}

TEST(PrecisionRecall, OrderPreservingRescaleInvariantAndRecallMonotone) {
  std::mt19937_64 rng(2);
  std::vector<msin::DayRanking> a, b;
  for (int d = 0; d < 20; ++d) {
    std::vector<double> m(9), sq(9);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    double t1 = 0, t2 = 0;
    for (int j = 0; j < 9; ++j) {
      m[j] = u(rng);
      sq[j] = m[j] * m[j] * m[j];
      t1 += m[j];
      t2 += sq[j];
    }
    for (int j = 0; j < 9; ++j) {
      m[j] /= t1;
      sq[j] /= t2;
    }
    Idx gt{std::size_t(d % 9), std::size_t((d * 5) % 9)};
    a.push_back(msin::make_day_ranking("x", m, gt));
    b.push_back(msin::make_day_ranking("x", sq, gt));
  }
  double prev = 0.0;
  for (std::size_t k = 1; k <= 9; ++k) {
    auto pa = msin::precision_recall_at_k(a, k), pb = msin::precision_recall_at_k(b, k);
    EXPECT_EQ(pa.precision, pb.precision);
    EXPECT_EQ(pa.recall, pb.recall);
    EXPECT_GE(pa.recall, prev);
    prev = pa.recall;
  }
}

TEST(PrecisionRecall, NoGroundTruthDayIsUndefined) {
  auto day = msin::make_day_ranking("d", {0.5, 0.5}, {});
  EXPECT_THROW(msin::precision_recall_at_k({day}, 1), msin::UndefinedMetricError);
  EXPECT_THROW(msin::precision_recall_at_k({}, 1), msin::UndefinedMetricError);
}

TEST(DayRanking, ValidatesMass) {
  EXPECT_THROW(msin::make_day_ranking("d", {0.5, 0.4}, {}), msin::ContractError);
  EXPECT_THROW(msin::make_day_ranking("d", {}, {}), msin::ContractError);
  EXPECT_THROW(msin::make_day_ranking("d", {1.0}, {1}), msin::ContractError);
  auto d = msin::make_day_ranking("d", {0.2, 0.4, 0.2, 0.2}, {});
  EXPECT_EQ(d.ranked, (Idx{1, 0, 2, 3}));
}

TEST(Movement, AllCorrect) {
  auto m = msin::movement_metrics({true, false, true}, {true, false, true});
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(*m.up_precision, 1.0);
  EXPECT_EQ(*m.up_recall, 1.0);
  EXPECT_EQ(*m.down_precision, 1.0);
  EXPECT_EQ(*m.down_recall, 1.0);
}

TEST(Movement, AlwaysUpPredictor) {
  auto m = msin::movement_metrics({true, true, true, true}, {true, false, true, false});
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_EQ(*m.up_precision, 0.5);
  EXPECT_EQ(*m.up_recall, 1.0);
  EXPECT_EQ(*m.down_recall, 0.0);
  EXPECT_FALSE(m.down_precision.has_value());
}

TEST(Movement, AbsentClassRecallUndefined) {
  auto m = msin::movement_metrics({true, false}, {true, true});
  EXPECT_FALSE(m.down_recall.has_value());
  EXPECT_TRUE(msin::to_json(m)["recall"]["down"].is_null());
}

TEST(Movement, MatchesCountingOracle) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.5);
  std::vector<bool> p(50), a(50);
  for (int i = 0; i < 50; ++i) {
    p[i] = coin(rng);
    a[i] = coin(rng);
  }
  int c[2][2] = {};
  for (int i = 0; i < 50; ++i) c[p[i]][a[i]]++;
  auto m = msin::movement_metrics(p, a);
  EXPECT_DOUBLE_EQ(m.accuracy, (c[1][1] + c[0][0]) / 50.0);
  EXPECT_DOUBLE_EQ(*m.up_precision, double(c[1][1]) / (c[1][1] + c[1][0]));
  EXPECT_DOUBLE_EQ(*m.up_recall, double(c[1][1]) / (c[1][1] + c[0][1]));
  EXPECT_DOUBLE_EQ(*m.down_precision, double(c[0][0]) / (c[0][0] + c[0][1]));
  EXPECT_DOUBLE_EQ(*m.down_recall, double(c[0][0]) / (c[0][0] + c[1][0]));
}

TEST(Movement, EmptyRejected) {
  EXPECT_THROW(msin::movement_metrics({}, {}), msin::UsageError);
}

TEST(OracleRanker, PlantedIndicatorGivesPerfectRecallAtOne) {
  msin::SynthSpec spec;
  spec.n_days = 100;
  auto data = msin::synth_generate(spec);
  std::vector<msin::DayRanking> days;
  for (auto& day : data.corpus) {
    std::vector<double> mass;
    Idx gt;
    for (std::size_t j = 0; j < day.headlines.size(); ++j) {
      mass.push_back(*day.headlines[j].relevant ? 1.0 : 0.0);
      if (*day.headlines[j].relevant) gt.push_back(j);
    }
    days.push_back(msin::make_day_ranking(day.date, mass, gt));
  }
  EXPECT_EQ(msin::precision_recall_at_k(days, 1).recall, 1.0);
  EXPECT_EQ(msin::precision_recall_at_k(days, 1).precision, 1.0);
}

std::vector<msin::Sample> labelled_samples(const msin::ModelConfig& c, std::size_t n_days) {
  auto rng = msin::make_stream(3, "synth");
  std::vector<msin::Sample> out;
  for (std::size_t d = 0; d < n_days; ++d) {
    auto s = msin::random_sample(c, 3, rng);
    s.window.date = "2020-01-0" + std::to_string(d + 1);
    s.docs.relevant = {false, true, std::nullopt};
    out.push_back(s);
  }
  return out;
}

TEST(RankReport, LstmParRelevanceUnavailable) {
  auto c = msin::tiny_config(msin::Variant::kLstmPar);
  auto rng = msin::make_stream(1, "init");
  auto p = msin::init_params(c, rng);
  auto r = msin::rank_report(p, c, labelled_samples(c, 2));
  EXPECT_FALSE(r.relevance_available);
  auto j = msin::to_json(r);
  EXPECT_TRUE(j["per_k"].is_null());
  EXPECT_EQ(j["movement"]["n"], 2);
}

TEST(RankReport, SingleDayEqualsDayMetrics) {
  auto c = msin::tiny_config(msin::Variant::kMsin);
  auto rng = msin::make_stream(1, "init");
  auto p = msin::init_params(c, rng);
  auto samples = labelled_samples(c, 1);
  auto r = msin::rank_report(p, c, samples, 3);
  ASSERT_TRUE(r.relevance_available);
  msin::BasicTape<float> tape(false);
  auto pred = msin::forward(tape, samples[0], p, c);
  std::vector<double> m(pred.relevance.values().begin(), pred.relevance.values().end());
  auto order = msin::rank_order(m);
  for (const auto& [k, pr] : r.per_k) {
    double tp = 0;
    for (std::size_t i = 0; i < std::min<std::size_t>(k, 3); ++i) tp += order[i] == 1;
    EXPECT_DOUBLE_EQ(pr.precision, tp / double(std::min<std::size_t>(k, 3)));
    EXPECT_DOUBLE_EQ(pr.recall, tp);
  }
  EXPECT_EQ(r.gtd, 1u);
  EXPECT_EQ(r.selected[0], msin::select_relevant(m));
}

TEST(RankReport, OutputsDeterministic) {
  auto c = msin::tiny_config(msin::Variant::kLstmWo);
  auto rng = msin::make_stream(1, "init");
  auto p = msin::init_params(c, rng);
  auto samples = labelled_samples(c, 4);
  auto dump = [&] {
    auto r = msin::rank_report(p, c, samples);
    std::ostringstream out;
    out << msin::to_json(r).dump() << '\n';
    msin::write_day_dump(out, r);
    msin::write_curve(out, r);
    return out.str();
  };
  const auto first = dump();
  EXPECT_EQ(first, dump());
  EXPECT_NE(first.find("k,precision,recall\n1,"), std::string::npos);
}

}  // namespace
