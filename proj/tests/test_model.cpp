#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "msin/model_check.hpp"
#include "oracles.hpp"

namespace {

using msin::ModelConfig;
using msin::Tape;
using msin::Variant;

struct Built {
  ModelConfig config;
  msin::ModelParams<float> params;
  msin::Sample sample;
};

Built build(Variant v, std::size_t n = 3, std::uint64_t seed = 1) {
  Built b;
  b.config = msin::tiny_config(v);
  auto rng = msin::make_stream(seed, "init");
  b.params = msin::init_params(b.config, rng);
  auto drng = msin::make_stream(seed, "synth");
  b.sample = msin::random_sample(b.config, n, drng);
  return b;
}

double head_value(const msin::ModelParams<float>& p, const oracle::Vec& z) {
  double v = p.head_b[0];
  for (std::size_t k = 0; k < z.size(); ++k) v += p.head_w[k] * z[k];
  return v;
}

std::vector<oracle::Vec> oracle_docs(const Built& b) {
  std::vector<oracle::Vec> docs;
  for (std::size_t j = 0; j < b.sample.docs.size(); ++j) {
    std::vector<std::int32_t> ids(b.sample.docs.doc(j).begin(), b.sample.docs.doc(j).end());
    docs.push_back(oracle::encode_doc(ids, b.sample.docs.lengths[j], b.params.embedding,
                                      b.params.encoder, false)
                       .first);
  }
  return docs;
}

oracle::Mat oracle_window(const Built& b) {
  oracle::Mat w(b.config.window, oracle::Vec(b.config.features));
  for (std::size_t l = 0; l < b.config.window; ++l)
    for (std::size_t f = 0; f < b.config.features; ++f)
      w[l][f] = b.sample.window.values[l * b.config.features + f];
  return w;
}

TEST(ModelParams, UniqueNamesAndVariantSets) {
  std::set<std::string> per_variant[3];
  int i = 0;
  for (auto v : {Variant::kMsin, Variant::kLstmWo, Variant::kLstmPar}) {
    auto b = build(v);
    std::set<std::string> names;
    for (auto& s : b.params.slots()) {
      EXPECT_TRUE(names.insert(s.name).second) << s.name;
      EXPECT_EQ(s.tensor->name(), s.name);
    }
    per_variant[i++] = names;
  }
  EXPECT_TRUE(per_variant[0].count("cell.u_iv"));
  EXPECT_FALSE(per_variant[1].count("cell.u_iv"));
  EXPECT_TRUE(per_variant[1].count("cell.v_a"));
  EXPECT_FALSE(per_variant[2].count("cell.v_a"));
  EXPECT_TRUE(per_variant[2].count("text.w"));
  EXPECT_NE(per_variant[0], per_variant[1]);
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  auto c = msin::tiny_config(Variant::kLstmPar);
  c.dropout = 0.2;
  c.objective = msin::Objective::kMovement;
  auto back = msin::model_config_from_json(msin::to_json(c));
  EXPECT_EQ(msin::to_json(back), msin::to_json(c));
  c.window = 0;
  EXPECT_THROW(c.validate(), msin::UsageError);
  c.window = 3;
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), msin::UsageError);
}

TEST(ForwardMsin, ZeroHeadWeightsGiveBias) {
  auto b = build(Variant::kMsin);
  for (auto& v : b.params.head_w.values()) v = 0.0f;
  b.params.head_b[0] = 0.75f;
  Tape tape;
  auto pred = msin::forward(tape, b.sample, b.params, b.config);
  EXPECT_EQ(pred.value.item(), 0.75f);
}

TEST(ForwardMsin, SingleDocumentSummaryIsThatDocument) {
  auto b = build(Variant::kMsin, 1);
  // Head reads only the text-summary half.
  for (std::size_t k = 0; k < b.params.head_w.numel(); ++k)
    b.params.head_w[k] = k < b.config.d_s ? 0.0f : 1.0f;
  b.params.head_b[0] = 0.0f;
  Tape tape;
  auto pred = msin::forward(tape, b.sample, b.params, b.config);
  EXPECT_EQ(pred.relevance[0], 1.0f);
  double ref = 0.0;
  for (auto v : pred.docs.values()) ref += v;
  EXPECT_NEAR(pred.value.item(), ref, 1e-6);
}

TEST(ForwardMsin, MatchesModuleComposition) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto b = build(Variant::kMsin, 4, seed);
    Tape tape;
    auto pred = msin::forward(tape, b.sample, b.params, b.config);
    auto docs = oracle_docs(b);
    auto seq = oracle::msin_sequence(oracle_window(b), docs, b.sample.docs.mask, b.params.cell);
    oracle::Vec z = seq.back().h;
    oracle::Vec u(docs[0].size(), 0.0);
    for (std::size_t j = 0; j < docs.size(); ++j)
      for (std::size_t k = 0; k < u.size(); ++k) u[k] += seq.back().p[j] * docs[j][k];
    z.insert(z.end(), u.begin(), u.end());
    EXPECT_NEAR(pred.value.item(), head_value(b.params, z), 1e-5);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(pred.relevance[j], seq.back().p[j], 1e-5);
  }
}

TEST(ForwardLstmWo, MatchesModuleComposition) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto b = build(Variant::kLstmWo, 4, seed);
    Tape tape;
    auto pred = msin::forward(tape, b.sample, b.params, b.config);
    auto docs = oracle_docs(b);
    // Plain LSTM from zero states.
    const auto& c = b.params.cell;
    oracle::Vec hc(b.config.d_s, 0.0), cc(b.config.d_s, 0.0);
    for (const auto& x : oracle_window(b)) {
      auto g = [&](const msin::GateWeights<float>& w) {
        return oracle::gate(oracle::to_mat(w.ux), oracle::to_mat(w.uh), nullptr,
                            oracle::to_vec(w.b), x, hc, {});
      };
      auto i = g(c.input), f = g(c.forget), o = g(c.output), gg = g(c.cell);
      for (std::size_t k = 0; k < hc.size(); ++k) {
        cc[k] = oracle::sigm(f[k]) * cc[k] + oracle::sigm(i[k]) * std::tanh(gg[k]);
        hc[k] = oracle::sigm(o[k]) * std::tanh(cc[k]);
      }
    }
    auto q = oracle::matvec(oracle::to_mat(c.w_a), hc);
    oracle::Vec e(docs.size());
    double z = 0.0;
    for (std::size_t j = 0; j < docs.size(); ++j) {
      auto a = oracle::matvec(oracle::to_mat(c.u_a), docs[j]);
      double s = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) s += c.v_a[k] * std::tanh(a[k] + q[k] + c.b_a[k]);
      z += (e[j] = std::exp(s));
    }
    oracle::Vec feat = hc, u(docs[0].size(), 0.0);
    for (std::size_t j = 0; j < docs.size(); ++j) {
      e[j] /= z;
      EXPECT_NEAR(pred.relevance[j], e[j], 1e-5);
      for (std::size_t k = 0; k < u.size(); ++k) u[k] += e[j] * docs[j][k];
    }
    feat.insert(feat.end(), u.begin(), u.end());
    EXPECT_NEAR(pred.value.item(), head_value(b.params, feat), 1e-5);
  }
}

TEST(ForwardLstmWo, IdenticalDocumentsGiveUniformRelevance) {
  auto b = build(Variant::kLstmWo, 4);
  for (std::size_t j = 1; j < 4; ++j) {
    for (std::size_t k = 0; k < b.sample.docs.max_len; ++k)
      b.sample.docs.tokens[j * b.sample.docs.max_len + k] = b.sample.docs.tokens[k];
    b.sample.docs.lengths[j] = b.sample.docs.lengths[0];
  }
  Tape tape;
  auto pred = msin::forward(tape, b.sample, b.params, b.config);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_FLOAT_EQ(pred.relevance[j], 0.25f);
}

TEST(ForwardLstmPar, MatchesModuleComposition) {
  auto b = build(Variant::kLstmPar, 4, 3);
  Tape tape;
  auto pred = msin::forward(tape, b.sample, b.params, b.config);
  EXPECT_FALSE(pred.relevance.defined());
  auto docs = oracle_docs(b);
  oracle::Vec mean(docs[0].size(), 0.0);
  for (auto& d : docs)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += d[k] / docs.size();
  auto t = oracle::matvec(oracle::to_mat(b.params.text_w), mean);
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = std::tanh(t[k] + b.params.text_b[k]);
  Tape t2;
  auto zero = msin::Tensor::zeros({1, b.config.d_s});
  auto seq = msin::run_plain_lstm(t2, msin::detail::window_tensor<float>(b.sample.window), zero,
                                  zero, b.params.cell);
  oracle::Vec feat = oracle::to_vec(seq.last.h);
  feat.insert(feat.end(), t.begin(), t.end());
  EXPECT_NEAR(pred.value.item(), head_value(b.params, feat), 1e-5);
}

TEST(ForwardLstmPar, ZeroTextWeightsIsolateSeriesBranch) {
  auto b = build(Variant::kLstmPar, 3);
  for (auto& v : b.params.text_w.values()) v = 0.0f;
  Tape tape;
  auto a = msin::forward(tape, b.sample, b.params, b.config);
  auto other = b;
  for (auto& t : other.sample.docs.tokens)
    if (t) t = 1 + (t % 7);
  auto c = msin::forward(tape, other.sample, b.params, b.config);
  EXPECT_EQ(a.value.item(), c.value.item());
}

TEST(ForwardLstmPar, DocumentOrderInvariant) {
  auto b = build(Variant::kLstmPar, 3);
  auto r = b.sample;
  const auto K = r.docs.max_len;
  std::swap_ranges(r.docs.tokens.begin(), r.docs.tokens.begin() + K,
                   r.docs.tokens.begin() + 2 * K);
  std::swap(r.docs.lengths[0], r.docs.lengths[2]);
  Tape tape;
  EXPECT_EQ(msin::forward(tape, b.sample, b.params, b.config).value.item(),
            msin::forward(tape, r, b.params, b.config).value.item());
}

TEST(Forward, DeterministicWithoutDropout) {
  for (auto v : {Variant::kMsin, Variant::kLstmWo, Variant::kLstmPar}) {
    auto b = build(v);
    Tape t1, t2;
    EXPECT_EQ(msin::forward(t1, b.sample, b.params, b.config).value.item(),
              msin::forward(t2, b.sample, b.params, b.config).value.item());
  }
}

TEST(Forward, DropoutOnlyInTrainMode) {
  auto b = build(Variant::kMsin);
  b.config.dropout = 0.5;
  Tape tape;
  auto eval = msin::forward(tape, b.sample, b.params, b.config).value.item();
  msin::Rng r(3);
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    auto v = msin::forward(tape, b.sample, b.params, b.config, {&r, 0.5}).value.item();
    differs |= v != eval;
  }
  EXPECT_TRUE(differs);
}

TEST(Forward, MovementInvariantToPositiveHeadScaling) {
  auto b = build(Variant::kMsin);
  b.config.objective = msin::Objective::kMovement;
  Tape tape;
  auto p1 = msin::forward(tape, b.sample, b.params, b.config);
  for (auto& v : b.params.head_w.values()) v *= 3.5f;
  b.params.head_b[0] *= 3.5f;
  auto p2 = msin::forward(tape, b.sample, b.params, b.config);
  EXPECT_EQ(msin::predicted_up(p1, b.sample.window, b.config),
            msin::predicted_up(p2, b.sample.window, b.config));
}

TEST(Forward, EmptyDayRejected) {
  auto b = build(Variant::kMsin);
  b.sample.docs = msin::DocumentBatch{};
  Tape tape;
  EXPECT_THROW(msin::forward(tape, b.sample, b.params, b.config), msin::EmptyDayError);
}

TEST(Loss, TrivialCases) {
  auto b = build(Variant::kMsin);
  Tape tape;
  msin::Prediction<float> pred;
  pred.value = msin::Tensor::scalar(0.4f);
  msin::SeriesWindow w;
  w.target = 0.4f;
  EXPECT_EQ(msin::loss(tape, pred, w, b.params, b.config).item(), 0.0f);
  pred.value = msin::Tensor::scalar(0.0f);
  w.target = 1.0f;
  EXPECT_EQ(msin::loss(tape, pred, w, b.params, b.config).item(), 1.0f);
}

TEST(Loss, MovementIsBinaryCrossEntropy) {
  auto b = build(Variant::kMsin);
  b.config.objective = msin::Objective::kMovement;
  Tape tape;
  msin::Prediction<float> pred;
  pred.value = msin::Tensor::scalar(0.8f);
  msin::SeriesWindow w;
  w.up = false;
  const double p = 1.0 / (1.0 + std::exp(-0.8));
  EXPECT_NEAR(msin::loss(tape, pred, w, b.params, b.config).item(), -std::log(1.0 - p), 1e-6);
  w.up = true;
  EXPECT_NEAR(msin::loss(tape, pred, w, b.params, b.config).item(), -std::log(p), 1e-6);
}

bool is_bias_name(const std::string& name) {
  const auto leaf = name.substr(name.rfind('.') + 1);
  return leaf == "b" || leaf.rfind("b_", 0) == 0;
}

TEST(Loss, RegularizationMatchesRecomputation) {
  auto b = build(Variant::kMsin);
  b.config.l1 = 0.01;
  b.config.l2 = 0.005;
  Tape tape;
  auto pred = msin::forward(tape, b.sample, b.params, b.config);
  const double d = pred.value.item() - b.sample.window.target;
  double l1 = 0.0, l2 = 0.0;
  for (auto& s : b.params.slots()) {
    if (s.name == "embedding.table" || is_bias_name(s.name)) continue;
    for (auto v : s.tensor->values()) {
      l1 += std::abs(double(v));
      l2 += double(v) * v;
    }
  }
  const double ref = d * d + 0.01 * l1 + 0.005 * l2;
  EXPECT_NEAR(msin::loss(tape, pred, b.sample.window, b.params, b.config).item(), ref, 1e-4);
}

TEST(GradCheck, AllVariantsTinyConfiguration) {
  for (auto v : {Variant::kMsin, Variant::kLstmWo, Variant::kLstmPar}) {
    auto report = msin::check_model_gradients(msin::tiny_config(v), 1);
    EXPECT_LT(report.max_rel_err, 1e-4) << msin::to_string(v);
  }
}

TEST(GradCheck, DropoutRefused) {
  auto c = msin::tiny_config(Variant::kMsin);
  c.dropout = 0.2;
  EXPECT_THROW(msin::check_model_gradients(c, 1), msin::DeterminismError);
}

}  // namespace
