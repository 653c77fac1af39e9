#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "msin/grad_check.hpp"
#include "msin/msin_cell.hpp"
#include "oracles.hpp"

namespace {

using msin::Tape;
using msin::Tensor;

msin::CellShapes tiny_shapes() {
  msin::CellShapes s;
  s.d_s = 4;
  s.d_a = 4;
  s.doc_dim = 6;
  s.features = 2;
  return s;
}

Tensor random_tensor(msin::Shape shape, std::mt19937_64& rng) {
  auto t = Tensor::zeros(std::move(shape));
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

template <typename T>
msin::MsinParams<T> cast_params(const msin::MsinParams<float>& p) {
  auto c = [](const Tensor& t) {
    return t.defined() ? t.cast<T>() : msin::BasicTensor<T>{};
  };
  auto g = [&](const msin::GateWeights<float>& w) {
    return msin::GateWeights<T>{c(w.ux), c(w.uh), c(w.uv), c(w.b)};
  };
  return {c(p.u_c0), c(p.u_h0), c(p.b_c0), c(p.b_h0), c(p.w_a), c(p.u_a),
          c(p.b_a),  c(p.v_a),  g(p.input),  g(p.forget), g(p.output), g(p.cell)};
}

TEST(InitStates, MeanOfValidDocsAndZeroContext) {
  auto rng = msin::make_stream(1, "init");
  auto p = msin::init_msin(tiny_shapes(), rng);
  std::mt19937_64 r(2);
  auto docs = random_tensor({3, 6}, r);
  Tape tape;
  msin::Mask mask{1, 0, 1};
  auto st = msin::init_states(tape, docs, mask, p);
  for (auto v : st.v.values()) EXPECT_EQ(v, 0.0f);
  std::vector<double> mean(6);
  for (std::size_t k = 0; k < 6; ++k) mean[k] = (docs.at(0, k) + docs.at(2, k)) / 2.0;
  auto c = oracle::matvec(oracle::to_mat(p.u_c0), mean);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(st.c[k], std::tanh(c[k] + p.b_c0[k]), 1e-6);
  EXPECT_THROW(msin::init_states(tape, docs, msin::Mask{0, 0, 0}, p), msin::EmptyDayError);
}

TEST(Attend, IdenticalDocsGiveUniformMass) {
  auto rng = msin::make_stream(3, "init");
  auto p = msin::init_msin(tiny_shapes(), rng);
  std::mt19937_64 r(4);
  auto row = random_tensor({1, 6}, r);
  auto docs = Tensor::zeros({4, 6});
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t k = 0; k < 6; ++k) docs.at(j, k) = row[k];
  Tape tape;
  auto pm = msin::attend(tape, random_tensor({1, 4}, r), docs, msin::Mask(4, 1), p);
  for (auto v : pm.values()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Attend, SingleDocGetsAllMassAndMaskedGetNone) {
  auto rng = msin::make_stream(5, "init");
  auto p = msin::init_msin(tiny_shapes(), rng);
  std::mt19937_64 r(6);
  Tape tape;
  auto one = msin::attend(tape, random_tensor({1, 4}, r), random_tensor({1, 6}, r),
                          msin::Mask{1}, p);
  EXPECT_EQ(one[0], 1.0f);
  auto pm = msin::attend(tape, random_tensor({1, 4}, r), random_tensor({3, 6}, r),
                         msin::Mask{0, 1, 1}, p);
  EXPECT_EQ(pm[0], 0.0f);
  EXPECT_THROW(msin::attend(tape, random_tensor({1, 4}, r), random_tensor({3, 6}, r),
                            msin::Mask{0, 0, 0}, p),
               msin::DegenerateMaskError);
}

TEST(UpdateContext, ClosedFormUnderConstantDocuments) {
  std::mt19937_64 r(7);
  auto row = random_tensor({1, 6}, r);
  auto docs = Tensor::zeros({3, 6});
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 6; ++k) docs.at(j, k) = row[k];
  auto p = Tensor::filled({3}, 1.0f / 3.0f);
  Tape tape;
  auto v = Tensor::zeros({1, 6});
  for (int l = 1; l <= 10; ++l) {
    v = msin::update_context(tape, p, docs, v);
    const double f = 1.0 - std::pow(2.0, -l);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(v[k], row[k] * f, 1e-6);
  }
}

TEST(RunSequence, MatchesLoopOracle) {
  auto rng = msin::make_stream(8, "init");
  auto p = msin::init_msin(tiny_shapes(), rng);
  std::mt19937_64 r(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto window = random_tensor({5, 2}, r);
    auto docs = random_tensor({4, 6}, r);
    msin::Mask mask{1, 1, trial % 2 == 0, 1};
    Tape tape;
    auto out = msin::run_sequence(tape, window, docs, mask, p);
    auto ref = oracle::msin_sequence(oracle::to_mat(window), oracle::to_mat(docs), mask, p);
    ASSERT_EQ(out.trace.per_step.size(), 5u);
    for (std::size_t l = 0; l < 5; ++l) {
      for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(out.hiddens.at(l, k), ref[l].h[k], 1e-5);
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.trace.per_step[l][j], ref[l].p[j], 1e-5);
    }
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(out.last.v[k], ref.back().v[k], 1e-5);
  }
}

TEST(RunSequence, ReducesToPlainLstmWhenContextWeightsAreZero) {
  auto rng = msin::make_stream(10, "init");
  auto p = msin::init_msin(tiny_shapes(), rng);
  for (auto* g : {&p.input, &p.forget, &p.output, &p.cell})
    for (auto& v : g->uv.values()) v = 0.0f;
  std::mt19937_64 r(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto window = random_tensor({5, 2}, r);
    auto docs = random_tensor({3, 6}, r);
    msin::Mask mask(3, 1);
    Tape tape;
    auto out = msin::run_sequence(tape, window, docs, mask, p);
    auto st = msin::init_states(tape, docs, mask, p);
    auto plain = msin::run_plain_lstm(tape, window, st.c, st.h, p);
    for (std::size_t i = 0; i < out.hiddens.numel(); ++i)
      EXPECT_EQ(out.hiddens[i], plain.hiddens[i]);
  }
}

TEST(RunSequence, DocumentPermutationPermutesMassBitwise) {
  auto rng = msin::make_stream(12, "init");
  auto p = msin::init_msin(tiny_shapes(), rng);
  std::mt19937_64 r(13);
  auto window = random_tensor({4, 2}, r);
  auto docs = random_tensor({5, 6}, r);
  std::vector<std::size_t> perm{2, 4, 0, 3, 1};
  auto pd = Tensor::zeros({5, 6});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 6; ++k) pd.at(i, k) = docs.at(perm[i], k);
  Tape tape;
  auto a = msin::run_sequence(tape, window, docs, msin::Mask(5, 1), p);
  auto b = msin::run_sequence(tape, window, pd, msin::Mask(5, 1), p);
  for (std::size_t i = 0; i < a.hiddens.numel(); ++i) EXPECT_EQ(a.hiddens[i], b.hiddens[i]);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(b.trace.final()[i], a.trace.final()[perm[i]]);
}

TEST(RunSequence, PaddingDocumentsDoNotChangeResult) {
  auto rng = msin::make_stream(14, "init");
  auto p = msin::init_msin(tiny_shapes(), rng);
  std::mt19937_64 r(15);
  auto window = random_tensor({3, 2}, r);
  auto docs = random_tensor({2, 6}, r);
  auto padded = Tensor::zeros({4, 6});
  for (std::size_t k = 0; k < 12; ++k) padded[k] = docs[k];
  for (std::size_t k = 12; k < 24; ++k) padded[k] = 7.0f;
  Tape tape;
  auto a = msin::run_sequence(tape, window, docs, msin::Mask{1, 1}, p);
  auto b = msin::run_sequence(tape, window, padded, msin::Mask{1, 1, 0, 0}, p);
  for (std::size_t i = 0; i < a.hiddens.numel(); ++i) EXPECT_EQ(a.hiddens[i], b.hiddens[i]);
  EXPECT_EQ(b.trace.final()[2], 0.0f);
}

TEST(RunSequence, GradientsMatchCentralDifferences) {
  auto rng = msin::make_stream(16, "init");
  auto pf = msin::init_msin(tiny_shapes(), rng);
  auto p = cast_params<double>(pf);
  std::mt19937_64 r(17);
  auto window = random_tensor({3, 2}, r).cast<double>();
  auto docs = random_tensor({3, 6}, r).cast<double>();
  docs.set_requires_grad(true);
  docs.set_name("docs");
  msin::Mask mask{1, 0, 1};
  std::vector<msin::BasicTensor<double>> params{p.u_c0, p.u_h0, p.b_c0, p.b_h0, p.w_a,
                                                p.u_a,  p.b_a,  p.v_a,  docs};
  for (auto* g : {&p.input, &p.forget, &p.output, &p.cell})
    for (auto* t : {&g->ux, &g->uh, &g->uv, &g->b}) params.push_back(*t);
  auto fn = [&](msin::BasicTape<double>& t) {
    auto out = msin::run_sequence(t, window, docs, mask, p);
    return t.add(t.sum(t.square(out.hiddens)),
                 t.sum(t.hadamard(out.trace.final(),
                                  msin::BasicTensor<double>::from_values({3}, {0.3, 0.0, -1.1}))));
  };
  auto report = msin::grad_check(fn, params);
  EXPECT_LT(report.max_rel_err, 1e-4);
}

}  // namespace
