#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "qann/encoder.hpp"
#include "qann/errors.hpp"
#include "qann/grad_check.hpp"
#include "test_support.hpp"

using namespace qann;

namespace {

GruSet<ad::Var> bind_gru(ad::Tape& tape, const GruSet<Tensor>& g) {
  return {tape.parameter(g.W_z), tape.parameter(g.U_z), tape.parameter(g.b_z),
          tape.parameter(g.W_r), tape.parameter(g.U_r), tape.parameter(g.b_r),
          tape.parameter(g.W_c), tape.parameter(g.U_c), tape.parameter(g.b_c)};
}

std::vector<Tensor*> gru_tensors(GruSet<Tensor>& g) {
  return {&g.W_z, &g.U_z, &g.b_z, &g.W_r, &g.U_r, &g.b_r, &g.W_c, &g.U_c, &g.b_c};
}

}  // namespace

TEST(Dropout, InvertedScalingKeepsMeanAtOne) {
  Rng rng(7);
  ad::Tape tape;
  Tensor ones({200, 50}, 1.0);
  std::vector<SymbolId> ids(200);
  std::iota(ids.begin(), ids.end(), SymbolId{0});
  ad::Var out = embed_sequence(tape, ids, tape.parameter(ones), 0.2, Mode::kTrain, &rng);
  const auto data = out.value().data();
  const double mean = std::accumulate(data.begin(), data.end(), 0.0) / data.size();
  EXPECT_NEAR(mean, 1.0, 0.02);
  std::size_t zeros = 0;
  for (double v : data) {
    if (v == 0.0) ++zeros;
    else EXPECT_DOUBLE_EQ(v, 1.25);
  }
  EXPECT_NEAR(static_cast<double>(zeros) / data.size(), 0.2, 0.01);
}

TEST(Dropout, EvalModeIsIdentity) {
  ad::Tape tape;
  Rng rng(1);
  Tensor table = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  const std::vector<SymbolId> ids = {2, 0};
  ad::Var out = embed_sequence(tape, ids, tape.parameter(table), 0.5, Mode::kEval, &rng);
  EXPECT_EQ(out.value(), Tensor::matrix(2, 2, {5, 6, 1, 2}));
}

TEST(Dropout, RateOutsideRangeIsConfigError) {
  ad::Tape tape;
  Tensor table({3, 2});
  const std::vector<SymbolId> ids = {0};
  EXPECT_THROW(embed_sequence(tape, ids, tape.parameter(table), 1.0, Mode::kTrain, nullptr), ConfigError);
  EXPECT_THROW(embed_sequence(tape, ids, tape.parameter(table), -0.1, Mode::kTrain, nullptr), ConfigError);
}

TEST(Gru, ZeroWeightsHalveTowardZeroCandidate) {
  // All weights zero: z = r = 0.5, candidate = tanh(0) = 0, so h' = h / 2.
  GruSet<Tensor> g{Tensor({2, 2}), Tensor({2, 2}), Tensor({2}), Tensor({2, 2}), Tensor({2, 2}),
                   Tensor({2}),    Tensor({2, 2}), Tensor({2, 2}), Tensor({2})};
  ad::Tape tape;
  ad::Var next = gru_step(tape.constant(Tensor::vector({3, -1})),
                          tape.constant(Tensor::vector({0.8, -0.4})), bind_gru(tape, g));
  EXPECT_EQ(next.value(), Tensor::vector({0.4, -0.2}));
}

TEST(Gru, UpdateGateSaturatedKeepsState) {
  GruSet<Tensor> g{Tensor({2, 2}), Tensor({2, 2}), Tensor({2}, 60.0), Tensor({2, 2}), Tensor({2, 2}),
                   Tensor({2}),    Tensor({2, 2}, 1.0), Tensor({2, 2}), Tensor({2})};
  ad::Tape tape;
  const Tensor state = Tensor::vector({0.3, 0.7});
  ad::Var next = gru_step(tape.constant(Tensor::vector({5, 5})), tape.constant(state), bind_gru(tape, g));
  EXPECT_LT(max_abs_diff(next.value(), state), 1e-20);
}

TEST(Gru, BidirectionalGradientCheck) {
  Rng rng(31);
  const std::size_t h = 4, n = 5;
  ModelParams p = fixtures::random_params({8, h, false}, rng);
  std::vector<Tensor*> params = {&p.E_i};
  for (Tensor* t : gru_tensors(p.gru_fwd)) params.push_back(t);
  for (Tensor* t : gru_tensors(p.gru_bwd)) params.push_back(t);
  Tensor readout({h}, 0.0);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : readout.data()) v = dist(rng);

  const std::vector<SymbolId> ids = {3, 5, 3, 7, 4};
  const auto result = ad::grad_check(
      [&](ad::Tape& tape, std::span<const ad::Var> v) {
        GruSet<ad::Var> f{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]};
        GruSet<ad::Var> b{v[10], v[11], v[12], v[13], v[14], v[15], v[16], v[17], v[18]};
        const EncoderStates s = bigru_encode(ad::gather_rows(v[0], ids), f, b);
        ad::Var r = tape.constant(readout);
        ad::Var total = ad::dot(s.forward(n), r);
        for (std::size_t l = 1; l <= n; ++l) total = ad::add(total, ad::dot(s.backward(l), s.forward(l - 1)));
        return total;
      },
      params);
  EXPECT_TRUE(result.passed(1e-5)) << result.describe();
}

TEST(Encoder, StateIndexBounds) {
  Rng rng(2);
  ModelParams p = fixtures::random_params({6, 3, false}, rng);
  ad::Tape tape;
  BoundParams b = bind(tape, p);
  const std::vector<SymbolId> ids = {3, 4, 5};
  const EncoderStates s = bigru_encode(ad::gather_rows(b.E_i, ids), b.gru_fwd, b.gru_bwd);
  EXPECT_EQ(s.length(), 3u);
  EXPECT_EQ(s.forward(0).value(), Tensor({3}));
  EXPECT_EQ(s.backward(4).value(), Tensor({3}));
  EXPECT_THROW(s.forward(4), IndexError);
  EXPECT_THROW(s.backward(0), IndexError);
  EXPECT_THROW(encode_span_query(s, {2, 1}, b.W_q), IndexError);
  EXPECT_THROW(encode_span_query(s, {3, 4}, b.W_q), IndexError);
}

TEST(Encoder, SpanQueryIsSumOfContextsUnderIdentityProjection) {
  Rng rng(4);
  const std::size_t h = 3;
  ModelParams p = fixtures::random_params({6, h, false}, rng);
  p.W_q = init_wq(h, rng, 0.0);
  ad::Tape tape;
  BoundParams b = bind(tape, p);
  const std::vector<SymbolId> ids = {3, 4, 5, 3};
  const EncoderStates s = bigru_encode(ad::gather_rows(b.E_i, ids), b.gru_fwd, b.gru_bwd);
  const Tensor z = encode_span_query(s, {2, 3}, b.W_q).value();
  for (std::size_t i = 0; i < h; ++i) {
    EXPECT_NEAR(z[i], s.forward(1).value()[i] + s.backward(4).value()[i], 1e-15);
  }
}

TEST(Encoder, SpanQueryDependsOnlyOnOuterContext) {
  Rng rng(6);
  ModelParams p = fixtures::random_params({9, 4, false}, rng);
  auto span_query = [&](const std::vector<SymbolId>& ids) {
    ad::Tape tape;
    BoundParams b = bind(tape, p);
    const EncoderStates s = bigru_encode(ad::gather_rows(b.E_i, ids), b.gru_fwd, b.gru_bwd);
    return encode_span_query(s, {3, 4}, b.W_q).value();
  };
  const Tensor base = span_query({3, 4, 5, 6, 7, 8});
  // Changing tokens inside the span leaves z untouched...
  EXPECT_EQ(span_query({3, 4, 8, 8, 7, 8}), base);
  // ...changing the outer context does not.
  EXPECT_GT(max_abs_diff(span_query({5, 4, 5, 6, 7, 8}), base), 1e-6);
  EXPECT_GT(max_abs_diff(span_query({3, 4, 5, 6, 7, 3}), base), 1e-6);
}

TEST(Encoder, InitWqIsStackedIdentityPlusNoise) {
  Rng rng(12);
  const std::size_t h = 64;
  const Tensor w = init_wq(h, rng, 0.1);
  ASSERT_EQ(w.shape(), (Shape{h, 2 * h}));
  double sum = 0.0, sq = 0.0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < 2 * h; ++c) {
      const double noise = w.at(r, c) - ((c == r || c == r + h) ? 1.0 : 0.0);
      sum += noise;
      sq += noise * noise;
    }
  }
  const double n = static_cast<double>(2 * h * h);
  EXPECT_NEAR(sum / n, 0.0, 0.005);
  EXPECT_NEAR(std::sqrt(sq / n), 0.1, 0.005);
  EXPECT_EQ(init_wq(3, rng, 0.0), Tensor::matrix(3, 6, {1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0, 0, 1}));
}

TEST(OutputEmbedding, IdentityRowsAreOneHot) {
  ad::Tape tape;
  const OutputEmbedding e = OutputEmbedding::identity(tape, 5);
  EXPECT_TRUE(e.is_identity());
  EXPECT_EQ(e.dim(), 5u);
  const std::vector<SymbolId> ids = {4, 1};
  EXPECT_EQ(e.rows(ids).value(), Tensor::matrix(2, 5, {0, 0, 0, 0, 1, 0, 1, 0, 0, 0}));
  EXPECT_THROW(e.rows(std::vector<SymbolId>{5}), IndexError);
}
