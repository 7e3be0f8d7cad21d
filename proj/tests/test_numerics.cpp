#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "egovit/nn.hpp"
#include "egovit/ops.hpp"
#include "egovit/rng.hpp"

using namespace egovit;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.normal();
  return t;
}

// Independent naive oracle: y[i,j] = sum_k x[i,k] w[k,j], then + b[j].
std::vector<double> naive_linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int m = x.dim(0), k = x.dim(1), n = w.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += x.at(i * k + p) * w.at(p * n + j);
      out[static_cast<std::size_t>(i) * n + j] = s + b.at(j);
    }
  return out;
}

// Independent naive oracle for single-head attention with the full block of
// projections, recomputed with plain loops.
std::vector<double> naive_attention_1head(const Tensor& tokens, const MhaParams& p) {
  const int n = tokens.dim(0), d = tokens.dim(1);
  auto project = [&](const LinearParams& lp) {
    return naive_linear(tokens, lp.weight, lp.bias);
  };
  std::vector<double> q = project(p.query[0]);
  std::vector<double> k = project(p.key[0]);
  std::vector<double> v = project(p.value[0]);
  const int dh = p.query[0].out_dim();
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> ctx(static_cast<std::size_t>(n) * dh);
  for (int i = 0; i < n; ++i) {
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int c = 0; c < dh; ++c) s += q[i * dh + c] * k[j * dh + c];
      scores[static_cast<std::size_t>(j)] = s * inv;
    }
    double m = scores[0];
    for (int j = 1; j < n; ++j) m = std::max(m, scores[static_cast<std::size_t>(j)]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      scores[static_cast<std::size_t>(j)] = std::exp(scores[static_cast<std::size_t>(j)] - m);
      z += scores[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < n; ++j) scores[static_cast<std::size_t>(j)] /= z;
    for (int c = 0; c < dh; ++c) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += scores[static_cast<std::size_t>(j)] * v[j * dh + c];
      ctx[static_cast<std::size_t>(i) * dh + c] = s;
    }
  }
  Tensor ctx_t({n, dh}, ctx);
  return naive_linear(ctx_t, p.out.weight, p.out.bias);
}

LinearParams identity_linear(int d) {
  LinearParams p;
  p.weight = Tensor({d, d});
  for (int i = 0; i < d; ++i) p.weight.at(static_cast<std::size_t>(i) * d + i) = 1.0;
  p.bias = Tensor({d});
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// linear_forward
// ---------------------------------------------------------------------------

TEST(Linear, IdentityCase) {
  LinearParams p = identity_linear(2);
  Tensor x({2}, {1.0, 0.0});
  Tensor y = linear_forward(x, p);
  EXPECT_EQ(y.at(0), 1.0);
  EXPECT_EQ(y.at(1), 0.0);
}

TEST(Linear, BiasShift) {
  LinearParams p = identity_linear(2);
  p.bias = Tensor({2}, {3.0, 3.0});
  Tensor x({2}, {1.0, 2.0});
  Tensor y = linear_forward(x, p);
  EXPECT_EQ(y.at(0), 4.0);
  EXPECT_EQ(y.at(1), 5.0);
}

TEST(Linear, MatchesNaiveOracleExactly) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    LinearParams p = LinearParams::init(4, 6, rng, 0.5);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor y = linear_forward(x, p);
    std::vector<double> expect = naive_linear(x, p.weight, p.bias);
    ASSERT_EQ(y.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(y.at(i), expect[i]);
  }
}

TEST(Linear, ShapeMismatchNamesDims) {
  Rng rng(7);
  LinearParams p = LinearParams::init(4, 2, rng);
  Tensor x({3, 5});
  try {
    linear_forward(x, p);
    FAIL() << "expected shape error";
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("5"), std::string::npos);
    EXPECT_NE(msg.find("4"), std::string::npos);
  }
}

TEST(Linear, LeadingDimsPassThrough) {
  Rng rng(3);
  LinearParams p = LinearParams::init(4, 2, rng);
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor y = linear_forward(x, p);
  EXPECT_EQ(y.shape(), (std::vector<int>{2, 3, 2}));
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

TEST(Softmax, UniformOnZeros) {
  Tensor x({3}, {0.0, 0.0, 0.0});
  Tensor y = softmax(x, 0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), 1.0 / 3.0, 1e-15);
}

TEST(Softmax, StableUnderLargeInputs) {
  Tensor x({2}, {1000.0, 1000.0});
  Tensor y = softmax(x, 0);
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1), 0.5);
  EXPECT_TRUE(std::isfinite(y.at(0)));
}

TEST(Softmax, ClosedFormLogs) {
  Tensor x({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
  Tensor y = softmax(x, 0);
  EXPECT_NEAR(y.at(0), 1.0 / 6.0, 1e-14);
  EXPECT_NEAR(y.at(1), 2.0 / 6.0, 1e-14);
  EXPECT_NEAR(y.at(2), 3.0 / 6.0, 1e-14);
}

TEST(Softmax, SumsToOneAnyAxis) {
  Rng rng(11);
  Tensor x = random_tensor({4, 3, 5}, rng);
  for (std::size_t i = 0; i < x.size(); ++i) x.at(i) *= 50.0;
  for (int axis = 0; axis < 3; ++axis) {
    Tensor y = softmax(x, axis);
    auto span = detail::axis_span(x.shape(), axis);
    for (std::size_t o = 0; o < span.outer; ++o)
      for (std::size_t in = 0; in < span.inner; ++in) {
        double s = 0.0;
        for (std::size_t l = 0; l < span.len; ++l)
          s += y.at((o * span.len + l) * span.inner + in);
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  }
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

TEST(LayerNorm, ConstantVectorGoesToZero) {
  LayerNormParams p = LayerNormParams::init(4);
  Tensor x = Tensor::full({4}, 3.7);
  Tensor y = layer_norm(x, p);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y.at(i), 0.0, 1e-12);
}

TEST(LayerNorm, HandEvaluatedTwoPoint) {
  LayerNormParams p = LayerNormParams::init(2);
  p.epsilon = 1e-12;
  Tensor x({2}, {1.0, -1.0});
  Tensor y = layer_norm(x, p);
  EXPECT_NEAR(y.at(0), 1.0, 1e-6);
  EXPECT_NEAR(y.at(1), -1.0, 1e-6);
}

TEST(LayerNorm, BetaShiftsExactly) {
  Rng rng(5);
  LayerNormParams p = LayerNormParams::init(6);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor base = layer_norm(x, p);
  for (int i = 0; i < 6; ++i) p.beta.at(static_cast<std::size_t>(i)) = 2.5;
  Tensor shifted = layer_norm(x, p);
  for (std::size_t i = 0; i < base.size(); ++i)
    EXPECT_EQ(shifted.at(i), base.at(i) + 2.5);
}

TEST(LayerNorm, ZeroMeanPerVector) {
  Rng rng(6);
  LayerNormParams p = LayerNormParams::init(8);
  Tensor x = random_tensor({5, 8}, rng);
  Tensor y = layer_norm(x, p);
  for (int r = 0; r < 5; ++r) {
    double mean = 0.0;
    for (int j = 0; j < 8; ++j) mean += y.at(static_cast<std::size_t>(r) * 8 + j);
    EXPECT_NEAR(mean / 8.0, 0.0, 1e-9);
  }
}

// ---------------------------------------------------------------------------
// multi_head_attention
// ---------------------------------------------------------------------------

TEST(Attention, SingleTokenAttendsToItself) {
  Rng rng(2);
  MhaParams p = MhaParams::init(8, 2, rng);
  Tensor tokens = random_tensor({1, 8}, rng);
  MhaResult r = multi_head_attention(tokens, p);
  EXPECT_EQ(r.attn.shape(), (std::vector<int>{2, 1, 1}));
  EXPECT_DOUBLE_EQ(r.attn.at(0), 1.0);
  EXPECT_DOUBLE_EQ(r.attn.at(1), 1.0);
}

TEST(Attention, UniformAttentionAveragesValues) {
  Rng rng(9);
  const int d = 4;
  MhaParams p;
  p.heads = 1;
  p.model_dim = d;
  p.query.push_back(LinearParams::init(d, d, rng));
  p.key.push_back(identity_linear(d));
  for (std::size_t i = 0; i < p.key[0].weight.size(); ++i) p.key[0].weight.at(i) = 0.0;
  p.value.push_back(identity_linear(d));
  p.out = identity_linear(d);
  Tensor tokens = random_tensor({3, d}, rng);
  MhaResult r = multi_head_attention(tokens, p);
  for (int j = 0; j < d; ++j) {
    double mean = 0.0;
    for (int i = 0; i < 3; ++i) mean += tokens.at(static_cast<std::size_t>(i) * d + j);
    mean /= 3.0;
    for (int i = 0; i < 3; ++i)
      EXPECT_NEAR(r.out.at(static_cast<std::size_t>(i) * d + j), mean, 1e-12);
  }
}

TEST(Attention, MatchesNaiveOracleExactly) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    MhaParams p = MhaParams::init(4, 1, rng);
    Tensor tokens = random_tensor({3, 4}, rng);
    MhaResult r = multi_head_attention(tokens, p);
    std::vector<double> expect = naive_attention_1head(tokens, p);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(r.out.at(i), expect[i]);
  }
}

TEST(Attention, RowsSumToOne) {
  Rng rng(13);
  MhaParams p = MhaParams::init(6, 3, rng);
  Tensor tokens = random_tensor({5, 6}, rng);
  MhaResult r = multi_head_attention(tokens, p);
  for (int h = 0; h < 3; ++h)
    for (int i = 0; i < 5; ++i) {
      double s = 0.0;
      for (int j = 0; j < 5; ++j) s += r.attn.at((static_cast<std::size_t>(h) * 5 + i) * 5 + j);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Attention, HeadsMustDivideDim) {
  Rng rng(1);
  EXPECT_THROW(MhaParams::init(7, 2, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// lstm_forward
// ---------------------------------------------------------------------------

TEST(Lstm, ZeroParamsGiveZeroState) {
  LstmParams p;
  p.hidden = 3;
  for (int l = 0; l < 2; ++l) {
    LstmLayerParams lp;
    lp.w_input = Tensor({3, 12});
    lp.w_recur = Tensor({3, 12});
    lp.bias = Tensor({12});
    p.layers.push_back(lp);
  }
  Rng rng(4);
  Tensor seq = random_tensor({5, 3}, rng);
  LstmResult r = lstm_forward(seq, p);
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(r.last.at(static_cast<std::size_t>(j)), 0.0);
}

TEST(Lstm, SingleStepHandComputed) {
  // One layer, one dim: i=sig(x*wi+bi), f, g=tanh(...), o; c=i*g; h=o*tanh(c).
  LstmParams p;
  p.hidden = 1;
  LstmLayerParams lp;
  lp.w_input = Tensor({1, 4}, {0.5, -0.3, 0.8, 0.2});
  lp.w_recur = Tensor({1, 4}, {0.0, 0.0, 0.0, 0.0});
  lp.bias = Tensor({4}, {0.1, 0.2, -0.1, 0.3});
  p.layers.push_back(lp);
  const double x = 0.7;
  Tensor seq({1, 1}, {x});
  LstmResult r = lstm_forward(seq, p);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double gi = sig(x * 0.5 + 0.1);
  double gg = std::tanh(x * 0.8 - 0.1);
  double go = sig(x * 0.2 + 0.3);
  double c = gi * gg;
  double expect = go * std::tanh(c);
  EXPECT_NEAR(r.last.at(0), expect, 1e-12);
}

TEST(Lstm, StatefulAcrossRepeatedFrames) {
  Rng rng(21);
  LstmParams p = LstmParams::init(4, 4, 2, rng, 0.5);
  Tensor frame = random_tensor({1, 4}, rng);
  Tensor seq({2, 4});
  for (int t = 0; t < 2; ++t)
    for (int j = 0; j < 4; ++j) seq.at(static_cast<std::size_t>(t) * 4 + j) = frame.at(static_cast<std::size_t>(j));
  LstmResult r = lstm_forward(seq, p);
  double diff = 0.0;
  for (int j = 0; j < 4; ++j)
    diff += std::fabs(r.states.at(static_cast<std::size_t>(j)) - r.states.at(4 + static_cast<std::size_t>(j)));
  EXPECT_GT(diff, 0.0);
}

TEST(Lstm, LastEqualsFinalState) {
  Rng rng(22);
  LstmParams p = LstmParams::init(3, 5, 2, rng);
  Tensor seq = random_tensor({6, 3}, rng);
  LstmResult r = lstm_forward(seq, p);
  for (int j = 0; j < 5; ++j)
    EXPECT_EQ(r.last.at(static_cast<std::size_t>(j)), r.states.at(static_cast<std::size_t>(5) * 5 + j));
}

// ---------------------------------------------------------------------------
// mean / reductions
// ---------------------------------------------------------------------------

TEST(Mean, Axis0Example) {
  Tensor x({2, 2}, {1.0, 3.0, 3.0, 5.0});
  Tensor y = mean_axis(x, 0);
  EXPECT_DOUBLE_EQ(y.at(0), 2.0);
  EXPECT_DOUBLE_EQ(y.at(1), 4.0);
}

TEST(Mean, SingleElementAxisIsIdentity) {
  Rng rng(8);
  Tensor x = random_tensor({1, 4}, rng);
  Tensor y = mean_axis(x, 0);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(y.at(static_cast<std::size_t>(j)), x.at(static_cast<std::size_t>(j)));
}

TEST(Mean, Linearity) {
  Rng rng(17);
  Tensor a = random_tensor({3, 4, 2}, rng);
  Tensor b = random_tensor({3, 4, 2}, rng);
  for (int axis = 0; axis < 3; ++axis) {
    Tensor lhs = mean_axis(add(a, b), axis);
    Tensor rhs = add(mean_axis(a, axis), mean_axis(b, axis));
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.at(i), rhs.at(i), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// determinism
// ---------------------------------------------------------------------------

TEST(Determinism, ForwardOpsRepeatExactly) {
  Rng rng(31);
  Tensor x = random_tensor({4, 6}, rng);
  LayerNormParams ln = LayerNormParams::init(6);
  MhaParams mha = MhaParams::init(6, 2, rng);
  Tensor y1 = layer_norm(softmax(x, 1), ln);
  Tensor y2 = layer_norm(softmax(x, 1), ln);
  for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_EQ(y1.at(i), y2.at(i));
  MhaResult a1 = multi_head_attention(x, mha);
  MhaResult a2 = multi_head_attention(x, mha);
  for (std::size_t i = 0; i < a1.out.size(); ++i) EXPECT_EQ(a1.out.at(i), a2.out.at(i));
}
