#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "egovit/gradcheck.hpp"
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

void zero_all(std::vector<Tensor>& params) {
  for (Tensor& t : params) t.zero_grad();
}

// Runs the scalar function once under grad mode, backprops, and compares
// against central finite differences for every parameter scalar.
void check_gradients(std::vector<Tensor>& params, const std::function<Tensor()>& f,
                     double tol = 1e-4) {
  zero_all(params);
  {
    GradMode on(true);
    Tensor loss = f();
    loss.backward();
  }
  auto scalar = [&]() { return f().item(); };
  std::vector<double> numeric = finite_diff_grad(scalar, params);
  GradCheckResult r = compare_grads(params, numeric);
  EXPECT_LT(r.max_rel_err, tol) << "worst index " << r.worst_index << ": analytic "
                                << r.analytic_at_worst << " vs numeric " << r.numeric_at_worst;
}

}  // namespace

TEST(Gradcheck, QuadraticIsExact) {
  Tensor p({3}, {1.0, -2.0, 0.5});
  p.set_requires_grad(true);
  std::vector<Tensor> params{p};
  auto f = [&]() {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += p.at(static_cast<std::size_t>(i)) * p.at(static_cast<std::size_t>(i));
    return s;
  };
  std::vector<double> g = finite_diff_grad(f, params);
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(g[static_cast<std::size_t>(i)], 2.0 * p.at(static_cast<std::size_t>(i)), 1e-8);
}

TEST(Gradcheck, LinearIsStepIndependent) {
  Tensor p({2}, {0.3, -0.7});
  p.set_requires_grad(true);
  std::vector<Tensor> params{p};
  auto f = [&]() { return 3.0 * p.at(0) - 5.0 * p.at(1); };
  std::vector<double> g1 = finite_diff_grad(f, params, 1e-5);
  std::vector<double> g2 = finite_diff_grad(f, params, 1e-3);
  EXPECT_NEAR(g1[0], 3.0, 1e-9);
  EXPECT_NEAR(g2[0], 3.0, 1e-9);
  EXPECT_NEAR(g1[1], -5.0, 1e-9);
  EXPECT_NEAR(g2[1], -5.0, 1e-9);
}

TEST(Gradcheck, RefusesOversizedParameterSets) {
  Tensor big({101, 100});
  big.set_requires_grad(true);
  std::vector<Tensor> params{big};
  auto f = [&]() { return 0.0; };
  EXPECT_THROW(finite_diff_grad(f, params), std::invalid_argument);
}

TEST(Backward, ElementwiseChain) {
  Rng rng(1);
  Tensor a = random_tensor({3, 4}, rng).set_requires_grad(true);
  Tensor b = random_tensor({3, 4}, rng).set_requires_grad(true);
  std::vector<Tensor> params{a, b};
  check_gradients(params, [&]() {
    return mean_all(mul(tanh_op(a), sigmoid(sub(scale(b, 1.7), a))));
  });
}

TEST(Backward, GeluChain) {
  Rng rng(2);
  Tensor a = random_tensor({2, 5}, rng).set_requires_grad(true);
  std::vector<Tensor> params{a};
  check_gradients(params, [&]() { return mean_all(gelu(a)); });
}

TEST(Backward, MatmulBothVariants) {
  Rng rng(3);
  Tensor a = random_tensor({3, 4}, rng).set_requires_grad(true);
  Tensor b = random_tensor({4, 2}, rng).set_requires_grad(true);
  Tensor c = random_tensor({5, 4}, rng).set_requires_grad(true);
  std::vector<Tensor> params{a, b, c};
  check_gradients(params, [&]() {
    return mean_all(add(mean_axis(matmul(a, b), 1), mean_axis(matmul_nt(a, c), 1)));
  });
}

TEST(Backward, LinearLayerNormSoftmax) {
  Rng rng(4);
  LinearParams lin = LinearParams::init(4, 6, rng, 0.5);
  LayerNormParams ln = LayerNormParams::init(6);
  Tensor x = random_tensor({3, 4}, rng).set_requires_grad(true);
  std::vector<Tensor> params{x};
  lin.collect(params);
  ln.collect(params);
  check_gradients(params, [&]() {
    return mean_all(softmax(layer_norm(linear_forward(x, lin), ln), 1));
  });
}

TEST(Backward, SoftmaxMiddleAxis) {
  Rng rng(5);
  Tensor x = random_tensor({2, 3, 4}, rng).set_requires_grad(true);
  Tensor w = random_tensor({2, 3, 4}, rng);
  std::vector<Tensor> params{x};
  check_gradients(params, [&]() { return mean_all(mul(softmax(x, 1), w)); });
}

TEST(Backward, AttentionBlock) {
  Rng rng(6);
  MhaParams p = MhaParams::init(6, 2, rng);
  Tensor tokens = random_tensor({4, 6}, rng).set_requires_grad(true);
  std::vector<Tensor> params{tokens};
  p.collect(params);
  check_gradients(params, [&]() {
    return mean_all(multi_head_attention(tokens, p).out);
  });
}

TEST(Backward, TransformerBlock) {
  Rng rng(7);
  BlockParams p = BlockParams::init(6, 2, 12, rng);
  Tensor tokens = random_tensor({4, 6}, rng).set_requires_grad(true);
  std::vector<Tensor> params{tokens};
  p.collect(params);
  check_gradients(params, [&]() { return mean_all(block_forward(tokens, p).tokens); });
}

TEST(Backward, Lstm) {
  Rng rng(8);
  LstmParams p = LstmParams::init(3, 4, 2, rng, 0.5);
  Tensor seq = random_tensor({5, 3}, rng).set_requires_grad(true);
  std::vector<Tensor> params{seq};
  p.collect(params);
  check_gradients(params, [&]() { return mean_all(lstm_forward(seq, p).states); });
}

TEST(Backward, GatherConcatSlice) {
  Rng rng(9);
  Tensor x = random_tensor({6, 3}, rng).set_requires_grad(true);
  Tensor y = random_tensor({2, 3}, rng).set_requires_grad(true);
  std::vector<Tensor> params{x, y};
  std::vector<int> idx{5, 0, 0, 3, 2};  // repeated index exercises scatter-add
  check_gradients(params, [&]() {
    Tensor g = gather_rows(x, 3, idx);
    Tensor c = concat_rows({g, y});
    Tensor s = slice_rows(c, 1, 4);
    Tensor l = slice_last(concat_last({s, s}), 2, 3);
    return mean_all(l);
  });
}

TEST(Backward, RowGeometryOps) {
  Rng rng(10);
  Tensor x = random_tensor({4, 5}, rng).set_requires_grad(true);
  Tensor y = random_tensor({4, 5}, rng).set_requires_grad(true);
  Tensor s = random_tensor({4}, rng).set_requires_grad(true);
  std::vector<Tensor> params{x, y, s};
  check_gradients(params, [&]() {
    Tensor nx = normalize_rows(x, 1e-8);
    Tensor d = rowwise_dot(nx, normalize_rows(y, 1e-8));
    Tensor out = scale_rows(x, softmax(add(d, s), 0));
    return mean_all(out);
  });
}

TEST(Backward, Reductions) {
  Rng rng(11);
  Tensor x = random_tensor({3, 4, 2}, rng).set_requires_grad(true);
  std::vector<Tensor> params{x};
  check_gradients(params, [&]() {
    return mean_all(add(sum_axis(x, 1), scale(mean_axis(x, 1), 0.3)));
  });
}

TEST(Backward, AddBias) {
  Rng rng(12);
  Tensor x = random_tensor({5, 3}, rng).set_requires_grad(true);
  Tensor b = random_tensor({3}, rng).set_requires_grad(true);
  std::vector<Tensor> params{x, b};
  check_gradients(params, [&]() { return mean_all(gelu(add_bias(x, b))); });
}

TEST(Backward, CrossEntropyMatchesFiniteDifference) {
  Rng rng(13);
  Tensor logits = random_tensor({4}, rng).set_requires_grad(true);
  std::vector<Tensor> params{logits};
  check_gradients(params, [&]() { return cross_entropy(logits, 2); }, 1e-6);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  Rng rng(14);
  LinearParams lin = LinearParams::init(3, 3, rng);
  Tensor x = random_tensor({2, 3}, rng);
  std::vector<Tensor> params;
  lin.collect(params);
  zero_all(params);
  {
    GradMode on(true);
    Tensor loss = scale(mean_all(linear_forward(x, lin)), 0.0);
    loss.backward();
  }
  for (const Tensor& t : params)
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t.grad()[i], 0.0);
}

TEST(Backward, OffPathParameterGradsAreExactlyZero) {
  Rng rng(15);
  LinearParams used = LinearParams::init(3, 3, rng);
  LinearParams unused = LinearParams::init(3, 3, rng);
  Tensor x = random_tensor({2, 3}, rng);
  std::vector<Tensor> all;
  used.collect(all);
  unused.collect(all);
  zero_all(all);
  {
    GradMode on(true);
    Tensor loss = mean_all(linear_forward(x, used));
    loss.backward();
  }
  std::vector<Tensor> off;
  unused.collect(off);
  for (const Tensor& t : off)
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t.grad()[i], 0.0);
}

TEST(Backward, RepeatedBackwardIsDeterministic) {
  Rng rng(16);
  BlockParams p = BlockParams::init(4, 1, 8, rng);
  Tensor tokens = random_tensor({3, 4}, rng);
  std::vector<Tensor> params;
  p.collect(params);

  auto run = [&]() {
    zero_all(params);
    GradMode on(true);
    Tensor loss = mean_all(block_forward(tokens, p).tokens);
    loss.backward();
    std::vector<double> grads;
    for (const Tensor& t : params)
      for (std::size_t i = 0; i < t.size(); ++i) grads.push_back(t.grad()[i]);
    return grads;
  };
  std::vector<double> g1 = run();
  std::vector<double> g2 = run();
  ASSERT_EQ(g1.size(), g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g1[i], g2[i]);
}
