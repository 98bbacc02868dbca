// Compiled with 64-bit reals.
#include <gtest/gtest.h>

#include <cmath>

#include "dcanas/layers.hpp"
#include "dcanas/ops.hpp"
#include "finite_diff.hpp"

using namespace dcanas;
using oracle::check_gradients;
using oracle::random_tensor;

static_assert(std::is_same_v<Real, double>);

namespace {
constexpr double kTol = 1e-4;
using Inputs = std::vector<Tensor>;
}  // namespace

TEST(GradCheck, Elementwise) {
  Rng rng(1);
  Shape s{2, 3};
  EXPECT_LT(check_gradients({random_tensor(s, rng), random_tensor(s, rng)},
                            [](const Inputs& in) { return add(in[0], in[1]); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor(s, rng), random_tensor(s, rng)},
                            [](const Inputs& in) { return sub(in[0], in[1]); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor(s, rng), random_tensor(s, rng)},
                            [](const Inputs& in) { return mul(in[0], in[1]); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor(s, rng)},
                            [](const Inputs& in) { return scale(add_scalar(in[0], 0.3), -1.7); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor(s, rng)}, [](const Inputs& in) { return mean(in[0]); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor(s, rng), random_tensor(s, rng), random_tensor(s, rng)},
                            [](const Inputs& in) { return add_n(in); }, rng), kTol);
}

TEST(GradCheck, WeightedSumAndRows) {
  Rng rng(2);
  Shape s{2, 2, 3};
  Inputs in{random_tensor(s, rng), random_tensor(s, rng), random_tensor({4, 3}, rng)};
  EXPECT_LT(check_gradients(in,
                            [](const Inputs& v) {
                              const int idx[] = {0, 2};
                              const Tensor terms[] = {v[0], v[1]};
                              return weighted_sum(terms, softmax(select_row(v[2], 1)), idx);
                            },
                            rng),
            kTol);
}

TEST(GradCheck, MatmulAndLinear) {
  Rng rng(3);
  EXPECT_LT(check_gradients({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                            [](const Inputs& in) { return matmul(in[0], in[1]); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5}, rng)},
                            [](const Inputs& in) { return linear(in[0], in[1], in[2]); }, rng), kTol);
}

TEST(GradCheck, Convolutions) {
  Rng rng(4);
  for (ConvParams p : {ConvParams{1, 1, 1}, ConvParams{2, 1, 1}, ConvParams{1, 2, 2}, ConvParams{2, 0, 1}}) {
    EXPECT_LT(check_gradients({random_tensor({2, 3, 6, 6}, rng), random_tensor({4, 3, 3, 3}, rng)},
                              [p](const Inputs& in) { return conv2d(in[0], in[1], p); }, rng), kTol);
    EXPECT_LT(check_gradients({random_tensor({2, 3, 6, 6}, rng), random_tensor({3, 1, 3, 3}, rng)},
                              [p](const Inputs& in) { return depthwise_conv2d(in[0], in[1], p); }, rng), kTol);
  }
  EXPECT_LT(check_gradients({random_tensor({2, 3, 5, 5}, rng), random_tensor({2, 3, 1, 1}, rng)},
                            [](const Inputs& in) { return conv2d(in[0], in[1], {}); }, rng), kTol);
}

TEST(GradCheck, Pooling) {
  Rng rng(5);
  for (PoolParams p : {PoolParams{3, 1, 1}, PoolParams{3, 2, 1}, PoolParams{1, 2, 0}}) {
    EXPECT_LT(check_gradients({random_tensor({2, 2, 6, 6}, rng)},
                              [p](const Inputs& in) { return max_pool2d(in[0], p); }, rng), kTol);
    EXPECT_LT(check_gradients({random_tensor({2, 2, 6, 6}, rng)},
                              [p](const Inputs& in) { return avg_pool2d(in[0], p); }, rng), kTol);
  }
  EXPECT_LT(check_gradients({random_tensor({2, 3, 4, 4}, rng)},
                            [](const Inputs& in) { return global_avg_pool(in[0]); }, rng), kTol);
}

TEST(GradCheck, BatchNorm) {
  Rng rng(6);
  for (bool training : {true, false}) {
    BatchNormStats stats(3);
    stats.running_mean = {0.1, -0.2, 0.3};
    stats.running_var = {1.5, 0.7, 2.0};
    EXPECT_LT(check_gradients({random_tensor({4, 3, 3, 3}, rng), random_tensor({3}, rng), random_tensor({3}, rng)},
                              [&](const Inputs& in) { return batch_norm(in[0], stats, training, in[1], in[2]); },
                              rng),
              kTol)
        << "training=" << training;
    EXPECT_LT(check_gradients({random_tensor({4, 3, 3, 3}, rng)},
                              [&](const Inputs& in) { return batch_norm(in[0], stats, training, Tensor(), Tensor()); },
                              rng),
              kTol);
  }
}

TEST(GradCheck, SoftmaxFamily) {
  Rng rng(7);
  EXPECT_LT(check_gradients({random_tensor({3, 5}, rng)}, [](const Inputs& in) { return softmax(in[0]); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor({3, 5}, rng)}, [](const Inputs& in) { return log_softmax(in[0]); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor({3, 5}, rng)},
                            [](const Inputs& in) {
                              const int labels[] = {4, 0, 2};
                              return cross_entropy(in[0], labels);
                            },
                            rng),
            kTol);
  EXPECT_LT(check_gradients({random_tensor({3, 5}, rng)},
                            [](const Inputs& in) {
                              const int labels[] = {1, 3, 3};
                              return cross_entropy(in[0], labels, 0.1);
                            },
                            rng),
            kTol);
}

TEST(CrossEntropy, SmoothedTargetValue) {
  // Oracle: -sum_k q_k log p_k with q = (1 - e) onehot + e / K.
  const Tensor logits = Tensor::from({1, 3}, {0.5, -1.0, 2.0});
  const int labels[] = {0};
  const double z = std::exp(0.5) + std::exp(-1.0) + std::exp(2.0);
  const double lp[] = {0.5 - std::log(z), -1.0 - std::log(z), 2.0 - std::log(z)};
  const double e = 0.2;
  const double expect = -((1 - e + e / 3) * lp[0] + (e / 3) * lp[1] + (e / 3) * lp[2]);
  EXPECT_NEAR(cross_entropy(logits, labels, e).item(), expect, 1e-12);
  EXPECT_NEAR(cross_entropy(logits, labels, 0.0).item(), -lp[0], 1e-12);
  EXPECT_THROW(cross_entropy(logits, labels, 1.0), std::invalid_argument);
}

TEST(GradCheck, Structural) {
  Rng rng(8);
  EXPECT_LT(check_gradients({random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 1, 3, 3}, rng)},
                            [](const Inputs& in) { return concat(in, 1); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)},
                            [](const Inputs& in) { return concat(in, 0); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor({2, 6}, rng)},
                            [](const Inputs& in) { return reshape(in[0], {3, 4}); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor({1, 2, 5, 5}, rng)},
                            [](const Inputs& in) { return crop(in[0], 1, 1, 4, 4); }, rng), kTol);
  EXPECT_LT(check_gradients({random_tensor({2, 5}, rng)},
                            [](const Inputs& in) {
                              Rng mask(99);  // same mask on every evaluation
                              return dropout(in[0], 0.3, mask, true);
                            },
                            rng),
            kTol);
}

TEST(GradCheck, ReluAwayFromKink) {
  Rng rng(9);
  Tensor x = random_tensor({3, 4}, rng);
  for (auto& v : x.data()) v += v >= 0 ? 0.1 : -0.1;
  EXPECT_LT(check_gradients({x}, [](const Inputs& in) { return relu(in[0]); }, rng), kTol);
}

TEST(GradCheck, ThreeLayerMlpAtCoarseEpsilon) {
  Rng rng(10);
  Inputs params{random_tensor({8, 5}, rng, 0.5), random_tensor({8}, rng, 0.1),
                random_tensor({6, 8}, rng, 0.5), random_tensor({6}, rng, 0.1),
                random_tensor({3, 6}, rng, 0.5), random_tensor({3}, rng, 0.1)};
  Tensor x = random_tensor({4, 5}, rng, 1.0, false);
  const int labels[] = {0, 2, 1, 2};
  auto loss = [&](const Inputs& p) {
    Tensor h = relu(linear(x, p[0], p[1]));
    h = relu(linear(h, p[2], p[3]));
    return cross_entropy(linear(h, p[4], p[5]), labels);
  };
  for (auto& p : params) p.zero_grad();
  backward(loss(params));
  for (auto& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto f = [&] {
      NoGradGuard g;
      return loss(params).item();
    };
    EXPECT_LT(oracle::relative_error(analytic, oracle::numeric_grad(p, f, 1e-3)), 1e-4);
  }
}

TEST(GradCheck, CellModules) {
  Rng rng(11);
  for (OpKind op : {OpKind::sep_conv_3x3, OpKind::dil_conv_5x5, OpKind::avg_pool_3x3, OpKind::max_pool_3x3}) {
    for (int stride : {1, 2}) {
      OpOptions opts;
      opts.pool_bn = true;
      opts.bottleneck_ratio = is_parametric(op) ? 2 : 1;
      Rng init(1);
      auto m = make_op(op, 4, stride, opts, init, std::string(op_name(op)));
      Tensor x = random_tensor({2, 4, 6, 6}, rng);
      for (auto& v : x.data()) v += v >= 0 ? 0.05 : -0.05;
      std::vector<Tensor> inputs{x};
      m->collect_params(inputs);
      EXPECT_LT(check_gradients(inputs, [&](const Inputs& in) { return m->forward(in[0], true); }, rng), kTol)
          << op_name(op) << " stride " << stride;
    }
  }
}
