#pragma once

#include <span>
#include <vector>

#include "dcanas/rng.hpp"
#include "dcanas/tensor.hpp"

// Differentiable primitives. Image tensors are NCHW. Every primitive records
// itself for backward when an input requires grad; shape violations raise
// ShapeError naming the primitive and the offending extents.

namespace dcanas::inline DCANAS_PRECISION {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real value);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor add_n(std::span<const Tensor> terms);

/// out = sum_k weights[weight_index[k]] * terms[k]; gradients flow to both the
/// scalar weights and the terms.
Tensor weighted_sum(std::span<const Tensor> terms, const Tensor& weights,
                    std::span<const int> weight_index);

/// Row `row` of a rank-2 tensor as a rank-1 tensor.
Tensor select_row(const Tensor& a, std::int64_t row);

/// sum_i a_i * coeffs_i for a constant coefficient vector.
Tensor dot_const(const Tensor& a, std::span<const Real> coeffs);

Tensor matmul(const Tensor& a, const Tensor& b);
/// x[n, in] * w[out, in]^T + bias[out]; pass an undefined bias to omit it.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

struct ConvParams {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

/// Dense convolution, x[N, Cin, H, W] with w[Cout, Cin, kh, kw]; no bias.
Tensor conv2d(const Tensor& x, const Tensor& w, ConvParams p);
/// Per-channel convolution, x[N, C, H, W] with w[C, 1, kh, kw].
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, ConvParams p);

struct PoolParams {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

Tensor max_pool2d(const Tensor& x, PoolParams p);
/// Average over in-bounds taps only (padding excluded from the divisor).
Tensor avg_pool2d(const Tensor& x, PoolParams p);

Tensor relu(const Tensor& x);

/// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = Real(0.1);
  Real eps = Real(1e-5);

  explicit BatchNormStats(std::int64_t channels = 0)
      : running_mean(static_cast<std::size_t>(channels), Real(0)),
        running_var(static_cast<std::size_t>(channels), Real(1)) {}
};

/// Batch normalisation over (N, H, W) per channel. In training mode batch
/// statistics are used and the running buffers updated; otherwise the running
/// buffers are used. gamma/beta may be undefined (no affine transform).
Tensor batch_norm(const Tensor& x, BatchNormStats& stats, bool training, const Tensor& gamma,
                  const Tensor& beta);

/// Softmax over the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
/// Mean negative log-likelihood of integer labels under logits[N, K]. With
/// smoothing e the target is (1 - e) one-hot plus e spread uniformly.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, Real smoothing = 0);
/// Fraction of rows of logits[N, K] whose first maximal entry is the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor reshape(const Tensor& x, Shape shape);
/// x[N, C, H, W] -> [N, C].
Tensor global_avg_pool(const Tensor& x);
/// Spatial window x[:, :, top:top+height, left:left+width].
Tensor crop(const Tensor& x, int top, int left, int height, int width);

/// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, Real p, Rng& rng, bool training);

std::int64_t conv_out_extent(std::int64_t in, int kernel, ConvParams p);

}  // namespace dcanas::inline DCANAS_PRECISION
