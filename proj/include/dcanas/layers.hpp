#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dcanas/op_set.hpp"
#include "dcanas/ops.hpp"
#include "dcanas/rng.hpp"

namespace dcanas::inline DCANAS_PRECISION {

/// A stateful network component. Parameters are appended to collect_params
/// in construction order, which fixes the initialization and optimizer order.
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual void collect_params(std::vector<Tensor>& out) const = 0;

  std::int64_t param_count() const;
};

/// Weight tensor with uniform(+-1/sqrt(fan_in)) entries.
Tensor init_weight(Shape shape, std::int64_t fan_in, Rng& rng, std::string name);

class BatchNorm {
 public:
  BatchNorm(int channels, bool affine, const std::string& name);
  Tensor forward(const Tensor& x, bool training);
  void collect_params(std::vector<Tensor>& out) const;

  BatchNormStats stats;
  Tensor gamma, beta;  // undefined when not affine
};

/// relu -> conv -> bn
class ReluConvBn final : public Module {
 public:
  ReluConvBn(int c_in, int c_out, int kernel, int stride, int pad, bool affine, Rng& rng,
             const std::string& name);
  Tensor forward(const Tensor& x, bool training) override;
  void collect_params(std::vector<Tensor>& out) const override;

 private:
  Tensor w_;
  ConvParams p_;
  BatchNorm bn_;
};

/// relu -> depthwise (dilated) conv -> pointwise conv -> bn
class DilConv final : public Module {
 public:
  DilConv(int c_in, int c_out, int kernel, int stride, int pad, int dilation, bool affine,
          Rng& rng, const std::string& name);
  Tensor forward(const Tensor& x, bool training) override;
  void collect_params(std::vector<Tensor>& out) const override;

 private:
  Tensor dw_, pw_;
  ConvParams p_;
  BatchNorm bn_;
};

/// Two stacked DilConv blocks with dilation 1; only the first is strided.
class SepConv final : public Module {
 public:
  SepConv(int channels, int kernel, int stride, bool affine, Rng& rng, const std::string& name);
  Tensor forward(const Tensor& x, bool training) override;
  void collect_params(std::vector<Tensor>& out) const override;

 private:
  DilConv first_, second_;
};

/// Halves the spatial extent with two offset strided 1x1 convolutions whose
/// outputs are concatenated. Requires even input extents.
class FactorizedReduce final : public Module {
 public:
  FactorizedReduce(int c_in, int c_out, bool affine, Rng& rng, const std::string& name);
  Tensor forward(const Tensor& x, bool training) override;
  void collect_params(std::vector<Tensor>& out) const override;

 private:
  Tensor w1_, w2_;
  BatchNorm bn_;
};

class Pool final : public Module {
 public:
  Pool(bool max, int channels, int stride, bool with_bn, const std::string& name);
  Tensor forward(const Tensor& x, bool training) override;
  void collect_params(std::vector<Tensor>& out) const override;

 private:
  bool max_;
  PoolParams p_;
  std::unique_ptr<BatchNorm> bn_;
};

/// Skip connection. At stride 2 it keeps every other pixel (no parameters).
class Skip final : public Module {
 public:
  explicit Skip(int stride) : stride_(stride) {}
  Tensor forward(const Tensor& x, bool training) override;
  void collect_params(std::vector<Tensor>&) const override {}

 private:
  int stride_;
};

/// 1x1 reduce to a narrower width, the inner op, then 1x1 expand back.
class Bottleneck final : public Module {
 public:
  using InnerFactory = std::function<std::unique_ptr<Module>(int inner_channels, Rng& rng)>;
  Bottleneck(int channels, int inner_channels, bool affine, Rng& rng, const std::string& name,
             const InnerFactory& make_inner);
  Tensor forward(const Tensor& x, bool training) override;
  void collect_params(std::vector<Tensor>& out) const override;
  const Module& inner() const { return *inner_; }

 private:
  Tensor reduce_;
  BatchNorm reduce_bn_;
  std::unique_ptr<Module> inner_;
  Tensor expand_;
  BatchNorm expand_bn_;
};

struct OpOptions {
  bool affine = false;
  bool pool_bn = false;        // non-affine BN after pools (search phase)
  int bottleneck_ratio = 1;    // 1 disables the wrapper
};

/// Inner width of a channel-bottlenecked op: max(1, floor(C / r)).
int bottleneck_width(int channels, int ratio);

/// Instantiates a candidate op at `channels` in and out. Returns null for
/// the zero op, which has no module.
std::unique_ptr<Module> make_op(OpKind op, int channels, int stride, const OpOptions& opts,
                                Rng& rng, const std::string& name);

}  // namespace dcanas::inline DCANAS_PRECISION
