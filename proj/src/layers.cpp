#include "dcanas/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcanas::inline DCANAS_PRECISION {

std::int64_t Module::param_count() const {
  std::vector<Tensor> params;
  collect_params(params);
  std::int64_t n = 0;
  for (const auto& p : params) n += p.numel();
  return n;
}

Tensor init_weight(Shape shape, std::int64_t fan_in, Rng& rng, std::string name) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<Real> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<Real>(rng.uniform(-bound, bound));
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  t.set_name(std::move(name));
  return t;
}

BatchNorm::BatchNorm(int channels, bool affine, const std::string& name) : stats(channels) {
  if (affine) {
    gamma = Tensor::full({channels}, Real(1), true);
    gamma.set_name(name + ".gamma");
    beta = Tensor::zeros({channels}, true);
    beta.set_name(name + ".beta");
  }
}

Tensor BatchNorm::forward(const Tensor& x, bool training) {
  return batch_norm(x, stats, training, gamma, beta);
}

void BatchNorm::collect_params(std::vector<Tensor>& out) const {
  if (gamma.defined()) {
    out.push_back(gamma);
    out.push_back(beta);
  }
}

ReluConvBn::ReluConvBn(int c_in, int c_out, int kernel, int stride, int pad, bool affine,
                       Rng& rng, const std::string& name)
    : w_(init_weight({c_out, c_in, kernel, kernel}, std::int64_t{c_in} * kernel * kernel, rng,
                     name + ".conv")),
      p_{stride, pad, 1},
      bn_(c_out, affine, name + ".bn") {}

Tensor ReluConvBn::forward(const Tensor& x, bool training) {
  return bn_.forward(conv2d(relu(x), w_, p_), training);
}

void ReluConvBn::collect_params(std::vector<Tensor>& out) const {
  out.push_back(w_);
  bn_.collect_params(out);
}

DilConv::DilConv(int c_in, int c_out, int kernel, int stride, int pad, int dilation, bool affine,
                 Rng& rng, const std::string& name)
    : dw_(init_weight({c_in, 1, kernel, kernel}, std::int64_t{kernel} * kernel, rng, name + ".dw")),
      pw_(init_weight({c_out, c_in, 1, 1}, c_in, rng, name + ".pw")),
      p_{stride, pad, dilation},
      bn_(c_out, affine, name + ".bn") {}

Tensor DilConv::forward(const Tensor& x, bool training) {
  Tensor h = depthwise_conv2d(relu(x), dw_, p_);
  return bn_.forward(conv2d(h, pw_, {}), training);
}

void DilConv::collect_params(std::vector<Tensor>& out) const {
  out.push_back(dw_);
  out.push_back(pw_);
  bn_.collect_params(out);
}

SepConv::SepConv(int channels, int kernel, int stride, bool affine, Rng& rng,
                 const std::string& name)
    : first_(channels, channels, kernel, stride, kernel / 2, 1, affine, rng, name + ".0"),
      second_(channels, channels, kernel, 1, kernel / 2, 1, affine, rng, name + ".1") {}

Tensor SepConv::forward(const Tensor& x, bool training) {
  return second_.forward(first_.forward(x, training), training);
}

void SepConv::collect_params(std::vector<Tensor>& out) const {
  first_.collect_params(out);
  second_.collect_params(out);
}

FactorizedReduce::FactorizedReduce(int c_in, int c_out, bool affine, Rng& rng,
                                   const std::string& name)
    : w1_(init_weight({c_out / 2, c_in, 1, 1}, c_in, rng, name + ".conv1")),
      w2_(init_weight({c_out - c_out / 2, c_in, 1, 1}, c_in, rng, name + ".conv2")),
      bn_(c_out, affine, name + ".bn") {
  if (c_out < 2) throw std::invalid_argument(name + ": factorized reduce needs >= 2 channels");
}

Tensor FactorizedReduce::forward(const Tensor& x, bool training) {
  const auto h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("factorized_reduce: odd spatial extent " + shape_str(x.shape()));
  }
  Tensor r = relu(x);
  Tensor a = conv2d(r, w1_, {2, 0, 1});
  Tensor b = conv2d(crop(r, 1, 1, static_cast<int>(h - 1), static_cast<int>(w - 1)), w2_, {2, 0, 1});
  const Tensor parts[] = {a, b};
  return bn_.forward(concat(parts, 1), training);
}

void FactorizedReduce::collect_params(std::vector<Tensor>& out) const {
  out.push_back(w1_);
  out.push_back(w2_);
  bn_.collect_params(out);
}

Pool::Pool(bool max, int channels, int stride, bool with_bn, const std::string& name)
    : max_(max), p_{3, stride, 1} {
  if (with_bn) bn_ = std::make_unique<BatchNorm>(channels, false, name + ".bn");
}

Tensor Pool::forward(const Tensor& x, bool training) {
  Tensor y = max_ ? max_pool2d(x, p_) : avg_pool2d(x, p_);
  return bn_ ? bn_->forward(y, training) : y;
}

void Pool::collect_params(std::vector<Tensor>& out) const {
  if (bn_) bn_->collect_params(out);
}

Tensor Skip::forward(const Tensor& x, bool) {
  if (stride_ == 1) return x;
  return avg_pool2d(x, {1, stride_, 0});
}

Bottleneck::Bottleneck(int channels, int inner_channels, bool affine, Rng& rng,
                       const std::string& name, const InnerFactory& make_inner)
    : reduce_(init_weight({inner_channels, channels, 1, 1}, channels, rng, name + ".reduce")),
      reduce_bn_(inner_channels, affine, name + ".reduce_bn"),
      inner_(make_inner(inner_channels, rng)),
      expand_(init_weight({channels, inner_channels, 1, 1}, inner_channels, rng, name + ".expand")),
      expand_bn_(channels, affine, name + ".expand_bn") {}

Tensor Bottleneck::forward(const Tensor& x, bool training) {
  Tensor h = reduce_bn_.forward(conv2d(x, reduce_, {}), training);
  h = inner_->forward(h, training);
  return expand_bn_.forward(conv2d(h, expand_, {}), training);
}

void Bottleneck::collect_params(std::vector<Tensor>& out) const {
  out.push_back(reduce_);
  reduce_bn_.collect_params(out);
  inner_->collect_params(out);
  out.push_back(expand_);
  expand_bn_.collect_params(out);
}

int bottleneck_width(int channels, int ratio) {
  if (ratio <= 0) throw std::invalid_argument("bottleneck ratio must be positive, got " + std::to_string(ratio));
  return std::max(1, channels / ratio);
}

namespace {

std::unique_ptr<Module> make_plain(OpKind op, int c, int stride, const OpOptions& opts, Rng& rng,
                                   const std::string& name) {
  switch (op) {
    case OpKind::zero:
      return nullptr;
    case OpKind::skip_connect:
      return std::make_unique<Skip>(stride);
    case OpKind::max_pool_3x3:
      return std::make_unique<Pool>(true, c, stride, opts.pool_bn, name);
    case OpKind::avg_pool_3x3:
      return std::make_unique<Pool>(false, c, stride, opts.pool_bn, name);
    case OpKind::sep_conv_3x3:
      return std::make_unique<SepConv>(c, 3, stride, opts.affine, rng, name);
    case OpKind::sep_conv_5x5:
      return std::make_unique<SepConv>(c, 5, stride, opts.affine, rng, name);
    case OpKind::dil_conv_3x3:
      return std::make_unique<DilConv>(c, c, 3, stride, 2, 2, opts.affine, rng, name);
    case OpKind::dil_conv_5x5:
      return std::make_unique<DilConv>(c, c, 5, stride, 4, 2, opts.affine, rng, name);
  }
  throw std::invalid_argument("unknown op");
}

}  // namespace

std::unique_ptr<Module> make_op(OpKind op, int channels, int stride, const OpOptions& opts,
                                Rng& rng, const std::string& name) {
  const int inner = bottleneck_width(channels, opts.bottleneck_ratio);
  if (opts.bottleneck_ratio == 1 || !is_parametric(op)) {
    return make_plain(op, channels, stride, opts, rng, name);
  }
  return std::make_unique<Bottleneck>(
      channels, inner, opts.affine, rng, name, [&](int width, Rng& r) {
        return make_plain(op, width, stride, opts, r, name + ".inner");
      });
}

}  // namespace dcanas::inline DCANAS_PRECISION
