#include "dcanas/ops.hpp"

#include <stdexcept>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dcanas::inline DCANAS_PRECISION {

namespace {

using Impl = std::shared_ptr<TensorImpl>;
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_rank(const char* op, const Tensor& t, std::size_t rank, const char* role) {
  if (!t.defined()) shape_fail(op, std::string(role) + " is undefined");
  if (t.rank() != rank) {
    shape_fail(op, std::string(role) + " must have rank " + std::to_string(rank) + ", got " +
                       shape_str(t.shape()));
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) shape_fail(op, "undefined operand");
  if (a.shape() != b.shape()) {
    shape_fail(op, "operand shapes differ: " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  }
}

std::size_t to_size(std::int64_t v) { return static_cast<std::size_t>(v); }

}  // namespace

std::int64_t conv_out_extent(std::int64_t in, int kernel, ConvParams p) {
  return (in + 2 * p.pad - p.dilation * (kernel - 1) - 1) / p.stride + 1;
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<Real> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  Impl ai = a.impl(), bi = b.impl();
  return detail::make_result("add", a.shape(), std::move(out), {ai, bi},
                             [ai, bi](const TensorImpl& o) {
                               for (const Impl& t : {ai, bi}) {
                                 if (!t->requires_grad) continue;
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   t->grad[i] += o.grad[i];
                               }
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<Real> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  Impl ai = a.impl(), bi = b.impl();
  return detail::make_result("sub", a.shape(), std::move(out), {ai, bi},
                             [ai, bi](const TensorImpl& o) {
                               if (ai->requires_grad)
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   ai->grad[i] += o.grad[i];
                               if (bi->requires_grad)
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   bi->grad[i] -= o.grad[i];
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<Real> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  Impl ai = a.impl(), bi = b.impl();
  return detail::make_result("mul", a.shape(), std::move(out), {ai, bi},
                             [ai, bi](const TensorImpl& o) {
                               if (ai->requires_grad)
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   ai->grad[i] += o.grad[i] * bi->data[i];
                               if (bi->requires_grad)
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   bi->grad[i] += o.grad[i] * ai->data[i];
                             });
}

Tensor scale(const Tensor& a, Real factor) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  Impl ai = a.impl();
  return detail::make_result("scale", a.shape(), std::move(out), {ai},
                             [ai, factor](const TensorImpl& o) {
                               for (std::size_t i = 0; i < o.grad.size(); ++i)
                                 ai->grad[i] += o.grad[i] * factor;
                             });
}

Tensor add_scalar(const Tensor& a, Real value) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += value;
  Impl ai = a.impl();
  return detail::make_result("add_scalar", a.shape(), std::move(out), {ai},
                             [ai](const TensorImpl& o) {
                               for (std::size_t i = 0; i < o.grad.size(); ++i)
                                 ai->grad[i] += o.grad[i];
                             });
}

Tensor sum(const Tensor& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  Impl ai = a.impl();
  return detail::make_result("sum", Shape{}, {total}, {ai}, [ai](const TensorImpl& o) {
    const Real g = o.grad[0];
    for (auto& v : ai->grad) v += g;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) shape_fail("mean", "empty tensor");
  Real total = 0;
  for (Real v : a.data()) total += v;
  const Real n = static_cast<Real>(a.numel());
  Impl ai = a.impl();
  return detail::make_result("mean", Shape{}, {total / n}, {ai}, [ai, n](const TensorImpl& o) {
    const Real g = o.grad[0] / n;
    for (auto& v : ai->grad) v += g;
  });
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) shape_fail("add_n", "no terms");
  for (const auto& t : terms) require_same("add_n", terms[0], t);
  if (terms.size() == 1) return terms[0];
  std::vector<Real> out(terms[0].data().begin(), terms[0].data().end());
  std::vector<Impl> inputs;
  inputs.reserve(terms.size());
  inputs.push_back(terms[0].impl());
  for (std::size_t k = 1; k < terms.size(); ++k) {
    auto d = terms[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
    inputs.push_back(terms[k].impl());
  }
  auto captured = inputs;
  return detail::make_result("add_n", terms[0].shape(), std::move(out), std::move(inputs),
                             [captured](const TensorImpl& o) {
                               for (const Impl& t : captured) {
                                 if (!t->requires_grad) continue;
                                 for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   t->grad[i] += o.grad[i];
                               }
                             });
}

Tensor weighted_sum(std::span<const Tensor> terms, const Tensor& weights,
                    std::span<const int> weight_index) {
  if (terms.empty()) shape_fail("weighted_sum", "no terms");
  if (terms.size() != weight_index.size()) {
    shape_fail("weighted_sum", std::to_string(terms.size()) + " terms but " +
                                   std::to_string(weight_index.size()) + " weight indices");
  }
  require_rank("weighted_sum", weights, 1, "weights");
  for (std::size_t k = 0; k < terms.size(); ++k) {
    require_same("weighted_sum", terms[0], terms[k]);
    if (weight_index[k] < 0 || weight_index[k] >= weights.numel()) {
      shape_fail("weighted_sum", "weight index " + std::to_string(weight_index[k]) +
                                     " out of range for " + shape_str(weights.shape()));
    }
  }
  auto w = weights.data();
  std::vector<Real> out(to_size(terms[0].numel()), Real(0));
  std::vector<Impl> inputs{weights.impl()};
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const Real wk = w[to_size(weight_index[k])];
    auto d = terms[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wk * d[i];
    inputs.push_back(terms[k].impl());
  }
  std::vector<int> index(weight_index.begin(), weight_index.end());
  auto captured = inputs;
  return detail::make_result(
      "weighted_sum", terms[0].shape(), std::move(out), std::move(inputs),
      [captured, index](const TensorImpl& o) {
        const Impl& wi = captured[0];
        for (std::size_t k = 0; k < index.size(); ++k) {
          const Impl& t = captured[k + 1];
          const std::size_t slot = static_cast<std::size_t>(index[k]);
          if (t->requires_grad) {
            const Real wk = wi->data[slot];
            for (std::size_t i = 0; i < o.grad.size(); ++i) t->grad[i] += wk * o.grad[i];
          }
          if (wi->requires_grad) {
            Real acc = 0;
            for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * t->data[i];
            wi->grad[slot] += acc;
          }
        }
      });
}

Tensor select_row(const Tensor& a, std::int64_t row) {
  require_rank("select_row", a, 2, "input");
  if (row < 0 || row >= a.dim(0)) {
    shape_fail("select_row", "row " + std::to_string(row) + " out of range for " +
                                 shape_str(a.shape()));
  }
  const std::int64_t cols = a.dim(1);
  auto d = a.data().subspan(to_size(row * cols), to_size(cols));
  Impl ai = a.impl();
  return detail::make_result("select_row", Shape{cols}, std::vector<Real>(d.begin(), d.end()),
                             {ai}, [ai, row, cols](const TensorImpl& o) {
                               for (std::int64_t j = 0; j < cols; ++j)
                                 ai->grad[to_size(row * cols + j)] += o.grad[to_size(j)];
                             });
}

Tensor dot_const(const Tensor& a, std::span<const Real> coeffs) {
  if (static_cast<std::int64_t>(coeffs.size()) != a.numel()) {
    shape_fail("dot_const", "tensor " + shape_str(a.shape()) + " vs " +
                                std::to_string(coeffs.size()) + " coefficients");
  }
  Real total = 0;
  auto d = a.data();
  for (std::size_t i = 0; i < coeffs.size(); ++i) total += d[i] * coeffs[i];
  Impl ai = a.impl();
  std::vector<Real> c(coeffs.begin(), coeffs.end());
  return detail::make_result("dot_const", Shape{}, {total}, {ai},
                             [ai, c = std::move(c)](const TensorImpl& o) {
                               const Real g = o.grad[0];
                               for (std::size_t i = 0; i < c.size(); ++i) ai->grad[i] += g * c[i];
                             });
}

// ---------------------------------------------------------------------------
// Dense linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2, "lhs");
  require_rank("matmul", b, 2, "rhs");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    shape_fail("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  }
  std::vector<Real> out(to_size(m * n));
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, n);
  detail::add_macs(static_cast<std::uint64_t>(m * n * k));
  Impl ai = a.impl(), bi = b.impl();
  return detail::make_result(
      "matmul", Shape{m, n}, std::move(out), {ai, bi}, [ai, bi, m, k, n](const TensorImpl& o) {
        ConstMatMap g(o.grad.data(), m, n);
        if (ai->requires_grad)
          MatMap(ai->grad.data(), m, k).noalias() += g * ConstMatMap(bi->data.data(), k, n).transpose();
        if (bi->requires_grad)
          MatMap(bi->grad.data(), k, n).noalias() += ConstMatMap(ai->data.data(), m, k).transpose() * g;
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank("linear", x, 2, "input");
  require_rank("linear", w, 2, "weight");
  const auto n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in) {
    shape_fail("linear", "input features " + std::to_string(in) + " vs weight " +
                             shape_str(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
    shape_fail("linear", "bias " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(out_f) + " outputs");
  }
  std::vector<Real> out(to_size(n * out_f));
  MatMap y(out.data(), n, out_f);
  y.noalias() = ConstMatMap(x.data().data(), n, in) * ConstMatMap(w.data().data(), out_f, in).transpose();
  if (bias.defined()) {
    auto b = bias.data();
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t c = 0; c < out_f; ++c) y(r, c) += b[to_size(c)];
  }
  detail::add_macs(static_cast<std::uint64_t>(n * in * out_f));
  Impl xi = x.impl(), wi = w.impl();
  Impl bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Impl> inputs{xi, wi};
  if (bi) inputs.push_back(bi);
  return detail::make_result(
      "linear", Shape{n, out_f}, std::move(out), std::move(inputs),
      [xi, wi, bi, n, in, out_f](const TensorImpl& o) {
        ConstMatMap g(o.grad.data(), n, out_f);
        if (xi->requires_grad)
          MatMap(xi->grad.data(), n, in).noalias() += g * ConstMatMap(wi->data.data(), out_f, in);
        if (wi->requires_grad)
          MatMap(wi->grad.data(), out_f, in).noalias() += g.transpose() * ConstMatMap(xi->data.data(), n, in);
        if (bi && bi->requires_grad) {
          for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t c = 0; c < out_f; ++c) bi->grad[to_size(c)] += g(r, c);
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

struct ConvGeom {
  std::int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  ConvParams p;
};

// Gathers one sample into a [cin*kh*kw, ho*wo] column matrix.
void im2col(const Real* x, const ConvGeom& g, Real* col) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        Real* dst = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.p.stride - g.p.pad + ki * g.p.dilation;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.p.stride - g.p.pad + kj * g.p.dilation;
            dst[oh * g.wo + ow] = (ih >= 0 && ih < g.h && iw >= 0 && iw < g.w)
                                      ? x[(c * g.h + ih) * g.w + iw]
                                      : Real(0);
          }
        }
      }
    }
  }
}

void col2im_add(const Real* col, const ConvGeom& g, Real* dx) {
  const std::int64_t plane = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const Real* src = col + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.p.stride - g.p.pad + ki * g.p.dilation;
          if (ih < 0 || ih >= g.h) continue;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.p.stride - g.p.pad + kj * g.p.dilation;
            if (iw < 0 || iw >= g.w) continue;
            dx[(c * g.h + ih) * g.w + iw] += src[oh * g.wo + ow];
          }
        }
      }
    }
  }
}

bool is_pointwise(const ConvGeom& g) {
  return g.kh == 1 && g.kw == 1 && g.p.stride == 1 && g.p.pad == 0;
}

// Valid output range [lo, hi) along one axis for tap offset `tap`.
std::pair<std::int64_t, std::int64_t> tap_range(std::int64_t in, std::int64_t out, std::int64_t tap,
                                                const ConvParams& p) {
  // need 0 <= o*stride - pad + tap*dilation < in
  const std::int64_t shift = p.pad - tap * p.dilation;
  std::int64_t lo = shift <= 0 ? 0 : (shift + p.stride - 1) / p.stride;
  std::int64_t hi_num = in - 1 + shift;  // o*stride <= in-1+shift
  std::int64_t hi = hi_num < 0 ? 0 : hi_num / p.stride + 1;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

// In-bounds input range [lo, hi) covered by the pooling window of output `o`.
std::pair<std::int64_t, std::int64_t> pool_window(std::int64_t o, std::int64_t extent,
                                                  const PoolParams& pp) {
  const std::int64_t start = o * pp.stride - pp.pad;
  return {std::max<std::int64_t>(start, 0), std::min<std::int64_t>(start + pp.kernel, extent)};
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, ConvParams p) {
  require_rank("conv2d", x, 4, "input");
  require_rank("conv2d", w, 4, "weight");
  if (p.stride < 1 || p.dilation < 1 || p.pad < 0) shape_fail("conv2d", "invalid stride/pad/dilation");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0, p};
  if (w.dim(1) != g.cin) {
    shape_fail("conv2d", "input channels " + std::to_string(g.cin) + " vs weight " +
                             shape_str(w.shape()));
  }
  g.ho = conv_out_extent(g.h, static_cast<int>(g.kh), p);
  g.wo = conv_out_extent(g.w, static_cast<int>(g.kw), p);
  if (g.ho <= 0 || g.wo <= 0) {
    shape_fail("conv2d", "kernel " + shape_str(w.shape()) + " does not fit input " +
                             shape_str(x.shape()));
  }
  const std::int64_t plane = g.ho * g.wo;
  const std::int64_t kdim = g.cin * g.kh * g.kw;
  std::vector<Real> out(to_size(g.n * g.cout * plane));
  ConstMatMap wm(w.data().data(), g.cout, kdim);
  std::vector<Real> col;
  if (!is_pointwise(g)) col.resize(to_size(kdim * plane));
  for (std::int64_t s = 0; s < g.n; ++s) {
    const Real* xs = x.data().data() + s * g.cin * g.h * g.w;
    MatMap ys(out.data() + s * g.cout * plane, g.cout, plane);
    if (is_pointwise(g)) {
      ys.noalias() = wm * ConstMatMap(xs, g.cin, plane);
    } else {
      im2col(xs, g, col.data());
      ys.noalias() = wm * ConstMatMap(col.data(), kdim, plane);
    }
  }
  detail::add_macs(static_cast<std::uint64_t>(g.n * g.cout * plane * kdim));
  Impl xi = x.impl(), wi = w.impl();
  return detail::make_result(
      "conv2d", Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), {xi, wi},
      [xi, wi, g, plane, kdim](const TensorImpl& o) {
        ConstMatMap wm(wi->data.data(), g.cout, kdim);
        const bool pointwise = is_pointwise(g);
        std::vector<Real> col, dcol;
        if (!pointwise) {
          col.resize(to_size(kdim * plane));
          dcol.resize(to_size(kdim * plane));
        }
        for (std::int64_t s = 0; s < g.n; ++s) {
          const Real* xs = xi->data.data() + s * g.cin * g.h * g.w;
          ConstMatMap gy(o.grad.data() + s * g.cout * plane, g.cout, plane);
          if (pointwise) {
            if (wi->requires_grad)
              MatMap(wi->grad.data(), g.cout, kdim).noalias() +=
                  gy * ConstMatMap(xs, g.cin, plane).transpose();
            if (xi->requires_grad)
              MatMap(xi->grad.data() + s * g.cin * g.h * g.w, g.cin, plane).noalias() +=
                  wm.transpose() * gy;
          } else {
            if (wi->requires_grad) {
              im2col(xs, g, col.data());
              MatMap(wi->grad.data(), g.cout, kdim).noalias() +=
                  gy * ConstMatMap(col.data(), kdim, plane).transpose();
            }
            if (xi->requires_grad) {
              MatMap(dcol.data(), kdim, plane).noalias() = wm.transpose() * gy;
              col2im_add(dcol.data(), g, xi->grad.data() + s * g.cin * g.h * g.w);
            }
          }
        }
      });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, ConvParams p) {
  require_rank("depthwise_conv2d", x, 4, "input");
  require_rank("depthwise_conv2d", w, 4, "weight");
  if (p.stride < 1 || p.dilation < 1 || p.pad < 0)
    shape_fail("depthwise_conv2d", "invalid stride/pad/dilation");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  if (w.dim(0) != c || w.dim(1) != 1) {
    shape_fail("depthwise_conv2d", "weight " + shape_str(w.shape()) + " does not match " +
                                       std::to_string(c) + " input channels");
  }
  const auto kh = w.dim(2), kw = w.dim(3);
  const auto ho = conv_out_extent(h, static_cast<int>(kh), p);
  const auto wo = conv_out_extent(wd, static_cast<int>(kw), p);
  if (ho <= 0 || wo <= 0) {
    shape_fail("depthwise_conv2d", "kernel " + shape_str(w.shape()) + " does not fit input " +
                                       shape_str(x.shape()));
  }
  std::vector<Real> out(to_size(n * c * ho * wo), Real(0));
  const Real* xd = x.data().data();
  const Real* wdat = w.data().data();
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const Real* xp = xd + (s * c + ch) * h * wd;
      Real* yp = out.data() + (s * c + ch) * ho * wo;
      for (std::int64_t ki = 0; ki < kh; ++ki) {
        auto [oh_lo, oh_hi] = tap_range(h, ho, ki, p);
        for (std::int64_t kj = 0; kj < kw; ++kj) {
          auto [ow_lo, ow_hi] = tap_range(wd, wo, kj, p);
          const Real wv = wdat[(ch * kh + ki) * kw + kj];
          for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
            const Real* xrow = xp + (oh * p.stride - p.pad + ki * p.dilation) * wd +
                               (-p.pad + kj * p.dilation);
            Real* yrow = yp + oh * wo;
            if (p.stride == 1) {
              for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) yrow[ow] += wv * xrow[ow];
            } else {
              for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) yrow[ow] += wv * xrow[ow * p.stride];
            }
          }
        }
      }
    }
  }
  detail::add_macs(static_cast<std::uint64_t>(n * c * ho * wo * kh * kw));
  Impl xi = x.impl(), wi = w.impl();
  return detail::make_result(
      "depthwise_conv2d", Shape{n, c, ho, wo}, std::move(out), {xi, wi},
      [xi, wi, n, c, h, wd, kh, kw, ho, wo, p](const TensorImpl& o) {
        for (std::int64_t s = 0; s < n; ++s) {
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const Real* xp = xi->data.data() + (s * c + ch) * h * wd;
            const Real* gp = o.grad.data() + (s * c + ch) * ho * wo;
            Real* gx = xi->requires_grad ? xi->grad.data() + (s * c + ch) * h * wd : nullptr;
            for (std::int64_t ki = 0; ki < kh; ++ki) {
              auto [oh_lo, oh_hi] = tap_range(h, ho, ki, p);
              for (std::int64_t kj = 0; kj < kw; ++kj) {
                auto [ow_lo, ow_hi] = tap_range(wd, wo, kj, p);
                const std::size_t widx = to_size((ch * kh + ki) * kw + kj);
                const Real wv = wi->data[widx];
                Real acc = 0;
                for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                  const std::int64_t off = (oh * p.stride - p.pad + ki * p.dilation) * wd +
                                           (-p.pad + kj * p.dilation);
                  const Real* grow = gp + oh * wo;
                  if (p.stride == 1) {
                    const Real* xrow = xp + off;
                    for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += grow[ow] * xrow[ow];
                    if (gx) {
                      Real* gxrow = gx + off;
                      for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) gxrow[ow] += wv * grow[ow];
                    }
                  } else {
                    for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) {
                      acc += grow[ow] * xp[off + ow * p.stride];
                      if (gx) gx[off + ow * p.stride] += wv * grow[ow];
                    }
                  }
                }
                if (wi->requires_grad) wi->grad[widx] += acc;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling and activations

Tensor max_pool2d(const Tensor& x, PoolParams pp) {
  require_rank("max_pool2d", x, 4, "input");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  ConvParams p{pp.stride, pp.pad, 1};
  const auto ho = conv_out_extent(h, pp.kernel, p), wo = conv_out_extent(w, pp.kernel, p);
  if (ho <= 0 || wo <= 0) shape_fail("max_pool2d", "window does not fit " + shape_str(x.shape()));
  std::vector<Real> out(to_size(n * c * ho * wo));
  std::vector<std::int32_t> argmax(out.size());
  const auto window = [&pp](std::int64_t o, std::int64_t extent) {
    return pool_window(o, extent, pp);
  };
  const Real* xd = x.data().data();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const Real* xp = xd + plane * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::int32_t best_idx = -1;
        const auto [h_lo, h_hi] = window(oh, h);
        const auto [w_lo, w_hi] = window(ow, w);
        for (std::int64_t ih = h_lo; ih < h_hi; ++ih) {
          for (std::int64_t iw = w_lo; iw < w_hi; ++iw) {
            const Real v = xp[ih * w + iw];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = static_cast<std::int32_t>(ih * w + iw);
            }
          }
        }
        const std::size_t o = to_size((plane * ho + oh) * wo + ow);
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  Impl xi = x.impl();
  const std::int64_t in_plane = h * w, out_plane = ho * wo;
  return detail::make_result("max_pool2d", Shape{n, c, ho, wo}, std::move(out), {xi},
                             [xi, argmax = std::move(argmax), in_plane, out_plane](const TensorImpl& o) {
                               for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                 const std::int64_t plane = static_cast<std::int64_t>(i) / out_plane;
                                 xi->grad[to_size(plane * in_plane + argmax[i])] += o.grad[i];
                               }
                             });
}

Tensor avg_pool2d(const Tensor& x, PoolParams pp) {
  require_rank("avg_pool2d", x, 4, "input");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  ConvParams p{pp.stride, pp.pad, 1};
  const auto ho = conv_out_extent(h, pp.kernel, p), wo = conv_out_extent(w, pp.kernel, p);
  if (ho <= 0 || wo <= 0) shape_fail("avg_pool2d", "window does not fit " + shape_str(x.shape()));
  // Per-output divisor depends only on position, shared by all planes.
  std::vector<Real> inv_count(to_size(ho * wo));
  for (std::int64_t oh = 0; oh < ho; ++oh) {
    for (std::int64_t ow = 0; ow < wo; ++ow) {
      int count = 0;
      for (int ki = 0; ki < pp.kernel; ++ki) {
        const std::int64_t ih = oh * pp.stride - pp.pad + ki;
        for (int kj = 0; kj < pp.kernel; ++kj) {
          const std::int64_t iw = ow * pp.stride - pp.pad + kj;
          if (ih >= 0 && ih < h && iw >= 0 && iw < w) ++count;
        }
      }
      inv_count[to_size(oh * wo + ow)] = Real(1) / static_cast<Real>(count);
    }
  }
  std::vector<Real> out(to_size(n * c * ho * wo));
  const Real* xd = x.data().data();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const Real* xp = xd + plane * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        Real acc = 0;
        const auto [h_lo, h_hi] = pool_window(oh, h, pp);
        const auto [w_lo, w_hi] = pool_window(ow, w, pp);
        for (std::int64_t ih = h_lo; ih < h_hi; ++ih) {
          for (std::int64_t iw = w_lo; iw < w_hi; ++iw) acc += xp[ih * w + iw];
        }
        out[to_size((plane * ho + oh) * wo + ow)] = acc * inv_count[to_size(oh * wo + ow)];
      }
    }
  }
  Impl xi = x.impl();
  return detail::make_result(
      "avg_pool2d", Shape{n, c, ho, wo}, std::move(out), {xi},
      [xi, inv_count = std::move(inv_count), n, c, h, w, ho, wo, pp](const TensorImpl& o) {
        for (std::int64_t plane = 0; plane < n * c; ++plane) {
          Real* gx = xi->grad.data() + plane * h * w;
          const Real* gy = o.grad.data() + plane * ho * wo;
          for (std::int64_t oh = 0; oh < ho; ++oh) {
            for (std::int64_t ow = 0; ow < wo; ++ow) {
              const Real g = gy[oh * wo + ow] * inv_count[to_size(oh * wo + ow)];
              const auto [h_lo, h_hi] = pool_window(oh, h, pp);
              const auto [w_lo, w_hi] = pool_window(ow, w, pp);
              for (std::int64_t ih = h_lo; ih < h_hi; ++ih) {
                for (std::int64_t iw = w_lo; iw < w_hi; ++iw) gx[ih * w + iw] += g;
              }
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > Real(0) ? v : Real(0);
  Impl xi = x.impl();
  return detail::make_result("relu", x.shape(), std::move(out), {xi}, [xi](const TensorImpl& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (xi->data[i] > Real(0)) xi->grad[i] += o.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalisation

Tensor batch_norm(const Tensor& x, BatchNormStats& stats, bool training, const Tensor& gamma,
                  const Tensor& beta) {
  require_rank("batch_norm", x, 4, "input");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (static_cast<std::int64_t>(stats.running_mean.size()) != c) {
    shape_fail("batch_norm", "statistics sized for " + std::to_string(stats.running_mean.size()) +
                                 " channels, input " + shape_str(x.shape()));
  }
  if (gamma.defined() != beta.defined()) shape_fail("batch_norm", "gamma and beta must both be set");
  if (gamma.defined() && (gamma.numel() != c || beta.numel() != c)) {
    shape_fail("batch_norm", "affine parameters " + shape_str(gamma.shape()) + " for " +
                                 std::to_string(c) + " channels");
  }
  const std::int64_t m = n * hw;
  if (training && m < 2) shape_fail("batch_norm", "training mode needs more than one value per channel");
  const Real* xd = x.data().data();
  std::vector<Real> out(to_size(x.numel()));
  std::vector<Real> xhat(out.size());
  std::vector<Real> inv_std(to_size(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    Real mu, var;
    if (training) {
      Real acc = 0;
      for (std::int64_t s = 0; s < n; ++s) {
        const Real* p = xd + (s * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
      }
      mu = acc / static_cast<Real>(m);
      Real sq = 0;
      for (std::int64_t s = 0; s < n; ++s) {
        const Real* p = xd + (s * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      var = sq / static_cast<Real>(m);
      const Real mom = stats.momentum;
      auto& rm = stats.running_mean[to_size(ch)];
      auto& rv = stats.running_var[to_size(ch)];
      rm = (Real(1) - mom) * rm + mom * mu;
      rv = (Real(1) - mom) * rv + mom * var * static_cast<Real>(m) / static_cast<Real>(m - 1);
    } else {
      mu = stats.running_mean[to_size(ch)];
      var = stats.running_var[to_size(ch)];
    }
    const Real is = Real(1) / std::sqrt(var + stats.eps);
    inv_std[to_size(ch)] = is;
    const Real gm = gamma.defined() ? gamma.data()[to_size(ch)] : Real(1);
    const Real bt = beta.defined() ? beta.data()[to_size(ch)] : Real(0);
    for (std::int64_t s = 0; s < n; ++s) {
      const std::int64_t base = (s * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const Real xh = (xd[base + i] - mu) * is;
        xhat[to_size(base + i)] = xh;
        out[to_size(base + i)] = gm * xh + bt;
      }
    }
  }
  Impl xi = x.impl();
  Impl gi = gamma.defined() ? gamma.impl() : nullptr;
  Impl bi = beta.defined() ? beta.impl() : nullptr;
  std::vector<Impl> inputs{xi};
  if (gi) {
    inputs.push_back(gi);
    inputs.push_back(bi);
  }
  return detail::make_result(
      "batch_norm", x.shape(), std::move(out), std::move(inputs),
      [xi, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, hw, m,
       training](const TensorImpl& o) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          Real sum_g = 0, sum_gx = 0;
          for (std::int64_t s = 0; s < n; ++s) {
            const std::int64_t base = (s * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              const Real g = o.grad[to_size(base + i)];
              sum_g += g;
              sum_gx += g * xhat[to_size(base + i)];
            }
          }
          if (gi && gi->requires_grad) gi->grad[to_size(ch)] += sum_gx;
          if (bi && bi->requires_grad) bi->grad[to_size(ch)] += sum_g;
          if (!xi->requires_grad) continue;
          const Real gm = gi ? gi->data[to_size(ch)] : Real(1);
          const Real scale_ch = gm * inv_std[to_size(ch)];
          const Real mean_g = sum_g / static_cast<Real>(m);
          const Real mean_gx = sum_gx / static_cast<Real>(m);
          for (std::int64_t s = 0; s < n; ++s) {
            const std::int64_t base = (s * c + ch) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              const Real g = o.grad[to_size(base + i)];
              xi->grad[to_size(base + i)] +=
                  training ? scale_ch * (g - mean_g - xhat[to_size(base + i)] * mean_gx)
                           : scale_ch * g;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) shape_fail("softmax", "scalar input");
  const std::int64_t k = x.shape().back();
  if (k == 0) shape_fail("softmax", "empty last axis");
  const std::int64_t rows = x.numel() / k;
  std::vector<Real> out(to_size(x.numel()));
  const Real* xd = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* xp = xd + r * k;
    Real* yp = out.data() + r * k;
    const Real mx = *std::max_element(xp, xp + k);
    Real z = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      yp[j] = std::exp(xp[j] - mx);
      z += yp[j];
    }
    for (std::int64_t j = 0; j < k; ++j) yp[j] /= z;
  }
  Impl xi = x.impl();
  return detail::make_result("softmax", x.shape(), out, {xi},
                             [xi, y = out, rows, k](const TensorImpl& o) {
                               for (std::int64_t r = 0; r < rows; ++r) {
                                 const Real* yp = y.data() + r * k;
                                 const Real* gp = o.grad.data() + r * k;
                                 Real dot = 0;
                                 for (std::int64_t j = 0; j < k; ++j) dot += gp[j] * yp[j];
                                 for (std::int64_t j = 0; j < k; ++j)
                                   xi->grad[to_size(r * k + j)] += yp[j] * (gp[j] - dot);
                               }
                             });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) shape_fail("log_softmax", "scalar input");
  const std::int64_t k = x.shape().back();
  if (k == 0) shape_fail("log_softmax", "empty last axis");
  const std::int64_t rows = x.numel() / k;
  std::vector<Real> out(to_size(x.numel()));
  const Real* xd = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* xp = xd + r * k;
    const Real mx = *std::max_element(xp, xp + k);
    Real z = 0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(xp[j] - mx);
    const Real lse = mx + std::log(z);
    for (std::int64_t j = 0; j < k; ++j) out[to_size(r * k + j)] = xp[j] - lse;
  }
  Impl xi = x.impl();
  return detail::make_result("log_softmax", x.shape(), out, {xi},
                             [xi, y = out, rows, k](const TensorImpl& o) {
                               for (std::int64_t r = 0; r < rows; ++r) {
                                 const Real* gp = o.grad.data() + r * k;
                                 Real gsum = 0;
                                 for (std::int64_t j = 0; j < k; ++j) gsum += gp[j];
                                 for (std::int64_t j = 0; j < k; ++j)
                                   xi->grad[to_size(r * k + j)] +=
                                       gp[j] - std::exp(y[to_size(r * k + j)]) * gsum;
                               }
                             });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, Real smoothing) {
  require_rank("cross_entropy", logits, 2, "logits");
  if (!(smoothing >= 0 && smoothing < 1)) throw std::invalid_argument("cross_entropy: smoothing outside [0, 1)");
  const auto n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    shape_fail("cross_entropy", std::to_string(labels.size()) + " labels for logits " +
                                    shape_str(logits.shape()));
  }
  if (n == 0) shape_fail("cross_entropy", "empty batch");
  std::vector<Real> prob(to_size(n * k));
  Real loss = 0;
  const Real* xd = logits.data().data();
  for (std::int64_t r = 0; r < n; ++r) {
    const int label = labels[to_size(r)];
    if (label < 0 || label >= k) {
      shape_fail("cross_entropy", "label " + std::to_string(label) + " outside [0, " +
                                      std::to_string(k) + ")");
    }
    const Real* xp = xd + r * k;
    const Real mx = *std::max_element(xp, xp + k);
    Real z = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      prob[to_size(r * k + j)] = std::exp(xp[j] - mx);
      z += prob[to_size(r * k + j)];
    }
    for (std::int64_t j = 0; j < k; ++j) prob[to_size(r * k + j)] /= z;
    const Real log_z = mx + std::log(z);
    loss += -(Real(1) - smoothing) * (xp[label] - log_z);
    if (smoothing > 0) {
      Real mean_logp = 0;
      for (std::int64_t j = 0; j < k; ++j) mean_logp += xp[j] - log_z;
      loss += -smoothing * mean_logp / static_cast<Real>(k);
    }
  }
  loss /= static_cast<Real>(n);
  Impl li = logits.impl();
  std::vector<int> lab(labels.begin(), labels.end());
  return detail::make_result("cross_entropy", Shape{}, {loss}, {li},
                             [li, prob = std::move(prob), lab = std::move(lab), n, k,
                              smoothing](const TensorImpl& o) {
                               const Real g = o.grad[0] / static_cast<Real>(n);
                               const Real uniform = smoothing / static_cast<Real>(k);
                               for (std::int64_t r = 0; r < n; ++r) {
                                 for (std::int64_t j = 0; j < k; ++j) {
                                   Real d = prob[to_size(r * k + j)] - uniform;
                                   if (j == lab[to_size(r)]) d -= Real(1) - smoothing;
                                   li->grad[to_size(r * k + j)] += g * d;
                                 }
                               }
                             });
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
  require_rank("accuracy", logits, 2, "logits");
  const auto k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != logits.dim(0)) {
    shape_fail("accuracy", std::to_string(labels.size()) + " labels for logits " +
                               shape_str(logits.shape()));
  }
  if (labels.empty()) return 0.0;
  const Real* d = logits.data().data();
  std::size_t hit = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const Real* row = d + static_cast<std::int64_t>(r) * k;
    hit += std::max_element(row, row + k) - row == labels[r] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no parts");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  std::int64_t outer = 1, inner = 1, total = 0;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  std::vector<std::int64_t> extents;
  std::vector<Impl> inputs;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == ref[d];
    if (!ok) shape_fail("concat", "part " + shape_str(s) + " incompatible with " + shape_str(ref));
    extents.push_back(s[axis]);
    total += s[axis];
    inputs.push_back(t.impl());
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  std::vector<Real> out(to_size(shape_numel(out_shape)));
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::int64_t chunk = extents[k] * inner;
    const Real* src = parts[k].data().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(src + o * chunk, chunk, out.data() + o * total * inner + offset);
    offset += chunk;
  }
  auto captured = inputs;
  return detail::make_result("concat", out_shape, std::move(out), std::move(inputs),
                             [captured, extents, outer, inner, total](const TensorImpl& o) {
                               std::int64_t offset = 0;
                               for (std::size_t k = 0; k < captured.size(); ++k) {
                                 const std::int64_t chunk = extents[k] * inner;
                                 if (captured[k]->requires_grad) {
                                   Real* dst = captured[k]->grad.data();
                                   for (std::int64_t q = 0; q < outer; ++q) {
                                     const Real* g = o.grad.data() + q * total * inner + offset;
                                     for (std::int64_t i = 0; i < chunk; ++i) dst[q * chunk + i] += g[i];
                                   }
                                 }
                                 offset += chunk;
                               }
                             });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Impl xi = x.impl();
  return detail::make_result("reshape", std::move(shape), x.to_vector(), {xi},
                             [xi](const TensorImpl& o) {
                               for (std::size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += o.grad[i];
                             });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4, "input");
  const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) shape_fail("global_avg_pool", "empty spatial extent");
  std::vector<Real> out(to_size(n * c));
  const Real* xd = x.data().data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    Real acc = 0;
    for (std::int64_t i = 0; i < hw; ++i) acc += xd[p * hw + i];
    out[to_size(p)] = acc / static_cast<Real>(hw);
  }
  Impl xi = x.impl();
  return detail::make_result("global_avg_pool", Shape{n, c}, std::move(out), {xi},
                             [xi, n, c, hw](const TensorImpl& o) {
                               for (std::int64_t p = 0; p < n * c; ++p) {
                                 const Real g = o.grad[to_size(p)] / static_cast<Real>(hw);
                                 for (std::int64_t i = 0; i < hw; ++i) xi->grad[to_size(p * hw + i)] += g;
                               }
                             });
}

Tensor crop(const Tensor& x, int top, int left, int height, int width) {
  require_rank("crop", x, 4, "input");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (top < 0 || left < 0 || height <= 0 || width <= 0 || top + height > h || left + width > w) {
    shape_fail("crop", "window (" + std::to_string(top) + "," + std::to_string(left) + ") " +
                           std::to_string(height) + "x" + std::to_string(width) + " outside " +
                           shape_str(x.shape()));
  }
  std::vector<Real> out(to_size(n * c * height * width));
  const Real* xd = x.data().data();
  for (std::int64_t p = 0; p < n * c; ++p)
    for (int i = 0; i < height; ++i)
      std::copy_n(xd + (p * h + top + i) * w + left, width, out.data() + (p * height + i) * width);
  Impl xi = x.impl();
  return detail::make_result("crop", Shape{n, c, height, width}, std::move(out), {xi},
                             [xi, n, c, h, w, top, left, height, width](const TensorImpl& o) {
                               for (std::int64_t p = 0; p < n * c; ++p)
                                 for (int i = 0; i < height; ++i)
                                   for (int j = 0; j < width; ++j)
                                     xi->grad[to_size((p * h + top + i) * w + left + j)] +=
                                         o.grad[to_size((p * height + i) * width + j)];
                             });
}

Tensor dropout(const Tensor& x, Real p, Rng& rng, bool training) {
  if (p < Real(0) || p >= Real(1)) shape_fail("dropout", "probability must be in [0, 1)");
  if (!training || p == Real(0)) return x;
  std::vector<Real> mask(to_size(x.numel()));
  const Real keep = Real(1) / (Real(1) - p);
  for (auto& m : mask) m = rng.uniform() >= static_cast<double>(p) ? keep : Real(0);
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  Impl xi = x.impl();
  return detail::make_result("dropout", x.shape(), std::move(out), {xi},
                             [xi, mask = std::move(mask)](const TensorImpl& o) {
                               for (std::size_t i = 0; i < o.grad.size(); ++i)
                                 xi->grad[i] += o.grad[i] * mask[i];
                             });
}

}  // namespace dcanas::inline DCANAS_PRECISION
