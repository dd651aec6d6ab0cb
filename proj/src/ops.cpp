#include "healnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>

#include "graph.hpp"
#include "healnet/error.hpp"

namespace healnet::ops {

using detail::BackwardFn;
using detail::impl_of;
using detail::make_result;
using detail::require_finite;
using detail::TensorImpl;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shapes_message(std::string_view op, const Tensor& a, const Tensor& b, std::string_view what) {
  return std::string(op) + ": " + std::string(what) + " (" + shape_string(a.shape()) + " vs " +
         shape_string(b.shape()) + ")";
}

// Grad buffer of an input, or nullptr when it does not take part in backward.
std::vector<double>* grad_sink(const std::shared_ptr<TensorImpl>& in) {
  return in->requires_grad ? &in->ensure_grad() : nullptr;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_finite("add", a);
  require_finite("add", b);
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool suffix = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!suffix) throw ShapeError(shapes_message("add", a, b, "shapes are not broadcast-compatible"));

  const std::size_t nb = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % nb];

  auto ia = impl_of(a), ib = impl_of(b);
  return make_result("add", sa, std::move(out), {a, b}, [&]() -> BackwardFn {
    return [ia, ib, nb](const TensorImpl& o) {
      if (auto* ga = grad_sink(ia)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += o.grad[i];
      }
      if (auto* gb = grad_sink(ib)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*gb)[i % nb] += o.grad[i];
      }
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_finite("mul", a);
  require_finite("mul", b);
  if (a.shape() != b.shape()) throw ShapeError(shapes_message("mul", a, b, "shape mismatch"));
  auto ad = a.data(), bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];

  auto ia = impl_of(a), ib = impl_of(b);
  return make_result("mul", a.shape(), std::move(out), {a, b}, [&]() -> BackwardFn {
    return [ia, ib](const TensorImpl& o) {
      if (auto* ga = grad_sink(ia)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += o.grad[i] * ib->data[i];
      }
      if (auto* gb = grad_sink(ib)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*gb)[i] += o.grad[i] * ia->data[i];
      }
    };
  });
}

Tensor scale(const Tensor& a, double factor) {
  require_finite("scale", a);
  if (!std::isfinite(factor)) throw NumericError("scale: non-finite factor");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  auto ia = impl_of(a);
  return make_result("scale", a.shape(), std::move(out), {a}, [&]() -> BackwardFn {
    return [ia, factor](const TensorImpl& o) {
      if (auto* ga = grad_sink(ia)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*ga)[i] += o.grad[i] * factor;
      }
    };
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_finite("matmul", a);
  require_finite("matmul", b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError(shapes_message("matmul", a, b, "expected [m,k] x [k,n]"));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Eigen::Map<const RowMat> am(a.data().data(), m, k);
  Eigen::Map<const RowMat> bm(b.data().data(), k, n);
  Eigen::Map<RowMat>(out.data(), m, n).noalias() = am * bm;

  auto ia = impl_of(a), ib = impl_of(b);
  return make_result("matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b}, [&]() -> BackwardFn {
    return [ia, ib, m, k, n](const TensorImpl& o) {
      Eigen::Map<const RowMat> g(o.grad.data(), m, n);
      if (auto* ga = grad_sink(ia)) {
        Eigen::Map<RowMat>(ga->data(), m, k).noalias() += g * Eigen::Map<const RowMat>(ib->data.data(), k, n).transpose();
      }
      if (auto* gb = grad_sink(ib)) {
        Eigen::Map<RowMat>(gb->data(), k, n).noalias() += Eigen::Map<const RowMat>(ia->data.data(), m, k).transpose() * g;
      }
    };
  });
}

namespace {

struct ConvGeometry {
  std::size_t C, H, W, K, S, P, Ho, Wo;
  std::size_t hwo() const { return Ho * Wo; }
  std::size_t ckk() const { return C * K * K; }
};

// Output columns [lo, hi) whose input column ox*S + kj - P lies inside [0, W).
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kj) {
  std::size_t lo = 0;
  if (g.P > kj) lo = (g.P - kj + g.S - 1) / g.S;
  std::size_t hi = 0;
  if (g.W + g.P > kj) hi = std::min(g.Wo, (g.W + g.P - kj - 1) / g.S + 1);
  return {std::min(lo, hi), hi};
}

// Unfolds one sample [C, H, W] into cols [C*K*K, Ho*Wo].
void im2col(const double* plane, const ConvGeometry& g, double* cols) {
  const std::size_t HWo = g.hwo();
  for (std::size_t c = 0; c < g.C; ++c) {
    const double* src = plane + c * g.H * g.W;
    for (std::size_t ki = 0; ki < g.K; ++ki) {
      for (std::size_t kj = 0; kj < g.K; ++kj) {
        double* row = cols + ((c * g.K + ki) * g.K + kj) * HWo;
        const auto [lo, hi] = valid_columns(g, kj);
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.S + ki) - static_cast<std::ptrdiff_t>(g.P);
          double* dst = row + oy * g.Wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) {
            std::fill_n(dst, g.Wo, 0.0);
            continue;
          }
          const double* line = src + iy * static_cast<std::ptrdiff_t>(g.W) + static_cast<std::ptrdiff_t>(kj) -
                               static_cast<std::ptrdiff_t>(g.P);
          std::fill(dst, dst + lo, 0.0);
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = line[ox * g.S];
          std::fill(dst + hi, dst + g.Wo, 0.0);
        }
      }
    }
  }
}

// Adjoint of im2col: scatters cols back into a [C, H, W] gradient plane.
void col2im(const double* cols, const ConvGeometry& g, double* plane) {
  const std::size_t HWo = g.hwo();
  for (std::size_t c = 0; c < g.C; ++c) {
    double* dst = plane + c * g.H * g.W;
    for (std::size_t ki = 0; ki < g.K; ++ki) {
      for (std::size_t kj = 0; kj < g.K; ++kj) {
        const double* row = cols + ((c * g.K + ki) * g.K + kj) * HWo;
        const auto [lo, hi] = valid_columns(g, kj);
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.S + ki) - static_cast<std::ptrdiff_t>(g.P);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) continue;
          double* line = dst + iy * static_cast<std::ptrdiff_t>(g.W) + static_cast<std::ptrdiff_t>(kj) -
                         static_cast<std::ptrdiff_t>(g.P);
          const double* src = row + oy * g.Wo;
          for (std::size_t ox = lo; ox < hi; ++ox) line[ox * g.S] += src[ox];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dParams params) {
  require_finite("conv2d", x);
  require_finite("conv2d", weight);
  if (bias.defined()) require_finite("conv2d", bias);
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    throw ShapeError(shapes_message("conv2d", x, weight, "expected input [N,C,H,W] and weight [O,C,K,K]"));
  }
  if (params.stride == 0) throw ValueError("conv2d: stride must be positive");
  const std::size_t N = x.dim(0), O = weight.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), params.stride, params.padding, 0, 0};
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O)) {
    throw ShapeError(shapes_message("conv2d", weight, bias, "bias must be [O]"));
  }
  if (g.H + 2 * g.P < g.K || g.W + 2 * g.P < g.K) {
    throw ShapeError(shapes_message("conv2d", x, weight, "kernel larger than padded input"));
  }
  g.Ho = (g.H + 2 * g.P - g.K) / g.S + 1;
  g.Wo = (g.W + 2 * g.P - g.K) / g.S + 1;
  const std::size_t HWo = g.hwo(), CKK = g.ckk(), in_plane = g.C * g.H * g.W;
  const auto eO = static_cast<Eigen::Index>(O), eCKK = static_cast<Eigen::Index>(CKK),
             eHWo = static_cast<Eigen::Index>(HWo);

  std::vector<double> out(N * O * HWo);
  std::vector<double> cols(CKK * HWo);
  Eigen::Map<const RowMat> wm(weight.data().data(), eO, eCKK);
  const bool pointwise = g.K == 1 && g.S == 1 && g.P == 0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* unfolded = x.data().data() + n * in_plane;
    if (!pointwise) {
      im2col(unfolded, g, cols.data());
      unfolded = cols.data();
    }
    Eigen::Map<RowMat> y(out.data() + n * O * HWo, eO, eHWo);
    y.noalias() = wm * Eigen::Map<const RowMat>(unfolded, eCKK, eHWo);
    if (bias.defined()) y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), eO);
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  auto ix = impl_of(x), iw = impl_of(weight);
  auto ib = bias.defined() ? impl_of(bias) : nullptr;
  return make_result("conv2d", {N, O, g.Ho, g.Wo}, std::move(out), std::move(inputs), [&]() -> BackwardFn {
    return [=](const TensorImpl& o) {
      auto* gw = grad_sink(iw);
      auto* gx = grad_sink(ix);
      double* gb = (ib && ib->requires_grad) ? ib->ensure_grad().data() : nullptr;
      std::vector<double> buf(CKK * HWo);
      Eigen::Map<const RowMat> w(iw->data.data(), eO, eCKK);
      for (std::size_t n = 0; n < N; ++n) {
        Eigen::Map<const RowMat> gy(o.grad.data() + n * O * HWo, eO, eHWo);
        if (gb) {
          for (std::size_t c = 0; c < O; ++c) {
            const double* row = o.grad.data() + (n * O + c) * HWo;
            double acc = 0.0;
            for (std::size_t i = 0; i < HWo; ++i) acc += row[i];
            gb[c] += acc;
          }
        }
        if (gw) {
          const double* unfolded = ix->data.data() + n * in_plane;
          if (!pointwise) {
            im2col(unfolded, g, buf.data());
            unfolded = buf.data();
          }
          Eigen::Map<RowMat>(gw->data(), eO, eCKK).noalias() +=
              gy * Eigen::Map<const RowMat>(unfolded, eCKK, eHWo).transpose();
        }
        if (gx && pointwise) {
          Eigen::Map<RowMat>(gx->data() + n * in_plane, eCKK, eHWo).noalias() += w.transpose() * gy;
        } else if (gx) {
          Eigen::Map<RowMat>(buf.data(), eCKK, eHWo).noalias() = w.transpose() * gy;
          col2im(buf.data(), g, gx->data() + n * in_plane);
        }
      }
    };
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_finite("max_pool2d", x);
  if (x.rank() != 4) throw ShapeError("max_pool2d: expected [N,C,H,W], got " + shape_string(x.shape()));
  if (kernel == 0 || stride == 0) throw ValueError("max_pool2d: kernel and stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < kernel || W < kernel) {
    throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " larger than input " + shape_string(x.shape()));
  }
  const std::size_t Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
  std::vector<double> out(N * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  auto xd = x.data();
  std::size_t idx = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t base = nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox, ++idx) {
        std::size_t best = base + oy * stride * W + ox * stride;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t at = base + (oy * stride + ki) * W + ox * stride + kj;
            if (xd[at] > xd[best]) best = at;
          }
        }
        out[idx] = xd[best];
        (*argmax)[idx] = best;
      }
    }
  }
  auto ix = impl_of(x);
  return make_result("max_pool2d", {N, C, Ho, Wo}, std::move(out), {x}, [&]() -> BackwardFn {
    return [ix, argmax](const TensorImpl& o) {
      if (auto* gx = grad_sink(ix)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[(*argmax)[i]] += o.grad[i];
      }
    };
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_finite("global_avg_pool", x);
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected [N,C,H,W], got " + shape_string(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(N * C);
  auto xd = x.data();
  for (std::size_t i = 0; i < N * C; ++i) {
    double s = 0.0;
    for (std::size_t q = 0; q < HW; ++q) s += xd[i * HW + q];
    out[i] = s / static_cast<double>(HW);
  }
  auto ix = impl_of(x);
  return make_result("global_avg_pool", {N, C}, std::move(out), {x}, [&]() -> BackwardFn {
    return [ix, HW](const TensorImpl& o) {
      if (auto* gx = grad_sink(ix)) {
        const double inv = 1.0 / static_cast<double>(HW);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          for (std::size_t q = 0; q < HW; ++q) (*gx)[i * HW + q] += o.grad[i] * inv;
        }
      }
    };
  });
}

Tensor relu(const Tensor& x) {
  require_finite("relu", x);
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  auto ix = impl_of(x);
  return make_result("relu", x.shape(), std::move(out), {x}, [&]() -> BackwardFn {
    return [ix](const TensorImpl& o) {
      if (auto* gx = grad_sink(ix)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          if (ix->data[i] > 0.0) (*gx)[i] += o.grad[i];
        }
      }
    };
  });
}

Tensor sigmoid(const Tensor& x) {
  require_finite("sigmoid", x);
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  auto ix = impl_of(x);
  return make_result("sigmoid", x.shape(), std::move(out), {x}, [&]() -> BackwardFn {
    return [ix](const TensorImpl& o) {
      if (auto* gx = grad_sink(ix)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i] * o.data[i] * (1.0 - o.data[i]);
      }
    };
  });
}

Tensor softmax(const Tensor& x) {
  require_finite("softmax", x);
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (y[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  auto ix = impl_of(x);
  return make_result("softmax", x.shape(), std::move(out), {x}, [&]() -> BackwardFn {
    return [ix, rows, cols](const TensorImpl& o) {
      if (auto* gx = grad_sink(ix)) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = o.data.data() + r * cols;
          const double* g = o.grad.data() + r * cols;
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
          for (std::size_t c = 0; c < cols; ++c) (*gx)[r * cols + c] += y[c] * (g[c] - dot);
        }
      }
    };
  });
}

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  for (const auto& p : parts) require_finite("concat", p);
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw ShapeError(shapes_message("concat", parts[0], p, "extents differ off the concat axis"));
    out_shape[axis] += s[axis];
  }
  const auto split = split_at(first, axis);
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * split.inner);
  const std::size_t row = out_shape[axis] * split.inner;

  std::vector<double> out(split.outer * row);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto d = parts[k].data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(d.data() + o * widths[k], widths[k], out.data() + o * row + offset);
    }
    offset += widths[k];
  }

  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::shared_ptr<TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(impl_of(p));
  const std::size_t outer = split.outer;
  return make_result("concat", out_shape, std::move(out), std::move(inputs), [&]() -> BackwardFn {
    return [impls, widths, outer, row](const TensorImpl& o) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (auto* g = grad_sink(impls[k])) {
          for (std::size_t r = 0; r < outer; ++r) {
            const double* src = o.grad.data() + r * row + off;
            double* dst = g->data() + r * widths[k];
            for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
          }
        }
        off += widths[k];
      }
    };
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_finite("slice", x);
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  if (begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                     shape_string(s) + " on axis " + std::to_string(axis));
  }
  const auto split = split_at(s, axis);
  const std::size_t in_row = s[axis] * split.inner, width = (end - begin) * split.inner, off = begin * split.inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  std::vector<double> out(split.outer * width);
  auto xd = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) std::copy_n(xd.data() + o * in_row + off, width, out.data() + o * width);

  auto ix = impl_of(x);
  const std::size_t outer = split.outer;
  return make_result("slice", out_shape, std::move(out), {x}, [&]() -> BackwardFn {
    return [ix, outer, in_row, width, off](const TensorImpl& o) {
      if (auto* gx = grad_sink(ix)) {
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t i = 0; i < width; ++i) (*gx)[r * in_row + off + i] += o.grad[r * width + i];
        }
      }
    };
  });
}

Tensor dropout(const Tensor& x, double rate, bool train, std::mt19937_64& rng) {
  require_finite("dropout", x);
  if (!(rate >= 0.0 && rate < 1.0)) throw ValueError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = uniform01(rng) < keep ? 1.0 / keep : 0.0;
    out[i] = xd[i] * (*mask)[i];
  }
  auto ix = impl_of(x);
  return make_result("dropout", x.shape(), std::move(out), {x}, [&]() -> BackwardFn {
    return [ix, mask](const TensorImpl& o) {
      if (auto* gx = grad_sink(ix)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i] * (*mask)[i];
      }
    };
  });
}

Tensor flatten(const Tensor& x) {
  require_finite("flatten", x);
  if (x.rank() < 2) throw ShapeError("flatten: expected at least [N, ...], got " + shape_string(x.shape()));
  const std::size_t n = x.dim(0);
  auto ix = impl_of(x);
  return make_result("flatten", {n, x.numel() / n}, std::vector<double>(x.data().begin(), x.data().end()), {x},
                     [&]() -> BackwardFn {
                       return [ix](const TensorImpl& o) {
                         if (auto* gx = grad_sink(ix)) {
                           for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i];
                         }
                       };
                     });
}

Tensor sum(const Tensor& x) {
  require_finite("sum", x);
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto ix = impl_of(x);
  return make_result("sum", {1}, {s}, {x}, [&]() -> BackwardFn {
    return [ix](const TensorImpl& o) {
      if (auto* gx = grad_sink(ix)) {
        for (auto& g : *gx) g += o.grad[0];
      }
    };
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace healnet::ops
