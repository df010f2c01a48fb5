#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fbr/errors.hpp"
#include "fbr/tensor.hpp"

namespace fbr {

// Convolution parameters: kernels [M, D, KH, KW] and per-kernel bias.
struct ConvLayer {
  Tensor kernels;
  Tensor bias;
  int stride = 1;
  int padding = 0;
  bool regularize = false;

  std::size_t kernel_count() const { return kernels.extent(0); }
  std::size_t channels() const { return kernels.extent(1); }
  int kernel_h() const { return static_cast<int>(kernels.extent(2)); }
  int kernel_w() const { return static_cast<int>(kernels.extent(3)); }
};

struct DenseLayer {
  Tensor weights;  // [out, in]
  Tensor bias;     // [out]
};

namespace detail {

struct ConvDims {
  std::size_t n, d, h, w, m;
  int kh, kw, hout, wout;
};

inline ConvDims conv_dims(const Tensor& input, const ConvLayer& layer) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [N,D,H,W]");
  if (layer.kernels.rank() != 4)
    throw ShapeError("conv2d: kernels must be [M,D,KH,KW]");
  if (layer.kernel_count() < 1) throw ShapeError("conv2d: need at least one kernel");
  if (layer.bias.size() != layer.kernel_count())
    throw ShapeError("conv2d: bias length must equal kernel count");
  if (layer.stride < 1 || layer.padding < 0)
    throw ShapeError("conv2d: bad stride or padding");

  ConvDims dm;
  dm.n = input.extent(0);
  dm.d = input.extent(1);
  dm.h = input.extent(2);
  dm.w = input.extent(3);
  dm.m = layer.kernel_count();
  dm.kh = layer.kernel_h();
  dm.kw = layer.kernel_w();
  if (layer.channels() != dm.d)
    throw ShapeError("conv2d: channel count mismatch");
  const long hspan = static_cast<long>(dm.h) + 2 * layer.padding - dm.kh;
  const long wspan = static_cast<long>(dm.w) + 2 * layer.padding - dm.kw;
  if (hspan < 0 || wspan < 0 || hspan % layer.stride || wspan % layer.stride)
    throw ShapeError("conv2d: kernel does not tile the padded input");
  dm.hout = static_cast<int>(hspan / layer.stride) + 1;
  dm.wout = static_cast<int>(wspan / layer.stride) + 1;
  return dm;
}

// col is [D*KH*KW, Hout*Wout]; out-of-image taps contribute zeros.
inline void im2col(const double* in, const ConvDims& dm, int stride, int pad,
                   double* col) {
  const int h = static_cast<int>(dm.h), w = static_cast<int>(dm.w);
  const std::size_t out_cells = static_cast<std::size_t>(dm.hout) * dm.wout;
  std::size_t row = 0;
  for (std::size_t d = 0; d < dm.d; ++d) {
    const double* plane = in + d * dm.h * dm.w;
    for (int ky = 0; ky < dm.kh; ++ky)
      for (int kx = 0; kx < dm.kw; ++kx, ++row) {
        double* dst = col + row * out_cells;
        for (int oy = 0; oy < dm.hout; ++oy) {
          const int iy = oy * stride + ky - pad;
          double* drow = dst + static_cast<std::size_t>(oy) * dm.wout;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + dm.wout, 0.0);
            continue;
          }
          const double* srow = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < dm.wout; ++ox) {
            const int ix = ox * stride + kx - pad;
            drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0;
          }
        }
      }
  }
}

inline void col2im_add(const double* col, const ConvDims& dm, int stride,
                       int pad, double* in_grad) {
  const int h = static_cast<int>(dm.h), w = static_cast<int>(dm.w);
  const std::size_t out_cells = static_cast<std::size_t>(dm.hout) * dm.wout;
  std::size_t row = 0;
  for (std::size_t d = 0; d < dm.d; ++d) {
    double* plane = in_grad + d * dm.h * dm.w;
    for (int ky = 0; ky < dm.kh; ++ky)
      for (int kx = 0; kx < dm.kw; ++kx, ++row) {
        const double* src = col + row * out_cells;
        for (int oy = 0; oy < dm.hout; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const double* srow = src + static_cast<std::size_t>(oy) * dm.wout;
          double* drow = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < dm.wout; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
  }
}

}  // namespace detail

// Cross-correlation plus bias.
inline Tensor conv2d_forward(const Tensor& input, const ConvLayer& layer) {
  const detail::ConvDims dm = detail::conv_dims(input, layer);
  const std::size_t kdim = dm.d * dm.kh * dm.kw;
  const std::size_t out_cells = static_cast<std::size_t>(dm.hout) * dm.wout;

  Tensor out({dm.n, dm.m, static_cast<std::size_t>(dm.hout),
              static_cast<std::size_t>(dm.wout)});
  std::vector<double> col(kdim * out_cells);
  for (std::size_t n = 0; n < dm.n; ++n) {
    detail::im2col(input.ptr() + n * dm.d * dm.h * dm.w, dm, layer.stride,
                   layer.padding, col.data());
    double* dst = out.ptr() + n * dm.m * out_cells;
    gemm_acc(layer.kernels.ptr(), col.data(), dst, dm.m, kdim, out_cells);
    for (std::size_t m = 0; m < dm.m; ++m) {
      const double b = layer.bias.data[m];
      double* row = dst + m * out_cells;
      for (std::size_t i = 0; i < out_cells; ++i) row[i] += b;
    }
  }
  return out;
}

struct ConvGrads {
  Tensor input;
  Tensor kernels;
  Tensor bias;
};

inline ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                                 const ConvLayer& layer) {
  const detail::ConvDims dm = detail::conv_dims(input, layer);
  const std::size_t out_cells = static_cast<std::size_t>(dm.hout) * dm.wout;
  if (grad_out.shape != std::vector<std::size_t>{dm.n, dm.m,
                                                 static_cast<std::size_t>(dm.hout),
                                                 static_cast<std::size_t>(dm.wout)})
    throw ShapeError("conv2d_backward: grad shape mismatch");

  const std::size_t kdim = dm.d * dm.kh * dm.kw;
  ConvGrads g{Tensor(input.shape), Tensor(layer.kernels.shape),
              Tensor(layer.bias.shape)};
  std::vector<double> col(kdim * out_cells);
  std::vector<double> col_grad(kdim * out_cells);
  std::vector<double> gout_t(out_cells * dm.m);
  std::vector<double> kernels_t(kdim * dm.m, 0.0);  // dK^T accumulator
  for (std::size_t n = 0; n < dm.n; ++n) {
    const double* gout = grad_out.ptr() + n * dm.m * out_cells;
    detail::im2col(input.ptr() + n * dm.d * dm.h * dm.w, dm, layer.stride,
                   layer.padding, col.data());
    // dK^T += col x dOut^T, dCol = K^T x dOut, dB += row sums of dOut
    for (std::size_t m = 0; m < dm.m; ++m)
      for (std::size_t i = 0; i < out_cells; ++i)
        gout_t[i * dm.m + m] = gout[m * out_cells + i];
    gemm_acc(col.data(), gout_t.data(), kernels_t.data(), kdim, out_cells, dm.m);
    std::fill(col_grad.begin(), col_grad.end(), 0.0);
    gemm_atb_acc(layer.kernels.ptr(), gout, col_grad.data(), dm.m, kdim,
                 out_cells);
    detail::col2im_add(col_grad.data(), dm, layer.stride, layer.padding,
                       g.input.ptr() + n * dm.d * dm.h * dm.w);
    for (std::size_t m = 0; m < dm.m; ++m) {
      const double* row = gout + m * out_cells;
      double s = 0.0;
      for (std::size_t i = 0; i < out_cells; ++i) s += row[i];
      g.bias.data[m] += s;
    }
  }
  for (std::size_t q = 0; q < kdim; ++q)
    for (std::size_t m = 0; m < dm.m; ++m)
      g.kernels.data[m * kdim + q] = kernels_t[q * dm.m + m];
  return g;
}

inline Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape);
  for (std::size_t i = 0; i < input.size(); ++i)
    out.data[i] = input.data[i] > 0.0 ? input.data[i] : 0.0;
  return out;
}

inline Tensor relu_backward(const Tensor& grad_out, const Tensor& input) {
  if (grad_out.shape != input.shape)
    throw ShapeError("relu_backward: shape mismatch");
  Tensor g(input.shape);
  for (std::size_t i = 0; i < input.size(); ++i)
    g.data[i] = input.data[i] > 0.0 ? grad_out.data[i] : 0.0;
  return g;
}

namespace detail {

struct PoolDims {
  std::size_t n, c, h, w;
  int hout, wout;
};

inline PoolDims pool_dims(const Tensor& input, int window, int stride) {
  if (input.rank() != 4) throw ShapeError("maxpool: input must be [N,C,H,W]");
  if (window < 1 || stride < 1) throw ShapeError("maxpool: bad window or stride");
  PoolDims dm{input.extent(0), input.extent(1), input.extent(2), input.extent(3),
              0, 0};
  const long hspan = static_cast<long>(dm.h) - window;
  const long wspan = static_cast<long>(dm.w) - window;
  if (hspan < 0 || wspan < 0 || hspan % stride || wspan % stride)
    throw ShapeError("maxpool: window does not tile the input");
  dm.hout = static_cast<int>(hspan / stride) + 1;
  dm.wout = static_cast<int>(wspan / stride) + 1;
  return dm;
}

}  // namespace detail

// Ties go to the lowest flat input index (row-major window scan, strict >).
inline Tensor maxpool_forward(const Tensor& input, int window, int stride) {
  const detail::PoolDims dm = detail::pool_dims(input, window, stride);
  Tensor out({dm.n, dm.c, static_cast<std::size_t>(dm.hout),
              static_cast<std::size_t>(dm.wout)});
  double* dst = out.ptr();
  for (std::size_t plane = 0; plane < dm.n * dm.c; ++plane) {
    const double* src = input.ptr() + plane * dm.h * dm.w;
    for (int oy = 0; oy < dm.hout; ++oy)
      for (int ox = 0; ox < dm.wout; ++ox) {
        double best = src[static_cast<std::size_t>(oy * stride) * dm.w + ox * stride];
        for (int ky = 0; ky < window; ++ky)
          for (int kx = 0; kx < window; ++kx) {
            const double v =
                src[static_cast<std::size_t>(oy * stride + ky) * dm.w + ox * stride + kx];
            if (v > best) best = v;
          }
        *dst++ = best;
      }
  }
  return out;
}

inline Tensor maxpool_backward(const Tensor& grad_out, const Tensor& input,
                               int window, int stride) {
  const detail::PoolDims dm = detail::pool_dims(input, window, stride);
  if (grad_out.shape != std::vector<std::size_t>{dm.n, dm.c,
                                                 static_cast<std::size_t>(dm.hout),
                                                 static_cast<std::size_t>(dm.wout)})
    throw ShapeError("maxpool_backward: grad shape mismatch");
  Tensor g(input.shape);
  const double* gout = grad_out.ptr();
  for (std::size_t plane = 0; plane < dm.n * dm.c; ++plane) {
    const double* src = input.ptr() + plane * dm.h * dm.w;
    double* dst = g.ptr() + plane * dm.h * dm.w;
    for (int oy = 0; oy < dm.hout; ++oy)
      for (int ox = 0; ox < dm.wout; ++ox) {
        std::size_t best_i =
            static_cast<std::size_t>(oy * stride) * dm.w + ox * stride;
        double best = src[best_i];
        for (int ky = 0; ky < window; ++ky)
          for (int kx = 0; kx < window; ++kx) {
            const std::size_t i =
                static_cast<std::size_t>(oy * stride + ky) * dm.w + ox * stride + kx;
            if (src[i] > best) {
              best = src[i];
              best_i = i;
            }
          }
        dst[best_i] += *gout++;
      }
  }
  return g;
}

inline Tensor dense_forward(const Tensor& input, const DenseLayer& layer) {
  if (input.rank() != 2) throw ShapeError("dense: input must be [N,F]");
  if (layer.weights.rank() != 2 || layer.weights.extent(1) != input.extent(1))
    throw ShapeError("dense: weight shape mismatch");
  if (layer.bias.size() != layer.weights.extent(0))
    throw ShapeError("dense: bias length mismatch");
  const std::size_t n = input.extent(0);
  const std::size_t fin = input.extent(1);
  const std::size_t fout = layer.weights.extent(0);
  Tensor out({n, fout});
  gemm_abt_acc(input.ptr(), layer.weights.ptr(), out.ptr(), n, fin, fout);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = out.ptr() + i * fout;
    for (std::size_t o = 0; o < fout; ++o) row[o] += layer.bias.data[o];
  }
  return out;
}

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

inline DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input,
                                 const DenseLayer& layer) {
  const std::size_t n = input.extent(0);
  const std::size_t fin = input.extent(1);
  const std::size_t fout = layer.weights.extent(0);
  if (grad_out.shape != std::vector<std::size_t>{n, fout})
    throw ShapeError("dense_backward: grad shape mismatch");
  DenseGrads g{Tensor(input.shape), Tensor(layer.weights.shape),
               Tensor(layer.bias.shape)};
  gemm_atb_acc(grad_out.ptr(), input.ptr(), g.weights.ptr(), n, fout, fin);
  gemm_acc(grad_out.ptr(), layer.weights.ptr(), g.input.ptr(), n, fout, fin);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = grad_out.ptr() + i * fout;
    for (std::size_t o = 0; o < fout; ++o) g.bias.data[o] += row[o];
  }
  return g;
}

struct SoftmaxXent {
  double mean_nll = 0.0;  // mean negative log-likelihood over this call
  double sum_nll = 0.0;
  Tensor grad_logits;     // gradient of the mean (or of grad_weight * sum)
};

// Max-subtracted softmax with cross-entropy. grad_weight 0 means 1/N of this
// call; a caller aggregating chunks of a larger batch passes 1/N_total.
inline SoftmaxXent softmax_xent(const Tensor& logits,
                                const std::vector<int>& labels,
                                double grad_weight = 0.0) {
  if (logits.rank() != 2) throw ShapeError("softmax_xent: logits must be [N,C]");
  const std::size_t n = logits.extent(0);
  const std::size_t c = logits.extent(1);
  if (labels.size() != n) throw ShapeError("softmax_xent: label count mismatch");
  if (n == 0) throw ShapeError("softmax_xent: empty batch");
  const double w = grad_weight > 0.0 ? grad_weight : 1.0 / static_cast<double>(n);

  SoftmaxXent r;
  r.grad_logits = Tensor(logits.shape);
  std::vector<double> p(c);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c)
      throw DataError("softmax_xent: label out of range");
    const double* row = logits.ptr() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(row[j] - mx);
      z += p[j];
    }
    double* grow = r.grad_logits.ptr() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] /= z;
      grow[j] = p[j] * w;
    }
    grow[label] -= w;
    r.sum_nll += -std::log(p[static_cast<std::size_t>(label)]);
  }
  r.mean_nll = r.sum_nll / static_cast<double>(n);
  return r;
}

}  // namespace fbr
