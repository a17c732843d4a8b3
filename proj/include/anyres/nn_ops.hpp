#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "anyres/backbone.hpp"
#include "anyres/parallel.hpp"
#include "anyres/tensor.hpp"

namespace anyres {

inline int conv_out_extent(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace detail {

// C[m x n] += A[m x k] * B[k x n], all row-major.
template <typename T>
void matmul_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      if (av == T(0)) continue;
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Unfolds one group of one sample into a (C_in_g*K*K) x (H_out*W_out) matrix.
template <typename T>
void im2col(const T* x, int c_in_g, int h, int w, int kernel, int stride, int padding,
            int h_out, int w_out, T* col) {
  const std::size_t cols = static_cast<std::size_t>(h_out) * w_out;
  std::size_t r = 0;
  for (int c = 0; c < c_in_g; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int kh = 0; kh < kernel; ++kh) {
      for (int kw = 0; kw < kernel; ++kw, ++r) {
        T* dst = col + r * cols;
        for (int oh = 0; oh < h_out; ++oh) {
          const int ih = oh * stride - padding + kh;
          if (ih < 0 || ih >= h) {
            for (int ow = 0; ow < w_out; ++ow) dst[oh * w_out + ow] = T(0);
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * w;
          for (int ow = 0; ow < w_out; ++ow) {
            const int iw = ow * stride - padding + kw;
            dst[oh * w_out + ow] = (iw < 0 || iw >= w) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <typename T>
void col2im_add(const T* col, int c_in_g, int h, int w, int kernel, int stride, int padding,
                int h_out, int w_out, T* x) {
  const std::size_t cols = static_cast<std::size_t>(h_out) * w_out;
  std::size_t r = 0;
  for (int c = 0; c < c_in_g; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int kh = 0; kh < kernel; ++kh) {
      for (int kw = 0; kw < kernel; ++kw, ++r) {
        const T* src = col + r * cols;
        for (int oh = 0; oh < h_out; ++oh) {
          const int ih = oh * stride - padding + kh;
          if (ih < 0 || ih >= h) continue;
          T* dst = plane + static_cast<std::size_t>(ih) * w;
          for (int ow = 0; ow < w_out; ++ow) {
            const int iw = ow * stride - padding + kw;
            if (iw >= 0 && iw < w) dst[iw] += src[oh * w_out + ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Grouped 2D convolution, no bias term (a BN site follows every conv).
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& kernel, const ConvLayerSpec& layer) {
  const int n = static_cast<int>(x.dim(0));
  const int h = static_cast<int>(x.dim(2));
  const int w = static_cast<int>(x.dim(3));
  if (static_cast<int>(x.dim(1)) != layer.c_in)
    throw std::invalid_argument("conv " + layer.name + ": channel mismatch");
  const int h_out = conv_out_extent(h, layer.kernel, layer.stride, layer.padding);
  const int w_out = conv_out_extent(w, layer.kernel, layer.stride, layer.padding);
  if (h_out < 1 || w_out < 1)
    throw std::invalid_argument("input " + std::to_string(h) + "x" + std::to_string(w) +
                                " too small for conv " + layer.name);
  const int groups = layer.groups;
  const int c_in_g = layer.c_in / groups;
  const int c_out_g = layer.c_out / groups;
  const std::size_t k2 = static_cast<std::size_t>(layer.kernel) * layer.kernel;
  const std::size_t col_rows = static_cast<std::size_t>(c_in_g) * k2;
  const std::size_t cols = static_cast<std::size_t>(h_out) * w_out;

  Tensor<T> y({static_cast<std::size_t>(n), static_cast<std::size_t>(layer.c_out),
               static_cast<std::size_t>(h_out), static_cast<std::size_t>(w_out)});

  parallel_for(0, static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
    std::vector<T> col(col_rows * cols);
    for (std::size_t i = lo; i < hi; ++i) {
      for (int g = 0; g < groups; ++g) {
        const T* xg = x.ptr() + (i * layer.c_in + static_cast<std::size_t>(g) * c_in_g) *
                                    static_cast<std::size_t>(h) * w;
        detail::im2col(xg, c_in_g, h, w, layer.kernel, layer.stride, layer.padding, h_out,
                       w_out, col.data());
        const T* wg = kernel.ptr() + static_cast<std::size_t>(g) * c_out_g * col_rows;
        T* yg = y.ptr() + (i * layer.c_out + static_cast<std::size_t>(g) * c_out_g) * cols;
        std::fill(yg, yg + static_cast<std::size_t>(c_out_g) * cols, T(0));
        detail::matmul_acc(wg, col.data(), yg, c_out_g, col_rows, cols);
      }
    }
  });
  return y;
}

// dL/dx given dL/dy.
template <typename T>
Tensor<T> conv_backward_data(const Tensor<T>& dy, const Tensor<T>& kernel,
                             const ConvLayerSpec& layer, const std::vector<std::size_t>& x_shape) {
  const int n = static_cast<int>(x_shape[0]);
  const int h = static_cast<int>(x_shape[2]);
  const int w = static_cast<int>(x_shape[3]);
  const int h_out = static_cast<int>(dy.dim(2));
  const int w_out = static_cast<int>(dy.dim(3));
  const int groups = layer.groups;
  const int c_in_g = layer.c_in / groups;
  const int c_out_g = layer.c_out / groups;
  const std::size_t k2 = static_cast<std::size_t>(layer.kernel) * layer.kernel;
  const std::size_t col_rows = static_cast<std::size_t>(c_in_g) * k2;
  const std::size_t cols = static_cast<std::size_t>(h_out) * w_out;

  Tensor<T> dx(x_shape);
  parallel_for(0, static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
    std::vector<T> col(col_rows * cols);
    for (std::size_t i = lo; i < hi; ++i) {
      for (int g = 0; g < groups; ++g) {
        std::fill(col.begin(), col.end(), T(0));
        const T* wg = kernel.ptr() + static_cast<std::size_t>(g) * c_out_g * col_rows;
        const T* dyg = dy.ptr() + (i * layer.c_out + static_cast<std::size_t>(g) * c_out_g) * cols;
        // col = Wg^T * dyg
        for (int oc = 0; oc < c_out_g; ++oc) {
          const T* wrow = wg + static_cast<std::size_t>(oc) * col_rows;
          const T* dr = dyg + static_cast<std::size_t>(oc) * cols;
          for (std::size_t r = 0; r < col_rows; ++r) {
            const T wv = wrow[r];
            if (wv == T(0)) continue;
            T* crow = col.data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) crow[j] += wv * dr[j];
          }
        }
        T* dxg = dx.ptr() + (i * layer.c_in + static_cast<std::size_t>(g) * c_in_g) *
                                static_cast<std::size_t>(h) * w;
        detail::col2im_add(col.data(), c_in_g, h, w, layer.kernel, layer.stride, layer.padding,
                           h_out, w_out, dxg);
      }
    }
  });
  return dx;
}

// dL/dkernel given dL/dy and the forward input. Output channels are
// partitioned across workers and every channel accumulates samples in index
// order, so the result does not depend on the thread count.
template <typename T>
Tensor<T> conv_backward_kernel(const Tensor<T>& dy, const Tensor<T>& x,
                               const ConvLayerSpec& layer) {
  const int n = static_cast<int>(x.dim(0));
  const int h = static_cast<int>(x.dim(2));
  const int w = static_cast<int>(x.dim(3));
  const int h_out = static_cast<int>(dy.dim(2));
  const int w_out = static_cast<int>(dy.dim(3));
  const int groups = layer.groups;
  const int c_in_g = layer.c_in / groups;
  const int c_out_g = layer.c_out / groups;
  const std::size_t k2 = static_cast<std::size_t>(layer.kernel) * layer.kernel;
  const std::size_t col_rows = static_cast<std::size_t>(c_in_g) * k2;
  const std::size_t cols = static_cast<std::size_t>(h_out) * w_out;

  Tensor<T> dkernel({static_cast<std::size_t>(layer.c_out), static_cast<std::size_t>(c_in_g),
                     static_cast<std::size_t>(layer.kernel), static_cast<std::size_t>(layer.kernel)});

  // Unfold once per (sample, group); shared read-only by all workers.
  std::vector<std::vector<T>> cols_cache(static_cast<std::size_t>(n) * groups);
  parallel_for(0, cols_cache.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t idx = lo; idx < hi; ++idx) {
      const std::size_t i = idx / groups;
      const int g = static_cast<int>(idx % groups);
      cols_cache[idx].resize(col_rows * cols);
      const T* xg = x.ptr() + (i * layer.c_in + static_cast<std::size_t>(g) * c_in_g) *
                                  static_cast<std::size_t>(h) * w;
      detail::im2col(xg, c_in_g, h, w, layer.kernel, layer.stride, layer.padding, h_out, w_out,
                     cols_cache[idx].data());
    }
  });

  parallel_for(0, static_cast<std::size_t>(layer.c_out), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t oc = lo; oc < hi; ++oc) {
      const int g = static_cast<int>(oc) / c_out_g;
      const int oc_in_g = static_cast<int>(oc) % c_out_g;
      T* drow = dkernel.ptr() + oc * col_rows;
      for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
        const T* col = cols_cache[i * groups + g].data();
        const T* dr = dy.ptr() + (i * layer.c_out + static_cast<std::size_t>(g) * c_out_g +
                                  oc_in_g) * cols;
        for (std::size_t r = 0; r < col_rows; ++r) {
          const T* crow = col + r * cols;
          T acc = T(0);
          for (std::size_t j = 0; j < cols; ++j) acc += dr[j] * crow[j];
          drow[r] += acc;
        }
      }
    }
  });
  return dkernel;
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

// Mask comes from the forward output.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx(dy.shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] = y.data[i] > T(0) ? dy.data[i] : T(0);
  return dx;
}

// Global average pooling (N,C,H,W) -> (N,C); absorbs any spatial extent.
template <typename T>
Tensor<T> gap_forward(const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({n, c});
  const T inv = T(1) / static_cast<T>(plane);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* p = x.ptr() + (i * c + ch) * plane;
      T acc = T(0);
      for (std::size_t k = 0; k < plane; ++k) acc += p[k];
      y.at2(i, ch) = acc * inv;
    }
  return y;
}

template <typename T>
Tensor<T> gap_backward(const std::vector<std::size_t>& x_shape, const Tensor<T>& dy) {
  Tensor<T> dx(x_shape);
  const std::size_t n = x_shape[0], c = x_shape[1], plane = x_shape[2] * x_shape[3];
  const T inv = T(1) / static_cast<T>(plane);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T g = dy.at2(i, ch) * inv;
      T* p = dx.ptr() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = g;
    }
  return dx;
}

template <typename T>
struct FcParams {
  Tensor<T> weight;  // (num_classes, feature_dim)
  Tensor<T> bias;    // (num_classes)
};

template <typename T>
struct FcGrads {
  Tensor<T> weight;
  Tensor<T> bias;

  static FcGrads zeros_like(const FcParams<T>& p) {
    FcGrads g;
    g.weight = Tensor<T>(p.weight.shape);
    g.bias = Tensor<T>(p.bias.shape);
    return g;
  }
};

template <typename T>
Tensor<T> fc_forward(const Tensor<T>& feat, const FcParams<T>& fc) {
  const std::size_t n = feat.dim(0), cf = feat.dim(1), k = fc.weight.dim(0);
  Tensor<T> logits({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t cls = 0; cls < k; ++cls) {
      const T* wr = fc.weight.ptr() + cls * cf;
      const T* fr = feat.ptr() + i * cf;
      T acc = fc.bias[cls];
      for (std::size_t c = 0; c < cf; ++c) acc += wr[c] * fr[c];
      logits.at2(i, cls) = acc;
    }
  return logits;
}

template <typename T>
Tensor<T> fc_backward(const Tensor<T>& feat, const FcParams<T>& fc, const Tensor<T>& dlogits,
                      FcGrads<T>& grads) {
  const std::size_t n = feat.dim(0), cf = feat.dim(1), k = fc.weight.dim(0);
  Tensor<T> dfeat({n, cf});
  for (std::size_t i = 0; i < n; ++i) {
    const T* fr = feat.ptr() + i * cf;
    T* dfr = dfeat.ptr() + i * cf;
    for (std::size_t cls = 0; cls < k; ++cls) {
      const T g = dlogits.at2(i, cls);
      grads.bias[cls] += g;
      const T* wr = fc.weight.ptr() + cls * cf;
      T* gwr = grads.weight.ptr() + cls * cf;
      for (std::size_t c = 0; c < cf; ++c) {
        gwr[c] += g * fr[c];
        dfr[c] += g * wr[c];
      }
    }
  }
  return dfeat;
}

}  // namespace anyres
