#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lytnet/tensor.hpp"

namespace lytnet {

enum class ConvMode { standard, depthwise, pointwise };

struct ConvDescriptor {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  ConvMode mode = ConvMode::standard;

  static ConvDescriptor standard(std::size_t k, std::size_t s, std::size_t pad,
                                 std::size_t in, std::size_t out) {
    return {k, s, pad, pad, in, out, ConvMode::standard};
  }
  static ConvDescriptor depthwise(std::size_t k, std::size_t s,
                                  std::size_t pad, std::size_t channels) {
    return {k, s, pad, pad, channels, channels, ConvMode::depthwise};
  }
  static ConvDescriptor pointwise(std::size_t in, std::size_t out,
                                  std::size_t s = 1) {
    return {1, s, 0, 0, in, out, ConvMode::pointwise};
  }

  void validate() const {
    if (kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0) {
      throw std::invalid_argument("conv descriptor extents must be positive");
    }
    if (mode == ConvMode::pointwise && kernel != 1) {
      throw std::invalid_argument("pointwise convolution requires kernel 1");
    }
    if (mode == ConvMode::depthwise && in_channels != out_channels) {
      throw std::invalid_argument(
          "depthwise convolution requires out_channels == in_channels");
    }
  }

  Shape weight_shape() const {
    if (mode == ConvMode::depthwise) return {out_channels, 1, kernel, kernel};
    return {out_channels, in_channels, kernel, kernel};
  }

  std::size_t out_extent(std::size_t in, std::size_t pad) const {
    return (in + 2 * pad - kernel) / stride + 1;
  }
};

struct ConvCost {
  std::uint64_t standard = 0;
  std::uint64_t separable = 0;
  double ratio = 0.0;
};

/// Multiply-accumulate counts of a standard and a depthwise separable
/// convolution over an h x w output grid.
inline ConvCost conv_cost(std::uint64_t h, std::uint64_t w, std::uint64_t k,
                          std::uint64_t d_in, std::uint64_t d_out) {
  if (h == 0 || w == 0 || k == 0 || d_in == 0 || d_out == 0) {
    throw std::invalid_argument("conv_cost: arguments must be positive");
  }
  ConvCost cost;
  cost.standard = h * w * k * k * d_in * d_out;
  cost.separable = h * w * d_in * (k * k + d_out);
  cost.ratio = static_cast<double>(k * k * d_out) /
               static_cast<double>(k * k + d_out);
  return cost;
}

namespace detail {
inline std::uint64_t& mac_count() {
  thread_local std::uint64_t count = 0;
  return count;
}
}  // namespace detail

/// Multiply-accumulates executed by convolution and linear kernels on this
/// thread since the last reset.
inline std::uint64_t executed_macs() { return detail::mac_count(); }
inline void reset_executed_macs() { detail::mac_count() = 0; }

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  using I = Eigen::Index;
  MatrixMap<T>(c, I(m), I(n)).noalias() +=
      ConstMatrixMap<T>(a, I(m), I(k)) * ConstMatrixMap<T>(b, I(k), I(n));
}

// C[m x n] += A^T * B, A stored [k x m], B stored [k x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  using I = Eigen::Index;
  MatrixMap<T>(c, I(m), I(n)).noalias() +=
      ConstMatrixMap<T>(a, I(k), I(m)).transpose() *
      ConstMatrixMap<T>(b, I(k), I(n));
}

// C[m x n] += A * B^T, A stored [m x k], B stored [n x k]
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  using I = Eigen::Index;
  MatrixMap<T>(c, I(m), I(n)).noalias() +=
      ConstMatrixMap<T>(a, I(m), I(k)) *
      ConstMatrixMap<T>(b, I(n), I(k)).transpose();
}

// Unfolds one (C, H, W) image into a (C*k*k, OH*OW) matrix.
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w,
            const ConvDescriptor& d, std::size_t oh, std::size_t ow, T* col) {
  const std::size_t k = d.kernel;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = img + c * h * w;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        T* row = col + ((c * k + kh) * k + kw) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * d.stride + kh) -
                          static_cast<std::ptrdiff_t>(d.pad_h);
          T* out = row + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(out, out + ow, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * d.stride + kw) -
                            static_cast<std::ptrdiff_t>(d.pad_w);
            out[x] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                         ? T{0}
                         : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w,
            const ConvDescriptor& d, std::size_t oh, std::size_t ow, T* img) {
  const std::size_t k = d.kernel;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = img + c * h * w;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        const T* row = col + ((c * k + kh) * k + kw) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * d.stride + kh) -
                          static_cast<std::ptrdiff_t>(d.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * d.stride + kw) -
                            static_cast<std::ptrdiff_t>(d.pad_w);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) {
              dst[ix] += row[y * ow + x];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void pad_plane(const T* src, std::size_t h, std::size_t w, std::size_t ph,
               std::size_t pw, T* dst) {
  const std::size_t wp = w + 2 * pw;
  std::fill(dst, dst + (h + 2 * ph) * wp, T{0});
  for (std::size_t y = 0; y < h; ++y) {
    std::copy(src + y * w, src + (y + 1) * w, dst + (y + ph) * wp + pw);
  }
}

inline bool is_identity_unfold(const ConvDescriptor& d) {
  return d.kernel == 1 && d.stride == 1 && d.pad_h == 0 && d.pad_w == 0;
}

}  // namespace detail

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& weights,
                     const ConvDescriptor& d) {
  d.validate();
  require_rank(input, 4, "conv2d input");
  if (weights.shape() != d.weight_shape()) {
    throw std::invalid_argument(
        "conv2d: weight shape " + shape_string(weights.shape()) +
        " does not match descriptor shape " + shape_string(d.weight_shape()));
  }
  if (input.extent(1) != d.in_channels) {
    throw std::invalid_argument("conv2d: input shape " +
                                shape_string(input.shape()) + " has " +
                                std::to_string(input.extent(1)) +
                                " channels, descriptor expects " +
                                std::to_string(d.in_channels));
  }
  if (input.extent(2) + 2 * d.pad_h < d.kernel ||
      input.extent(3) + 2 * d.pad_w < d.kernel) {
    throw std::invalid_argument("conv2d: input " + shape_string(input.shape()) +
                                " too small for kernel " +
                                std::to_string(d.kernel));
  }
}

/// Cross-correlation in NCHW layout. Depthwise mode filters each channel
/// with its own kernel; pointwise mode is a 1x1 standard convolution.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights,
                 const ConvDescriptor& d) {
  check_conv_args(input, weights, d);
  const std::size_t n = input.extent(0), c = input.extent(1),
                    h = input.extent(2), w = input.extent(3);
  const std::size_t oh = d.out_extent(h, d.pad_h);
  const std::size_t ow = d.out_extent(w, d.pad_w);
  const std::size_t k = d.kernel;
  Tensor<T> out({n, d.out_channels, oh, ow});

  if (d.mode == ConvMode::depthwise) {
    const std::size_t hp = h + 2 * d.pad_h, wp = w + 2 * d.pad_w;
    std::vector<T> padded(hp * wp);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        detail::pad_plane(input.raw() + (b * c + ch) * h * w, h, w, d.pad_h,
                          d.pad_w, padded.data());
        T* dst = out.raw() + (b * c + ch) * oh * ow;
        const T* kern = weights.raw() + ch * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const T wv = kern[kh * k + kw];
            for (std::size_t y = 0; y < oh; ++y) {
              const T* src = padded.data() + (y * d.stride + kh) * wp + kw;
              T* row = dst + y * ow;
              if (d.stride == 1) {
#pragma omp simd
                for (std::size_t x = 0; x < ow; ++x) row[x] += wv * src[x];
              } else {
                for (std::size_t x = 0; x < ow; ++x)
                  row[x] += wv * src[x * d.stride];
              }
            }
          }
        }
      }
    }
    detail::mac_count() += n * c * oh * ow * k * k;
    return out;
  }

  const std::size_t rows = c * k * k, cols = oh * ow;
  std::vector<T> col;
  if (!detail::is_identity_unfold(d)) col.resize(rows * cols);
  for (std::size_t b = 0; b < n; ++b) {
    const T* img = input.raw() + b * c * h * w;
    const T* unfolded = img;
    if (!col.empty()) {
      detail::im2col(img, c, h, w, d, oh, ow, col.data());
      unfolded = col.data();
    }
    detail::gemm_nn(d.out_channels, cols, rows, weights.raw(), unfolded,
                    out.raw() + b * d.out_channels * cols);
  }
  detail::mac_count() += n * d.out_channels * rows * cols;
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
};

/// Gradients of conv2d with respect to its input and weights.
/// `need_input` false skips the input gradient (first layer).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const ConvDescriptor& d,
                             const Tensor<T>& grad_out,
                             bool need_input = true) {
  check_conv_args(input, weights, d);
  const std::size_t n = input.extent(0), c = input.extent(1),
                    h = input.extent(2), w = input.extent(3);
  const std::size_t oh = d.out_extent(h, d.pad_h);
  const std::size_t ow = d.out_extent(w, d.pad_w);
  const Shape expected{n, d.out_channels, oh, ow};
  if (grad_out.shape() != expected) {
    throw std::invalid_argument("conv2d_backward: upstream gradient shape " +
                                shape_string(grad_out.shape()) +
                                " does not match output shape " +
                                shape_string(expected));
  }
  const std::size_t k = d.kernel;
  ConvGrads<T> g{need_input ? Tensor<T>(input.shape()) : Tensor<T>(),
                 Tensor<T>(weights.shape())};

  if (d.mode == ConvMode::depthwise) {
    const std::size_t hp = h + 2 * d.pad_h, wp = w + 2 * d.pad_w;
    std::vector<T> padded(hp * wp), gpad(hp * wp);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        detail::pad_plane(input.raw() + (b * c + ch) * h * w, h, w, d.pad_h,
                          d.pad_w, padded.data());
        std::fill(gpad.begin(), gpad.end(), T{0});
        const T* go = grad_out.raw() + (b * c + ch) * oh * ow;
        const T* kern = weights.raw() + ch * k * k;
        T* gk = g.weights.raw() + ch * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const T wv = kern[kh * k + kw];
            T acc{0};
            for (std::size_t y = 0; y < oh; ++y) {
              const std::size_t base = (y * d.stride + kh) * wp + kw;
              const T* src = padded.data() + base;
              T* gsrc = gpad.data() + base;
              const T* grow = go + y * ow;
              if (d.stride == 1) {
#pragma omp simd reduction(+ : acc)
                for (std::size_t x = 0; x < ow; ++x) {
                  acc += grow[x] * src[x];
                  gsrc[x] += wv * grow[x];
                }
              } else {
                for (std::size_t x = 0; x < ow; ++x) {
                  acc += grow[x] * src[x * d.stride];
                  gsrc[x * d.stride] += wv * grow[x];
                }
              }
            }
            gk[kh * k + kw] += acc;
          }
        }
        if (need_input) {
          T* gi = g.input.raw() + (b * c + ch) * h * w;
          for (std::size_t y = 0; y < h; ++y) {
            const T* src = gpad.data() + (y + d.pad_h) * wp + d.pad_w;
            std::copy(src, src + w, gi + y * w);
          }
        }
      }
    }
    return g;
  }

  const std::size_t rows = c * k * k, cols = oh * ow;
  const bool identity = detail::is_identity_unfold(d);
  std::vector<T> col, gcol;
  if (!identity) {
    col.resize(rows * cols);
    if (need_input) gcol.resize(rows * cols);
  }
  for (std::size_t b = 0; b < n; ++b) {
    const T* img = input.raw() + b * c * h * w;
    const T* go = grad_out.raw() + b * d.out_channels * cols;
    const T* unfolded = img;
    if (!identity) {
      detail::im2col(img, c, h, w, d, oh, ow, col.data());
      unfolded = col.data();
    }
    detail::gemm_nt(d.out_channels, rows, cols, go, unfolded, g.weights.raw());
    if (!need_input) continue;
    T* gi = g.input.raw() + b * c * h * w;
    if (identity) {
      detail::gemm_tn(rows, cols, d.out_channels, weights.raw(), go, gi);
    } else {
      std::fill(gcol.begin(), gcol.end(), T{0});
      detail::gemm_tn(rows, cols, d.out_channels, weights.raw(), go,
                      gcol.data());
      detail::col2im(gcol.data(), c, h, w, d, oh, ow, gi);
    }
  }
  return g;
}

}  // namespace lytnet
