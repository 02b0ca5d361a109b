#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lytnet/conv.hpp"
#include "lytnet/tensor.hpp"

namespace lytnet {

// ---- max pooling -----------------------------------------------------------

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t window,
                    std::size_t stride) {
  require_rank(input, 4, "maxpool2d");
  if (window == 0 || stride == 0) {
    throw std::invalid_argument("maxpool2d: window and stride must be positive");
  }
  const std::size_t n = input.extent(0), c = input.extent(1),
                    h = input.extent(2), w = input.extent(3);
  if (stride == window && (h % window != 0 || w % window != 0)) {
    throw std::invalid_argument("maxpool2d: spatial extents of " +
                                shape_string(input.shape()) +
                                " not divisible by window " +
                                std::to_string(window));
  }
  if (h < window || w < window) {
    throw std::invalid_argument("maxpool2d: input smaller than window");
  }
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  Tensor<T> out({n, c, oh, ow});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = input.raw() + plane * h * w;
    T* dst = out.raw() + plane * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        T best = src[y * stride * w + x * stride];
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j)
            best = std::max(best, src[(y * stride + i) * w + x * stride + j]);
        dst[y * ow + x] = best;
      }
    }
  }
  return out;
}

/// Routes each upstream value to the first maximal element of its window.
template <typename T>
Tensor<T> maxpool2d_backward(const Tensor<T>& input, std::size_t window,
                             std::size_t stride, const Tensor<T>& grad_out) {
  const std::size_t n = input.extent(0), c = input.extent(1),
                    h = input.extent(2), w = input.extent(3);
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  if (grad_out.shape() != Shape{n, c, oh, ow}) {
    throw std::invalid_argument("maxpool2d_backward: gradient shape " +
                                shape_string(grad_out.shape()));
  }
  Tensor<T> grad(input.shape());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = input.raw() + plane * h * w;
    const T* go = grad_out.raw() + plane * oh * ow;
    T* gi = grad.raw() + plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t arg = y * stride * w + x * stride;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = (y * stride + i) * w + x * stride + j;
            if (src[idx] > src[arg]) arg = idx;
          }
        gi[arg] += go[y * ow + x];
      }
    }
  }
  return grad;
}

// ---- global average pooling ----------------------------------------------

template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& input) {
  require_rank(input, 4, "global_avgpool");
  const std::size_t n = input.extent(0), c = input.extent(1);
  const std::size_t area = input.extent(2) * input.extent(3);
  Tensor<T> out({n, c});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = input.raw() + plane * area;
    T acc{0};
    for (std::size_t i = 0; i < area; ++i) acc += src[i];
    out[plane] = acc / static_cast<T>(area);
  }
  return out;
}

template <typename T>
Tensor<T> global_avgpool_backward(const Shape& input_shape,
                                  const Tensor<T>& grad_out) {
  const std::size_t area = input_shape.at(2) * input_shape.at(3);
  if (grad_out.shape() != Shape{input_shape[0], input_shape[1]}) {
    throw std::invalid_argument("global_avgpool_backward: gradient shape " +
                                shape_string(grad_out.shape()));
  }
  Tensor<T> grad(input_shape);
  const T scale = T{1} / static_cast<T>(area);
  for (std::size_t plane = 0; plane < grad_out.size(); ++plane) {
    std::fill_n(grad.raw() + plane * area, area, grad_out[plane] * scale);
  }
  return grad;
}

// ---- fully connected -------------------------------------------------------

/// y = x W^T + b with x (N, in), W (out, in), b (out).
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const Tensor<T>& weights,
                          const Tensor<T>& bias) {
  require_rank(input, 2, "fully_connected input");
  require_rank(weights, 2, "fully_connected weights");
  const std::size_t n = input.extent(0), in = input.extent(1);
  const std::size_t out = weights.extent(0);
  if (weights.extent(1) != in) {
    throw std::invalid_argument(
        "fully_connected: input " + shape_string(input.shape()) +
        " incompatible with weights " + shape_string(weights.shape()));
  }
  if (bias.size() != out) {
    throw std::invalid_argument("fully_connected: bias " +
                                shape_string(bias.shape()) +
                                " incompatible with weights " +
                                shape_string(weights.shape()));
  }
  Tensor<T> y({n, out});
  for (std::size_t b = 0; b < n; ++b)
    std::copy(bias.raw(), bias.raw() + out, y.raw() + b * out);
  detail::gemm_nt(n, out, in, input.raw(), weights.raw(), y.raw());
  detail::mac_count() += n * out * in;
  return y;
}

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
LinearGrads<T> fully_connected_backward(const Tensor<T>& input,
                                        const Tensor<T>& weights,
                                        const Tensor<T>& grad_out) {
  const std::size_t n = input.extent(0), in = input.extent(1);
  const std::size_t out = weights.extent(0);
  if (grad_out.shape() != Shape{n, out}) {
    throw std::invalid_argument("fully_connected_backward: gradient shape " +
                                shape_string(grad_out.shape()));
  }
  LinearGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(weights.shape()),
                   Tensor<T>({out})};
  detail::gemm_nn(n, in, out, grad_out.raw(), weights.raw(), g.input.raw());
  detail::gemm_tn(out, in, n, grad_out.raw(), input.raw(), g.weights.raw());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < out; ++o) g.bias[o] += grad_out[b * out + o];
  return g;
}

// ---- activations -----------------------------------------------------------

template <typename T>
Tensor<T> relu6(Tensor<T> x) {
  for (auto& v : x.data()) v = std::clamp(v, T{0}, T{6});
  return x;
}

/// Gradient passes where the forward input was strictly inside (0, 6).
template <typename T>
Tensor<T> relu6_backward(const Tensor<T>& input, Tensor<T> grad_out) {
  require_same_shape(input, grad_out, "relu6_backward");
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (!(input[i] > T{0} && input[i] < T{6})) grad_out[i] = T{0};
  }
  return grad_out;
}

/// Row-wise softmax over a (batch, classes) tensor.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  Tensor<T> out(logits.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* row = logits.raw() + b * k;
    T* dst = out.raw() + b * k;
    const T peak = *std::max_element(row, row + k);
    T total{0};
    for (std::size_t i = 0; i < k; ++i) {
      dst[i] = std::exp(row[i] - peak);
      total += dst[i];
    }
    for (std::size_t i = 0; i < k; ++i) dst[i] /= total;
  }
  return out;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_out) {
  require_same_shape(probs, grad_out, "softmax_backward");
  const std::size_t n = probs.extent(0), k = probs.extent(1);
  Tensor<T> grad(probs.shape());
  for (std::size_t b = 0; b < n; ++b) {
    T dot{0};
    for (std::size_t i = 0; i < k; ++i)
      dot += probs[b * k + i] * grad_out[b * k + i];
    for (std::size_t i = 0; i < k; ++i)
      grad[b * k + i] = probs[b * k + i] * (grad_out[b * k + i] - dot);
  }
  return grad;
}

template <typename T>
Tensor<T> add(Tensor<T> a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

// ---- batch normalization ---------------------------------------------------

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel statistics cached by the training forward pass.
template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;  // x_hat
  std::vector<T> mean;
  std::vector<T> inv_std;
  std::vector<T> variance;  // biased batch variance
};

/// Training-mode batch normalization over (N, H, W) of each channel.
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const Tensor<T>& gamma,
                           const Tensor<T>& beta, BatchNormCache<T>& cache,
                           T eps = static_cast<T>(kBatchNormEpsilon)) {
  require_rank(x, 4, "batch_norm");
  const std::size_t n = x.extent(0), c = x.extent(1);
  const std::size_t area = x.extent(2) * x.extent(3);
  if (gamma.size() != c || beta.size() != c) {
    throw std::invalid_argument("batch_norm: affine terms do not match " +
                                shape_string(x.shape()));
  }
  const auto count = static_cast<T>(n * area);
  cache.mean.assign(c, T{0});
  cache.variance.assign(c, T{0});
  cache.inv_std.assign(c, T{0});
  cache.normalized = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum{0};
    for (std::size_t b = 0; b < n; ++b) {
      const T* src = x.raw() + (b * c + ch) * area;
      for (std::size_t i = 0; i < area; ++i) sum += src[i];
    }
    const T mean = sum / count;
    T sq{0};
    for (std::size_t b = 0; b < n; ++b) {
      const T* src = x.raw() + (b * c + ch) * area;
      for (std::size_t i = 0; i < area; ++i) {
        const T d = src[i] - mean;
        sq += d * d;
      }
    }
    const T var = sq / count;
    const T inv = T{1} / std::sqrt(var + eps);
    cache.mean[ch] = mean;
    cache.variance[ch] = var;
    cache.inv_std[ch] = inv;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * area;
      for (std::size_t i = 0; i < area; ++i) {
        const T xh = (x[off + i] - mean) * inv;
        cache.normalized[off + i] = xh;
        y[off + i] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const Tensor<T>& gamma,
                           const Tensor<T>& beta, const Tensor<T>& running_mean,
                           const Tensor<T>& running_var,
                           T eps = static_cast<T>(kBatchNormEpsilon)) {
  require_rank(x, 4, "batch_norm");
  const std::size_t n = x.extent(0), c = x.extent(1);
  const std::size_t area = x.extent(2) * x.extent(3);
  Tensor<T> y(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T scale = gamma[ch] / std::sqrt(running_var[ch] + eps);
    const T shift = beta[ch] - running_mean[ch] * scale;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * area;
      for (std::size_t i = 0; i < area; ++i)
        y[off + i] = x[off + i] * scale + shift;
    }
  }
  return y;
}

/// Folds the batch statistics into running estimates. The running variance
/// uses the unbiased batch estimate.
template <typename T>
void update_running_stats(const BatchNormCache<T>& cache, std::size_t count,
                          Tensor<T>& running_mean, Tensor<T>& running_var,
                          T momentum = static_cast<T>(kBatchNormMomentum)) {
  const T correction =
      count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T{1};
  for (std::size_t ch = 0; ch < cache.mean.size(); ++ch) {
    running_mean[ch] = (T{1} - momentum) * running_mean[ch] +
                       momentum * cache.mean[ch];
    running_var[ch] = (T{1} - momentum) * running_var[ch] +
                      momentum * cache.variance[ch] * correction;
  }
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>& cache,
                                      const Tensor<T>& gamma,
                                      const Tensor<T>& grad_out) {
  require_same_shape(cache.normalized, grad_out, "batch_norm_backward");
  const std::size_t n = grad_out.extent(0), c = grad_out.extent(1);
  const std::size_t area = grad_out.extent(2) * grad_out.extent(3);
  const auto count = static_cast<T>(n * area);
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>({c}),
                      Tensor<T>({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    T sum_dy{0}, sum_dy_xh{0};
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * area;
      for (std::size_t i = 0; i < area; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xh += grad_out[off + i] * cache.normalized[off + i];
      }
    }
    g.beta[ch] = sum_dy;
    g.gamma[ch] = sum_dy_xh;
    const T k = gamma[ch] * cache.inv_std[ch] / count;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * area;
      for (std::size_t i = 0; i < area; ++i) {
        g.input[off + i] =
            k * (count * grad_out[off + i] - sum_dy -
                 cache.normalized[off + i] * sum_dy_xh);
      }
    }
  }
  return g;
}

}  // namespace lytnet
