#pragma once
// Independent reference implementations shared by the unit tests and the
// acceptance runner. Nothing here calls into the optimized kernels it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lytnet/conv.hpp"
#include "lytnet/dataset.hpp"
#include "lytnet/network.hpp"
#include "lytnet/ops.hpp"
#include "lytnet/training.hpp"

namespace oracle {

using lytnet::ConvDescriptor;
using lytnet::ConvMode;
using lytnet::Shape;
using lytnet::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

/// Direct seven-loop convolution with explicit zero padding.
template <typename T>
Tensor<T> direct_conv2d(const Tensor<T>& x, const Tensor<T>& w,
                        const ConvDescriptor& d) {
  const std::size_t n = x.extent(0), c = x.extent(1), h = x.extent(2),
                    wd = x.extent(3);
  const std::size_t oh = (h + 2 * d.pad_h - d.kernel) / d.stride + 1;
  const std::size_t ow = (wd + 2 * d.pad_w - d.kernel) / d.stride + 1;
  Tensor<T> y({n, d.out_channels, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0;
          const bool dw = d.mode == ConvMode::depthwise;
          const std::size_t c_lo = dw ? o : 0, c_hi = dw ? o + 1 : c;
          for (std::size_t ci = c_lo; ci < c_hi; ++ci)
            for (std::size_t ki = 0; ki < d.kernel; ++ki)
              for (std::size_t kj = 0; kj < d.kernel; ++kj) {
                const auto yy = static_cast<std::ptrdiff_t>(i * d.stride + ki) -
                                static_cast<std::ptrdiff_t>(d.pad_h);
                const auto xx = static_cast<std::ptrdiff_t>(j * d.stride + kj) -
                                static_cast<std::ptrdiff_t>(d.pad_w);
                if (yy < 0 || xx < 0 || yy >= std::ptrdiff_t(h) ||
                    xx >= std::ptrdiff_t(wd))
                  continue;
                const double wv = dw ? w.at(o, 0, ki, kj) : w.at(o, ci, ki, kj);
                acc += wv * x.at(b, ci, std::size_t(yy), std::size_t(xx));
              }
          y.at(b, o, i, j) = static_cast<T>(acc);
        }
  return y;
}

/// Direct multiply-accumulate count of a convolution layer, counted by
/// enumerating output positions and kernel taps (padding taps included).
inline std::uint64_t enumerated_macs(const ConvDescriptor& d, std::size_t n,
                                     std::size_t h, std::size_t w) {
  const std::size_t oh = (h + 2 * d.pad_h - d.kernel) / d.stride + 1;
  const std::size_t ow = (w + 2 * d.pad_w - d.kernel) / d.stride + 1;
  std::uint64_t total = 0;
  for (std::size_t pos = 0; pos < n * oh * ow; ++pos)
    for (std::size_t o = 0; o < d.out_channels; ++o)
      total += (d.mode == ConvMode::depthwise ? 1 : d.in_channels) * d.kernel *
               d.kernel;
  return total;
}

// ---- finite differences -------------------------------------------------------

inline constexpr double kStep = 1e-5;
inline constexpr double kTolerance = 1e-4;
/// Denominator floor for the relative error so that gradients that are
/// zero up to rounding do not divide by zero.
inline constexpr double kFloor = 1e-6;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), kFloor});
}

/// Central differences of `f` over every entry of `x`, compared against
/// `analytic`. Returns the worst relative error.
inline double check_entries(std::span<double> x, std::span<const double> analytic,
                            const std::function<double()>& f) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + kStep;
    const double up = f();
    x[i] = saved - kStep;
    const double down = f();
    x[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * kStep)));
  }
  return worst;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct GradCase {
  std::string name;
  double worst = 0;
};

/// Moves values lying within `margin` of any kink point away from it.
inline void avoid_kinks(Tensor<double>& t, std::initializer_list<double> kinks,
                        double margin) {
  for (auto& v : t.data())
    for (double k : kinks)
      if (std::abs(v - k) < margin) v = k + (v < k ? -margin : margin);
}

/// Finite-difference checks of every differentiable op and of the composite
/// loss, on small random tensors drawn from `seed`.
inline std::vector<GradCase> gradient_suite(std::uint64_t seed) {
  using namespace lytnet;
  std::mt19937_64 rng(seed);
  std::vector<GradCase> out;

  // Convolutions: standard, strided, depthwise, pointwise.
  const std::vector<std::pair<std::string, ConvDescriptor>> convs{
      {"conv standard 3x3", ConvDescriptor::standard(3, 1, 1, 3, 4)},
      {"conv standard 3x3 stride 2", ConvDescriptor::standard(3, 2, 1, 2, 3)},
      {"conv depthwise 3x3", ConvDescriptor::depthwise(3, 1, 1, 3)},
      {"conv depthwise 3x3 stride 2", ConvDescriptor::depthwise(3, 2, 1, 3)},
      {"conv pointwise", ConvDescriptor::pointwise(4, 3)},
  };
  for (const auto& [name, d] : convs) {
    auto x = random_tensor<double>({2, d.in_channels, 5, 6}, rng);
    auto w = random_tensor<double>(d.weight_shape(), rng);
    const auto y0 = conv2d(x, w, d);
    const auto r = random_tensor<double>(y0.shape(), rng);
    const auto g = conv2d_backward(x, w, d, r);
    auto f = [&] { return dot(conv2d(x, w, d), r); };
    out.push_back({name + " d/input", check_entries(x.data(), g.input.data(), f)});
    out.push_back({name + " d/weights", check_entries(w.data(), g.weights.data(), f)});
  }

  {  // maxpool with well separated values so the argmax never flips
    Tensor<double> x({2, 2, 4, 6});
    std::vector<double> vals(x.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * double(i);
    std::shuffle(vals.begin(), vals.end(), rng);
    std::copy(vals.begin(), vals.end(), x.raw());
    const auto r = random_tensor<double>({2, 2, 2, 3}, rng);
    const auto g = maxpool2d_backward(x, 2, 2, r);
    out.push_back({"maxpool 2x2", check_entries(x.data(), g.data(), [&] {
                     return dot(maxpool2d(x, 2, 2), r);
                   })});
  }
  {
    auto x = random_tensor<double>({2, 3, 3, 4}, rng);
    const auto r = random_tensor<double>({2, 3}, rng);
    const auto g = global_avgpool_backward(x.shape(), r);
    out.push_back({"global avgpool", check_entries(x.data(), g.data(), [&] {
                     return dot(global_avgpool(x), r);
                   })});
  }
  {
    auto x = random_tensor<double>({3, 5}, rng);
    auto w = random_tensor<double>({4, 5}, rng);
    auto b = random_tensor<double>({4}, rng);
    const auto r = random_tensor<double>({3, 4}, rng);
    const auto g = fully_connected_backward(x, w, r);
    auto f = [&] { return dot(fully_connected(x, w, b), r); };
    out.push_back({"fully connected d/input", check_entries(x.data(), g.input.data(), f)});
    out.push_back({"fully connected d/weights", check_entries(w.data(), g.weights.data(), f)});
    out.push_back({"fully connected d/bias", check_entries(b.data(), g.bias.data(), f)});
  }
  {
    auto x = random_tensor<double>({2, 3, 4, 4}, rng, -2.0, 8.0);
    avoid_kinks(x, {0.0, 6.0}, 1e-3);
    const auto r = random_tensor<double>(x.shape(), rng);
    const auto g = relu6_backward(x, r);
    out.push_back({"relu6", check_entries(x.data(), g.data(), [&] {
                     return dot(relu6(x), r);
                   })});
  }
  {
    auto x = random_tensor<double>({3, 5}, rng, -3.0, 3.0);
    const auto r = random_tensor<double>(x.shape(), rng);
    const auto g = softmax_backward(softmax(x), r);
    out.push_back({"softmax", check_entries(x.data(), g.data(), [&] {
                     return dot(softmax(x), r);
                   })});
  }
  {
    auto a = random_tensor<double>({2, 3, 2, 2}, rng);
    const auto b = random_tensor<double>(a.shape(), rng);
    const auto r = random_tensor<double>(a.shape(), rng);
    out.push_back({"add", check_entries(a.data(), r.data(), [&] {
                     return dot(add(a, b), r);
                   })});
  }
  {
    auto x = random_tensor<double>({3, 2, 3, 3}, rng, -2.0, 2.0);
    auto gamma = random_tensor<double>({2}, rng, 0.5, 1.5);
    auto beta = random_tensor<double>({2}, rng);
    const auto r = random_tensor<double>(x.shape(), rng);
    BatchNormCache<double> cache;
    batch_norm_train(x, gamma, beta, cache);
    const auto g = batch_norm_backward(cache, gamma, r);
    auto f = [&] {
      BatchNormCache<double> c;
      return dot(batch_norm_train(x, gamma, beta, c), r);
    };
    out.push_back({"batch norm d/input", check_entries(x.data(), g.input.data(), f)});
    out.push_back({"batch norm d/gamma", check_entries(gamma.data(), g.gamma.data(), f)});
    out.push_back({"batch norm d/beta", check_entries(beta.data(), g.beta.data(), f)});
  }
  {  // composite loss over logits, endpoints and regularized weights
    const std::size_t n = 4;
    auto logits = random_tensor<double>({n, kNumClasses}, rng, -3.0, 3.0);
    auto pred = random_tensor<double>({n, 4}, rng, 0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, kNumClasses - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<LossTarget> targets(n);
    for (std::size_t b = 0; b < n; ++b) {
      targets[b].label = static_cast<LightClass>(cls(rng));
      targets[b].endpoints = {u(rng), u(rng), u(rng), u(rng)};
      targets[b].has_crossing = b != 1;  // one frame without a crossing
    }
    Parameters<double> params;
    params.add("w.conv", ParamKind::conv_weight, random_tensor<double>({2, 2, 1, 1}, rng));
    params.add("w.fc", ParamKind::linear_weight, random_tensor<double>({3, 2}, rng));
    params.add("w.bias", ParamKind::linear_bias, random_tensor<double>({3}, rng));
    const double omega = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
    const double lambda = 0.01;
    const auto res = composite_loss(logits, pred, std::span<const LossTarget>(targets),
                                    omega, lambda, &params);
    for (auto& p : params) p.value.grad();
    add_l2_gradient(params, lambda);
    auto f = [&] {
      return composite_loss(logits, pred, std::span<const LossTarget>(targets),
                            omega, lambda, &params)
          .terms.total;
    };
    out.push_back({"loss d/logits", check_entries(logits.data(), res.grad_logits.data(), f)});
    out.push_back({"loss d/endpoints", check_entries(pred.data(), res.grad_endpoints.data(), f)});
    for (auto& p : params) {
      std::vector<double> g(p.value.grad().begin(), p.value.grad().end());
      out.push_back({"loss d/" + p.name, check_entries(p.value.data(), g, f)});
    }
  }
  return out;
}

}  // namespace oracle
