#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lytnet/conv.hpp"
#include "lytnet/ops.hpp"
#include "lytnet/parameters.hpp"
#include "lytnet/tensor.hpp"

namespace lytnet {

/// Class index order used everywhere: network logits, labels, metrics.
enum class LightClass : std::size_t {
  red = 0,
  green = 1,
  countdown_green = 2,
  countdown_blank = 3,
  none = 4,
};
inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::size_t kNumEndpointCoords = 4;

inline constexpr std::array<const char*, kNumClasses> kClassNames{
    "red", "green", "countdown_green", "countdown_blank", "none"};

inline const char* class_name(LightClass c) {
  return kClassNames[static_cast<std::size_t>(c)];
}

inline std::optional<LightClass> parse_class(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (name == kClassNames[i]) return static_cast<LightClass>(i);
  return std::nullopt;
}

enum class Mode { inference, training };

/// One row of the bottleneck table: expansion t, output channels c,
/// repeats n, stride s of the first repeat.
struct BottleneckSpec {
  std::size_t expansion;
  std::size_t out_channels;
  std::size_t repeats;
  std::size_t stride;

  friend bool operator==(const BottleneckSpec&, const BottleneckSpec&) = default;
};

/// LYTNet bottleneck rows. The 160-channel row downsamples in its first
/// repeat so the 12x9 head resolution is reached at 768x576 input.
inline std::vector<BottleneckSpec> default_bottleneck_table() {
  return {{1, 16, 1, 1},  {6, 24, 1, 2}, {6, 24, 2, 1},
          {6, 32, 1, 2},  {6, 64, 1, 2}, {6, 64, 2, 1},
          {6, 96, 1, 1},  {6, 160, 2, 2}, {6, 320, 1, 1}};
}

/// round(c * alpha) snapped to the nearest multiple of 8 (ties upward),
/// never below 8.
inline std::size_t apply_width_multiplier(std::size_t channels, double alpha) {
  const double scaled = std::round(static_cast<double>(channels) * alpha);
  const auto snapped =
      static_cast<std::size_t>(std::floor((scaled + 4.0) / 8.0)) * 8;
  return std::max<std::size_t>(8, snapped);
}

struct NetworkConfig {
  double width_multiplier = 1.0;
  std::size_t input_height = 576;
  std::size_t input_width = 768;
  std::vector<BottleneckSpec> bottlenecks = default_bottleneck_table();
  std::size_t stem_channels = 32;
  std::size_t last_channels = 1280;
  std::size_t class_head_width = 160;
  std::size_t endpoint_head_width = 80;
  std::size_t num_classes = kNumClasses;
  std::size_t num_endpoints = kNumEndpointCoords;

  void validate() const {
    if (!(width_multiplier > 0.0) || !std::isfinite(width_multiplier)) {
      throw std::invalid_argument("width multiplier must be positive");
    }
    if (input_height == 0 || input_width == 0 || input_height % 64 != 0 ||
        input_width % 64 != 0) {
      throw std::invalid_argument(
          "input dimensions must be positive multiples of 64, got " +
          std::to_string(input_height) + "x" + std::to_string(input_width));
    }
    if (bottlenecks.empty()) throw std::invalid_argument("empty bottleneck table");
    for (const auto& b : bottlenecks) {
      if (b.expansion == 0 || b.out_channels == 0 || b.repeats == 0 ||
          (b.stride != 1 && b.stride != 2)) {
        throw std::invalid_argument("invalid bottleneck row");
      }
    }
  }

  std::size_t scaled(std::size_t channels) const {
    return apply_width_multiplier(channels, width_multiplier);
  }
};

/// Records the input shape of each stage during a forward pass.
struct ActivationTrace {
  std::vector<std::pair<std::string, Shape>> stages;
  void record(std::string name, const Shape& shape) {
    stages.emplace_back(std::move(name), shape);
  }
};

struct LayerCost {
  std::string name;
  std::uint64_t macs;
};

namespace detail {

/// Convolution followed by batch normalization and optional relu6.
template <typename T>
struct ConvBnUnit {
  ConvDescriptor desc;
  std::size_t weight = 0, gamma = 0, beta = 0, mean = 0, var = 0;
  bool activate = true;

  Tensor<T> input;
  Tensor<T> pre_activation;
  BatchNormCache<T> bn;
  bool cached = false;

  static ConvBnUnit create(Parameters<T>& params, const std::string& prefix,
                           const ConvDescriptor& d, bool activate,
                           std::mt19937_64& rng) {
    ConvBnUnit u;
    u.desc = d;
    u.activate = activate;
    const std::size_t fan_in =
        (d.mode == ConvMode::depthwise ? 1 : d.in_channels) * d.kernel *
        d.kernel;
    const std::size_t c = d.out_channels;
    u.weight = params.add(prefix + ".conv.weight", ParamKind::conv_weight,
                          fan_in_uniform<T>(d.weight_shape(), fan_in, rng));
    u.gamma = params.add(prefix + ".bn.gamma", ParamKind::bn_scale,
                         Tensor<T>({c}, T{1}));
    u.beta = params.add(prefix + ".bn.beta", ParamKind::bn_shift,
                        Tensor<T>({c}, T{0}));
    u.mean = params.add(prefix + ".bn.running_mean",
                        ParamKind::bn_running_mean, Tensor<T>({c}, T{0}));
    u.var = params.add(prefix + ".bn.running_var", ParamKind::bn_running_var,
                       Tensor<T>({c}, T{1}));
    return u;
  }

  Tensor<T> infer(const Parameters<T>& p, const Tensor<T>& x) const {
    Tensor<T> y = batch_norm_infer(conv2d(x, p.tensor(weight), desc),
                                   p.tensor(gamma), p.tensor(beta),
                                   p.tensor(mean), p.tensor(var));
    return activate ? relu6(std::move(y)) : y;
  }

  Tensor<T> train(Parameters<T>& p, const Tensor<T>& x) {
    input = x;
    Tensor<T> y = conv2d(x, p.tensor(weight), desc);
    Tensor<T> z = batch_norm_train(y, p.tensor(gamma), p.tensor(beta), bn);
    update_running_stats(bn, y.extent(0) * y.extent(2) * y.extent(3),
                         p.tensor(mean), p.tensor(var));
    cached = true;
    if (!activate) return z;
    pre_activation = z;
    return relu6(std::move(z));
  }

  Tensor<T> backward(Parameters<T>& p, Tensor<T> grad, bool need_input) {
    if (!cached) {
      throw std::logic_error("backward called without a training forward pass");
    }
    if (activate) grad = relu6_backward(pre_activation, std::move(grad));
    auto bn_grads = batch_norm_backward(bn, p.tensor(gamma), grad);
    accumulate(p.tensor(gamma).grad(), bn_grads.gamma);
    accumulate(p.tensor(beta).grad(), bn_grads.beta);
    auto conv_grads = conv2d_backward(input, p.tensor(weight), desc,
                                      bn_grads.input, need_input);
    accumulate(p.tensor(weight).grad(), conv_grads.weights);
    cached = false;
    return std::move(conv_grads.input);
  }

  static void accumulate(std::span<T> dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
};

template <typename T>
struct BottleneckBlock {
  std::optional<ConvBnUnit<T>> expand;
  ConvBnUnit<T> depthwise;
  ConvBnUnit<T> project;
  bool residual = false;

  Tensor<T> infer(const Parameters<T>& p, const Tensor<T>& x) const {
    Tensor<T> h = expand ? expand->infer(p, x) : x;
    h = project.infer(p, depthwise.infer(p, h));
    return residual ? add(std::move(h), x) : h;
  }

  Tensor<T> train(Parameters<T>& p, const Tensor<T>& x) {
    Tensor<T> h = expand ? expand->train(p, x) : x;
    h = project.train(p, depthwise.train(p, h));
    return residual ? add(std::move(h), x) : h;
  }

  Tensor<T> backward(Parameters<T>& p, const Tensor<T>& grad) {
    Tensor<T> g = depthwise.backward(p, project.backward(p, grad, true), true);
    if (expand) g = expand->backward(p, std::move(g), true);
    return residual ? add(std::move(g), grad) : g;
  }
};

/// Linear -> relu6 -> linear.
template <typename T>
struct HeadUnit {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  Tensor<T> input, hidden_pre;
  bool cached = false;

  static HeadUnit create(Parameters<T>& params, const std::string& prefix,
                         std::size_t in, std::size_t hidden, std::size_t out,
                         std::mt19937_64& rng) {
    HeadUnit h;
    h.w1 = params.add(prefix + ".fc1.weight", ParamKind::linear_weight,
                      fan_in_uniform<T>({hidden, in}, in, rng));
    h.b1 = params.add(prefix + ".fc1.bias", ParamKind::linear_bias,
                      Tensor<T>({hidden}));
    h.w2 = params.add(prefix + ".fc2.weight", ParamKind::linear_weight,
                      fan_in_uniform<T>({out, hidden}, hidden, rng));
    h.b2 = params.add(prefix + ".fc2.bias", ParamKind::linear_bias,
                      Tensor<T>({out}));
    return h;
  }

  Tensor<T> infer(const Parameters<T>& p, const Tensor<T>& x,
                  ActivationTrace* trace, const std::string& name) const {
    if (trace) trace->record(name + ".fc1", x.shape());
    Tensor<T> h = relu6(fully_connected(x, p.tensor(w1), p.tensor(b1)));
    if (trace) trace->record(name + ".fc2", h.shape());
    return fully_connected(h, p.tensor(w2), p.tensor(b2));
  }

  Tensor<T> train(Parameters<T>& p, const Tensor<T>& x) {
    input = x;
    hidden_pre = fully_connected(x, p.tensor(w1), p.tensor(b1));
    cached = true;
    return fully_connected(relu6(hidden_pre), p.tensor(w2), p.tensor(b2));
  }

  Tensor<T> backward(Parameters<T>& p, const Tensor<T>& grad) {
    if (!cached) {
      throw std::logic_error("backward called without a training forward pass");
    }
    auto g2 = fully_connected_backward(relu6(hidden_pre), p.tensor(w2), grad);
    ConvBnUnit<T>::accumulate(p.tensor(w2).grad(), g2.weights);
    ConvBnUnit<T>::accumulate(p.tensor(b2).grad(), g2.bias);
    auto g1 = fully_connected_backward(
        input, p.tensor(w1), relu6_backward(hidden_pre, std::move(g2.input)));
    ConvBnUnit<T>::accumulate(p.tensor(w1).grad(), g1.weights);
    ConvBnUnit<T>::accumulate(p.tensor(b1).grad(), g1.bias);
    cached = false;
    return std::move(g1.input);
  }
};

}  // namespace detail

/// The LYTNet stack: strided 3x3 stem, 2x2 max pool, inverted-residual
/// bottlenecks, 1x1 expansion, global average pooling and two heads sharing
/// the pooled feature (light class logits, midline endpoints).
template <typename T>
class Lytnet {
 public:
  struct Output {
    Tensor<T> logits;     // (N, 5)
    Tensor<T> endpoints;  // (N, 4): x1, y1, x2, y2 normalized
  };

  static Lytnet build(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    Lytnet net;
    net.config_ = config;
    std::mt19937_64 rng(seed);
    auto& p = net.params_;

    const std::size_t stem = config.scaled(config.stem_channels);
    net.stem_ = detail::ConvBnUnit<T>::create(
        p, "stem", ConvDescriptor::standard(3, 2, 1, 3, stem), true, rng);

    std::size_t in = stem;
    for (std::size_t g = 0; g < config.bottlenecks.size(); ++g) {
      const auto& row = config.bottlenecks[g];
      const std::size_t out = config.scaled(row.out_channels);
      for (std::size_t r = 0; r < row.repeats; ++r) {
        const std::size_t stride = r == 0 ? row.stride : 1;
        const std::size_t hidden = in * row.expansion;
        const std::string prefix =
            "block" + std::to_string(g) + "_" + std::to_string(r);
        detail::BottleneckBlock<T> block;
        if (row.expansion != 1) {
          block.expand = detail::ConvBnUnit<T>::create(
              p, prefix + ".expand", ConvDescriptor::pointwise(in, hidden),
              true, rng);
        }
        block.depthwise = detail::ConvBnUnit<T>::create(
            p, prefix + ".depthwise",
            ConvDescriptor::depthwise(3, stride, 1, hidden), true, rng);
        block.project = detail::ConvBnUnit<T>::create(
            p, prefix + ".project", ConvDescriptor::pointwise(hidden, out),
            false, rng);
        block.residual = stride == 1 && in == out;
        net.blocks_.push_back(std::move(block));
        net.block_group_.push_back(g);
        in = out;
      }
    }
    const std::size_t last = config.scaled(config.last_channels);
    net.last_ = detail::ConvBnUnit<T>::create(
        p, "last", ConvDescriptor::pointwise(in, last), true, rng);
    net.class_head_ = detail::HeadUnit<T>::create(
        p, "class_head", last, config.class_head_width, config.num_classes,
        rng);
    net.endpoint_head_ = detail::HeadUnit<T>::create(
        p, "endpoint_head", last, config.endpoint_head_width,
        config.num_endpoints, rng);
    return net;
  }

  const NetworkConfig& config() const { return config_; }
  Parameters<T>& parameters() { return params_; }
  const Parameters<T>& parameters() const { return params_; }
  std::size_t block_count() const { return blocks_.size(); }
  std::size_t group_count() const { return config_.bottlenecks.size(); }
  std::size_t pooled_width() const { return last_.desc.out_channels; }

  /// Inference-mode forward pass using running batch-norm statistics.
  /// Safe to call concurrently on a shared network.
  Output infer(const Tensor<T>& batch, ActivationTrace* trace = nullptr) const {
    check_input(batch);
    if (trace) trace->record("input", batch.shape());
    Tensor<T> h = stem_.infer(params_, batch);
    if (trace) trace->record("maxpool", h.shape());
    h = maxpool2d(h, 2, 2);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (trace) trace->record(block_name(i), h.shape());
      h = blocks_[i].infer(params_, h);
    }
    if (trace) trace->record("last", h.shape());
    h = last_.infer(params_, h);
    if (trace) trace->record("avgpool", h.shape());
    const Tensor<T> pooled = global_avgpool(h);
    return {class_head_.infer(params_, pooled, trace, "class_head"),
            endpoint_head_.infer(params_, pooled, trace, "endpoint_head")};
  }

  /// Training-mode forward pass: batch statistics, caches for backward,
  /// running statistics updated.
  Output train_forward(const Tensor<T>& batch) {
    check_input(batch);
    pooled_shape_.reset();
    Tensor<T> h = stem_.train(params_, batch);
    maxpool_input_ = h;
    h = maxpool2d(h, 2, 2);
    for (auto& block : blocks_) h = block.train(params_, h);
    h = last_.train(params_, h);
    pooled_shape_ = h.shape();
    const Tensor<T> pooled = global_avgpool(h);
    return {class_head_.train(params_, pooled),
            endpoint_head_.train(params_, pooled)};
  }

  Output forward(const Tensor<T>& batch, Mode mode) {
    return mode == Mode::training ? train_forward(batch) : infer(batch);
  }

  /// Accumulates parameter gradients into each tensor's gradient buffer.
  /// Returns the gradient with respect to the input batch when requested,
  /// otherwise an empty tensor.
  Tensor<T> backward(const Tensor<T>& grad_logits,
                     const Tensor<T>& grad_endpoints,
                     bool need_input_grad = false) {
    if (!pooled_shape_) {
      throw std::logic_error("backward called without a training forward pass");
    }
    Tensor<T> g = add(class_head_.backward(params_, grad_logits),
                      endpoint_head_.backward(params_, grad_endpoints));
    g = last_.backward(params_, global_avgpool_backward(*pooled_shape_, g),
                       true);
    for (std::size_t i = blocks_.size(); i-- > 0;)
      g = blocks_[i].backward(params_, g);
    g = maxpool2d_backward(maxpool_input_, 2, 2, g);
    pooled_shape_.reset();
    return stem_.backward(params_, std::move(g), need_input_grad);
  }

  /// Analytic multiply-accumulate cost per layer for an h x w input.
  std::vector<LayerCost> layer_costs(std::size_t h, std::size_t w) const {
    std::vector<LayerCost> costs;
    auto down = [](std::size_t x, std::size_t s) { return (x + s - 1) / s; };
    h = down(h, 2), w = down(w, 2);
    costs.push_back({"stem", conv_cost(h, w, 3, 3, stem_.desc.out_channels)
                                 .standard});
    h /= 2, w /= 2;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& b = blocks_[i];
      const std::size_t hidden = b.depthwise.desc.in_channels;
      if (b.expand) {
        costs.push_back({block_name(i) + ".expand",
                         conv_cost(h, w, 1, b.expand->desc.in_channels, hidden)
                             .standard});
      }
      h = down(h, b.depthwise.desc.stride), w = down(w, b.depthwise.desc.stride);
      costs.push_back({block_name(i) + ".separable",
                       conv_cost(h, w, 3, hidden, b.project.desc.out_channels)
                           .separable});
    }
    costs.push_back({"last", conv_cost(h, w, 1, last_.desc.in_channels,
                                       last_.desc.out_channels)
                                 .standard});
    const std::size_t pooled = last_.desc.out_channels;
    costs.push_back({"class_head", pooled * config_.class_head_width +
                                       config_.class_head_width *
                                           config_.num_classes});
    costs.push_back({"endpoint_head", pooled * config_.endpoint_head_width +
                                          config_.endpoint_head_width *
                                              config_.num_endpoints});
    return costs;
  }

  /// Total multiply-accumulates of one forward pass at the configured size.
  std::uint64_t count_flops() const {
    return count_flops(config_.input_height, config_.input_width);
  }
  std::uint64_t count_flops(std::size_t h, std::size_t w) const {
    std::uint64_t total = 0;
    for (const auto& c : layer_costs(h, w)) total += c.macs;
    return total;
  }

  std::string block_name(std::size_t i) const {
    std::size_t g = block_group_[i], r = 0;
    for (std::size_t j = i; j > 0 && block_group_[j - 1] == g; --j) ++r;
    return "block" + std::to_string(g) + "_" + std::to_string(r);
  }

 private:
  void check_input(const Tensor<T>& batch) const {
    if (batch.rank() != 4 || batch.extent(1) != 3 ||
        batch.extent(2) % 64 != 0 || batch.extent(3) % 64 != 0) {
      throw std::invalid_argument(
          "network input must be (N, 3, H, W) with H and W multiples of 64, "
          "got " +
          shape_string(batch.shape()));
    }
  }

  NetworkConfig config_;
  Parameters<T> params_;
  detail::ConvBnUnit<T> stem_;
  std::vector<detail::BottleneckBlock<T>> blocks_;
  std::vector<std::size_t> block_group_;
  detail::ConvBnUnit<T> last_;
  detail::HeadUnit<T> class_head_;
  detail::HeadUnit<T> endpoint_head_;
  Tensor<T> maxpool_input_;
  std::optional<Shape> pooled_shape_;
};

/// Builds a network with freshly initialized, seed-determined parameters.
template <typename T = float>
Lytnet<T> build_lytnet(const NetworkConfig& config, std::uint64_t seed) {
  return Lytnet<T>::build(config, seed);
}

}  // namespace lytnet
