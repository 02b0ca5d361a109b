#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "lytnet/dataset.hpp"
#include "lytnet/network.hpp"
#include "lytnet/ops.hpp"
#include "lytnet/weights_io.hpp"

namespace lytnet {

// ---- composite loss ---------------------------------------------------------

/// omega * MSE + (1 - omega) * CE + lambda * R.
inline double combine_loss(double mse, double ce, double reg, double omega,
                           double lambda) {
  return omega * mse + (1.0 - omega) * ce + lambda * reg;
}

struct LossTarget {
  LightClass label = LightClass::none;
  Endpoints endpoints;
  bool has_crossing = true;
};

struct LossTerms {
  double total = 0;
  double mse = 0;  // batch mean of per-frame MSE over 4 coordinates
  double ce = 0;   // batch mean of -log p(true class)
  double reg = 0;  // sum of squared conv and linear weights
};

template <typename T>
struct LossResult {
  LossTerms terms;
  Tensor<T> grad_logits;
  Tensor<T> grad_endpoints;
};

/// Sum of squared convolution and linear weights.
template <typename T>
double l2_penalty(const Parameters<T>& params) {
  double total = 0;
  for (const auto& p : params) {
    if (!p.regularized()) continue;
    for (T v : p.value.data()) total += static_cast<double>(v) * v;
  }
  return total;
}

/// Adds d(lambda * R)/dw = 2 lambda w to the weight gradient buffers.
template <typename T>
void add_l2_gradient(Parameters<T>& params, double lambda) {
  if (lambda == 0.0) return;
  for (auto& p : params) {
    if (!p.regularized()) continue;
    auto g = p.value.grad();
    const auto v = p.value.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += static_cast<T>(2.0 * lambda) * v[i];
  }
}

/// Batch-averaged composite loss with gradients for both network heads.
/// Frames without a crossing contribute no regression term. The L2 term is
/// evaluated from `params`; its gradient is applied via add_l2_gradient.
template <typename T>
LossResult<T> composite_loss(const Tensor<T>& logits,
                             const Tensor<T>& endpoints_pred,
                             std::span<const LossTarget> targets, double omega,
                             double lambda,
                             const std::type_identity_t<Parameters<T>>* params) {
  if (!(omega >= 0.0 && omega <= 1.0)) {
    throw std::invalid_argument("loss weight omega must lie in [0, 1]");
  }
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  require_rank(logits, 2, "loss logits");
  require_rank(endpoints_pred, 2, "loss endpoints");
  const std::size_t n = logits.extent(0), k = logits.extent(1);
  if (targets.size() != n || endpoints_pred.extent(0) != n ||
      endpoints_pred.extent(1) != kNumEndpointCoords || k != kNumClasses) {
    throw std::invalid_argument("loss: inconsistent batch shapes " +
                                shape_string(logits.shape()) + ", " +
                                shape_string(endpoints_pred.shape()));
  }
  LossResult<T> r{{}, Tensor<T>(logits.shape()),
                  Tensor<T>(endpoints_pred.shape())};
  const Tensor<T> probs = softmax(logits);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto cls = static_cast<std::size_t>(targets[b].label);
    // log-softmax computed directly for accuracy at confident predictions
    const T* row = logits.raw() + b * k;
    const double peak = *std::max_element(row, row + k);
    double sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += std::exp(double(row[i]) - peak);
    const double ce = -(double(row[cls]) - peak - std::log(sum));
    r.terms.ce += ce * inv_n;
    for (std::size_t i = 0; i < k; ++i) {
      const double onehot = i == cls ? 1.0 : 0.0;
      r.grad_logits[b * k + i] = static_cast<T>(
          (1.0 - omega) * inv_n * (double(probs[b * k + i]) - onehot));
    }
    if (!targets[b].has_crossing) continue;
    const auto truth = targets[b].endpoints.as_array();
    double mse = 0;
    for (std::size_t i = 0; i < kNumEndpointCoords; ++i) {
      const double d = double(endpoints_pred[b * 4 + i]) - truth[i];
      mse += d * d / 4.0;
      r.grad_endpoints[b * 4 + i] =
          static_cast<T>(omega * inv_n * 2.0 * d / 4.0);
    }
    r.terms.mse += mse * inv_n;
  }
  r.terms.reg = params ? l2_penalty(*params) : 0.0;
  r.terms.total =
      combine_loss(r.terms.mse, r.terms.ce, r.terms.reg, omega, lambda);
  return r;
}

// ---- learning-rate schedule -------------------------------------------------

/// Step decay: `initial` multiplied by `factor` at each milestone epoch.
struct LrSchedule {
  double initial = 1e-3;
  std::vector<std::size_t> milestones{150, 400, 650};
  double factor = 0.1;

  double at(std::size_t epoch) const {
    double lr = initial;
    for (auto m : milestones)
      if (epoch >= m) lr *= factor;
    return lr;
  }
};

inline double lr_schedule(std::size_t epoch) { return LrSchedule{}.at(epoch); }

// ---- Adam -------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First and second moment estimates for one tensor.
template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// One bias-corrected Adam update of `values` in place. `step` is the
/// 1-based index of this update.
template <typename T>
void adam_update(std::span<T> values, std::span<const T> grads,
                 AdamMoments<T>& moments, std::uint64_t step, double lr,
                 const AdamConfig& cfg = {}) {
  if (grads.size() != values.size()) {
    throw std::invalid_argument("adam: gradient size " +
                                std::to_string(grads.size()) +
                                " does not match parameter size " +
                                std::to_string(values.size()));
  }
  if (moments.m.empty()) {
    moments.m.assign(values.size(), T{0});
    moments.v.assign(values.size(), T{0});
  }
  if (moments.m.size() != values.size()) {
    throw std::invalid_argument("adam: moment state does not match parameter");
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
  const auto b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T g = grads[i];
    moments.m[i] = b1 * moments.m[i] + (T{1} - b1) * g;
    moments.v[i] = b2 * moments.v[i] + (T{1} - b2) * g * g;
    const double mhat = moments.m[i] / c1;
    const double vhat = moments.v[i] / c2;
    values[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
  }
}

/// Optimizer state over every trainable tensor of a Parameters set.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(Parameters<T>& params, double lr) {
    if (moments_.empty()) moments_.resize(params.size());
    if (moments_.size() != params.size()) {
      throw std::invalid_argument("adam: parameter set changed size");
    }
    ++step_;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!p.trainable()) continue;
      auto& t = p.value;
      const std::span<const T> g = t.grad();
      if (g.empty()) continue;
      adam_update<T>(t.data(), g, moments_[i], step_, lr, cfg_);
    }
  }

  std::uint64_t steps() const { return step_; }

 private:
  AdamConfig cfg_;
  std::vector<AdamMoments<T>> moments_;
  std::uint64_t step_ = 0;
};

// ---- training loop ------------------------------------------------------------

struct TrainConfig {
  NetworkConfig network;
  double omega = 0.5;
  double lambda = 1e-5;
  LrSchedule schedule;
  AdamConfig adam;
  std::size_t batch_size = 8;
  std::size_t epochs = 800;
  std::uint64_t seed = 0;
  std::size_t folds = 5;
  bool augment = true;
  bool flip = true;
  /// Evaluate the un-augmented training frames in inference mode every
  /// `evaluate_interval` epochs and after the last one; 0 disables.
  std::size_t evaluate_interval = 0;
  std::size_t checkpoint_interval = 0;  // epochs; 0 disables
  std::string checkpoint_path;

  void validate() const {
    network.validate();
    if (!(omega >= 0.0 && omega <= 1.0)) {
      throw std::invalid_argument("omega must lie in [0, 1]");
    }
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    if (folds < 2) throw std::invalid_argument("fold count must be at least 2");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;       // full composite loss including lambda * R
  double data_loss = 0;  // omega * MSE + (1 - omega) * CE
  double mse = 0;
  double ce = 0;
  double reg = 0;
  double accuracy = 0;  // training-mode predictions on augmented batches
  // inference mode on un-augmented frames; eval_loss adds lambda * R of the
  // weights at the end of the epoch
  std::optional<double> eval_loss;
  std::optional<double> eval_data_loss;
  std::optional<double> eval_accuracy;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j{{"epoch", m.epoch}, {"lr", m.lr},
                   {"loss", m.loss},   {"data_loss", m.data_loss},
                   {"mse", m.mse},     {"ce", m.ce},
                   {"reg", m.reg},     {"accuracy", m.accuracy}};
  if (m.eval_loss) j["eval_loss"] = *m.eval_loss;
  if (m.eval_data_loss) j["eval_data_loss"] = *m.eval_data_loss;
  if (m.eval_accuracy) j["eval_accuracy"] = *m.eval_accuracy;
  return j;
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& t, std::size_t row) {
  const std::size_t k = t.extent(1);
  const T* p = t.raw() + row * k;
  return static_cast<std::size_t>(std::max_element(p, p + k) - p);
}

/// Stacks frames already at network resolution into an (N, 3, H, W) batch.
inline Tensor<float> stack_images(std::span<const LabeledFrame> frames) {
  std::vector<Tensor<float>> parts;
  parts.reserve(frames.size());
  for (const auto& f : frames) {
    Shape s{1};
    s.insert(s.end(), f.image.shape().begin(), f.image.shape().end());
    parts.push_back(f.image.reshaped(std::move(s)));
  }
  return concat_batch<float>(parts);
}

/// Inference-mode data loss (no L2 term) and accuracy over frames resized
/// to the network input.
template <typename T>
std::pair<double, double> evaluate_frames(const Lytnet<T>& net,
                                          std::span<const LabeledFrame> frames,
                                          double omega,
                                          std::size_t batch_size) {
  const auto& cfg = net.config();
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < frames.size(); start += batch_size) {
    const std::size_t end = std::min(frames.size(), start + batch_size);
    std::vector<LabeledFrame> batch;
    std::vector<LossTarget> targets;
    for (std::size_t i = start; i < end; ++i) {
      const auto& f = frames[i];
      batch.push_back({resize_bilinear(f.image, cfg.input_height,
                                       cfg.input_width),
                       f.label, f.endpoints, f.has_crossing});
      targets.push_back({f.label, f.endpoints, f.has_crossing});
    }
    const auto out = net.infer(stack_images(batch).template cast<T>());
    const auto r = composite_loss(out.logits, out.endpoints,
                                  std::span<const LossTarget>(targets), omega,
                                  0.0, static_cast<const Parameters<T>*>(nullptr));
    loss += r.terms.total * double(end - start);
    for (std::size_t b = 0; b < end - start; ++b)
      if (argmax_row(out.logits, b) == static_cast<std::size_t>(targets[b].label))
        ++correct;
  }
  const double n = static_cast<double>(frames.size());
  return {loss / n, static_cast<double>(correct) / n};
}

struct TrainResult {
  Lytnet<float> network;
  std::vector<EpochMetrics> log;
};

/// Epoch loop: shuffle, augment, forward, composite loss, backward, Adam
/// with the step schedule. `on_epoch` sees each epoch's metrics as they are
/// produced.
inline TrainResult train(const std::vector<LabeledFrame>& frames,
                         const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&)>&
                             on_epoch = {}) {
  cfg.validate();
  if (frames.empty()) throw std::invalid_argument("train: no frames");
  const std::size_t in_h = cfg.network.input_height;
  const std::size_t in_w = cfg.network.input_width;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.image.rank() != 3 || f.image.extent(0) != 3) {
      throw ManifestError(i + 1, "image must have 3 channels");
    }
    if (!endpoints_valid(f.endpoints)) {
      throw ManifestError(i + 1, "invalid endpoint label");
    }
  }

  TrainResult result{build_lytnet<float>(cfg.network, cfg.seed), {}};
  auto& net = result.network;
  Adam<float> adam(cfg.adam);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.schedule.at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<LabeledFrame> batch;
      std::vector<LossTarget> targets;
      for (std::size_t i = start; i < end; ++i) {
        const auto& f = frames[order[i]];
        LabeledFrame a;
        if (cfg.augment) {
          a = augment(f, rng, in_h, in_w, cfg.flip);
        } else {
          a = {resize_bilinear(f.image, in_h, in_w), f.label, f.endpoints,
               f.has_crossing};
        }
        targets.push_back({a.label, a.endpoints, a.has_crossing});
        batch.push_back(std::move(a));
      }
      net.parameters().zero_grads();
      const auto out = net.train_forward(stack_images(batch));
      const auto loss =
          composite_loss(out.logits, out.endpoints,
                         std::span<const LossTarget>(targets), cfg.omega,
                         cfg.lambda, &net.parameters());
      net.backward(loss.grad_logits, loss.grad_endpoints);
      add_l2_gradient(net.parameters(), cfg.lambda);
      adam.step(net.parameters(), lr);

      const double share = double(end - start) / double(order.size());
      m.loss += loss.terms.total * share;
      m.mse += loss.terms.mse * share;
      m.ce += loss.terms.ce * share;
      m.reg += loss.terms.reg * share;
      for (std::size_t b = 0; b < end - start; ++b)
        if (argmax_row(out.logits, b) ==
            static_cast<std::size_t>(targets[b].label))
          ++correct;
    }
    m.accuracy = double(correct) / double(order.size());
    m.data_loss = combine_loss(m.mse, m.ce, 0.0, cfg.omega, 0.0);
    if (cfg.evaluate_interval && ((epoch + 1) % cfg.evaluate_interval == 0 ||
                                  epoch + 1 == cfg.epochs)) {
      auto [l, a] = evaluate_frames(net, std::span<const LabeledFrame>(frames),
                                    cfg.omega, cfg.batch_size);
      m.eval_data_loss = l;
      m.eval_loss = l + cfg.lambda * l2_penalty(net.parameters());
      m.eval_accuracy = a;
    }
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
    if (cfg.checkpoint_interval && !cfg.checkpoint_path.empty() &&
        (epoch + 1) % cfg.checkpoint_interval == 0) {
      save_weights(cfg.checkpoint_path, net.parameters());
    }
  }
  return result;
}

}  // namespace lytnet
