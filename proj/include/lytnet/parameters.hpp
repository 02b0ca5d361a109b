#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lytnet/tensor.hpp"

namespace lytnet {

enum class ParamKind {
  conv_weight,
  linear_weight,
  linear_bias,
  bn_scale,
  bn_shift,
  bn_running_mean,
  bn_running_var,
};

template <typename T>
struct Parameter {
  std::string name;
  ParamKind kind;
  Tensor<T> value;

  /// Updated by the optimizer.
  bool trainable() const {
    return kind != ParamKind::bn_running_mean &&
           kind != ParamKind::bn_running_var;
  }
  /// Contributes to the L2 penalty.
  bool regularized() const {
    return kind == ParamKind::conv_weight || kind == ParamKind::linear_weight;
  }
};

/// Ordered, uniquely named set of network tensors. Insertion order is the
/// serialization order.
template <typename T>
class Parameters {
 public:
  std::size_t add(std::string name, ParamKind kind, Tensor<T> value) {
    if (index_.contains(name)) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), kind, std::move(value)});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }
  Parameter<T>& operator[](std::size_t i) { return entries_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return entries_[i]; }
  Tensor<T>& tensor(std::size_t i) { return entries_[i].value; }
  const Tensor<T>& tensor(std::size_t i) const { return entries_[i].value; }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grads() {
    for (auto& p : entries_) p.value.zero_grad();
  }

  std::size_t trainable_count() const {
    std::size_t total = 0;
    for (const auto& p : entries_)
      if (p.trainable()) total += p.value.size();
    return total;
  }

  friend bool operator==(const Parameters& a, const Parameters& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.kind != y.kind || !(x.value == y.value))
        return false;
    }
    return true;
  }

 private:
  std::vector<Parameter<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], the usual default for
/// convolution and linear layers.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace lytnet
