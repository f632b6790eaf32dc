#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "topkast/graph.hpp"
#include "topkast/rng.hpp"

namespace topkast {

/// One dense "master" parameter tensor.
template <typename Scalar>
struct ParamLayer {
  std::string name;
  Tensor<Scalar> value;
  bool is_weight = true;
  Scalar init_std = 0;  // std of the zero-mean normal the weights were drawn from
};

/// Persistent dense parameters, one layer per graph slot.
template <typename Scalar>
class DenseParamStore {
 public:
  DenseParamStore() = default;

  /// Zero-filled tensors matching every slot of `graph`.
  explicit DenseParamStore(const ComputeGraph<Scalar>& graph) {
    for (const ParamSlot& s : graph.slots()) layers_.push_back({s.name, Tensor<Scalar>(s.shape), s.is_weight, 0});
  }

  explicit DenseParamStore(std::vector<ParamLayer<Scalar>> layers) : layers_(std::move(layers)) {}

  /// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
  void init_he(std::uint64_t seed) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      ParamLayer<Scalar>& layer = layers_[l];
      if (!layer.is_weight) {
        layer.value.values().setZero();
        continue;
      }
      layer.init_std = static_cast<Scalar>(std::sqrt(2.0 / static_cast<double>(layer.value.dim(1))));
      std::mt19937_64 rng = derive_rng(seed, Stream::Init, 0, l);
      std::normal_distribution<double> normal(0.0, static_cast<double>(layer.init_std));
      for (Scalar& w : layer.value.flat()) w = static_cast<Scalar>(normal(rng));
    }
  }

  std::size_t size() const { return layers_.size(); }
  ParamLayer<Scalar>& operator[](std::size_t i) { return layers_[i]; }
  const ParamLayer<Scalar>& operator[](std::size_t i) const { return layers_[i]; }
  auto begin() { return layers_.begin(); }
  auto end() { return layers_.end(); }
  auto begin() const { return layers_.begin(); }
  auto end() const { return layers_.end(); }

  std::vector<Tensor<Scalar>> tensors() const {
    std::vector<Tensor<Scalar>> out;
    out.reserve(layers_.size());
    for (const auto& l : layers_) out.push_back(l.value);
    return out;
  }

  friend bool operator==(const DenseParamStore& a, const DenseParamStore& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
      const auto& x = a.layers_[i];
      const auto& y = b.layers_[i];
      if (x.name != y.name || x.is_weight != y.is_weight || !(x.value == y.value) || x.init_std != y.init_std) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<ParamLayer<Scalar>> layers_;
};

}  // namespace topkast
