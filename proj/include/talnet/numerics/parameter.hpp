#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "talnet/numerics/random.hpp"
#include "talnet/numerics/tensor.hpp"

namespace talnet {

struct InitSpec {
  enum class Kind { uniform_fan_in, zeros, constant };
  Kind kind = Kind::zeros;
  std::size_t fan_in = 1;
  std::vector<double> values;  // constant: one value, or one per element
  double gain = 1;             // uniform bound is gain / sqrt(fan_in)

  static InitSpec uniform(std::size_t fan_in, double gain = 1) { return {Kind::uniform_fan_in, fan_in, {}, gain}; }
  /// Variance-preserving bound sqrt(6 / fan_in) for layers feeding a ReLU.
  static InitSpec relu_uniform(std::size_t fan_in) { return uniform(fan_in, 2.449489742783178); }
  /// Unit-variance bound sqrt(3 / fan_in) for linear and tanh layers.
  static InitSpec unit_uniform(std::size_t fan_in) { return uniform(fan_in, 1.7320508075688772); }
  static InitSpec zeros() { return {}; }
  static InitSpec constant(double c) { return {Kind::constant, 1, {c}, 1}; }
  static InitSpec constant(std::vector<double> per_element) { return {Kind::constant, 1, std::move(per_element), 1}; }
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  InitSpec init;
};

/// Ordered, uniquely named set of trainable tensors.
///
/// Each parameter draws its initial values from a stream derived from the
/// model seed and its own name, so adding or removing unrelated parameters
/// never shifts the initialization of the others.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, InitSpec init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor<T> t(std::move(shape), T(0), true);
    index_.emplace(name, params_.size());
    params_.push_back({name, t, std::move(init)});
    return t;
  }

  void initialize(std::uint64_t seed) {
    for (auto& p : params_) {
      auto values = p.tensor.data();
      switch (p.init.kind) {
        case InitSpec::Kind::zeros:
          std::fill(values.begin(), values.end(), T(0));
          break;
        case InitSpec::Kind::constant:
          if (p.init.values.size() == 1) {
            std::fill(values.begin(), values.end(), static_cast<T>(p.init.values[0]));
          } else if (p.init.values.size() == values.size()) {
            for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(p.init.values[i]);
          } else {
            throw std::invalid_argument("constant init of " + p.name + " has the wrong length");
          }
          break;
        case InitSpec::Kind::uniform_fan_in: {
          Rng rng = derive_rng(seed, p.name);
          const double bound = p.init.gain / std::sqrt(static_cast<double>(p.init.fan_in));
          for (auto& v : values) v = static_cast<T>(uniform(rng, -bound, bound));
          break;
        }
      }
    }
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].tensor;
  }
  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].tensor;
  }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Order-sensitive FNV-1a digest over names and raw bytes of every
  /// parameter whose name starts with `prefix`.
  std::uint64_t digest(std::string_view prefix = {}) const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params_) {
      if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
      h = fnv1a(p.name, h);
      const auto bytes = std::string_view(reinterpret_cast<const char*>(p.tensor.data().data()), p.tensor.size() * sizeof(T));
      h = fnv1a(bytes, h);
    }
    return h;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace talnet
