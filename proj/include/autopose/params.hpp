#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "rng.hpp"
#include "tensor.hpp"

namespace autopose {

// A trainable tensor plus its gradient and Adam moments.
template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m, v;

  void reset_shape(const std::vector<int>& shape) {
    value = Tensor<T>(shape);
    grad = Tensor<T>(shape);
    m = Tensor<T>(shape);
    v = Tensor<T>(shape);
  }
};

// Named parameter registry. std::map keeps references stable and gives a
// deterministic iteration order for optimizer steps and serialization.
template <typename T>
class ParamStore {
 public:
  Param<T>& create(const std::string& name, const std::vector<int>& shape) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw std::runtime_error("param already exists: " + name);
    it->second.reset_shape(shape);
    return it->second;
  }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::runtime_error("no such param: " + name);
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::runtime_error("no such param: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grads() {
    for (auto& [k, p] : params_) p.grad.zero();
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& [k, p] : params_) n += p.value.numel();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Param<T>> params_;
};

template <typename T>
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;

  void step(ParamStore<T>& store) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, p] : store) {
      for (std::int64_t i = 0; i < p.value.numel(); ++i) {
        const double g = static_cast<double>(p.grad.data[i]);
        const double m = beta1 * p.m.data[i] + (1.0 - beta1) * g;
        const double v = beta2 * p.v.data[i] + (1.0 - beta2) * g * g;
        p.m.data[i] = static_cast<T>(m);
        p.v.data[i] = static_cast<T>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p.value.data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

// --- initializers ---

template <typename T>
void init_he_normal(Param<T>& p, int fan_in, Rng& rng) {
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : p.value.data) v = static_cast<T>(rng.normal(0.0, s));
}

template <typename T>
void init_uniform(Param<T>& p, double r, Rng& rng) {
  for (auto& v : p.value.data) v = static_cast<T>(rng.uniform(-r, r));
}

template <typename T>
void init_const(Param<T>& p, double c) {
  for (auto& v : p.value.data) v = static_cast<T>(c);
}

}  // namespace autopose
