#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "pnr/error.hpp"

namespace pnr::nn {

template <class T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  std::size_t size() const { return value.size(); }
};

// Ordered, name-unique collection of parameters. Tensors are heap-allocated so
// references handed to layers stay valid as the store grows.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  ParamTensor<T>& add(std::string name, std::vector<int> shape) {
    if (find(name) != nullptr) throw UsageError("duplicate parameter name: " + name);
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw UsageError("parameter " + name + " has a non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    auto p = std::make_unique<ParamTensor<T>>();
    p->name = std::move(name);
    p->shape = std::move(shape);
    p->value.assign(n, T(0));
    p->grad.assign(n, T(0));
    params_.push_back(std::move(p));
    if (!shadows_.empty()) shadows_.emplace_back(params_.back()->value);
    return *params_.back();
  }

  ParamTensor<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const ParamTensor<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::size_t tensor_count() const { return params_.size(); }
  ParamTensor<T>& operator[](std::size_t i) { return *params_[i]; }
  const ParamTensor<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), T(0));
  }

  // EMA shadows start as a copy of the current values.
  void enable_ema() {
    shadows_.clear();
    for (const auto& p : params_) shadows_.push_back(p->value);
  }
  bool has_ema() const { return !shadows_.empty(); }
  std::vector<T>& shadow(std::size_t i) { return shadows_.at(i); }
  const std::vector<T>& shadow(std::size_t i) const { return shadows_.at(i); }

  // shadow <- d * shadow + (1 - d) * value
  void ema_update(double decay) {
    if (!has_ema()) throw UsageError("ema_update on a store without shadows");
    if (decay < 0.0 || decay > 1.0) throw UsageError("ema decay must lie in [0, 1]");
    const T d = static_cast<T>(decay);
    const T e = static_cast<T>(1.0 - decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& s = shadows_[i];
      const auto& v = params_[i]->value;
      for (std::size_t j = 0; j < s.size(); ++j) s[j] = d * s[j] + e * v[j];
    }
  }

  // Copy values (and shadows) between stores with identical layouts,
  // converting scalar type.
  template <class U>
  void copy_values_from(const ParamStore<U>& other) {
    if (other.tensor_count() != params_.size()) throw UsageError("parameter layouts differ");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = other[i];
      auto& dst = *params_[i];
      if (src.name != dst.name || src.shape != dst.shape)
        throw UsageError("parameter layouts differ at " + dst.name);
      dst.value.assign(src.value.begin(), src.value.end());
    }
    if (other.has_ema()) {
      shadows_.clear();
      for (std::size_t i = 0; i < params_.size(); ++i)
        shadows_.emplace_back(other.shadow(i).begin(), other.shadow(i).end());
    }
  }

  // Overwrite live values with the EMA shadows.
  void load_shadows_into_values() {
    if (!has_ema()) throw UsageError("store has no EMA shadows");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = shadows_[i];
  }

 private:
  std::vector<std::unique_ptr<ParamTensor<T>>> params_;
  std::vector<std::vector<T>> shadows_;
};

}  // namespace pnr::nn
