// SPDX-License-Identifier: Apache-2.0

#include "m3d/param_store.hpp"

#include <cmath>
#include <stdexcept>

#include "m3d/adam.hpp"

namespace m3d {

template <typename T>
BasicTensor<T>& BasicParamStore<T>::add(const std::string& name, BasicTensor<T> value) {
  if (name.empty()) throw std::invalid_argument("param store: empty parameter name");
  if (!value.defined()) throw std::invalid_argument("param store: undefined tensor for '" + name + "'");
  value.set_requires_grad(true);
  auto [it, inserted] = entries_.emplace(name, std::move(value));
  if (!inserted) throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
  return it->second;
}

template <typename T>
const BasicTensor<T>& BasicParamStore<T>::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return it->second;
}

template <typename T>
BasicTensor<T>& BasicParamStore<T>::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return it->second;
}

template <typename T>
void BasicParamStore<T>::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

template <typename T>
std::size_t BasicParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

double scheduled_lr(const AdamConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

template <typename T>
void BasicAdam<T>::step(BasicParamStore<T>& params, std::size_t step) {
  if (last_step_ && step <= *last_step_) {
    throw std::invalid_argument("adam: step " + std::to_string(step) + " does not follow step " +
                                std::to_string(*last_step_));
  }
  last_step_ = step;
  ++updates_;
  const double lr = scheduled_lr(cfg_, step);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(updates_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(updates_));
  for (auto& [name, param] : params) {
    if (!param.has_grad()) continue;
    auto& mom = state_[name];
    if (mom.m.size() != param.numel()) {
      mom.m.assign(param.numel(), 0.0);
      mom.v.assign(param.numel(), 0.0);
    }
    auto values = param.mutable_data();
    auto grad = param.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      values[i] = static_cast<T>(values[i] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

template class BasicParamStore<float>;
template class BasicParamStore<double>;
template class BasicAdam<float>;
template class BasicAdam<double>;

}  // namespace m3d
