// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m3d/param_store.hpp"

namespace m3d {

struct AdamConfig {
  double lr = 1e-4;
  std::size_t warmup_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Linear warmup from 0 at step 0 to cfg.lr at step cfg.warmup_steps.
double scheduled_lr(const AdamConfig& cfg, std::size_t step);

template <typename T>
class BasicAdam {
 public:
  explicit BasicAdam(AdamConfig cfg) : cfg_(cfg) {}

  // Applies one update using the populated gradients. `step` must strictly
  // increase across calls.
  void step(BasicParamStore<T>& params, std::size_t step);

  const AdamConfig& config() const { return cfg_; }
  std::optional<std::size_t> last_step() const { return last_step_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> state_;
  std::optional<std::size_t> last_step_;
  std::size_t updates_ = 0;
};

using Adam = BasicAdam<float>;
using Adam64 = BasicAdam<double>;

}  // namespace m3d
