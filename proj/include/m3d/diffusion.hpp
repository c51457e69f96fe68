// SPDX-License-Identifier: Apache-2.0
//
// Noise schedule, forward corruption, the epsilon-prediction target, and the
// reverse samplers. Timesteps are 1-based (1..T); alpha_bar(0) is defined as 1
// so a step "to t = 0" lands on the clean-sample estimate.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "m3d/tensor.hpp"

namespace m3d {

enum class ScheduleKind { ScaledLinear, Linear };

inline constexpr std::size_t kDefaultTrainSteps = 1000;
inline constexpr double kDefaultBetaStart = 0.00085;
inline constexpr double kDefaultBetaEnd = 0.012;

class NoiseSchedule {
 public:
  // Scaled-linear: beta_t = (sqrt(b0) + (t-1)/(T-1) * (sqrt(b1) - sqrt(b0)))^2.
  static NoiseSchedule build(ScheduleKind kind = ScheduleKind::ScaledLinear, std::size_t steps = kDefaultTrainSteps,
                             double beta_start = kDefaultBetaStart, double beta_end = kDefaultBetaEnd);

  std::size_t steps() const { return betas_.size(); }
  ScheduleKind kind() const { return kind_; }
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }
  double beta(std::size_t t) const;       // t in 1..T
  double alpha_bar(std::size_t t) const;  // t in 0..T

  // "t,beta,alpha_bar" rows for t = 1..T.
  std::string to_csv() const;

 private:
  ScheduleKind kind_ = ScheduleKind::ScaledLinear;
  double beta_start_ = 0, beta_end_ = 0;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // index t-1
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename T>
BasicTensor<T> forward_sample(const BasicTensor<T>& x0, std::size_t t, const BasicTensor<T>& eps,
                              const NoiseSchedule& schedule);

template <typename T>
struct TrainingPair {
  BasicTensor<T> model_input;  // x_t
  BasicTensor<T> target;       // eps
};

template <typename T>
TrainingPair<T> training_target(const BasicTensor<T>& x0, std::size_t t, const BasicTensor<T>& eps,
                                const NoiseSchedule& schedule);

// Deterministic DDIM (eta = 0) transfer from t to t_next < t.
template <typename T>
BasicTensor<T> ddim_step(const BasicTensor<T>& x_t, const BasicTensor<T>& eps_hat, std::size_t t, std::size_t t_next,
                         const NoiseSchedule& schedule);

// Fourth-order linear multistep: combines eps_hat with the three most recent
// earlier estimates in `history` (oldest first), then applies the DDIM
// transfer. Throws if fewer than three earlier estimates exist.
template <typename T>
BasicTensor<T> plms_step(const BasicTensor<T>& x_t, const BasicTensor<T>& eps_hat, std::size_t t, std::size_t t_next,
                         const NoiseSchedule& schedule, std::span<const BasicTensor<T>> history);

enum class SamplerKind { Ddim, Plms };

struct SamplerConfig {
  std::size_t num_inference_steps = 50;
  SamplerKind kind = SamplerKind::Ddim;
};

// n evenly spaced, strictly decreasing steps: T - floor(i*T/n), i = 0..n-1.
std::vector<std::size_t> inference_timesteps(std::size_t train_steps, std::size_t n);

// Iterates a reverse chain from z_T. The caller evaluates the model at
// (sample(), timestep()) and feeds the estimate to advance() until done().
// The multistep sampler warms up with three Runge-Kutta intervals (four
// model evaluations each) before switching to the linear multistep rule.
class ReverseChain {
 public:
  ReverseChain(const NoiseSchedule& schedule, SamplerConfig config, Tensor z_T);

  bool done() const { return interval_ >= timesteps_.size(); }
  std::size_t timestep() const { return eval_t_; }
  const Tensor& sample() const { return eval_x_; }
  void advance(const Tensor& eps_hat);

  // Final sample once done().
  const Tensor& result() const;
  std::size_t evaluations() const { return evaluations_; }
  const std::vector<std::size_t>& timesteps() const { return timesteps_; }

 private:
  std::size_t next_t() const { return interval_ + 1 < timesteps_.size() ? timesteps_[interval_ + 1] : 0; }
  void prepare_next();

  const NoiseSchedule* schedule_;
  SamplerConfig config_;
  std::vector<std::size_t> timesteps_;
  std::size_t interval_ = 0;
  int rk_stage_ = 0;
  Tensor x_;       // sample at the start of the current interval
  Tensor eval_x_;  // point at which the model is evaluated next
  std::size_t eval_t_ = 0;
  Tensor rk_sum_;
  Tensor rk_first_;
  std::vector<Tensor> history_;
  std::size_t evaluations_ = 0;
};

}  // namespace m3d
