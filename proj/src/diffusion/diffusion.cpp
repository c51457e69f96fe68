// SPDX-License-Identifier: Apache-2.0

#include "m3d/diffusion.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace m3d {

NoiseSchedule NoiseSchedule::build(ScheduleKind kind, std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule: need at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw std::invalid_argument("schedule: require 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.kind_ = kind;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.betas_.resize(steps);
  s.alpha_bars_.resize(steps);
  const double denom = steps > 1 ? static_cast<double>(steps - 1) : 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = static_cast<double>(i) / denom;
    if (kind == ScheduleKind::ScaledLinear) {
      const double r = std::sqrt(beta_start) + frac * (std::sqrt(beta_end) - std::sqrt(beta_start));
      s.betas_[i] = r * r;
    } else {
      s.betas_[i] = beta_start + frac * (beta_end - beta_start);
    }
  }
  // Endpoints reproduce the configured bounds exactly rather than via sqrt/square.
  s.betas_.front() = beta_start;
  if (steps > 1) s.betas_.back() = beta_end;
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    prod *= 1.0 - s.betas_[i];
    s.alpha_bars_[i] = prod;
  }
  return s;
}

double NoiseSchedule::beta(std::size_t t) const {
  if (t < 1 || t > betas_.size()) throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside 1..T");
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
  if (t == 0) return 1.0;
  if (t > alpha_bars_.size()) throw std::out_of_range("schedule: timestep " + std::to_string(t) + " outside 0..T");
  return alpha_bars_[t - 1];
}

std::string NoiseSchedule::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "t,beta,alpha_bar\n";
  for (std::size_t t = 1; t <= steps(); ++t) os << t << ',' << beta(t) << ',' << alpha_bar(t) << '\n';
  return os.str();
}

namespace {

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
}

// out = ca * a + cb * b, computed in double.
template <typename T>
BasicTensor<T> affine2(const BasicTensor<T>& a, double ca, const BasicTensor<T>& b, double cb) {
  std::vector<T> out(a.numel());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(ca * av[i] + cb * bv[i]);
  return BasicTensor<T>(a.shape(), std::move(out));
}

}  // namespace

template <typename T>
BasicTensor<T> forward_sample(const BasicTensor<T>& x0, std::size_t t, const BasicTensor<T>& eps,
                              const NoiseSchedule& schedule) {
  require_same_shape("forward_sample", x0, eps);
  if (t < 1 || t > schedule.steps()) throw std::out_of_range("forward_sample: timestep outside 1..T");
  const double ab = schedule.alpha_bar(t);
  return affine2(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

template <typename T>
TrainingPair<T> training_target(const BasicTensor<T>& x0, std::size_t t, const BasicTensor<T>& eps,
                                const NoiseSchedule& schedule) {
  return TrainingPair<T>{forward_sample(x0, t, eps, schedule), eps};
}

template <typename T>
BasicTensor<T> ddim_step(const BasicTensor<T>& x_t, const BasicTensor<T>& eps_hat, std::size_t t, std::size_t t_next,
                         const NoiseSchedule& schedule) {
  require_same_shape("ddim_step", x_t, eps_hat);
  if (t_next >= t) {
    throw std::invalid_argument("ddim_step: t_next " + std::to_string(t_next) + " must be below t " +
                                std::to_string(t));
  }
  const double a = schedule.alpha_bar(t);
  const double an = schedule.alpha_bar(t_next);
  const double sa = std::sqrt(a), s1a = std::sqrt(1.0 - a);
  const double san = std::sqrt(an), s1an = std::sqrt(1.0 - an);
  std::vector<T> out(x_t.numel());
  auto xv = x_t.data();
  auto ev = eps_hat.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (static_cast<double>(xv[i]) - s1a * ev[i]) / sa;
    out[i] = static_cast<T>(san * x0 + s1an * ev[i]);
  }
  return BasicTensor<T>(x_t.shape(), std::move(out));
}

template <typename T>
BasicTensor<T> plms_step(const BasicTensor<T>& x_t, const BasicTensor<T>& eps_hat, std::size_t t, std::size_t t_next,
                         const NoiseSchedule& schedule, std::span<const BasicTensor<T>> history) {
  if (history.size() < 3) {
    throw std::logic_error("plms_step: multistep history not warmed up (" + std::to_string(history.size()) +
                           " of 3 earlier estimates)");
  }
  const auto& e1 = history[history.size() - 1];
  const auto& e2 = history[history.size() - 2];
  const auto& e3 = history[history.size() - 3];
  for (const auto* h : {&e1, &e2, &e3}) require_same_shape("plms_step", eps_hat, *h);
  std::vector<T> combined(eps_hat.numel());
  for (std::size_t i = 0; i < combined.size(); ++i) {
    combined[i] = static_cast<T>((55.0 * eps_hat.data()[i] - 59.0 * e1.data()[i] + 37.0 * e2.data()[i] -
                                  9.0 * e3.data()[i]) /
                                 24.0);
  }
  return ddim_step(x_t, BasicTensor<T>(eps_hat.shape(), std::move(combined)), t, t_next, schedule);
}

std::vector<std::size_t> inference_timesteps(std::size_t train_steps, std::size_t n) {
  if (n < 1 || n > train_steps) {
    throw std::invalid_argument("inference_timesteps: need 1 <= n <= T, got n=" + std::to_string(n));
  }
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = train_steps - (i * train_steps) / n;
  return out;
}

ReverseChain::ReverseChain(const NoiseSchedule& schedule, SamplerConfig config, Tensor z_T)
    : schedule_(&schedule),
      config_(config),
      timesteps_(inference_timesteps(schedule.steps(), config.num_inference_steps)),
      x_(std::move(z_T)) {
  if (config_.kind == SamplerKind::Plms && timesteps_.size() < 4) {
    throw std::invalid_argument("ReverseChain: multistep sampler needs at least 4 inference steps");
  }
  prepare_next();
}

void ReverseChain::prepare_next() {
  if (done()) return;
  eval_x_ = x_;
  eval_t_ = timesteps_[interval_];
  rk_stage_ = 0;
}

void ReverseChain::advance(const Tensor& eps_hat) {
  if (done()) throw std::logic_error("ReverseChain: advance after completion");
  ++evaluations_;
  const std::size_t t = timesteps_[interval_];
  const std::size_t tn = next_t();

  if (config_.kind == SamplerKind::Ddim) {
    x_ = ddim_step(x_, eps_hat, t, tn, *schedule_);
    ++interval_;
    prepare_next();
    return;
  }

  if (history_.size() >= 3) {
    x_ = plms_step<float>(x_, eps_hat, t, tn, *schedule_, history_);
    history_.push_back(eps_hat);
    if (history_.size() > 3) history_.erase(history_.begin());
    ++interval_;
    prepare_next();
    return;
  }

  // Runge-Kutta warmup over [t, tn] with a midpoint evaluation pair.
  const std::size_t mid = (t + tn) / 2;
  auto accumulate = [&](double w) {
    std::vector<float> acc(eps_hat.numel());
    for (std::size_t i = 0; i < acc.size(); ++i) {
      acc[i] = static_cast<float>((rk_sum_.defined() ? static_cast<double>(rk_sum_.data()[i]) : 0.0) +
                                  w * eps_hat.data()[i]);
    }
    rk_sum_ = Tensor(eps_hat.shape(), std::move(acc));
  };
  switch (rk_stage_) {
    case 0:
      rk_sum_ = Tensor();
      rk_first_ = eps_hat;
      accumulate(1.0 / 6.0);
      eval_x_ = ddim_step(x_, eps_hat, t, mid, *schedule_);
      eval_t_ = mid;
      rk_stage_ = 1;
      return;
    case 1:
      accumulate(1.0 / 3.0);
      eval_x_ = ddim_step(x_, eps_hat, t, mid, *schedule_);
      eval_t_ = mid;
      rk_stage_ = 2;
      return;
    case 2:
      accumulate(1.0 / 3.0);
      eval_x_ = ddim_step(x_, eps_hat, t, tn, *schedule_);
      eval_t_ = tn;
      rk_stage_ = 3;
      return;
    default:
      accumulate(1.0 / 6.0);
      x_ = ddim_step(x_, rk_sum_, t, tn, *schedule_);
      history_.push_back(rk_first_);
      ++interval_;
      prepare_next();
      return;
  }
}

const Tensor& ReverseChain::result() const {
  if (!done()) throw std::logic_error("ReverseChain: result requested before completion");
  return x_;
}

#define M3D_INSTANTIATE_DIFFUSION(T)                                                                            \
  template BasicTensor<T> forward_sample(const BasicTensor<T>&, std::size_t, const BasicTensor<T>&,             \
                                         const NoiseSchedule&);                                                 \
  template TrainingPair<T> training_target(const BasicTensor<T>&, std::size_t, const BasicTensor<T>&,           \
                                           const NoiseSchedule&);                                               \
  template BasicTensor<T> ddim_step(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t, std::size_t,     \
                                    const NoiseSchedule&);                                                      \
  template BasicTensor<T> plms_step(const BasicTensor<T>&, const BasicTensor<T>&, std::size_t, std::size_t,     \
                                    const NoiseSchedule&, std::span<const BasicTensor<T>>);

M3D_INSTANTIATE_DIFFUSION(float)
M3D_INSTANTIATE_DIFFUSION(double)

}  // namespace m3d
