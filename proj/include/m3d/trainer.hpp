// SPDX-License-Identifier: Apache-2.0
//
// Denoiser training on a video corpus.
//
// Each sample draws a video, a stride uniform on [1, min(30, (T-1)/(F-1))],
// a clip start, a mask strategy and guide case, a timestep uniform on 1..T
// and Gaussian noise; the loss is the mean squared noise-prediction error
// over the whole clip, averaged over the batch.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "m3d/adam.hpp"
#include "m3d/corpus.hpp"
#include "m3d/denoiser.hpp"
#include "m3d/diffusion.hpp"
#include "m3d/guidance.hpp"

namespace m3d {

inline constexpr std::size_t kMaxStride = 30;

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  AdamConfig adam;
  double p2 = 0.1;  // prompt dropout when the context is present
  std::uint64_t seed = 0;

  void validate() const;
};

// One drawn training example, exposed for tests.
struct TrainingSample {
  std::size_t video = 0, start = 0, stride = 1, timestep = 1;
  MaskSpec mask;
  GuideDraw guides;
  bool prompt_dropped = false;
  ClipConditioning cond;  // noisy channel holds x_t
  Tensor noise;           // target
};

TrainingSample draw_training_sample(const std::vector<Video>& corpus, const DenoiserConfig& config,
                                    const NoiseSchedule& schedule, double p2, Rng& rng);

// Called after every step with (step, loss).
using StepCallback = std::function<void(std::size_t, double)>;

// Returns the per-step batch-mean losses.
std::vector<double> train(Denoiser& model, const std::vector<Video>& corpus, const NoiseSchedule& schedule,
                          const TrainConfig& config, const StepCallback& on_step = {});

std::string loss_csv(const std::vector<double>& losses);

}  // namespace m3d
