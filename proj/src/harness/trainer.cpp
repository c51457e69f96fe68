// SPDX-License-Identifier: Apache-2.0

#include "m3d/trainer.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "m3d/ops.hpp"
#include "m3d/planner.hpp"

namespace m3d {

void TrainConfig::validate() const {
  if (steps == 0 || batch == 0) throw std::invalid_argument("train: steps and batch must be positive");
  if (!(adam.lr > 0)) throw std::invalid_argument("train: learning rate must be positive");
  if (!(p2 >= 0 && p2 <= 1)) throw std::invalid_argument("train: p2 must lie in [0, 1]");
}

namespace {

Tensor clip_frames(const Tensor& video, std::size_t start, std::size_t stride, std::size_t count) {
  const auto plane = video.dim(1) * video.dim(2) * video.dim(3);
  std::vector<float> out(count * plane);
  for (std::size_t k = 0; k < count; ++k) {
    const auto src = video.data().begin() + static_cast<std::ptrdiff_t>((start + k * stride) * plane);
    std::copy(src, src + static_cast<std::ptrdiff_t>(plane), out.begin() + static_cast<std::ptrdiff_t>(k * plane));
  }
  return Tensor(Shape{count, video.dim(1), video.dim(2), video.dim(3)}, std::move(out));
}

Tensor pick_frames(const Tensor& video, const std::vector<std::size_t>& idx) {
  const auto plane = video.dim(1) * video.dim(2) * video.dim(3);
  std::vector<float> out(idx.size() * plane);
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(video.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * plane), plane,
                out.begin() + static_cast<std::ptrdiff_t>(k * plane));
  return Tensor(Shape{idx.size(), video.dim(1), video.dim(2), video.dim(3)}, std::move(out));
}

}  // namespace

TrainingSample draw_training_sample(const std::vector<Video>& corpus, const DenoiserConfig& config,
                                    const NoiseSchedule& schedule, double p2, Rng& rng) {
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  const auto f = config.frames;
  TrainingSample s;
  s.video = uniform_index(rng, corpus.size());
  const auto& v = corpus[s.video];
  if (v.frames < f) {
    throw std::invalid_argument("train: video " + std::to_string(s.video) + " has " + std::to_string(v.frames) +
                                " frames, fewer than the clip length " + std::to_string(f));
  }
  if (v.channels != config.channels || v.height != config.size || v.width != config.size) {
    throw std::invalid_argument("train: video " + std::to_string(s.video) + " does not match the model frame size");
  }
  const auto max_stride = std::min(kMaxStride, (v.frames - 1) / (f - 1));
  s.stride = 1 + uniform_index(rng, max_stride);
  s.start = uniform_index(rng, v.frames - (f - 1) * s.stride);
  s.mask = sample_mask_strategy(rng, v.height, v.width);
  s.guides = sample_guide_case(rng, f);
  if (s.mask.strategy() == MaskStrategy::All) {
    // The null context: no guides, and the prompt is null with it.
    std::fill(s.guides.roles.begin(), s.guides.roles.end(), FrameRole::ContextOnly);
    s.prompt_dropped = true;
  } else {
    s.prompt_dropped = uniform01(rng) < p2;
  }
  s.timestep = 1 + uniform_index(rng, schedule.steps());

  const auto video = to_model_space(v.to_tensor());
  const auto x0 = clip_frames(video, s.start, s.stride, f);
  s.noise = randn<float>(x0.shape(), rng);
  const auto xt = forward_sample(x0, s.timestep, s.noise, schedule);
  const auto global = pick_frames(video, global_frame_indices(v.frames, config.global_frames));
  s.cond = assemble_conditioning(xt, x0, s.guides.roles, s.mask, global, static_cast<int>(s.stride));
  if (s.prompt_dropped) s.cond.global_prompt = null_prompt(s.cond.global_prompt);
  return s;
}

std::vector<double> train(Denoiser& model, const std::vector<Video>& corpus, const NoiseSchedule& schedule,
                          const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  Adam adam(config.adam);
  std::vector<double> losses;
  losses.reserve(config.steps);
  const float inv_batch = 1.0f / static_cast<float>(config.batch);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Rng rng = make_rng(config.seed, step);
    model.params().zero_grad();
    double total = 0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      auto sample = draw_training_sample(corpus, model.config(), schedule, config.p2, rng);
      Tape tape;
      TapeScope<float> scope(tape);
      const auto tokens = model.encode_prompt(sample.cond.global_prompt);
      const auto pred = predict_noise(model, sample.cond, sample.timestep, tokens);
      const auto loss = mse_loss(pred, sample.noise);
      total += loss.item();
      tape.backward(scale(loss, inv_batch));
    }
    adam.step(model.params(), step + 1);
    losses.push_back(total / static_cast<double>(config.batch));
    if (on_step) on_step(step, losses.back());
  }
  return losses;
}

std::string loss_csv(const std::vector<double>& losses) {
  std::ostringstream os;
  os << "step,loss\n" << std::setprecision(9);
  for (std::size_t i = 0; i < losses.size(); ++i) os << i << ',' << losses[i] << '\n';
  return os.str();
}

}  // namespace m3d
