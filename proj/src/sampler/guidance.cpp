// SPDX-License-Identifier: Apache-2.0

#include "m3d/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "m3d/image_io.hpp"
#include "m3d/ops.hpp"

namespace m3d {

void GuidanceConfig::validate() const {
  if (!(s1 >= 0.0) || !(s2 >= 0.0) || !std::isfinite(s1) || !std::isfinite(s2)) {
    throw std::invalid_argument("guidance: scales must be finite and non-negative");
  }
  if (!(p2 >= 0.0 && p2 <= 1.0)) throw std::invalid_argument("guidance: p2 must lie in [0, 1]");
}

Tensor combine_guidance(const Tensor& eps_uncond, const Tensor& eps_context, const Tensor& eps_full,
                        const GuidanceConfig& cfg) {
  if (eps_uncond.shape() != eps_context.shape() || eps_context.shape() != eps_full.shape()) {
    throw std::invalid_argument("guided_epsilon: mismatched shapes " + shape_str(eps_uncond.shape()) + ", " +
                                shape_str(eps_context.shape()) + ", " + shape_str(eps_full.shape()));
  }
  cfg.validate();
  const double wu = 1.0 - cfg.s1, wc = cfg.s1 - cfg.s2, wf = cfg.s2;
  std::vector<float> out(eps_full.numel());
  auto u = eps_uncond.data(), c = eps_context.data(), f = eps_full.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(wu * u[i] + wc * c[i] + wf * f[i]);
  }
  return Tensor(eps_full.shape(), std::move(out));
}

Tensor guided_epsilon(const Denoiser& model, const ClipConditioning& cond, std::size_t t, const Tensor& prompt_tokens,
                      const Tensor& null_tokens, const GuidanceConfig& cfg) {
  const auto uncond = predict_noise(model, null_context(cond), t, null_tokens);
  const auto context = predict_noise(model, cond, t, null_tokens);
  const auto full = predict_noise(model, cond, t, prompt_tokens);
  return combine_guidance(uncond, context, full, cfg);
}

Tensor to_model_space(const Tensor& pixels) {
  std::vector<float> out(pixels.numel());
  auto p = pixels.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0f * p[i] - 1.0f;
  return Tensor(pixels.shape(), std::move(out));
}

Tensor to_pixel_space(const Tensor& model) {
  std::vector<float> out(model.numel());
  auto m = model.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5f * (m[i] + 1.0f);
  return Tensor(model.shape(), std::move(out));
}

std::string to_string(InitMode m) { return m == InitMode::PureNoise ? "pure" : "warm"; }

InitMode parse_init_mode(const std::string& name) {
  if (name == "pure") return InitMode::PureNoise;
  if (name == "warm") return InitMode::WarmStart;
  throw std::invalid_argument("unknown init mode '" + name + "' (expected pure|warm)");
}

namespace {

void check_frames(const char* op, const Tensor& frames, const MaskSpec& mask, std::span<const FrameRole> roles) {
  if (frames.rank() != 4 || frames.dim(2) != mask.height() || frames.dim(3) != mask.width() ||
      roles.size() != frames.dim(0)) {
    throw std::invalid_argument(std::string(op) + ": frames " + shape_str(frames.shape()) + " do not match a " +
                                std::to_string(mask.height()) + "x" + std::to_string(mask.width()) + " mask with " +
                                std::to_string(roles.size()) + " roles");
  }
}

}  // namespace

Tensor border_fill(const Tensor& frames, const MaskSpec& mask, std::span<const FrameRole> roles) {
  check_frames("border_fill", frames, mask, roles);
  const auto f = frames.dim(0), c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  const auto& r = mask.visible_rect();
  std::vector<float> out(frames.data().begin(), frames.data().end());
  for (std::size_t k = 0; k < f; ++k) {
    if (roles[k] == FrameRole::GuideRaw) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* plane = out.data() + (k * c + ch) * h * w;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          if (mask.visible(y, x)) continue;
          if (r.empty()) {
            plane[y * w + x] = 0.5f;
            continue;
          }
          const auto sy = std::clamp(y, r.y0, r.y1 - 1), sx = std::clamp(x, r.x0, r.x1 - 1);
          plane[y * w + x] = plane[sy * w + sx];
        }
    }
  }
  return Tensor(frames.shape(), std::move(out));
}

Tensor border_replication(const Tensor& frames, const MaskSpec& mask) {
  if (frames.rank() != 4) throw std::invalid_argument("border_replication: expected (T, C, H, W)");
  const std::vector<FrameRole> roles(frames.dim(0), FrameRole::ContextOnly);
  return border_fill(frames, mask, roles);
}

Tensor warm_start(const Tensor& frames, const MaskSpec& mask, std::span<const FrameRole> roles,
                  const NoiseSchedule& schedule, Rng& rng) {
  const auto filled = to_model_space(border_fill(frames, mask, roles));
  const auto eps = randn<float>(filled.shape(), rng);
  return forward_sample(filled, schedule.steps(), eps, schedule);
}

Tensor outpaint_clip(const Denoiser& model, const NoiseSchedule& schedule, const ClipRequest& request,
                     const OutpaintOptions& options) {
  options.guidance.validate();
  const auto& cfg = model.config();
  check_frames("outpaint_clip", request.frames, request.mask, request.roles);
  const auto f = request.frames.dim(0), c = request.frames.dim(1), h = request.frames.dim(2), w = request.frames.dim(3);
  if (c != cfg.channels || h != cfg.size || w != cfg.size) {
    throw std::invalid_argument("outpaint_clip: frames " + shape_str(request.frames.shape()) +
                                " do not match the model configuration");
  }
  if (schedule.steps() != cfg.train_steps) {
    throw std::invalid_argument("outpaint_clip: schedule has " + std::to_string(schedule.steps()) +
                                " steps but the model was configured for " + std::to_string(cfg.train_steps));
  }

  // Guide slots carry their full frame.
  const auto plane = c * h * w;
  std::vector<float> clip(request.frames.data().begin(), request.frames.data().end());
  for (std::size_t k = 0; k < f; ++k) {
    const auto it = request.guides.find(k);
    if (request.roles[k] == FrameRole::GuideRaw) {
      if (it == request.guides.end()) {
        throw std::invalid_argument("outpaint_clip: guide slot " + std::to_string(k) + " has no frame content");
      }
      if (it->second.shape() != Shape{c, h, w}) {
        throw std::invalid_argument("outpaint_clip: guide frame for slot " + std::to_string(k) + " has shape " +
                                    shape_str(it->second.shape()));
      }
      std::copy(it->second.data().begin(), it->second.data().end(), clip.begin() + static_cast<std::ptrdiff_t>(k * plane));
    } else if (it != request.guides.end()) {
      throw std::invalid_argument("outpaint_clip: slot " + std::to_string(k) + " has guide content but is not a guide");
    }
  }
  const Tensor clip_pixels(request.frames.shape(), clip);

  Rng rng = make_rng(options.seed, options.stream);
  const Tensor z_T = options.init == InitMode::WarmStart
                         ? warm_start(clip_pixels, request.mask, request.roles, schedule, rng)
                         : randn<float>(clip_pixels.shape(), rng);

  const auto cond = assemble_conditioning(z_T, to_model_space(clip_pixels), request.roles, request.mask,
                                          to_model_space(request.global_frames), request.fps);
  const auto prompt_tokens = model.encode_prompt(cond.global_prompt);
  const auto null_tokens = model.encode_prompt(null_prompt(cond.global_prompt));

  ReverseChain chain(schedule, options.sampler, z_T);
  while (!chain.done()) {
    chain.advance(
        guided_epsilon(model, cond.with_noisy(chain.sample()), chain.timestep(), prompt_tokens, null_tokens,
                       options.guidance));
  }
  const auto generated = to_pixel_space(chain.result());

  std::vector<float> out(clip.size());
  auto m = cond.mask.data();
  auto g = generated.data();
  for (std::size_t k = 0; k < f; ++k)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) {
        const auto idx = (k * c + ch) * h * w + p;
        out[idx] = m[k * h * w + p] > 0.0f ? clip[idx] : std::clamp(g[idx], 0.0f, 1.0f);
      }
  return Tensor(request.frames.shape(), std::move(out));
}

std::optional<double> hidden_region_mse(const Tensor& output, const Tensor& truth, const MaskSpec& mask,
                                        std::span<const FrameRole> roles) {
  if (output.shape() != truth.shape()) {
    throw std::invalid_argument("hidden_region_mse: shapes " + shape_str(output.shape()) + " and " +
                                shape_str(truth.shape()) + " differ");
  }
  check_frames("hidden_region_mse", output, mask, roles);
  const auto f = output.dim(0), c = output.dim(1), h = output.dim(2), w = output.dim(3);
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < f; ++k) {
    if (roles[k] == FrameRole::GuideRaw) continue;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          if (mask.visible(y, x)) continue;
          const auto idx = ((k * c + ch) * h + y) * w + x;
          const double d = static_cast<double>(output.data()[idx]) - truth.data()[idx];
          acc += d * d;
          ++n;
        }
  }
  if (n == 0) return std::nullopt;
  return acc / static_cast<double>(n);
}

void dump_clip_frames(const std::filesystem::path& dir, std::size_t clip_id, const Tensor& frames) {
  if (frames.rank() != 4) throw std::invalid_argument("dump_clip_frames: expected (F, C, H, W)");
  const auto f = frames.dim(0), c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < f; ++k) {
    Image img{h, w, c, std::vector<float>(h * w * c)};
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < h * w; ++p) img.pixels[p * c + ch] = frames.data()[(k * c + ch) * h * w + p];
    const auto name = "clip" + std::to_string(clip_id) + "_f" + std::to_string(k) + (c == 1 ? ".pgm" : ".ppm");
    write_pnm(dir / name, img);
  }
}

}  // namespace m3d
