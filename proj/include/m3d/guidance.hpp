// SPDX-License-Identifier: Apache-2.0
//
// Two-condition classifier-free guidance and single-clip outpainting.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "m3d/denoiser.hpp"
#include "m3d/diffusion.hpp"
#include "m3d/mask.hpp"
#include "m3d/random.hpp"

namespace m3d {

struct GuidanceConfig {
  double s1 = 2.0;  // context scale
  double s2 = 4.0;  // global-prompt scale
  double p2 = 0.1;  // training-time prompt dropout

  void validate() const;
};

// eps(0,0) + s1 (eps(c1,0) - eps(0,0)) + s2 (eps(c1,c2) - eps(c1,0)), evaluated
// as (1 - s1) eps(0,0) + (s1 - s2) eps(c1,0) + s2 eps(c1,c2) in double so the
// s = 0 and s = 1 cases reproduce their operand exactly.
Tensor combine_guidance(const Tensor& eps_uncond, const Tensor& eps_context, const Tensor& eps_full,
                        const GuidanceConfig& cfg);

// Runs the three denoiser evaluations for `cond` (noisy channel already set).
Tensor guided_epsilon(const Denoiser& model, const ClipConditioning& cond, std::size_t t, const Tensor& prompt_tokens,
                      const Tensor& null_tokens, const GuidanceConfig& cfg);

// Pixels in [0, 1] <-> model space [-1, 1].
Tensor to_model_space(const Tensor& pixels);
Tensor to_pixel_space(const Tensor& model);

enum class InitMode { PureNoise, WarmStart };
std::string to_string(InitMode m);
InitMode parse_init_mode(const std::string& name);

// Replaces each hidden pixel with the nearest pixel of the visible rectangle
// (frames whose role is GuideRaw are left untouched). With no visible pixels
// the frame is filled with mid-gray.
Tensor border_fill(const Tensor& frames, const MaskSpec& mask, std::span<const FrameRole> roles);

// Border fill of every frame; the non-learned outpainting baseline.
Tensor border_replication(const Tensor& frames, const MaskSpec& mask);

// forward_sample(border_fill(frames), T, eps) in model space.
Tensor warm_start(const Tensor& frames, const MaskSpec& mask, std::span<const FrameRole> roles,
                  const NoiseSchedule& schedule, Rng& rng);

// One clip to outpaint. `frames` (F, C, H, W) supplies visible content;
// every GuideRaw slot must have its full frame in `guides`.
struct ClipRequest {
  Tensor frames;
  std::vector<FrameRole> roles;
  std::map<std::size_t, Tensor> guides;  // slot -> (C, H, W)
  MaskSpec mask;
  Tensor global_frames;  // (g, C, H, W)
  int fps = 1;
};

struct OutpaintOptions {
  GuidanceConfig guidance;
  SamplerConfig sampler;
  InitMode init = InitMode::PureNoise;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

// Returns the completed frames in [0, 1]: ground truth wherever the frame's
// mask is visible (every pixel of a guide slot), clamped samples elsewhere.
Tensor outpaint_clip(const Denoiser& model, const NoiseSchedule& schedule, const ClipRequest& request,
                     const OutpaintOptions& options);

// Mean squared error over hidden pixels of non-guide frames; absent when
// nothing is hidden.
std::optional<double> hidden_region_mse(const Tensor& output, const Tensor& truth, const MaskSpec& mask,
                                        std::span<const FrameRole> roles);

// Writes <dir>/clip<id>_f<k>.pgm (or .ppm) for each frame.
void dump_clip_frames(const std::filesystem::path& dir, std::size_t clip_id, const Tensor& frames);

}  // namespace m3d
