// SPDX-License-Identifier: Apache-2.0
//
// Outpainting masks, guide-frame roles, and per-clip conditioning assembly.
//
// A mask hides bands along the frame edges and leaves one axis-aligned
// visible rectangle. For every masked axis the drawn ratio is the total
// fraction removed along that axis; when both sides of an axis are active
// the hidden pixels are split evenly, with the odd pixel going to the
// left/top side.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "m3d/random.hpp"
#include "m3d/tensor.hpp"

namespace m3d {

enum class MaskStrategy { FourDir, SingleDir, BiDir, RandomDirCount, All };
inline constexpr std::array<double, 5> kMaskStrategyProportions = {0.2, 0.1, 0.35, 0.1, 0.25};
inline constexpr double kMinMaskRatio = 0.15;
inline constexpr double kMaxMaskRatio = 0.75;

std::string to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(const std::string& name);

enum class Side { Left = 0, Right = 1, Top = 2, Bottom = 3 };

struct Rect {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0, x1) x [y0, y1)
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool operator==(const Rect&) const = default;
};

class MaskSpec {
 public:
  // `sides` lists the active edges; `ratio` is the fraction removed per
  // masked axis. Strategy All ignores both and hides every pixel.
  static MaskSpec make(MaskStrategy strategy, std::vector<Side> sides, double ratio, std::size_t height,
                       std::size_t width);
  static MaskSpec single(Side side, double ratio, std::size_t height, std::size_t width);
  static MaskSpec all_hidden(std::size_t height, std::size_t width);
  static MaskSpec all_visible(std::size_t height, std::size_t width);

  MaskStrategy strategy() const { return strategy_; }
  const std::vector<Side>& sides() const { return sides_; }
  double ratio() const { return ratio_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  // Hidden pixel count per side, indexed by Side.
  const std::array<std::size_t, 4>& hidden_pixels() const { return hidden_; }
  const Rect& visible_rect() const { return rect_; }

  bool visible(std::size_t y, std::size_t x) const { return x >= rect_.x0 && x < rect_.x1 && y >= rect_.y0 && y < rect_.y1; }
  std::size_t visible_count() const;
  std::size_t hidden_count() const { return height_ * width_ - visible_count(); }
  // H x W values, 1 = visible.
  std::vector<float> as_floats() const;

 private:
  MaskStrategy strategy_ = MaskStrategy::All;
  std::vector<Side> sides_;
  double ratio_ = 0;
  std::size_t height_ = 0, width_ = 0;
  std::array<std::size_t, 4> hidden_{};
  Rect rect_{};
};

// Draws a strategy with the configured proportions and a ratio uniform on
// [0.15, 0.75].
MaskSpec sample_mask_strategy(Rng& rng, std::size_t height, std::size_t width);

enum class FrameRole { ContextOnly, GuideRaw };

enum class GuideCase { ContextOnly = 1, FirstOrFirstLast = 2, RandomFrames = 3 };
inline constexpr std::array<double, 3> kGuideCaseProportions = {0.3, 0.35, 0.35};
inline constexpr double kGuideFrameProbability = 0.5;

struct GuideDraw {
  GuideCase which = GuideCase::ContextOnly;
  std::vector<FrameRole> roles;
};

GuideDraw sample_guide_case(Rng& rng, std::size_t frames);

// All tensors are in model space; the noisy channel is replaced on every
// reverse step.
struct ClipConditioning {
  BasicTensor<float> noisy;          // (F, C, H, W)
  BasicTensor<float> context;        // (F, C, H, W), 0 where hidden
  BasicTensor<float> mask;           // (F, 1, H, W), 1 = visible
  BasicTensor<float> global_prompt;  // (g, C + 1, H, W): masked frames then mask
  int fps = 1;

  std::size_t frames() const { return context.dim(0); }
  std::size_t channels() const { return context.dim(1); }
  // (F, 2C + 1, H, W) in [noisy | context | mask] order.
  Tensor network_input() const;
  ClipConditioning with_noisy(Tensor z) const;
};

// `clip` (F, C, H, W) holds the raw frames (guide slots must carry full
// frames); `global_frames` (g, C, H, W) are masked with the same mask.
ClipConditioning assemble_conditioning(const Tensor& noisy, const Tensor& clip, std::span<const FrameRole> roles,
                                       const MaskSpec& mask, const Tensor& global_frames, int fps);

// The null context: zero context and mask channels, same noisy input.
ClipConditioning null_context(const ClipConditioning& cond);
// Prompt frames with every pixel hidden.
Tensor null_prompt(const Tensor& global_prompt);

// Writes the mask channel of every frame side by side as one PGM.
void write_mask_pgm(const std::filesystem::path& path, const ClipConditioning& cond);

}  // namespace m3d
