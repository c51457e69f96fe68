// SPDX-License-Identifier: Apache-2.0

#include "m3d/mask.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "m3d/image_io.hpp"
#include "m3d/ops.hpp"

namespace m3d {

std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::FourDir: return "four";
    case MaskStrategy::SingleDir: return "single";
    case MaskStrategy::BiDir: return "bi";
    case MaskStrategy::RandomDirCount: return "random";
    case MaskStrategy::All: return "all";
  }
  return "?";
}

MaskStrategy parse_mask_strategy(const std::string& name) {
  for (auto s : {MaskStrategy::FourDir, MaskStrategy::SingleDir, MaskStrategy::BiDir, MaskStrategy::RandomDirCount,
                 MaskStrategy::All}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown mask strategy '" + name + "' (expected four|single|bi|random|all)");
}

MaskSpec MaskSpec::make(MaskStrategy strategy, std::vector<Side> sides, double ratio, std::size_t height,
                        std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("mask: empty frame");
  MaskSpec m;
  m.strategy_ = strategy;
  m.height_ = height;
  m.width_ = width;
  if (strategy == MaskStrategy::All) {
    m.ratio_ = 1.0;
    m.sides_ = {Side::Left, Side::Right, Side::Top, Side::Bottom};
    m.hidden_ = {width, 0, height, 0};
    m.rect_ = Rect{};
    return m;
  }
  if (!(ratio >= 0.0 && ratio < 1.0)) throw std::invalid_argument("mask: ratio must lie in [0, 1)");
  std::sort(sides.begin(), sides.end());
  if (std::adjacent_find(sides.begin(), sides.end()) != sides.end()) {
    throw std::invalid_argument("mask: repeated side");
  }
  m.ratio_ = ratio;
  m.sides_ = sides;
  auto has = [&](Side s) { return std::find(sides.begin(), sides.end(), s) != sides.end(); };
  auto split = [&](Side first, Side second, std::size_t extent) {
    const auto total = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(extent)));
    const bool a = has(first), b = has(second);
    if (a && b) {
      m.hidden_[static_cast<int>(first)] = total - total / 2;
      m.hidden_[static_cast<int>(second)] = total / 2;
    } else if (a) {
      m.hidden_[static_cast<int>(first)] = total;
    } else if (b) {
      m.hidden_[static_cast<int>(second)] = total;
    }
  };
  split(Side::Left, Side::Right, width);
  split(Side::Top, Side::Bottom, height);
  m.rect_ = Rect{m.hidden_[0], m.hidden_[2], width - m.hidden_[1], height - m.hidden_[3]};
  if (m.hidden_[0] + m.hidden_[1] >= width || m.hidden_[2] + m.hidden_[3] >= height) {
    throw std::invalid_argument("mask: ratio leaves no visible pixels");
  }
  return m;
}

MaskSpec MaskSpec::single(Side side, double ratio, std::size_t height, std::size_t width) {
  return make(MaskStrategy::SingleDir, {side}, ratio, height, width);
}

MaskSpec MaskSpec::all_hidden(std::size_t height, std::size_t width) {
  return make(MaskStrategy::All, {}, 1.0, height, width);
}

MaskSpec MaskSpec::all_visible(std::size_t height, std::size_t width) {
  return make(MaskStrategy::FourDir, {Side::Left, Side::Right, Side::Top, Side::Bottom}, 0.0, height, width);
}

std::size_t MaskSpec::visible_count() const {
  return rect_.empty() ? 0 : (rect_.x1 - rect_.x0) * (rect_.y1 - rect_.y0);
}

std::vector<float> MaskSpec::as_floats() const {
  std::vector<float> out(height_ * width_, 0.0f);
  for (std::size_t y = 0; y < height_; ++y)
    for (std::size_t x = 0; x < width_; ++x) out[y * width_ + x] = visible(y, x) ? 1.0f : 0.0f;
  return out;
}

MaskSpec sample_mask_strategy(Rng& rng, std::size_t height, std::size_t width) {
  const double u = uniform01(rng);
  const double ratio = kMinMaskRatio + (kMaxMaskRatio - kMinMaskRatio) * uniform01(rng);
  double acc = 0;
  std::size_t which = kMaskStrategyProportions.size() - 1;
  for (std::size_t i = 0; i < kMaskStrategyProportions.size(); ++i) {
    acc += kMaskStrategyProportions[i];
    if (u < acc) {
      which = i;
      break;
    }
  }
  const auto strategy = static_cast<MaskStrategy>(which);
  std::vector<Side> sides;
  switch (strategy) {
    case MaskStrategy::FourDir:
      sides = {Side::Left, Side::Right, Side::Top, Side::Bottom};
      break;
    case MaskStrategy::SingleDir:
      sides = {static_cast<Side>(uniform_index(rng, 4))};
      break;
    case MaskStrategy::BiDir:
      sides = uniform_index(rng, 2) == 0 ? std::vector<Side>{Side::Left, Side::Right}
                                         : std::vector<Side>{Side::Top, Side::Bottom};
      break;
    case MaskStrategy::RandomDirCount: {
      std::vector<Side> all = {Side::Left, Side::Right, Side::Top, Side::Bottom};
      const auto k = 1 + uniform_index(rng, 4);
      for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + uniform_index(rng, 4 - i)]);
      sides.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
      break;
    }
    case MaskStrategy::All:
      break;
  }
  return MaskSpec::make(strategy, std::move(sides), ratio, height, width);
}

GuideDraw sample_guide_case(Rng& rng, std::size_t frames) {
  if (frames < 2) throw std::invalid_argument("sample_guide_case: need at least 2 frames");
  GuideDraw draw;
  draw.roles.assign(frames, FrameRole::ContextOnly);
  const double u = uniform01(rng);
  if (u < kGuideCaseProportions[0]) {
    draw.which = GuideCase::ContextOnly;
  } else if (u < kGuideCaseProportions[0] + kGuideCaseProportions[1]) {
    draw.which = GuideCase::FirstOrFirstLast;
    draw.roles.front() = FrameRole::GuideRaw;
    if (uniform01(rng) < 0.5) draw.roles.back() = FrameRole::GuideRaw;
  } else {
    draw.which = GuideCase::RandomFrames;
    for (auto& r : draw.roles) {
      if (uniform01(rng) < kGuideFrameProbability) r = FrameRole::GuideRaw;
    }
  }
  return draw;
}

Tensor ClipConditioning::network_input() const {
  return concat(concat(noisy, context, 1), mask, 1);
}

ClipConditioning ClipConditioning::with_noisy(Tensor z) const {
  if (z.shape() != context.shape()) {
    throw std::invalid_argument("conditioning: noisy input " + shape_str(z.shape()) + " does not match context " +
                                shape_str(context.shape()));
  }
  ClipConditioning out = *this;
  out.noisy = std::move(z);
  return out;
}

ClipConditioning assemble_conditioning(const Tensor& noisy, const Tensor& clip, std::span<const FrameRole> roles,
                                       const MaskSpec& mask, const Tensor& global_frames, int fps) {
  if (clip.rank() != 4 || noisy.shape() != clip.shape()) {
    throw std::invalid_argument("assemble_conditioning: noisy " + shape_str(noisy.shape()) + " and clip " +
                                shape_str(clip.shape()) + " must both be (F, C, H, W)");
  }
  const auto frames = clip.dim(0), channels = clip.dim(1), h = clip.dim(2), w = clip.dim(3);
  if (roles.size() != frames) {
    throw std::invalid_argument("assemble_conditioning: " + std::to_string(roles.size()) + " roles for " +
                                std::to_string(frames) + " frames");
  }
  if (mask.height() != h || mask.width() != w) {
    throw std::invalid_argument("assemble_conditioning: mask size does not match frames");
  }
  if (global_frames.rank() != 4 || global_frames.dim(1) != channels || global_frames.dim(2) != h ||
      global_frames.dim(3) != w) {
    throw std::invalid_argument("assemble_conditioning: global frames " + shape_str(global_frames.shape()) +
                                " do not match clip " + shape_str(clip.shape()));
  }
  const auto plane = h * w;
  const auto visible = mask.as_floats();

  std::vector<float> context(clip.numel(), 0.0f);
  std::vector<float> mask_ch(frames * plane, 0.0f);
  auto src = clip.data();
  for (std::size_t f = 0; f < frames; ++f) {
    const bool guide = roles[f] == FrameRole::GuideRaw;
    for (std::size_t p = 0; p < plane; ++p) {
      const float m = guide ? 1.0f : visible[p];
      mask_ch[f * plane + p] = m;
      for (std::size_t c = 0; c < channels; ++c) {
        const auto idx = (f * channels + c) * plane + p;
        context[idx] = m > 0.0f ? src[idx] : 0.0f;
      }
    }
  }

  const auto g = global_frames.dim(0);
  std::vector<float> prompt(g * (channels + 1) * plane, 0.0f);
  auto gsrc = global_frames.data();
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        prompt[(i * (channels + 1) + c) * plane + p] = visible[p] > 0.0f ? gsrc[(i * channels + c) * plane + p] : 0.0f;
      }
    for (std::size_t p = 0; p < plane; ++p) prompt[(i * (channels + 1) + channels) * plane + p] = visible[p];
  }

  ClipConditioning cond;
  cond.noisy = noisy;
  cond.context = Tensor(clip.shape(), std::move(context));
  cond.mask = Tensor(Shape{frames, 1, h, w}, std::move(mask_ch));
  cond.global_prompt = Tensor(Shape{g, channels + 1, h, w}, std::move(prompt));
  cond.fps = fps;
  return cond;
}

ClipConditioning null_context(const ClipConditioning& cond) {
  ClipConditioning out = cond;
  out.context = Tensor::zeros(cond.context.shape());
  out.mask = Tensor::zeros(cond.mask.shape());
  return out;
}

Tensor null_prompt(const Tensor& global_prompt) {
  return Tensor::zeros(global_prompt.shape());
}

void write_mask_pgm(const std::filesystem::path& path, const ClipConditioning& cond) {
  const auto frames = cond.mask.dim(0), h = cond.mask.dim(2), w = cond.mask.dim(3);
  Image img;
  img.height = h;
  img.width = w * frames;
  img.channels = 1;
  img.pixels.resize(img.height * img.width);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img.pixels[y * img.width + f * w + x] = cond.mask.data()[(f * h + y) * w + x];
  write_pnm(path, img);
}

}  // namespace m3d
