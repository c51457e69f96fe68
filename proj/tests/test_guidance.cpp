// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "m3d/guidance.hpp"
#include "m3d/random.hpp"

using namespace m3d;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

struct Fixture {
  DenoiserConfig config = DenoiserConfig::miniature();
  Denoiser model;
  NoiseSchedule schedule = NoiseSchedule::build();
  Tensor truth, global;
  MaskSpec mask = MaskSpec::single(Side::Right, 0.5, 4, 4);

  Fixture() : model(Denoiser::init(DenoiserConfig::miniature(), 1)) {
    // Random weights everywhere so the network output depends on its inputs.
    Rng rng = make_rng(10);
    for (auto& [_, p] : model.params())
      for (auto& v : p.mutable_data()) v = static_cast<float>(0.4 * uniform01(rng) - 0.2);
    std::vector<float> px(config.frames * config.size * config.size);
    for (auto& v : px) v = static_cast<float>(uniform01(rng));
    truth = Tensor({config.frames, 1, config.size, config.size}, px);
    global = Tensor({config.global_frames, 1, config.size, config.size},
                    std::vector<float>(px.begin(), px.begin() + config.global_frames * 16));
  }

  ClipRequest request(std::vector<FrameRole> roles) const {
    ClipRequest r;
    r.frames = truth;
    r.roles = roles;
    for (std::size_t k = 0; k < roles.size(); ++k) {
      if (roles[k] == FrameRole::GuideRaw) {
        r.guides[k] = Tensor({1, config.size, config.size},
                             std::vector<float>(truth.data().begin() + k * 16, truth.data().begin() + (k + 1) * 16));
      }
    }
    r.mask = mask;
    r.global_frames = global;
    r.fps = 2;
    return r;
  }
};

OutpaintOptions fast_options(std::uint64_t seed) {
  OutpaintOptions o;
  o.sampler.num_inference_steps = 4;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("guidance scales zero and one reproduce their operand bit for bit") {
  Rng rng = make_rng(12);
  for (int i = 0; i < 50; ++i) {
    const auto u = randn<float>({2, 3, 5}, rng), c = randn<float>({2, 3, 5}, rng), f = randn<float>({2, 3, 5}, rng);
    CHECK(bit_equal(combine_guidance(u, c, f, {0.0, 0.0}), u));
    CHECK(bit_equal(combine_guidance(u, c, f, {1.0, 1.0}), f));
  }
}

TEST_CASE("guidance matches the nested difference form") {
  Rng rng = make_rng(13);
  for (int i = 0; i < 50; ++i) {
    const GuidanceConfig g{4 * uniform01(rng), 6 * uniform01(rng)};
    const auto u = randn<float>({7}, rng), c = randn<float>({7}, rng), f = randn<float>({7}, rng);
    const auto out = combine_guidance(u, c, f, g);
    for (std::size_t k = 0; k < 7; ++k) {
      const double want = u.data()[k] + g.s1 * (double(c.data()[k]) - u.data()[k]) +
                          g.s2 * (double(f.data()[k]) - c.data()[k]);
      CHECK(out.data()[k] == doctest::Approx(want).epsilon(1e-6));
    }
  }
  CHECK_THROWS(combine_guidance(Tensor::zeros({2}), Tensor::zeros({3}), Tensor::zeros({2}), {}));
  CHECK_THROWS((GuidanceConfig{-1.0, 1.0}.validate()));
  CHECK_THROWS((GuidanceConfig{1.0, 1.0, 1.5}.validate()));
}

TEST_CASE("guided_epsilon combines the three conditioned predictions") {
  Fixture fx;
  Rng rng = make_rng(14);
  const auto noisy = randn<float>(fx.truth.shape(), rng);
  const std::vector<FrameRole> roles(fx.config.frames, FrameRole::ContextOnly);
  const auto cond = assemble_conditioning(noisy, to_model_space(fx.truth), roles, fx.mask, to_model_space(fx.global), 2);
  const auto tokens = fx.model.encode_prompt(cond.global_prompt);
  const auto null_tokens = fx.model.encode_prompt(null_prompt(cond.global_prompt));
  const GuidanceConfig g{2.0, 4.0};
  const auto want = combine_guidance(predict_noise(fx.model, null_context(cond), 400, null_tokens),
                                     predict_noise(fx.model, cond, 400, null_tokens),
                                     predict_noise(fx.model, cond, 400, tokens), g);
  CHECK(bit_equal(guided_epsilon(fx.model, cond, 400, tokens, null_tokens, g), want));
  // The three conditions are genuinely different inputs.
  CHECK_FALSE(bit_equal(predict_noise(fx.model, cond, 400, tokens), predict_noise(fx.model, cond, 400, null_tokens)));
}

TEST_CASE("pixel and model spaces are inverse affine maps") {
  const Tensor p({3}, {0.0f, 0.25f, 1.0f});
  const auto m = to_model_space(p);
  CHECK(m.data()[0] == -1.0f);
  CHECK(m.data()[1] == -0.5f);
  CHECK(m.data()[2] == 1.0f);
  CHECK(bit_equal(to_pixel_space(m), p));
}

TEST_CASE("border fill copies the nearest visible pixel") {
  std::vector<float> px(16);
  for (std::size_t i = 0; i < 16; ++i) px[i] = static_cast<float>(i) / 16.0f;
  const Tensor frames({1, 1, 4, 4}, px);
  const auto m = MaskSpec::make(MaskStrategy::BiDir, {Side::Top, Side::Bottom}, 0.5, 4, 4);  // rows 1..2 visible
  const std::vector<FrameRole> ctx = {FrameRole::ContextOnly};
  const auto out = border_fill(frames, m, ctx);
  for (std::size_t x = 0; x < 4; ++x) {
    CHECK(out.data()[x] == px[4 + x]);
    CHECK(out.data()[12 + x] == px[8 + x]);
    CHECK(out.data()[4 + x] == px[4 + x]);
  }
  const std::vector<FrameRole> guide = {FrameRole::GuideRaw};
  CHECK(bit_equal(border_fill(frames, m, guide), frames));
  const auto gray = border_fill(frames, MaskSpec::all_hidden(4, 4), ctx);
  for (float v : gray.data()) CHECK(v == 0.5f);
  CHECK(bit_equal(border_replication(frames, m), out));
}

TEST_CASE("warm start has the forward-process moments at the last timestep") {
  const auto s = NoiseSchedule::build();
  const auto frames = Tensor::full({16, 1, 64, 64}, 0.8f);
  const auto m = MaskSpec::single(Side::Left, 0.5, 64, 64);
  Rng rng = make_rng(15);
  const auto z = warm_start(frames, m, std::vector<FrameRole>(16, FrameRole::ContextOnly), s, rng);
  double sum = 0, sum2 = 0;
  for (float v : z.data()) {
    sum += v;
    sum2 += double(v) * v;
  }
  const double n = static_cast<double>(z.numel()), mean = sum / n;
  const double ab = s.alpha_bar(1000);
  CHECK(std::abs(mean - std::sqrt(ab) * 0.6) < 0.015);
  CHECK(sum2 / n - mean * mean == doctest::Approx(1 - ab).epsilon(0.02));
}

TEST_CASE("outpaint keeps visible pixels and guide frames and stays in range") {
  Fixture fx;
  const std::vector<FrameRole> roles = {FrameRole::GuideRaw, FrameRole::ContextOnly, FrameRole::ContextOnly};
  for (auto init : {InitMode::PureNoise, InitMode::WarmStart}) {
    auto opts = fast_options(3);
    opts.init = init;
    const auto out = outpaint_clip(fx.model, fx.schedule, fx.request(roles), opts);
    REQUIRE(out.shape() == fx.truth.shape());
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
          const auto i = (k * 4 + y) * 4 + x;
          if (k == 0 || fx.mask.visible(y, x)) CHECK(out.data()[i] == fx.truth.data()[i]);
          CHECK(out.data()[i] >= 0.0f);
          CHECK(out.data()[i] <= 1.0f);
        }
  }
}

TEST_CASE("outpaint is a function of its seed and stream") {
  Fixture fx;
  const std::vector<FrameRole> roles(3, FrameRole::ContextOnly);
  const auto a = outpaint_clip(fx.model, fx.schedule, fx.request(roles), fast_options(1));
  const auto b = outpaint_clip(fx.model, fx.schedule, fx.request(roles), fast_options(1));
  auto other = fast_options(1);
  other.stream = 2;
  const auto c = outpaint_clip(fx.model, fx.schedule, fx.request(roles), other);
  CHECK(bit_equal(a, b));
  CHECK_FALSE(bit_equal(a, c));
  auto plms = fast_options(1);
  plms.sampler.kind = SamplerKind::Plms;
  CHECK_NOTHROW(outpaint_clip(fx.model, fx.schedule, fx.request(roles), plms));
}

TEST_CASE("outpaint rejects inconsistent requests") {
  Fixture fx;
  auto missing = fx.request({FrameRole::GuideRaw, FrameRole::ContextOnly, FrameRole::ContextOnly});
  missing.guides.clear();
  CHECK_THROWS_WITH(outpaint_clip(fx.model, fx.schedule, missing, fast_options(0)), doctest::Contains("guide slot 0"));
  auto extra = fx.request(std::vector<FrameRole>(3, FrameRole::ContextOnly));
  extra.guides[1] = Tensor::zeros({1, 4, 4});
  CHECK_THROWS(outpaint_clip(fx.model, fx.schedule, extra, fast_options(0)));
  auto small = NoiseSchedule::build(ScheduleKind::ScaledLinear, 100);
  CHECK_THROWS(outpaint_clip(fx.model, small, fx.request(std::vector<FrameRole>(3)), fast_options(0)));
}

TEST_CASE("hidden_region_mse skips guide slots and visible pixels") {
  const auto m = MaskSpec::single(Side::Left, 0.5, 2, 2);
  const Tensor truth({2, 1, 2, 2}, {0, 0, 0, 0, 0, 0, 0, 0});
  const Tensor out({2, 1, 2, 2}, {9, 5, 9, 5, 1, 5, 3, 5});
  const std::vector<FrameRole> roles = {FrameRole::GuideRaw, FrameRole::ContextOnly};
  CHECK(*hidden_region_mse(out, truth, m, roles) == doctest::Approx(5.0));
  CHECK_FALSE(hidden_region_mse(out, truth, m, std::vector<FrameRole>(2, FrameRole::GuideRaw)).has_value());
}
