// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "m3d/planner.hpp"
#include "m3d/trainer.hpp"

using namespace m3d;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.frames = 8;
  c.widths = {8, 16};
  c.token_dim = 16;
  c.global_frames = 4;
  c.embed_dim = 16;
  c.groups = 4;
  return c;
}

std::vector<Video> corpus(std::size_t count, std::size_t frames, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.frames = frames;
  spec.seed = seed;
  return generate_corpus(spec, count);
}

double mean(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

TEST_CASE("strides stay in range and clips stay inside the video") {
  const auto videos = corpus(4, 500, 1);
  const auto c = small_config();
  const auto schedule = NoiseSchedule::build();
  Rng rng = make_rng(3);
  std::set<std::size_t> seen;
  for (int i = 0; i < 600; ++i) {
    const auto s = draw_training_sample(videos, c, schedule, 0.1, rng);
    CHECK(s.stride >= 1);
    CHECK(s.stride <= 30);
    CHECK(s.start + (c.frames - 1) * s.stride < 500);
    CHECK(s.cond.fps == static_cast<int>(s.stride));
    CHECK(s.timestep >= 1);
    CHECK(s.timestep <= schedule.steps());
    seen.insert(s.stride);
  }
  CHECK(seen.size() == 30);

  // Short videos cap the stride at (T-1)/(F-1).
  const auto shorts = corpus(2, 20, 2);
  for (int i = 0; i < 100; ++i) CHECK(draw_training_sample(shorts, c, schedule, 0.1, rng).stride <= 2);
  CHECK_THROWS(draw_training_sample(corpus(1, 7, 3), c, schedule, 0.1, rng));
  CHECK_THROWS(draw_training_sample({}, c, schedule, 0.1, rng));
}

TEST_CASE("training samples never expose hidden pixels") {
  const auto videos = corpus(3, 64, 4);
  const auto c = small_config();
  const auto schedule = NoiseSchedule::build();
  Rng rng = make_rng(5);
  int all_count = 0;
  for (int i = 0; i < 300; ++i) {
    const auto s = draw_training_sample(videos, c, schedule, 0.1, rng);
    const auto truth = to_model_space(videos[s.video].to_tensor());
    const auto plane = c.size * c.size;
    const auto ctx = s.cond.context.data();
    const auto msk = s.cond.mask.data();
    for (std::size_t f = 0; f < c.frames; ++f) {
      const bool guide = s.guides.roles[f] == FrameRole::GuideRaw;
      for (std::size_t y = 0; y < c.size; ++y)
        for (std::size_t x = 0; x < c.size; ++x) {
          const auto p = y * c.size + x;
          const bool shown = guide || s.mask.visible(y, x);
          const float want = shown ? truth.data()[(s.start + f * s.stride) * plane + p] : 0.0f;
          CHECK(ctx[f * plane + p] == want);
          CHECK(msk[f * plane + p] == (shown ? 1.0f : 0.0f));
        }
    }
    const auto gp = s.cond.global_prompt.data();
    for (std::size_t g = 0; g < c.global_frames; ++g)
      for (std::size_t p = 0; p < plane; ++p) {
        if (s.prompt_dropped || !s.mask.visible(p / c.size, p % c.size)) CHECK(gp[(g * 2) * plane + p] == 0.0f);
      }
    if (s.mask.strategy() == MaskStrategy::All) {
      ++all_count;
      CHECK(s.prompt_dropped);
      for (auto r : s.guides.roles) CHECK(r == FrameRole::ContextOnly);
      for (float v : s.cond.global_prompt.data()) CHECK(v == 0.0f);
    }
  }
  CHECK(all_count > 40);
}

TEST_CASE("training is reproducible bit for bit") {
  const auto videos = corpus(6, 32, 6);
  const auto c = small_config();
  const auto schedule = NoiseSchedule::build();
  TrainConfig tc;
  tc.steps = 4;
  tc.batch = 2;
  tc.adam.lr = 1e-3;
  tc.adam.warmup_steps = 2;
  tc.seed = 11;
  auto a = Denoiser::init(c, 1), b = Denoiser::init(c, 1);
  std::size_t calls = 0;
  const auto la = train(a, videos, schedule, tc, [&](std::size_t step, double) { CHECK(step == calls++); });
  const auto lb = train(b, videos, schedule, tc);
  CHECK(calls == 4);
  CHECK(la == lb);
  for (const auto& [name, p] : a.params()) {
    const auto q = b.params().get(name).data();
    CHECK_MESSAGE(std::equal(p.data().begin(), p.data().end(), q.begin()), name);
  }
  // The zero output head makes the first loss the mean squared noise.
  CHECK(la.front() == doctest::Approx(1.0).epsilon(0.05));
  CHECK(loss_csv({0.5, 0.25}) == "step,loss\n0,0.5\n1,0.25\n");

  tc.p2 = 1.5;
  CHECK_THROWS(train(a, videos, schedule, tc));
  tc.p2 = 0.1;
  tc.batch = 0;
  CHECK_THROWS(train(a, videos, schedule, tc));
}

TEST_CASE("a short run learns") {
  const auto videos = corpus(16, 32, 7);
  const auto c = small_config();
  const auto schedule = NoiseSchedule::build();
  TrainConfig tc;
  tc.steps = 500;
  tc.batch = 2;
  tc.adam.lr = 2e-3;
  tc.adam.warmup_steps = 50;
  tc.seed = 12;
  auto model = Denoiser::init(c, 2);
  const auto losses = train(model, videos, schedule, tc);
  const std::span<const double> all(losses);
  const double first = mean(all.first(50)), last = mean(all.last(50));
  MESSAGE("first 50 mean " << first << ", last 50 mean " << last);
  CHECK(last <= 0.5 * first);
  for (double l : losses) CHECK(std::isfinite(l));
}
