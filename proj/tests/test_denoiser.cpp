// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <memory>

#include "m3d/denoiser.hpp"
#include "m3d/random.hpp"
#include "support/gradcheck.hpp"

using namespace m3d;

namespace {

Tensor random_input(const DenoiserConfig& c, std::size_t frames, Rng& rng) {
  return randn<float>({frames, c.input_channels(), c.size, c.size}, rng);
}

}  // namespace

TEST_CASE("forward shapes, shortened clips and rejected inputs") {
  const auto c = DenoiserConfig{};
  const auto model = Denoiser::init(c, 1);
  Rng rng = make_rng(2);
  const auto tokens = model.encode_prompt(randn<float>({c.global_frames, c.channels + 1, c.size, c.size}, rng));
  CHECK(tokens.shape() == Shape{1, c.prompt_tokens(), c.token_dim});
  CHECK(model.forward(random_input(c, 16, rng), 500, 1, tokens).shape() == Shape{16, 1, 16, 16});
  CHECK(model.forward(random_input(c, 3, rng), 500, 15, tokens).shape() == Shape{3, 1, 16, 16});
  CHECK_THROWS(model.forward(random_input(c, 17, rng), 500, 1, tokens));
  CHECK_THROWS(model.forward(randn<float>({4, 2, 16, 16}, rng), 500, 1, tokens));
  CHECK_THROWS(model.forward(random_input(c, 4, rng), 500, 1, Tensor::zeros({1, 3, c.token_dim})));
}

TEST_CASE("the zero-initialized output head predicts zero noise") {
  const auto c = DenoiserConfig::miniature();
  const auto model = Denoiser::init(c, 3);
  Rng rng = make_rng(4);
  const auto tokens = model.encode_prompt(randn<float>({c.global_frames, c.channels + 1, c.size, c.size}, rng));
  const auto out = model.forward(random_input(c, c.frames, rng), 10, 2, tokens);
  for (float v : out.data()) CHECK(v == 0.0f);
}

TEST_CASE("initialization is a pure function of the seed") {
  const auto c = DenoiserConfig::miniature();
  const auto a = Denoiser::init(c, 5), b = Denoiser::init(c, 5), d = Denoiser::init(c, 6);
  bool differs = false;
  for (const auto& [name, t] : a.params()) {
    CHECK(std::equal(t.data().begin(), t.data().end(), b.params().get(name).data().begin()));
    differs = differs || !std::equal(t.data().begin(), t.data().end(), d.params().get(name).data().begin());
  }
  CHECK(differs);
}

TEST_CASE("constructor rejects parameters that do not fit the configuration") {
  const auto c = DenoiserConfig::miniature();
  auto params = Denoiser::init(c, 1).params();
  CHECK_NOTHROW(Denoiser(c, params));
  auto other = c;
  other.widths = {2, 6};
  CHECK_THROWS(Denoiser(other, params));
  ParamStore missing;
  CHECK_THROWS(Denoiser(c, missing));
}

TEST_CASE("configuration header round-trips and validates") {
  DenoiserConfig c;
  c.widths = {8, 16, 24};
  c.global_frames = 4;
  CHECK(DenoiserConfig::from_header(c.to_header()) == c);
  CHECK_THROWS(DenoiserConfig::from_header(c.to_header() + "colour=blue\n"));
  CHECK_THROWS(DenoiserConfig::from_header("frames=abc\n"));
  auto bad = c;
  bad.size = 10;  // two down-samplings need a multiple of 4
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.groups = 3;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("miniature network passes directional finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    m3d::testing::DenoiserProbe probe(seed);
    Rng rng = make_rng(seed, 9);
    CHECK(probe.worst_error(rng) <= 1e-4);
  }
}

TEST_CASE("predict_noise validates the timestep") {
  const auto c = DenoiserConfig::miniature();
  const auto model = Denoiser::init(c, 1);
  Rng rng = make_rng(3);
  const auto clip = randn<float>({c.frames, c.channels, c.size, c.size}, rng);
  const auto global = randn<float>({c.global_frames, c.channels, c.size, c.size}, rng);
  const auto cond = assemble_conditioning(clip, clip, std::vector<FrameRole>(c.frames, FrameRole::ContextOnly),
                                          MaskSpec::single(Side::Left, 0.5, c.size, c.size), global, 1);
  const auto tokens = model.encode_prompt(cond.global_prompt);
  CHECK_NOTHROW(predict_noise(model, cond, 1, tokens));
  CHECK_THROWS(predict_noise(model, cond, 0, tokens));
  CHECK_THROWS(predict_noise(model, cond, c.train_steps + 1, tokens));
}

TEST_CASE("forward does not depend on allocation history") {
  const auto c = DenoiserConfig::miniature();
  auto model = Denoiser::init(c, 2);
  Rng rng = make_rng(8);
  for (auto& [_, p] : model.params())
    for (auto& v : p.mutable_data()) v = static_cast<float>(0.4 * uniform01(rng) - 0.2);
  const auto input = random_input(c, c.frames, rng);
  const auto tokens = model.encode_prompt(randn<float>({c.global_frames, c.channels + 1, c.size, c.size}, rng));
  const auto ref = model.forward(input, 321, 3, tokens);
  for (std::size_t shift = 1; shift < 24; ++shift) {
    std::vector<std::unique_ptr<char[]>> junk;
    for (std::size_t j = 0; j < shift; ++j) junk.emplace_back(new char[j * 4099 + shift * 12]);
    const auto big = randn<float>({shift, 1, 64, 64}, rng);
    const auto out = model.forward(input, 321, 3, tokens);
    CHECK(std::equal(ref.data().begin(), ref.data().end(), out.data().begin()));
  }
}
