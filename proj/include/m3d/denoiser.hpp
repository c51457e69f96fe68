// SPDX-License-Identifier: Apache-2.0
//
// Tiny pseudo-3D UNet noise predictor and the global-prompt encoder.
//
// Every block applies group norm, SiLU, a 3x3 spatial conv and a width-3
// temporal conv, then adds learned projections of the sinusoidal timestep
// and fps embeddings per channel. The deepest level runs temporal
// self-attention across frames followed by cross-attention onto the prompt
// tokens. Templated on the scalar type so gradients can be checked in double.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "m3d/mask.hpp"
#include "m3d/param_store.hpp"
#include "m3d/tensor.hpp"

namespace m3d {

struct DenoiserConfig {
  std::size_t frames = 16;
  std::size_t size = 16;  // H = W
  std::size_t channels = 1;
  std::vector<std::size_t> widths = {16, 32};
  std::size_t token_dim = 32;
  std::size_t heads = 1;
  std::size_t global_frames = 16;
  std::size_t groups = 8;
  std::size_t embed_dim = 32;
  std::size_t train_steps = 1000;

  // Throws std::invalid_argument on inconsistent values.
  void validate() const;

  // Flat "key=value" lines, stable order.
  std::string to_header() const;
  static DenoiserConfig from_header(const std::string& header);

  // Small enough for finite-difference checks.
  static DenoiserConfig miniature();

  std::size_t input_channels() const { return 2 * channels + 1; }
  std::size_t prompt_tokens() const { return global_frames * (size / 4) * (size / 4); }

  bool operator==(const DenoiserConfig&) const = default;
};

template <typename T>
class BasicDenoiser {
 public:
  BasicDenoiser(DenoiserConfig config, BasicParamStore<T> params);

  static BasicDenoiser init(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }
  const BasicParamStore<T>& params() const { return params_; }
  BasicParamStore<T>& params() { return params_; }

  // (g, C + 1, H, W) masked frames plus mask -> (1, tokens, d).
  BasicTensor<T> encode_prompt(const BasicTensor<T>& global_prompt) const;

  // input (F', 2C + 1, H, W) in [noisy | context | mask] order -> eps (F', C, H, W),
  // with 1 <= F' <= F.
  BasicTensor<T> forward(const BasicTensor<T>& input, double t, double fps, const BasicTensor<T>& tokens) const;

 private:
  const BasicTensor<T>& p(const std::string& name) const { return params_.get(name); }
  BasicTensor<T> block(const std::string& name, const BasicTensor<T>& x, const BasicTensor<T>& t_emb,
                       const BasicTensor<T>& fps_emb) const;
  BasicTensor<T> temporal_attention(const BasicTensor<T>& x) const;
  BasicTensor<T> cross_attention(const BasicTensor<T>& x, const BasicTensor<T>& tokens) const;

  BasicDenoiser(DenoiserConfig config, BasicParamStore<T> params, int);  // unchecked

  DenoiserConfig config_;
  BasicParamStore<T> params_;
};

using Denoiser = BasicDenoiser<float>;
using Denoiser64 = BasicDenoiser<double>;

// Noise prediction for an assembled clip; t must lie in 1..train_steps.
Tensor predict_noise(const Denoiser& model, const ClipConditioning& cond, std::size_t t, const Tensor& tokens);

}  // namespace m3d
