// SPDX-License-Identifier: Apache-2.0
//
// Image-quality and temporal-consistency metrics for frames in [0, 1].

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "m3d/mask.hpp"
#include "m3d/tensor.hpp"

namespace m3d {

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

double mse(std::span<const float> a, std::span<const float> b);
// -10 log10(mse) for unit dynamic range; +inf when mse == 0.
double psnr(double mse);

// Mean SSIM of one H x W plane over every valid uniform window (side
// min(11, H, W)), population statistics, L = 1.
double ssim_plane(std::span<const float> a, std::span<const float> b, std::size_t height, std::size_t width);
// Per-frame SSIM averaged over frames and channels of (T, C, H, W) stacks.
double ssim(const Tensor& a, const Tensor& b);

// Mean over t of the hidden-region MSE between frames t and t + 1.
std::optional<double> hidden_temporal_mse(const Tensor& frames, const MaskSpec& mask);

// Output temporal MSE over truth temporal MSE; 1 when both vanish, absent
// when only the truth's does or nothing is hidden.
std::optional<double> jitter_ratio(const Tensor& output, const Tensor& truth, const MaskSpec& mask);

enum class Region { HiddenOnly, FullFrame };
std::string to_string(Region r);

struct MetricsRecord {
  std::string name;
  Region region = Region::HiddenOnly;
  std::optional<double> mse;
  std::optional<double> psnr;
  double ssim = 1.0;  // whole frames
  std::optional<double> jitter_ratio;
};

// Metrics of `output` against `truth`, both (T, C, H, W). HiddenOnly reads
// only hidden pixels for MSE, PSNR and jitter.
MetricsRecord evaluate(const Tensor& output, const Tensor& truth, const MaskSpec& mask,
                       Region region = Region::HiddenOnly, std::string name = {});

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);

}  // namespace m3d
