// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor ops. Every op validates shapes and throws
// std::invalid_argument naming the op and the offending shapes. When a tape is
// active and any input requires a gradient, the output is recorded on it.
//
// Layout conventions:
//   images / frame stacks   (N, C, H, W)
//   conv2d weights          (Cout, Cin, k, k), bias (Cout)
//   temporal conv weights   (Cout, Cin, 3) acting along N (the frame axis)
//   attention               q (B, n, d), k (B, m, d), v (B, m, dv)

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "m3d/tensor.hpp"

namespace m3d {

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& a);

// (M, K) x (K, N) -> (M, N)
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Adds bias (D) along the last axis of x (..., D).
template <typename T>
BasicTensor<T> add_bias(const BasicTensor<T>& x, const BasicTensor<T>& bias);

// Adds v (C values) to every element of channel c in x (N, C, ...).
template <typename T>
BasicTensor<T> add_channel(const BasicTensor<T>& x, const BasicTensor<T>& v);

// Zero-padded 2D convolution with odd square kernel and padding k/2.
// `bias` may be undefined.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::size_t stride = 1);

// Zero-padded width-3 convolution along the leading (frame) axis of
// x (F, C, H, W); spatial positions are independent.
template <typename T>
BasicTensor<T> temporal_conv(const BasicTensor<T>& x, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

// Per-sample group normalization over (C/groups, H, W) with learned affine.
template <typename T>
BasicTensor<T> group_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          std::size_t groups, double eps = 1e-5);

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);

// softmax(q k^T / sqrt(d)) v, batched over the leading axis.
template <typename T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k, const BasicTensor<T>& v);

// Constant (n, dim) table: [sin(v * w_i) | cos(v * w_i)], w_i = 10000^(-i / (dim/2)).
template <typename T>
BasicTensor<T> sinusoidal_embedding(std::span<const double> values, std::size_t dim);

template <typename T>
BasicTensor<T> concat(const BasicTensor<T>& a, const BasicTensor<T>& b, std::size_t axis);

// (N, C, H, W) -> (N, C, 2H, 2W)
template <typename T>
BasicTensor<T> upsample_nearest2x(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& axes);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

// mean((pred - target)^2) over all elements.
template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

}  // namespace m3d
