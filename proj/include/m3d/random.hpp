// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "m3d/tensor.hpp"

namespace m3d {

using Rng = std::mt19937_64;

// Engine for an independent stream derived from (seed, stream).
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

double uniform01(Rng& rng);
std::size_t uniform_index(Rng& rng, std::size_t n);  // [0, n)

template <typename T>
BasicTensor<T> randn(Shape shape, Rng& rng);

}  // namespace m3d
