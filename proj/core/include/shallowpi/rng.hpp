// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace shallowpi {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent substreams.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t stable_hash(std::string_view text) noexcept;

/// Seed for a named substream of a run, e.g. derive_seed(seed, "g0.b1.mid_relu").
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

/// Uniform double in [0,1) from the top 53 bits; identical on every platform.
double uniform01(Rng& rng) noexcept;
/// Box-Muller standard normal built on uniform01.
double standard_normal(Rng& rng) noexcept;
/// Fills `out` with standard normals, using both Box-Muller outputs of each
/// pair of uniforms.
void fill_standard_normal(Rng& rng, std::span<double> out) noexcept;

}  // namespace shallowpi
