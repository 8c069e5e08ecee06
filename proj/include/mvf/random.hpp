#pragma once

#include "mvf/errors.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mvf {

/// Independent purposes that draw randomness. Each gets its own family of streams.
enum class StreamTag : std::uint32_t {
  law_init = 1,
  law_noise = 2,
  truth_init = 3,
  truth_noise = 4,
  filter_init = 5,
  filter_noise = 6,
  resample = 7,
  reference_noise = 8,
  sampler = 9,
};

/**
 * @brief Engine for one (seed, purpose, index, component) stream.
 *
 * Streams are keyed by indices, never by scheduling order, so particle i sees
 * the same numbers whatever the particle count or thread count.
 */
inline std::mt19937_64 make_stream(std::uint64_t seed, StreamTag tag, std::uint64_t index,
                                   std::uint32_t component = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32), component};
  return std::mt19937_64(seq);
}

/// splitmix64 finalizer; used to derive child seeds from a master seed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(master ^ mix64(a)) ^ mix64(b + 0x632be59bd9b4e019ULL));
}

/// Writes K = K0 * 2^L, K0 odd.
inline int dyadic_levels(std::size_t steps, std::size_t* odd_part = nullptr) {
  if (steps == 0) throw InvalidArgument("brownian path needs at least one step");
  int levels = 0;
  while (steps % 2 == 0) {
    steps /= 2;
    ++levels;
  }
  if (odd_part) *odd_part = steps;
  return levels;
}

/**
 * @brief Scalar Brownian increments on a uniform grid, built coarse to fine.
 *
 * With K = K0 * 2^L steps the generator first draws K0 increments of the
 * coarse step T/K0 and then splits every increment L times by the Brownian
 * bridge. Paths for K and 2K steps therefore share the same coarse skeleton
 * and the finer one sums pairwise to the coarser one (common random numbers
 * across time-step refinements).
 */
inline void brownian_increments(std::mt19937_64& rng, std::size_t steps, double dt, std::span<double> out) {
  if (out.size() != steps) throw DimensionMismatch("brownian_increments: output size");
  std::size_t k0 = 0;
  const int levels = dyadic_levels(steps, &k0);
  std::normal_distribution<double> gauss;
  double h = dt * static_cast<double>(std::size_t{1} << levels);
  const double sh = std::sqrt(h);
  for (std::size_t i = 0; i < k0; ++i) out[i] = sh * gauss(rng);
  std::vector<double> next;
  std::size_t count = k0;
  for (int l = 0; l < levels; ++l) {
    const double sd = 0.5 * std::sqrt(h);
    next.resize(2 * count);
    for (std::size_t i = 0; i < count; ++i) {
      const double left = 0.5 * out[i] + sd * gauss(rng);
      next[2 * i] = left;
      next[2 * i + 1] = out[i] - left;
    }
    std::copy(next.begin(), next.end(), out.begin());
    count *= 2;
    h *= 0.5;
  }
}

/**
 * @brief Multi-dimensional increments for one stream owner, layout [k * dim + j].
 *
 * Component j uses its own engine, so adding components or steps never
 * shifts the numbers seen by the others.
 */
inline std::vector<double> brownian_path(std::uint64_t seed, StreamTag tag, std::uint64_t index, int dim,
                                         std::size_t steps, double dt, std::uint32_t first_component = 0) {
  std::vector<double> flat(steps * static_cast<std::size_t>(dim));
  std::vector<double> scratch(steps);
  for (int j = 0; j < dim; ++j) {
    auto rng = make_stream(seed, tag, index, first_component + static_cast<std::uint32_t>(j));
    brownian_increments(rng, steps, dt, scratch);
    for (std::size_t k = 0; k < steps; ++k) flat[k * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)] = scratch[k];
  }
  return flat;
}

}  // namespace mvf
