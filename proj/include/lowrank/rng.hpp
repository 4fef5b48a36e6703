#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace lowrank {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds from one user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(mix_seed(seed, stream));
}

/// Uniform draw in [0, 1) built from the raw 64-bit output so results do not
/// depend on the standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline int uniform_int(Rng& rng, int n) {
  return static_cast<int>(uniform01(rng) * n);
}

/// Inverse-CDF draw from an unnormalized nonnegative weight vector.
inline int sample_categorical(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("sample_categorical: weights sum to zero");
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  int last_positive = -1;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return last_positive;
  }
  return last_positive;
}

/// Standard normal via Box-Muller (one draw per call; the sine branch is discarded).
inline double standard_normal(Rng& rng) {
  const double u1 = uniform01(rng) + 0x1.0p-54;
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Marsaglia-Tsang gamma sampler (shape > 0, unit scale).
inline double sample_gamma(Rng& rng, double shape) {
  if (shape < 1.0) {
    const double u = uniform01(rng);
    return sample_gamma(rng, shape + 1.0) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    const double x = standard_normal(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = uniform01(rng) + 0x1.0p-54;
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

inline std::vector<double> sample_dirichlet(Rng& rng, int n, double concentration) {
  std::vector<double> out(static_cast<std::size_t>(n));
  double total = 0.0;
  for (auto& x : out) {
    x = sample_gamma(rng, concentration);
    total += x;
  }
  if (!(total > 0.0)) {
    // Vanishing concentration can underflow every coordinate; fall back to a vertex.
    std::fill(out.begin(), out.end(), 0.0);
    out[static_cast<std::size_t>(uniform_int(rng, n))] = 1.0;
    return out;
  }
  for (auto& x : out) x /= total;
  return out;
}

}  // namespace lowrank
