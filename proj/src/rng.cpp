#include "rlhf_lab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rlhf {
namespace {

// SplitMix64 finaliser.
std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(mix64(seed + kGolden)) {}

std::uint64_t Rng::next_u64() {
  const std::uint64_t c = counter_++;
  return mix64(key_ ^ mix64(c * kGolden + 0x632be59bd9b4e019ULL));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("categorical: weights sum to zero");
  const double u = uniform() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  return last_positive;
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(mix64(key_ ^ mix64(stream + 0x5851f42d4c957f2dULL)), 0, true);
}

}  // namespace rlhf
