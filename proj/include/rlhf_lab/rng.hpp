#pragma once

#include <cstdint>
#include <span>

namespace rlhf {

/// Counter-based splittable generator. Output i of a stream is a pure
/// function of (key, i), so child streams derived with split() are
/// independent of how many draws the parent has made.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  /// Index drawn from an unnormalised nonnegative weight vector.
  std::size_t categorical(std::span<const double> weights);

  /// Deterministic child stream keyed by (this key, stream id).
  Rng split(std::uint64_t stream) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

private:
  Rng(std::uint64_t key, std::uint64_t counter, bool) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace rlhf
