#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string_view>

namespace bgrto {

/// 64-bit FNV-1a, used for stable tags and content hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept;

/// Counter-based generator: output n is a SplitMix64 finalizer applied to
/// key + n * golden. Streams are addressed by key, so a stream derived from
/// (run_seed, tag, indices) is identical no matter which worker draws it or
/// in what order streams are consumed.
///
/// Satisfies UniformRandomBitGenerator so std distributions accept it.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t key) noexcept : key_(key) {}

  static Rng keyed(std::uint64_t run_seed, std::string_view tag,
                   std::initializer_list<std::uint64_t> indices = {}) noexcept;

  /// Independent child stream addressed by `index`.
  Rng split(std::uint64_t index) const noexcept;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }
  result_type operator()() noexcept { return next_u64(); }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform in [0, n); n > 0.
  std::uint64_t uniform_index(std::uint64_t n) noexcept;
  /// Uniform in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace bgrto
