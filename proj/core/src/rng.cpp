#include "bgrto/rng.hpp"

namespace bgrto {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) noexcept {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

Rng Rng::keyed(std::uint64_t run_seed, std::string_view tag,
               std::initializer_list<std::uint64_t> indices) noexcept {
  std::uint64_t k = mix64(run_seed + kGolden) ^ mix64(fnv1a64(tag));
  for (auto idx : indices) k = mix64(k ^ mix64(idx + 0x632be59bd9b4e019ULL));
  return Rng(k);
}

Rng Rng::split(std::uint64_t index) const noexcept {
  return Rng(mix64(key_ ^ mix64(index ^ 0xd1b54a32d192ed03ULL)));
}

std::uint64_t Rng::next_u64() noexcept {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) noexcept {
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

int Rng::uniform_int(int lo, int hi) noexcept {
  return lo + static_cast<int>(uniform_index(static_cast<std::uint64_t>(hi - lo) + 1));
}

}  // namespace bgrto
