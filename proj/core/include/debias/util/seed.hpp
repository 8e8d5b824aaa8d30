#pragma once

#include <cstdint>
#include <string_view>

namespace debias {

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stable seed for one randomized unit of work. Parts are folded in order, so
/// (global, "generate", "gender", 3) and (global, "generate", "gender", 4)
/// give unrelated streams.
class SeedDeriver {
 public:
  explicit constexpr SeedDeriver(std::uint64_t global) noexcept : state_(mix64(global)) {}

  constexpr SeedDeriver& add(std::string_view part) noexcept {
    state_ = mix64(fnv1a64(part, state_ ^ 0xa0761d6478bd642fULL));
    return *this;
  }
  constexpr SeedDeriver& add(std::uint64_t part) noexcept {
    state_ = mix64(state_ ^ mix64(part + 0xe7037ed1a0b428dbULL));
    return *this;
  }
  constexpr std::uint64_t value() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

template <typename... Parts>
constexpr std::uint64_t derive_seed(std::uint64_t global, const Parts&... parts) noexcept {
  SeedDeriver d(global);
  (d.add(parts), ...);
  return d.value();
}

}  // namespace debias
