#pragma once

#include <cstdint>
#include <initializer_list>

namespace lisa {

/// splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed from a master seed and a list of tags.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(master);
  for (std::uint64_t t : tags) {
    s = splitmix64(s ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  }
  return s;
}

/// Stream tags used across modules.
namespace stream {
inline constexpr std::uint64_t split = 1;
inline constexpr std::uint64_t targets = 2;
inline constexpr std::uint64_t pretrain = 3;
inline constexpr std::uint64_t payload_init = 4;
inline constexpr std::uint64_t surrogate_cls = 5;
inline constexpr std::uint64_t surrogate_link = 6;
inline constexpr std::uint64_t attack_negatives = 7;
inline constexpr std::uint64_t victim_cls = 8;
inline constexpr std::uint64_t victim_link = 9;
inline constexpr std::uint64_t graph_copy = 10;
inline constexpr std::uint64_t nia = 11;
inline constexpr std::uint64_t nia_draw = 12;
inline constexpr std::uint64_t similarity = 13;
}  // namespace stream

}  // namespace lisa
