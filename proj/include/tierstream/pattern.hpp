// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

namespace tierstream {

// Deterministic, random-access payload generator. Every raw buffer in a
// generated layout is a window into a logical byte space keyed by
// (seed, space, iteration); regenerating the window is enough to verify a
// round trip or detect a torn/inconsistent capture, so no golden copies are
// ever stored. Sharded buffers (ZeRO optimizer shards) are windows at
// different offsets of the same space, which makes concatenation checks
// bit-exact.
struct pattern_key {
  uint64_t seed = 0;
  uint64_t space = 0;
  uint64_t iteration = 0;
};

namespace detail {

inline uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline uint64_t pattern_base(const pattern_key& k) {
  uint64_t h = mix64(k.seed + 0x9e3779b97f4a7c15ull);
  h = mix64(h ^ k.space);
  h = mix64(h ^ k.iteration);
  return h | 1;  // never zero
}

inline uint64_t pattern_word(uint64_t base, uint64_t block) {
  uint64_t x = base + block * 0x9e3779b97f4a7c15ull;
  // xorshift-multiply finalizer
  x ^= x >> 32;
  x *= 0xd6e8feb86659fd93ull;
  x ^= x >> 32;
  x *= 0xd6e8feb86659fd93ull;
  x ^= x >> 32;
  return x;
}

}  // namespace detail

/// Fills `out` with the pattern bytes of `key` starting at byte `offset`
/// of the logical space.
inline void fill_pattern(std::span<std::byte> out, const pattern_key& key, uint64_t offset = 0) {
  const uint64_t base = detail::pattern_base(key);
  uint64_t pos = offset;
  size_t i = 0;
  while (i < out.size()) {
    const uint64_t block = pos / 8;
    const unsigned in_word = static_cast<unsigned>(pos % 8);
    const uint64_t w = detail::pattern_word(base, block);
    for (unsigned b = in_word; b < 8 && i < out.size(); ++b, ++i, ++pos) {
      out[i] = static_cast<std::byte>((w >> (8 * b)) & 0xff);
    }
  }
}

/// True when `data` equals the pattern bytes at `offset`.
inline bool matches_pattern(std::span<const std::byte> data, const pattern_key& key,
                            uint64_t offset = 0) {
  const uint64_t base = detail::pattern_base(key);
  uint64_t pos = offset;
  for (size_t i = 0; i < data.size(); ++i, ++pos) {
    const uint64_t w = detail::pattern_word(base, pos / 8);
    if (data[i] != static_cast<std::byte>((w >> (8 * (pos % 8))) & 0xff)) return false;
  }
  return true;
}

}  // namespace tierstream
