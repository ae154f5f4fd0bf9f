// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace tierstream {

constexpr uint64_t operator""_KiB(unsigned long long v) { return v << 10; }
constexpr uint64_t operator""_MiB(unsigned long long v) { return v << 20; }
constexpr uint64_t operator""_GiB(unsigned long long v) { return v << 30; }

constexpr int64_t ns_per_sec = 1'000'000'000;

/// Base error type for everything the library throws on purpose.
class ts_error : public std::runtime_error {
 public:
  explicit ts_error(const std::string& what) : std::runtime_error(what) {}
};

/// Virtual duration of moving `bytes` over a link of `bytes_per_sec`,
/// rounded up so that duration >= bytes / bandwidth always holds.
inline int64_t transfer_ns(uint64_t bytes, uint64_t bytes_per_sec) {
  if (bytes_per_sec == 0) throw ts_error("zero bandwidth");
  const unsigned __int128 num =
      static_cast<unsigned __int128>(bytes) * ns_per_sec + (bytes_per_sec - 1);
  return static_cast<int64_t>(num / bytes_per_sec);
}

inline uint64_t align_up(uint64_t v, uint64_t alignment) {
  if (alignment == 0) return v;
  return (v + alignment - 1) / alignment * alignment;
}

// 64-bit FNV-1a. Used for object and footer checksums; chosen because it is
// trivial to reproduce bit-exactly in any language.
constexpr uint64_t fnv1a64_seed = 14695981039346656037ull;

inline uint64_t fnv1a64(std::span<const std::byte> data, uint64_t state = fnv1a64_seed) {
  constexpr uint64_t prime = 1099511628211ull;
  for (std::byte b : data) {
    state ^= static_cast<uint64_t>(b);
    state *= prime;
  }
  return state;
}

// Little-endian scalar packing; the on-disk format is LE regardless of host.
inline void put_u64_le(std::byte* out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
}

inline void put_u32_le(std::byte* out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<std::byte>((v >> (8 * i)) & 0xff);
}

inline uint64_t get_u64_le(const std::byte* in) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(in[i]) << (8 * i);
  return v;
}

inline uint32_t get_u32_le(const std::byte* in) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[i]) << (8 * i);
  return v;
}

}  // namespace tierstream
