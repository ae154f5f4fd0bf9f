// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "tierstream/clock.hpp"
#include "tierstream/common.hpp"

namespace tierstream {

class cache_timeout_error : public ts_error {
 public:
  explicit cache_timeout_error(const std::string& what) : ts_error(what) {}
};

/// Bounded host staging memory, allocated once at construction and reused
/// across checkpoints. Acquire blocks (FIFO among waiters) when saturated;
/// release frees space and re-examines the oldest waiter. Allocation is
/// circular bump with wraparound, falling back to first-fit when the bump
/// pointer is fragmented.
class staging_cache {
 public:
  struct region {
    uint64_t id = 0;
    uint64_t offset = 0;
    uint64_t length = 0;
  };

  staging_cache(exec_context& ctx, uint64_t capacity_bytes);

  /// Blocks until a region of `size` bytes is available. A deadline (in
  /// context time) turns a stalled flush path into a timeout error instead
  /// of a hang.
  region acquire(uint64_t size, std::optional<int64_t> deadline_ns = std::nullopt);
  void release(const region& r);

  std::span<std::byte> data(const region& r);

  uint64_t capacity_bytes() const { return capacity_; }
  uint64_t allocated_bytes();
  uint64_t peak_allocated_bytes();

  /// (t_ns, allocated) samples, one per allocation change, for occupancy
  /// plots and boundedness checks.
  void enable_occupancy_trace();
  std::vector<std::pair<int64_t, uint64_t>> occupancy_trace();

 private:
  struct waiter {
    uint64_t size;
    uint64_t token;
  };

  std::optional<uint64_t> find_offset_locked(uint64_t size) const;
  void record_locked();

  exec_context& ctx_;
  const uint64_t capacity_;
  std::vector<std::byte> pool_;
  condition space_freed_;
  std::map<uint64_t, region> live_;          // id -> region
  std::map<uint64_t, uint64_t> intervals_;   // offset -> length, live only
  std::deque<waiter> queue_;
  uint64_t allocated_ = 0;
  uint64_t peak_ = 0;
  uint64_t next_id_ = 1;
  uint64_t next_token_ = 1;
  uint64_t bump_ = 0;
  bool trace_enabled_ = false;
  std::vector<std::pair<int64_t, uint64_t>> trace_;
};

}  // namespace tierstream
