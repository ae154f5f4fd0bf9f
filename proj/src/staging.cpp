// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/staging.hpp"

#include <algorithm>

namespace tierstream {

staging_cache::staging_cache(exec_context& ctx, uint64_t capacity_bytes)
    : ctx_(ctx), capacity_(capacity_bytes), pool_(capacity_bytes) {
  if (capacity_bytes == 0) throw ts_error("staging cache: zero capacity");
}

std::optional<uint64_t> staging_cache::find_offset_locked(uint64_t size) const {
  auto free_at = [&](uint64_t start) -> bool {
    if (start + size > capacity_) return false;
    // The first live interval at or after `start` must begin past our end,
    // and the previous interval must end at or before `start`.
    auto it = intervals_.lower_bound(start);
    if (it != intervals_.end() && it->first < start + size) return false;
    if (it != intervals_.begin()) {
      auto prev = std::prev(it);
      if (prev->first + prev->second > start) return false;
    }
    return true;
  };
  if (free_at(bump_)) return bump_;
  if (free_at(0)) return 0;  // wraparound
  // First-fit over the gaps between live intervals.
  uint64_t cursor = 0;
  for (const auto& [off, len] : intervals_) {
    if (off >= cursor && off - cursor >= size) return cursor;
    cursor = std::max(cursor, off + len);
  }
  if (capacity_ - cursor >= size) return cursor;
  return std::nullopt;
}

void staging_cache::record_locked() {
  if (trace_enabled_) trace_.emplace_back(ctx_.now_ns(), allocated_);
}

staging_cache::region staging_cache::acquire(uint64_t size,
                                             std::optional<int64_t> deadline_ns) {
  if (size == 0) throw ts_error("staging cache: zero-size acquire");
  if (size > capacity_) throw ts_error("staging cache: oversized request");
  auto g = ctx_.monitor();
  const uint64_t token = next_token_++;
  queue_.push_back({size, token});
  for (;;) {
    if (!queue_.empty() && queue_.front().token == token) {
      if (auto off = find_offset_locked(size)) {
        queue_.pop_front();
        region r{next_id_++, *off, size};
        live_.emplace(r.id, r);
        intervals_.emplace(r.offset, r.length);
        allocated_ += size;
        peak_ = std::max(peak_, allocated_);
        bump_ = (r.offset + size) % std::max<uint64_t>(capacity_, 1);
        record_locked();
        // Space may remain for the next waiter in line.
        ctx_.notify_all(g, space_freed_);
        return r;
      }
    }
    if (deadline_ns) {
      if (ctx_.now_ns() >= *deadline_ns) {
        auto it = std::find_if(queue_.begin(), queue_.end(),
                               [&](const waiter& w) { return w.token == token; });
        if (it != queue_.end()) queue_.erase(it);
        ctx_.notify_all(g, space_freed_);
        throw cache_timeout_error("staging cache: acquire deadline exceeded");
      }
      ctx_.wait_until(g, space_freed_, *deadline_ns);
    } else {
      ctx_.wait(g, space_freed_);
    }
  }
}

void staging_cache::release(const region& r) {
  auto g = ctx_.monitor();
  auto it = live_.find(r.id);
  if (it == live_.end()) throw ts_error("staging cache: release of unknown or freed region");
  intervals_.erase(it->second.offset);
  allocated_ -= it->second.length;
  live_.erase(it);
  record_locked();
  ctx_.notify_all(g, space_freed_);
}

std::span<std::byte> staging_cache::data(const region& r) {
  return std::span<std::byte>(pool_.data() + r.offset, r.length);
}

uint64_t staging_cache::allocated_bytes() {
  auto g = ctx_.monitor();
  return allocated_;
}

uint64_t staging_cache::peak_allocated_bytes() {
  auto g = ctx_.monitor();
  return peak_;
}

void staging_cache::enable_occupancy_trace() {
  auto g = ctx_.monitor();
  trace_enabled_ = true;
}

std::vector<std::pair<int64_t, uint64_t>> staging_cache::occupancy_trace() {
  auto g = ctx_.monitor();
  return trace_;
}

}  // namespace tierstream
