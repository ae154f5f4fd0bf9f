// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "tierstream/clock.hpp"
#include "tierstream/model.hpp"

namespace tierstream {

// Reserved block at the start of every checkpoint file (magic, version,
// plan hash); fixed-offset assignments start after it.
constexpr uint64_t header_reserved_bytes = 4096;
constexpr uint64_t default_alignment = 4096;
constexpr uint64_t default_raw_chunk_bytes = 16_MiB;
constexpr uint64_t default_serialized_chunk_bytes = 1_MiB;

enum class placement_kind : uint8_t { fixed = 0, append = 1 };

struct placement {
  placement_kind kind = placement_kind::append;
  uint32_t file_id = 0;
  uint64_t file_offset = 0;  // fixed only
};

/// A contiguous byte range of one object, with a readable view that stays
/// valid until the consumer is done with it and a hint telling the engine
/// where the bytes land.
struct chunk_descriptor {
  uint64_t object_id = 0;
  uint64_t object_offset = 0;
  uint64_t length = 0;
  tier source_tier = tier::device;
  object_kind kind = object_kind::raw_buffer;
  std::span<const std::byte> data;
  placement place;
  bool last_of_object = false;
};

struct fixed_assignment {
  uint64_t object_id = 0;
  uint64_t file_offset = 0;
  uint64_t length = 0;
};

struct file_layout {
  uint64_t tensor_region_end = header_reserved_bytes;  // append region starts here
  std::vector<fixed_assignment> fixed;
};

/// Precomputed persistent layout: raw buffers get fixed offsets (largest
/// first, aligned), structured objects append past the tensor region.
struct layout_plan {
  uint64_t alignment = default_alignment;
  std::map<uint32_t, file_layout> files;

  const file_layout& file(uint32_t id) const;
  uint64_t plan_hash() const;
};

layout_plan plan_layout(const std::vector<state_object>& objects,
                        uint64_t alignment = default_alignment);

// ---------------------------------------------------------------------------
// Chunk sources and their composition.

/// One child of a composite stream. Raw sources are always ready until
/// exhausted and never copy payload bytes; serialized sources become ready
/// as a background serializer produces chunks.
class chunk_source {
 public:
  virtual ~chunk_source() = default;
  virtual bool exhausted() const = 0;
  virtual bool ready() const = 0;
  virtual chunk_descriptor take() = 0;
  virtual int priority_class() const = 0;  // 0 = raw, 1 = serializing
};

class raw_chunk_source final : public chunk_source {
 public:
  raw_chunk_source(const std::vector<state_object>& objects, const layout_plan& plan,
                   uint64_t max_chunk_bytes);

  bool exhausted() const override;
  bool ready() const override { return !exhausted(); }
  chunk_descriptor take() override;
  int priority_class() const override { return 0; }

 private:
  struct entry {
    const state_object* object;
    uint64_t file_offset;
  };
  std::vector<entry> entries_;
  uint64_t max_chunk_;
  size_t index_ = 0;
  uint64_t offset_ = 0;
};

/// Receives chunks pushed by serializer workers; owns the serialized
/// buffers until the stream is dropped.
class serialized_chunk_source final : public chunk_source {
 public:
  bool exhausted() const override { return done_ && ready_.empty(); }
  bool ready() const override { return !ready_.empty(); }
  chunk_descriptor take() override;
  int priority_class() const override { return 1; }

  // Producer side; callers hold the context monitor via composite_provider.
  std::vector<std::byte>& add_buffer(std::vector<std::byte> buf);
  void push(chunk_descriptor c) { ready_.push_back(c); }
  void finish() { done_ = true; }
  void fail(uint64_t object_id, std::string message);

 private:
  std::deque<chunk_descriptor> ready_;
  std::vector<std::unique_ptr<std::vector<std::byte>>> buffers_;
  bool done_ = false;
  bool failed_ = false;
  uint64_t failed_object_ = 0;
  std::string error_;

  friend class composite_provider;
};

class stream_error : public ts_error {
 public:
  stream_error(uint64_t object_id, const std::string& what)
      : ts_error(what), object_id(object_id) {}
  uint64_t object_id;
};

struct source_status {
  bool ready = false;
  bool exhausted = false;
  int priority_class = 0;
};

/// Picks which source emits next, given per-source status; returning
/// nothing means wait for more readiness. The scheduling policy between
/// tiers is deliberately pluggable.
using emission_policy = std::function<std::optional<size_t>(std::span<const source_status>)>;

/// Raw chunks win whenever one is ready; serialized chunks fill the gaps.
emission_policy raw_first_policy();
/// Serializing sources drain completely before any raw chunk is emitted.
emission_policy serialize_first_policy();

/// Merges children into a single stream for one consumer. next_chunk blocks
/// on the context until a child is ready and returns nullopt after all
/// children end.
class composite_provider {
 public:
  composite_provider(exec_context& ctx, emission_policy policy = raw_first_policy());

  raw_chunk_source& add_raw(const std::vector<state_object>& objects, const layout_plan& plan,
                            uint64_t max_chunk_bytes);
  serialized_chunk_source& add_serialized();

  std::optional<chunk_descriptor> next_chunk();

  // Producer-side helpers for serializer workers: mutate a serialized
  // source and wake the consumer under the context monitor.
  void produce(serialized_chunk_source& src, std::function<void()> fn);

 private:
  exec_context& ctx_;
  emission_policy policy_;
  condition readiness_;
  std::vector<std::unique_ptr<chunk_source>> sources_;
};

/// Encodes a structured object, stores the size on it and returns the
/// bytes. Failures carry the object id and the offending key path.
std::vector<std::byte> encode_structured(state_object& obj);

/// Encodes a structured object and hands the encoding to `emit` in chunks
/// of at most `chunk_bytes`, in object order. Returns the total encoded
/// size and stores it on the object.
uint64_t serialize_structured(
    state_object& obj, uint64_t chunk_bytes,
    const std::function<void(std::span<const std::byte> data, uint64_t object_offset, bool last)>&
        emit);

/// Fraction of checkpoint bytes that passed through serialization.
double serialized_fraction(uint64_t serialized_bytes, uint64_t total_bytes);

}  // namespace tierstream
