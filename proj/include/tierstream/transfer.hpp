// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tierstream/clock.hpp"
#include "tierstream/provider.hpp"

namespace tierstream {

enum class op_kind : uint8_t { stage, flush, serialize, barrier };

const char* op_name(op_kind op);

/// One transfer-timeline record; the raw material for overlap analysis.
struct timeline_event {
  uint64_t checkpoint_id = 0;
  int rank_id = 0;
  uint64_t object_id = 0;
  op_kind op = op_kind::stage;
  int64_t t_start_ns = 0;
  int64_t t_end_ns = 0;
  uint64_t bytes = 0;
};

/// CSV with columns checkpoint_id,rank_id,object_id,op,t_start,t_end,bytes
/// (times in ns).
std::string timeline_csv(const std::vector<timeline_event>& events);

/// Virtual duration of one device-to-host copy. Rejects chunks that are not
/// device resident; the copy engine only ever sees device memory.
int64_t device_copy_ns(const chunk_descriptor& chunk, uint64_t d2h_bandwidth);

class ticket_error : public ts_error {
 public:
  explicit ticket_error(const std::string& what) : ts_error(what) {}
};

/// Cross-thread progress handle for one checkpoint on one rank. Object
/// status moves PENDING -> STAGED -> PERSISTED, strictly monotone; the
/// checkpoint is snapshot-complete once every object is captured on the
/// host (device buffers copied out, host buffers stabilized, structured
/// objects fully serialized), and persisted once every file carries a
/// valid footer.
class transfer_ticket {
 public:
  transfer_ticket(exec_context& ctx, uint64_t checkpoint_id, int rank_id,
                  const std::vector<state_object>& objects, size_t n_files);

  uint64_t checkpoint_id() const { return checkpoint_id_; }
  int rank_id() const { return rank_id_; }

  // Producer-side accounting.
  void set_structured_total(uint64_t object_id, uint64_t bytes);
  /// Chunks of one object must arrive in object-offset order; accumulates
  /// the object checksum as they do.
  void add_staged(uint64_t object_id, uint64_t object_offset, std::span<const std::byte> data);
  void add_persisted(uint64_t object_id, uint64_t bytes);
  void files_finalized_step();
  void fail(const std::string& message);

  /// Blocks until snapshot-complete; the barrier the lazy engine runs
  /// before the update phase. Returns the blocked duration.
  int64_t wait_snapshot();
  /// Blocks until all objects persisted and footers written. Idempotent.
  int64_t wait_persisted();

  bool snapshot_done();
  bool persisted_done();
  bool failed();

  uint64_t object_checksum(uint64_t object_id);
  uint64_t total_bytes();
  uint64_t raw_bytes();
  uint64_t serialized_bytes();
  size_t n_objects() const { return n_objects_; }
  size_t n_files() const { return n_files_; }

  // Blocked-time attribution, filled in by the engine.
  int64_t issue_block_ns = 0;
  int64_t barrier_block_ns = 0;

 private:
  struct object_progress {
    object_kind kind;
    uint64_t total = 0;
    bool total_known = false;
    uint64_t staged = 0;
    uint64_t persisted = 0;
    uint64_t checksum_state = fnv1a64_seed;
    bool is_staged = false;
    bool is_persisted = false;
  };

  void check_failed_locked();

  exec_context& ctx_;
  uint64_t checkpoint_id_;
  int rank_id_;
  size_t n_objects_;
  size_t n_files_;
  std::map<uint64_t, object_progress> objects_;
  size_t staged_count_ = 0;
  size_t persisted_count_ = 0;
  size_t files_finalized_ = 0;
  bool all_persisted_ = false;
  bool failed_ = false;
  std::string error_;
  condition changed_;
};

struct throughput_result {
  uint64_t bytes = 0;
  int64_t blocked_ns = 0;
  double bytes_per_sec = 0.0;
  bool floored = false;  // blocked time hit the launch-overhead floor
};

/// Effective checkpoint throughput: bytes divided by blocked time, floored
/// at the launch overhead so unblocked checkpoints report a finite number.
throughput_result effective_throughput(uint64_t bytes, int64_t blocked_ns, int64_t floor_ns);

}  // namespace tierstream
