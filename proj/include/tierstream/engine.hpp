// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "tierstream/clock.hpp"
#include "tierstream/format.hpp"
#include "tierstream/model.hpp"
#include "tierstream/provider.hpp"
#include "tierstream/staging.hpp"
#include "tierstream/transfer.hpp"

namespace tierstream {

/// Three interchangeable checkpoint flows behind one interface:
///   sync       blocks through serialize, stage, flush and finalize
///   two_phase  blocks until a full host snapshot exists, flushes behind
///   lazy       returns after enqueueing; staging overlaps forward/backward
///              and a pre-update barrier guarantees consistency
/// All three produce equivalent checkpoint artifacts; only timing and
/// blocking differ.
enum class strategy_kind : uint8_t { sync = 0, two_phase = 1, lazy = 2 };

const char* strategy_name(strategy_kind k);

struct engine_config {
  strategy_kind strategy = strategy_kind::lazy;
  /// When false, structured objects are serialized on the training thread
  /// at issue time instead of overlapping with I/O on the worker pool.
  bool lazy_serialize_overlap = true;

  uint64_t staging_capacity_bytes = 256_MiB;
  uint64_t d2h_bandwidth = 64_MiB;        // bytes/sec, one copy engine per rank
  uint64_t flush_bandwidth = 4_MiB;       // bytes/sec per flush worker
  uint64_t serialize_bandwidth = 256_MiB; // bytes/sec per serializer
  int flush_workers = 4;
  uint64_t raw_chunk_bytes = default_raw_chunk_bytes;
  uint64_t serialized_chunk_bytes = default_serialized_chunk_bytes;
  uint64_t alignment = default_alignment;
  int64_t launch_overhead_ns = 10'000'000;  // plan construction + enqueue
  /// Turns a stalled flush path into an error instead of a hang.
  std::optional<int64_t> cache_acquire_timeout_ns = 300 * ns_per_sec;
  bool overwrite = true;
};

/// Commit scope of one checkpoint across all ranks: owns the directory
/// layout and writes the manifest strictly after every rank's footers are
/// durable (manifest-last commit order).
class checkpoint_session {
 public:
  checkpoint_session(exec_context& ctx, std::filesystem::path dir, uint64_t checkpoint_id,
                     uint64_t iteration, const shard_layout& layout);
  /// A session for hand-built rank states (no generated layout).
  checkpoint_session(exec_context& ctx, std::filesystem::path dir, uint64_t checkpoint_id,
                     uint64_t iteration, int n_ranks);

  std::filesystem::path rank_dir(int rank_id) const;
  std::filesystem::path manifest_path() const;
  uint64_t checkpoint_id() const { return checkpoint_id_; }
  uint64_t iteration() const { return iteration_; }

  void register_rank(manifest_rank_info info);
  /// Called by the engine when one rank's files are all finalized; the last
  /// rank writes the manifest. `pace_bw` models the manifest write cost.
  void rank_persisted(uint64_t bytes, uint64_t pace_bandwidth);

  void wait_complete();
  bool complete();
  uint64_t total_bytes();

 private:
  exec_context& ctx_;
  std::filesystem::path dir_;
  uint64_t checkpoint_id_;
  uint64_t iteration_;
  int n_ranks_;
  checkpoint_manifest manifest_;
  int ranks_done_ = 0;
  uint64_t total_bytes_ = 0;
  bool complete_ = false;
  condition changed_;
};

/// Per-rank checkpoint engine: one paced device-to-host copier thread plus
/// a flush worker pool that also runs background serialization. The
/// training thread only ever issues checkpoints and waits on barriers.
class checkpoint_engine {
 public:
  checkpoint_engine(exec_context& ctx, engine_config config, int rank_id,
                    staging_cache* shared_cache = nullptr);
  ~checkpoint_engine();

  checkpoint_engine(const checkpoint_engine&) = delete;
  checkpoint_engine& operator=(const checkpoint_engine&) = delete;

  /// Issues one checkpoint of `rank` at the iteration boundary. Blocking
  /// behavior depends on the strategy; the measured issue block lands in
  /// ticket->issue_block_ns.
  std::shared_ptr<transfer_ticket> issue_checkpoint(checkpoint_session& session,
                                                    rank_state& rank, uint64_t iteration);

  /// The consistency barrier in front of the update phase. No-op for sync
  /// and two-phase (already consistent at issue); waits for the snapshot
  /// under lazy. Returns the blocked duration.
  int64_t pre_update_barrier(const std::shared_ptr<transfer_ticket>& ticket);

  staging_cache& cache() { return *cache_; }
  const engine_config& config() const { return config_; }
  int rank_id() const { return rank_id_; }

  std::vector<timeline_event> timeline();

  void shutdown();

 private:
  struct ckpt_job;
  struct pool_entry;

  void copier_loop();
  void worker_loop(int worker_index);
  void consume_stream(const std::shared_ptr<ckpt_job>& job);
  void run_serializer(const std::shared_ptr<ckpt_job>& job, state_object* obj,
                      bool on_training_thread);
  void handle_flush(const std::shared_ptr<ckpt_job>& job, pool_entry entry);
  void finalize_file_locked(std::unique_lock<std::mutex>& g, const std::shared_ptr<ckpt_job>& job,
                            uint32_t file_id);
  void maybe_finalize_files(const std::shared_ptr<ckpt_job>& job);
  void record_event(timeline_event e);

  exec_context& ctx_;
  engine_config config_;
  int rank_id_;
  std::unique_ptr<staging_cache> owned_cache_;
  staging_cache* cache_;

  condition work_;  // copier job queue + pool queue share the monitor
  std::deque<std::shared_ptr<ckpt_job>> job_queue_;
  std::deque<pool_entry> pool_queue_;
  std::shared_ptr<ckpt_job> last_job_;
  bool stopping_ = false;
  int tasks_live_ = 0;

  std::vector<timeline_event> events_;
  std::vector<std::thread> threads_;
};

}  // namespace tierstream
