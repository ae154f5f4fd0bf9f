// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tierstream/clock.hpp"
#include "tierstream/engine.hpp"
#include "tierstream/model.hpp"

namespace tierstream {

/// Per-iteration compute phases. Model and optimizer state is immutable
/// through forward and backward and mutated only by the update step, which
/// is the window the lazy engine overlaps.
struct phase_profile {
  int64_t t_forward_ns = 600'000'000;
  int64_t t_backward_ns = 1'200'000'000;
  int64_t t_update_ns = 120'000'000;

  int64_t iteration_ns() const { return t_forward_ns + t_backward_ns + t_update_ns; }
};

struct iteration_record {
  int rank_id = 0;
  uint64_t iteration = 0;
  int64_t forward_ns = 0;
  int64_t backward_ns = 0;
  int64_t update_ns = 0;
  int64_t issue_block_ns = 0;
  int64_t barrier_block_ns = 0;
  uint64_t checkpoint_id = 0;  // 0 when no checkpoint was issued
};

struct rank_totals {
  int rank_id = 0;
  int64_t phases_ns = 0;
  int64_t issue_block_ns = 0;
  int64_t barrier_block_ns = 0;
  int64_t drain_ns = 0;
  int64_t end_ns = 0;  // relative to run start
};

struct checkpoint_metric {
  uint64_t checkpoint_id = 0;
  uint64_t bytes = 0;
  uint64_t raw_bytes = 0;
  uint64_t serialized_bytes = 0;
  int64_t blocked_ns = 0;  // slowest rank, issue + barrier
  double throughput_bytes_per_sec = 0.0;
  bool floored = false;
};

struct run_report {
  strategy_kind strategy = strategy_kind::lazy;
  int n_iters = 0;
  int ckpt_interval = 1;
  int n_ranks = 1;
  int64_t end_to_end_ns = 0;
  std::vector<iteration_record> iterations;
  std::vector<rank_totals> ranks;
  std::vector<checkpoint_metric> checkpoints;
  std::vector<timeline_event> timeline;

  double mean_iteration_s() const;
  double mean_throughput_bytes_per_sec() const;
  tlv::value summary() const;
  std::string iterations_csv() const;
};

struct run_options {
  int n_iters = 15;
  int ckpt_interval = 1;
  std::filesystem::path dir;
  bool shared_cache = false;
  bool check_immutability = false;
  /// Consistency-experiment hook: skips the pre-update barrier so the
  /// update races the in-flight snapshot. Simulated runs only.
  bool skip_update_barrier = false;
};

/// Drives n_iters training iterations over the layout, checkpointing every
/// ckpt_interval iterations, draining all flushes at run end. One training
/// task and one engine per rank; everything shares `ctx`'s clock.
run_report run_training(exec_context& ctx, shard_layout& layout, const phase_profile& profile,
                        const engine_config& cfg, const run_options& opts);

struct dp_sweep_row {
  int dp = 1;
  int n_ranks = 0;
  uint64_t total_raw_bytes = 0;
  uint64_t total_param_bytes = 0;
  uint64_t total_optimizer_bytes = 0;
  double mean_rank_param_bytes = 0.0;
  double mean_rank_optimizer_bytes = 0.0;
  double mean_rank_metadata_bytes = 0.0;
  int64_t max_blocked_ns = 0;
  double throughput_bytes_per_sec = 0.0;
};

/// ZeRO-1 scaling study: runs the same model at each data-parallel degree
/// and reports per-rank byte decomposition and blocked time.
std::vector<dp_sweep_row> dp_sweep(const model_spec& spec, int tp, int pp,
                                   const std::vector<int>& dp_list, const engine_config& cfg,
                                   const phase_profile& profile, const run_options& base_opts,
                                   uint64_t seed, uint64_t metadata_bytes);

struct microbench_row {
  uint64_t size_bytes = 0;  // per rank
  double staged_bytes_per_sec = 0.0;
  double ideal_bytes_per_sec = 0.0;  // host-only series, no staging
};

enum class bench_mode { simulated, wall };

/// Flush microbenchmark: each rank checkpoints a single raw buffer per
/// size; reports aggregate throughput for the staged pipeline and for an
/// ideal host-only series that skips the device copy.
std::vector<microbench_row> microbench_flush(const std::vector<uint64_t>& sizes,
                                             const engine_config& cfg, int n_ranks,
                                             const std::filesystem::path& dir, bench_mode mode);

std::string dp_sweep_csv(const std::vector<dp_sweep_row>& rows);
std::string microbench_csv(const std::vector<microbench_row>& rows);

}  // namespace tierstream
