// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tierstream/common.hpp"
#include "tierstream/pattern.hpp"
#include "tierstream/tlv.hpp"

namespace tierstream {

/// Memory tiers of the simulated machine. Device contents are reachable
/// only through the transfer engine's copy path.
enum class tier : uint8_t { device = 0, host = 1, persistent = 2 };

enum class object_kind : uint8_t { raw_buffer = 0, structured = 1 };

/// Bookkeeping only; payloads are synthetic bytes, no numeric conversion
/// ever happens.
enum class precision_tag : uint8_t { fp16 = 0, fp32 = 1, opaque = 2 };

// Well-known per-rank file ids.
constexpr uint32_t file_metadata = 0;
constexpr uint32_t file_params = 1;
constexpr uint32_t file_optimizer = 2;

/// One checkpointable unit: either a byte-addressable raw buffer
/// (tensor-like) or a structured object that needs serialization.
struct state_object {
  uint64_t object_id = 0;
  object_kind kind = object_kind::raw_buffer;
  tier residency = tier::device;
  precision_tag precision = precision_tag::opaque;
  uint32_t file_id = 0;

  // Raw buffers know their size up front; structured objects learn it when
  // they are serialized.
  uint64_t size_bytes = 0;
  bool size_known = false;

  // Identity of the raw payload inside its logical pattern space. Shards of
  // one logical buffer share a space and differ by offset, which is what
  // makes partition checks bit-exact.
  uint64_t pattern_space = 0;
  uint64_t pattern_offset = 0;

  std::vector<std::byte> payload;  // raw payload once materialized
  tlv::value structured;           // structured payload

  bool is_raw() const { return kind == object_kind::raw_buffer; }
};

/// State owned by one simulated rank.
struct rank_state {
  int rank_id = 0;
  int tp_idx = 0;
  int pp_idx = 0;
  int dp_idx = 0;
  uint64_t seed = 0;
  uint64_t metadata_bytes = 0;
  std::vector<state_object> objects;
  std::vector<uint32_t> file_ids;

  uint64_t raw_bytes() const;
  uint64_t param_bytes() const;
  uint64_t optimizer_bytes() const;
  size_t structured_count() const;
};

struct model_spec {
  uint64_t n_params = 0;
  int layers = 1;
  int hidden_dim = 0;
};

/// Rough transformer parameter count from dims, for configs that do not
/// pin n_params directly.
uint64_t approx_param_count(int layers, int hidden_dim, int vocab = 32000);

struct layout_options {
  uint64_t metadata_bytes = 2_MiB;
  bool write_params_all_dp = false;
  bool materialize = false;
};

struct shard_layout {
  model_spec spec;
  int tp = 1;
  int pp = 1;
  int dp = 1;
  bool zero1 = false;
  uint64_t seed = 0;
  layout_options options;
  std::vector<rank_state> ranks;

  uint64_t total_raw_bytes() const;
  uint64_t total_param_bytes() const;
  uint64_t total_optimizer_bytes() const;
};

/// (param_bytes, optimizer_bytes) for a model: 2 bytes/param of FP16
/// parameters plus 12 bytes/param of FP32 master weights, momentum and
/// variance.
std::pair<uint64_t, uint64_t> estimate_checkpoint_bytes(const model_spec& spec);

/// Builds the TP x PP x DP shard layout. Layers split uniformly across
/// pipeline stages, each layer's bytes uniformly across tensor-parallel
/// ranks; optimizer state is co-located with its parameters and, under
/// ZeRO-1, split uniformly across data-parallel replicas. Uneven divisions
/// give the remainder to the lowest index. Parameters are written by
/// dp_idx 0 only unless options.write_params_all_dp is set. Every rank also
/// carries one structured metadata object.
shard_layout generate_layout(const model_spec& spec, int tp, int pp, int dp, bool zero1,
                             uint64_t seed, const layout_options& options = {});

/// Allocates and fills every payload with its iteration-0 pattern.
void materialize_payloads(shard_layout& layout);
void materialize_payloads(rank_state& rank);

/// Overwrites every raw payload with the deterministic pattern of
/// (object identity, iteration) and embeds the iteration counter in
/// structured objects. Byte-wise detectable, idempotent.
void mutate_update_step(rank_state& rank, uint64_t iteration);

/// The structured metadata value a rank carries at `iteration`; the oracle
/// side of restore checks for structured objects.
tlv::value make_metadata_value(const rank_state& rank, uint64_t iteration);

/// One row per rank: rank_id, coordinates, object count, raw bytes,
/// structured count.
struct layout_summary_row {
  int rank_id;
  int tp_idx, pp_idx, dp_idx;
  size_t n_objects;
  uint64_t raw_bytes;
  uint64_t param_bytes;
  uint64_t optimizer_bytes;
  size_t structured_count;
};
std::vector<layout_summary_row> layout_summary(const shard_layout& layout);

}  // namespace tierstream
