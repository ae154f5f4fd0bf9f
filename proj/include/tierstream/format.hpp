// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tierstream/clock.hpp"
#include "tierstream/model.hpp"
#include "tierstream/provider.hpp"

namespace tierstream {

// Checkpoint file layout, little-endian throughout:
//   [0, 4096)                reserved header: magic "TSCKPT01", u32 version,
//                            u64 plan hash, zero padding
//   [4096, tensor_region_end)fixed-offset raw buffers at precomputed,
//                            aligned offsets
//   [tensor_region_end, ...) log-structured appends of serialized objects
//   tail                     entry table + u64 table checksum + u64 length
// The tail fully describes every byte region, so a reader needs nothing
// but the file.

constexpr char checkpoint_magic[8] = {'T', 'S', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t checkpoint_format_version = 1;

struct footer_entry {
  uint64_t object_id = 0;
  uint8_t kind = 0;  // 0 raw, 1 structured
  uint64_t file_offset = 0;
  uint64_t length = 0;
  uint64_t object_offset_base = 0;
  uint64_t checksum = 0;  // fnv1a64 over all of the object's bytes in this file
};

struct file_footer {
  std::vector<footer_entry> entries;
};

struct file_header {
  uint32_t version = 0;
  uint64_t plan_hash = 0;
};

enum class format_error_kind {
  missing_file,
  incomplete_file,   // no checksum-valid footer (torn write / truncation)
  corrupt_object,    // object bytes fail their checksum
  corrupt_footer,
  bad_manifest,
  invalid_entries,
  io,
};

class format_error : public ts_error {
 public:
  format_error(format_error_kind kind, const std::string& what,
               std::optional<uint64_t> object_id = std::nullopt)
      : ts_error(what), kind(kind), object_id(object_id) {}
  format_error_kind kind;
  std::optional<uint64_t> object_id;
};

/// Writable checkpoint file: positional writes into the fixed region are
/// safe concurrently at disjoint offsets, the append cursor is a serialized
/// reservation point, finalize is single threaded.
class checkpoint_file_writer {
 public:
  checkpoint_file_writer(const std::filesystem::path& path, const file_layout& plan_file,
                         uint64_t plan_hash, bool overwrite);
  ~checkpoint_file_writer();

  checkpoint_file_writer(const checkpoint_file_writer&) = delete;
  checkpoint_file_writer& operator=(const checkpoint_file_writer&) = delete;

  void write_fixed(uint64_t file_offset, std::span<const std::byte> data);
  /// Reserves append space, writes, returns the offset the chunk landed at.
  uint64_t append_chunk(std::span<const std::byte> data);

  /// Writes the entry table and trailer. Validates entries first; on
  /// overlap the file is left without a valid footer.
  void finalize(const std::vector<footer_entry>& entries);

  uint64_t tensor_region_end() const { return tensor_region_end_; }
  uint64_t appended_bytes();
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  uint64_t tensor_region_end_ = 0;
  uint64_t append_cursor_ = 0;
  std::mutex append_mu_;
  bool finalized_ = false;
};

file_header read_header(const std::filesystem::path& path);
file_footer read_footer(const std::filesystem::path& path);

/// All objects described by one file's footer, decoded and checksum
/// verified. Order follows the entry table.
struct file_object {
  uint64_t object_id;
  object_kind kind;
  std::vector<std::byte> bytes;
};
std::vector<file_object> read_file_objects(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Per-checkpoint manifest: the commit record, written only after every
// file's footer is durable.

struct manifest_file_info {
  uint32_t file_id = 0;
  std::string relative_path;
  std::vector<uint64_t> object_ids;
};

struct manifest_object_info {
  uint64_t object_id = 0;
  object_kind kind = object_kind::raw_buffer;
  tier residency = tier::device;
  precision_tag precision = precision_tag::opaque;
  uint32_t file_id = 0;
};

struct manifest_rank_info {
  int rank_id = 0;
  int tp_idx = 0, pp_idx = 0, dp_idx = 0;
  std::vector<manifest_file_info> files;
  std::vector<manifest_object_info> objects;
};

struct checkpoint_manifest {
  uint64_t checkpoint_id = 0;
  uint64_t iteration = 0;
  int tp = 1, pp = 1, dp = 1;
  bool zero1 = false;
  uint64_t seed = 0;
  uint64_t n_params = 0;
  int layers = 1;
  uint64_t metadata_bytes = 0;
  bool complete = false;
  std::vector<manifest_rank_info> ranks;

  tlv::value to_value() const;
  static checkpoint_manifest from_value(const tlv::value& v);
};

void write_manifest(const std::filesystem::path& path, const checkpoint_manifest& m);
checkpoint_manifest read_manifest(const std::filesystem::path& path);

/// Rebuilds every state object of a checkpoint: raw payloads byte-identical
/// to their snapshot, structured values decoded, checksums verified.
/// Throws format_error with a distinct kind (and object id where known).
std::vector<rank_state> restore_checkpoint(const std::filesystem::path& manifest_path);

struct verify_issue {
  format_error_kind kind;
  std::optional<uint64_t> object_id;
  std::string detail;
};

struct verify_report {
  bool ok = true;
  size_t files_checked = 0;
  size_t objects_checked = 0;
  std::vector<verify_issue> issues;
};

/// Full checksum pass over a manifest and the files it names; never
/// silently passes a damaged checkpoint.
verify_report verify_checkpoint(const std::filesystem::path& manifest_path);

}  // namespace tierstream
