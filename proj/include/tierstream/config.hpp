// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "tierstream/engine.hpp"
#include "tierstream/model.hpp"
#include "tierstream/simulator.hpp"

namespace tierstream {

/// Declarative run configuration, read from `key = value` lines with `#`
/// comments. Byte values accept K/M/G suffixes (powers of 1024), durations
/// are seconds.
struct run_config {
  model_spec spec{1048576, 8, 0};
  uint64_t metadata_bytes = 2_MiB;
  int tp = 1;
  int pp = 1;
  int dp = 1;
  bool zero1 = false;
  uint64_t seed = 42;
  bool write_params_all_dp = false;

  engine_config engine;

  double t_forward_s = 0.6;
  double t_backward_s = 1.2;
  double t_update_s = 0.12;

  int n_iters = 15;
  int ckpt_interval = 1;
  bool shared_cache = false;
  std::string ckpt_dir = "checkpoints";

  phase_profile profile() const;
  shard_layout make_layout() const;
  run_options options() const;
};

uint64_t parse_bytes(std::string_view text);

run_config parse_config_text(std::string_view text);
run_config parse_config_file(const std::filesystem::path& path);

}  // namespace tierstream
