// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace tierstream {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ts_error("config: bad boolean value '" + std::string(v) + "'");
}

int64_t parse_int(std::string_view v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ts_error("config: bad integer value '" + std::string(v) + "'");
  return out;
}

double parse_double(std::string_view v) {
  try {
    size_t used = 0;
    const double out = std::stod(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ts_error("config: bad number '" + std::string(v) + "'");
  }
}

}  // namespace

uint64_t parse_bytes(std::string_view text) {
  auto v = trim(text);
  uint64_t mult = 1;
  if (!v.empty()) {
    switch (v.back()) {
      case 'K':
      case 'k':
        mult = 1_KiB;
        v.remove_suffix(1);
        break;
      case 'M':
      case 'm':
        mult = 1_MiB;
        v.remove_suffix(1);
        break;
      case 'G':
      case 'g':
        mult = 1_GiB;
        v.remove_suffix(1);
        break;
      default:
        break;
    }
  }
  const int64_t base = parse_int(trim(v));
  if (base < 0) throw ts_error("config: negative byte count");
  return static_cast<uint64_t>(base) * mult;
}

phase_profile run_config::profile() const {
  phase_profile p;
  p.t_forward_ns = static_cast<int64_t>(t_forward_s * ns_per_sec);
  p.t_backward_ns = static_cast<int64_t>(t_backward_s * ns_per_sec);
  p.t_update_ns = static_cast<int64_t>(t_update_s * ns_per_sec);
  return p;
}

shard_layout run_config::make_layout() const {
  model_spec s = spec;
  if (s.n_params == 0 && s.hidden_dim > 0)
    s.n_params = approx_param_count(s.layers, s.hidden_dim);
  layout_options lo;
  lo.metadata_bytes = metadata_bytes;
  lo.write_params_all_dp = write_params_all_dp;
  return generate_layout(s, tp, pp, dp, zero1, seed, lo);
}

run_options run_config::options() const {
  run_options o;
  o.n_iters = n_iters;
  o.ckpt_interval = ckpt_interval;
  o.dir = ckpt_dir;
  o.shared_cache = shared_cache;
  return o;
}

run_config parse_config_text(std::string_view text) {
  run_config cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos)
      throw ts_error("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key{trim(s.substr(0, eq))};
    const std::string_view value = trim(s.substr(eq + 1));

    if (key == "n_params") cfg.spec.n_params = static_cast<uint64_t>(parse_int(value));
    else if (key == "layers") cfg.spec.layers = static_cast<int>(parse_int(value));
    else if (key == "hidden_dim") cfg.spec.hidden_dim = static_cast<int>(parse_int(value));
    else if (key == "metadata_bytes") cfg.metadata_bytes = parse_bytes(value);
    else if (key == "tp") cfg.tp = static_cast<int>(parse_int(value));
    else if (key == "pp") cfg.pp = static_cast<int>(parse_int(value));
    else if (key == "dp") cfg.dp = static_cast<int>(parse_int(value));
    else if (key == "zero1") cfg.zero1 = parse_bool(value);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(parse_int(value));
    else if (key == "write_params_all_dp") cfg.write_params_all_dp = parse_bool(value);
    else if (key == "engine") {
      if (value == "sync") cfg.engine.strategy = strategy_kind::sync;
      else if (value == "two_phase") cfg.engine.strategy = strategy_kind::two_phase;
      else if (value == "lazy") cfg.engine.strategy = strategy_kind::lazy;
      else throw ts_error("config: unknown engine '" + std::string(value) + "'");
    }
    else if (key == "lazy_serialize_overlap") cfg.engine.lazy_serialize_overlap = parse_bool(value);
    else if (key == "staging_capacity_bytes") cfg.engine.staging_capacity_bytes = parse_bytes(value);
    else if (key == "d2h_bandwidth") cfg.engine.d2h_bandwidth = parse_bytes(value);
    else if (key == "flush_bandwidth") cfg.engine.flush_bandwidth = parse_bytes(value);
    else if (key == "serialize_bandwidth") cfg.engine.serialize_bandwidth = parse_bytes(value);
    else if (key == "flush_workers") cfg.engine.flush_workers = static_cast<int>(parse_int(value));
    else if (key == "raw_chunk_bytes") cfg.engine.raw_chunk_bytes = parse_bytes(value);
    else if (key == "serialized_chunk_bytes")
      cfg.engine.serialized_chunk_bytes = parse_bytes(value);
    else if (key == "launch_overhead_s")
      cfg.engine.launch_overhead_ns = static_cast<int64_t>(parse_double(value) * ns_per_sec);
    else if (key == "cache_timeout_s") {
      const double t = parse_double(value);
      if (t <= 0) cfg.engine.cache_acquire_timeout_ns.reset();
      else cfg.engine.cache_acquire_timeout_ns = static_cast<int64_t>(t * ns_per_sec);
    }
    else if (key == "t_forward") cfg.t_forward_s = parse_double(value);
    else if (key == "t_backward") cfg.t_backward_s = parse_double(value);
    else if (key == "t_update") cfg.t_update_s = parse_double(value);
    else if (key == "n_iters") cfg.n_iters = static_cast<int>(parse_int(value));
    else if (key == "ckpt_interval") cfg.ckpt_interval = static_cast<int>(parse_int(value));
    else if (key == "shared_cache") cfg.shared_cache = parse_bool(value);
    else if (key == "ckpt_dir") cfg.ckpt_dir = std::string(value);
    else throw ts_error("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return cfg;
}

run_config parse_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ts_error("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace tierstream
