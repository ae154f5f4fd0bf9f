// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/model.hpp"

#include <algorithm>

namespace tierstream {

namespace {

// Logical pattern-space roles.
constexpr uint64_t role_param = 1;
constexpr uint64_t role_optimizer = 2;
constexpr uint64_t role_metadata = 3;

uint64_t pack_space(uint64_t role, uint64_t layer, uint64_t tp_idx) {
  return (role << 56) | (layer << 16) | tp_idx;
}

// Quotient share with the remainder assigned to index 0.
uint64_t share_of(uint64_t total, uint64_t parts, uint64_t idx) {
  const uint64_t q = total / parts;
  const uint64_t r = total % parts;
  return q + (idx == 0 ? r : 0);
}

uint64_t share_offset(uint64_t total, uint64_t parts, uint64_t idx) {
  const uint64_t q = total / parts;
  const uint64_t r = total % parts;
  return idx == 0 ? 0 : r + q * idx;
}

}  // namespace

uint64_t rank_state::raw_bytes() const {
  uint64_t n = 0;
  for (const auto& o : objects)
    if (o.is_raw()) n += o.size_bytes;
  return n;
}

uint64_t rank_state::param_bytes() const {
  uint64_t n = 0;
  for (const auto& o : objects)
    if (o.is_raw() && o.precision == precision_tag::fp16) n += o.size_bytes;
  return n;
}

uint64_t rank_state::optimizer_bytes() const {
  uint64_t n = 0;
  for (const auto& o : objects)
    if (o.is_raw() && o.precision == precision_tag::fp32) n += o.size_bytes;
  return n;
}

size_t rank_state::structured_count() const {
  return static_cast<size_t>(
      std::count_if(objects.begin(), objects.end(),
                    [](const state_object& o) { return !o.is_raw(); }));
}

uint64_t shard_layout::total_raw_bytes() const {
  uint64_t n = 0;
  for (const auto& r : ranks) n += r.raw_bytes();
  return n;
}

uint64_t shard_layout::total_param_bytes() const {
  uint64_t n = 0;
  for (const auto& r : ranks) n += r.param_bytes();
  return n;
}

uint64_t shard_layout::total_optimizer_bytes() const {
  uint64_t n = 0;
  for (const auto& r : ranks) n += r.optimizer_bytes();
  return n;
}

uint64_t approx_param_count(int layers, int hidden_dim, int vocab) {
  const auto l = static_cast<uint64_t>(layers);
  const auto d = static_cast<uint64_t>(hidden_dim);
  return 12 * l * d * d + 2 * static_cast<uint64_t>(vocab) * d;
}

std::pair<uint64_t, uint64_t> estimate_checkpoint_bytes(const model_spec& spec) {
  if (spec.n_params == 0) throw ts_error("model spec: n_params must be > 0");
  return {2 * spec.n_params, 12 * spec.n_params};
}

shard_layout generate_layout(const model_spec& spec, int tp, int pp, int dp, bool zero1,
                             uint64_t seed, const layout_options& options) {
  if (tp < 1 || pp < 1 || dp < 1) throw ts_error("layout: tp, pp, dp must be >= 1");
  if (spec.layers < pp) throw ts_error("layout: insufficient layers for pipeline stages");
  auto [param_total, opt_total] = estimate_checkpoint_bytes(spec);

  shard_layout layout;
  layout.spec = spec;
  layout.tp = tp;
  layout.pp = pp;
  layout.dp = dp;
  layout.zero1 = zero1;
  layout.seed = seed;
  layout.options = options;

  const auto layers = static_cast<uint64_t>(spec.layers);
  uint64_t next_object_id = 1;
  int rank_id = 0;
  for (int d = 0; d < dp; ++d) {
    for (int s = 0; s < pp; ++s) {
      for (int t = 0; t < tp; ++t) {
        rank_state rank;
        rank.rank_id = rank_id++;
        rank.tp_idx = t;
        rank.pp_idx = s;
        rank.dp_idx = d;
        rank.seed = seed;
        rank.metadata_bytes = options.metadata_bytes;

        const uint64_t first_layer = share_offset(layers, pp, static_cast<uint64_t>(s));
        const uint64_t n_layers = share_of(layers, pp, static_cast<uint64_t>(s));

        const bool writes_params = options.write_params_all_dp || d == 0;
        const bool writes_optimizer = zero1 || d == 0;
        for (uint64_t l = first_layer; l < first_layer + n_layers; ++l) {
          const uint64_t layer_params = share_of(param_total, layers, l);
          const uint64_t param_slice = share_of(layer_params, tp, static_cast<uint64_t>(t));
          const uint64_t layer_opt = share_of(opt_total, layers, l);
          const uint64_t opt_slice = share_of(layer_opt, tp, static_cast<uint64_t>(t));
          if (param_slice == 0) throw ts_error("layout: zero parameter share");
          if (opt_slice == 0) throw ts_error("layout: zero optimizer share");

          if (writes_params) {
            state_object obj;
            obj.object_id = next_object_id++;
            obj.kind = object_kind::raw_buffer;
            obj.residency = tier::device;
            obj.precision = precision_tag::fp16;
            obj.file_id = file_params;
            obj.size_bytes = param_slice;
            obj.size_known = true;
            obj.pattern_space = pack_space(role_param, l, static_cast<uint64_t>(t));
            obj.pattern_offset = 0;
            rank.objects.push_back(std::move(obj));
          }
          if (writes_optimizer) {
            const uint64_t shard =
                zero1 ? share_of(opt_slice, dp, static_cast<uint64_t>(d)) : opt_slice;
            if (shard == 0) throw ts_error("layout: zero optimizer share");
            state_object obj;
            obj.object_id = next_object_id++;
            obj.kind = object_kind::raw_buffer;
            obj.residency = tier::device;
            obj.precision = precision_tag::fp32;
            obj.file_id = file_optimizer;
            obj.size_bytes = shard;
            obj.size_known = true;
            obj.pattern_space = pack_space(role_optimizer, l, static_cast<uint64_t>(t));
            obj.pattern_offset =
                zero1 ? share_offset(opt_slice, dp, static_cast<uint64_t>(d)) : 0;
            rank.objects.push_back(std::move(obj));
          }
        }

        // Every rank carries host-resident run metadata (RNG state, config,
        // step counters), serialized at checkpoint time.
        state_object meta;
        meta.object_id = next_object_id++;
        meta.kind = object_kind::structured;
        meta.residency = tier::host;
        meta.precision = precision_tag::opaque;
        meta.file_id = file_metadata;
        meta.pattern_space = pack_space(role_metadata, static_cast<uint64_t>(rank.rank_id), 0);
        rank.objects.push_back(std::move(meta));

        rank.file_ids.push_back(file_metadata);
        bool has_params = false, has_opt = false;
        for (const auto& o : rank.objects) {
          has_params |= o.file_id == file_params;
          has_opt |= o.file_id == file_optimizer;
        }
        if (has_params) rank.file_ids.push_back(file_params);
        if (has_opt) rank.file_ids.push_back(file_optimizer);

        layout.ranks.push_back(std::move(rank));
      }
    }
  }

  if (options.materialize) materialize_payloads(layout);
  return layout;
}

void materialize_payloads(rank_state& rank) {
  for (auto& obj : rank.objects) {
    if (obj.is_raw()) obj.payload.resize(obj.size_bytes);
  }
  mutate_update_step(rank, 0);
}

void materialize_payloads(shard_layout& layout) {
  for (auto& rank : layout.ranks) materialize_payloads(rank);
}

tlv::value make_metadata_value(const rank_state& rank, uint64_t iteration) {
  // Fixed fields plus pattern filler sized to roughly metadata_bytes, so
  // serialized volume is configurable while content stays a deterministic
  // function of (rank identity, iteration).
  tlv::map m;
  m.emplace("iteration", tlv::value(static_cast<int64_t>(iteration)));
  m.emplace("rank_id", tlv::value(rank.rank_id));
  m.emplace("tp_idx", tlv::value(rank.tp_idx));
  m.emplace("pp_idx", tlv::value(rank.pp_idx));
  m.emplace("dp_idx", tlv::value(rank.dp_idx));
  m.emplace("rng_seed", tlv::value(static_cast<int64_t>(
                            detail::mix64(rank.seed ^ iteration ^
                                          static_cast<uint64_t>(rank.rank_id)))));
  m.emplace("framework", tlv::value("tierstream"));

  constexpr uint64_t fixed_overhead = 256;  // rough size of the fields above
  const uint64_t filler =
      rank.metadata_bytes > fixed_overhead ? rank.metadata_bytes - fixed_overhead : 16;
  tlv::bytes b(filler);
  fill_pattern(std::span<std::byte>(b.data(), b.size()),
               pattern_key{rank.seed, pack_space(role_metadata,
                                                 static_cast<uint64_t>(rank.rank_id), 0),
                           iteration});
  m.emplace("state_blob", tlv::value(std::move(b)));
  return tlv::value(std::move(m));
}

void mutate_update_step(rank_state& rank, uint64_t iteration) {
  for (auto& obj : rank.objects) {
    if (obj.is_raw()) {
      if (obj.payload.size() != obj.size_bytes)
        throw ts_error("mutate: payload not materialized");
      fill_pattern(obj.payload, pattern_key{rank.seed, obj.pattern_space, iteration},
                   obj.pattern_offset);
    } else {
      obj.structured = make_metadata_value(rank, iteration);
    }
  }
}

std::vector<layout_summary_row> layout_summary(const shard_layout& layout) {
  std::vector<layout_summary_row> rows;
  rows.reserve(layout.ranks.size());
  for (const auto& r : layout.ranks) {
    rows.push_back({r.rank_id, r.tp_idx, r.pp_idx, r.dp_idx, r.objects.size(), r.raw_bytes(),
                    r.param_bytes(), r.optimizer_bytes(), r.structured_count()});
  }
  return rows;
}

}  // namespace tierstream
