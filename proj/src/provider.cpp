// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/provider.hpp"

#include <algorithm>
#include <set>

namespace tierstream {

const file_layout& layout_plan::file(uint32_t id) const {
  auto it = files.find(id);
  if (it == files.end()) throw ts_error("layout plan: unknown file id");
  return it->second;
}

uint64_t layout_plan::plan_hash() const {
  std::vector<std::byte> buf;
  auto push64 = [&](uint64_t v) {
    std::byte b[8];
    put_u64_le(b, v);
    buf.insert(buf.end(), b, b + 8);
  };
  push64(alignment);
  for (const auto& [fid, fl] : files) {
    push64(fid);
    push64(fl.tensor_region_end);
    for (const auto& fa : fl.fixed) {
      push64(fa.object_id);
      push64(fa.file_offset);
      push64(fa.length);
    }
  }
  return fnv1a64(buf);
}

layout_plan plan_layout(const std::vector<state_object>& objects, uint64_t alignment) {
  layout_plan plan;
  plan.alignment = alignment;

  std::set<uint64_t> seen;
  for (const auto& o : objects) {
    if (!seen.insert(o.object_id).second)
      throw ts_error("plan_layout: duplicate object id " + std::to_string(o.object_id));
    plan.files.try_emplace(o.file_id);
  }

  // Fixed offsets for raw buffers, largest first so the flushers get the
  // big transfers as early as possible; ties broken by id for determinism.
  std::map<uint32_t, std::vector<const state_object*>> raws;
  for (const auto& o : objects) {
    if (!o.is_raw()) continue;
    if (!o.size_known || o.size_bytes == 0)
      throw ts_error("plan_layout: raw buffer without a known size");
    raws[o.file_id].push_back(&o);
  }
  for (auto& [fid, objs] : raws) {
    std::sort(objs.begin(), objs.end(), [](const state_object* a, const state_object* b) {
      if (a->size_bytes != b->size_bytes) return a->size_bytes > b->size_bytes;
      return a->object_id < b->object_id;
    });
    file_layout& fl = plan.files[fid];
    uint64_t cursor = header_reserved_bytes;
    for (const state_object* o : objs) {
      cursor = align_up(cursor, alignment);
      fl.fixed.push_back({o->object_id, cursor, o->size_bytes});
      cursor += o->size_bytes;
    }
    fl.tensor_region_end = cursor;
  }
  return plan;
}

raw_chunk_source::raw_chunk_source(const std::vector<state_object>& objects,
                                   const layout_plan& plan, uint64_t max_chunk_bytes)
    : max_chunk_(max_chunk_bytes) {
  if (max_chunk_ == 0) throw ts_error("raw source: zero chunk size");
  for (const auto& o : objects) {
    if (!o.is_raw()) continue;
    const auto& fl = plan.file(o.file_id);
    auto it = std::find_if(fl.fixed.begin(), fl.fixed.end(),
                           [&](const fixed_assignment& fa) { return fa.object_id == o.object_id; });
    if (it == fl.fixed.end()) throw ts_error("raw source: object missing from plan");
    entries_.push_back({&o, it->file_offset});
  }
}

bool raw_chunk_source::exhausted() const { return index_ >= entries_.size(); }

chunk_descriptor raw_chunk_source::take() {
  const entry& e = entries_[index_];
  const state_object& o = *e.object;
  if (o.payload.size() != o.size_bytes) throw ts_error("raw source: payload not materialized");
  const uint64_t len = std::min(max_chunk_, o.size_bytes - offset_);
  chunk_descriptor c;
  c.object_id = o.object_id;
  c.object_offset = offset_;
  c.length = len;
  c.source_tier = o.residency;
  c.kind = object_kind::raw_buffer;
  // Zero copy: the view aliases the object payload.
  c.data = std::span<const std::byte>(o.payload.data() + offset_, len);
  c.place = {placement_kind::fixed, o.file_id, e.file_offset + offset_};
  offset_ += len;
  c.last_of_object = offset_ == o.size_bytes;
  if (c.last_of_object) {
    ++index_;
    offset_ = 0;
  }
  return c;
}

chunk_descriptor serialized_chunk_source::take() {
  chunk_descriptor c = ready_.front();
  ready_.pop_front();
  return c;
}

std::vector<std::byte>& serialized_chunk_source::add_buffer(std::vector<std::byte> buf) {
  buffers_.push_back(std::make_unique<std::vector<std::byte>>(std::move(buf)));
  return *buffers_.back();
}

void serialized_chunk_source::fail(uint64_t object_id, std::string message) {
  failed_ = true;
  failed_object_ = object_id;
  error_ = std::move(message);
  done_ = true;
}

emission_policy raw_first_policy() {
  return [](std::span<const source_status> st) -> std::optional<size_t> {
    for (size_t i = 0; i < st.size(); ++i)
      if (st[i].ready && st[i].priority_class == 0) return i;
    for (size_t i = 0; i < st.size(); ++i)
      if (st[i].ready) return i;
    return std::nullopt;
  };
}

emission_policy serialize_first_policy() {
  return [](std::span<const source_status> st) -> std::optional<size_t> {
    // Hold raw chunks back while any serializing source still has work.
    bool serializing_pending = false;
    for (const auto& s : st)
      if (s.priority_class != 0 && !s.exhausted) serializing_pending = true;
    for (size_t i = 0; i < st.size(); ++i)
      if (st[i].ready && st[i].priority_class != 0) return i;
    if (serializing_pending) return std::nullopt;
    for (size_t i = 0; i < st.size(); ++i)
      if (st[i].ready) return i;
    return std::nullopt;
  };
}

composite_provider::composite_provider(exec_context& ctx, emission_policy policy)
    : ctx_(ctx), policy_(std::move(policy)) {}

raw_chunk_source& composite_provider::add_raw(const std::vector<state_object>& objects,
                                              const layout_plan& plan, uint64_t max_chunk_bytes) {
  auto src = std::make_unique<raw_chunk_source>(objects, plan, max_chunk_bytes);
  auto& ref = *src;
  sources_.push_back(std::move(src));
  return ref;
}

serialized_chunk_source& composite_provider::add_serialized() {
  auto src = std::make_unique<serialized_chunk_source>();
  auto& ref = *src;
  sources_.push_back(std::move(src));
  return ref;
}

std::optional<chunk_descriptor> composite_provider::next_chunk() {
  auto g = ctx_.monitor();
  for (;;) {
    bool all_exhausted = true;
    std::vector<source_status> st(sources_.size());
    for (size_t i = 0; i < sources_.size(); ++i) {
      auto* s = sources_[i].get();
      if (auto* ser = dynamic_cast<serialized_chunk_source*>(s); ser && ser->failed_)
        throw stream_error(ser->failed_object_, ser->error_);
      st[i] = {s->ready(), s->exhausted(), s->priority_class()};
      all_exhausted &= s->exhausted();
    }
    if (all_exhausted) return std::nullopt;
    if (auto pick = policy_(st)) return sources_[*pick]->take();
    ctx_.wait(g, readiness_);
  }
}

void composite_provider::produce(serialized_chunk_source& src, std::function<void()> fn) {
  auto g = ctx_.monitor();
  fn();
  (void)src;
  ctx_.notify_all(g, readiness_);
}

std::vector<std::byte> encode_structured(state_object& obj) {
  if (obj.kind != object_kind::structured)
    throw ts_error("serialize_structured: object is not structured");
  std::vector<std::byte> encoded;
  try {
    encoded = tlv::encode(obj.structured);
  } catch (const tlv::tlv_error& e) {
    throw stream_error(obj.object_id,
                       "object " + std::to_string(obj.object_id) + ": " + e.what());
  }
  obj.size_bytes = encoded.size();
  obj.size_known = true;
  return encoded;
}

uint64_t serialize_structured(
    state_object& obj, uint64_t chunk_bytes,
    const std::function<void(std::span<const std::byte>, uint64_t, bool)>& emit) {
  if (chunk_bytes == 0) throw ts_error("serialize_structured: zero chunk size");
  const std::vector<std::byte> encoded = encode_structured(obj);
  const uint64_t total = encoded.size();
  uint64_t off = 0;
  while (off < total) {
    const uint64_t len = std::min(chunk_bytes, total - off);
    emit(std::span<const std::byte>(encoded.data() + off, len), off, off + len == total);
    off += len;
  }
  return total;
}

double serialized_fraction(uint64_t serialized_bytes, uint64_t total_bytes) {
  if (total_bytes == 0) throw ts_error("serialized_fraction: empty trace");
  return static_cast<double>(serialized_bytes) / static_cast<double>(total_bytes);
}

}  // namespace tierstream
