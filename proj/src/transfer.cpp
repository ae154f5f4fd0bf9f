// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/transfer.hpp"

#include <algorithm>
#include <sstream>

namespace tierstream {

const char* op_name(op_kind op) {
  switch (op) {
    case op_kind::stage:
      return "STAGE";
    case op_kind::flush:
      return "FLUSH";
    case op_kind::serialize:
      return "SERIALIZE";
    case op_kind::barrier:
      return "BARRIER";
  }
  return "?";
}

std::string timeline_csv(const std::vector<timeline_event>& events) {
  std::ostringstream os;
  os << "checkpoint_id,rank_id,object_id,op,t_start,t_end,bytes\n";
  for (const auto& e : events) {
    os << e.checkpoint_id << ',' << e.rank_id << ',' << e.object_id << ',' << op_name(e.op)
       << ',' << e.t_start_ns << ',' << e.t_end_ns << ',' << e.bytes << '\n';
  }
  return os.str();
}

int64_t device_copy_ns(const chunk_descriptor& chunk, uint64_t d2h_bandwidth) {
  if (chunk.source_tier != tier::device)
    throw ts_error("device copy: chunk is not device resident");
  return transfer_ns(chunk.length, d2h_bandwidth);
}

transfer_ticket::transfer_ticket(exec_context& ctx, uint64_t checkpoint_id, int rank_id,
                                 const std::vector<state_object>& objects, size_t n_files)
    : ctx_(ctx),
      checkpoint_id_(checkpoint_id),
      rank_id_(rank_id),
      n_objects_(objects.size()),
      n_files_(n_files) {
  for (const auto& o : objects) {
    object_progress p;
    p.kind = o.kind;
    if (o.is_raw()) {
      p.total = o.size_bytes;
      p.total_known = true;
    }
    objects_.emplace(o.object_id, p);
  }
  if (objects_.size() != n_objects_) throw ts_error("ticket: duplicate object ids");
}

void transfer_ticket::check_failed_locked() {
  if (failed_) throw ticket_error(error_);
}

void transfer_ticket::set_structured_total(uint64_t object_id, uint64_t bytes) {
  auto g = ctx_.monitor();
  auto& p = objects_.at(object_id);
  p.total = bytes;
  p.total_known = true;
}

void transfer_ticket::add_staged(uint64_t object_id, uint64_t object_offset,
                                 std::span<const std::byte> data) {
  auto g = ctx_.monitor();
  auto& p = objects_.at(object_id);
  if (p.staged != object_offset) throw ts_error("ticket: out-of-order staging for one object");
  p.checksum_state = fnv1a64(data, p.checksum_state);
  p.staged += data.size();
  if (p.total_known && p.staged == p.total && !p.is_staged) {
    p.is_staged = true;
    ++staged_count_;
    ctx_.notify_all(g, changed_);
  }
}

void transfer_ticket::add_persisted(uint64_t object_id, uint64_t bytes) {
  auto g = ctx_.monitor();
  auto& p = objects_.at(object_id);
  p.persisted += bytes;
  if (p.total_known && p.persisted == p.total && !p.is_persisted) {
    if (!p.is_staged) throw ts_error("ticket: object persisted before staged");
    p.is_persisted = true;
    ++persisted_count_;
  }
}

void transfer_ticket::files_finalized_step() {
  auto g = ctx_.monitor();
  ++files_finalized_;
  if (files_finalized_ == n_files_) {
    all_persisted_ = true;
    ctx_.notify_all(g, changed_);
  }
}

void transfer_ticket::fail(const std::string& message) {
  auto g = ctx_.monitor();
  if (!failed_) {
    failed_ = true;
    error_ = message;
  }
  ctx_.notify_all(g, changed_);
}

int64_t transfer_ticket::wait_snapshot() {
  auto g = ctx_.monitor();
  const int64_t t0 = ctx_.now_ns();
  while (!failed_ && staged_count_ < n_objects_) ctx_.wait(g, changed_);
  check_failed_locked();
  return ctx_.now_ns() - t0;
}

int64_t transfer_ticket::wait_persisted() {
  auto g = ctx_.monitor();
  const int64_t t0 = ctx_.now_ns();
  while (!failed_ && !(all_persisted_ || n_files_ == 0)) ctx_.wait(g, changed_);
  check_failed_locked();
  return ctx_.now_ns() - t0;
}

bool transfer_ticket::snapshot_done() {
  auto g = ctx_.monitor();
  return staged_count_ == n_objects_ && !failed_;
}

bool transfer_ticket::persisted_done() {
  auto g = ctx_.monitor();
  return (all_persisted_ || n_files_ == 0) && !failed_;
}

bool transfer_ticket::failed() {
  auto g = ctx_.monitor();
  return failed_;
}

uint64_t transfer_ticket::object_checksum(uint64_t object_id) {
  auto g = ctx_.monitor();
  return objects_.at(object_id).checksum_state;
}

uint64_t transfer_ticket::total_bytes() {
  auto g = ctx_.monitor();
  uint64_t n = 0;
  for (const auto& [oid, p] : objects_) n += p.total;
  return n;
}

uint64_t transfer_ticket::raw_bytes() {
  auto g = ctx_.monitor();
  uint64_t n = 0;
  for (const auto& [oid, p] : objects_)
    if (p.kind == object_kind::raw_buffer) n += p.total;
  return n;
}

uint64_t transfer_ticket::serialized_bytes() {
  auto g = ctx_.monitor();
  uint64_t n = 0;
  for (const auto& [oid, p] : objects_)
    if (p.kind == object_kind::structured) n += p.total;
  return n;
}

throughput_result effective_throughput(uint64_t bytes, int64_t blocked_ns, int64_t floor_ns) {
  throughput_result r;
  r.bytes = bytes;
  r.blocked_ns = blocked_ns;
  const int64_t denom = std::max<int64_t>(blocked_ns, std::max<int64_t>(floor_ns, 1));
  r.floored = blocked_ns < denom;
  r.bytes_per_sec = static_cast<double>(bytes) * ns_per_sec / static_cast<double>(denom);
  return r;
}

}  // namespace tierstream
