// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/engine.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstring>

namespace tierstream {

const char* strategy_name(strategy_kind k) {
  switch (k) {
    case strategy_kind::sync:
      return "sync";
    case strategy_kind::two_phase:
      return "two_phase";
    case strategy_kind::lazy:
      return "lazy";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// checkpoint_session

namespace {
std::string rank_dir_name(int rank_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rank_%04d", rank_id);
  return buf;
}
}  // namespace

checkpoint_session::checkpoint_session(exec_context& ctx, std::filesystem::path dir,
                                       uint64_t checkpoint_id, uint64_t iteration,
                                       const shard_layout& layout)
    : ctx_(ctx),
      dir_(std::move(dir)),
      checkpoint_id_(checkpoint_id),
      iteration_(iteration),
      n_ranks_(static_cast<int>(layout.ranks.size())) {
  manifest_.checkpoint_id = checkpoint_id;
  manifest_.iteration = iteration;
  manifest_.tp = layout.tp;
  manifest_.pp = layout.pp;
  manifest_.dp = layout.dp;
  manifest_.zero1 = layout.zero1;
  manifest_.seed = layout.seed;
  manifest_.n_params = layout.spec.n_params;
  manifest_.layers = layout.spec.layers;
  manifest_.metadata_bytes = layout.options.metadata_bytes;
  std::filesystem::create_directories(dir_);
}

checkpoint_session::checkpoint_session(exec_context& ctx, std::filesystem::path dir,
                                       uint64_t checkpoint_id, uint64_t iteration, int n_ranks)
    : ctx_(ctx),
      dir_(std::move(dir)),
      checkpoint_id_(checkpoint_id),
      iteration_(iteration),
      n_ranks_(n_ranks) {
  manifest_.checkpoint_id = checkpoint_id;
  manifest_.iteration = iteration;
  std::filesystem::create_directories(dir_);
}

std::filesystem::path checkpoint_session::rank_dir(int rank_id) const {
  return dir_ / rank_dir_name(rank_id);
}

std::filesystem::path checkpoint_session::manifest_path() const { return dir_ / "MANIFEST.tlv"; }

void checkpoint_session::register_rank(manifest_rank_info info) {
  auto g = ctx_.monitor();
  manifest_.ranks.push_back(std::move(info));
}

void checkpoint_session::rank_persisted(uint64_t bytes, uint64_t pace_bandwidth) {
  bool last = false;
  {
    auto g = ctx_.monitor();
    total_bytes_ += bytes;
    if (++ranks_done_ == n_ranks_) last = true;
  }
  if (!last) return;
  // Manifest-last commit order: every footer is durable by now.
  manifest_.complete = true;
  std::sort(manifest_.ranks.begin(), manifest_.ranks.end(),
            [](const manifest_rank_info& a, const manifest_rank_info& b) {
              return a.rank_id < b.rank_id;
            });
  write_manifest(manifest_path(), manifest_);
  const uint64_t manifest_bytes = std::filesystem::file_size(manifest_path());
  ctx_.pace_ns(transfer_ns(manifest_bytes, pace_bandwidth));
  {
    auto g = ctx_.monitor();
    complete_ = true;
    ctx_.notify_all(g, changed_);
  }
}

void checkpoint_session::wait_complete() {
  auto g = ctx_.monitor();
  while (!complete_) ctx_.wait(g, changed_);
}

bool checkpoint_session::complete() {
  auto g = ctx_.monitor();
  return complete_;
}

uint64_t checkpoint_session::total_bytes() {
  auto g = ctx_.monitor();
  return total_bytes_;
}

// ---------------------------------------------------------------------------
// checkpoint_engine internals

struct checkpoint_engine::ckpt_job {
  uint64_t checkpoint_id = 0;
  uint64_t iteration = 0;
  checkpoint_session* session = nullptr;
  std::shared_ptr<transfer_ticket> ticket;
  layout_plan plan;
  std::map<uint32_t, std::unique_ptr<checkpoint_file_writer>> writers;
  std::unique_ptr<composite_provider> stream;
  serialized_chunk_source* ser_src = nullptr;
  std::vector<state_object*> structured;
  int pending_serializers = 0;

  bool gate_open = false;
  bool stream_done = false;
  bool failed = false;
  bool rank_reported = false;

  struct file_progress {
    uint64_t enqueued = 0;
    uint64_t written = 0;
    bool finalized = false;
    bool finalizing = false;
    std::vector<footer_entry> append_entries;
  };
  std::map<uint32_t, file_progress> files;
  size_t files_done = 0;
};

struct checkpoint_engine::pool_entry {
  enum class kind_t { flush, serialize };
  kind_t kind = kind_t::flush;
  std::shared_ptr<ckpt_job> job;
  // flush work
  staging_cache::region region;
  uint64_t object_id = 0;
  uint64_t object_offset = 0;
  uint64_t length = 0;
  uint32_t file_id = 0;
  placement place;
  // serialize work
  state_object* obj = nullptr;
};

checkpoint_engine::checkpoint_engine(exec_context& ctx, engine_config config, int rank_id,
                                     staging_cache* shared_cache)
    : ctx_(ctx), config_(std::move(config)), rank_id_(rank_id) {
  if (config_.flush_workers < 1) throw ts_error("engine: need at least one flush worker");
  if (shared_cache) {
    cache_ = shared_cache;
  } else {
    owned_cache_ = std::make_unique<staging_cache>(ctx_, config_.staging_capacity_bytes);
    cache_ = owned_cache_.get();
  }

  // Spawn the copier and the flush pool; wait until every thread has
  // registered with the context so the virtual schedule cannot depend on
  // thread startup timing.
  std::mutex mu;
  std::condition_variable cv;
  int registered = 0;
  const int total = 1 + config_.flush_workers;
  tasks_live_ = total;
  auto spawn = [&](int lane, std::function<void()> body) {
    threads_.emplace_back([&, lane, body = std::move(body)] {
      ctx_.attach(rank_id_, lane);
      {
        std::lock_guard<std::mutex> g(mu);
        ++registered;
      }
      cv.notify_one();
      ctx_.enter();
      body();
      {
        auto g = ctx_.monitor();
        --tasks_live_;
      }
      ctx_.detach();
    });
  };
  spawn(1, [this] { copier_loop(); });
  for (int w = 0; w < config_.flush_workers; ++w) spawn(2 + w, [this, w] { worker_loop(w); });
  std::unique_lock<std::mutex> g(mu);
  cv.wait(g, [&] { return registered == total; });
}

checkpoint_engine::~checkpoint_engine() { shutdown(); }

void checkpoint_engine::shutdown() {
  {
    auto g = ctx_.monitor();
    if (stopping_) {
      // Second call: threads may already be gone.
    }
    stopping_ = true;
    ctx_.notify_all(g, work_);
  }
  if (ctx_.simulated() && ctx_.attached()) {
    // Let the engine tasks run their exits before joining them.
    for (;;) {
      {
        auto g = ctx_.monitor();
        if (tasks_live_ == 0) break;
      }
      ctx_.yield();
    }
  }
  for (auto& t : threads_)
    if (t.joinable()) t.join();
  threads_.clear();
}

void checkpoint_engine::record_event(timeline_event e) {
  auto g = ctx_.monitor();
  events_.push_back(e);
}

std::vector<timeline_event> checkpoint_engine::timeline() {
  auto g = ctx_.monitor();
  return events_;
}

// --- copier ----------------------------------------------------------------

void checkpoint_engine::copier_loop() {
  for (;;) {
    std::shared_ptr<ckpt_job> job;
    {
      auto g = ctx_.monitor();
      while (!stopping_ && job_queue_.empty()) ctx_.wait(g, work_);
      if (job_queue_.empty() && stopping_) return;
      job = job_queue_.front();
      job_queue_.pop_front();
    }
    consume_stream(job);
  }
}

void checkpoint_engine::consume_stream(const std::shared_ptr<ckpt_job>& job) {
  auto& ticket = *job->ticket;
  try {
    while (auto chunk = job->stream->next_chunk()) {
      const auto deadline =
          config_.cache_acquire_timeout_ns
              ? std::optional<int64_t>(ctx_.now_ns() + *config_.cache_acquire_timeout_ns)
              : std::nullopt;
      staging_cache::region region = cache_->acquire(chunk->length, deadline);
      std::memcpy(cache_->data(region).data(), chunk->data.data(), chunk->length);
      if (chunk->source_tier == tier::device) {
        const int64_t t0 = ctx_.now_ns();
        ctx_.pace_ns(device_copy_ns(*chunk, config_.d2h_bandwidth));
        record_event({job->checkpoint_id, rank_id_, chunk->object_id, op_kind::stage, t0,
                      ctx_.now_ns(), chunk->length});
      }
      // Host-resident bytes are stabilized into the cache without a paced
      // copy; the flush path applies uniform release semantics either way.
      ticket.add_staged(chunk->object_id, chunk->object_offset, cache_->data(region));
      {
        auto g = ctx_.monitor();
        pool_entry e;
        e.kind = pool_entry::kind_t::flush;
        e.job = job;
        e.region = region;
        e.object_id = chunk->object_id;
        e.object_offset = chunk->object_offset;
        e.length = chunk->length;
        e.file_id = chunk->place.file_id;
        e.place = chunk->place;
        pool_queue_.push_back(std::move(e));
        job->files[chunk->place.file_id].enqueued += 1;
        ctx_.notify_all(g, work_);
      }
    }
  } catch (const std::exception& e) {
    {
      auto g = ctx_.monitor();
      job->failed = true;
      job->gate_open = true;  // drain queued chunks so regions are released
      ctx_.notify_all(g, work_);
    }
    ticket.fail(std::string("staging failed: ") + e.what());
  }
  {
    auto g = ctx_.monitor();
    job->stream_done = true;
  }
  maybe_finalize_files(job);
}

// --- flush pool ------------------------------------------------------------

void checkpoint_engine::worker_loop(int) {
  for (;;) {
    pool_entry entry;
    bool have = false;
    {
      auto g = ctx_.monitor();
      for (;;) {
        auto it = std::find_if(pool_queue_.begin(), pool_queue_.end(), [](const pool_entry& e) {
          return e.kind == pool_entry::kind_t::serialize || e.job->gate_open;
        });
        if (it != pool_queue_.end()) {
          entry = std::move(*it);
          pool_queue_.erase(it);
          have = true;
          break;
        }
        if (stopping_) break;
        ctx_.wait(g, work_);
      }
    }
    if (!have) return;
    if (entry.kind == pool_entry::kind_t::serialize) {
      run_serializer(entry.job, entry.obj, false);
    } else {
      auto job = entry.job;
      handle_flush(job, std::move(entry));
    }
  }
}

void checkpoint_engine::run_serializer(const std::shared_ptr<ckpt_job>& job, state_object* obj,
                                       bool on_training_thread) {
  (void)on_training_thread;
  auto& ticket = *job->ticket;
  std::vector<std::byte> encoded;
  try {
    encoded = encode_structured(*obj);
  } catch (const stream_error& e) {
    auto g = ctx_.monitor();
    job->ser_src->fail(e.object_id, e.what());
    job->failed = true;
    job->gate_open = true;
    ctx_.notify_all(g, work_);
    g.unlock();
    ticket.fail(e.what());
    return;
  }
  const uint64_t total = encoded.size();
  ticket.set_structured_total(obj->object_id, total);
  const uint64_t chunk = std::min(config_.serialized_chunk_bytes, cache_->capacity_bytes());
  std::vector<std::byte>* buffer = nullptr;
  job->stream->produce(*job->ser_src,
                       [&] { buffer = &job->ser_src->add_buffer(std::move(encoded)); });
  uint64_t off = 0;
  while (off < total) {
    const uint64_t len = std::min(chunk, total - off);
    const int64_t t0 = ctx_.now_ns();
    ctx_.pace_ns(transfer_ns(len, config_.serialize_bandwidth));
    record_event({job->checkpoint_id, rank_id_, obj->object_id, op_kind::serialize, t0,
                  ctx_.now_ns(), len});
    chunk_descriptor c;
    c.object_id = obj->object_id;
    c.object_offset = off;
    c.length = len;
    c.source_tier = tier::host;
    c.kind = object_kind::structured;
    c.data = std::span<const std::byte>(buffer->data() + off, len);
    c.place = {placement_kind::append, obj->file_id, 0};
    c.last_of_object = off + len == total;
    job->stream->produce(*job->ser_src, [&] { job->ser_src->push(c); });
    off += len;
  }
  job->stream->produce(*job->ser_src, [&] {
    if (--job->pending_serializers == 0) job->ser_src->finish();
  });
}

void checkpoint_engine::handle_flush(const std::shared_ptr<ckpt_job>& job, pool_entry entry) {
  auto& ticket = *job->ticket;
  bool failed_now = false;
  {
    auto g = ctx_.monitor();
    failed_now = job->failed;
  }
  if (!failed_now) {
    try {
      auto bytes = std::span<const std::byte>(cache_->data(entry.region));
      auto& writer = *job->writers.at(entry.file_id);
      const int64_t t0 = ctx_.now_ns();
      if (entry.place.kind == placement_kind::fixed) {
        writer.write_fixed(entry.place.file_offset, bytes);
      } else {
        const uint64_t off = writer.append_chunk(bytes);
        auto g = ctx_.monitor();
        footer_entry fe;
        fe.object_id = entry.object_id;
        fe.kind = 1;
        fe.file_offset = off;
        fe.length = entry.length;
        fe.object_offset_base = entry.object_offset;
        job->files[entry.file_id].append_entries.push_back(fe);
      }
      ctx_.pace_ns(transfer_ns(entry.length, config_.flush_bandwidth));
      record_event({job->checkpoint_id, rank_id_, entry.object_id, op_kind::flush, t0,
                    ctx_.now_ns(), entry.length});
      ticket.add_persisted(entry.object_id, entry.length);
    } catch (const std::exception& e) {
      {
        auto g = ctx_.monitor();
        job->failed = true;
      }
      ticket.fail(std::string("flush failed: ") + e.what());
      failed_now = true;
    }
  }
  // No staged byte outlives its write: release happens after the write
  // completed (or the job failed and the bytes will never be written).
  cache_->release(entry.region);
  {
    auto g = ctx_.monitor();
    job->files[entry.file_id].written += 1;
  }
  maybe_finalize_files(job);
}

void checkpoint_engine::maybe_finalize_files(const std::shared_ptr<ckpt_job>& job) {
  for (;;) {
    uint32_t file_id = 0;
    bool found = false;
    {
      auto g = ctx_.monitor();
      if (!job->stream_done || job->failed) break;
      for (auto& [fid, fp] : job->files) {
        if (!fp.finalized && !fp.finalizing && fp.written == fp.enqueued) {
          fp.finalizing = true;
          file_id = fid;
          found = true;
          break;
        }
      }
    }
    if (!found) break;
    auto g = ctx_.monitor();
    finalize_file_locked(g, job, file_id);
  }

  bool report = false;
  {
    auto g = ctx_.monitor();
    if (!job->rank_reported && job->stream_done && !job->failed &&
        job->files_done == job->files.size()) {
      job->rank_reported = true;
      report = true;
    }
  }
  if (report && job->session)
    job->session->rank_persisted(job->ticket->total_bytes(), config_.flush_bandwidth);
}

void checkpoint_engine::finalize_file_locked(std::unique_lock<std::mutex>& g,
                                             const std::shared_ptr<ckpt_job>& job,
                                             uint32_t file_id) {
  // Assemble the entry table: raw objects from the plan's fixed
  // assignments, serialized objects from the recorded appends, checksums
  // from the staging-side accumulators.
  std::vector<footer_entry> entries;
  const file_layout& fl = job->plan.file(file_id);
  for (const auto& fa : fl.fixed) {
    footer_entry fe;
    fe.object_id = fa.object_id;
    fe.kind = 0;
    fe.file_offset = fa.file_offset;
    fe.length = fa.length;
    fe.object_offset_base = 0;
    entries.push_back(fe);
  }
  auto& fp = job->files.at(file_id);
  entries.insert(entries.end(), fp.append_entries.begin(), fp.append_entries.end());
  g.unlock();
  for (auto& fe : entries) fe.checksum = job->ticket->object_checksum(fe.object_id);
  std::sort(entries.begin(), entries.end(),
            [](const footer_entry& a, const footer_entry& b) {
              return a.file_offset < b.file_offset;
            });
  try {
    auto& writer = *job->writers.at(file_id);
    writer.finalize(entries);
    const uint64_t footer_bytes = 8 + entries.size() * 41 + 16;
    ctx_.pace_ns(transfer_ns(footer_bytes, config_.flush_bandwidth));
  } catch (const std::exception& e) {
    {
      auto gg = ctx_.monitor();
      job->failed = true;
    }
    job->ticket->fail(std::string("finalize failed: ") + e.what());
    return;
  }
  job->ticket->files_finalized_step();
  {
    auto gg = ctx_.monitor();
    fp.finalized = true;
    job->files_done += 1;
  }
}

// --- issue / barrier ---------------------------------------------------------

std::shared_ptr<transfer_ticket> checkpoint_engine::issue_checkpoint(checkpoint_session& session,
                                                                     rank_state& rank,
                                                                     uint64_t iteration) {
  const int64_t t_issue = ctx_.now_ns();

  // A lazy engine cannot hold two device-consistent views: a new request
  // waits for the previous snapshot to complete.
  if (config_.strategy == strategy_kind::lazy && last_job_) last_job_->ticket->wait_snapshot();

  ctx_.pace_ns(config_.launch_overhead_ns);

  auto job = std::make_shared<ckpt_job>();
  job->checkpoint_id = session.checkpoint_id();
  job->iteration = iteration;
  job->session = &session;
  job->plan = plan_layout(rank.objects, config_.alignment);
  job->ticket = std::make_shared<transfer_ticket>(ctx_, session.checkpoint_id(), rank_id_,
                                                  rank.objects, job->plan.files.size());

  const auto rank_dir = session.rank_dir(rank_id_);
  std::filesystem::create_directories(rank_dir);
  manifest_rank_info info;
  info.rank_id = rank_id_;
  info.tp_idx = rank.tp_idx;
  info.pp_idx = rank.pp_idx;
  info.dp_idx = rank.dp_idx;
  for (const auto& [fid, fl] : job->plan.files) {
    const std::string name = "file_" + std::to_string(fid) + ".bin";
    job->writers.emplace(fid, std::make_unique<checkpoint_file_writer>(
                                  rank_dir / name, fl, job->plan.plan_hash(), config_.overwrite));
    job->files.try_emplace(fid);
    manifest_file_info fi;
    fi.file_id = fid;
    fi.relative_path = rank_dir_name(rank_id_) + "/" + name;
    for (const auto& o : rank.objects)
      if (o.file_id == fid) fi.object_ids.push_back(o.object_id);
    info.files.push_back(std::move(fi));
  }
  for (const auto& o : rank.objects)
    info.objects.push_back({o.object_id, o.kind, o.residency, o.precision, o.file_id});
  session.register_rank(std::move(info));

  for (auto& o : rank.objects)
    if (!o.is_raw()) job->structured.push_back(&o);
  job->pending_serializers = static_cast<int>(job->structured.size());

  const auto policy = config_.strategy == strategy_kind::sync ? serialize_first_policy()
                                                              : raw_first_policy();
  job->stream = std::make_unique<composite_provider>(ctx_, policy);
  const uint64_t raw_chunk = std::min(config_.raw_chunk_bytes, cache_->capacity_bytes());
  job->stream->add_raw(rank.objects, job->plan, raw_chunk);
  job->ser_src = &job->stream->add_serialized();
  if (job->pending_serializers == 0)
    job->stream->produce(*job->ser_src, [&] { job->ser_src->finish(); });

  job->gate_open = config_.strategy == strategy_kind::lazy;

  const bool inline_serialize =
      config_.strategy == strategy_kind::lazy && !config_.lazy_serialize_overlap;
  {
    auto g = ctx_.monitor();
    job_queue_.push_back(job);
    if (!inline_serialize) {
      for (state_object* obj : job->structured) {
        pool_entry e;
        e.kind = pool_entry::kind_t::serialize;
        e.job = job;
        e.obj = obj;
        pool_queue_.push_back(std::move(e));
      }
    }
    ctx_.notify_all(g, work_);
  }
  last_job_ = job;

  switch (config_.strategy) {
    case strategy_kind::sync: {
      job->ticket->wait_snapshot();
      {
        auto g = ctx_.monitor();
        job->gate_open = true;
        ctx_.notify_all(g, work_);
      }
      job->ticket->wait_persisted();
      break;
    }
    case strategy_kind::two_phase: {
      job->ticket->wait_snapshot();
      auto g = ctx_.monitor();
      job->gate_open = true;
      ctx_.notify_all(g, work_);
      break;
    }
    case strategy_kind::lazy: {
      if (inline_serialize)
        for (state_object* obj : job->structured) run_serializer(job, obj, true);
      break;
    }
  }
  job->ticket->issue_block_ns = ctx_.now_ns() - t_issue;
  return job->ticket;
}

int64_t checkpoint_engine::pre_update_barrier(const std::shared_ptr<transfer_ticket>& ticket) {
  if (!ticket) return 0;
  if (config_.strategy != strategy_kind::lazy) return 0;  // consistent at issue
  const int64_t t0 = ctx_.now_ns();
  ticket->wait_snapshot();
  const int64_t dt = ctx_.now_ns() - t0;
  record_event({ticket->checkpoint_id(), rank_id_, 0, op_kind::barrier, t0, ctx_.now_ns(), 0});
  ticket->barrier_block_ns += dt;
  return dt;
}

}  // namespace tierstream
