// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/simulator.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <sstream>

namespace tierstream {

double run_report::mean_iteration_s() const {
  if (iterations.empty()) return 0.0;
  int64_t total = 0;
  for (const auto& it : iterations)
    total += it.forward_ns + it.backward_ns + it.update_ns + it.issue_block_ns +
             it.barrier_block_ns;
  return static_cast<double>(total) / static_cast<double>(iterations.size()) / ns_per_sec;
}

double run_report::mean_throughput_bytes_per_sec() const {
  if (checkpoints.empty()) return 0.0;
  double total = 0.0;
  for (const auto& c : checkpoints) total += c.throughput_bytes_per_sec;
  return total / static_cast<double>(checkpoints.size());
}

tlv::value run_report::summary() const {
  tlv::map m;
  m.emplace("strategy", tlv::value(strategy_name(strategy)));
  m.emplace("n_iters", tlv::value(n_iters));
  m.emplace("ckpt_interval", tlv::value(ckpt_interval));
  m.emplace("n_ranks", tlv::value(n_ranks));
  m.emplace("end_to_end_ns", tlv::value(end_to_end_ns));
  m.emplace("n_checkpoints", tlv::value(static_cast<int64_t>(checkpoints.size())));
  int64_t issue = 0, barrier = 0;
  for (const auto& r : ranks) {
    issue += r.issue_block_ns;
    barrier += r.barrier_block_ns;
  }
  m.emplace("issue_block_ns_total", tlv::value(issue));
  m.emplace("barrier_block_ns_total", tlv::value(barrier));
  uint64_t bytes = 0;
  for (const auto& c : checkpoints) bytes += c.bytes;
  m.emplace("checkpoint_bytes_total", tlv::value(bytes));
  m.emplace("mean_effective_throughput_bytes_per_sec",
            tlv::value(mean_throughput_bytes_per_sec()));
  return tlv::value(std::move(m));
}

std::string run_report::iterations_csv() const {
  std::ostringstream os;
  os << "rank_id,iteration,forward_ns,backward_ns,update_ns,issue_block_ns,barrier_block_ns,"
        "checkpoint_id\n";
  for (const auto& it : iterations) {
    os << it.rank_id << ',' << it.iteration << ',' << it.forward_ns << ',' << it.backward_ns
       << ',' << it.update_ns << ',' << it.issue_block_ns << ',' << it.barrier_block_ns << ','
       << it.checkpoint_id << '\n';
  }
  return os.str();
}

namespace {

uint64_t hash_raw_payloads(const rank_state& rank) {
  uint64_t h = fnv1a64_seed;
  for (const auto& o : rank.objects)
    if (o.is_raw()) h = fnv1a64(o.payload, h);
  return h;
}

struct rank_outcome {
  rank_totals totals;
  std::vector<iteration_record> iterations;
  std::vector<std::pair<uint64_t, std::shared_ptr<transfer_ticket>>> tickets;
  std::vector<timeline_event> events;
};

}  // namespace

run_report run_training(exec_context& ctx, shard_layout& layout, const phase_profile& profile,
                        const engine_config& cfg, const run_options& opts) {
  if (opts.n_iters < 1) throw ts_error("run: n_iters must be >= 1");
  if (opts.ckpt_interval < 1) throw ts_error("run: ckpt_interval must be >= 1");
  if (opts.dir.empty()) throw ts_error("run: output directory not set");

  for (auto& rank : layout.ranks) {
    bool materialized = true;
    for (const auto& o : rank.objects)
      if (o.is_raw() && o.payload.size() != o.size_bytes) materialized = false;
    if (!materialized) materialize_payloads(rank);
  }

  const int n_ckpts = opts.n_iters / opts.ckpt_interval;
  std::vector<std::unique_ptr<checkpoint_session>> sessions;
  sessions.reserve(static_cast<size_t>(n_ckpts));
  for (int j = 0; j < n_ckpts; ++j) {
    const uint64_t id = static_cast<uint64_t>(j) + 1;
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_%06llu", static_cast<unsigned long long>(id));
    sessions.push_back(std::make_unique<checkpoint_session>(
        ctx, opts.dir / name, id, id * static_cast<uint64_t>(opts.ckpt_interval), layout));
  }

  std::unique_ptr<staging_cache> shared;
  if (opts.shared_cache) shared = std::make_unique<staging_cache>(ctx, cfg.staging_capacity_bytes);

  const int64_t t_start = ctx.now_ns();
  std::mutex collect_mu;
  std::vector<rank_outcome> outcomes(layout.ranks.size());

  std::vector<scoped_task> tasks;
  tasks.reserve(layout.ranks.size());
  for (size_t i = 0; i < layout.ranks.size(); ++i) {
    tasks.push_back({layout.ranks[i].rank_id, 0, [&ctx, &layout, &profile, &cfg, &opts, &sessions,
                                                  &shared, &collect_mu, &outcomes, t_start, i] {
      rank_state& rank = layout.ranks[i];
      rank_outcome out;
      out.totals.rank_id = rank.rank_id;
      checkpoint_engine engine(ctx, cfg, rank.rank_id, shared.get());
      std::shared_ptr<transfer_ticket> pending;
      try {
        for (int iter = 1; iter <= opts.n_iters; ++iter) {
          iteration_record rec;
          rec.rank_id = rank.rank_id;
          rec.iteration = static_cast<uint64_t>(iter);
          const uint64_t h_before = opts.check_immutability ? hash_raw_payloads(rank) : 0;
          ctx.sleep_ns(profile.t_forward_ns);
          ctx.sleep_ns(profile.t_backward_ns);
          if (opts.check_immutability && hash_raw_payloads(rank) != h_before)
            throw ts_error("state mutated during forward/backward");
          rec.forward_ns = profile.t_forward_ns;
          rec.backward_ns = profile.t_backward_ns;
          if (!opts.skip_update_barrier)
            rec.barrier_block_ns = engine.pre_update_barrier(pending);
          mutate_update_step(rank, static_cast<uint64_t>(iter));
          ctx.sleep_ns(profile.t_update_ns);
          rec.update_ns = profile.t_update_ns;
          if (iter % opts.ckpt_interval == 0) {
            auto& session = *sessions[static_cast<size_t>(iter / opts.ckpt_interval) - 1];
            auto ticket = engine.issue_checkpoint(session, rank, static_cast<uint64_t>(iter));
            rec.issue_block_ns = ticket->issue_block_ns;
            rec.checkpoint_id = session.checkpoint_id();
            out.tickets.emplace_back(session.checkpoint_id(), ticket);
            pending = ticket;
          }
          out.totals.phases_ns += rec.forward_ns + rec.backward_ns + rec.update_ns;
          out.totals.issue_block_ns += rec.issue_block_ns;
          out.totals.barrier_block_ns += rec.barrier_block_ns;
          out.iterations.push_back(rec);
        }
        // Drain: all background flushes, footers and manifests count toward
        // end-to-end time.
        const int64_t t_after_iters = ctx.now_ns();
        for (auto& [cid, t] : out.tickets) t->wait_persisted();
        for (auto& s : sessions) s->wait_complete();
        out.totals.drain_ns = ctx.now_ns() - t_after_iters;
        out.totals.end_ns = ctx.now_ns() - t_start;
      } catch (...) {
        engine.shutdown();
        {
          std::lock_guard<std::mutex> g(collect_mu);
          out.events = engine.timeline();
          outcomes[i] = std::move(out);
        }
        throw;
      }
      engine.shutdown();
      out.events = engine.timeline();
      std::lock_guard<std::mutex> g(collect_mu);
      outcomes[i] = std::move(out);
    }});
  }
  run_tasks(ctx, std::move(tasks));

  run_report report;
  report.strategy = cfg.strategy;
  report.n_iters = opts.n_iters;
  report.ckpt_interval = opts.ckpt_interval;
  report.n_ranks = static_cast<int>(layout.ranks.size());
  for (auto& out : outcomes) {
    report.ranks.push_back(out.totals);
    report.iterations.insert(report.iterations.end(), out.iterations.begin(),
                             out.iterations.end());
    report.timeline.insert(report.timeline.end(), out.events.begin(), out.events.end());
    report.end_to_end_ns = std::max(report.end_to_end_ns, out.totals.end_ns);
  }
  std::stable_sort(report.iterations.begin(), report.iterations.end(),
                   [](const iteration_record& a, const iteration_record& b) {
                     if (a.iteration != b.iteration) return a.iteration < b.iteration;
                     return a.rank_id < b.rank_id;
                   });
  std::stable_sort(report.timeline.begin(), report.timeline.end(),
                   [](const timeline_event& a, const timeline_event& b) {
                     if (a.t_start_ns != b.t_start_ns) return a.t_start_ns < b.t_start_ns;
                     if (a.rank_id != b.rank_id) return a.rank_id < b.rank_id;
                     return a.t_end_ns < b.t_end_ns;
                   });

  // Per-checkpoint metrics: global bytes over the slowest rank's blocked
  // time for that checkpoint.
  std::map<uint64_t, checkpoint_metric> metrics;
  for (const auto& out : outcomes) {
    for (const auto& [cid, ticket] : out.tickets) {
      auto& m = metrics[cid];
      m.checkpoint_id = cid;
      m.bytes += ticket->total_bytes();
      m.raw_bytes += ticket->raw_bytes();
      m.serialized_bytes += ticket->serialized_bytes();
      m.blocked_ns =
          std::max(m.blocked_ns, ticket->issue_block_ns + ticket->barrier_block_ns);
    }
  }
  for (auto& [cid, m] : metrics) {
    const auto tp = effective_throughput(m.bytes, m.blocked_ns, cfg.launch_overhead_ns);
    m.throughput_bytes_per_sec = tp.bytes_per_sec;
    m.floored = tp.floored;
    report.checkpoints.push_back(m);
  }
  return report;
}

std::vector<dp_sweep_row> dp_sweep(const model_spec& spec, int tp, int pp,
                                   const std::vector<int>& dp_list, const engine_config& cfg,
                                   const phase_profile& profile, const run_options& base_opts,
                                   uint64_t seed, uint64_t metadata_bytes) {
  if (dp_list.empty()) throw ts_error("dp_sweep: empty dp list");
  std::vector<dp_sweep_row> rows;
  for (int dp : dp_list) {
    layout_options lo;
    lo.metadata_bytes = metadata_bytes;
    auto layout = generate_layout(spec, tp, pp, dp, /*zero1=*/true, seed, lo);

    sim_context ctx;
    run_options opts = base_opts;
    opts.dir = base_opts.dir / ("dp_" + std::to_string(dp));
    auto report = run_training(ctx, layout, profile, cfg, opts);

    dp_sweep_row row;
    row.dp = dp;
    row.n_ranks = static_cast<int>(layout.ranks.size());
    row.total_raw_bytes = layout.total_raw_bytes();
    row.total_param_bytes = layout.total_param_bytes();
    row.total_optimizer_bytes = layout.total_optimizer_bytes();
    double meta = 0.0;
    for (const auto& r : layout.ranks) {
      row.mean_rank_param_bytes += static_cast<double>(r.param_bytes());
      row.mean_rank_optimizer_bytes += static_cast<double>(r.optimizer_bytes());
      meta += static_cast<double>(metadata_bytes);
    }
    row.mean_rank_param_bytes /= row.n_ranks;
    row.mean_rank_optimizer_bytes /= row.n_ranks;
    row.mean_rank_metadata_bytes = meta / row.n_ranks;
    for (const auto& c : report.checkpoints) row.max_blocked_ns = std::max(row.max_blocked_ns, c.blocked_ns);
    row.throughput_bytes_per_sec = report.mean_throughput_bytes_per_sec();
    rows.push_back(row);
  }
  return rows;
}

namespace {

shard_layout single_object_layout(uint64_t size_bytes, int n_ranks, tier residency,
                                  uint64_t seed) {
  shard_layout layout;
  layout.spec = {size_bytes, 1, 0};
  layout.seed = seed;
  for (int r = 0; r < n_ranks; ++r) {
    rank_state rank;
    rank.rank_id = r;
    rank.seed = seed;
    rank.metadata_bytes = 0;
    state_object obj;
    obj.object_id = static_cast<uint64_t>(r) + 1;
    obj.kind = object_kind::raw_buffer;
    obj.residency = residency;
    obj.precision = precision_tag::fp16;
    obj.file_id = file_params;
    obj.size_bytes = size_bytes;
    obj.size_known = true;
    obj.pattern_space = 0x4000000000000000ull + static_cast<uint64_t>(r);
    rank.objects.push_back(std::move(obj));
    rank.file_ids.push_back(file_params);
    layout.ranks.push_back(std::move(rank));
  }
  return layout;
}

}  // namespace

std::vector<microbench_row> microbench_flush(const std::vector<uint64_t>& sizes,
                                             const engine_config& cfg, int n_ranks,
                                             const std::filesystem::path& dir, bench_mode mode) {
  if (sizes.empty()) throw ts_error("microbench: no sizes");
  for (uint64_t s : sizes)
    if (s == 0) throw ts_error("microbench: sizes must be positive");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ts_error("microbench: cannot create output dir " + dir.string());

  std::vector<microbench_row> rows;
  for (uint64_t size : sizes) {
    microbench_row row;
    row.size_bytes = size;
    for (int ideal = 0; ideal < 2; ++ideal) {
      auto layout = single_object_layout(size, n_ranks, ideal ? tier::host : tier::device,
                                         /*seed=*/7);
      run_options opts;
      opts.n_iters = 1;
      opts.ckpt_interval = 1;
      opts.dir = dir / (std::string(ideal ? "ideal_" : "staged_") + std::to_string(size));
      phase_profile quiet{0, 0, 0};
      run_report report;
      if (mode == bench_mode::simulated) {
        sim_context ctx;
        report = run_training(ctx, layout, quiet, cfg, opts);
      } else {
        wall_context ctx;
        report = run_training(ctx, layout, quiet, cfg, opts);
      }
      const double total_bytes = static_cast<double>(size) * n_ranks;
      const double seconds = static_cast<double>(report.end_to_end_ns) / ns_per_sec;
      const double tput = seconds > 0 ? total_bytes / seconds : 0.0;
      if (ideal)
        row.ideal_bytes_per_sec = tput;
      else
        row.staged_bytes_per_sec = tput;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string dp_sweep_csv(const std::vector<dp_sweep_row>& rows) {
  std::ostringstream os;
  os << "dp,n_ranks,total_raw_bytes,total_param_bytes,total_optimizer_bytes,"
        "mean_rank_param_bytes,mean_rank_optimizer_bytes,mean_rank_metadata_bytes,"
        "max_blocked_ns,throughput_bytes_per_sec\n";
  for (const auto& r : rows) {
    os << r.dp << ',' << r.n_ranks << ',' << r.total_raw_bytes << ',' << r.total_param_bytes
       << ',' << r.total_optimizer_bytes << ',' << r.mean_rank_param_bytes << ','
       << r.mean_rank_optimizer_bytes << ',' << r.mean_rank_metadata_bytes << ','
       << r.max_blocked_ns << ',' << r.throughput_bytes_per_sec << '\n';
  }
  return os.str();
}

std::string microbench_csv(const std::vector<microbench_row>& rows) {
  std::ostringstream os;
  os << "size_bytes,staged_bytes_per_sec,ideal_bytes_per_sec\n";
  for (const auto& r : rows)
    os << r.size_bytes << ',' << r.staged_bytes_per_sec << ',' << r.ideal_bytes_per_sec << '\n';
  return os.str();
}

}  // namespace tierstream
