// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace tierstream {

// Execution context shared by every thread of a run. Two implementations:
//
//  * sim_context  - virtual time. Attached threads are scheduled
//    cooperatively, exactly one runs at a time, and the clock only advances
//    when every attached thread is blocked. Ready threads are granted in
//    (wake time, rank, lane) order, so identical inputs produce identical
//    event orderings and timestamps regardless of OS scheduling.
//  * wall_context - real time. Primitives map to std::chrono / real
//    condition variables; pace() is a no-op because real work already
//    takes real time.
//
// All blocking performed by engine code must go through this interface;
// a thread that blocks on a raw std::mutex would stall the virtual clock.

struct condition {
  std::condition_variable cv;       // wall mode
  std::vector<void*> waiters;       // sim mode, FIFO
};

class exec_context {
 public:
  virtual ~exec_context() = default;

  virtual bool simulated() const = 0;
  virtual int64_t now_ns() = 0;

  /// Model the passage of time for work whose real cost differs from its
  /// modeled cost (paced copies, paced writes). No-op in wall mode.
  virtual void pace_ns(int64_t dt) = 0;

  /// Sleep for `dt` in this context's time. Real sleep in wall mode.
  virtual void sleep_ns(int64_t dt) = 0;

  /// One global monitor protects all cross-thread engine state.
  virtual std::unique_lock<std::mutex> monitor() = 0;
  virtual void wait(std::unique_lock<std::mutex>& g, condition& c) = 0;
  /// Returns false when woken by the deadline rather than a notify.
  virtual bool wait_until(std::unique_lock<std::mutex>& g, condition& c, int64_t deadline_ns) = 0;
  virtual void notify_all(std::unique_lock<std::mutex>& g, condition& c) = 0;

  // Thread registration. A participating thread calls attach() once, then
  // enter() before touching shared state, and detach() before exiting.
  // hold()/release() bracket bulk spawning from a thread that is not itself
  // attached (nothing runs until release). (rank, lane) keys must be unique
  // among live tasks; simultaneous wakes are ordered by them.
  virtual void attach(int rank, int lane) = 0;
  virtual void enter() = 0;
  virtual void detach() = 0;
  virtual void hold() = 0;
  virtual void release() = 0;
  virtual void yield() = 0;
  virtual bool attached() const = 0;
};

class sim_context final : public exec_context {
 public:
  sim_context();
  ~sim_context() override;

  bool simulated() const override { return true; }
  int64_t now_ns() override;
  void pace_ns(int64_t dt) override;
  void sleep_ns(int64_t dt) override;
  std::unique_lock<std::mutex> monitor() override;
  void wait(std::unique_lock<std::mutex>& g, condition& c) override;
  bool wait_until(std::unique_lock<std::mutex>& g, condition& c, int64_t deadline_ns) override;
  void notify_all(std::unique_lock<std::mutex>& g, condition& c) override;
  void attach(int rank, int lane) override;
  void enter() override;
  void detach() override;
  void hold() override;
  void release() override;
  void yield() override;
  bool attached() const override;

 private:
  struct task;
  void block_and_reschedule(std::unique_lock<std::mutex>& g, task* t);
  void grant_best_locked();

  std::mutex mu_;
  int64_t now_ = 0;
  bool held_ = false;
  task* running_ = nullptr;
  std::vector<task*> tasks_;
  uint64_t ready_seq_ = 0;
};

class wall_context final : public exec_context {
 public:
  wall_context();

  bool simulated() const override { return false; }
  int64_t now_ns() override;
  void pace_ns(int64_t) override {}
  void sleep_ns(int64_t dt) override;
  std::unique_lock<std::mutex> monitor() override;
  void wait(std::unique_lock<std::mutex>& g, condition& c) override;
  bool wait_until(std::unique_lock<std::mutex>& g, condition& c, int64_t deadline_ns) override;
  void notify_all(std::unique_lock<std::mutex>& g, condition& c) override;
  void attach(int, int) override {}
  void enter() override {}
  void detach() override {}
  void hold() override {}
  void release() override {}
  void yield() override { std::this_thread::yield(); }
  bool attached() const override { return true; }

 private:
  std::mutex mu_;
  std::chrono::steady_clock::time_point t0_;
};

/// Spawns one thread per task, attaches each under the given (rank, lane)
/// key, runs the bodies to completion and joins. Exceptions thrown by task
/// bodies are captured and rethrown (first one wins) after all join.
struct scoped_task {
  int rank = 0;
  int lane = 0;
  std::function<void()> body;
};

void run_tasks(exec_context& ctx, std::vector<scoped_task> tasks);

}  // namespace tierstream
