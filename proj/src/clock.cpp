// Copyright (c) TierStream contributors.
// SPDX-License-Identifier: Apache-2.0

#include "tierstream/clock.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>

#include "tierstream/common.hpp"

namespace tierstream {

struct sim_context::task {
  enum class st { ready, running, sleeping, waiting };

  int rank = 0;
  int lane = 0;
  st state = st::ready;
  int64_t wake_ns = 0;          // sleeping, or waiting with a deadline
  bool has_deadline = false;
  bool timed_out = false;
  bool granted = false;
  // Scheduling order among ready tasks. Freshly attached tasks have no seq
  // yet; they are admitted in (rank, lane) order at the next scheduling
  // point so that racy thread startup cannot perturb the virtual order.
  bool has_seq = false;
  uint64_t ready_seq = 0;
  condition* wcond = nullptr;
  std::condition_variable cv;
};

namespace {
thread_local sim_context::task* tl_self = nullptr;
}

sim_context::sim_context() = default;

sim_context::~sim_context() {
  std::lock_guard<std::mutex> g(mu_);
  if (!tasks_.empty()) {
    std::fprintf(stderr, "sim_context destroyed with %zu attached tasks\n", tasks_.size());
    std::abort();
  }
}

int64_t sim_context::now_ns() {
  std::lock_guard<std::mutex> g(mu_);
  return now_;
}

std::unique_lock<std::mutex> sim_context::monitor() { return std::unique_lock<std::mutex>(mu_); }

void sim_context::attach(int rank, int lane) {
  auto* t = new task();
  t->rank = rank;
  t->lane = lane;
  std::lock_guard<std::mutex> g(mu_);
  tasks_.push_back(t);
  tl_self = t;
}

bool sim_context::attached() const { return tl_self != nullptr; }

void sim_context::enter() {
  task* t = tl_self;
  if (!t) throw ts_error("enter() without attach()");
  std::unique_lock<std::mutex> g(mu_);
  if (!running_ && !held_) grant_best_locked();
  t->cv.wait(g, [&] { return t->granted; });
  t->granted = false;
  t->state = task::st::running;
}

void sim_context::detach() {
  task* t = tl_self;
  if (!t) throw ts_error("detach() without attach()");
  std::unique_lock<std::mutex> g(mu_);
  tasks_.erase(std::find(tasks_.begin(), tasks_.end(), t));
  if (running_ == t) {
    running_ = nullptr;
    grant_best_locked();
  }
  tl_self = nullptr;
  g.unlock();
  delete t;
}

void sim_context::hold() {
  std::lock_guard<std::mutex> g(mu_);
  held_ = true;
}

void sim_context::release() {
  std::lock_guard<std::mutex> g(mu_);
  held_ = false;
  if (!running_) grant_best_locked();
}

void sim_context::yield() { sleep_ns(0); }

void sim_context::pace_ns(int64_t dt) { sleep_ns(dt); }

void sim_context::sleep_ns(int64_t dt) {
  task* t = tl_self;
  if (!t) throw ts_error("sleep_ns() from unattached thread");
  std::unique_lock<std::mutex> g(mu_);
  t->state = task::st::sleeping;
  t->wake_ns = now_ + std::max<int64_t>(dt, 0);
  block_and_reschedule(g, t);
}

void sim_context::wait(std::unique_lock<std::mutex>& g, condition& c) {
  task* t = tl_self;
  if (!t) throw ts_error("wait() from unattached thread");
  c.waiters.push_back(t);
  t->state = task::st::waiting;
  t->wcond = &c;
  t->has_deadline = false;
  block_and_reschedule(g, t);
}

bool sim_context::wait_until(std::unique_lock<std::mutex>& g, condition& c, int64_t deadline_ns) {
  task* t = tl_self;
  if (!t) throw ts_error("wait_until() from unattached thread");
  c.waiters.push_back(t);
  t->state = task::st::waiting;
  t->wcond = &c;
  t->has_deadline = true;
  t->wake_ns = deadline_ns;
  t->timed_out = false;
  block_and_reschedule(g, t);
  bool ok = !t->timed_out;
  t->timed_out = false;
  t->has_deadline = false;
  return ok;
}

void sim_context::notify_all(std::unique_lock<std::mutex>&, condition& c) {
  for (void* p : c.waiters) {
    auto* w = static_cast<task*>(p);
    w->state = task::st::ready;
    w->ready_seq = ++ready_seq_;
    w->has_seq = true;
    w->wcond = nullptr;
    w->has_deadline = false;
  }
  c.waiters.clear();
  // A notify from an unattached thread (e.g. the main thread shutting an
  // engine down) must restart the scheduler if everything was parked.
  if (!running_ && !held_) grant_best_locked();
}

void sim_context::block_and_reschedule(std::unique_lock<std::mutex>& g, task* t) {
  if (running_ == t) running_ = nullptr;
  grant_best_locked();
  t->cv.wait(g, [&] { return t->granted; });
  t->granted = false;
  t->state = task::st::running;
}

void sim_context::grant_best_locked() {
  if (held_ || running_) return;
  for (;;) {
    // Admit freshly attached tasks in (rank, lane) order; real thread
    // startup order must not leak into the schedule.
    std::vector<task*> fresh;
    for (task* t : tasks_)
      if (t->state == task::st::ready && !t->has_seq) fresh.push_back(t);
    std::sort(fresh.begin(), fresh.end(), [](const task* a, const task* b) {
      if (a->rank != b->rank) return a->rank < b->rank;
      return a->lane < b->lane;
    });
    for (task* t : fresh) {
      t->ready_seq = ++ready_seq_;
      t->has_seq = true;
    }

    task* best = nullptr;
    for (task* t : tasks_) {
      if (t->state != task::st::ready) continue;
      if (!best || t->ready_seq < best->ready_seq) best = t;
    }
    if (best) {
      running_ = best;
      best->granted = true;
      best->cv.notify_one();
      return;
    }
    // Nothing ready: advance the clock to the earliest sleeper or deadline.
    int64_t horizon = std::numeric_limits<int64_t>::max();
    for (task* t : tasks_) {
      if (t->state == task::st::sleeping ||
          (t->state == task::st::waiting && t->has_deadline)) {
        horizon = std::min(horizon, t->wake_ns);
      }
    }
    if (horizon == std::numeric_limits<int64_t>::max()) return;  // quiescent
    now_ = std::max(now_, horizon);
    // Wake in (wake_ns, rank, lane) order so simultaneous wakes are ordered
    // deterministically.
    std::vector<task*> due;
    for (task* t : tasks_) {
      if (t->state == task::st::sleeping && t->wake_ns <= now_) due.push_back(t);
      if (t->state == task::st::waiting && t->has_deadline && t->wake_ns <= now_)
        due.push_back(t);
    }
    std::sort(due.begin(), due.end(), [](const task* a, const task* b) {
      if (a->wake_ns != b->wake_ns) return a->wake_ns < b->wake_ns;
      if (a->rank != b->rank) return a->rank < b->rank;
      return a->lane < b->lane;
    });
    for (task* t : due) {
      if (t->state == task::st::waiting) {
        auto& ws = t->wcond->waiters;
        ws.erase(std::find(ws.begin(), ws.end(), t));
        t->wcond = nullptr;
        t->timed_out = true;
      }
      t->state = task::st::ready;
      t->ready_seq = ++ready_seq_;
      t->has_seq = true;
    }
  }
}

wall_context::wall_context() : t0_(std::chrono::steady_clock::now()) {}

int64_t wall_context::now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now() - t0_)
      .count();
}

void wall_context::sleep_ns(int64_t dt) {
  if (dt > 0) std::this_thread::sleep_for(std::chrono::nanoseconds(dt));
}

std::unique_lock<std::mutex> wall_context::monitor() { return std::unique_lock<std::mutex>(mu_); }

void wall_context::wait(std::unique_lock<std::mutex>& g, condition& c) { c.cv.wait(g); }

bool wall_context::wait_until(std::unique_lock<std::mutex>& g, condition& c, int64_t deadline_ns) {
  return c.cv.wait_until(g, t0_ + std::chrono::nanoseconds(deadline_ns)) ==
         std::cv_status::no_timeout;
}

void wall_context::notify_all(std::unique_lock<std::mutex>&, condition& c) { c.cv.notify_all(); }

void run_tasks(exec_context& ctx, std::vector<scoped_task> tasks) {
  ctx.hold();
  std::mutex mu;
  std::condition_variable cv;
  size_t registered = 0;
  std::vector<std::exception_ptr> errors(tasks.size());
  std::vector<std::thread> threads;
  threads.reserve(tasks.size());
  for (size_t i = 0; i < tasks.size(); ++i) {
    threads.emplace_back([&, i] {
      ctx.attach(tasks[i].rank, tasks[i].lane);
      {
        std::lock_guard<std::mutex> g(mu);
        ++registered;
      }
      cv.notify_one();
      ctx.enter();
      try {
        tasks[i].body();
      } catch (...) {
        errors[i] = std::current_exception();
      }
      ctx.detach();
    });
  }
  {
    std::unique_lock<std::mutex> g(mu);
    cv.wait(g, [&] { return registered == tasks.size(); });
  }
  ctx.release();
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace tierstream
