#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <mutex>
#include <thread>

namespace gwgrid {

// One background thread executing posted jobs in FIFO order.  The streaming
// engine runs one agent per transfer direction (prefetch, writeback); jobs
// are positional reads/writes, so order only matters per agent.
class IoAgent {
 public:
  IoAgent();
  // Drops jobs that have not started and joins.  Pending futures for dropped
  // jobs become broken promises, which is fine: an unwinding caller no
  // longer waits on them.
  ~IoAgent();

  IoAgent(const IoAgent&) = delete;
  IoAgent& operator=(const IoAgent&) = delete;

  std::future<void> post(std::function<void()> job);

 private:
  void loop();

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::packaged_task<void()>> queue_;
  bool stop_ = false;
  std::thread thread_;
};

struct PipelineStats {
  double stall_seconds = 0.0;  // compute-side waits on buffer readiness
  double wall_seconds = 0.0;
};

namespace detail {

// Waits on a future, returning the seconds the caller was actually blocked;
// rethrows the job's exception if it failed.
inline double timed_wait(std::future<void>& f) {
  if (!f.valid()) return 0.0;
  using clock = std::chrono::steady_clock;
  if (f.wait_for(std::chrono::seconds(0)) == std::future_status::ready) {
    f.get();  // may rethrow
    return 0.0;
  }
  const auto t0 = clock::now();
  f.get();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

}  // namespace detail

// Runs `steps` load -> compute -> store rounds over the given workspaces.
//
// With two workspaces this is the double-buffered discipline: while one
// workspace is being computed on the caller thread, the other is
// concurrently flushing its previous output (writeback agent) and
// prefetching the next input (prefetch agent).  A buffer is never read by
// compute while an agent writes it: loads for a workspace are only posted
// after compute on that workspace returned, and compute only starts after
// both the workspace's load and its previous store completed.
//
// With one workspace the pipeline is disabled: every phase runs inline on
// the caller thread (load/store time then counts as stall, since nothing
// overlaps it).  Output is identical either way; only timing differs.
//
// The first error from any side propagates after the other side has
// quiesced (agents drop not-yet-started jobs and join on unwind).
template <typename Workspace, typename Load, typename Compute, typename Store>
PipelineStats pipeline_run(std::size_t steps, Workspace* workspaces,
                           std::size_t workspace_count, Load&& load,
                           Compute&& compute, Store&& store) {
  using clock = std::chrono::steady_clock;
  PipelineStats stats;
  const auto wall0 = clock::now();

  if (steps == 0) return stats;

  if (workspace_count <= 1) {
    Workspace& ws = workspaces[0];
    for (std::size_t s = 0; s < steps; ++s) {
      const auto t0 = clock::now();
      load(s, ws);
      stats.stall_seconds +=
          std::chrono::duration<double>(clock::now() - t0).count();
      compute(s, ws);
      const auto t1 = clock::now();
      store(s, ws);
      stats.stall_seconds +=
          std::chrono::duration<double>(clock::now() - t1).count();
    }
    stats.wall_seconds =
        std::chrono::duration<double>(clock::now() - wall0).count();
    return stats;
  }

  IoAgent prefetch;
  IoAgent writeback;
  std::future<void> input_ready[2];
  std::future<void> output_free[2];

  input_ready[0] = prefetch.post([&, s = std::size_t{0}] { load(s, workspaces[0]); });
  if (steps > 1) {
    input_ready[1] =
        prefetch.post([&, s = std::size_t{1}] { load(s, workspaces[1]); });
  }

  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t k = s % 2;
    Workspace& ws = workspaces[k];
    stats.stall_seconds += detail::timed_wait(input_ready[k]);
    stats.stall_seconds += detail::timed_wait(output_free[k]);
    compute(s, ws);
    output_free[k] = writeback.post([&, s, k] { store(s, workspaces[k]); });
    if (s + 2 < steps) {
      input_ready[k] =
          prefetch.post([&, s, k] { load(s + 2, workspaces[k]); });
    }
  }
  // The tail flushes are still compute-side waits: the run is not done
  // until they land.
  stats.stall_seconds += detail::timed_wait(output_free[0]);
  stats.stall_seconds += detail::timed_wait(output_free[1]);

  stats.wall_seconds =
      std::chrono::duration<double>(clock::now() - wall0).count();
  return stats;
}

}  // namespace gwgrid
