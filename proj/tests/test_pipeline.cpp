#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "gwgrid/pipeline.hpp"
#include "gwgrid/pool.hpp"

using namespace gwgrid;

namespace {

void sleep_ms(int ms) {
  std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

struct Slot {
  std::size_t loaded_step = static_cast<std::size_t>(-1);
  int value = 0;
};

}  // namespace

TEST_CASE("io agent runs posted jobs in order on one thread") {
  IoAgent agent;
  std::vector<int> order;
  std::mutex mu;
  std::vector<std::future<void>> futures;
  for (int i = 0; i < 16; ++i) {
    futures.push_back(agent.post([&, i] {
      std::lock_guard<std::mutex> lock(mu);
      order.push_back(i);
    }));
  }
  for (auto& f : futures) f.get();
  REQUIRE(order.size() == 16);
  for (int i = 0; i < 16; ++i) CHECK(order[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("io agent propagates job exceptions through the future") {
  IoAgent agent;
  auto f = agent.post([] { throw std::runtime_error("boom"); });
  CHECK_THROWS_WITH_AS(f.get(), "boom", std::runtime_error);
  // The agent survives a failed job.
  auto g = agent.post([] {});
  CHECK_NOTHROW(g.get());
}

TEST_CASE("pipeline produces identical sequencing single- and double-buffered") {
  for (const std::size_t workspace_count : {std::size_t{1}, std::size_t{2}}) {
    CAPTURE(workspace_count);
    const std::size_t steps = 9;
    std::vector<Slot> workspaces(workspace_count);
    std::vector<int> stored(steps, -1);

    const PipelineStats stats = pipeline_run(
        steps, workspaces.data(), workspace_count,
        [&](std::size_t s, Slot& ws) {
          ws.loaded_step = s;
          ws.value = static_cast<int>(100 + s);
        },
        [&](std::size_t s, Slot& ws) {
          // Compute always sees its own step's load, never a stale or
          // prefetched-ahead buffer.
          REQUIRE(ws.loaded_step == s);
          ws.value += 1;
        },
        [&](std::size_t s, Slot& ws) { stored[s] = ws.value; });

    for (std::size_t s = 0; s < steps; ++s) {
      CHECK(stored[s] == static_cast<int>(101 + s));
    }
    CHECK(stats.wall_seconds >= 0.0);
    CHECK(stats.stall_seconds >= 0.0);
  }
}

TEST_CASE("pipeline never lets an agent touch a buffer compute is using") {
  // Loads and stores record which workspace they touch while compute holds
  // it; overlap would flip the in_compute flag mid-flight.
  const std::size_t steps = 24;
  struct Guarded {
    std::atomic<bool> in_compute{false};
  };
  Guarded workspaces[2];
  std::atomic<bool> violated{false};

  pipeline_run(
      steps, workspaces, 2,
      [&](std::size_t, Guarded& ws) {
        if (ws.in_compute.load()) violated = true;
        sleep_ms(1);
        if (ws.in_compute.load()) violated = true;
      },
      [&](std::size_t, Guarded& ws) {
        ws.in_compute = true;
        sleep_ms(1);
        ws.in_compute = false;
      },
      [&](std::size_t, Guarded& ws) {
        if (ws.in_compute.load()) violated = true;
        sleep_ms(1);
        if (ws.in_compute.load()) violated = true;
      });
  CHECK_FALSE(violated.load());
}

TEST_CASE("pipeline overlaps transfers with compute when double buffered") {
  // With transfers as slow as compute, overlap means the double-buffered
  // stall is well below the serial stall.  Generous margins keep this
  // robust on a loaded machine.
  const std::size_t steps = 10;
  auto run = [&](std::size_t workspace_count) {
    std::vector<Slot> workspaces(workspace_count);
    return pipeline_run(
        steps, workspaces.data(), workspace_count,
        [&](std::size_t, Slot&) { sleep_ms(4); },
        [&](std::size_t, Slot&) { sleep_ms(5); },
        [&](std::size_t, Slot&) { sleep_ms(4); });
  };
  const PipelineStats serial = run(1);
  const PipelineStats buffered = run(2);
  // Serial: every millisecond of transfer is a stall (~80ms here).
  CHECK(serial.stall_seconds > 0.6 * 8e-3 * steps);
  // Buffered: transfers hide behind compute except at the ends.
  CHECK(buffered.stall_seconds < 0.5 * serial.stall_seconds);
  CHECK(buffered.wall_seconds < 0.8 * serial.wall_seconds);
}

TEST_CASE("pipeline propagates failures from every phase") {
  std::vector<Slot> workspaces(2);
  auto fail_in = [&](int which) {
    return pipeline_run(
        6, workspaces.data(), 2,
        [&](std::size_t s, Slot&) {
          if (which == 0 && s == 3) throw std::runtime_error("load failed");
        },
        [&](std::size_t s, Slot&) {
          if (which == 1 && s == 3) throw std::runtime_error("compute failed");
        },
        [&](std::size_t s, Slot&) {
          if (which == 2 && s == 3) throw std::runtime_error("store failed");
        });
  };
  CHECK_THROWS_WITH_AS(fail_in(0), "load failed", std::runtime_error);
  CHECK_THROWS_WITH_AS(fail_in(1), "compute failed", std::runtime_error);
  CHECK_THROWS_WITH_AS(fail_in(2), "store failed", std::runtime_error);
}

TEST_CASE("pipeline handles zero and one steps") {
  std::vector<Slot> workspaces(2);
  int stores = 0;
  pipeline_run(
      0, workspaces.data(), 2, [&](std::size_t, Slot&) {},
      [&](std::size_t, Slot&) {}, [&](std::size_t, Slot&) { ++stores; });
  CHECK(stores == 0);
  pipeline_run(
      1, workspaces.data(), 2, [&](std::size_t s, Slot& ws) { ws.loaded_step = s; },
      [&](std::size_t s, Slot& ws) { REQUIRE(ws.loaded_step == s); },
      [&](std::size_t, Slot&) { ++stores; });
  CHECK(stores == 1);
}

TEST_CASE("worker pool hands every index to the body exactly once per run") {
  WorkerPool pool(4);
  CHECK(pool.size() == 4);
  std::mutex mu;
  std::set<int> seen;
  for (int round = 0; round < 3; ++round) {
    seen.clear();
    pool.run([&](int w) {
      std::lock_guard<std::mutex> lock(mu);
      CHECK(seen.insert(w).second);
    });
    CHECK(seen == std::set<int>({0, 1, 2, 3}));
  }
}

TEST_CASE("worker pool divides an atomic-cursor workload completely") {
  WorkerPool pool(3);
  constexpr int kItems = 1000;
  std::vector<std::atomic<int>> hits(kItems);
  std::atomic<std::int64_t> cursor{0};
  pool.run([&](int) {
    for (;;) {
      const std::int64_t i = cursor.fetch_add(1);
      if (i >= kItems) return;
      hits[static_cast<std::size_t>(i)] += 1;
    }
  });
  for (int i = 0; i < kItems; ++i) CHECK(hits[static_cast<std::size_t>(i)] == 1);
}

TEST_CASE("worker pool rethrows the first failure after the batch finishes") {
  WorkerPool pool(4);
  std::atomic<int> completed{0};
  try {
    pool.run([&](int w) {
      if (w == 2) throw std::runtime_error("worker 2 failed");
      completed += 1;
    });
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "worker 2 failed");
  }
  CHECK(completed.load() == 3);
  // The pool is reusable after a failed batch.
  std::atomic<int> again{0};
  pool.run([&](int) { again += 1; });
  CHECK(again.load() == 4);
}
