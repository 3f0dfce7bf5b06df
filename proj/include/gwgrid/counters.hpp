#pragma once

#include <atomic>
#include <cstdint>

namespace gwgrid {

// ---------------------------------------------------------------------------
// Exact analytic work/transfer accounting.
//
// These are *model* counters, not hardware counters: every operation adds the
// closed-form flop count of the kernel it just ran and the exact payload
// bytes it moved.  Keeping the accounting analytic makes scaling laws
// testable with zero tolerance (integer arithmetic end to end).
//
// Buckets:
//   preloop_flops        one-time work hoisted out of the grid traversal
//                        (eigendecomposition, fixed-operand and stream
//                        transforms).
//   loop_flops           per-trait context work plus per-cell work inside the
//                        traversal.  Every term is linear in n, so doubling n
//                        exactly doubles this bucket.
//   loop_transform_flops n^2-sized transform work performed *inside* the
//                        traversal.  Zero for the tiled engine (transforms
//                        are hoisted); the per-column baseline re-transforms
//                        every cell, so this bucket quadruples when n
//                        doubles.
//
// The per-cell p-by-p SPD solve is deliberately *not* counted: it has no
// exact closed-form count (O(p^3)) and is independent of n.
// ---------------------------------------------------------------------------

inline std::uint64_t eigendecomposition_flops(std::int64_t n) {
  // ceil(10*n^3/3), the standard symmetric eigensolver estimate.
  const std::uint64_t n3 =
      static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n) *
      static_cast<std::uint64_t>(n);
  return (10 * n3 + 2) / 3;
}

inline std::uint64_t slab_transform_flops(std::int64_t n, std::int64_t cols) {
  // Dense (n x n) * (n x cols) product.
  return 2ull * static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n) *
         static_cast<std::uint64_t>(cols);
}

inline std::uint64_t trait_context_flops(std::int64_t n, std::int64_t p) {
  // Per-trait hoisted work: weight vectors D and K (2n each), scaled
  // covariate block (p-1)n, weighted trait vector n, symmetric rank update
  // (p-1)^2 n, and the top half of the right-hand side 2(p-1)n.
  const std::uint64_t pm1 = static_cast<std::uint64_t>(p - 1);
  return static_cast<std::uint64_t>(n) * (5 + 3 * pm1 + pm1 * pm1);
}

inline std::uint64_t cell_flops(std::int64_t n, std::int64_t p) {
  // Per-cell work: scale variant column (n), bottom-left coupling 2(p-1)n,
  // bottom-right scalar 2n, bottom right-hand side 2n.
  return static_cast<std::uint64_t>(n) *
         (5 + 2 * static_cast<std::uint64_t>(p - 1));
}

// Plain snapshot, safe to copy and serialize.
struct FlopIoCounters {
  std::uint64_t preloop_flops = 0;
  std::uint64_t loop_flops = 0;
  std::uint64_t loop_transform_flops = 0;
  std::uint64_t bytes_loaded = 0;
  std::uint64_t bytes_stored = 0;
  std::uint64_t context_builds = 0;  // probe: trait-slab context constructions
  double io_stall_seconds = 0.0;     // compute-side waits on buffer readiness
  double loops_wall_seconds = 0.0;   // wall time of the grid traversal
  double preloop_wall_seconds = 0.0;

  double stall_fraction() const {
    return loops_wall_seconds > 0.0 ? io_stall_seconds / loops_wall_seconds
                                    : 0.0;
  }
  double compute_seconds() const {
    return loops_wall_seconds - io_stall_seconds;
  }
};

// Thread-safe accumulator shared by streams, engine and workers.  Totals are
// exact regardless of interleaving (integer adds commute).
class RunCounters {
 public:
  void add_preloop_flops(std::uint64_t v) { preloop_flops_ += v; }
  void add_loop_flops(std::uint64_t v) { loop_flops_ += v; }
  void add_loop_transform_flops(std::uint64_t v) { loop_transform_flops_ += v; }
  void add_bytes_loaded(std::uint64_t v) { bytes_loaded_ += v; }
  void add_bytes_stored(std::uint64_t v) { bytes_stored_ += v; }
  void note_context_build() { context_builds_ += 1; }
  void add_stall_seconds(double v) { stall_ns_ += to_ns(v); }
  void add_loops_wall_seconds(double v) { loops_wall_ns_ += to_ns(v); }
  void add_preloop_wall_seconds(double v) { preloop_wall_ns_ += to_ns(v); }

  FlopIoCounters snapshot() const {
    FlopIoCounters c;
    c.preloop_flops = preloop_flops_.load();
    c.loop_flops = loop_flops_.load();
    c.loop_transform_flops = loop_transform_flops_.load();
    c.bytes_loaded = bytes_loaded_.load();
    c.bytes_stored = bytes_stored_.load();
    c.context_builds = context_builds_.load();
    c.io_stall_seconds = static_cast<double>(stall_ns_.load()) * 1e-9;
    c.loops_wall_seconds = static_cast<double>(loops_wall_ns_.load()) * 1e-9;
    c.preloop_wall_seconds =
        static_cast<double>(preloop_wall_ns_.load()) * 1e-9;
    return c;
  }

 private:
  static std::uint64_t to_ns(double seconds) {
    return seconds <= 0.0 ? 0 : static_cast<std::uint64_t>(seconds * 1e9);
  }

  std::atomic<std::uint64_t> preloop_flops_{0};
  std::atomic<std::uint64_t> loop_flops_{0};
  std::atomic<std::uint64_t> loop_transform_flops_{0};
  std::atomic<std::uint64_t> bytes_loaded_{0};
  std::atomic<std::uint64_t> bytes_stored_{0};
  std::atomic<std::uint64_t> context_builds_{0};
  // Durations kept in integer nanoseconds so concurrent adds stay exact.
  std::atomic<std::uint64_t> stall_ns_{0};
  std::atomic<std::uint64_t> loops_wall_ns_{0};
  std::atomic<std::uint64_t> preloop_wall_ns_{0};
};

}  // namespace gwgrid
