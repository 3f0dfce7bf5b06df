#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gwgrid/grid.hpp"
#include "gwgrid/types.hpp"

namespace gwgrid {

// ---------------------------------------------------------------------------
// Overlap model and machine profiling.
//
// The streaming engine hides transfers behind compute only when each step's
// compute time exceeds its transfer time.  The model needs three machine
// rates, measured by profile_machine or injected from a file; every
// constraint evaluation is a pure function of the profile, so all tuning
// arithmetic is deterministic and unit-testable.
// ---------------------------------------------------------------------------

struct MachineProfile {
  double preloop_flops_per_sec = 0.0;  // dense rotation (matrix product) rate
  double loops_flops_per_sec = 0.0;    // tile computation rate
  double io_bandwidth = 0.0;           // sequential bytes/sec at saturation
  double datatype_size = 8.0;          // bytes per element
  // Smallest transfer reaching the saturated bandwidth.
  std::uint64_t bw_saturation_bytes = 2ull << 20;
  // Smallest slab width at which the product rate saturates (0 = unknown).
  std::int64_t gemm_saturation_nb = 0;

  void validate() const;  // rates, bandwidth, element size strictly positive
};

// ---------------------------------------------------------------------------
// Constraint evaluations
// ---------------------------------------------------------------------------

// Computation-over-transfer ratio of the stream transform: a slab costs
// 2 n^2 nb flops against 2 n nb moved elements, so the ratio is exactly n
// regardless of nb.
std::int64_t preloop_ratio(std::int64_t n);

// Transform overlap: compute seconds per element (n / preloop rate) must
// exceed transfer seconds per element (element size / bandwidth).
struct OverlapCheck {
  bool satisfied = false;
  double margin = 0.0;  // lhs / rhs; > 1 means compute hides the transfer
  double lhs = 0.0;     // seconds of compute per element
  double rhs = 0.0;     // seconds of transfer per element
};
OverlapCheck check_nb_overlap(std::int64_t n, const MachineProfile& profile);

// Computation-over-transfer ratio of one tile step: per variant slab the
// loop does tb (5 + 2(p-1)) n flops per column against n + tb p moved
// elements per column.  Independent of mb; increasing in tb and n with
// asymptote (5 + 2(p-1)) n / p.
double tile_ratio(std::int64_t tb, std::int64_t p, std::int64_t n);

// Smallest tb whose tile step hides its own transfers with `headroom`
// slack:  tb (5+2(p-1)) n / loops_rate > headroom * (n + tb p) * size / bw.
// Measured rates are noisy, so recommendations keep 10% headroom rather
// than the bare inequality.  nullopt means no tb satisfies it (compute too
// fast or disk too slow for overlap at any tile width).
std::optional<std::int64_t> min_tb(std::int64_t n, std::int64_t p,
                                   const MachineProfile& profile,
                                   double headroom = 1.1);

// ---------------------------------------------------------------------------
// Measurement
// ---------------------------------------------------------------------------

struct ProfileOptions {
  std::filesystem::path scratch_dir;  // where the I/O benchmark file lives
  int trials = 5;                     // medians over this many runs
  // Sequential-transfer sizes to probe (saturation detection).
  std::vector<std::uint64_t> transfer_sizes = {256ull << 10, 2ull << 20,
                                               16ull << 20};
  std::uint64_t io_file_bytes = 64ull << 20;
  // Rotation-rate benchmark: n x n basis times n x nb slab.
  std::int64_t gemm_n = 256;
  std::vector<std::int64_t> gemm_nb_candidates = {64, 256, 1024};
  // Tile-rate benchmark dims (defaults sized to finish in well under a
  // second while exceeding cache).
  std::int64_t tile_n = 256;
  std::int64_t tile_p = 4;
  std::int64_t tile_mb = 320;
  std::int64_t tile_tb = 320;
};

struct ProfileResult {
  MachineProfile profile;
  bool stable = true;  // consecutive bandwidth probes agreed within 30%
  std::vector<std::string> notes;  // human-readable measurement log
};

// Benchmarks transfer bandwidth, rotation rate, and tile-compute rate.
// Medians over `trials` runs; a repeated bandwidth probe differing by more
// than 30% clears `stable` (machine too noisy to trust the numbers).
ProfileResult profile_machine(const ProfileOptions& options);

// Block-size sweep: times the tile kernel at square block candidates and
// picks from the throughput plateau (within 0.5% of the best).  160 is
// preferred when it sits on the plateau, matching the engine default.
struct BlockSweepResult {
  std::vector<std::int64_t> candidates;
  std::vector<double> flops_per_sec;
  std::int64_t chosen = 0;
};
BlockSweepResult sweep_block_size(const ProfileOptions& options);

// key=value profile files (one pair per line, '#' comments).  Unknown keys
// are errors: a typo must not silently fall back to a default.
MachineProfile load_profile(const std::filesystem::path& path);
void save_profile(const std::filesystem::path& path,
                  const MachineProfile& profile);

// ---------------------------------------------------------------------------
// Recommendation
// ---------------------------------------------------------------------------

struct Recommendation {
  TileParams params;
  std::optional<std::int64_t> tb_lower_bound;  // min_tb at 1.1 headroom
  OverlapCheck nb_overlap;
  double tile_ratio_at_tb = 0.0;
  std::uint64_t working_set = 0;  // bytes at the recommended params
  bool tb_constraint_met = true;  // budget admitted tb >= the lower bound
  // Machine-readable `key=value` lines echoing every input, constraint and
  // margin; printed verbatim by the command-line tool.
  std::vector<std::string> report;
};

// Picks (nb, mb, tb, mbb, tbb) for the given problem, machine and budget:
// the budget-maximal tiling (tb first, then mb), nb wide enough to saturate
// both bandwidth and the product rate, blocks at the engine default.  When
// the budget cannot reach min_tb, the feasible maximum is returned and
// tb_constraint_met cleared — the caller decides whether a stalling run is
// acceptable.  Throws InfeasibleBudgetError when nothing fits.
Recommendation recommend_params(const ProblemDims& dims,
                                const MachineProfile& profile,
                                std::uint64_t budget_bytes,
                                Scheduler scheduler = Scheduler::ct,
                                int workers = 1, bool double_buffer = true);

}  // namespace gwgrid
