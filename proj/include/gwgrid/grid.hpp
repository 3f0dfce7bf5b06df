#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gwgrid/counters.hpp"
#include "gwgrid/gls.hpp"
#include "gwgrid/types.hpp"

namespace gwgrid {

class WorkerPool;

// ---------------------------------------------------------------------------
// Out-of-core grid engine.
//
// The grid of results has one cell per (variant column i, trait column j):
// the p coefficients of that cell's weighted least-squares solve.  The engine
// traverses the grid in tiles, streaming operands from disk:
//
//   outer loop   trait slabs of tb columns — contexts hoisted once per slab
//   inner loop   variant slabs of mb rotated columns — re-read once per
//                trait slab, double-buffered so transfers overlap compute
//   per tile     mbb x tbb cache blocks handed to workers
//
// Every cell's arithmetic consumes only its own slab columns and its trait's
// context, with a fixed operation order, so the output stream is a pure
// function of the inputs: byte-identical for any nb/mb/tb/mbb/tbb, scheduler,
// worker count, and single- vs double-buffering.
// ---------------------------------------------------------------------------

// Tiling parameters.  Zero means "pick the default when resolved":
//   nb   -> the widest slab that keeps one transfer near 2 MiB (capped at m)
//   mb   -> m (in-core), tb -> t
//   mbb  -> min(160, mb), tbb -> min(160, tb): square cache blocks; 160 sits
//           on the throughput plateau of typical last-level caches and the
//           tuner can re-sweep it.
struct TileParams {
  std::int64_t nb = 0;   // transform slab width (columns per transfer)
  std::int64_t mb = 0;   // tile height: variant columns resident per step
  std::int64_t tb = 0;   // tile width: trait columns resident per pass
  std::int64_t mbb = 0;  // block height within a tile
  std::int64_t tbb = 0;  // block width within a tile

  // Fills zeros with defaults, clamps block dims to tile dims, validates.
  TileParams resolved(const ProblemDims& dims) const;

  // Strict invariants: 1 <= nb <= m, 1 <= mbb <= mb <= m, 1 <= tbb <= tb <= t.
  void validate(const ProblemDims& dims) const;
};

// CT: all workers cooperate on the current tile, pulling cache blocks from a
// shared FIFO, while a coordinator thread runs the double-buffered stream.
// IT: workers independently own whole variant slabs round-robin along m and
// do their own (synchronous) reads and writes.
enum class Scheduler { ct, it };

struct RunOptions {
  TileParams params;  // zeros resolved against the stream dims
  Scheduler scheduler = Scheduler::ct;
  int workers = 1;
  // When set, the run refuses params whose working set exceeds the budget
  // (planning to a budget is fit_tile_params' job; this is the guard).
  std::optional<std::uint64_t> memory_budget_bytes;
  // CT only: two workspaces overlapping transfers with compute.  IT workers
  // always perform their own synchronous transfers.
  bool double_buffer = true;
};

// Fixed operands shared by every cell: the kinship eigensystem and the
// rotated covariate block.
struct GridPrecompute {
  KinshipSpectrum spectrum;  // basis Z (n x n), eigenvalues (n)
  Eigen::MatrixXd xl_rot;    // Z^T X_L, n x (p-1)

  std::int64_t n() const { return spectrum.n(); }
  std::int64_t p() const { return xl_rot.cols() + 1; }
};

// Eigendecomposes the kinship matrix and rotates the covariate block.
// Counters: eigendecomposition_flops(n) + slab_transform_flops(n, p-1) into
// the preloop bucket, plus this call's wall time.
GridPrecompute precompute_grid(const Eigen::MatrixXd& phi,
                               const Eigen::MatrixXd& xl,
                               RunCounters& counters);

// dst = basis^T * src, bitwise independent of how columns are grouped into
// calls.  Single-column products take a different code path than
// multi-column ones (and round differently), so width-1 inputs are staged
// through a two-column temporary and the duplicate discarded; as a side
// effect dst may alias src when src has exactly one column.  Multi-column
// calls must not alias.
void rotate_columns(const Eigen::MatrixXd& basis,
                    const Eigen::Ref<const Eigen::MatrixXd>& src,
                    Eigen::Ref<Eigen::MatrixXd> dst);

// Rotates a slab of raw variant columns into dst.  Counters: 2 n^2 k flops,
// preloop bucket (the stream transform is hoisted out of the traversal).
void transform_snp_slab(const GridPrecompute& pre,
                        const Eigen::Ref<const Eigen::MatrixXd>& raw,
                        Eigen::Ref<Eigen::MatrixXd> dst,
                        RunCounters* counters);

// Rotates a resident slab of trait columns in place, one column at a time
// (each column staged through rotate_columns' two-column temporary, which
// keeps the bits identical to any slab-width grouping and needs no second
// slab buffer).  Counters: 2 n^2 k flops, preloop bucket.
void transform_trait_slab(const GridPrecompute& pre,
                          Eigen::Ref<Eigen::MatrixXd> slab,
                          RunCounters* counters);

// Builds the hoisted per-trait contexts for one rotated trait slab.
// trait0 is the global index of the slab's first column (error reports and
// context tagging).  Counters: trait_context_flops(n, p) per column into the
// loop bucket, and exactly one context-build event per call — a run that
// hoists correctly shows ceil(t/tb) builds, the per-column baseline shows t.
std::vector<TraitContext> build_trait_contexts(
    const GridPrecompute& pre,
    const Eigen::Ref<const Eigen::MatrixXd>& trait_slab_rot,
    const std::vector<TraitScalars>& scalars, std::int64_t trait0,
    RunCounters* counters);

// One tile of results, packed coefficient-fastest, then local row (variant),
// then local column (trait) — the result stream's native cell order.
struct ResultTile {
  std::int64_t i0 = 0;    // grid origin: variant row
  std::int64_t j0 = 0;    // grid origin: trait column
  std::int64_t rows = 0;  // variants covered
  std::int64_t cols = 0;  // traits covered
  std::int64_t p = 0;
  std::vector<double> data;

  // Re-shapes for a new tile; keeps capacity so steady state never
  // allocates.  Contents are left stale — every cell is written exactly once.
  void reset(std::int64_t i0_, std::int64_t j0_, std::int64_t rows_,
             std::int64_t cols_, std::int64_t p_);

  double* cell(std::int64_t il, std::int64_t jl) {
    return data.data() + static_cast<std::size_t>(jl * rows + il) * p;
  }
  const double* cell(std::int64_t il, std::int64_t jl) const {
    return data.data() + static_cast<std::size_t>(jl * rows + il) * p;
  }
};

// Computes the cells of one cache block within a tile: local variant rows
// [bi, bi+brows) x local trait columns [bj, bj+bcols), trait-major then
// variant-minor.  snp_slab column il holds the rotated column of grid row
// tile.i0 + il.  Counters: brows*bcols*cell_flops(n, p), loop bucket.
void compute_block(const std::vector<TraitContext>& contexts,
                   const Eigen::Ref<const Eigen::MatrixXd>& snp_slab,
                   std::int64_t bi, std::int64_t bj, std::int64_t brows,
                   std::int64_t bcols, ResultTile& tile, CellWorkspace& ws,
                   RunCounters* counters);

// Computes a whole tile by decomposing it into mbb x tbb blocks enumerated
// trait-major, variant-minor (a FIFO sequence).  With a pool, workers pull
// blocks from that shared sequence; serial otherwise.  Each cell is written
// by exactly one worker and blocks share no accumulators, so the bits are
// independent of worker count and block shape.  The first error cancels the
// remaining blocks and is rethrown.
void compute_tile(const std::vector<TraitContext>& contexts,
                  const Eigen::Ref<const Eigen::MatrixXd>& snp_slab,
                  const TileParams& params, ResultTile& tile, WorkerPool* pool,
                  RunCounters* counters);

// Resident bytes of the traversal: replicated streaming buffers (variant
// slab + output tile), one trait slab with its scalars, the hoisted
// contexts, and the fixed operands (eigensystem, rotated covariates).
// Replication is 2 for a double-buffered CT run (two workspaces), the
// worker count for IT (each worker owns a slab and a tile), 1 otherwise.
std::uint64_t working_set_bytes(const ProblemDims& dims,
                                const TileParams& params, Scheduler scheduler,
                                int workers, bool double_buffer);

// Resident bytes of the stream transform pass: an input and an output slab
// of nb columns per workspace.
std::uint64_t transform_working_set_bytes(std::int64_t n, std::int64_t nb,
                                          bool double_buffer);

// Largest tiling that fits the budget.  tb is maximized first — passes over
// the variant stream scale with ceil(t/tb), so tb dominates total transfer
// volume — then mb given tb; block dims default on top; nb is fitted to the
// same budget for the transform pass.  Throws InfeasibleBudgetError when
// even (mb, tb) = (1, 1) does not fit.
TileParams fit_tile_params(const ProblemDims& dims,
                           std::uint64_t budget_bytes, Scheduler scheduler,
                           int workers, bool double_buffer);

// Rewrites a raw variant stream as rotated columns, nb per step, double-
// buffered (load slab k+1 and store slab k-1 while slab k multiplies).
// dst == src rewrites in place; the file is marked incomplete while being
// rewritten either way, so interrupted transforms are rejected by readers.
// Counters: 2 n^2 nb flops per step and the wall time into the preloop
// buckets; transfer bytes as usual.  Transform-side waits are preloop costs,
// not loop stalls.
void preloop_stream_transform(const GridPrecompute& pre,
                              const std::filesystem::path& src_path,
                              const std::filesystem::path& dst_path,
                              std::int64_t nb, bool double_buffer,
                              RunCounters& counters);

// Streams the whole grid to out_path.  snps_rot_path must already hold
// rotated columns (preloop_stream_transform); the trait stream holds raw
// columns, rotated in memory slab by slab as each pass begins.  The output
// is created incomplete and finalized only after every tile landed.
//
// Exact transfer accounting: bytes_loaded grows by
//   ceil(t/tb) * m*n*8  (variant stream, re-read once per trait slab)
//   + t*n*8 + 2t*8      (trait columns + scalars, read once)
// and bytes_stored by m*t*p*8.
void run_grid(const GridPrecompute& pre,
              const std::filesystem::path& snps_rot_path,
              const std::filesystem::path& traits_path,
              const std::filesystem::path& out_path, const RunOptions& options,
              RunCounters& counters);

// Per-column baseline for contrast runs: for each trait, re-reads the *raw*
// variant stream column by column and rotates every column again (no slab
// hoisting, no reuse across traits).  Rotation work lands in the
// loop_transform bucket — 2 n^2 t(m+1) total, which quadruples when n
// doubles — and the variant stream contributes t*m*n*8 loaded bytes.
// Results are bitwise identical to run_grid's.
void run_grid_naive(const GridPrecompute& pre,
                    const std::filesystem::path& snps_raw_path,
                    const std::filesystem::path& traits_path,
                    const std::filesystem::path& out_path,
                    RunCounters& counters);

}  // namespace gwgrid
