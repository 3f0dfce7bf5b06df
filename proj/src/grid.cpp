#include "gwgrid/grid.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>

#include "gwgrid/pipeline.hpp"
#include "gwgrid/pool.hpp"
#include "gwgrid/stream.hpp"

namespace gwgrid {

namespace {

using clock_type = std::chrono::steady_clock;

constexpr std::int64_t kDefaultBlock = 160;
constexpr std::uint64_t kTargetTransferBytes = 2ull << 20;  // 2 MiB

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

double seconds_since(const clock_type::time_point& t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::int64_t default_nb(const ProblemDims& dims) {
  const std::int64_t by_bytes = static_cast<std::int64_t>(
      kTargetTransferBytes / (static_cast<std::uint64_t>(dims.n) * 8));
  return std::clamp<std::int64_t>(by_bytes, 1, dims.m);
}

StreamHeader make_header(StreamKind kind, std::int64_t d0, std::int64_t d1,
                         std::int64_t d2 = 0) {
  StreamHeader h;
  h.kind = kind;
  h.dims = {static_cast<std::uint64_t>(d0), static_cast<std::uint64_t>(d1),
            static_cast<std::uint64_t>(d2)};
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// TileParams
// ---------------------------------------------------------------------------

TileParams TileParams::resolved(const ProblemDims& dims) const {
  dims.validate();
  TileParams r = *this;
  if (r.nb == 0) r.nb = default_nb(dims);
  if (r.mb == 0) r.mb = dims.m;
  if (r.tb == 0) r.tb = dims.t;
  if (r.mbb == 0) r.mbb = std::min<std::int64_t>(kDefaultBlock, r.mb);
  if (r.tbb == 0) r.tbb = std::min<std::int64_t>(kDefaultBlock, r.tb);
  r.validate(dims);
  return r;
}

void TileParams::validate(const ProblemDims& dims) const {
  dims.validate();
  auto check = [](bool ok, const std::string& what, std::int64_t got) {
    if (!ok) {
      throw DimensionError("tile parameter " + what + " out of range (got " +
                           std::to_string(got) + ")");
    }
  };
  check(nb >= 1 && nb <= dims.m, "nb (must be in [1, m])", nb);
  check(mb >= 1 && mb <= dims.m, "mb (must be in [1, m])", mb);
  check(tb >= 1 && tb <= dims.t, "tb (must be in [1, t])", tb);
  check(mbb >= 1 && mbb <= mb, "mbb (must be in [1, mb])", mbb);
  check(tbb >= 1 && tbb <= tb, "tbb (must be in [1, tb])", tbb);
}

// ---------------------------------------------------------------------------
// Precompute and slab transforms
// ---------------------------------------------------------------------------

GridPrecompute precompute_grid(const Eigen::MatrixXd& phi,
                               const Eigen::MatrixXd& xl,
                               RunCounters& counters) {
  const auto t0 = clock_type::now();
  if (xl.rows() != phi.rows()) {
    throw DimensionError("covariate block has " + std::to_string(xl.rows()) +
                         " rows but the kinship matrix is " +
                         std::to_string(phi.rows()) + " x " +
                         std::to_string(phi.cols()));
  }
  GridPrecompute pre;
  pre.spectrum = eigendecompose_kinship(phi);
  pre.xl_rot.resize(xl.rows(), xl.cols());
  rotate_columns(pre.spectrum.basis, xl, pre.xl_rot);
  counters.add_preloop_flops(eigendecomposition_flops(pre.n()) +
                             slab_transform_flops(pre.n(), xl.cols()));
  counters.add_preloop_wall_seconds(seconds_since(t0));
  return pre;
}

void rotate_columns(const Eigen::MatrixXd& basis,
                    const Eigen::Ref<const Eigen::MatrixXd>& src,
                    Eigen::Ref<Eigen::MatrixXd> dst) {
  if (src.rows() != basis.rows() || dst.rows() != basis.cols() ||
      dst.cols() != src.cols()) {
    throw DimensionError("rotate_columns: operand shapes disagree");
  }
  if (src.cols() == 0) return;
  if (src.cols() == 1) {
    // Stage through a two-column product so a lone column rounds exactly
    // like the same column inside a wider slab.
    Eigen::MatrixXd padded(src.rows(), 2);
    padded.col(0) = src.col(0);
    padded.col(1) = src.col(0);
    Eigen::MatrixXd out(basis.cols(), 2);
    out.noalias() = basis.transpose() * padded;
    dst.col(0) = out.col(0);
    return;
  }
  dst.noalias() = basis.transpose() * src;
}

void transform_snp_slab(const GridPrecompute& pre,
                        const Eigen::Ref<const Eigen::MatrixXd>& raw,
                        Eigen::Ref<Eigen::MatrixXd> dst,
                        RunCounters* counters) {
  rotate_columns(pre.spectrum.basis, raw, dst);
  if (counters) {
    counters->add_preloop_flops(slab_transform_flops(pre.n(), raw.cols()));
  }
}

void transform_trait_slab(const GridPrecompute& pre,
                          Eigen::Ref<Eigen::MatrixXd> slab,
                          RunCounters* counters) {
  for (std::int64_t j = 0; j < slab.cols(); ++j) {
    rotate_columns(pre.spectrum.basis, slab.col(j), slab.col(j));
  }
  if (counters) {
    counters->add_preloop_flops(slab_transform_flops(pre.n(), slab.cols()));
  }
}

std::vector<TraitContext> build_trait_contexts(
    const GridPrecompute& pre,
    const Eigen::Ref<const Eigen::MatrixXd>& trait_slab_rot,
    const std::vector<TraitScalars>& scalars, std::int64_t trait0,
    RunCounters* counters) {
  if (static_cast<std::int64_t>(scalars.size()) != trait_slab_rot.cols()) {
    throw DimensionError("trait slab holds " +
                         std::to_string(trait_slab_rot.cols()) +
                         " columns but " + std::to_string(scalars.size()) +
                         " scalar pairs were given");
  }
  if (trait_slab_rot.rows() != pre.n()) {
    throw DimensionError("trait slab row count disagrees with the kinship "
                         "dimension");
  }
  std::vector<TraitContext> out;
  out.reserve(scalars.size());
  for (std::size_t jl = 0; jl < scalars.size(); ++jl) {
    out.push_back(build_trait_context(
        pre.spectrum.values, pre.xl_rot,
        trait_slab_rot.col(static_cast<std::int64_t>(jl)), scalars[jl],
        trait0 + static_cast<std::int64_t>(jl)));
  }
  if (counters) {
    counters->add_loop_flops(static_cast<std::uint64_t>(scalars.size()) *
                             trait_context_flops(pre.n(), pre.p()));
    counters->note_context_build();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tile computation
// ---------------------------------------------------------------------------

void ResultTile::reset(std::int64_t i0_, std::int64_t j0_, std::int64_t rows_,
                       std::int64_t cols_, std::int64_t p_) {
  i0 = i0_;
  j0 = j0_;
  rows = rows_;
  cols = cols_;
  p = p_;
  data.resize(static_cast<std::size_t>(rows_) * cols_ * p_);
}

void compute_block(const std::vector<TraitContext>& contexts,
                   const Eigen::Ref<const Eigen::MatrixXd>& snp_slab,
                   std::int64_t bi, std::int64_t bj, std::int64_t brows,
                   std::int64_t bcols, ResultTile& tile, CellWorkspace& ws,
                   RunCounters* counters) {
  if (bi < 0 || bj < 0 || brows < 1 || bcols < 1 || bi + brows > tile.rows ||
      bj + bcols > tile.cols) {
    throw DimensionError("block rectangle exceeds its tile");
  }
  if (snp_slab.cols() < tile.rows ||
      static_cast<std::int64_t>(contexts.size()) < tile.cols) {
    throw DimensionError("tile wider than the resident slab or contexts");
  }
  const std::int64_t n = snp_slab.rows();
  ws.resize(n, tile.p);
  for (std::int64_t jl = bj; jl < bj + bcols; ++jl) {
    const TraitContext& ctx = contexts[static_cast<std::size_t>(jl)];
    for (std::int64_t il = bi; il < bi + brows; ++il) {
      solve_gls_cell(ctx, snp_slab.col(il), ws, tile.cell(il, jl),
                     tile.i0 + il);
    }
  }
  if (counters) {
    counters->add_loop_flops(static_cast<std::uint64_t>(brows) *
                             static_cast<std::uint64_t>(bcols) *
                             cell_flops(n, tile.p));
  }
}

void compute_tile(const std::vector<TraitContext>& contexts,
                  const Eigen::Ref<const Eigen::MatrixXd>& snp_slab,
                  const TileParams& params, ResultTile& tile, WorkerPool* pool,
                  RunCounters* counters) {
  const std::int64_t mbb = std::clamp<std::int64_t>(params.mbb, 1, tile.rows);
  const std::int64_t tbb = std::clamp<std::int64_t>(params.tbb, 1, tile.cols);

  struct Block {
    std::int64_t bi, bj, brows, bcols;
  };
  std::vector<Block> blocks;
  blocks.reserve(static_cast<std::size_t>(ceil_div(tile.rows, mbb) *
                                          ceil_div(tile.cols, tbb)));
  for (std::int64_t bj = 0; bj < tile.cols; bj += tbb) {
    for (std::int64_t bi = 0; bi < tile.rows; bi += mbb) {
      blocks.push_back({bi, bj, std::min(mbb, tile.rows - bi),
                        std::min(tbb, tile.cols - bj)});
    }
  }

  if (pool == nullptr || pool->size() <= 1) {
    CellWorkspace ws;
    for (const Block& b : blocks) {
      compute_block(contexts, snp_slab, b.bi, b.bj, b.brows, b.bcols, tile, ws,
                    counters);
    }
    return;
  }

  std::atomic<std::size_t> cursor{0};
  std::atomic<bool> abort{false};
  std::mutex error_mu;
  std::exception_ptr first_error;
  pool->run([&](int) {
    CellWorkspace ws;
    while (!abort.load(std::memory_order_relaxed)) {
      const std::size_t idx = cursor.fetch_add(1, std::memory_order_relaxed);
      if (idx >= blocks.size()) break;
      const Block& b = blocks[idx];
      try {
        compute_block(contexts, snp_slab, b.bi, b.bj, b.brows, b.bcols, tile,
                      ws, counters);
      } catch (...) {
        {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
        }
        abort.store(true, std::memory_order_relaxed);
        break;
      }
    }
  });
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Memory accounting and budget fitting
// ---------------------------------------------------------------------------

std::uint64_t working_set_bytes(const ProblemDims& dims,
                                const TileParams& params, Scheduler scheduler,
                                int workers, bool double_buffer) {
  const auto n = static_cast<std::uint64_t>(dims.n);
  const auto p = static_cast<std::uint64_t>(dims.p);
  const auto mb = static_cast<std::uint64_t>(params.mb);
  const auto tb = static_cast<std::uint64_t>(params.tb);
  const std::uint64_t repl =
      scheduler == Scheduler::ct
          ? (double_buffer ? 2 : 1)
          : static_cast<std::uint64_t>(std::max(1, workers));
  const std::uint64_t pm1 = p - 1;
  const std::uint64_t snp_slab = mb * n * 8;
  const std::uint64_t out_tile = mb * tb * p * 8;
  const std::uint64_t trait_slab = tb * (n + 2) * 8;
  const std::uint64_t contexts = tb * (3 * n + n * pm1 + pm1 * pm1 + pm1) * 8;
  const std::uint64_t fixed = (n * n + n) * 8 + n * pm1 * 8;
  return repl * (snp_slab + out_tile) + trait_slab + contexts + fixed;
}

std::uint64_t transform_working_set_bytes(std::int64_t n, std::int64_t nb,
                                          bool double_buffer) {
  const auto un = static_cast<std::uint64_t>(n);
  const auto unb = static_cast<std::uint64_t>(nb);
  const std::uint64_t repl = double_buffer ? 2 : 1;
  // Basis plus a raw and a rotated slab per workspace.
  return (un * un + un) * 8 + repl * 2 * unb * un * 8;
}

TileParams fit_tile_params(const ProblemDims& dims, std::uint64_t budget_bytes,
                           Scheduler scheduler, int workers,
                           bool double_buffer) {
  dims.validate();
  const auto set_bytes = [&](std::int64_t mb, std::int64_t tb) {
    TileParams q;
    q.nb = 1;
    q.mb = mb;
    q.tb = tb;
    q.mbb = std::min<std::int64_t>(kDefaultBlock, mb);
    q.tbb = std::min<std::int64_t>(kDefaultBlock, tb);
    return working_set_bytes(dims, q, scheduler, workers, double_buffer);
  };
  if (set_bytes(1, 1) > budget_bytes) {
    throw InfeasibleBudgetError(
        "memory budget of " + std::to_string(budget_bytes) +
        " bytes cannot hold even a 1x1 tile (working set " +
        std::to_string(set_bytes(1, 1)) + " bytes)");
  }
  if (transform_working_set_bytes(dims.n, 1, double_buffer) > budget_bytes) {
    throw InfeasibleBudgetError(
        "memory budget of " + std::to_string(budget_bytes) +
        " bytes cannot hold the stream transform pass (working set " +
        std::to_string(transform_working_set_bytes(dims.n, 1, double_buffer)) +
        " bytes at nb = 1)");
  }

  // Largest x in [lo, hi] satisfying pred; pred(lo) must hold.
  const auto max_feasible = [](std::int64_t lo, std::int64_t hi, auto pred) {
    while (lo < hi) {
      const std::int64_t mid = lo + (hi - lo + 1) / 2;
      if (pred(mid)) {
        lo = mid;
      } else {
        hi = mid - 1;
      }
    }
    return lo;
  };

  // tb dominates transfer volume (the variant stream is re-read ceil(t/tb)
  // times), so maximize it first while mb sits at one default block; then
  // grow mb into whatever budget remains.
  const std::int64_t mb_seed = max_feasible(
      1, std::min<std::int64_t>(dims.m, kDefaultBlock),
      [&](std::int64_t mb) { return set_bytes(mb, 1) <= budget_bytes; });
  const std::int64_t tb = max_feasible(1, dims.t, [&](std::int64_t tb_) {
    return set_bytes(mb_seed, tb_) <= budget_bytes;
  });
  const std::int64_t mb = max_feasible(mb_seed, dims.m, [&](std::int64_t mb_) {
    return set_bytes(mb_, tb) <= budget_bytes;
  });

  TileParams out;
  out.mb = mb;
  out.tb = tb;
  out.mbb = std::min<std::int64_t>(kDefaultBlock, mb);
  out.tbb = std::min<std::int64_t>(kDefaultBlock, tb);
  out.nb = max_feasible(1, default_nb(dims), [&](std::int64_t nb_) {
    return transform_working_set_bytes(dims.n, nb_, double_buffer) <=
           budget_bytes;
  });
  out.validate(dims);
  return out;
}

// ---------------------------------------------------------------------------
// Stream transform pass
// ---------------------------------------------------------------------------

void preloop_stream_transform(const GridPrecompute& pre,
                              const std::filesystem::path& src_path,
                              const std::filesystem::path& dst_path,
                              std::int64_t nb, bool double_buffer,
                              RunCounters& counters) {
  const auto t0 = clock_type::now();
  if (nb < 1) {
    throw DimensionError("transform slab width nb must be >= 1, got " +
                         std::to_string(nb));
  }
  const bool in_place =
      src_path == dst_path ||
      (std::filesystem::exists(dst_path) &&
       std::filesystem::equivalent(src_path, dst_path));

  InputStream in = InputStream::open(src_path, StreamKind::snp, &counters);
  const std::int64_t n = in.rows();
  const std::int64_t m = in.count();
  if (n != pre.n()) {
    throw DimensionError("variant stream rows (" + std::to_string(n) +
                         ") disagree with the kinship dimension (" +
                         std::to_string(pre.n()) + ")");
  }
  nb = std::min(nb, m);

  OutputStream out =
      in_place
          ? OutputStream::open_for_rewrite(dst_path, StreamKind::snp,
                                           &counters)
          : OutputStream::create(dst_path, make_header(StreamKind::snp, n, m),
                                 &counters);

  struct Workspace {
    Eigen::MatrixXd raw;
    Eigen::MatrixXd rot;
  };
  std::vector<Workspace> workspaces(double_buffer ? 2 : 1);
  for (Workspace& w : workspaces) {
    w.raw.resize(n, nb);
    w.rot.resize(n, nb);
  }

  const std::int64_t steps = ceil_div(m, nb);
  const auto slab_range = [&](std::size_t s, std::int64_t& c0,
                              std::int64_t& width) {
    c0 = static_cast<std::int64_t>(s) * nb;
    width = std::min(nb, m - c0);
  };
  pipeline_run(
      static_cast<std::size_t>(steps), workspaces.data(), workspaces.size(),
      [&](std::size_t s, Workspace& w) {
        std::int64_t c0, width;
        slab_range(s, c0, width);
        in.read_columns(c0, width, w.raw.data());
      },
      [&](std::size_t s, Workspace& w) {
        std::int64_t c0, width;
        slab_range(s, c0, width);
        transform_snp_slab(pre, w.raw.leftCols(width), w.rot.leftCols(width),
                           &counters);
      },
      [&](std::size_t s, Workspace& w) {
        std::int64_t c0, width;
        slab_range(s, c0, width);
        out.write_columns(c0, width, w.rot.data());
      });
  out.finalize();
  // A transform-side wait is a preloop cost, not a loop stall, so the
  // pipeline's stall seconds are deliberately dropped here.
  counters.add_preloop_wall_seconds(seconds_since(t0));
}

// ---------------------------------------------------------------------------
// Grid runs
// ---------------------------------------------------------------------------

void run_grid(const GridPrecompute& pre,
              const std::filesystem::path& snps_rot_path,
              const std::filesystem::path& traits_path,
              const std::filesystem::path& out_path, const RunOptions& options,
              RunCounters& counters) {
  InputStream snps = InputStream::open(snps_rot_path, StreamKind::snp,
                                       &counters);
  InputStream traits = InputStream::open(traits_path, StreamKind::trait,
                                         &counters);
  const std::int64_t n = pre.n();
  const std::int64_t p = pre.p();
  if (snps.rows() != n || traits.rows() != n) {
    throw DimensionError("stream rows disagree with the kinship dimension");
  }
  const std::int64_t m = snps.count();
  const std::int64_t t = traits.count();
  const ProblemDims dims{n, p, m, t};
  dims.validate();
  const TileParams params = options.params.resolved(dims);
  const int workers = std::max(1, options.workers);
  if (options.memory_budget_bytes) {
    const std::uint64_t need = working_set_bytes(
        dims, params, options.scheduler, workers, options.double_buffer);
    if (need > *options.memory_budget_bytes) {
      throw InfeasibleBudgetError(
          "working set of " + std::to_string(need) +
          " bytes exceeds the memory budget of " +
          std::to_string(*options.memory_budget_bytes) + " bytes");
    }
  }
  OutputStream out = OutputStream::create(
      out_path, make_header(StreamKind::result, m, t, p), &counters);

  const std::int64_t mb = params.mb;
  const std::int64_t tb = params.tb;
  const std::int64_t slabs = ceil_div(m, mb);   // variant slabs per pass
  const std::int64_t passes = ceil_div(t, tb);  // trait slabs

  // Shared per-pass state: the rotated trait slab and its contexts.  Only
  // the streaming thread writes these, always before any tile of the pass
  // starts computing.
  Eigen::MatrixXd trait_slab(n, tb);
  std::vector<double> h2(static_cast<std::size_t>(tb));
  std::vector<double> sigma2(static_cast<std::size_t>(tb));
  std::vector<TraitContext> contexts;

  // Returns the seconds this thread was blocked on trait-stream I/O.
  const auto load_pass = [&](std::int64_t pass) {
    const std::int64_t j0 = pass * tb;
    const std::int64_t cols = std::min(tb, t - j0);
    const auto io0 = clock_type::now();
    traits.read_columns(j0, cols, trait_slab.data());
    traits.read_scalars(j0, cols, h2.data(), sigma2.data());
    const double io_seconds = seconds_since(io0);
    transform_trait_slab(pre, trait_slab.leftCols(cols), &counters);
    std::vector<TraitScalars> scalars(static_cast<std::size_t>(cols));
    for (std::int64_t k = 0; k < cols; ++k) {
      scalars[static_cast<std::size_t>(k)] = {h2[static_cast<std::size_t>(k)],
                                              sigma2[static_cast<std::size_t>(k)]};
    }
    contexts = build_trait_contexts(pre, trait_slab.leftCols(cols), scalars,
                                    j0, &counters);
    return io_seconds;
  };

  if (options.scheduler == Scheduler::ct) {
    std::optional<WorkerPool> pool;
    if (workers > 1) pool.emplace(workers);

    struct Workspace {
      Eigen::MatrixXd slab;
      ResultTile tile;
    };
    std::vector<Workspace> workspaces(options.double_buffer ? 2 : 1);
    for (Workspace& w : workspaces) {
      w.slab.resize(n, mb);
      w.tile.data.reserve(static_cast<std::size_t>(mb) * tb * p);
    }

    const PipelineStats stats = pipeline_run(
        static_cast<std::size_t>(passes * slabs), workspaces.data(),
        workspaces.size(),
        [&](std::size_t s, Workspace& w) {
          const std::int64_t k = static_cast<std::int64_t>(s) % slabs;
          const std::int64_t i0 = k * mb;
          snps.read_columns(i0, std::min(mb, m - i0), w.slab.data());
        },
        [&](std::size_t s, Workspace& w) {
          const std::int64_t pass = static_cast<std::int64_t>(s) / slabs;
          const std::int64_t k = static_cast<std::int64_t>(s) % slabs;
          if (k == 0) counters.add_stall_seconds(load_pass(pass));
          const std::int64_t i0 = k * mb;
          const std::int64_t rows = std::min(mb, m - i0);
          const std::int64_t j0 = pass * tb;
          const std::int64_t cols = std::min(tb, t - j0);
          w.tile.reset(i0, j0, rows, cols, p);
          compute_tile(contexts, w.slab.leftCols(rows), params, w.tile,
                       pool ? &*pool : nullptr, &counters);
        },
        [&](std::size_t, Workspace& w) {
          out.write_result_cells(w.tile.i0, w.tile.j0, w.tile.rows,
                                 w.tile.cols, w.tile.data.data());
        });
    counters.add_stall_seconds(stats.stall_seconds);
    counters.add_loops_wall_seconds(stats.wall_seconds);
  } else {
    // Independent workers: each owns every slabs-th variant slab of the pass
    // and does its own synchronous reads and writes through private handles.
    const auto wall0 = clock_type::now();
    std::vector<InputStream> worker_in;
    std::vector<OutputStream> worker_out;
    worker_in.reserve(static_cast<std::size_t>(workers));
    worker_out.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      worker_in.push_back(snps.clone());
      worker_out.push_back(OutputStream::open_existing(
          out_path, StreamKind::result, &counters));
    }

    struct Workspace {
      Eigen::MatrixXd slab;
      ResultTile tile;
    };
    std::vector<Workspace> workspaces(static_cast<std::size_t>(workers));
    for (Workspace& w : workspaces) {
      w.slab.resize(n, mb);
      w.tile.data.reserve(static_cast<std::size_t>(mb) * tb * p);
    }
    std::vector<std::uint64_t> io_ns(static_cast<std::size_t>(workers), 0);

    std::optional<WorkerPool> pool;
    if (workers > 1) pool.emplace(workers);
    std::atomic<bool> abort{false};
    std::mutex error_mu;
    std::exception_ptr first_error;

    for (std::int64_t pass = 0; pass < passes && !first_error; ++pass) {
      counters.add_stall_seconds(load_pass(pass));
      const std::int64_t j0 = pass * tb;
      const std::int64_t cols = std::min(tb, t - j0);
      const auto body = [&](int w) {
        Workspace& ws = workspaces[static_cast<std::size_t>(w)];
        try {
          for (std::int64_t k = w; k < slabs; k += workers) {
            if (abort.load(std::memory_order_relaxed)) return;
            const std::int64_t i0 = k * mb;
            const std::int64_t rows = std::min(mb, m - i0);
            const auto r0 = clock_type::now();
            worker_in[static_cast<std::size_t>(w)].read_columns(
                i0, rows, ws.slab.data());
            io_ns[static_cast<std::size_t>(w)] +=
                static_cast<std::uint64_t>(seconds_since(r0) * 1e9);
            ws.tile.reset(i0, j0, rows, cols, p);
            compute_tile(contexts, ws.slab.leftCols(rows), params, ws.tile,
                         nullptr, &counters);
            const auto w0 = clock_type::now();
            worker_out[static_cast<std::size_t>(w)].write_result_cells(
                i0, j0, rows, cols, ws.tile.data.data());
            io_ns[static_cast<std::size_t>(w)] +=
                static_cast<std::uint64_t>(seconds_since(w0) * 1e9);
          }
        } catch (...) {
          {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!first_error) first_error = std::current_exception();
          }
          abort.store(true, std::memory_order_relaxed);
        }
      };
      if (pool) {
        pool->run(body);
      } else {
        body(0);
      }
    }
    if (first_error) std::rethrow_exception(first_error);

    const std::uint64_t total_io =
        std::accumulate(io_ns.begin(), io_ns.end(), std::uint64_t{0});
    // Mean per-worker blocked time: comparable to the coordinator-side
    // stall of a ct run.
    counters.add_stall_seconds(
        static_cast<double>(total_io / static_cast<std::uint64_t>(workers)) *
        1e-9);
    counters.add_loops_wall_seconds(seconds_since(wall0));
  }
  out.finalize();
}

void run_grid_naive(const GridPrecompute& pre,
                    const std::filesystem::path& snps_raw_path,
                    const std::filesystem::path& traits_path,
                    const std::filesystem::path& out_path,
                    RunCounters& counters) {
  InputStream snps = InputStream::open(snps_raw_path, StreamKind::snp,
                                       &counters);
  InputStream traits = InputStream::open(traits_path, StreamKind::trait,
                                         &counters);
  const std::int64_t n = pre.n();
  const std::int64_t p = pre.p();
  if (snps.rows() != n || traits.rows() != n) {
    throw DimensionError("stream rows disagree with the kinship dimension");
  }
  const std::int64_t m = snps.count();
  const std::int64_t t = traits.count();
  ProblemDims{n, p, m, t}.validate();
  OutputStream out = OutputStream::create(
      out_path, make_header(StreamKind::result, m, t, p), &counters);

  const auto wall0 = clock_type::now();
  double io_seconds = 0.0;
  Eigen::MatrixXd y(n, 1), y_rot(n, 1);
  Eigen::MatrixXd x(n, 1), x_rot(n, 1);
  std::vector<double> column(static_cast<std::size_t>(m) * p);
  CellWorkspace ws;
  ws.resize(n, p);

  for (std::int64_t j = 0; j < t; ++j) {
    double h2 = 0.0, sigma2 = 0.0;
    auto io0 = clock_type::now();
    traits.read_columns(j, 1, y.data());
    traits.read_scalars(j, 1, &h2, &sigma2);
    io_seconds += seconds_since(io0);
    // No hoisted stream transform: every column is rotated inside the loop,
    // which is exactly the n^2-per-cell cost the tiled engine avoids.
    rotate_columns(pre.spectrum.basis, y, y_rot);
    counters.add_loop_transform_flops(slab_transform_flops(n, 1));
    const std::vector<TraitScalars> scalars{{h2, sigma2}};
    const std::vector<TraitContext> ctx =
        build_trait_contexts(pre, y_rot, scalars, j, &counters);

    for (std::int64_t i = 0; i < m; ++i) {
      io0 = clock_type::now();
      snps.read_columns(i, 1, x.data());
      io_seconds += seconds_since(io0);
      rotate_columns(pre.spectrum.basis, x, x_rot);
      counters.add_loop_transform_flops(slab_transform_flops(n, 1));
      solve_gls_cell(ctx[0], x_rot.col(0), ws,
                     column.data() + static_cast<std::size_t>(i) * p, i);
    }
    counters.add_loop_flops(static_cast<std::uint64_t>(m) * cell_flops(n, p));

    io0 = clock_type::now();
    out.write_result_cells(0, j, m, 1, column.data());
    io_seconds += seconds_since(io0);
  }
  out.finalize();
  counters.add_stall_seconds(io_seconds);
  counters.add_loops_wall_seconds(seconds_since(wall0));
}

}  // namespace gwgrid
