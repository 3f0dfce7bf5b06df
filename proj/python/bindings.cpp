#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <unistd.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gwgrid/datagen.hpp"
#include "gwgrid/gls.hpp"
#include "gwgrid/grid.hpp"
#include "gwgrid/stream.hpp"
#include "gwgrid/tuner.hpp"
#include "gwgrid/types.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace gwgrid;

namespace {

// Per-process unique staging directory; the engine is file-streaming by
// design, so in-memory operands round-trip through a temporary dataset.
struct StagingDir {
  fs::path path;

  StagingDir() {
    static std::atomic<std::uint64_t> counter{0};
    path = fs::temp_directory_path() /
           ("gwgrid_py_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    fs::create_directories(path);
  }
  ~StagingDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  StagingDir(const StagingDir&) = delete;
  StagingDir& operator=(const StagingDir&) = delete;
};

void write_snp_file(const fs::path& path, const Eigen::MatrixXd& snps) {
  StreamHeader h;
  h.kind = StreamKind::snp;
  h.dims = {static_cast<std::uint64_t>(snps.rows()),
            static_cast<std::uint64_t>(snps.cols()), 0};
  OutputStream out = OutputStream::create(path, h);
  out.write_columns(0, snps.cols(), snps.data());
  out.finalize();
}

void write_trait_file(const fs::path& path, const Eigen::MatrixXd& traits,
                      const Eigen::VectorXd& h2,
                      const Eigen::VectorXd& sigma2) {
  StreamHeader h;
  h.kind = StreamKind::trait;
  h.dims = {static_cast<std::uint64_t>(traits.rows()),
            static_cast<std::uint64_t>(traits.cols()), 0};
  OutputStream out = OutputStream::create(path, h);
  out.write_columns(0, traits.cols(), traits.data());
  out.write_trait_scalars(h2.data(), sigma2.data());
  out.finalize();
}

MachineProfile make_profile(double preloop_rate, double loops_rate,
                            double io_bandwidth, double datatype_size,
                            std::uint64_t bw_saturation_bytes,
                            std::int64_t gemm_saturation_nb) {
  MachineProfile p;
  p.preloop_flops_per_sec = preloop_rate;
  p.loops_flops_per_sec = loops_rate;
  p.io_bandwidth = io_bandwidth;
  p.datatype_size = datatype_size;
  p.bw_saturation_bytes = bw_saturation_bytes;
  p.gemm_saturation_nb = gemm_saturation_nb;
  return p;
}

py::dict counters_dict(const FlopIoCounters& c) {
  py::dict d;
  d["preloop_flops"] = c.preloop_flops;
  d["loop_flops"] = c.loop_flops;
  d["loop_transform_flops"] = c.loop_transform_flops;
  d["context_builds"] = c.context_builds;
  d["bytes_loaded"] = c.bytes_loaded;
  d["bytes_stored"] = c.bytes_stored;
  d["io_stall_seconds"] = c.io_stall_seconds;
  d["loops_wall_seconds"] = c.loops_wall_seconds;
  d["preloop_wall_seconds"] = c.preloop_wall_seconds;
  d["stall_fraction"] = c.stall_fraction();
  return d;
}

ProblemDims dims_of(const Eigen::MatrixXd& kinship, const Eigen::MatrixXd& xl,
                    const Eigen::MatrixXd& snps, const Eigen::MatrixXd& traits,
                    const Eigen::VectorXd& h2, const Eigen::VectorXd& sigma2) {
  ProblemDims dims{kinship.rows(), xl.cols() + 1, snps.cols(), traits.cols()};
  if (kinship.cols() != dims.n || xl.rows() != dims.n ||
      snps.rows() != dims.n || traits.rows() != dims.n) {
    throw DimensionError("operand row counts disagree");
  }
  if (h2.size() != dims.t || sigma2.size() != dims.t) {
    throw DimensionError("h2 and sigma2 must have one entry per trait");
  }
  dims.validate();
  return dims;
}

py::dict solve_grid_py(const Eigen::MatrixXd& kinship,
                       const Eigen::MatrixXd& xl, const Eigen::MatrixXd& snps,
                       const Eigen::MatrixXd& traits,
                       const Eigen::VectorXd& h2,
                       const Eigen::VectorXd& sigma2,
                       const std::string& scheduler, int workers,
                       std::int64_t nb, std::int64_t mb, std::int64_t tb,
                       std::int64_t mbb, std::int64_t tbb, bool double_buffer,
                       std::optional<std::uint64_t> memory_budget) {
  const ProblemDims dims = dims_of(kinship, xl, snps, traits, h2, sigma2);
  if (scheduler != "ct" && scheduler != "it" && scheduler != "naive") {
    throw DimensionError("scheduler must be ct, it, or naive");
  }

  std::vector<double> cells(static_cast<std::size_t>(dims.m) *
                            static_cast<std::size_t>(dims.t) *
                            static_cast<std::size_t>(dims.p));
  FlopIoCounters snapshot;
  {
    py::gil_scoped_release release;
    StagingDir stage;
    const fs::path snps_path = stage.path / "snps.gwg";
    const fs::path traits_path = stage.path / "traits.gwg";
    const fs::path out_path = stage.path / "b.gwg";
    write_snp_file(snps_path, snps);
    write_trait_file(traits_path, traits, h2, sigma2);

    RunCounters counters;
    const GridPrecompute pre = precompute_grid(kinship, xl, counters);
    if (scheduler == "naive") {
      run_grid_naive(pre, snps_path, traits_path, out_path, counters);
    } else {
      RunOptions options;
      TileParams flags{nb, mb, tb, mbb, tbb};
      options.scheduler = scheduler == "it" ? Scheduler::it : Scheduler::ct;
      options.workers = workers;
      options.double_buffer = double_buffer;
      options.memory_budget_bytes = memory_budget;
      const bool any_explicit = nb || mb || tb || mbb || tbb;
      options.params =
          memory_budget && !any_explicit
              ? fit_tile_params(dims, *memory_budget, options.scheduler,
                                workers, double_buffer)
              : flags.resolved(dims);
      const fs::path rotated = stage.path / "snps_rot.gwg";
      preloop_stream_transform(pre, snps_path, rotated, options.params.nb,
                               double_buffer, counters);
      run_grid(pre, rotated, traits_path, out_path, options, counters);
    }
    snapshot = counters.snapshot();

    const InputStream results = InputStream::open(out_path, StreamKind::result);
    for (std::int64_t j = 0; j < dims.t; ++j) {
      for (std::int64_t i = 0; i < dims.m; ++i) {
        results.read_result_cell(
            i, j,
            cells.data() + (static_cast<std::size_t>(j) * dims.m + i) * dims.p);
      }
    }
  }

  py::array_t<double> b({dims.m, dims.t, dims.p});
  auto view = b.mutable_unchecked<3>();
  for (std::int64_t i = 0; i < dims.m; ++i) {
    for (std::int64_t j = 0; j < dims.t; ++j) {
      const double* cell =
          cells.data() + (static_cast<std::size_t>(j) * dims.m + i) * dims.p;
      for (std::int64_t k = 0; k < dims.p; ++k) view(i, j, k) = cell[k];
    }
  }

  py::dict out;
  out["b"] = std::move(b);
  out["counters"] = counters_dict(snapshot);
  return out;
}

double verify_grid_py(
    const Eigen::MatrixXd& kinship, const Eigen::MatrixXd& xl,
    const Eigen::MatrixXd& snps, const Eigen::MatrixXd& traits,
    const Eigen::VectorXd& h2, const Eigen::VectorXd& sigma2,
    const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
  const ProblemDims dims = dims_of(kinship, xl, snps, traits, h2, sigma2);
  if (b.ndim() != 3 || b.shape(0) != dims.m || b.shape(1) != dims.t ||
      b.shape(2) != dims.p) {
    throw DimensionError("b must have shape (m, t, p)");
  }
  const auto view = b.unchecked<3>();
  double max_rel = 0.0;
  {
    py::gil_scoped_release release;
    const CholeskyOracle oracle(kinship);
    Eigen::VectorXd got(dims.p);
    for (std::int64_t j = 0; j < dims.t; ++j) {
      const auto factor = oracle.factor({h2(j), sigma2(j)}, j);
      for (std::int64_t i = 0; i < dims.m; ++i) {
        const Eigen::VectorXd ref =
            factor.solve(xl, snps.col(i), traits.col(j));
        for (std::int64_t k = 0; k < dims.p; ++k) got(k) = view(i, j, k);
        const double denom = ref.norm();
        const double rel =
            denom > 0.0 ? (got - ref).norm() / denom : (got - ref).norm();
        max_rel = std::max(max_rel, rel);
      }
    }
  }
  return max_rel;
}

}  // namespace

PYBIND11_MODULE(_impl, module) {
  module.doc() =
      "Native core for grids of correlated generalized least-squares fits: "
      "synthetic data, the eigendecomposition solver and its streaming grid "
      "engine, the factorization oracle, and the tile-parameter tuner.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const NotPositiveDefiniteError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const DimensionError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const NonSymmetricError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const InfeasibleBudgetError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  module.def(
      "generate",
      [](std::int64_t n, std::int64_t p, std::int64_t m, std::int64_t t,
         std::uint64_t seed, const std::string& kinship, double condition,
         std::pair<double, double> h2_range,
         std::pair<double, double> sigma2_range) {
        GenSpec spec;
        spec.dims = {n, p, m, t};
        spec.seed = seed;
        spec.kinship = parse_kinship_model(kinship);
        spec.condition = condition;
        spec.h2_min = h2_range.first;
        spec.h2_max = h2_range.second;
        spec.sigma2_min = sigma2_range.first;
        spec.sigma2_max = sigma2_range.second;
        spec.validate();
        const Dataset ds = generate_in_memory(spec);
        py::dict out;
        out["kinship"] = ds.kinship;
        out["xl"] = ds.xl;
        out["snps"] = ds.snps;
        out["traits"] = ds.traits;
        out["h2"] = ds.h2;
        out["sigma2"] = ds.sigma2;
        return out;
      },
      py::arg("n"), py::arg("p"), py::arg("m"), py::arg("t"),
      py::arg("seed") = 1, py::arg("kinship") = "random-spd",
      py::arg("condition") = 100.0,
      py::arg("h2_range") = std::make_pair(0.2, 0.8),
      py::arg("sigma2_range") = std::make_pair(0.5, 2.0),
      "Deterministic synthetic dataset as a dict of arrays.");

  module.def(
      "eigendecompose",
      [](const Eigen::MatrixXd& phi) {
        const KinshipSpectrum s = eigendecompose_kinship(phi);
        return std::make_pair(s.basis, s.values);
      },
      py::arg("phi"),
      "Eigendecomposition (basis, ascending values) of a symmetric matrix, "
      "with sign-normalized columns.");

  module.def(
      "solve_cell",
      [](const Eigen::MatrixXd& phi, const Eigen::MatrixXd& xl,
         const Eigen::VectorXd& xr, const Eigen::VectorXd& y, double h2,
         double sigma2) {
        const KinshipSpectrum spectrum = eigendecompose_kinship(phi);
        return Eigen::VectorXd(
            solve_partitioned_gls(spectrum, xl, xr, y, {h2, sigma2}));
      },
      py::arg("phi"), py::arg("xl"), py::arg("xr"), py::arg("y"),
      py::arg("h2"), py::arg("sigma2"),
      "One generalized least-squares fit via the eigendecomposition route "
      "(same arithmetic as the grid engine).");

  module.def(
      "solve_cell_oracle",
      [](const Eigen::MatrixXd& phi, const Eigen::MatrixXd& x,
         const Eigen::VectorXd& y, double h2, double sigma2) {
        return Eigen::VectorXd(
            solve_single_gls_oracle(phi, x, y, {h2, sigma2}));
      },
      py::arg("phi"), py::arg("x"), py::arg("y"), py::arg("h2"),
      py::arg("sigma2"),
      "The same fit via the independent Cholesky route, for cross-checks.");

  module.def("solve_grid", &solve_grid_py, py::arg("kinship"), py::arg("xl"),
             py::arg("snps"), py::arg("traits"), py::arg("h2"),
             py::arg("sigma2"), py::arg("scheduler") = "ct",
             py::arg("workers") = 1, py::arg("nb") = 0, py::arg("mb") = 0,
             py::arg("tb") = 0, py::arg("mbb") = 0, py::arg("tbb") = 0,
             py::arg("double_buffer") = true,
             py::arg("memory_budget") = py::none(),
             "Solve the whole m x t grid through the streaming engine; "
             "returns {'b': (m, t, p) array, 'counters': dict}.  Zero tile "
             "parameters mean in-core defaults; a memory_budget with no "
             "explicit tile parameters plans the tiling.");

  module.def("verify_grid", &verify_grid_py, py::arg("kinship"), py::arg("xl"),
             py::arg("snps"), py::arg("traits"), py::arg("h2"),
             py::arg("sigma2"), py::arg("b"),
             "Max relative error of b against the Cholesky oracle over every "
             "cell.");

  module.def(
      "min_tb",
      [](std::int64_t n, std::int64_t p, double loops_rate,
         double io_bandwidth, double datatype_size, double headroom,
         double preloop_rate) {
        return min_tb(n, p,
                      make_profile(preloop_rate, loops_rate, io_bandwidth,
                                   datatype_size, 2ull << 20, 0),
                      headroom);
      },
      py::arg("n"), py::arg("p"), py::arg("loops_rate"),
      py::arg("io_bandwidth"), py::arg("datatype_size") = 8.0,
      py::arg("headroom") = 1.1, py::arg("preloop_rate") = 1.0,
      "Smallest trait-tile width that hides the variant-stream transfer "
      "behind tile compute, or None when no width can.");

  module.def(
      "check_nb_overlap",
      [](std::int64_t n, double preloop_rate, double io_bandwidth,
         double datatype_size, double loops_rate) {
        const OverlapCheck c = check_nb_overlap(
            n, make_profile(preloop_rate, loops_rate, io_bandwidth,
                            datatype_size, 2ull << 20, 0));
        py::dict d;
        d["satisfied"] = c.satisfied;
        d["margin"] = c.margin;
        d["lhs"] = c.lhs;
        d["rhs"] = c.rhs;
        return d;
      },
      py::arg("n"), py::arg("preloop_rate"), py::arg("io_bandwidth"),
      py::arg("datatype_size") = 8.0, py::arg("loops_rate") = 1.0,
      "Whether the transform pass can overlap its own streaming, and by what "
      "margin (slab-width independent).");

  module.def("tile_ratio", &tile_ratio, py::arg("tb"), py::arg("p"),
             py::arg("n"),
             "Loops-section flops per transferred element at trait-tile "
             "width tb.");

  module.def("preloop_ratio", &preloop_ratio, py::arg("n"),
             "Transform flops per transferred element (equals n).");

  module.def(
      "recommend",
      [](std::int64_t n, std::int64_t p, std::int64_t m, std::int64_t t,
         std::uint64_t budget, double preloop_rate, double loops_rate,
         double io_bandwidth, double datatype_size,
         std::uint64_t bw_saturation_bytes, std::int64_t gemm_saturation_nb,
         const std::string& scheduler, int workers, bool double_buffer) {
        if (scheduler != "ct" && scheduler != "it") {
          throw DimensionError("scheduler must be ct or it");
        }
        const Recommendation rec = recommend_params(
            ProblemDims{n, p, m, t},
            make_profile(preloop_rate, loops_rate, io_bandwidth, datatype_size,
                         bw_saturation_bytes, gemm_saturation_nb),
            budget, scheduler == "it" ? Scheduler::it : Scheduler::ct, workers,
            double_buffer);
        py::dict d;
        d["nb"] = rec.params.nb;
        d["mb"] = rec.params.mb;
        d["tb"] = rec.params.tb;
        d["mbb"] = rec.params.mbb;
        d["tbb"] = rec.params.tbb;
        d["tb_min"] = rec.tb_lower_bound;
        d["tb_constraint_met"] = rec.tb_constraint_met;
        d["nb_overlap_satisfied"] = rec.nb_overlap.satisfied;
        d["nb_overlap_margin"] = rec.nb_overlap.margin;
        d["tile_ratio_at_tb"] = rec.tile_ratio_at_tb;
        d["working_set_bytes"] = rec.working_set;
        d["report"] = rec.report;
        return d;
      },
      py::arg("n"), py::arg("p"), py::arg("m"), py::arg("t"),
      py::arg("budget"), py::arg("preloop_rate"), py::arg("loops_rate"),
      py::arg("io_bandwidth"), py::arg("datatype_size") = 8.0,
      py::arg("bw_saturation_bytes") = 2ull << 20,
      py::arg("gemm_saturation_nb") = 0, py::arg("scheduler") = "ct",
      py::arg("workers") = 1, py::arg("double_buffer") = true,
      "Budget-constrained tile parameters plus every constraint evaluation, "
      "as a dict (including the key=value report lines).");
}
