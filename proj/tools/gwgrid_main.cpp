// gwgrid: generate / tune / solve / verify / bench for grids of correlated
// generalized least-squares problems backed by GWG1 streams.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage, 3 verification failure.
// Every invocation ends with a machine-parseable `status=` line on stdout.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>

#include "gwgrid/datagen.hpp"
#include "gwgrid/gls.hpp"
#include "gwgrid/grid.hpp"
#include "gwgrid/stream.hpp"
#include "gwgrid/tuner.hpp"
#include "gwgrid/types.hpp"

namespace fs = std::filesystem;
using namespace gwgrid;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;
constexpr int kVerification = 3;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

int usage_error(const std::string& message) {
  std::cerr << "error: " << message << "\n";
  std::cout << "status=usage\n";
  return kUsage;
}

void print_counters(const FlopIoCounters& c, std::ostream& out) {
  out << "preloop_flops=" << c.preloop_flops << "\n"
      << "loop_flops=" << c.loop_flops << "\n"
      << "loop_transform_flops=" << c.loop_transform_flops << "\n"
      << "context_builds=" << c.context_builds << "\n"
      << "bytes_loaded=" << c.bytes_loaded << "\n"
      << "bytes_stored=" << c.bytes_stored << "\n"
      << "io_stall_seconds=" << fmt(c.io_stall_seconds) << "\n"
      << "loops_wall_seconds=" << fmt(c.loops_wall_seconds) << "\n"
      << "preloop_wall_seconds=" << fmt(c.preloop_wall_seconds) << "\n"
      << "stall_fraction=" << fmt(c.stall_fraction()) << "\n"
      << "wall_time_s=" << fmt(c.loops_wall_seconds) << "\n"
      << "total_wall_seconds="
      << fmt(c.preloop_wall_seconds + c.loops_wall_seconds) << "\n";
}

void print_params(const TileParams& p, std::ostream& out) {
  out << "nb=" << p.nb << "\n"
      << "mb=" << p.mb << "\n"
      << "tb=" << p.tb << "\n"
      << "mbb=" << p.mbb << "\n"
      << "tbb=" << p.tbb << "\n";
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateConfig {
  GenSpec spec;
  std::string kinship_name = "random-spd";
  std::string out_dir;
};

int run_generate(GenerateConfig& cfg) {
  try {
    cfg.spec.kinship = parse_kinship_model(cfg.kinship_name);
    cfg.spec.validate();
  } catch (const Error& e) {
    return usage_error(e.what());
  }
  RunCounters counters;
  const DatasetPaths paths =
      generate_dataset(cfg.spec, fs::path(cfg.out_dir), &counters);
  const FlopIoCounters c = counters.snapshot();
  std::cout << "manifest=" << paths.manifest.string() << "\n"
            << "bytes_stored=" << c.bytes_stored << "\n"
            << "status=ok\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

struct TuneConfig {
  ProblemDims dims{1000, 4, 100000, 1000};
  std::string profile_path;       // injected profile; empty = measure
  std::string save_profile_path;  // where to save a measured profile
  std::string scratch_dir;
  int trials = 3;
  bool sweep_blocks = false;
  std::uint64_t budget = 1ull << 30;
  std::string scheduler = "ct";
  int workers = 1;
  bool no_pipeline = false;
};

int run_tune(TuneConfig& cfg) {
  try {
    cfg.dims.validate();
  } catch (const Error& e) {
    return usage_error(e.what());
  }

  MachineProfile profile;
  if (!cfg.profile_path.empty()) {
    profile = load_profile(cfg.profile_path);
    std::cout << "profile_source=injected\n";
  } else {
    ProfileOptions options;
    options.scratch_dir = cfg.scratch_dir.empty()
                              ? fs::temp_directory_path()
                              : fs::path(cfg.scratch_dir);
    options.trials = cfg.trials;
    const ProfileResult measured = profile_machine(options);
    profile = measured.profile;
    std::cout << "profile_source=measured\n"
              << "profile_stable=" << (measured.stable ? "1" : "0") << "\n";
    for (const std::string& note : measured.notes) {
      std::cerr << "note: " << note << "\n";
    }
    if (!cfg.save_profile_path.empty()) {
      save_profile(cfg.save_profile_path, profile);
      std::cout << "profile_saved=" << cfg.save_profile_path << "\n";
    }
  }

  std::cout << "preloop_flops_per_sec=" << fmt(profile.preloop_flops_per_sec)
            << "\n"
            << "loops_flops_per_sec=" << fmt(profile.loops_flops_per_sec)
            << "\n"
            << "io_bandwidth=" << fmt(profile.io_bandwidth) << "\n"
            << "datatype_size=" << fmt(profile.datatype_size) << "\n"
            << "bw_saturation_bytes=" << profile.bw_saturation_bytes << "\n"
            << "gemm_saturation_nb=" << profile.gemm_saturation_nb << "\n";

  if (cfg.sweep_blocks) {
    ProfileOptions options;
    options.scratch_dir = cfg.scratch_dir.empty()
                              ? fs::temp_directory_path()
                              : fs::path(cfg.scratch_dir);
    options.trials = cfg.trials;
    const BlockSweepResult sweep = sweep_block_size(options);
    for (std::size_t i = 0; i < sweep.candidates.size(); ++i) {
      std::cout << "block_rate[" << sweep.candidates[i]
                << "]=" << fmt(sweep.flops_per_sec[i]) << "\n";
    }
    std::cout << "block_chosen=" << sweep.chosen << "\n";
  }

  const Scheduler sched =
      cfg.scheduler == "it" ? Scheduler::it : Scheduler::ct;
  const Recommendation rec = recommend_params(
      cfg.dims, profile, cfg.budget, sched, cfg.workers, !cfg.no_pipeline);
  for (const std::string& line : rec.report) std::cout << line << "\n";
  std::cout << "status=ok\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// solve / bench shared plumbing
// ---------------------------------------------------------------------------

struct SolveInputs {
  DatasetManifest manifest;
  Eigen::MatrixXd kinship;
  Eigen::MatrixXd xl;
};

SolveInputs load_solve_inputs(const fs::path& data_dir, RunCounters* counters) {
  SolveInputs in;
  in.manifest = load_manifest(data_dir / "manifest.txt");
  in.kinship = read_dense(in.manifest.paths.kinship, StreamKind::operand,
                          counters);
  in.xl = read_dense(in.manifest.paths.xl, StreamKind::operand, counters);
  return in;
}

// Tile parameters for a run: explicit flags win; otherwise a given budget
// plans the tiling, and with neither the streams run in-core.
TileParams plan_params(const ProblemDims& dims, const TileParams& flags,
                       std::optional<std::uint64_t> budget, Scheduler sched,
                       int workers, bool double_buffer) {
  const bool any_explicit =
      flags.nb || flags.mb || flags.tb || flags.mbb || flags.tbb;
  if (budget && !any_explicit) {
    return fit_tile_params(dims, *budget, sched, workers, double_buffer);
  }
  TileParams params = flags.resolved(dims);
  if (budget &&
      transform_working_set_bytes(dims.n, params.nb, double_buffer) >
          *budget) {
    throw InfeasibleBudgetError(
        "stream transform working set exceeds the memory budget; lower --nb");
  }
  return params;
}

struct SolveConfig {
  std::string data_dir;
  std::string out_path;
  std::string transformed_path;
  std::string report_path;
  std::string scheduler = "ct";
  int workers = 0;  // 0: inherit --threads, else 1
  TileParams flags;
  std::optional<std::uint64_t> budget;
  bool no_pipeline = false;
  int threads = 0;
};

int run_solve(SolveConfig& cfg) {
  RunCounters counters;
  const SolveInputs in = load_solve_inputs(cfg.data_dir, &counters);
  const ProblemDims& dims = in.manifest.spec.dims;
  const fs::path out = cfg.out_path.empty()
                           ? fs::path(cfg.data_dir) / "b.gwg"
                           : fs::path(cfg.out_path);

  const GridPrecompute pre = precompute_grid(in.kinship, in.xl, counters);

  std::ostringstream report;
  report << "scheduler=" << cfg.scheduler << "\n";
  report << "n=" << dims.n << "\np=" << dims.p << "\nm=" << dims.m
         << "\nt=" << dims.t << "\n";

  if (cfg.scheduler == "naive") {
    const bool noisy_flags = cfg.flags.nb || cfg.flags.mb || cfg.flags.tb ||
                             cfg.flags.mbb || cfg.flags.tbb ||
                             cfg.workers > 1 || cfg.budget.has_value();
    if (noisy_flags) {
      std::cerr << "warning: the naive scheduler reads one column at a time; "
                   "tile, worker, and budget flags are ignored\n";
    }
    run_grid_naive(pre, in.manifest.paths.snps, in.manifest.paths.traits, out,
                   counters);
    report << "workers=1\n";
  } else {
    RunOptions options;
    options.scheduler =
        cfg.scheduler == "it" ? Scheduler::it : Scheduler::ct;
    options.workers = cfg.workers > 0 ? cfg.workers
                      : cfg.threads > 0 ? cfg.threads
                                        : 1;
    options.double_buffer = !cfg.no_pipeline;
    options.memory_budget_bytes = cfg.budget;
    options.params = plan_params(dims, cfg.flags, cfg.budget,
                                 options.scheduler, options.workers,
                                 options.double_buffer);

    const fs::path rotated =
        cfg.transformed_path.empty()
            ? out.parent_path() / "snps_rot.gwg"
            : fs::path(cfg.transformed_path);
    preloop_stream_transform(pre, in.manifest.paths.snps, rotated,
                             options.params.nb, options.double_buffer,
                             counters);
    run_grid(pre, rotated, in.manifest.paths.traits, out, options, counters);

    report << "workers=" << options.workers << "\n";
    std::ostringstream params_text;
    print_params(options.params, params_text);
    report << params_text.str();
    report << "transformed=" << rotated.string() << "\n";
  }

  std::ostringstream counter_text;
  print_counters(counters.snapshot(), counter_text);
  report << counter_text.str();
  report << "out=" << out.string() << "\n";

  std::cout << report.str() << "status=ok\n";
  if (!cfg.report_path.empty()) {
    std::ofstream rf(cfg.report_path);
    if (!rf) throw IoError("cannot write report file " + cfg.report_path);
    rf << report.str() << "status=ok\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyConfig {
  std::string data_dir;
  std::string results_path;
  std::int64_t sample = 1000;
  bool exhaustive = false;
  double tolerance = 1e-8;
  std::uint64_t seed = 1;
};

int run_verify(VerifyConfig& cfg) {
  if (cfg.sample < 1) return usage_error("--sample must be >= 1");
  if (!(cfg.tolerance > 0)) return usage_error("--tolerance must be > 0");

  const SolveInputs in = load_solve_inputs(cfg.data_dir, nullptr);
  const ProblemDims& dims = in.manifest.spec.dims;
  const fs::path results_path = cfg.results_path.empty()
                                    ? fs::path(cfg.data_dir) / "b.gwg"
                                    : fs::path(cfg.results_path);

  const InputStream results =
      InputStream::open(results_path, StreamKind::result);
  if (results.rows() != dims.m || results.count() != dims.t ||
      results.coeffs() != dims.p) {
    throw DimensionError("results file shape does not match the dataset");
  }
  const InputStream snps = InputStream::open(in.manifest.paths.snps,
                                             StreamKind::snp);
  const InputStream traits = InputStream::open(in.manifest.paths.traits,
                                               StreamKind::trait);

  // Cells to check, as trait-major linear indices so one trait factorization
  // serves every sampled cell of that trait.
  const std::uint64_t total = static_cast<std::uint64_t>(dims.m) *
                              static_cast<std::uint64_t>(dims.t);
  std::vector<std::uint64_t> cells;
  const bool exhaustive =
      cfg.exhaustive || static_cast<std::uint64_t>(cfg.sample) >= total;
  if (exhaustive) {
    cells.resize(total);
    for (std::uint64_t c = 0; c < total; ++c) cells[c] = c;
  } else {
    std::mt19937_64 rng(splitmix64(cfg.seed ^ 0x76657269ull));
    std::set<std::uint64_t> picked;
    while (picked.size() < static_cast<std::uint64_t>(cfg.sample)) {
      picked.insert(rng() % total);
    }
    cells.assign(picked.begin(), picked.end());
  }

  const CholeskyOracle oracle(in.kinship);
  Eigen::VectorXd x_col(dims.n);
  Eigen::VectorXd y_col(dims.n);
  Eigen::VectorXd got(dims.p);
  double max_rel = 0.0;
  std::int64_t worst_i = -1;
  std::int64_t worst_j = -1;

  std::int64_t current_trait = -1;
  TraitScalars scalars;
  std::optional<CholeskyOracle::TraitFactor> factor;
  for (const std::uint64_t cell : cells) {
    const std::int64_t j = static_cast<std::int64_t>(cell / dims.m);
    const std::int64_t i = static_cast<std::int64_t>(cell % dims.m);
    if (j != current_trait) {
      traits.read_columns(j, 1, y_col.data());
      traits.read_scalars(j, 1, &scalars.h2, &scalars.sigma2);
      factor = oracle.factor(scalars, j);
      current_trait = j;
    }
    snps.read_columns(i, 1, x_col.data());
    const Eigen::VectorXd ref = factor->solve(in.xl, x_col, y_col);
    results.read_result_cell(i, j, got.data());
    const double denom = ref.norm();
    const double rel =
        denom > 0.0 ? (got - ref).norm() / denom : (got - ref).norm();
    if (rel > max_rel || worst_i < 0) {
      max_rel = rel;
      worst_i = i;
      worst_j = j;
    }
  }

  std::cout << "mode=" << (exhaustive ? "exhaustive" : "sample") << "\n"
            << "checked=" << cells.size() << "\n"
            << "tolerance=" << fmt(cfg.tolerance) << "\n"
            << "max_rel_err=" << fmt(max_rel) << "\n"
            << "worst_snp=" << worst_i << "\n"
            << "worst_trait=" << worst_j << "\n";
  if (max_rel <= cfg.tolerance) {
    std::cout << "status=ok\n";
    return kOk;
  }
  std::cout << "status=verification-failed\n";
  return kVerification;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchConfig {
  std::string data_dir;
  std::string out_path;
  std::string csv_path;
  std::vector<int> workers_list;
  int max_workers = 4;
  std::vector<std::string> schedulers{"ct", "it"};
  TileParams flags;
  std::optional<std::uint64_t> budget;
  bool no_pipeline = false;
};

int run_bench(BenchConfig& cfg) {
  for (const std::string& s : cfg.schedulers) {
    if (s != "ct" && s != "it") {
      return usage_error("--schedulers entries must be ct or it");
    }
  }
  std::vector<int> workers = cfg.workers_list;
  if (workers.empty()) {
    for (int w = 1; w <= cfg.max_workers; w *= 2) workers.push_back(w);
  }
  for (const int w : workers) {
    if (w < 1) return usage_error("worker counts must be >= 1");
  }

  RunCounters pre_counters;
  const SolveInputs in = load_solve_inputs(cfg.data_dir, &pre_counters);
  const ProblemDims& dims = in.manifest.spec.dims;
  const fs::path out = cfg.out_path.empty()
                           ? fs::path(cfg.data_dir) / "bench_b.gwg"
                           : fs::path(cfg.out_path);
  const fs::path rotated = out.parent_path() / "bench_snps_rot.gwg";
  const bool double_buffer = !cfg.no_pipeline;

  const int max_w = *std::max_element(workers.begin(), workers.end());
  const GridPrecompute pre = precompute_grid(in.kinship, in.xl, pre_counters);
  // One tiling for every row so wall times stay comparable, planned for the
  // row with the largest buffer replication: independent workers replicate
  // per worker, the coordinated scheduler per pipeline workspace.
  const bool has_it = std::find(cfg.schedulers.begin(), cfg.schedulers.end(),
                                "it") != cfg.schedulers.end();
  const int ct_replication = double_buffer ? 2 : 1;
  const Scheduler plan_sched =
      has_it && max_w > ct_replication ? Scheduler::it : Scheduler::ct;
  const TileParams params = plan_params(dims, cfg.flags, cfg.budget,
                                        plan_sched, max_w, double_buffer);
  preloop_stream_transform(pre, in.manifest.paths.snps, rotated, params.nb,
                           double_buffer, pre_counters);

  std::ostringstream csv;
  csv << "workers,scheduler,wall_time_s,loop_flops,stall_fraction\n";
  for (const int w : workers) {
    for (const std::string& s : cfg.schedulers) {
      RunOptions options;
      options.params = params;
      options.scheduler = s == "it" ? Scheduler::it : Scheduler::ct;
      options.workers = w;
      options.double_buffer = double_buffer;
      options.memory_budget_bytes = cfg.budget;
      RunCounters counters;
      run_grid(pre, rotated, in.manifest.paths.traits, out, options,
               counters);
      const FlopIoCounters c = counters.snapshot();
      csv << w << "," << s << "," << fmt(c.loops_wall_seconds) << ","
          << c.loop_flops << "," << fmt(c.stall_fraction()) << "\n";
    }
  }

  std::cout << csv.str();
  if (!cfg.csv_path.empty()) {
    std::ofstream cf(cfg.csv_path);
    if (!cf) throw IoError("cannot write CSV file " + cfg.csv_path);
    cf << csv.str();
  }
  std::cout << "status=ok\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "grids of correlated generalized least-squares fits over GWG1 "
      "streams: generate data, tune tiling, solve, verify, benchmark"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "dense-kernel thread cap and default worker count");

  GenerateConfig gen;
  CLI::App* cmd_gen =
      app.add_subcommand("generate", "write a synthetic dataset directory");
  cmd_gen->add_option("--n", gen.spec.dims.n, "individuals")->required();
  cmd_gen->add_option("--p", gen.spec.dims.p, "predictors per fit")
      ->required();
  cmd_gen->add_option("--m", gen.spec.dims.m, "variant columns")->required();
  cmd_gen->add_option("--t", gen.spec.dims.t, "traits")->required();
  cmd_gen->add_option("--seed", gen.spec.seed, "master seed");
  cmd_gen->add_option("--out", gen.out_dir, "output directory")->required();
  cmd_gen->add_option("--kinship", gen.kinship_name,
                      "identity | diagonal | random-spd");
  cmd_gen->add_option("--condition", gen.spec.condition,
                      "kinship condition number (random-spd)");
  cmd_gen->add_option("--h2-min", gen.spec.h2_min, "heritability lower bound");
  cmd_gen->add_option("--h2-max", gen.spec.h2_max, "heritability upper bound");
  cmd_gen->add_option("--sigma2-min", gen.spec.sigma2_min,
                      "scale lower bound");
  cmd_gen->add_option("--sigma2-max", gen.spec.sigma2_max,
                      "scale upper bound");

  TuneConfig tune;
  CLI::App* cmd_tune = app.add_subcommand(
      "tune", "recommend tiling from a measured or injected machine profile");
  cmd_tune->add_option("--n", tune.dims.n, "individuals");
  cmd_tune->add_option("--p", tune.dims.p, "predictors per fit");
  cmd_tune->add_option("--m", tune.dims.m, "variant columns");
  cmd_tune->add_option("--t", tune.dims.t, "traits");
  cmd_tune->add_option("--profile", tune.profile_path,
                       "key=value profile file (skips measurement)");
  cmd_tune->add_option("--save-profile", tune.save_profile_path,
                       "write the measured profile here");
  cmd_tune->add_option("--scratch", tune.scratch_dir,
                       "scratch directory for measurement probes");
  cmd_tune->add_option("--trials", tune.trials, "measurement repetitions");
  cmd_tune->add_flag("--sweep-blocks", tune.sweep_blocks,
                     "also sweep block sizes");
  cmd_tune->add_option("--memory-budget", tune.budget, "bytes");
  cmd_tune->add_option("--scheduler", tune.scheduler, "ct | it")
      ->check(CLI::IsMember({"ct", "it"}));
  cmd_tune->add_option("--workers", tune.workers, "worker threads");
  cmd_tune->add_flag("--no-pipeline", tune.no_pipeline,
                     "plan for synchronous transfers");

  SolveConfig solve;
  CLI::App* cmd_solve =
      app.add_subcommand("solve", "stream the whole grid to a result file");
  cmd_solve->add_option("--data", solve.data_dir, "dataset directory")
      ->required();
  cmd_solve->add_option("--out", solve.out_path,
                        "result file (default <data>/b.gwg)");
  cmd_solve->add_option("--transformed", solve.transformed_path,
                        "rotated variant stream path");
  cmd_solve->add_option("--report", solve.report_path,
                        "also write the key=value report here");
  cmd_solve->add_option("--scheduler", solve.scheduler, "ct | it | naive")
      ->check(CLI::IsMember({"ct", "it", "naive"}));
  cmd_solve->add_option("--workers", solve.workers, "worker threads");
  cmd_solve->add_option("--nb", solve.flags.nb, "transform slab columns");
  cmd_solve->add_option("--mb", solve.flags.mb, "variant tile rows");
  cmd_solve->add_option("--tb", solve.flags.tb, "trait tile columns");
  cmd_solve->add_option("--mbb", solve.flags.mbb, "block rows");
  cmd_solve->add_option("--tbb", solve.flags.tbb, "block columns");
  cmd_solve->add_option("--memory-budget", solve.budget, "bytes");
  cmd_solve->add_flag("--no-pipeline", solve.no_pipeline,
                      "disable double buffering");

  VerifyConfig verify;
  CLI::App* cmd_verify = app.add_subcommand(
      "verify", "recheck result cells against the factorization oracle");
  cmd_verify->add_option("--data", verify.data_dir, "dataset directory")
      ->required();
  cmd_verify->add_option("--results", verify.results_path,
                         "result file (default <data>/b.gwg)");
  cmd_verify->add_option("--sample", verify.sample, "cells to check");
  cmd_verify->add_flag("--exhaustive", verify.exhaustive, "check every cell");
  cmd_verify->add_option("--tolerance", verify.tolerance,
                         "max relative error");
  cmd_verify->add_option("--seed", verify.seed, "sampling seed");

  BenchConfig bench;
  CLI::App* cmd_bench = app.add_subcommand(
      "bench", "CSV of wall time and stalls across workers and schedulers");
  cmd_bench->add_option("--data", bench.data_dir, "dataset directory")
      ->required();
  cmd_bench->add_option("--out", bench.out_path, "result file to overwrite");
  cmd_bench->add_option("--csv", bench.csv_path, "also write the CSV here");
  cmd_bench->add_option("--workers-list", bench.workers_list,
                        "explicit worker counts")
      ->delimiter(',');
  cmd_bench->add_option("--max-workers", bench.max_workers,
                        "doubling sequence cap");
  cmd_bench->add_option("--schedulers", bench.schedulers, "subset of ct,it")
      ->delimiter(',');
  cmd_bench->add_option("--nb", bench.flags.nb, "transform slab columns");
  cmd_bench->add_option("--mb", bench.flags.mb, "variant tile rows");
  cmd_bench->add_option("--tb", bench.flags.tb, "trait tile columns");
  cmd_bench->add_option("--mbb", bench.flags.mbb, "block rows");
  cmd_bench->add_option("--tbb", bench.flags.tbb, "block columns");
  cmd_bench->add_option("--memory-budget", bench.budget, "bytes");
  cmd_bench->add_flag("--no-pipeline", bench.no_pipeline,
                      "disable double buffering");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) {
      std::cout << "status=ok\n";
      return kOk;
    }
    std::cout << "status=usage\n";
    return kUsage;
  }

  if (threads > 0) Eigen::setNbThreads(threads);
  solve.threads = threads;

  try {
    if (*cmd_gen) return run_generate(gen);
    if (*cmd_tune) return run_tune(tune);
    if (*cmd_solve) return run_solve(solve);
    if (*cmd_verify) return run_verify(verify);
    if (*cmd_bench) return run_bench(bench);
  } catch (const NotPositiveDefiniteError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cout << "error=not-positive-definite\n"
              << "snp_index=" << e.snp_index << "\n"
              << "trait_index=" << e.trait_index << "\n"
              << "status=error\n";
    return kRuntime;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cout << "status=error\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cout << "status=error\n";
    return kRuntime;
  }
  std::cout << "status=usage\n";
  return kUsage;
}
