#include "gwgrid/tuner.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "gwgrid/counters.hpp"
#include "gwgrid/gls.hpp"

namespace gwgrid {

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(const clock_type::time_point& t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Profile and constraint arithmetic
// ---------------------------------------------------------------------------

void MachineProfile::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DimensionError(std::string("machine profile field ") + what +
                           " must be finite and strictly positive");
    }
  };
  positive(preloop_flops_per_sec, "preloop_flops_per_sec");
  positive(loops_flops_per_sec, "loops_flops_per_sec");
  positive(io_bandwidth, "io_bandwidth");
  positive(datatype_size, "datatype_size");
}

std::int64_t preloop_ratio(std::int64_t n) {
  if (n < 1) throw DimensionError("preloop_ratio needs n >= 1");
  // 2 n^2 nb flops over 2 n nb elements: the nb factors cancel.
  return n;
}

OverlapCheck check_nb_overlap(std::int64_t n, const MachineProfile& profile) {
  if (n < 1) throw DimensionError("check_nb_overlap needs n >= 1");
  profile.validate();
  OverlapCheck c;
  c.lhs = static_cast<double>(n) / profile.preloop_flops_per_sec;
  c.rhs = profile.datatype_size / profile.io_bandwidth;
  c.margin = c.lhs / c.rhs;
  c.satisfied = c.lhs > c.rhs;
  return c;
}

double tile_ratio(std::int64_t tb, std::int64_t p, std::int64_t n) {
  if (tb < 1 || p < 1 || n < 1) {
    throw DimensionError("tile_ratio needs tb, p, n >= 1");
  }
  const double flops = static_cast<double>(tb) *
                       static_cast<double>(5 + 2 * (p - 1)) *
                       static_cast<double>(n);
  const double elements =
      static_cast<double>(n) + static_cast<double>(tb) * static_cast<double>(p);
  return flops / elements;
}

std::optional<std::int64_t> min_tb(std::int64_t n, std::int64_t p,
                                   const MachineProfile& profile,
                                   double headroom) {
  if (n < 1 || p < 1) throw DimensionError("min_tb needs n, p >= 1");
  if (!(headroom >= 1.0)) {
    throw DimensionError("min_tb headroom must be >= 1");
  }
  profile.validate();
  // Overlap inequality per unit of tb, with headroom folded into the
  // transfer side:  tb*a > b + tb*c  <=>  tb*(a - c) > b.
  const double a = static_cast<double>(5 + 2 * (p - 1)) *
                   static_cast<double>(n) / profile.loops_flops_per_sec;
  const double b = headroom * static_cast<double>(n) * profile.datatype_size /
                   profile.io_bandwidth;
  const double c =
      headroom * static_cast<double>(p) * profile.datatype_size /
      profile.io_bandwidth;
  if (a <= c) return std::nullopt;  // compute per trait never catches up
  const double bound = b / (a - c);
  if (!(bound < 9.0e15)) return std::nullopt;  // beyond representable widths
  return static_cast<std::int64_t>(std::floor(bound)) + 1;
}

// ---------------------------------------------------------------------------
// Measurement
// ---------------------------------------------------------------------------

namespace {

// Sequential read sweep over an existing file, one full pass per trial.
double read_bandwidth(const std::filesystem::path& file,
                      std::uint64_t transfer_bytes, int trials) {
  std::vector<double> rates;
  std::vector<char> buf(transfer_bytes);
  for (int trial = 0; trial < trials; ++trial) {
    const int fd = ::open(file.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd < 0) throw IoError("cannot open bandwidth probe file");
    const auto t0 = clock_type::now();
    std::uint64_t total = 0;
    for (;;) {
      const ssize_t got = ::read(fd, buf.data(), buf.size());
      if (got < 0) {
        ::close(fd);
        throw IoError("read failed during bandwidth probe");
      }
      if (got == 0) break;
      total += static_cast<std::uint64_t>(got);
    }
    const double dt = seconds_since(t0);
    ::close(fd);
    if (total == 0 || dt <= 0.0) throw IoError("bandwidth probe degenerate");
    rates.push_back(static_cast<double>(total) / dt);
  }
  return median(rates);
}

void write_probe_file(const std::filesystem::path& file, std::uint64_t bytes) {
  const int fd = ::open(file.c_str(),
                        O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot create bandwidth probe file");
  std::vector<char> pattern(1ull << 20);
  std::mt19937_64 rng(0x9e3779b97f4a7c15ull);
  for (std::size_t i = 0; i + 8 <= pattern.size(); i += 8) {
    const std::uint64_t x = rng();
    std::memcpy(pattern.data() + i, &x, 8);
  }
  std::uint64_t written = 0;
  while (written < bytes) {
    const std::uint64_t chunk =
        std::min<std::uint64_t>(pattern.size(), bytes - written);
    const ssize_t put = ::write(fd, pattern.data(), chunk);
    if (put <= 0) {
      ::close(fd);
      throw IoError("write failed while building bandwidth probe file");
    }
    written += static_cast<std::uint64_t>(put);
  }
  ::close(fd);
}

// Median seconds of one tile computation at the given shape.
double time_tile(std::int64_t n, std::int64_t p, std::int64_t mb,
                 std::int64_t tb, std::int64_t block, int trials) {
  GridPrecompute pre;
  pre.spectrum.basis = Eigen::MatrixXd::Identity(n, n);
  pre.spectrum.values =
      Eigen::VectorXd::LinSpaced(n, 0.5, 2.0).cwiseMax(0.5);
  std::mt19937_64 rng(42);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto fill = [&](Eigen::MatrixXd& mat) {
    for (std::int64_t j = 0; j < mat.cols(); ++j) {
      for (std::int64_t i = 0; i < mat.rows(); ++i) mat(i, j) = gauss(rng);
    }
  };
  pre.xl_rot.resize(n, p - 1);
  fill(pre.xl_rot);
  Eigen::MatrixXd trait_slab(n, tb);
  fill(trait_slab);
  Eigen::MatrixXd snp_slab(n, mb);
  fill(snp_slab);
  const std::vector<TraitScalars> scalars(
      static_cast<std::size_t>(tb), TraitScalars{0.5, 1.0});
  const std::vector<TraitContext> contexts =
      build_trait_contexts(pre, trait_slab, scalars, 0, nullptr);

  TileParams params;
  params.nb = 1;
  params.mb = mb;
  params.tb = tb;
  params.mbb = std::min(block, mb);
  params.tbb = std::min(block, tb);
  ResultTile tile;
  tile.data.reserve(static_cast<std::size_t>(mb) * tb * p);

  std::vector<double> times;
  for (int trial = 0; trial < trials; ++trial) {
    tile.reset(0, 0, mb, tb, p);
    const auto t0 = clock_type::now();
    compute_tile(contexts, snp_slab, params, tile, nullptr, nullptr);
    times.push_back(seconds_since(t0));
  }
  return median(times);
}

}  // namespace

ProfileResult profile_machine(const ProfileOptions& options) {
  if (options.trials < 1) throw DimensionError("profiling needs trials >= 1");
  if (options.transfer_sizes.empty()) {
    throw DimensionError("profiling needs at least one transfer size");
  }
  ProfileResult result;
  std::vector<std::string>& notes = result.notes;

  // --- Sequential bandwidth at each transfer size ---
  const std::filesystem::path probe =
      options.scratch_dir / "io_probe.bin";
  write_probe_file(probe, options.io_file_bytes);
  double best_bw = 0.0;
  std::vector<double> size_bw;
  for (const std::uint64_t size : options.transfer_sizes) {
    const double bw = read_bandwidth(probe, size, options.trials);
    size_bw.push_back(bw);
    best_bw = std::max(best_bw, bw);
    notes.push_back("read_bandwidth[" + std::to_string(size) +
                    "B]=" + format_double(bw));
  }
  std::uint64_t saturation = options.transfer_sizes.back();
  for (std::size_t i = 0; i < options.transfer_sizes.size(); ++i) {
    if (size_bw[i] >= 0.95 * best_bw) {
      saturation = options.transfer_sizes[i];
      break;
    }
  }
  // Stability gate: a second probe at the saturating size.
  const double repeat_bw = read_bandwidth(probe, saturation, options.trials);
  notes.push_back("read_bandwidth_repeat=" + format_double(repeat_bw));
  const double drift =
      std::abs(repeat_bw - best_bw) / std::max(repeat_bw, best_bw);
  if (drift > 0.30) {
    result.stable = false;
    notes.push_back("unstable: consecutive bandwidth probes differ by " +
                    format_double(100.0 * drift) + "%");
  }
  std::error_code ec;
  std::filesystem::remove(probe, ec);

  // --- Rotation (dense product) rate across candidate slab widths ---
  const std::int64_t gn = options.gemm_n;
  Eigen::MatrixXd basis = Eigen::MatrixXd::Random(gn, gn);
  double best_gemm = 0.0;
  std::vector<double> gemm_rates;
  for (const std::int64_t nb : options.gemm_nb_candidates) {
    Eigen::MatrixXd src = Eigen::MatrixXd::Random(gn, nb);
    Eigen::MatrixXd dst(gn, nb);
    std::vector<double> times;
    for (int trial = 0; trial < options.trials; ++trial) {
      const auto t0 = clock_type::now();
      dst.noalias() = basis.transpose() * src;
      times.push_back(seconds_since(t0));
    }
    const double rate =
        static_cast<double>(slab_transform_flops(gn, nb)) / median(times);
    gemm_rates.push_back(rate);
    best_gemm = std::max(best_gemm, rate);
    notes.push_back("rotation_rate[nb=" + std::to_string(nb) +
                    "]=" + format_double(rate));
  }
  std::int64_t gemm_nb = options.gemm_nb_candidates.back();
  for (std::size_t i = 0; i < options.gemm_nb_candidates.size(); ++i) {
    if (gemm_rates[i] >= 0.95 * best_gemm) {
      gemm_nb = options.gemm_nb_candidates[i];
      break;
    }
  }

  // --- Tile computation rate at the default block size ---
  const double tile_seconds =
      time_tile(options.tile_n, options.tile_p, options.tile_mb,
                options.tile_tb, 160, options.trials);
  const double tile_rate =
      static_cast<double>(options.tile_mb) * options.tile_tb *
      cell_flops(options.tile_n, options.tile_p) / tile_seconds;
  notes.push_back("tile_rate=" + format_double(tile_rate));

  result.profile.preloop_flops_per_sec = best_gemm;
  result.profile.loops_flops_per_sec = tile_rate;
  result.profile.io_bandwidth = best_bw;
  result.profile.datatype_size = 8.0;
  result.profile.bw_saturation_bytes = saturation;
  result.profile.gemm_saturation_nb = gemm_nb;
  result.profile.validate();
  return result;
}

BlockSweepResult sweep_block_size(const ProfileOptions& options) {
  BlockSweepResult sweep;
  sweep.candidates = {32, 64, 128, 160, 256, 512};
  const std::int64_t largest = sweep.candidates.back();
  const std::int64_t mb = std::max(options.tile_mb, largest);
  const std::int64_t tb = std::max(options.tile_tb, largest);
  double best = 0.0;
  for (const std::int64_t block : sweep.candidates) {
    const double seconds = time_tile(options.tile_n, options.tile_p, mb, tb,
                                     block, options.trials);
    const double rate = static_cast<double>(mb) * tb *
                        cell_flops(options.tile_n, options.tile_p) / seconds;
    sweep.flops_per_sec.push_back(rate);
    best = std::max(best, rate);
  }
  // Plateau: within 0.5% of the best.  Prefer the engine default when it
  // qualifies; otherwise the fastest candidate.
  sweep.chosen = 0;
  for (std::size_t i = 0; i < sweep.candidates.size(); ++i) {
    if (sweep.candidates[i] == 160 &&
        sweep.flops_per_sec[i] >= 0.995 * best) {
      sweep.chosen = 160;
    }
  }
  if (sweep.chosen == 0) {
    const std::size_t at = static_cast<std::size_t>(
        std::max_element(sweep.flops_per_sec.begin(),
                         sweep.flops_per_sec.end()) -
        sweep.flops_per_sec.begin());
    sweep.chosen = sweep.candidates[at];
  }
  return sweep;
}

// ---------------------------------------------------------------------------
// Profile files
// ---------------------------------------------------------------------------

MachineProfile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open profile file " + path.string());
  MachineProfile profile;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r\n");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw IoError("profile line " + std::to_string(lineno) +
                    " is not key=value in " + path.string());
    }
    const auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "preloop_flops_per_sec") {
        profile.preloop_flops_per_sec = std::stod(value);
      } else if (key == "loops_flops_per_sec") {
        profile.loops_flops_per_sec = std::stod(value);
      } else if (key == "io_bandwidth") {
        profile.io_bandwidth = std::stod(value);
      } else if (key == "datatype_size") {
        profile.datatype_size = std::stod(value);
      } else if (key == "bw_saturation_bytes") {
        profile.bw_saturation_bytes = std::stoull(value);
      } else if (key == "gemm_saturation_nb") {
        profile.gemm_saturation_nb = std::stoll(value);
      } else {
        throw IoError("unknown profile key '" + key + "' in " +
                      path.string());
      }
    } catch (const std::invalid_argument&) {
      throw IoError("profile value for '" + key + "' is not a number in " +
                    path.string());
    } catch (const std::out_of_range&) {
      throw IoError("profile value for '" + key + "' is out of range in " +
                    path.string());
    }
  }
  profile.validate();
  return profile;
}

void save_profile(const std::filesystem::path& path,
                  const MachineProfile& profile) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write profile file " + path.string());
  out << "preloop_flops_per_sec=" << format_double(profile.preloop_flops_per_sec)
      << "\n"
      << "loops_flops_per_sec=" << format_double(profile.loops_flops_per_sec)
      << "\n"
      << "io_bandwidth=" << format_double(profile.io_bandwidth) << "\n"
      << "datatype_size=" << format_double(profile.datatype_size) << "\n"
      << "bw_saturation_bytes=" << profile.bw_saturation_bytes << "\n"
      << "gemm_saturation_nb=" << profile.gemm_saturation_nb << "\n";
  if (!out.flush()) {
    throw IoError("failed writing profile file " + path.string());
  }
}

// ---------------------------------------------------------------------------
// Recommendation
// ---------------------------------------------------------------------------

Recommendation recommend_params(const ProblemDims& dims,
                                const MachineProfile& profile,
                                std::uint64_t budget_bytes,
                                Scheduler scheduler, int workers,
                                bool double_buffer) {
  dims.validate();
  profile.validate();
  Recommendation rec;
  rec.params =
      fit_tile_params(dims, budget_bytes, scheduler, workers, double_buffer);

  // Slab width: wide enough to saturate both the transfer path and the
  // product kernel, within budget and stream width.
  const std::int64_t nb_bw = static_cast<std::int64_t>(
      (profile.bw_saturation_bytes +
       static_cast<std::uint64_t>(dims.n) * 8 - 1) /
      (static_cast<std::uint64_t>(dims.n) * 8));
  const std::int64_t nb_target = std::clamp<std::int64_t>(
      std::max({nb_bw, profile.gemm_saturation_nb, std::int64_t{1}}), 1,
      dims.m);
  std::int64_t nb = nb_target;
  while (nb > 1 &&
         transform_working_set_bytes(dims.n, nb, double_buffer) >
             budget_bytes) {
    nb /= 2;
  }
  rec.params.nb = std::max<std::int64_t>(nb, 1);

  rec.tb_lower_bound = min_tb(dims.n, dims.p, profile);
  rec.tb_constraint_met =
      rec.tb_lower_bound.has_value() &&
      rec.params.tb >= std::min(*rec.tb_lower_bound, dims.t);
  if (rec.tb_lower_bound.has_value() && *rec.tb_lower_bound > dims.t) {
    // The whole grid is narrower than the required tile; even tb = t cannot
    // hide transfers.
    rec.tb_constraint_met = false;
  }
  rec.nb_overlap = check_nb_overlap(dims.n, profile);
  rec.tile_ratio_at_tb = tile_ratio(rec.params.tb, dims.p, dims.n);
  rec.working_set =
      working_set_bytes(dims, rec.params, scheduler, workers, double_buffer);
  rec.params.validate(dims);

  auto add = [&rec](const std::string& key, const std::string& value) {
    rec.report.push_back(key + "=" + value);
  };
  add("n", std::to_string(dims.n));
  add("p", std::to_string(dims.p));
  add("m", std::to_string(dims.m));
  add("t", std::to_string(dims.t));
  add("budget_bytes", std::to_string(budget_bytes));
  add("scheduler", scheduler == Scheduler::ct ? "ct" : "it");
  add("workers", std::to_string(workers));
  add("double_buffer", double_buffer ? "1" : "0");
  add("nb", std::to_string(rec.params.nb));
  add("mb", std::to_string(rec.params.mb));
  add("tb", std::to_string(rec.params.tb));
  add("mbb", std::to_string(rec.params.mbb));
  add("tbb", std::to_string(rec.params.tbb));
  add("preloop_ratio", std::to_string(preloop_ratio(dims.n)));
  add("nb_overlap_satisfied", rec.nb_overlap.satisfied ? "1" : "0");
  add("nb_overlap_margin", format_double(rec.nb_overlap.margin));
  add("tb_min", rec.tb_lower_bound.has_value()
                    ? std::to_string(*rec.tb_lower_bound)
                    : "inf");
  add("tb_constraint_met", rec.tb_constraint_met ? "1" : "0");
  add("tile_ratio", format_double(rec.tile_ratio_at_tb));
  add("working_set_bytes", std::to_string(rec.working_set));
  return rec;
}

}  // namespace gwgrid
