#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "gwgrid/grid.hpp"
#include "gwgrid/tuner.hpp"
#include "gwgrid/types.hpp"
#include "test_util.hpp"

using namespace gwgrid;

namespace {

// The reference workstation profile: dense-product transforms at 240 GF/s,
// tile traversal at 25 GF/s, streaming storage at 2 GB/s, 8-byte elements.
MachineProfile reference_profile() {
  MachineProfile p;
  p.preloop_flops_per_sec = 240e9;
  p.loops_flops_per_sec = 25e9;
  p.io_bandwidth = 2e9;
  p.datatype_size = 8.0;
  p.bw_saturation_bytes = 2ull << 20;
  p.gemm_saturation_nb = 10000;
  return p;
}

bool report_contains(const Recommendation& rec, const std::string& line) {
  for (const std::string& l : rec.report) {
    if (l == line) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("transform flop-to-transfer ratio per element is exactly n") {
  CHECK(preloop_ratio(1) == 1);
  CHECK(preloop_ratio(1000) == 1000);
  CHECK(preloop_ratio(1 << 20) == 1 << 20);
  CHECK_THROWS_AS(preloop_ratio(0), DimensionError);
}

TEST_CASE("slab-width overlap check reproduces the reference margin") {
  const OverlapCheck c = check_nb_overlap(1000, reference_profile());
  // 1000 / 240e9 = 4.17e-9 of compute per element vs 8 / 2e9 = 4e-9 of
  // transfer: satisfied with a margin of 25/24.
  CHECK(c.satisfied);
  CHECK(c.lhs == doctest::Approx(4.1667e-9).epsilon(1e-4));
  CHECK(c.rhs == doctest::Approx(4.0e-9).epsilon(1e-12));
  CHECK(c.margin == doctest::Approx(25.0 / 24.0).epsilon(1e-9));

  // Slower compute (higher rate) flips the inequality.
  MachineProfile fastcpu = reference_profile();
  fastcpu.preloop_flops_per_sec = 1e15;
  CHECK_FALSE(check_nb_overlap(1000, fastcpu).satisfied);
}

TEST_CASE("tile flop-to-transfer ratio grows with tb toward its asymptote") {
  // tb = 1, p = 4, n = 1000: 11000 flops over 1004 elements.
  CHECK(tile_ratio(1, 4, 1000) ==
        doctest::Approx(11000.0 / 1004.0).epsilon(1e-12));
  // Monotone in tb.
  double prev = 0.0;
  for (const std::int64_t tb : {1, 2, 8, 64, 512, 4096}) {
    const double r = tile_ratio(tb, 4, 1000);
    CHECK(r > prev);
    prev = r;
  }
  // Asymptote: (5 + 2(p-1)) * n / p = 2750 for p = 4, n = 1000.
  CHECK(tile_ratio(1'000'000'000, 4, 1000) ==
        doctest::Approx(2750.0).epsilon(1e-3));
  CHECK_THROWS_AS(tile_ratio(0, 4, 1000), DimensionError);
}

TEST_CASE("minimum trait-tile width matches the reference analysis") {
  const MachineProfile p = reference_profile();
  // Bare inequality gives tb > 9.43; the 1.1 headroom pushes the first
  // admissible integer to 11.
  const auto tb = min_tb(1000, 4, p);
  REQUIRE(tb.has_value());
  CHECK(*tb == 11);

  // 10x faster tile compute needs a 10x wider tile to stay hidden.
  MachineProfile fast = p;
  fast.loops_flops_per_sec = 250e9;
  const auto tb_fast = min_tb(1000, 4, fast);
  REQUIRE(tb_fast.has_value());
  CHECK(*tb_fast == 167);

  // Infinite bandwidth: any tile hides the transfers.
  MachineProfile wide = p;
  wide.io_bandwidth = 1e18;
  const auto tb_wide = min_tb(1000, 4, wide);
  REQUIRE(tb_wide.has_value());
  CHECK(*tb_wide == 1);

  // Compute so fast that per-trait transfers can never be hidden.
  MachineProfile hopeless = p;
  hopeless.loops_flops_per_sec = 1e18;
  hopeless.io_bandwidth = 1.0;
  CHECK_FALSE(min_tb(4, 4, hopeless).has_value());
}

TEST_CASE("headroom widens the minimum tile") {
  const MachineProfile p = reference_profile();
  const auto bare = min_tb(1000, 4, p, 1.0);
  REQUIRE(bare.has_value());
  CHECK(*bare == 10);  // first integer beyond the bare bound 9.43
  const auto padded = min_tb(1000, 4, p, 2.0);
  REQUIRE(padded.has_value());
  CHECK(*padded > *bare);
  CHECK_THROWS_AS(min_tb(1000, 4, p, 0.5), DimensionError);
}

TEST_CASE("profiles validate their fields") {
  MachineProfile p = reference_profile();
  CHECK_NOTHROW(p.validate());
  p.io_bandwidth = 0.0;
  CHECK_THROWS_AS(p.validate(), DimensionError);
  p = reference_profile();
  p.loops_flops_per_sec = -1.0;
  CHECK_THROWS_AS(p.validate(), DimensionError);
}

TEST_CASE("profile files roundtrip and reject junk") {
  testutil::ScratchDir dir("tuner_profile");
  const auto file = dir / "profile.txt";
  const MachineProfile p = reference_profile();
  save_profile(file, p);
  const MachineProfile back = load_profile(file);
  CHECK(back.preloop_flops_per_sec == p.preloop_flops_per_sec);
  CHECK(back.loops_flops_per_sec == p.loops_flops_per_sec);
  CHECK(back.io_bandwidth == p.io_bandwidth);
  CHECK(back.datatype_size == p.datatype_size);
  CHECK(back.bw_saturation_bytes == p.bw_saturation_bytes);
  CHECK(back.gemm_saturation_nb == p.gemm_saturation_nb);

  {
    std::ofstream out(file);
    out << "# comment line\n\n  io_bandwidth = 5e9  \n"
        << "preloop_flops_per_sec=1e9\nloops_flops_per_sec=1e9\n";
  }
  const MachineProfile partial = load_profile(file);
  CHECK(partial.io_bandwidth == 5e9);
  CHECK(partial.datatype_size == 8.0);  // default survives

  {
    std::ofstream out(file);
    out << "unknown_key=3\n";
  }
  CHECK_THROWS_AS(load_profile(file), IoError);
  {
    std::ofstream out(file);
    out << "io_bandwidth=fast\n";
  }
  CHECK_THROWS_AS(load_profile(file), IoError);
  CHECK_THROWS_AS(load_profile(dir / "absent.txt"), IoError);
}

TEST_CASE("recommendations report the reference tb bound") {
  const ProblemDims dims{1000, 4, 50000, 5000};
  const Recommendation rec = recommend_params(
      dims, reference_profile(), 4ull << 30, Scheduler::ct, 1, true);
  CHECK(report_contains(rec, "tb_min=11"));
  CHECK(report_contains(rec, "nb_overlap_satisfied=1"));
  REQUIRE(rec.tb_lower_bound.has_value());
  CHECK(*rec.tb_lower_bound == 11);
  CHECK(rec.params.tb >= 11);
  CHECK(rec.tb_constraint_met);
  CHECK(rec.nb_overlap.margin == doctest::Approx(25.0 / 24.0).epsilon(1e-9));
  CHECK_NOTHROW(rec.params.validate(dims));
  CHECK(rec.working_set <= 4ull << 30);
  // The slab width honors the product-rate saturation point when it fits.
  CHECK(rec.params.nb == 10000);
  CHECK(report_contains(rec, "nb=10000"));
}

TEST_CASE("infinite-bandwidth machines report tb_min=1") {
  MachineProfile wide = reference_profile();
  wide.io_bandwidth = 1e18;
  const ProblemDims dims{1000, 4, 50000, 5000};
  const Recommendation rec =
      recommend_params(dims, wide, 4ull << 30, Scheduler::ct, 1, true);
  CHECK(report_contains(rec, "tb_min=1"));
}

TEST_CASE("random profiles always yield parameters passing the checker") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> log_rate(8.0, 12.0);
  std::uniform_real_distribution<double> log_bw(7.0, 10.5);
  std::uniform_int_distribution<std::int64_t> pick_n(8, 4000);
  std::uniform_int_distribution<std::int64_t> pick_p(1, 6);
  std::uniform_int_distribution<std::int64_t> pick_mt(1, 100000);
  for (int trial = 0; trial < 50; ++trial) {
    CAPTURE(trial);
    MachineProfile p;
    p.preloop_flops_per_sec = std::pow(10.0, log_rate(rng));
    p.loops_flops_per_sec = std::pow(10.0, log_rate(rng));
    p.io_bandwidth = std::pow(10.0, log_bw(rng));
    ProblemDims dims;
    dims.n = pick_n(rng);
    dims.p = std::min(pick_p(rng), dims.n);
    dims.m = pick_mt(rng);
    dims.t = pick_mt(rng);
    const std::uint64_t budget =
        (64ull << 20) +
        static_cast<std::uint64_t>(dims.n) * dims.n * 8 * 4;
    const Recommendation rec =
        recommend_params(dims, p, budget, Scheduler::ct, 1, true);
    CHECK_NOTHROW(rec.params.validate(dims));
    CHECK(working_set_bytes(dims, rec.params, Scheduler::ct, 1, true) <=
          budget);
    CHECK(transform_working_set_bytes(dims.n, rec.params.nb, true) <= budget);
    // The reported bound and flag agree.
    if (rec.tb_lower_bound.has_value()) {
      const bool met = rec.params.tb >= std::min(*rec.tb_lower_bound, dims.t) &&
                       *rec.tb_lower_bound <= dims.t;
      CHECK(rec.tb_constraint_met == met);
    } else {
      CHECK_FALSE(rec.tb_constraint_met);
    }
  }
}

TEST_CASE("impossible budgets are refused") {
  const ProblemDims dims{4096, 4, 100000, 10000};
  CHECK_THROWS_AS(recommend_params(dims, reference_profile(), 1024,
                                   Scheduler::ct, 1, true),
                  InfeasibleBudgetError);
}

TEST_CASE("machine measurement produces a plausible, valid profile") {
  testutil::ScratchDir dir("tuner_measure");
  ProfileOptions options;
  options.scratch_dir = dir.path;
  options.trials = 1;
  options.io_file_bytes = 4ull << 20;
  options.transfer_sizes = {256ull << 10, 1ull << 20};
  options.gemm_n = 128;
  options.gemm_nb_candidates = {16, 64};
  options.tile_n = 96;
  options.tile_p = 4;
  options.tile_mb = 128;
  options.tile_tb = 128;
  const ProfileResult result = profile_machine(options);
  CHECK_NOTHROW(result.profile.validate());
  CHECK(result.profile.io_bandwidth > 1e6);          // > 1 MB/s
  CHECK(result.profile.preloop_flops_per_sec > 1e7);  // > 10 MF/s
  CHECK(result.profile.loops_flops_per_sec > 1e7);
  CHECK(!result.notes.empty());
  // The probe file is cleaned up.
  CHECK_FALSE(std::filesystem::exists(dir / "io_probe.bin"));
}

TEST_CASE("block sweep picks a candidate near the plateau") {
  ProfileOptions options;
  options.trials = 1;
  options.tile_n = 48;
  options.tile_p = 4;
  options.tile_mb = 256;
  options.tile_tb = 256;
  const BlockSweepResult sweep = sweep_block_size(options);
  REQUIRE(sweep.candidates.size() == sweep.flops_per_sec.size());
  bool found = false;
  for (const std::int64_t c : sweep.candidates) found |= (c == sweep.chosen);
  CHECK(found);
  double best = 0.0;
  for (const double r : sweep.flops_per_sec) best = std::max(best, r);
  double chosen_rate = 0.0;
  for (std::size_t i = 0; i < sweep.candidates.size(); ++i) {
    if (sweep.candidates[i] == sweep.chosen) chosen_rate = sweep.flops_per_sec[i];
  }
  CHECK(chosen_rate >= 0.98 * best);
}
