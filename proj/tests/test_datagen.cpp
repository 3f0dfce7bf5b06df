#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "gwgrid/datagen.hpp"
#include "gwgrid/gls.hpp"
#include "gwgrid/stream.hpp"
#include "gwgrid/types.hpp"
#include "test_util.hpp"

using namespace gwgrid;
namespace fs = std::filesystem;

namespace {

GenSpec small_spec() {
  GenSpec spec;
  spec.dims = {12, 3, 7, 5};
  spec.seed = 42;
  return spec;
}

}  // namespace

TEST_CASE("splitmix64 matches the published reference outputs") {
  // First outputs of the reference generator started at state 0, i.e. the
  // pure function applied to 0 and then to 0 + the golden-gamma increment.
  CHECK(splitmix64(0) == 0xE220A8397B1DCDAFull);
  CHECK(splitmix64(0x9E3779B97F4A7C15ull) == 0x6E789E6AA1B965F4ull);
  CHECK(splitmix64(1) == 0x910A2DEC89025CC1ull);
  CHECK(splitmix64(12345) == 0x22118258A9D111A0ull);
}

TEST_CASE("bit-to-uniform map is centered, open, and monotone") {
  CHECK(uniform_from_bits(0) == 0x1.0p-53);
  CHECK(uniform_from_bits(~0ull) == 1.0 - 0x1.0p-53);
  CHECK(uniform_from_bits(0) > 0.0);
  CHECK(uniform_from_bits(~0ull) < 1.0);
  CHECK(uniform_from_bits(1ull << 40) < uniform_from_bits(1ull << 41));
  // The low 12 bits are discarded.
  CHECK(uniform_from_bits(0xFFF) == uniform_from_bits(0));
  // Every producible value has an exactly representable complement, so the
  // pair (u, 1-u) is exactly symmetric around one half.
  for (const std::uint64_t bits :
       {0ull, 0x1234ull << 12, 0x5555555555555555ull, ~0ull}) {
    const double u = uniform_from_bits(bits);
    CHECK(1.0 - (1.0 - u) == u);
  }
}

TEST_CASE("normal quantile reproduces frozen high-precision references") {
  struct Anchor {
    double p;
    double x;
  };
  // Reference values from an independent high-precision implementation.
  const Anchor anchors[] = {
      {1e-12, -7.034483825301131},   {0.025, -1.9599639845400545},
      {0.2, -0.8416212335729142},    {0.7, 0.5244005127080407},
      {0.975, 1.959963984540054},    {1e-300, -37.0470962993612},
      {1e-6, -4.753424308822899},    {0.9999999999, 6.361340889697422},
      {0.25, -0.6744897501960817},   {0.75, 0.6744897501960817},
  };
  for (const Anchor& a : anchors) {
    CAPTURE(a.p);
    const double got = standard_normal_quantile(a.p);
    CHECK(std::abs(got - a.x) <= 1e-12 * std::abs(a.x));
  }
  CHECK(standard_normal_quantile(0.5) == 0.0);
}

TEST_CASE("normal quantile is antisymmetric and strictly increasing") {
  // Dyadic probabilities, whose complement 1-p is exact; reflection must
  // then agree bitwise.  (For non-dyadic p, 1-p itself rounds, and the two
  // sides legitimately differ in the last ulp.)
  for (const double p :
       {0x1.0p-10, 0.125, 0.25, 0.3125, 0.484375, 1.0 - 0x1.0p-30}) {
    CAPTURE(p);
    CHECK(standard_normal_quantile(p) ==
          -standard_normal_quantile(1.0 - p));
  }
  // Producible uniforms round-trip through reflection bitwise as well.
  for (const std::uint64_t bits : {1ull << 20, 0x0123456789ABCDEFull}) {
    const double u = uniform_from_bits(bits);
    CHECK(standard_normal_quantile(u) ==
          -standard_normal_quantile(1.0 - u));
  }
  double prev = standard_normal_quantile(1e-9);
  for (double p = 1e-6; p < 1.0 - 1e-6; p += 0.001) {
    const double x = standard_normal_quantile(p);
    CHECK(x > prev);
    prev = x;
  }
}

TEST_CASE("normal quantile rejects arguments outside (0, 1)") {
  CHECK_THROWS_AS(standard_normal_quantile(0.0), DimensionError);
  CHECK_THROWS_AS(standard_normal_quantile(1.0), DimensionError);
  CHECK_THROWS_AS(standard_normal_quantile(-0.5), DimensionError);
  CHECK_THROWS_AS(standard_normal_quantile(2.0), DimensionError);
  CHECK_THROWS_AS(standard_normal_quantile(std::nan("")), DimensionError);
}

TEST_CASE("kinship model names roundtrip and reject junk") {
  for (const KinshipModel model : {KinshipModel::identity,
                                   KinshipModel::diagonal,
                                   KinshipModel::random_spd}) {
    CHECK(parse_kinship_model(kinship_model_name(model)) == model);
  }
  CHECK_THROWS_AS(parse_kinship_model("pedigree"), DimensionError);
}

TEST_CASE("identity and diagonal kinship models are exact") {
  GenSpec spec = small_spec();
  spec.kinship = KinshipModel::identity;
  CHECK(generate_kinship(spec) == Eigen::MatrixXd::Identity(12, 12));

  spec.kinship = KinshipModel::diagonal;
  const Eigen::MatrixXd phi = generate_kinship(spec);
  for (std::int64_t i = 0; i < 12; ++i) {
    for (std::int64_t j = 0; j < 12; ++j) {
      CHECK(phi(i, j) == (i == j ? static_cast<double>(i + 1) : 0.0));
    }
  }
}

TEST_CASE("random kinship is exactly symmetric with a pinned spectrum") {
  GenSpec spec = small_spec();
  spec.dims.n = 40;
  spec.condition = 100.0;
  const Eigen::MatrixXd phi = generate_kinship(spec);
  REQUIRE(phi.rows() == 40);
  CHECK(phi == phi.transpose());  // symmetrization makes this exact

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(phi);
  REQUIRE(eig.info() == Eigen::Success);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  // Extremes are pinned to 1 and condition up to symmetrization noise.
  CHECK(lo == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(hi == doctest::Approx(100.0).epsilon(1e-10));
  CHECK(hi / lo > 50.0);
  CHECK(hi / lo < 200.0);
  // Interior eigenvalues live inside [1, condition].
  CHECK(lo > 1.0 - 1e-8);
  CHECK(hi < 100.0 + 1e-6);

  // The decomposition gate accepts it (SPD and symmetric).
  CHECK_NOTHROW(eigendecompose_kinship(phi));
}

TEST_CASE("random kinship is reproducible and seed-sensitive") {
  GenSpec spec = small_spec();
  const Eigen::MatrixXd a = generate_kinship(spec);
  const Eigen::MatrixXd b = generate_kinship(spec);
  CHECK(a == b);
  spec.seed += 1;
  CHECK(generate_kinship(spec) != a);
}

TEST_CASE("tiny random kinship degenerates gracefully") {
  GenSpec spec = small_spec();
  spec.dims = {1, 1, 1, 1};
  CHECK(generate_kinship(spec) == Eigen::MatrixXd::Identity(1, 1));
  spec.dims = {2, 1, 1, 1};
  const Eigen::MatrixXd phi = generate_kinship(spec);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(phi);
  CHECK(eig.eigenvalues()(0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(eig.eigenvalues()(1) == doctest::Approx(100.0).epsilon(1e-10));
}

TEST_CASE("generation specs are validated") {
  GenSpec spec = small_spec();
  spec.dims.n = 0;
  CHECK_THROWS_AS(spec.validate(), DimensionError);
  spec = small_spec();
  spec.h2_max = 1.0;  // heritability must stay below 1
  CHECK_THROWS_AS(spec.validate(), DimensionError);
  spec = small_spec();
  spec.h2_min = 0.5;
  spec.h2_max = 0.4;
  CHECK_THROWS_AS(spec.validate(), DimensionError);
  spec = small_spec();
  spec.sigma2_min = 0.0;
  CHECK_THROWS_AS(spec.validate(), DimensionError);
  spec = small_spec();
  spec.condition = 0.5;
  CHECK_THROWS_AS(spec.validate(), DimensionError);
  // Degenerate-but-legal ranges.
  spec = small_spec();
  spec.h2_min = spec.h2_max = 0.0;
  spec.sigma2_min = spec.sigma2_max = 1.0;
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("in-memory generation draws within the requested ranges") {
  GenSpec spec = small_spec();
  spec.dims.t = 64;
  spec.h2_min = 0.25;
  spec.h2_max = 0.5;
  spec.sigma2_min = 2.0;
  spec.sigma2_max = 3.0;
  const Dataset data = generate_in_memory(spec);
  CHECK(data.h2.minCoeff() >= 0.25);
  CHECK(data.h2.maxCoeff() <= 0.5);
  CHECK(data.sigma2.minCoeff() >= 2.0);
  CHECK(data.sigma2.maxCoeff() <= 3.0);
  // Standard-normal payloads have roughly unit scale.
  CHECK(std::abs(data.snps.mean()) < 0.5);
  const double var = data.snps.array().square().mean();
  CHECK(var > 0.5);
  CHECK(var < 2.0);

  // A degenerate h2 range pins every trait.
  spec.h2_min = spec.h2_max = 0.0;
  const Dataset flat = generate_in_memory(spec);
  CHECK(flat.h2.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dataset files mirror the in-memory draws byte for byte") {
  testutil::ScratchDir dir("datagen_files");
  const GenSpec spec = small_spec();
  const DatasetPaths paths = generate_dataset(spec, dir.path);
  const Dataset mem = generate_in_memory(spec);

  CHECK(read_dense(paths.kinship, StreamKind::operand) == mem.kinship);
  CHECK(read_dense(paths.xl, StreamKind::operand) == mem.xl);

  InputStream snps = InputStream::open(paths.snps, StreamKind::snp);
  Eigen::MatrixXd snps_back(spec.dims.n, spec.dims.m);
  snps.read_columns(0, spec.dims.m, snps_back.data());
  CHECK(snps_back == mem.snps);

  InputStream traits = InputStream::open(paths.traits, StreamKind::trait);
  Eigen::MatrixXd traits_back(spec.dims.n, spec.dims.t);
  traits.read_columns(0, spec.dims.t, traits_back.data());
  CHECK(traits_back == mem.traits);
  Eigen::VectorXd h2(spec.dims.t), sigma2(spec.dims.t);
  traits.read_scalars(0, spec.dims.t, h2.data(), sigma2.data());
  CHECK(h2 == mem.h2);
  CHECK(sigma2 == mem.sigma2);
}

TEST_CASE("dataset file sizes follow the stream format exactly") {
  testutil::ScratchDir dir("datagen_sizes");
  GenSpec spec;
  spec.dims = {4, 2, 3, 2};
  const DatasetPaths paths = generate_dataset(spec, dir.path);
  CHECK(fs::file_size(paths.snps) == 64 + 4 * 3 * 8);        // 160 bytes
  CHECK(fs::file_size(paths.traits) == 64 + 2 * (4 + 2) * 8);  // 160 bytes
  CHECK(fs::file_size(paths.kinship) == 64 + 4 * 4 * 8);
  CHECK(fs::file_size(paths.xl) == 64 + 4 * 1 * 8);
}

TEST_CASE("regeneration is byte-identical, reseeding is not") {
  testutil::ScratchDir dir("datagen_repro");
  GenSpec spec = small_spec();
  const DatasetPaths a = generate_dataset(spec, dir / "a");
  const DatasetPaths b = generate_dataset(spec, dir / "b");
  CHECK(testutil::file_hash(a.kinship) == testutil::file_hash(b.kinship));
  CHECK(testutil::file_hash(a.xl) == testutil::file_hash(b.xl));
  CHECK(testutil::file_hash(a.snps) == testutil::file_hash(b.snps));
  CHECK(testutil::file_hash(a.traits) == testutil::file_hash(b.traits));
  CHECK(testutil::read_file(a.manifest) == testutil::read_file(b.manifest));

  spec.seed += 1;
  const DatasetPaths c = generate_dataset(spec, dir / "c");
  CHECK(testutil::file_hash(a.snps) != testutil::file_hash(c.snps));
}

TEST_CASE("manifest roundtrips the full generation spec") {
  testutil::ScratchDir dir("datagen_manifest");
  GenSpec spec = small_spec();
  spec.kinship = KinshipModel::diagonal;
  spec.condition = 37.5;
  spec.h2_min = 0.125;
  spec.h2_max = 0.625;
  spec.sigma2_min = 0.75;
  spec.sigma2_max = 1.25;
  const DatasetPaths paths = generate_dataset(spec, dir.path);

  const DatasetManifest m = load_manifest(paths.manifest);
  CHECK(m.spec.dims.n == spec.dims.n);
  CHECK(m.spec.dims.p == spec.dims.p);
  CHECK(m.spec.dims.m == spec.dims.m);
  CHECK(m.spec.dims.t == spec.dims.t);
  CHECK(m.spec.seed == spec.seed);
  CHECK(m.spec.kinship == spec.kinship);
  CHECK(m.spec.condition == spec.condition);
  CHECK(m.spec.h2_min == spec.h2_min);
  CHECK(m.spec.h2_max == spec.h2_max);
  CHECK(m.spec.sigma2_min == spec.sigma2_min);
  CHECK(m.spec.sigma2_max == spec.sigma2_max);
  CHECK(m.paths.kinship == paths.kinship);
  CHECK(m.paths.snps == paths.snps);
}

TEST_CASE("broken manifests are rejected with clear errors") {
  testutil::ScratchDir dir("datagen_badmanifest");
  const fs::path file = dir / "manifest.txt";
  {
    std::ofstream out(file);
    out << "format=gwgrid-dataset-1\nn=4\np=2\n";  // missing most keys
  }
  CHECK_THROWS_AS(load_manifest(file), IoError);
  {
    std::ofstream out(file);
    out << "format=other\n";
  }
  CHECK_THROWS_AS(load_manifest(file), IoError);
  {
    std::ofstream out(file);
    out << "not a key value line\n";
  }
  CHECK_THROWS_AS(load_manifest(file), IoError);
  CHECK_THROWS_AS(load_manifest(dir / "absent.txt"), IoError);
}

TEST_CASE("xl stream carries zero columns when p = 1") {
  testutil::ScratchDir dir("datagen_p1");
  GenSpec spec = small_spec();
  spec.dims.p = 1;
  const DatasetPaths paths = generate_dataset(spec, dir.path);
  const Eigen::MatrixXd xl = read_dense(paths.xl, StreamKind::operand);
  CHECK(xl.rows() == spec.dims.n);
  CHECK(xl.cols() == 0);
}
