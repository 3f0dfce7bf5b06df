#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gwgrid/gls.hpp"
#include "gwgrid/types.hpp"

using namespace gwgrid;

namespace {

Eigen::MatrixXd random_matrix(std::int64_t rows, std::int64_t cols,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (std::int64_t j = 0; j < cols; ++j) {
    for (std::int64_t i = 0; i < rows; ++i) m(i, j) = gauss(rng);
  }
  return m;
}

Eigen::MatrixXd random_spd(std::int64_t n, std::mt19937_64& rng) {
  const Eigen::MatrixXd a = random_matrix(n, n, rng);
  Eigen::MatrixXd phi =
      a.transpose() * a / static_cast<double>(n) +
      Eigen::MatrixXd::Identity(n, n);
  return 0.5 * (phi + phi.transpose());
}

// M = sigma2*(h2*Phi + (1-h2)*I), formed directly for reference checks.
Eigen::MatrixXd dense_m(const Eigen::MatrixXd& phi, const TraitScalars& s) {
  const std::int64_t n = phi.rows();
  return s.sigma2 *
         (s.h2 * phi + (1.0 - s.h2) * Eigen::MatrixXd::Identity(n, n));
}

struct Instance {
  Eigen::MatrixXd phi;
  Eigen::MatrixXd xl;
  Eigen::VectorXd xr;
  Eigen::VectorXd y;
  TraitScalars scalars;
};

Instance random_instance(std::int64_t n, std::int64_t p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Instance inst;
  inst.phi = random_spd(n, rng);
  inst.xl = random_matrix(n, p - 1, rng);
  inst.xr = random_matrix(n, 1, rng);
  inst.y = random_matrix(n, 1, rng);
  std::uniform_real_distribution<double> uh(0.0, 0.95);
  std::uniform_real_distribution<double> us(0.25, 4.0);
  inst.scalars.h2 = uh(rng);
  inst.scalars.sigma2 = us(rng);
  return inst;
}

double rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& ref) {
  return (got - ref).norm() / ref.norm();
}

}  // namespace

TEST_CASE("eigendecomposition reconstructs, orthonormal, ascending, signed") {
  std::mt19937_64 rng(7);
  const std::int64_t n = 24;
  const Eigen::MatrixXd phi = random_spd(n, rng);
  const KinshipSpectrum spec = eigendecompose_kinship(phi);

  const Eigen::MatrixXd recon =
      spec.basis * spec.values.asDiagonal() * spec.basis.transpose();
  CHECK((recon - phi).cwiseAbs().maxCoeff() <
        1e-12 * phi.cwiseAbs().maxCoeff());

  const Eigen::MatrixXd gram = spec.basis.transpose() * spec.basis;
  CHECK((gram - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-13);

  for (std::int64_t k = 1; k < n; ++k) CHECK(spec.values(k) >= spec.values(k - 1));

  // Sign convention: each column's largest-magnitude entry is positive.
  for (std::int64_t k = 0; k < n; ++k) {
    std::int64_t at = 0;
    spec.basis.col(k).cwiseAbs().maxCoeff(&at);
    CHECK(spec.basis(at, k) > 0.0);
  }

  // Bitwise repeatable.
  const KinshipSpectrum again = eigendecompose_kinship(phi);
  CHECK(again.basis == spec.basis);
  CHECK(again.values == spec.values);
}

TEST_CASE("eigendecomposition rejects asymmetric input") {
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(5, 5);
  phi(1, 3) = 0.5;  // symmetric partner stays zero
  CHECK_THROWS_AS(eigendecompose_kinship(phi), NonSymmetricError);
}

TEST_CASE("identity kinship has a flat unit spectrum") {
  const KinshipSpectrum spec =
      eigendecompose_kinship(Eigen::MatrixXd::Identity(8, 8));
  CHECK((spec.values.array() - 1.0).abs().maxCoeff() < 1e-14);
}

TEST_CASE("trait weights implement the diagonal covariance rescale") {
  Eigen::VectorXd lambda(4);
  lambda << 0.5, 1.0, 2.0, 8.0;
  const TraitScalars s{0.25, 3.0};
  const TraitWeights w = build_trait_weights(lambda, s);
  for (std::int64_t k = 0; k < 4; ++k) {
    const double d = s.sigma2 * (s.h2 * lambda(k) + (1.0 - s.h2));
    CHECK(w.d(k) == doctest::Approx(d).epsilon(1e-15));
    CHECK(w.k(k) == doctest::Approx(1.0 / std::sqrt(d)).epsilon(1e-15));
  }

  // h2 = 0 erases the kinship entirely.
  const TraitWeights flat = build_trait_weights(lambda, TraitScalars{0.0, 2.0});
  CHECK((flat.d.array() - 2.0).abs().maxCoeff() == 0.0);
}

TEST_CASE("non-positive rescaled variances are rejected with coordinates") {
  Eigen::VectorXd lambda(3);
  lambda << -2.0, 1.0, 4.0;  // an indefinite "kinship"
  try {
    build_trait_weights(lambda, TraitScalars{0.9, 1.0}, 17);
    FAIL("expected NotPositiveDefiniteError");
  } catch (const NotPositiveDefiniteError& e) {
    CHECK(e.trait_index == 17);
    CHECK(e.snp_index == -1);
  }
}

TEST_CASE("trait context holds the hoisted per-trait quantities") {
  const auto inst = random_instance(16, 4, 11);
  const KinshipSpectrum spec = eigendecompose_kinship(inst.phi);
  const Eigen::MatrixXd xl_rot = spec.basis.transpose() * inst.xl;
  const Eigen::VectorXd y_rot = spec.basis.transpose() * inst.y;
  const TraitContext ctx =
      build_trait_context(spec.values, xl_rot, y_rot, inst.scalars, 3);

  CHECK(ctx.trait_index == 3);
  CHECK((ctx.v - ctx.k.asDiagonal() * y_rot).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((ctx.w_l - ctx.k.asDiagonal() * xl_rot).cwiseAbs().maxCoeff() < 1e-13);
  const Eigen::MatrixXd s_tl_ref = ctx.w_l.transpose() * ctx.w_l;
  CHECK((ctx.s_tl - s_tl_ref).cwiseAbs().maxCoeff() <
        1e-12 * s_tl_ref.cwiseAbs().maxCoeff());
  CHECK((ctx.s_tl - ctx.s_tl.transpose()).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::VectorXd b_t_ref = ctx.w_l.transpose() * ctx.v;
  CHECK((ctx.b_t - b_t_ref).cwiseAbs().maxCoeff() <
        1e-12 * (b_t_ref.cwiseAbs().maxCoeff() + 1.0));
}

TEST_CASE("partitioned cell kernel equals the standalone partitioned solve") {
  const auto inst = random_instance(20, 5, 23);
  const KinshipSpectrum spec = eigendecompose_kinship(inst.phi);
  const Eigen::MatrixXd xl_rot = spec.basis.transpose() * inst.xl;

  const Eigen::VectorXd via_solver = solve_partitioned_gls(
      spec, inst.xl, inst.xr, inst.y, inst.scalars);

  // Manual path: context + cell kernel, exactly the grid engine's steps.
  const Eigen::VectorXd y_rot_v = spec.basis.transpose() * inst.y;
  const Eigen::VectorXd xr_rot = spec.basis.transpose() * inst.xr;
  const TraitContext ctx =
      build_trait_context(spec.values, xl_rot, y_rot_v, inst.scalars);
  CellWorkspace ws;
  ws.resize(20, 5);
  Eigen::VectorXd out(5);
  solve_gls_cell(ctx, xr_rot, ws, out.data(), 0);
  CHECK(out == via_solver);  // same kernel, same bits
}

TEST_CASE("partitioned and monolithic solves agree to 1e-13") {
  for (const std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    CAPTURE(seed);
    const auto inst = random_instance(32, 4, seed);
    const KinshipSpectrum spec = eigendecompose_kinship(inst.phi);
    Eigen::MatrixXd x(32, 4);
    x << inst.xl, inst.xr;
    const Eigen::VectorXd mono = solve_single_gls(spec, x, inst.y, inst.scalars);
    const Eigen::VectorXd part =
        solve_partitioned_gls(spec, inst.xl, inst.xr, inst.y, inst.scalars);
    CHECK(rel_err(part, mono) < 1e-13);
  }
}

TEST_CASE("spectrum route agrees with the factorization oracle") {
  for (const std::uint64_t seed : {10ull, 20ull, 30ull, 40ull}) {
    CAPTURE(seed);
    const auto inst = random_instance(40, 4, seed);
    const KinshipSpectrum spec = eigendecompose_kinship(inst.phi);
    Eigen::MatrixXd x(40, 4);
    x << inst.xl, inst.xr;
    const Eigen::VectorXd fast =
        solve_partitioned_gls(spec, inst.xl, inst.xr, inst.y, inst.scalars);
    const Eigen::VectorXd ref =
        solve_single_gls_oracle(inst.phi, x, inst.y, inst.scalars);
    CHECK(rel_err(fast, ref) < 1e-8);
  }
}

TEST_CASE("spectral inverse reproduces the dense covariance inverse") {
  const auto inst = random_instance(24, 3, 77);
  const KinshipSpectrum spec = eigendecompose_kinship(inst.phi);
  const TraitWeights w = build_trait_weights(spec.values, inst.scalars);
  const Eigen::MatrixXd m_inv =
      spec.basis * w.d.cwiseInverse().asDiagonal() * spec.basis.transpose();
  const Eigen::MatrixXd prod = dense_m(inst.phi, inst.scalars) * m_inv;
  CHECK((prod - Eigen::MatrixXd::Identity(24, 24)).cwiseAbs().maxCoeff() <
        1e-8);
}

TEST_CASE("coefficients are invariant under sigma2 rescaling") {
  const auto base = random_instance(28, 4, 99);
  for (const double scale : {0.125, 1.0, 64.0}) {
    CAPTURE(scale);
    TraitScalars scaled = base.scalars;
    scaled.sigma2 = base.scalars.sigma2 * scale;
    const KinshipSpectrum spec = eigendecompose_kinship(base.phi);
    const Eigen::VectorXd b0 =
        solve_partitioned_gls(spec, base.xl, base.xr, base.y, base.scalars);
    const Eigen::VectorXd b1 =
        solve_partitioned_gls(spec, base.xl, base.xr, base.y, scaled);
    CHECK(rel_err(b1, b0) < 1e-12);
  }
}

TEST_CASE("residuals are M-inverse-orthogonal to the predictors") {
  const auto inst = random_instance(36, 5, 123);
  const KinshipSpectrum spec = eigendecompose_kinship(inst.phi);
  Eigen::MatrixXd x(36, 5);
  x << inst.xl, inst.xr;
  const Eigen::VectorXd b =
      solve_partitioned_gls(spec, inst.xl, inst.xr, inst.y, inst.scalars);
  const Eigen::VectorXd r = inst.y - x * b;
  const Eigen::MatrixXd m = dense_m(inst.phi, inst.scalars);
  const Eigen::VectorXd grad = x.transpose() * m.llt().solve(r);
  const Eigen::VectorXd rhs =
      x.transpose() * m.llt().solve(inst.y);
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-8 * (rhs.cwiseAbs().maxCoeff() + 1.0));
}

TEST_CASE("oracle with identity kinship reduces to ordinary least squares") {
  std::mt19937_64 rng(5);
  const std::int64_t n = 30, p = 3;
  const Eigen::MatrixXd x = random_matrix(n, p, rng);
  const Eigen::VectorXd y = random_matrix(n, 1, rng);
  const TraitScalars s{0.6, 2.5};  // h2 is irrelevant when Phi = I
  const Eigen::VectorXd b = solve_single_gls_oracle(
      Eigen::MatrixXd::Identity(n, n), x, y, s);
  const Eigen::VectorXd ols =
      (x.transpose() * x).llt().solve(x.transpose() * y);
  CHECK(rel_err(b, ols) < 1e-12);
}

TEST_CASE("single-predictor fits work without a covariate block") {
  const auto inst = random_instance(16, 2, 31);  // borrow xr and y
  const Eigen::MatrixXd no_cov(16, 0);
  const KinshipSpectrum spec = eigendecompose_kinship(inst.phi);
  const Eigen::VectorXd part =
      solve_partitioned_gls(spec, no_cov, inst.xr, inst.y, inst.scalars);
  const Eigen::VectorXd ref =
      solve_single_gls_oracle(inst.phi, inst.xr, inst.y, inst.scalars);
  REQUIRE(part.size() == 1);
  CHECK(rel_err(part, ref) < 1e-8);
}

TEST_CASE("a zero variant column fails positive-definiteness with coordinates") {
  const auto inst = random_instance(12, 3, 47);
  const KinshipSpectrum spec = eigendecompose_kinship(inst.phi);
  const Eigen::MatrixXd xl_rot = spec.basis.transpose() * inst.xl;
  const Eigen::VectorXd y_rot = spec.basis.transpose() * inst.y;
  const TraitContext ctx =
      build_trait_context(spec.values, xl_rot, y_rot, inst.scalars, 6);
  CellWorkspace ws;
  ws.resize(12, 3);
  Eigen::VectorXd out(3);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(12);
  try {
    solve_gls_cell(ctx, zero, ws, out.data(), 42);
    FAIL("expected NotPositiveDefiniteError");
  } catch (const NotPositiveDefiniteError& e) {
    CHECK(e.snp_index == 42);
    CHECK(e.trait_index == 6);
  }
}

TEST_CASE("degenerate heritability h2 = 0 still solves correctly") {
  const auto inst = random_instance(20, 4, 61);
  const KinshipSpectrum spec = eigendecompose_kinship(inst.phi);
  const TraitScalars s{0.0, 1.5};
  Eigen::MatrixXd x(20, 4);
  x << inst.xl, inst.xr;
  const Eigen::VectorXd fast =
      solve_partitioned_gls(spec, inst.xl, inst.xr, inst.y, s);
  // With h2 = 0 the GLS is plain OLS regardless of Phi.
  const Eigen::VectorXd ols =
      (x.transpose() * x).llt().solve(x.transpose() * inst.y);
  CHECK(rel_err(fast, ols) < 1e-10);
}
