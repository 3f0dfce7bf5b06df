#include "gwgrid/gls.hpp"

#include <cmath>
#include <string>

namespace gwgrid {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

}  // namespace

KinshipSpectrum eigendecompose_kinship(const Eigen::MatrixXd& phi) {
  require(phi.rows() == phi.cols() && phi.rows() >= 1,
          "relatedness matrix must be square and non-empty");

  const double scale = phi.cwiseAbs().maxCoeff();
  const double asym = (phi - phi.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale) {
    throw NonSymmetricError("relatedness matrix is not symmetric: max|A-A'|=" +
                            std::to_string(asym) + " exceeds 1e-12*max|A|=" +
                            std::to_string(1e-12 * scale));
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(phi);
  if (solver.info() != Eigen::Success) {
    throw BackendError("symmetric eigensolver did not converge");
  }

  KinshipSpectrum spectrum;
  spectrum.basis = solver.eigenvectors();  // ascending eigenvalue order
  spectrum.values = solver.eigenvalues();

  // Deterministic sign convention: make the largest-magnitude entry of each
  // eigenvector positive (first such entry on exact-magnitude ties).
  const std::int64_t n = spectrum.basis.rows();
  for (std::int64_t c = 0; c < n; ++c) {
    Eigen::Index r = 0;
    spectrum.basis.col(c).cwiseAbs().maxCoeff(&r);
    if (spectrum.basis(r, c) < 0.0) spectrum.basis.col(c) = -spectrum.basis.col(c);
  }
  return spectrum;
}

TraitWeights build_trait_weights(const Eigen::VectorXd& eigenvalues,
                                 const TraitScalars& scalars,
                                 std::int64_t trait_index) {
  const std::int64_t n = eigenvalues.size();
  require(n >= 1, "empty eigenvalue vector");

  TraitWeights w;
  w.d = (scalars.sigma2 *
         (scalars.h2 * eigenvalues.array() + (1.0 - scalars.h2)))
            .matrix();

  // Relative positivity floor.  Written so that NaNs fail the check too.
  double dmax = w.d[0];
  for (std::int64_t i = 1; i < n; ++i)
    if (w.d[i] > dmax) dmax = w.d[i];
  const double floor = 1e-13 * dmax;
  for (std::int64_t i = 0; i < n; ++i) {
    if (!(w.d[i] > floor)) {
      throw NotPositiveDefiniteError(
          "trait covariance is not positive definite in the rotated basis: "
          "weight entry " +
              std::to_string(i) + " = " + std::to_string(w.d[i]) +
              " is below the relative floor " + std::to_string(floor) +
              (trait_index >= 0 ? " (trait " + std::to_string(trait_index) + ")"
                                : ""),
          -1, trait_index);
    }
  }

  w.k = w.d.array().sqrt().inverse().matrix();
  return w;
}

TraitContext build_trait_context(const Eigen::VectorXd& eigenvalues,
                                 const Eigen::Ref<const Eigen::MatrixXd>& xl_rot,
                                 const Eigen::Ref<const Eigen::VectorXd>& y_rot,
                                 const TraitScalars& scalars,
                                 std::int64_t trait_index) {
  const std::int64_t n = eigenvalues.size();
  require(xl_rot.rows() == n && y_rot.size() == n,
          "rotated operands disagree on n");
  const std::int64_t pm1 = xl_rot.cols();

  TraitContext ctx;
  ctx.trait_index = trait_index;
  TraitWeights w = build_trait_weights(eigenvalues, scalars, trait_index);
  ctx.d = std::move(w.d);
  ctx.k = std::move(w.k);
  ctx.v = ctx.k.cwiseProduct(y_rot);
  ctx.w_l = ctx.k.asDiagonal() * xl_rot;
  ctx.s_tl = Eigen::MatrixXd::Zero(pm1, pm1);
  ctx.s_tl.selfadjointView<Eigen::Lower>().rankUpdate(ctx.w_l.transpose());
  ctx.s_tl.triangularView<Eigen::StrictlyUpper>() = ctx.s_tl.transpose();
  ctx.b_t = ctx.w_l.transpose() * ctx.v;
  return ctx;
}

void solve_gls_cell(const TraitContext& ctx,
                    const Eigen::Ref<const Eigen::VectorXd>& xr_rot,
                    CellWorkspace& ws, double* out, std::int64_t snp_index) {
  const std::int64_t pm1 = ctx.w_l.cols();
  const std::int64_t p = pm1 + 1;
  if (ws.s.rows() != p || ws.s.cols() != p) ws.resize(ctx.k.size(), p);

  // All reductions below run over workspace/context allocations only; the
  // variant column is consumed by one element-wise product.  That keeps cell
  // results bit-identical no matter which slab buffer the column came from.
  ws.w_r = ctx.k.cwiseProduct(xr_rot);
  ws.s.topLeftCorner(pm1, pm1) = ctx.s_tl;
  ws.s.row(pm1).head(pm1) = ws.w_r.transpose() * ctx.w_l;
  ws.s(pm1, pm1) = ws.w_r.squaredNorm();
  ws.rhs.head(pm1) = ctx.b_t;
  ws.rhs(pm1) = ws.w_r.dot(ctx.v);

  ws.llt.compute(ws.s);  // reads the lower triangle only
  if (ws.llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError(
        "normal equations are not positive definite at cell (variant " +
            std::to_string(snp_index) + ", trait " +
            std::to_string(ctx.trait_index) + ")",
        snp_index, ctx.trait_index);
  }
  ws.llt.solveInPlace(ws.rhs);
  for (std::int64_t c = 0; c < p; ++c) out[c] = ws.rhs[c];
}

Eigen::VectorXd solve_single_gls(const KinshipSpectrum& spectrum,
                                 const Eigen::MatrixXd& x,
                                 const Eigen::VectorXd& y,
                                 const TraitScalars& scalars) {
  const std::int64_t n = spectrum.n();
  const std::int64_t p = x.cols();
  require(x.rows() == n && y.size() == n && p >= 1 && p <= n,
          "bad single-solve operand shapes");

  TraitWeights w = build_trait_weights(spectrum.values, scalars);
  Eigen::MatrixXd x_rot = spectrum.basis.transpose() * x;
  Eigen::VectorXd y_rot = spectrum.basis.transpose() * y;
  Eigen::MatrixXd wx = w.k.asDiagonal() * x_rot;
  Eigen::VectorXd v = w.k.cwiseProduct(y_rot);

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(p, p);
  s.selfadjointView<Eigen::Lower>().rankUpdate(wx.transpose());
  Eigen::VectorXd rhs = wx.transpose() * v;

  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError(
        "normal equations are not positive definite", -1, -1);
  }
  llt.solveInPlace(rhs);
  return rhs;
}

Eigen::VectorXd solve_partitioned_gls(const KinshipSpectrum& spectrum,
                                      const Eigen::MatrixXd& xl,
                                      const Eigen::VectorXd& xr,
                                      const Eigen::VectorXd& y,
                                      const TraitScalars& scalars) {
  const std::int64_t n = spectrum.n();
  const std::int64_t pm1 = xl.cols();
  require(xr.size() == n && y.size() == n && (pm1 == 0 || xl.rows() == n) &&
              pm1 + 1 <= n,
          "bad partitioned-solve operand shapes");

  Eigen::MatrixXd xl_rot(n, pm1);
  if (pm1 > 0) xl_rot.noalias() = spectrum.basis.transpose() * xl;
  Eigen::VectorXd xr_rot = spectrum.basis.transpose() * xr;
  Eigen::VectorXd y_rot = spectrum.basis.transpose() * y;

  TraitContext ctx =
      build_trait_context(spectrum.values, xl_rot, y_rot, scalars);
  CellWorkspace ws;
  ws.resize(n, pm1 + 1);

  Eigen::VectorXd out(pm1 + 1);
  solve_gls_cell(ctx, xr_rot, ws, out.data(), -1);
  return out;
}

CholeskyOracle::CholeskyOracle(const Eigen::MatrixXd& phi) : phi_(phi) {
  require(phi.rows() == phi.cols() && phi.rows() >= 1,
          "relatedness matrix must be square and non-empty");
}

CholeskyOracle::TraitFactor CholeskyOracle::factor(
    const TraitScalars& scalars, std::int64_t trait_index) const {
  Eigen::MatrixXd m = phi_ * (scalars.sigma2 * scalars.h2);
  m.diagonal().array() += scalars.sigma2 * (1.0 - scalars.h2);

  TraitFactor f;
  f.llt_.compute(m);
  if (f.llt_.info() != Eigen::Success) {
    throw NotPositiveDefiniteError(
        "trait covariance is not positive definite (trait " +
            std::to_string(trait_index) + ")",
        -1, trait_index);
  }
  return f;
}

Eigen::VectorXd CholeskyOracle::TraitFactor::solve(
    const Eigen::MatrixXd& x, const Eigen::VectorXd& y) const {
  const std::int64_t p = x.cols();
  Eigen::MatrixXd u = llt_.matrixL().solve(x);
  Eigen::VectorXd z = llt_.matrixL().solve(y);

  Eigen::MatrixXd normal = u.transpose() * u;
  Eigen::VectorXd rhs = u.transpose() * z;
  Eigen::LLT<Eigen::MatrixXd> small(normal);
  if (small.info() != Eigen::Success) {
    throw NotPositiveDefiniteError(
        "oracle normal equations are not positive definite", -1, -1);
  }
  small.solveInPlace(rhs);
  (void)p;
  return rhs;
}

Eigen::VectorXd CholeskyOracle::TraitFactor::solve(
    const Eigen::MatrixXd& x_left, const Eigen::VectorXd& x_right,
    const Eigen::VectorXd& y) const {
  const std::int64_t n = x_right.size();
  const std::int64_t pm1 = x_left.cols();
  Eigen::MatrixXd x(n, pm1 + 1);
  if (pm1 > 0) x.leftCols(pm1) = x_left;
  x.col(pm1) = x_right;
  return solve(x, y);
}

Eigen::VectorXd solve_single_gls_oracle(const Eigen::MatrixXd& phi,
                                        const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& y,
                                        const TraitScalars& scalars) {
  CholeskyOracle oracle(phi);
  return oracle.factor(scalars).solve(x, y);
}

}  // namespace gwgrid
