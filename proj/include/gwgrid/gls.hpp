#pragma once

#include <Eigen/Dense>

#include "gwgrid/types.hpp"

namespace gwgrid {

// ---------------------------------------------------------------------------
// Core single-cell generalized least-squares machinery.
//
// Every fit in the grid solves
//     b = (X' M^-1 X)^-1 X' M^-1 y,   M = sigma2*(h2*Phi + (1-h2)*I)
// where Phi is one shared symmetric relatedness matrix.  Decomposing
// Phi = Z diag(lambda) Z' once turns every M^-1 into a diagonal rescale in
// the rotated basis, which is what the grid engine exploits.  This header
// also provides the independent Cholesky route used for verification.
// ---------------------------------------------------------------------------

// Eigendecomposition of the relatedness matrix: basis columns are
// orthonormal eigenvectors, values are ascending eigenvalues.  Column signs
// are normalized (largest-magnitude entry positive) so decompositions are
// reproducible.
struct KinshipSpectrum {
  Eigen::MatrixXd basis;   // n x n, orthonormal columns
  Eigen::VectorXd values;  // n, ascending

  std::int64_t n() const { return basis.rows(); }
};

// Symmetry gate: max|Phi - Phi'| <= 1e-12 * max|Phi|, else NonSymmetricError.
// Backend failure reports BackendError.
KinshipSpectrum eigendecompose_kinship(const Eigen::MatrixXd& phi);

// Per-trait diagonal weights in the rotated basis:
//   d_k = sigma2*(h2*lambda_k + (1-h2)),  k_k = d_k^(-1/2).
// Rejects (NotPositiveDefiniteError) when any d_k <= 1e-13 * max(d); the
// relative floor keeps near-singular covariances from silently producing
// huge weights.  trait_index is used only for error reporting.
struct TraitWeights {
  Eigen::VectorXd d;
  Eigen::VectorXd k;
};
TraitWeights build_trait_weights(const Eigen::VectorXd& eigenvalues,
                                 const TraitScalars& scalars,
                                 std::int64_t trait_index = -1);

// Everything about one trait that is shared by all m cells in its row of the
// grid, computed once: weights, weighted rotated trait vector v, weighted
// rotated covariate block w_l, and the constant top-left quadrant
// s_tl = w_l' w_l with top right-hand side b_t = w_l' v.
struct TraitContext {
  Eigen::VectorXd d;     // n
  Eigen::VectorXd k;     // n
  Eigen::VectorXd v;     // n: k .* (Z' y)
  Eigen::MatrixXd w_l;   // n x (p-1): diag(k) * (Z' X_L)
  Eigen::MatrixXd s_tl;  // (p-1) x (p-1), symmetric (lower computed, mirrored)
  Eigen::VectorXd b_t;   // p-1
  std::int64_t trait_index = -1;
};

// Builds the context from *already rotated* operands (xl_rot = Z'X_L,
// y_rot = Z'y).  The numeric steps here are the single source of truth: the
// grid engine and the standalone partitioned solve below both call this, so
// their results agree bitwise.  Ref parameters bind slab buffer columns
// without copying.
TraitContext build_trait_context(const Eigen::VectorXd& eigenvalues,
                                 const Eigen::Ref<const Eigen::MatrixXd>& xl_rot,
                                 const Eigen::Ref<const Eigen::VectorXd>& y_rot,
                                 const TraitScalars& scalars,
                                 std::int64_t trait_index = -1);

// Scratch for the per-cell solve, reused across cells so the hot loop does
// not allocate.  Results do not depend on which workspace instance is used.
struct CellWorkspace {
  Eigen::VectorXd w_r;    // n
  Eigen::MatrixXd s;      // p x p (lower triangle filled)
  Eigen::VectorXd rhs;    // p
  Eigen::LLT<Eigen::MatrixXd> llt;

  void resize(std::int64_t n, std::int64_t p) {
    w_r.resize(n);
    s.resize(p, p);
    s.setZero();  // only the lower triangle is ever written afterwards
    rhs.resize(p);
  }
};

// One cell: given a trait context and the rotated variant column xr_rot,
// assemble the p x p normal system from the constant quadrant plus the
// variant coupling and solve it (SPD factorization, no pivoted fallback).
// Writes the p coefficients to out.  Throws NotPositiveDefiniteError with
// the given coordinates if the assembled system is not positive definite.
void solve_gls_cell(const TraitContext& ctx,
                    const Eigen::Ref<const Eigen::VectorXd>& xr_rot,
                    CellWorkspace& ws, double* out, std::int64_t snp_index);

// Monolithic fast-path solve of one cell from unrotated operands; used for
// path-equivalence checks against the partitioned route.
Eigen::VectorXd solve_single_gls(const KinshipSpectrum& spectrum,
                                 const Eigen::MatrixXd& x,
                                 const Eigen::VectorXd& y,
                                 const TraitScalars& scalars);

// Partitioned solve of one cell: shared covariates xl plus one variant
// column xr.  Same floating-point sequence as the grid engine's cells.
Eigen::VectorXd solve_partitioned_gls(const KinshipSpectrum& spectrum,
                                      const Eigen::MatrixXd& xl,
                                      const Eigen::VectorXd& xr,
                                      const Eigen::VectorXd& y,
                                      const TraitScalars& scalars);

// ---------------------------------------------------------------------------
// Verification route.  Forms M = sigma2*(h2*Phi + (1-h2)*I) explicitly,
// Cholesky-factors it, and solves the GLS via triangular solves plus a dense
// SPD solve of the p x p normal system.  Shares no code or factorization
// with the spectrum route above, which is the point: agreement between the
// two is evidence, not tautology.
// ---------------------------------------------------------------------------

class CholeskyOracle {
 public:
  explicit CholeskyOracle(const Eigen::MatrixXd& phi);

  // Factor M for one trait; reusable across all cells of that trait.
  class TraitFactor {
   public:
    // u_left = L^-1 X_L may be empty (p = 1).
    Eigen::VectorXd solve(const Eigen::MatrixXd& x_left,
                          const Eigen::VectorXd& x_right,
                          const Eigen::VectorXd& y) const;
    Eigen::VectorXd solve(const Eigen::MatrixXd& x,
                          const Eigen::VectorXd& y) const;

   private:
    friend class CholeskyOracle;
    Eigen::LLT<Eigen::MatrixXd> llt_;
  };

  TraitFactor factor(const TraitScalars& scalars,
                     std::int64_t trait_index = -1) const;

 private:
  Eigen::MatrixXd phi_;
};

// Convenience one-shot wrapper around CholeskyOracle.
Eigen::VectorXd solve_single_gls_oracle(const Eigen::MatrixXd& phi,
                                        const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& y,
                                        const TraitScalars& scalars);

}  // namespace gwgrid
