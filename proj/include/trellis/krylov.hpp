#pragma once

#include "trellis/multivector.hpp"
#include "trellis/operator.hpp"
#include "trellis/paramlist.hpp"

#include <string>
#include <vector>

namespace trellis {

/// Orthogonalization kinds: iterated classical Gram-Schmidt (always two
/// passes), DGKS-corrected classical Gram-Schmidt (second pass only when the
/// first one cancels heavily), iterated modified Gram-Schmidt (two sweeps).
enum class OrthoKind { icgs, dgks, imgs };

enum class SolveStatus {
  converged,
  max_iterations,
  breakdown,
  false_convergence,
  diverged,
};

struct RhsStatus {
  SolveStatus status = SolveStatus::max_iterations;
  bool converged = false;
  int iterations = 0;
  Real final_relative_residual = 0.0;
  std::vector<Real> history;
};

/// Outcome of an iterative solve. history[0] is the initial relative
/// residual, one entry per iteration after it. For pseudo-block solves the
/// top-level history tracks the worst active column and per_rhs carries the
/// per-column records.
struct SolveReport {
  SolveStatus status = SolveStatus::max_iterations;
  bool converged = false;
  int iterations = 0;
  Real final_relative_residual = 0.0;
  std::vector<Real> history;
  std::vector<RhsStatus> per_rhs;
  std::string message;
};

struct KrylovOptions {
  Real rtol = 1e-8;
  int max_iterations = 1000;
  int restart = 30;
  OrthoKind ortho = OrthoKind::icgs;
  bool flexible = false;
};

/// Reads "rtol", "max iterations", "restart", "orthogonalization",
/// "flexible" with the standard defaults.
KrylovOptions krylov_options_from(const ParameterList& params);

struct OrthoResult {
  VecX coefficients;  // expansion of w against the basis
  Real norm = 0.0;    // norm of the remainder before normalization
  bool dependent = false;
};

/// Project w against the orthonormal columns in basis and normalize it.
/// Signals linear dependence when the remainder drops below 1e-14 times the
/// initial norm (w is left unnormalized in that case).
OrthoResult orthonormalize(const std::vector<MultiVector>& basis, MultiVector& w, OrthoKind kind);

/// Preconditioned conjugate gradient; A and M must be symmetric positive
/// definite. Stops when ||r||/||b|| <= rtol; p'Ap <= 0 reports breakdown.
SolveReport solve_cg(const LinearOperator& a, const LinearOperator* m, const MultiVector& b, MultiVector& x,
                     const KrylovOptions& opts);

/// k independent CG recurrences in lockstep with aggregated operator
/// applications; converged columns freeze while the rest continue.
SolveReport solve_pseudo_block_cg(const LinearOperator& a, const LinearOperator* m, const MultiVector& b,
                                  MultiVector& x, const KrylovOptions& opts);

/// Right-preconditioned restarted GMRES via Arnoldi with Givens rotations;
/// the flexible variant stores the preconditioned basis so M may change
/// between iterations.
SolveReport solve_gmres(const LinearOperator& a, const LinearOperator* m, const MultiVector& b, MultiVector& x,
                        const KrylovOptions& opts);

SolveReport solve_bicgstab(const LinearOperator& a, const LinearOperator* m, const MultiVector& b, MultiVector& x,
                           const KrylovOptions& opts);

/// x_{k+1} = x_k + M (b - A x_k); divergence (growth by 1e6) is reported.
SolveReport solve_fixed_point(const LinearOperator& a, const LinearOperator& m, const MultiVector& b,
                              MultiVector& x, const KrylovOptions& opts);

}  // namespace trellis
