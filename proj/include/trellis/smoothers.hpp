#pragma once

#include "trellis/csr_matrix.hpp"
#include "trellis/import_plan.hpp"
#include "trellis/operator.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <vector>

namespace trellis {

// ---------------------------------------------------------------------------
// Relaxation

enum class RelaxKind { jacobi, gauss_seidel_forward, gauss_seidel_backward, gauss_seidel_symmetric };

struct RelaxationConfig {
  RelaxKind kind = RelaxKind::jacobi;
  int sweeps = 1;
  Real damping = 1.0;
};

/// In-place relaxation sweeps on A x = b. Jacobi: x += w D^{-1}(b - A x).
/// Gauss-Seidel runs an exact triangular sweep on the local block while
/// off-rank couplings see the ghost values imported at the start of each
/// directional sweep (Jacobi between ranks, Gauss-Seidel within).
/// Rank-collective; throws on a zero diagonal entry.
void relax_apply(const CsrMatrix& a, const MultiVector& b, MultiVector& x, const RelaxationConfig& cfg);

/// Largest eigenvalue estimate of D^{-1}A: power iteration from a vector
/// seeded deterministically by global index, Rayleigh quotient boosted 1.1.
Real estimate_lambda_max(const CsrMatrix& a, int iterations = 10);

// ---------------------------------------------------------------------------
// Chebyshev

struct ChebyshevConfig {
  int degree = 2;
  Real lambda_max = 0.0;        // required, > 0
  Real eigenvalue_ratio = 30.0; // lambda_min := lambda_max / ratio, > 1
};

/// Three-term Chebyshev recurrence on [lambda_max/ratio, lambda_max] for the
/// D^{-1}-scaled system, applied in place. Degree 1 coincides with damped
/// Jacobi at w = 2/(lambda_min + lambda_max).
void chebyshev_apply(const CsrMatrix& a, const MultiVector& b, MultiVector& x, const ChebyshevConfig& cfg);

// ---------------------------------------------------------------------------
// ILU(k) on a local block

/// Combined L\U storage: unit lower and upper factors share one CSR pattern
/// with a diagonal position per row; `levels` records each entry's fill
/// level (0 for original entries).
struct IluFactors {
  int fill_level = 0;
  LocalIndex n = 0;
  std::vector<std::int64_t> offsets;
  std::vector<LocalIndex> cols;
  std::vector<Real> vals;
  std::vector<std::int64_t> diag_pos;
  std::vector<int> levels;
};

/// Symbolic + numeric ILU(k): fill entry level = min over update paths of
/// level(i,k) + level(k,j) + 1, kept while <= k; numeric phase is standard
/// ikj elimination on the fixed pattern. Throws on a zero or tiny pivot
/// (|pivot| < 1e-14 ||A||_F), reporting the row.
IluFactors ilu_factor(const LocalCsr& a, int fill_level);

/// Forward (unit lower) then backward (upper) substitution.
void ilu_solve(const IluFactors& factors, const VecX& r, VecX& z);

/// ||A - L U||_F over the local block, for fill-quality checks.
Real ilu_residual_fnorm(const LocalCsr& a, const IluFactors& factors);

MatX dense_from_local(const LocalCsr& a);

// ---------------------------------------------------------------------------
// One-level overlapping Schwarz

enum class SubdomainSolverKind { dense_lu, ilu };
enum class SchwarzCombine { additive, restricted_additive };

struct SchwarzConfig {
  int overlap = 1;
  SubdomainSolverKind solver = SubdomainSolverKind::dense_lu;
  int ilu_fill = 0;
  SchwarzCombine combine = SchwarzCombine::additive;
};

/// One-level overlapping additive Schwarz: the delta-overlap subdomain is the
/// owned rows plus rows within delta edges in the symmetrized graph of A.
/// additive sums all subdomain contributions; restricted_additive keeps only
/// the owned portion of the local solve. Setup and apply are rank-collective.
class SchwarzPreconditioner final : public LinearOperator {
 public:
  SchwarzPreconditioner(const CsrMatrix& a, const SchwarzConfig& cfg);

  void apply(const MultiVector& r, MultiVector& z) const override;
  const Map& domain_map() const override { return a_->row_map(); }
  const Map& range_map() const override { return a_->row_map(); }

  const Map& overlap_map() const { return overlap_map_; }

 private:
  const CsrMatrix* a_;
  SchwarzConfig cfg_;
  Map overlap_map_;
  ImportPlan plan_;
  Eigen::PartialPivLU<MatX> dense_lu_;
  std::optional<IluFactors> ilu_;
};

/// The delta-overlap global index set of this rank (owned rows first, added
/// halo sorted ascending), exposed for tests and the two-level method.
std::vector<GlobalIndex> overlap_indices(const CsrMatrix& a, int overlap);

/// Local subdomain matrix: rows/columns restricted to the given global index
/// set (fetches off-rank rows). Rank-collective.
LocalCsr restrict_to_indices(const CsrMatrix& a, std::span<const GlobalIndex> indices);

// ---------------------------------------------------------------------------
// Preconditioner wrappers

/// z = relaxation sweeps on A z = r starting from z = 0 (a linear operator).
class RelaxationPreconditioner final : public LinearOperator {
 public:
  RelaxationPreconditioner(const CsrMatrix& a, RelaxationConfig cfg) : a_(&a), cfg_(cfg) {}
  void apply(const MultiVector& r, MultiVector& z) const override {
    z.set_zero();
    relax_apply(*a_, r, z, cfg_);
  }
  const Map& domain_map() const override { return a_->row_map(); }
  const Map& range_map() const override { return a_->row_map(); }

 private:
  const CsrMatrix* a_;
  RelaxationConfig cfg_;
};

/// z = degree-d Chebyshev on A z = r from z = 0; the eigenvalue estimate is
/// taken once at setup (collective).
class ChebyshevPreconditioner final : public LinearOperator {
 public:
  ChebyshevPreconditioner(const CsrMatrix& a, int degree, Real eigenvalue_ratio = 30.0, int power_iterations = 10);
  void apply(const MultiVector& r, MultiVector& z) const override {
    z.set_zero();
    chebyshev_apply(*a_, r, z, cfg_);
  }
  const Map& domain_map() const override { return a_->row_map(); }
  const Map& range_map() const override { return a_->row_map(); }
  const ChebyshevConfig& config() const { return cfg_; }

 private:
  const CsrMatrix* a_;
  ChebyshevConfig cfg_;
};

/// Block-Jacobi across ranks with ILU(k) on each local diagonal block.
class IluPreconditioner final : public LinearOperator {
 public:
  IluPreconditioner(const CsrMatrix& a, int fill_level);
  void apply(const MultiVector& r, MultiVector& z) const override;
  const Map& domain_map() const override { return a_->row_map(); }
  const Map& range_map() const override { return a_->row_map(); }
  const IluFactors& factors() const { return factors_; }

 private:
  const CsrMatrix* a_;
  IluFactors factors_;
};

// ---------------------------------------------------------------------------
// 2x2 block preconditioning

/// Physics-block operator: sub-blocks and diagonal-block inverse
/// approximations are arbitrary operators from this stack; off-diagonal
/// blocks may be null (zero coupling). block_lu additionally needs a
/// caller-supplied Schur complement approximation.
struct BlockOperator2x2 {
  const LinearOperator* a00 = nullptr;
  const LinearOperator* a01 = nullptr;
  const LinearOperator* a10 = nullptr;
  const LinearOperator* a11 = nullptr;
  const LinearOperator* inv00 = nullptr;
  const LinearOperator* inv11 = nullptr;
  const LinearOperator* schur_inv = nullptr;
};

enum class BlockSolveKind { block_jacobi, block_gauss_seidel, block_lu };

void block_precond_2x2(const BlockOperator2x2& op, BlockSolveKind kind, const MultiVector& r0,
                       const MultiVector& r1, MultiVector& z0, MultiVector& z1);

}  // namespace trellis
