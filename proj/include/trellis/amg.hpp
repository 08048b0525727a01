#pragma once

#include "trellis/csr_matrix.hpp"
#include "trellis/operator.hpp"
#include "trellis/smoothers.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace trellis {

/// Node-to-aggregate assignment on this rank's rows (aggregation never
/// crosses ranks). Every node is assigned after construction; aggregates are
/// connected in the filtered graph and numbered in creation order.
struct Aggregates {
  std::vector<int> node_to_aggregate;  // local node -> local aggregate id
  std::vector<LocalIndex> root;        // root node per aggregate
  std::vector<int> sizes;
  int count = 0;
};

/// Greedy three-phase aggregation on the graph filtered by
/// |a_ij| <= drop_tol sqrt(|a_ii a_jj|): an unaggregated node with an
/// unaggregated neighbor roots a new aggregate and absorbs those neighbors;
/// leftovers join the adjacent aggregate with the most connections (ties to
/// the lowest id); isolated nodes become singletons.
Aggregates aggregate(const CsrMatrix& a, Real drop_tol);

/// Per-aggregate thin QR of the restricted nullspace: Q blocks form the
/// tentative prolongator, R blocks the coarse nullspace. For the default
/// one-column constant nullspace this is the normalized indicator column.
CsrMatrix tentative_prolongator(const CsrMatrix& a, const Aggregates& agg, const MultiVector& nullspace,
                                MultiVector* coarse_nullspace);

/// P = (I - omega D^{-1} A) P_tent with omega = damping / lambda_max(D^{-1}A);
/// damping 0 returns the tentative operator unchanged.
CsrMatrix smooth_prolongator(const CsrMatrix& a, const CsrMatrix& p_tent, Real damping);

struct AmgOptions {
  Real drop_tol = 0.0;
  GlobalIndex coarse_size = 16;
  int max_levels = 10;
  Real prolongator_damping = 4.0 / 3.0;
  std::string smoother = "symmetric_gauss_seidel";  // or "jacobi", "chebyshev"
  int smoother_sweeps = 1;
  int chebyshev_degree = 2;
};

struct AmgLevel {
  CsrMatrix a;
  CsrMatrix p;  // to the next coarser level (absent on the coarsest)
  CsrMatrix r;  // transpose of p
  bool has_transfer = false;
  bool use_chebyshev = false;
  RelaxationConfig relax;
  ChebyshevConfig chebyshev;
};

/// Smoothed-aggregation multigrid hierarchy with Galerkin coarse operators
/// A_{l+1} = R_l A_l P_l and a replicated dense solve on the coarsest level.
class Hierarchy {
 public:
  static Hierarchy setup(const CsrMatrix& a, const AmgOptions& opts);

  int num_levels() const { return static_cast<int>(levels_.size()); }
  const AmgLevel& level(int l) const { return levels_[static_cast<std::size_t>(l)]; }
  bool stalled() const { return stalled_; }

  /// z = V(nu1, nu2) cycle applied to r with zero initial guess per level.
  void vcycle(const MultiVector& r, MultiVector& z) const;

 private:
  void cycle_level(std::size_t l, const MultiVector& b, MultiVector& x) const;
  void smooth(const AmgLevel& level, const MultiVector& b, MultiVector& x) const;
  void coarse_solve(const MultiVector& b, MultiVector& x) const;

  std::vector<AmgLevel> levels_;
  MatX coarse_dense_;
  Eigen::PartialPivLU<MatX> coarse_lu_;
  bool stalled_ = false;
};

class AmgPreconditioner final : public LinearOperator {
 public:
  AmgPreconditioner(const CsrMatrix& a, const AmgOptions& opts)
      : map_(a.row_map()), hierarchy_(Hierarchy::setup(a, opts)) {}

  void apply(const MultiVector& r, MultiVector& z) const override { hierarchy_.vcycle(r, z); }
  const Map& domain_map() const override { return map_; }
  const Map& range_map() const override { return map_; }
  const Hierarchy& hierarchy() const { return hierarchy_; }

 private:
  Map map_;
  Hierarchy hierarchy_;
};

}  // namespace trellis
