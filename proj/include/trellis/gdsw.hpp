#pragma once

#include "trellis/csr_matrix.hpp"
#include "trellis/operator.hpp"
#include "trellis/smoothers.hpp"

#include <Eigen/Dense>

#include <vector>

namespace trellis {

enum class InterfaceClass { vertex, edge };

/// Interface analysis of a one-subdomain-per-rank decomposition, replicated
/// identically on every rank. A node is interface iff its neighborhood in
/// the symmetrized pattern touches at least two subdomains; its signature is
/// the sorted set of adjacent subdomain ids. Components group connected
/// interface nodes of identical signature; the component id is the lowest
/// global index in the component.
struct InterfaceClassification {
  std::vector<GlobalIndex> nodes;            // sorted ascending
  std::vector<std::vector<int>> signatures;  // parallel to nodes
  std::vector<GlobalIndex> component_of;     // parallel to nodes
  std::vector<GlobalIndex> component_ids;    // sorted unique
  std::vector<InterfaceClass> component_class;  // parallel to component_ids

  bool empty() const { return nodes.empty(); }
  std::size_t index_of(GlobalIndex node) const;
  int component_column(GlobalIndex component_id) const;
};

/// Rank-collective; the decomposition is the matrix row map. Throws if a
/// rank owns no rows of a nonempty matrix.
InterfaceClassification identify_interface(const CsrMatrix& a);

/// Energy-minimizing coarse basis: interface values are the component
/// indicator (times the nullspace, constant by default), interior values the
/// discrete-harmonic extension solving A_II phi_I = -A_IG phi_G per
/// subdomain. Returned as a distributed matrix on A's row map whose domain
/// is the coarse space (one column per component).
CsrMatrix build_coarse_basis(const CsrMatrix& a, const InterfaceClassification& classification);

/// Two-level overlapping Schwarz: first-level Schwarz plus the Galerkin
/// coarse correction  z = Phi A0^{-1} Phi' r + sum_i R_i' Ainv_i R_i r, with
/// A0 = Phi' A Phi replicated on every rank and factored densely.
class GdswPreconditioner final : public LinearOperator {
 public:
  GdswPreconditioner(const CsrMatrix& a, const SchwarzConfig& first_level);

  void apply(const MultiVector& r, MultiVector& z) const override;
  const Map& domain_map() const override { return a_->row_map(); }
  const Map& range_map() const override { return a_->row_map(); }

  const InterfaceClassification& classification() const { return classification_; }
  const CsrMatrix& basis() const { return phi_; }
  GlobalIndex coarse_dim() const { return coarse_dim_; }
  const MatX& coarse_matrix() const { return a0_; }

  /// Coarse correction alone: z = Phi A0^{-1} Phi' r (zero when the coarse
  /// space is empty).
  void apply_coarse(const MultiVector& r, MultiVector& z) const;

 private:
  const CsrMatrix* a_;
  SchwarzPreconditioner first_level_;
  InterfaceClassification classification_;
  CsrMatrix phi_;
  GlobalIndex coarse_dim_ = 0;
  MatX a0_;
  Eigen::PartialPivLU<MatX> a0_lu_;
};

}  // namespace trellis
