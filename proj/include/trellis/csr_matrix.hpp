#pragma once

#include "trellis/import_plan.hpp"
#include "trellis/map.hpp"
#include "trellis/multivector.hpp"

#include <span>
#include <vector>

namespace trellis {

struct Triplet {
  GlobalIndex row;
  GlobalIndex col;
  Real value;
};

/// Plain compressed-row block with local indices; used for rank-local work
/// (subdomain systems, incomplete factorizations).
struct LocalCsr {
  LocalIndex n = 0;
  std::vector<std::int64_t> offsets;  // size n+1
  std::vector<LocalIndex> cols;       // sorted ascending within each row
  std::vector<Real> vals;
};

/// Rows of a distributed matrix gathered to the requesting rank, with global
/// column indices, in the requested row order.
struct FetchedRows {
  std::vector<GlobalIndex> row_globals;
  std::vector<std::int64_t> offsets;
  std::vector<GlobalIndex> cols;
  std::vector<Real> vals;
};

/// Partitioned sparse matrix in compressed-row storage. Rows live on a
/// one-to-one row Map; column indices are local to a column Map that lists
/// the domain-owned columns first (in domain order) and ghost columns after,
/// sorted by owning rank then global index. The Import plan from the domain
/// Map to the column Map is cached for the SpMV halo exchange. Immutable
/// after construction.
class CsrMatrix {
 public:
  CsrMatrix() = default;

  /// Build from triplets whose rows this rank owns (duplicates are summed,
  /// explicit zeros retained). Rank-collective.
  static CsrMatrix from_triplets(const Map& row_map, const Map& domain_map, std::vector<Triplet> entries);

  /// As from_triplets, but entries may name any row; they are routed to the
  /// owning rank first.
  static CsrMatrix from_triplets_distributed(const Map& row_map, const Map& domain_map,
                                             std::vector<Triplet> entries);

  const Map& row_map() const { return row_map_; }
  const Map& col_map() const { return col_map_; }
  const Map& domain_map() const { return domain_map_; }
  const Map& range_map() const { return row_map_; }
  const ImportPlan& column_importer() const { return importer_; }

  LocalIndex local_rows() const { return static_cast<LocalIndex>(offsets_.size()) - 1; }
  LocalIndex num_owned_cols() const { return domain_map_.local_count(); }
  std::int64_t local_nonzeros() const { return offsets_.empty() ? 0 : offsets_.back(); }

  std::span<const std::int64_t> offsets() const { return offsets_; }
  std::span<const LocalIndex> row_cols(LocalIndex i) const {
    return {cols_.data() + offsets_[i], static_cast<std::size_t>(offsets_[i + 1] - offsets_[i])};
  }
  std::span<const Real> row_vals(LocalIndex i) const {
    return {vals_.data() + offsets_[i], static_cast<std::size_t>(offsets_[i + 1] - offsets_[i])};
  }
  GlobalIndex col_global(LocalIndex col_local) const { return col_map_.global_index(col_local); }
  bool col_is_owned(LocalIndex col_local) const { return col_local < num_owned_cols(); }

 private:
  Map row_map_;
  Map col_map_;
  Map domain_map_;
  ImportPlan importer_;
  std::vector<std::int64_t> offsets_;
  std::vector<LocalIndex> cols_;
  std::vector<Real> vals_;

  friend CsrMatrix scaled_rows(const CsrMatrix& a, const MultiVector& factors);
};

/// y <- alpha A x + beta y. x lives on the domain Map, y on the range Map;
/// x is imported into the ghosted column layout, then the local CSR kernel
/// runs. Rank-collective.
void spmv(const CsrMatrix& a, const MultiVector& x, MultiVector& y, Real alpha = 1.0, Real beta = 0.0);

/// C = A B with exact accumulation; rows sorted and deduplicated, explicit
/// zeros from cancellation retained. Requires A's domain Map == B's range Map.
CsrMatrix spgemm(const CsrMatrix& a, const CsrMatrix& b);

CsrMatrix transpose(const CsrMatrix& a);

/// C = alpha A + beta B on the union pattern (matching row and domain Maps).
CsrMatrix add(const CsrMatrix& a, const CsrMatrix& b, Real alpha, Real beta);

MultiVector diagonal(const CsrMatrix& a);
Real frobenius_norm(const CsrMatrix& a);

/// Copy of A with row i scaled by factors(i); structure and maps shared.
CsrMatrix scaled_rows(const CsrMatrix& a, const MultiVector& factors);

/// Gather the listed rows (unique global indices) of a distributed matrix
/// onto this rank. Rank-collective.
FetchedRows fetch_rows(const CsrMatrix& a, std::span<const GlobalIndex> wanted);

/// DistObject pack/unpack contract for matrix row transfers: the packed
/// bytes hold each row's length, global columns, and values.
Bytes pack_matrix_rows(const CsrMatrix& a, std::span<const LocalIndex> rows);
void unpack_matrix_rows(const Bytes& buf, std::span<const GlobalIndex> row_globals, std::vector<Triplet>& out);

/// Rank-local diagonal block (owned rows x owned columns, local indices).
/// Requires the row and domain Maps to coincide.
LocalCsr local_diagonal_block(const CsrMatrix& a);

}  // namespace trellis
