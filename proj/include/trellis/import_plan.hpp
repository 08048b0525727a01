#pragma once

#include "trellis/map.hpp"
#include "trellis/multivector.hpp"

#include <vector>

namespace trellis {

/// Precomputed same/permute/remote exchange schedule between two Maps.
///
/// Every target local index is classified exactly once: the leading indices
/// whose globals coincide with the source's are "same", further locally
/// available globals are "permute" pairs, and the rest are "remote" entries
/// grouped by owning rank. Export lists mirror the remotes on the sending
/// side, ordered so that a packed message matches the requester's unpack
/// order. Construction is rank-collective; the source map must be one-to-one.
class ImportPlan {
 public:
  ImportPlan() = default;
  ImportPlan(const Map& source, const Map& target);

  const Map& source_map() const { return source_; }
  const Map& target_map() const { return target_; }

  LocalIndex num_same() const { return num_same_; }
  const std::vector<LocalIndex>& permute_source() const { return permute_source_; }
  const std::vector<LocalIndex>& permute_target() const { return permute_target_; }

  /// Ranks this rank receives from (ascending) and the target locals each
  /// message fills, in message order.
  const std::vector<int>& remote_ranks() const { return remote_ranks_; }
  const std::vector<std::vector<LocalIndex>>& remote_locals() const { return remote_locals_; }

  /// Ranks this rank sends to (ascending) and the source locals each message
  /// carries, in message order.
  const std::vector<int>& export_ranks() const { return export_ranks_; }
  const std::vector<std::vector<LocalIndex>>& export_locals() const { return export_locals_; }

  std::int64_t total_remote_count() const;
  std::int64_t total_export_count() const;

 private:
  Map source_;
  Map target_;
  LocalIndex num_same_ = 0;
  std::vector<LocalIndex> permute_source_;
  std::vector<LocalIndex> permute_target_;
  std::vector<int> remote_ranks_;
  std::vector<std::vector<LocalIndex>> remote_locals_;
  std::vector<int> export_ranks_;
  std::vector<std::vector<LocalIndex>> export_locals_;
};

/// Forward application: gather source values into the target layout (halo
/// exchange). insert overwrites, add accumulates. When several remote
/// contributions land on one target entry under insert, the highest source
/// rank wins (applied in ascending contributor-rank order).
void import_apply(const ImportPlan& plan, const MultiVector& src, MultiVector& tgt, CombineMode mode);

/// Reverse application: scatter target-layout values back onto the
/// one-to-one source layout (assembly direction); add sums all contributions.
void export_apply(const ImportPlan& plan, const MultiVector& src_on_target, MultiVector& dst_on_source,
                  CombineMode mode);

}  // namespace trellis
