#pragma once

#include "trellis/comm.hpp"
#include "trellis/common.hpp"

#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace trellis {

/// Ownership of global indices by simulated ranks; backbone of all
/// distributed objects. Local indices are dense 0..n_local-1 within a rank
/// and stored 32-bit; global indices are 64-bit. A Map is an immutable value
/// with shared payload, cheap to copy.
class Map {
 public:
  static constexpr LocalIndex invalid_local = -1;

  Map() = default;

  /// Rank r owns the contiguous block of size floor(N/P), plus one extra
  /// element for the first N mod P ranks.
  static Map contiguous(GlobalIndex n_global, const CommContext& ctx);

  /// General constructor from this rank's owned/represented global indices
  /// (order defines local indices). Indices must be unique on this rank.
  static Map from_globals(GlobalIndex n_global, std::vector<GlobalIndex> mine, const CommContext& ctx);

  bool valid() const { return d_ != nullptr; }
  GlobalIndex global_count() const { return d_->n_global; }
  LocalIndex local_count() const { return static_cast<LocalIndex>(d_->globals.size()); }
  std::span<const GlobalIndex> globals() const { return d_->globals; }
  GlobalIndex global_index(LocalIndex lid) const { return d_->globals[static_cast<std::size_t>(lid)]; }

  /// Local index of a global index on this rank, or invalid_local.
  LocalIndex local_index(GlobalIndex gid) const {
    auto it = d_->g2l.find(gid);
    return it == d_->g2l.end() ? invalid_local : it->second;
  }
  bool owns_global(GlobalIndex gid) const { return d_->g2l.count(gid) != 0; }

  const CommContext& ctx() const { return d_->ctx; }

  /// Structural equality on this rank (same global count and same owned
  /// indices in the same order). Shared-payload copies compare equal fast.
  bool same_as(const Map& other) const;

 private:
  struct Data {
    GlobalIndex n_global = 0;
    std::vector<GlobalIndex> globals;
    std::unordered_map<GlobalIndex, LocalIndex> g2l;
    CommContext ctx;
  };
  std::shared_ptr<const Data> d_;
};

/// Global-to-owner lookup built collectively by gathering every rank's owned
/// indices; verifies the map is one-to-one (each global owned exactly once).
class OwnershipDirectory {
 public:
  explicit OwnershipDirectory(const Map& map);

  /// Owning rank, or -1 if the global index is absent from the map.
  int owner(GlobalIndex gid) const {
    auto it = owner_.find(gid);
    return it == owner_.end() ? -1 : it->second;
  }

 private:
  std::unordered_map<GlobalIndex, int> owner_;
};

}  // namespace trellis
