#include "trellis/map.hpp"

#include <algorithm>

namespace trellis {

Map Map::contiguous(GlobalIndex n_global, const CommContext& ctx) {
  TRELLIS_REQUIRE(n_global >= 0, "map size must be nonnegative");
  const int P = ctx.size();
  const int r = ctx.rank();
  const GlobalIndex base = n_global / P;
  const GlobalIndex extra = n_global % P;
  const GlobalIndex my_count = base + (r < extra ? 1 : 0);
  const GlobalIndex my_start = base * r + std::min<GlobalIndex>(r, extra);

  std::vector<GlobalIndex> mine(static_cast<std::size_t>(my_count));
  for (GlobalIndex i = 0; i < my_count; ++i) mine[static_cast<std::size_t>(i)] = my_start + i;
  return from_globals(n_global, std::move(mine), ctx);
}

Map Map::from_globals(GlobalIndex n_global, std::vector<GlobalIndex> mine, const CommContext& ctx) {
  auto data = std::make_shared<Data>();
  data->n_global = n_global;
  data->ctx = ctx;
  data->g2l.reserve(mine.size());
  for (std::size_t i = 0; i < mine.size(); ++i) {
    TRELLIS_REQUIRE(mine[i] >= 0 && mine[i] < n_global,
                    "global index " + std::to_string(mine[i]) + " outside [0, " + std::to_string(n_global) + ")");
    const bool inserted = data->g2l.emplace(mine[i], static_cast<LocalIndex>(i)).second;
    TRELLIS_REQUIRE(inserted, "duplicate global index " + std::to_string(mine[i]) + " on one rank");
  }
  data->globals = std::move(mine);

  Map m;
  m.d_ = std::move(data);
  return m;
}

bool Map::same_as(const Map& other) const {
  if (d_ == other.d_) return true;
  if (!d_ || !other.d_) return false;
  return d_->n_global == other.d_->n_global && d_->globals == other.d_->globals;
}

OwnershipDirectory::OwnershipDirectory(const Map& map) {
  const CommContext& ctx = map.ctx();
  auto tables = ctx.all_gather_values<GlobalIndex>(map.globals());
  owner_.reserve(static_cast<std::size_t>(map.global_count()));
  for (int r = 0; r < static_cast<int>(tables.size()); ++r) {
    for (GlobalIndex gid : tables[static_cast<std::size_t>(r)]) {
      const bool inserted = owner_.emplace(gid, r).second;
      TRELLIS_REQUIRE(inserted, "map is not one-to-one: global index " + std::to_string(gid) +
                                    " owned by ranks " + std::to_string(owner_[gid]) + " and " + std::to_string(r));
    }
  }
}

}  // namespace trellis
