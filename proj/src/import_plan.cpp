#include "trellis/import_plan.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace trellis {

namespace {
constexpr int kImportDataTag = 1 << 20;
}

ImportPlan::ImportPlan(const Map& source, const Map& target) : source_(source), target_(target) {
  TRELLIS_REQUIRE(source.valid() && target.valid(), "import plan needs valid maps");
  const CommContext& ctx = source.ctx();
  const int my_rank = ctx.rank();

  // Verifies one-to-one ownership of the source as a side effect.
  OwnershipDirectory directory(source);

  const LocalIndex n_tgt = target.local_count();
  const LocalIndex n_src = source.local_count();

  LocalIndex same = 0;
  while (same < n_tgt && same < n_src && target.global_index(same) == source.global_index(same)) ++same;
  num_same_ = same;

  std::map<int, std::vector<std::pair<GlobalIndex, LocalIndex>>> remote_by_rank;
  for (LocalIndex t = same; t < n_tgt; ++t) {
    const GlobalIndex g = target.global_index(t);
    const LocalIndex s = source.local_index(g);
    if (s != Map::invalid_local) {
      permute_source_.push_back(s);
      permute_target_.push_back(t);
      continue;
    }
    const int owner = directory.owner(g);
    TRELLIS_REQUIRE(owner >= 0, "target references global index " + std::to_string(g) + " absent from source");
    remote_by_rank[owner].emplace_back(g, t);
  }

  // Request tables: every rank broadcasts which globals it needs from whom;
  // the owning rank derives its export lists in the requester's order.
  Bytes request;
  put<std::int32_t>(request, static_cast<std::int32_t>(remote_by_rank.size()));
  for (const auto& [owner, entries] : remote_by_rank) {
    put<std::int32_t>(request, owner);
    put<std::uint64_t>(request, entries.size());
    for (const auto& [g, t] : entries) put<GlobalIndex>(request, g);
    remote_ranks_.push_back(owner);
    std::vector<LocalIndex> locals(entries.size());
    std::transform(entries.begin(), entries.end(), locals.begin(), [](const auto& p) { return p.second; });
    remote_locals_.push_back(std::move(locals));
  }

  std::vector<Bytes> tables = ctx.all_gather(request);
  for (int requester = 0; requester < static_cast<int>(tables.size()); ++requester) {
    if (requester == my_rank) continue;
    ByteReader reader(tables[static_cast<std::size_t>(requester)]);
    const auto buckets = reader.get<std::int32_t>();
    for (std::int32_t b = 0; b < buckets; ++b) {
      const auto owner = reader.get<std::int32_t>();
      const auto count = reader.get<std::uint64_t>();
      std::vector<LocalIndex> locals;
      if (owner == my_rank) locals.reserve(count);
      for (std::uint64_t i = 0; i < count; ++i) {
        const auto g = reader.get<GlobalIndex>();
        if (owner != my_rank) continue;
        const LocalIndex s = source.local_index(g);
        TRELLIS_REQUIRE(s != Map::invalid_local, "import request for global index not owned here");
        locals.push_back(s);
      }
      if (owner == my_rank) {
        export_ranks_.push_back(requester);
        export_locals_.push_back(std::move(locals));
      }
    }
  }
}

std::int64_t ImportPlan::total_remote_count() const {
  return std::accumulate(remote_locals_.begin(), remote_locals_.end(), std::int64_t{0},
                         [](std::int64_t acc, const auto& v) { return acc + static_cast<std::int64_t>(v.size()); });
}

std::int64_t ImportPlan::total_export_count() const {
  return std::accumulate(export_locals_.begin(), export_locals_.end(), std::int64_t{0},
                         [](std::int64_t acc, const auto& v) { return acc + static_cast<std::int64_t>(v.size()); });
}

namespace {

void apply_local(const ImportPlan& plan, const MultiVector& src, MultiVector& tgt, CombineMode mode, bool forward) {
  const int k = src.num_cols();
  for (LocalIndex i = 0; i < plan.num_same(); ++i) {
    for (int c = 0; c < k; ++c) {
      const LocalIndex from = i, to = i;
      const Real v = forward ? src.at(from, c) : src.at(to, c);
      Real& slot = forward ? tgt.at(to, c) : tgt.at(from, c);
      if (mode == CombineMode::insert)
        slot = v;
      else
        slot += v;
    }
  }
  const auto& ps = plan.permute_source();
  const auto& pt = plan.permute_target();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (int c = 0; c < k; ++c) {
      const Real v = forward ? src.at(ps[i], c) : src.at(pt[i], c);
      Real& slot = forward ? tgt.at(pt[i], c) : tgt.at(ps[i], c);
      if (mode == CombineMode::insert)
        slot = v;
      else
        slot += v;
    }
  }
}

/// Shared exchange skeleton: sends are buffered up front, then contributions
/// (local block and incoming messages) apply in ascending contributor-rank
/// order so insert conflicts deterministically resolve to the highest rank.
void exchange(const ImportPlan& plan, const MultiVector& src, MultiVector& dst, CombineMode mode, bool forward) {
  const CommContext& ctx = plan.source_map().ctx();
  const int my_rank = ctx.rank();

  const auto& send_ranks = forward ? plan.export_ranks() : plan.remote_ranks();
  const auto& send_locals = forward ? plan.export_locals() : plan.remote_locals();
  const auto& recv_ranks = forward ? plan.remote_ranks() : plan.export_ranks();
  const auto& recv_locals = forward ? plan.remote_locals() : plan.export_locals();

  for (std::size_t i = 0; i < send_ranks.size(); ++i)
    ctx.send(send_ranks[i], kImportDataTag, pack_rows(src, send_locals[i]));

  bool local_done = false;
  for (std::size_t i = 0; i < recv_ranks.size(); ++i) {
    if (!local_done && my_rank < recv_ranks[i]) {
      apply_local(plan, src, dst, mode, forward);
      local_done = true;
    }
    Bytes buf = ctx.recv(recv_ranks[i], kImportDataTag);
    unpack_rows(dst, recv_locals[i], buf, mode);
  }
  if (!local_done) apply_local(plan, src, dst, mode, forward);
}

}  // namespace

void import_apply(const ImportPlan& plan, const MultiVector& src, MultiVector& tgt, CombineMode mode) {
  TRELLIS_REQUIRE(src.map().same_as(plan.source_map()), "import_apply: source map mismatch");
  TRELLIS_REQUIRE(tgt.map().same_as(plan.target_map()), "import_apply: target map mismatch");
  TRELLIS_REQUIRE(src.num_cols() == tgt.num_cols(), "import_apply: column count mismatch");
  exchange(plan, src, tgt, mode, /*forward=*/true);
}

void export_apply(const ImportPlan& plan, const MultiVector& src_on_target, MultiVector& dst_on_source,
                  CombineMode mode) {
  TRELLIS_REQUIRE(src_on_target.map().same_as(plan.target_map()), "export_apply: source map mismatch");
  TRELLIS_REQUIRE(dst_on_source.map().same_as(plan.source_map()), "export_apply: destination map mismatch");
  TRELLIS_REQUIRE(src_on_target.num_cols() == dst_on_source.num_cols(), "export_apply: column count mismatch");
  exchange(plan, src_on_target, dst_on_source, mode, /*forward=*/false);
}

}  // namespace trellis
