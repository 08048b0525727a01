#include "trellis/csr_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace trellis {

namespace {
constexpr int kTripletTag = (1 << 20) + 1;
constexpr int kRowFetchTag = (1 << 20) + 2;
}  // namespace

CsrMatrix CsrMatrix::from_triplets(const Map& row_map, const Map& domain_map, std::vector<Triplet> entries) {
  TRELLIS_REQUIRE(row_map.valid() && domain_map.valid(), "from_triplets needs valid maps");
  const CommContext& ctx = row_map.ctx();

  for (const Triplet& t : entries) {
    TRELLIS_REQUIRE(row_map.owns_global(t.row),
                    "triplet row " + std::to_string(t.row) + " not owned by rank " + std::to_string(ctx.rank()));
    TRELLIS_REQUIRE(t.col >= 0 && t.col < domain_map.global_count(),
                    "triplet column " + std::to_string(t.col) + " outside domain");
  }

  std::stable_sort(entries.begin(), entries.end(), [&](const Triplet& a, const Triplet& b) {
    const LocalIndex la = row_map.local_index(a.row), lb = row_map.local_index(b.row);
    if (la != lb) return la < lb;
    return a.col < b.col;
  });

  // Ghost columns: referenced globals the domain map does not own here.
  std::vector<GlobalIndex> ghosts;
  for (const Triplet& t : entries)
    if (domain_map.local_index(t.col) == Map::invalid_local) ghosts.push_back(t.col);
  std::sort(ghosts.begin(), ghosts.end());
  ghosts.erase(std::unique(ghosts.begin(), ghosts.end()), ghosts.end());

  // Column map convention: owned columns first in domain order, ghosts after,
  // sorted by owning rank then global index.
  OwnershipDirectory domain_directory(domain_map);
  std::sort(ghosts.begin(), ghosts.end(), [&](GlobalIndex a, GlobalIndex b) {
    const int oa = domain_directory.owner(a), ob = domain_directory.owner(b);
    if (oa != ob) return oa < ob;
    return a < b;
  });
  for (GlobalIndex g : ghosts)
    TRELLIS_REQUIRE(domain_directory.owner(g) >= 0,
                    "column global index " + std::to_string(g) + " absent from domain map");

  std::vector<GlobalIndex> col_globals(domain_map.globals().begin(), domain_map.globals().end());
  col_globals.insert(col_globals.end(), ghosts.begin(), ghosts.end());
  Map col_map = Map::from_globals(domain_map.global_count(), std::move(col_globals), ctx);

  CsrMatrix m;
  m.row_map_ = row_map;
  m.domain_map_ = domain_map;
  m.col_map_ = col_map;

  const LocalIndex n = row_map.local_count();
  m.offsets_.assign(static_cast<std::size_t>(n) + 1, 0);
  m.cols_.reserve(entries.size());
  m.vals_.reserve(entries.size());

  std::size_t i = 0;
  std::vector<std::pair<LocalIndex, Real>> row_entries;
  for (LocalIndex r = 0; r < n; ++r) {
    const GlobalIndex g_row = row_map.global_index(r);
    row_entries.clear();
    while (i < entries.size() && entries[i].row == g_row) {
      const GlobalIndex g_col = entries[i].col;
      Real v = entries[i].value;
      ++i;
      while (i < entries.size() && entries[i].row == g_row && entries[i].col == g_col) {
        v += entries[i].value;  // duplicates sum; a zero sum still keeps the entry
        ++i;
      }
      row_entries.emplace_back(col_map.local_index(g_col), v);
    }
    // Rows store ascending local column indices; local order can differ from
    // global order when the domain map is not contiguous.
    std::sort(row_entries.begin(), row_entries.end(),
              [](const auto& x, const auto& y) { return x.first < y.first; });
    for (const auto& [lc, v] : row_entries) {
      m.cols_.push_back(lc);
      m.vals_.push_back(v);
    }
    m.offsets_[static_cast<std::size_t>(r) + 1] = static_cast<std::int64_t>(m.cols_.size());
  }
  TRELLIS_REQUIRE(i == entries.size(), "from_triplets: rows not sorted by ownership");

  m.importer_ = ImportPlan(domain_map, col_map);
  return m;
}

CsrMatrix CsrMatrix::from_triplets_distributed(const Map& row_map, const Map& domain_map,
                                               std::vector<Triplet> entries) {
  const CommContext& ctx = row_map.ctx();
  const int P = ctx.size();
  const int me = ctx.rank();
  OwnershipDirectory row_directory(row_map);

  std::vector<std::vector<Triplet>> buckets(static_cast<std::size_t>(P));
  for (const Triplet& t : entries) {
    const int owner = row_directory.owner(t.row);
    TRELLIS_REQUIRE(owner >= 0, "triplet row " + std::to_string(t.row) + " absent from row map");
    buckets[static_cast<std::size_t>(owner)].push_back(t);
  }

  for (int p = 0; p < P; ++p) {
    if (p == me) continue;
    Bytes buf;
    const auto& bucket = buckets[static_cast<std::size_t>(p)];
    put<std::uint64_t>(buf, bucket.size());
    for (const Triplet& t : bucket) {
      put<GlobalIndex>(buf, t.row);
      put<GlobalIndex>(buf, t.col);
      put<Real>(buf, t.value);
    }
    ctx.send(p, kTripletTag, buf);
  }

  // Deterministic assembly order: contributions in contributor-rank order.
  std::vector<Triplet> mine;
  for (int p = 0; p < P; ++p) {
    if (p == me) {
      mine.insert(mine.end(), buckets[static_cast<std::size_t>(p)].begin(), buckets[static_cast<std::size_t>(p)].end());
      continue;
    }
    Bytes buf = ctx.recv(p, kTripletTag);
    ByteReader reader(buf);
    const auto count = reader.get<std::uint64_t>();
    for (std::uint64_t j = 0; j < count; ++j) {
      Triplet t;
      t.row = reader.get<GlobalIndex>();
      t.col = reader.get<GlobalIndex>();
      t.value = reader.get<Real>();
      mine.push_back(t);
    }
  }
  return from_triplets(row_map, domain_map, std::move(mine));
}

void spmv(const CsrMatrix& a, const MultiVector& x, MultiVector& y, Real alpha, Real beta) {
  TRELLIS_REQUIRE(x.map().same_as(a.domain_map()), "spmv: x map mismatch with domain map");
  TRELLIS_REQUIRE(y.map().same_as(a.range_map()), "spmv: y map mismatch with range map");
  TRELLIS_REQUIRE(x.num_cols() == y.num_cols(), "spmv: column count mismatch");

  MultiVector xg(a.col_map(), x.num_cols());
  import_apply(a.column_importer(), x, xg, CombineMode::insert);

  const int k = x.num_cols();
  if (beta == 0.0)
    y.set_zero();
  else if (beta != 1.0)
    y.local() *= beta;

  const LocalIndex n = a.local_rows();
  for (LocalIndex i = 0; i < n; ++i) {
    const auto cols = a.row_cols(i);
    const auto vals = a.row_vals(i);
    for (int c = 0; c < k; ++c) {
      Real acc = 0.0;
      for (std::size_t j = 0; j < cols.size(); ++j) acc += vals[j] * xg.at(cols[j], c);
      y.at(i, c) += alpha * acc;
    }
  }
}

Bytes pack_matrix_rows(const CsrMatrix& a, std::span<const LocalIndex> rows) {
  Bytes buf;
  put<std::uint64_t>(buf, rows.size());
  for (LocalIndex r : rows) {
    const auto cols = a.row_cols(r);
    const auto vals = a.row_vals(r);
    put<std::uint64_t>(buf, cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
      put<GlobalIndex>(buf, a.col_global(cols[j]));
      put<Real>(buf, vals[j]);
    }
  }
  return buf;
}

void unpack_matrix_rows(const Bytes& buf, std::span<const GlobalIndex> row_globals, std::vector<Triplet>& out) {
  ByteReader reader(buf);
  const auto n = reader.get<std::uint64_t>();
  TRELLIS_REQUIRE(n == row_globals.size(), "unpack_matrix_rows: row count mismatch");
  for (std::size_t r = 0; r < n; ++r) {
    const auto len = reader.get<std::uint64_t>();
    for (std::uint64_t j = 0; j < len; ++j) {
      Triplet t;
      t.row = row_globals[r];
      t.col = reader.get<GlobalIndex>();
      t.value = reader.get<Real>();
      out.push_back(t);
    }
  }
}

FetchedRows fetch_rows(const CsrMatrix& a, std::span<const GlobalIndex> wanted) {
  const Map& row_map = a.row_map();
  const CommContext& ctx = row_map.ctx();

  Map wanted_map = Map::from_globals(row_map.global_count(),
                                     std::vector<GlobalIndex>(wanted.begin(), wanted.end()), ctx);
  ImportPlan plan(row_map, wanted_map);

  for (std::size_t i = 0; i < plan.export_ranks().size(); ++i)
    ctx.send(plan.export_ranks()[i], kRowFetchTag, pack_matrix_rows(a, plan.export_locals()[i]));

  // Rows arrive as (global column, value) pairs; assemble per wanted slot.
  std::vector<std::vector<std::pair<GlobalIndex, Real>>> slots(wanted.size());
  for (LocalIndex i = 0; i < plan.num_same(); ++i) {
    const auto cols = a.row_cols(i);
    const auto vals = a.row_vals(i);
    auto& slot = slots[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < cols.size(); ++j) slot.emplace_back(a.col_global(cols[j]), vals[j]);
  }
  for (std::size_t p = 0; p < plan.permute_source().size(); ++p) {
    const LocalIndex src = plan.permute_source()[p];
    const auto cols = a.row_cols(src);
    const auto vals = a.row_vals(src);
    auto& slot = slots[static_cast<std::size_t>(plan.permute_target()[p])];
    for (std::size_t j = 0; j < cols.size(); ++j) slot.emplace_back(a.col_global(cols[j]), vals[j]);
  }
  for (std::size_t m = 0; m < plan.remote_ranks().size(); ++m) {
    Bytes buf = ctx.recv(plan.remote_ranks()[m], kRowFetchTag);
    ByteReader reader(buf);
    const auto n = reader.get<std::uint64_t>();
    const auto& locals = plan.remote_locals()[m];
    TRELLIS_REQUIRE(n == locals.size(), "fetch_rows: row count mismatch");
    for (std::size_t r = 0; r < n; ++r) {
      auto& slot = slots[static_cast<std::size_t>(locals[r])];
      const auto len = reader.get<std::uint64_t>();
      for (std::uint64_t j = 0; j < len; ++j) {
        const auto g = reader.get<GlobalIndex>();
        const Real v = reader.get<Real>();
        slot.emplace_back(g, v);
      }
    }
  }

  FetchedRows out;
  out.row_globals.assign(wanted.begin(), wanted.end());
  out.offsets.assign(wanted.size() + 1, 0);
  for (std::size_t r = 0; r < slots.size(); ++r) {
    for (const auto& [g, v] : slots[r]) {
      out.cols.push_back(g);
      out.vals.push_back(v);
    }
    out.offsets[r + 1] = static_cast<std::int64_t>(out.cols.size());
  }
  return out;
}

CsrMatrix spgemm(const CsrMatrix& a, const CsrMatrix& b) {
  TRELLIS_REQUIRE(a.domain_map().same_as(b.range_map()), "spgemm: A domain map must equal B range map");

  // Ghost rows of B correspond to A's ghost columns.
  const LocalIndex n_owned = a.num_owned_cols();
  std::vector<GlobalIndex> ghost_globals;
  for (LocalIndex c = n_owned; c < a.col_map().local_count(); ++c) ghost_globals.push_back(a.col_global(c));
  FetchedRows b_ext = fetch_rows(b, ghost_globals);

  std::vector<Triplet> c_entries;
  std::vector<std::pair<GlobalIndex, Real>> acc;
  const LocalIndex n = a.local_rows();
  for (LocalIndex i = 0; i < n; ++i) {
    acc.clear();
    const auto cols = a.row_cols(i);
    const auto vals = a.row_vals(i);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const Real av = vals[j];
      const LocalIndex c = cols[j];
      if (c < n_owned) {
        const LocalIndex br = b.row_map().local_index(a.domain_map().global_index(c));
        TRELLIS_REQUIRE(br != Map::invalid_local, "spgemm: owned column without local B row");
        const auto bcols = b.row_cols(br);
        const auto bvals = b.row_vals(br);
        for (std::size_t t = 0; t < bcols.size(); ++t) acc.emplace_back(b.col_global(bcols[t]), av * bvals[t]);
      } else {
        const std::size_t e = static_cast<std::size_t>(c - n_owned);
        for (std::int64_t t = b_ext.offsets[e]; t < b_ext.offsets[e + 1]; ++t)
          acc.emplace_back(b_ext.cols[static_cast<std::size_t>(t)], av * b_ext.vals[static_cast<std::size_t>(t)]);
      }
    }
    std::stable_sort(acc.begin(), acc.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    const GlobalIndex g_row = a.row_map().global_index(i);
    std::size_t j = 0;
    while (j < acc.size()) {
      GlobalIndex g = acc[j].first;
      Real v = acc[j].second;
      ++j;
      while (j < acc.size() && acc[j].first == g) {
        v += acc[j].second;
        ++j;
      }
      c_entries.push_back({g_row, g, v});
    }
  }
  return CsrMatrix::from_triplets(a.row_map(), b.domain_map(), std::move(c_entries));
}

CsrMatrix transpose(const CsrMatrix& a) {
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(a.local_nonzeros()));
  const LocalIndex n = a.local_rows();
  for (LocalIndex i = 0; i < n; ++i) {
    const GlobalIndex g_row = a.row_map().global_index(i);
    const auto cols = a.row_cols(i);
    const auto vals = a.row_vals(i);
    for (std::size_t j = 0; j < cols.size(); ++j) entries.push_back({a.col_global(cols[j]), g_row, vals[j]});
  }
  return CsrMatrix::from_triplets_distributed(a.domain_map(), a.row_map(), std::move(entries));
}

CsrMatrix add(const CsrMatrix& a, const CsrMatrix& b, Real alpha, Real beta) {
  TRELLIS_REQUIRE(a.row_map().same_as(b.row_map()), "add: row map mismatch");
  TRELLIS_REQUIRE(a.domain_map().same_as(b.domain_map()), "add: domain map mismatch");

  std::vector<Triplet> entries;
  const LocalIndex n = a.local_rows();
  for (LocalIndex i = 0; i < n; ++i) {
    const GlobalIndex g_row = a.row_map().global_index(i);
    for (std::size_t j = 0; j < a.row_cols(i).size(); ++j)
      entries.push_back({g_row, a.col_global(a.row_cols(i)[j]), alpha * a.row_vals(i)[j]});
    for (std::size_t j = 0; j < b.row_cols(i).size(); ++j)
      entries.push_back({g_row, b.col_global(b.row_cols(i)[j]), beta * b.row_vals(i)[j]});
  }
  return CsrMatrix::from_triplets(a.row_map(), a.domain_map(), std::move(entries));
}

MultiVector diagonal(const CsrMatrix& a) {
  MultiVector d(a.row_map(), 1);
  const LocalIndex n = a.local_rows();
  for (LocalIndex i = 0; i < n; ++i) {
    const GlobalIndex g = a.row_map().global_index(i);
    const LocalIndex lc = a.col_map().local_index(g);
    if (lc == Map::invalid_local) continue;
    const auto cols = a.row_cols(i);
    const auto vals = a.row_vals(i);
    const auto it = std::lower_bound(cols.begin(), cols.end(), lc);
    if (it != cols.end() && *it == lc) d.at(i) = vals[static_cast<std::size_t>(it - cols.begin())];
  }
  return d;
}

Real frobenius_norm(const CsrMatrix& a) {
  Real local = 0.0;
  for (LocalIndex i = 0; i < a.local_rows(); ++i)
    for (const Real v : a.row_vals(i)) local += v * v;
  return std::sqrt(a.row_map().ctx().all_reduce_scalar(local, ReduceOp::sum));
}

CsrMatrix scaled_rows(const CsrMatrix& a, const MultiVector& factors) {
  TRELLIS_REQUIRE(factors.map().same_as(a.row_map()), "scaled_rows: factor map mismatch");
  CsrMatrix m = a;
  for (LocalIndex i = 0; i < a.local_rows(); ++i) {
    const Real f = factors.at(i);
    for (std::int64_t j = m.offsets_[i]; j < m.offsets_[i + 1]; ++j) m.vals_[static_cast<std::size_t>(j)] *= f;
  }
  return m;
}

LocalCsr local_diagonal_block(const CsrMatrix& a) {
  TRELLIS_REQUIRE(a.row_map().same_as(a.domain_map()), "local block requires row map == domain map");
  LocalCsr block;
  block.n = a.local_rows();
  block.offsets.assign(static_cast<std::size_t>(block.n) + 1, 0);
  const LocalIndex n_owned = a.num_owned_cols();
  for (LocalIndex i = 0; i < block.n; ++i) {
    const auto cols = a.row_cols(i);
    const auto vals = a.row_vals(i);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j] < n_owned) {
        block.cols.push_back(cols[j]);
        block.vals.push_back(vals[j]);
      }
    }
    block.offsets[static_cast<std::size_t>(i) + 1] = static_cast<std::int64_t>(block.cols.size());
  }
  return block;
}

}  // namespace trellis
