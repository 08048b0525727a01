#include "trellis/amg.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>

namespace trellis {

namespace {

/// Filtered local adjacency: for each local row, the local column indices
/// that survive the drop test (diagonal excluded, off-rank columns excluded
/// since aggregation is rank-local).
std::vector<std::vector<LocalIndex>> filtered_local_graph(const CsrMatrix& a, Real drop_tol) {
  // Ghosted diagonal magnitudes for the drop test.
  MultiVector diag_ghosted(a.col_map(), 1);
  import_apply(a.column_importer(), diagonal(a), diag_ghosted, CombineMode::insert);

  const LocalIndex n = a.local_rows();
  const LocalIndex n_owned = a.num_owned_cols();
  std::vector<std::vector<LocalIndex>> graph(static_cast<std::size_t>(n));
  for (LocalIndex i = 0; i < n; ++i) {
    const auto cols = a.row_cols(i);
    const auto vals = a.row_vals(i);
    const Real dii = std::abs(diag_ghosted.at(a.col_map().local_index(a.row_map().global_index(i))));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const LocalIndex c = cols[j];
      if (c >= n_owned || c == i) continue;
      const Real djj = std::abs(diag_ghosted.at(c));
      if (std::abs(vals[j]) <= drop_tol * std::sqrt(dii * djj) || vals[j] == 0.0) continue;
      graph[static_cast<std::size_t>(i)].push_back(c);
    }
  }
  return graph;
}

MatX replicate_dense(const CsrMatrix& a) {
  std::vector<GlobalIndex> coords;
  std::vector<Real> entries;
  for (LocalIndex i = 0; i < a.local_rows(); ++i) {
    const GlobalIndex g = a.row_map().global_index(i);
    const auto cols = a.row_cols(i);
    const auto vals = a.row_vals(i);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      coords.push_back(g);
      coords.push_back(a.col_global(cols[j]));
      entries.push_back(vals[j]);
    }
  }
  const CommContext& ctx = a.row_map().ctx();
  auto all_coords = ctx.all_gather_values<GlobalIndex>(coords);
  auto all_entries = ctx.all_gather_values<Real>(entries);
  MatX m = MatX::Zero(a.row_map().global_count(), a.domain_map().global_count());
  for (std::size_t r = 0; r < all_coords.size(); ++r)
    for (std::size_t j = 0; j < all_entries[r].size(); ++j)
      m(all_coords[r][2 * j], all_coords[r][2 * j + 1]) += all_entries[r][j];
  return m;
}

}  // namespace

Aggregates aggregate(const CsrMatrix& a, Real drop_tol) {
  TRELLIS_REQUIRE(drop_tol >= 0.0, "aggregation drop tolerance must be >= 0");
  TRELLIS_REQUIRE(a.row_map().same_as(a.domain_map()), "aggregation requires row map == domain map");
  const auto graph = filtered_local_graph(a, drop_tol);
  const LocalIndex n = a.local_rows();

  Aggregates agg;
  agg.node_to_aggregate.assign(static_cast<std::size_t>(n), -1);

  // Sweep in ascending global index (local order may differ under a
  // permuted map).
  std::vector<LocalIndex> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](LocalIndex x, LocalIndex y) {
    return a.row_map().global_index(x) < a.row_map().global_index(y);
  });

  auto assign = [&](LocalIndex node, int id) {
    agg.node_to_aggregate[static_cast<std::size_t>(node)] = id;
    ++agg.sizes[static_cast<std::size_t>(id)];
  };

  // Phase 1: an unaggregated node with at least one unaggregated neighbor
  // roots a new aggregate and absorbs those neighbors.
  for (LocalIndex i : order) {
    if (agg.node_to_aggregate[static_cast<std::size_t>(i)] != -1) continue;
    bool any_free = false;
    for (LocalIndex nb : graph[static_cast<std::size_t>(i)])
      if (agg.node_to_aggregate[static_cast<std::size_t>(nb)] == -1) {
        any_free = true;
        break;
      }
    if (!any_free) continue;
    const int id = agg.count++;
    agg.root.push_back(i);
    agg.sizes.push_back(0);
    assign(i, id);
    for (LocalIndex nb : graph[static_cast<std::size_t>(i)])
      if (agg.node_to_aggregate[static_cast<std::size_t>(nb)] == -1) assign(nb, id);
  }

  // Phase 2: join the adjacent aggregate with the most connections.
  std::vector<std::pair<LocalIndex, int>> joins;
  for (LocalIndex i : order) {
    if (agg.node_to_aggregate[static_cast<std::size_t>(i)] != -1) continue;
    std::map<int, int> connections;
    for (LocalIndex nb : graph[static_cast<std::size_t>(i)]) {
      const int nb_agg = agg.node_to_aggregate[static_cast<std::size_t>(nb)];
      if (nb_agg != -1) ++connections[nb_agg];
    }
    int best = -1, best_count = 0;
    for (const auto& [id, cnt] : connections)
      if (cnt > best_count) {  // ties resolve to the lowest id via map order
        best = id;
        best_count = cnt;
      }
    if (best != -1) joins.emplace_back(i, best);
  }
  for (const auto& [i, id] : joins) assign(i, id);

  // Phase 3: isolated leftovers become singletons.
  for (LocalIndex i : order) {
    if (agg.node_to_aggregate[static_cast<std::size_t>(i)] != -1) continue;
    const int id = agg.count++;
    agg.root.push_back(i);
    agg.sizes.push_back(0);
    assign(i, id);
  }
  return agg;
}

CsrMatrix tentative_prolongator(const CsrMatrix& a, const Aggregates& agg, const MultiVector& nullspace,
                                MultiVector* coarse_nullspace) {
  TRELLIS_REQUIRE(nullspace.map().same_as(a.row_map()), "nullspace must live on the level row map");
  const int k = nullspace.num_cols();
  const CommContext& ctx = a.row_map().ctx();

  // Coarse numbering: aggregates are rank-local, so coarse indices are the
  // rank-prefix offsets of local aggregate counts (times k nullspace columns).
  const std::int64_t my_count = agg.count;
  auto counts = ctx.all_gather_values<std::int64_t>(std::span<const std::int64_t>(&my_count, 1));
  GlobalIndex my_offset = 0, total = 0;
  for (int r = 0; r < static_cast<int>(counts.size()); ++r) {
    if (r < ctx.rank()) my_offset += counts[static_cast<std::size_t>(r)][0];
    total += counts[static_cast<std::size_t>(r)][0];
  }
  std::vector<GlobalIndex> my_coarse(static_cast<std::size_t>(agg.count) * k);
  std::iota(my_coarse.begin(), my_coarse.end(), my_offset * k);
  Map coarse_map = Map::from_globals(total * k, std::move(my_coarse), ctx);

  // Group local rows per aggregate.
  std::vector<std::vector<LocalIndex>> members(static_cast<std::size_t>(agg.count));
  for (LocalIndex i = 0; i < a.local_rows(); ++i)
    members[static_cast<std::size_t>(agg.node_to_aggregate[static_cast<std::size_t>(i)])].push_back(i);

  if (coarse_nullspace) *coarse_nullspace = MultiVector(coarse_map, k);
  std::vector<Triplet> entries;
  for (int g = 0; g < agg.count; ++g) {
    const auto& rows = members[static_cast<std::size_t>(g)];
    const int s = static_cast<int>(rows.size());
    MatX block(s, k);
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < k; ++c) block(r, c) = nullspace.at(rows[static_cast<std::size_t>(r)], c);

    MatX q, rfac;
    if (k == 1) {
      const Real nrm = block.col(0).norm();
      TRELLIS_REQUIRE(nrm > 0.0, "rank-deficient nullspace on aggregate " + std::to_string(g));
      q = block / nrm;
      rfac = MatX::Constant(1, 1, nrm);
    } else {
      Eigen::HouseholderQR<MatX> qr(block);
      q = qr.householderQ() * MatX::Identity(s, k);
      rfac = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
      for (int c = 0; c < k; ++c) {
        TRELLIS_REQUIRE(std::abs(rfac(c, c)) > 1e-14, "rank-deficient nullspace on aggregate " + std::to_string(g));
        if (rfac(c, c) < 0.0) {  // fix signs so R has a positive diagonal
          rfac.row(c) *= -1.0;
          q.col(c) *= -1.0;
        }
      }
    }

    const GlobalIndex base = (my_offset + g) * k;
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < k; ++c)
        entries.push_back({a.row_map().global_index(rows[static_cast<std::size_t>(r)]), base + c, q(r, c)});
    if (coarse_nullspace)
      for (int rr = 0; rr < k; ++rr)
        for (int c = 0; c < k; ++c)
          coarse_nullspace->at(coarse_map.local_index(base + rr), c) = rfac(rr, c);
  }

  return CsrMatrix::from_triplets(a.row_map(), coarse_map, std::move(entries));
}

CsrMatrix smooth_prolongator(const CsrMatrix& a, const CsrMatrix& p_tent, Real damping) {
  if (damping == 0.0) return p_tent;
  const Real lambda = estimate_lambda_max(a, 10);
  TRELLIS_REQUIRE(lambda > 0.0, "prolongator smoothing needs a positive eigenvalue estimate");
  const Real omega = damping / lambda;

  MultiVector d = diagonal(a);
  MultiVector factors(a.row_map(), 1);
  for (LocalIndex i = 0; i < a.local_rows(); ++i) {
    TRELLIS_REQUIRE(d.at(i) != 0.0,
                    "zero diagonal entry at row " + std::to_string(a.row_map().global_index(i)));
    factors.at(i) = omega / d.at(i);
  }
  CsrMatrix ap = spgemm(a, p_tent);
  return add(p_tent, scaled_rows(ap, factors), 1.0, -1.0);
}

Hierarchy Hierarchy::setup(const CsrMatrix& a, const AmgOptions& opts) {
  TRELLIS_REQUIRE(opts.max_levels >= 1, "amg needs at least one level");
  Hierarchy h;
  CsrMatrix current = a;
  MultiVector nullspace(a.row_map(), 1);
  nullspace.set_constant(1.0);

  while (static_cast<int>(h.levels_.size()) + 1 < opts.max_levels &&
         current.row_map().global_count() > opts.coarse_size) {
    Aggregates agg = aggregate(current, opts.drop_tol);
    MultiVector coarse_ns;
    CsrMatrix p_tent = tentative_prolongator(current, agg, nullspace, &coarse_ns);
    const GlobalIndex coarse_dim = p_tent.domain_map().global_count();
    if (coarse_dim >= static_cast<GlobalIndex>(0.95 * static_cast<Real>(current.row_map().global_count()))) {
      h.stalled_ = true;
      if (current.row_map().ctx().rank() == 0)
        std::cerr << "amg: coarsening stalled at dimension " << current.row_map().global_count()
                  << " (next level would have " << coarse_dim << ")\n";
      break;
    }
    CsrMatrix p = smooth_prolongator(current, p_tent, opts.prolongator_damping);
    CsrMatrix r = transpose(p);
    CsrMatrix coarse = spgemm(r, spgemm(current, p));

    AmgLevel level;
    level.a = current;
    level.p = p;
    level.r = r;
    level.has_transfer = true;
    if (opts.smoother == "chebyshev") {
      level.use_chebyshev = true;
      level.chebyshev.degree = opts.chebyshev_degree;
      level.chebyshev.lambda_max = estimate_lambda_max(current, 10);
    } else if (opts.smoother == "jacobi") {
      level.relax = {RelaxKind::jacobi, opts.smoother_sweeps, 2.0 / 3.0};
    } else if (opts.smoother == "symmetric_gauss_seidel") {
      level.relax = {RelaxKind::gauss_seidel_symmetric, opts.smoother_sweeps, 1.0};
    } else {
      throw Error("unknown multigrid smoother \"" + opts.smoother + "\"");
    }
    h.levels_.push_back(std::move(level));

    current = coarse;
    nullspace = coarse_ns;
  }

  AmgLevel last;
  last.a = current;
  h.levels_.push_back(std::move(last));

  // Replicated coarse factorization, computed identically on every rank.
  h.coarse_dense_ = replicate_dense(h.levels_.back().a);
  h.coarse_lu_.compute(h.coarse_dense_);
  return h;
}

void Hierarchy::smooth(const AmgLevel& level, const MultiVector& b, MultiVector& x) const {
  if (level.use_chebyshev)
    chebyshev_apply(level.a, b, x, level.chebyshev);
  else
    relax_apply(level.a, b, x, level.relax);
}

void Hierarchy::coarse_solve(const MultiVector& b, MultiVector& x) const {
  const Map& map = b.map();
  const CommContext& ctx = map.ctx();

  std::vector<GlobalIndex> rows(map.globals().begin(), map.globals().end());
  std::vector<Real> vals;
  for (LocalIndex i = 0; i < b.local_rows(); ++i)
    for (int c = 0; c < b.num_cols(); ++c) vals.push_back(b.at(i, c));
  auto all_rows = ctx.all_gather_values<GlobalIndex>(rows);
  auto all_vals = ctx.all_gather_values<Real>(vals);

  MatX rhs = MatX::Zero(map.global_count(), b.num_cols());
  for (std::size_t r = 0; r < all_rows.size(); ++r)
    for (std::size_t i = 0; i < all_rows[r].size(); ++i)
      for (int c = 0; c < b.num_cols(); ++c)
        rhs(all_rows[r][i], c) = all_vals[r][i * static_cast<std::size_t>(b.num_cols()) + c];

  MatX sol = coarse_lu_.solve(rhs);
  for (LocalIndex i = 0; i < x.local_rows(); ++i)
    for (int c = 0; c < x.num_cols(); ++c) x.at(i, c) = sol(map.global_index(i), c);
}

void Hierarchy::cycle_level(std::size_t l, const MultiVector& b, MultiVector& x) const {
  const AmgLevel& level = levels_[l];
  if (!level.has_transfer) {
    coarse_solve(b, x);
    return;
  }

  smooth(level, b, x);  // pre-smooth from the zero initial guess

  MultiVector d(b.map(), b.num_cols());
  d.local() = b.local();
  spmv(level.a, x, d, -1.0, 1.0);  // d = b - A x

  MultiVector rc(level.r.row_map(), b.num_cols());
  spmv(level.r, d, rc);
  MultiVector zc(level.r.row_map(), b.num_cols());
  cycle_level(l + 1, rc, zc);
  spmv(level.p, zc, x, 1.0, 1.0);  // prolongate and correct

  smooth(level, b, x);  // post-smooth
}

void Hierarchy::vcycle(const MultiVector& r, MultiVector& z) const {
  TRELLIS_REQUIRE(r.map().same_as(levels_.front().a.row_map()), "vcycle: residual map mismatch");
  z.set_zero();
  cycle_level(0, r, z);
}

}  // namespace trellis
