#include "trellis/smoothers.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace trellis {

namespace {

/// Local diagonal values; throws naming the global row when one is zero.
VecX checked_inverse_diagonal(const CsrMatrix& a) {
  MultiVector d = diagonal(a);
  VecX inv(a.local_rows());
  for (LocalIndex i = 0; i < a.local_rows(); ++i) {
    const Real v = d.at(i);
    TRELLIS_REQUIRE(v != 0.0,
                    "zero diagonal entry at row " + std::to_string(a.row_map().global_index(i)));
    inv(i) = 1.0 / v;
  }
  return inv;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic centered pseudo-random entry per global index, so the start
/// vector is identical under any partition.
Real hash_entry(GlobalIndex g) {
  return static_cast<Real>(splitmix64(static_cast<std::uint64_t>(g)) >> 11) * 0x1.0p-53 - 0.5;
}

void gauss_seidel_sweep(const CsrMatrix& a, const MultiVector& b, MultiVector& x, Real omega, bool forward) {
  const VecX inv_diag = checked_inverse_diagonal(a);
  const LocalIndex n = a.local_rows();
  const int k = b.num_cols();

  // Ghost values are frozen at the start of the directional sweep; owned
  // values update in place as the sweep passes them.
  MultiVector work(a.col_map(), k);
  import_apply(a.column_importer(), x, work, CombineMode::insert);

  for (LocalIndex step = 0; step < n; ++step) {
    const LocalIndex i = forward ? step : n - 1 - step;
    const auto cols = a.row_cols(i);
    const auto vals = a.row_vals(i);
    for (int c = 0; c < k; ++c) {
      Real acc = 0.0;
      for (std::size_t j = 0; j < cols.size(); ++j) acc += vals[j] * work.at(cols[j], c);
      work.at(i, c) += omega * (b.at(i, c) - acc) * inv_diag(i);
    }
  }
  x.local() = work.local().topRows(n);
}

}  // namespace

void relax_apply(const CsrMatrix& a, const MultiVector& b, MultiVector& x, const RelaxationConfig& cfg) {
  TRELLIS_REQUIRE(a.row_map().same_as(a.domain_map()), "relaxation requires row map == domain map");
  require_same_shape(b, x, "relax_apply");
  TRELLIS_REQUIRE(cfg.sweeps >= 1, "relaxation needs at least one sweep");
  TRELLIS_REQUIRE(cfg.damping > 0.0, "relaxation damping must be positive");

  if (cfg.kind == RelaxKind::jacobi) {
    const VecX inv_diag = checked_inverse_diagonal(a);
    MultiVector r(b.map(), b.num_cols());
    for (int s = 0; s < cfg.sweeps; ++s) {
      r.local() = b.local();
      spmv(a, x, r, -1.0, 1.0);  // r = b - A x
      x.local() += cfg.damping * (inv_diag.asDiagonal() * r.local());
    }
    return;
  }

  for (int s = 0; s < cfg.sweeps; ++s) {
    switch (cfg.kind) {
      case RelaxKind::gauss_seidel_forward:
        gauss_seidel_sweep(a, b, x, cfg.damping, true);
        break;
      case RelaxKind::gauss_seidel_backward:
        gauss_seidel_sweep(a, b, x, cfg.damping, false);
        break;
      case RelaxKind::gauss_seidel_symmetric:
        gauss_seidel_sweep(a, b, x, cfg.damping, true);
        gauss_seidel_sweep(a, b, x, cfg.damping, false);
        break;
      case RelaxKind::jacobi:
        break;
    }
  }
}

Real estimate_lambda_max(const CsrMatrix& a, int iterations) {
  TRELLIS_REQUIRE(iterations >= 1, "power iteration needs at least one step");
  const VecX inv_diag = checked_inverse_diagonal(a);

  MultiVector v(a.row_map(), 1), w(a.row_map(), 1);
  for (LocalIndex i = 0; i < a.local_rows(); ++i) v.at(i) = hash_entry(a.row_map().global_index(i));
  Real nrm = norm21(v);
  if (nrm == 0.0) return 0.0;
  scale(v, 1.0 / nrm);

  Real lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    spmv(a, v, w);
    w.local() = inv_diag.asDiagonal() * w.local();
    lambda = dot1(v, w);  // Rayleigh quotient with ||v|| = 1
    nrm = norm21(w);
    if (nrm == 0.0) break;
    v.local() = w.local() / nrm;
  }
  return 1.1 * lambda;
}

void chebyshev_apply(const CsrMatrix& a, const MultiVector& b, MultiVector& x, const ChebyshevConfig& cfg) {
  TRELLIS_REQUIRE(cfg.degree >= 1, "chebyshev degree must be >= 1");
  TRELLIS_REQUIRE(cfg.lambda_max > 0.0, "chebyshev needs a positive lambda_max estimate");
  TRELLIS_REQUIRE(cfg.eigenvalue_ratio > 1.0, "chebyshev eigenvalue ratio must exceed 1");
  require_same_shape(b, x, "chebyshev_apply");

  const Real lmax = cfg.lambda_max;
  const Real lmin = cfg.lambda_max / cfg.eigenvalue_ratio;
  const Real theta = 0.5 * (lmax + lmin);
  const Real delta = 0.5 * (lmax - lmin);
  const Real sigma = theta / delta;
  const VecX inv_diag = checked_inverse_diagonal(a);

  MultiVector r(b.map(), b.num_cols()), d(b.map(), b.num_cols()), z(b.map(), b.num_cols());
  r.local() = b.local();
  spmv(a, x, r, -1.0, 1.0);  // r = b - A x
  d.local() = (inv_diag.asDiagonal() * r.local()) / theta;
  x.local() += d.local();

  Real rho_prev = 1.0 / sigma;
  for (int k = 2; k <= cfg.degree; ++k) {
    spmv(a, d, r, -1.0, 1.0);  // r -= A d
    z.local() = inv_diag.asDiagonal() * r.local();
    const Real rho = 1.0 / (2.0 * sigma - rho_prev);
    d.local() = (rho * rho_prev) * d.local() + (2.0 * rho / delta) * z.local();
    x.local() += d.local();
    rho_prev = rho;
  }
}

ChebyshevPreconditioner::ChebyshevPreconditioner(const CsrMatrix& a, int degree, Real eigenvalue_ratio,
                                                 int power_iterations)
    : a_(&a) {
  cfg_.degree = degree;
  cfg_.eigenvalue_ratio = eigenvalue_ratio;
  cfg_.lambda_max = estimate_lambda_max(a, power_iterations);
}

// ---------------------------------------------------------------------------
// ILU(k)

IluFactors ilu_factor(const LocalCsr& a, int fill_level) {
  TRELLIS_REQUIRE(fill_level >= 0, "ilu fill level must be >= 0");
  const LocalIndex n = a.n;

  Real fnorm = 0.0;
  for (Real v : a.vals) fnorm += v * v;
  fnorm = std::sqrt(fnorm);
  const Real pivot_tol = 1e-14 * fnorm;

  IluFactors f;
  f.fill_level = fill_level;
  f.n = n;
  f.offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  f.diag_pos.assign(static_cast<std::size_t>(n), -1);

  std::vector<Real> dense_row(static_cast<std::size_t>(n), 0.0);

  for (LocalIndex i = 0; i < n; ++i) {
    // Symbolic pass for row i: ordered working row of (column, level).
    std::map<LocalIndex, int> work;
    for (std::int64_t j = a.offsets[i]; j < a.offsets[i + 1]; ++j) {
      work[a.cols[static_cast<std::size_t>(j)]] = 0;
      dense_row[static_cast<std::size_t>(a.cols[static_cast<std::size_t>(j)])] +=
          a.vals[static_cast<std::size_t>(j)];  // duplicate columns sum
    }
    work.try_emplace(i, 0);  // keep a diagonal slot; a missing one pivots to zero below

    for (auto it = work.begin(); it != work.end() && it->first < i; ++it) {
      const LocalIndex piv = it->first;
      const int lev_ik = it->second;
      if (lev_ik > fill_level) continue;
      for (std::int64_t j = f.diag_pos[static_cast<std::size_t>(piv)] + 1;
           j < f.offsets[static_cast<std::size_t>(piv) + 1]; ++j) {
        const LocalIndex col = f.cols[static_cast<std::size_t>(j)];
        const int cand = lev_ik + f.levels[static_cast<std::size_t>(j)] + 1;
        auto found = work.find(col);
        if (found != work.end())
          found->second = std::min(found->second, cand);
        else if (cand <= fill_level)
          work.emplace(col, cand);
      }
    }

    // Freeze the kept pattern, then run the numeric update on it.
    for (const auto& [col, lev] : work) {
      if (lev > fill_level) {
        dense_row[static_cast<std::size_t>(col)] = 0.0;
        continue;
      }
      if (col == i) f.diag_pos[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(f.cols.size());
      f.cols.push_back(col);
      f.levels.push_back(lev);
      f.vals.push_back(0.0);  // filled below
    }
    f.offsets[static_cast<std::size_t>(i) + 1] = static_cast<std::int64_t>(f.cols.size());

    for (std::int64_t j = f.offsets[i]; j < f.offsets[i + 1]; ++j) {
      const LocalIndex col = f.cols[static_cast<std::size_t>(j)];
      if (col >= i) break;
      const Real u_kk = f.vals[static_cast<std::size_t>(f.diag_pos[static_cast<std::size_t>(col)])];
      const Real l_ik = dense_row[static_cast<std::size_t>(col)] / u_kk;
      dense_row[static_cast<std::size_t>(col)] = l_ik;
      for (std::int64_t t = f.diag_pos[static_cast<std::size_t>(col)] + 1;
           t < f.offsets[static_cast<std::size_t>(col) + 1]; ++t) {
        const LocalIndex uc = f.cols[static_cast<std::size_t>(t)];
        auto kept = work.find(uc);
        if (kept != work.end() && kept->second <= fill_level)
          dense_row[static_cast<std::size_t>(uc)] -= l_ik * f.vals[static_cast<std::size_t>(t)];
      }
    }

    for (std::int64_t j = f.offsets[i]; j < f.offsets[i + 1]; ++j) {
      const LocalIndex col = f.cols[static_cast<std::size_t>(j)];
      f.vals[static_cast<std::size_t>(j)] = dense_row[static_cast<std::size_t>(col)];
      dense_row[static_cast<std::size_t>(col)] = 0.0;
    }

    const Real pivot = f.vals[static_cast<std::size_t>(f.diag_pos[static_cast<std::size_t>(i)])];
    TRELLIS_REQUIRE(std::abs(pivot) > pivot_tol,
                    "ilu: zero or tiny pivot at local row " + std::to_string(i));
  }
  return f;
}

void ilu_solve(const IluFactors& f, const VecX& r, VecX& z) {
  TRELLIS_REQUIRE(r.size() == f.n, "ilu_solve: size mismatch");
  z = r;
  for (LocalIndex i = 0; i < f.n; ++i) {
    Real acc = z(i);
    for (std::int64_t j = f.offsets[i]; j < f.diag_pos[static_cast<std::size_t>(i)]; ++j)
      acc -= f.vals[static_cast<std::size_t>(j)] * z(f.cols[static_cast<std::size_t>(j)]);
    z(i) = acc;  // unit lower factor
  }
  for (LocalIndex step = 0; step < f.n; ++step) {
    const LocalIndex i = f.n - 1 - step;
    Real acc = z(i);
    for (std::int64_t j = f.diag_pos[static_cast<std::size_t>(i)] + 1; j < f.offsets[i + 1]; ++j)
      acc -= f.vals[static_cast<std::size_t>(j)] * z(f.cols[static_cast<std::size_t>(j)]);
    z(i) = acc / f.vals[static_cast<std::size_t>(f.diag_pos[static_cast<std::size_t>(i)])];
  }
}

Real ilu_residual_fnorm(const LocalCsr& a, const IluFactors& f) {
  const MatX ad = dense_from_local(a);
  MatX l = MatX::Identity(f.n, f.n);
  MatX u = MatX::Zero(f.n, f.n);
  for (LocalIndex i = 0; i < f.n; ++i) {
    for (std::int64_t j = f.offsets[i]; j < f.offsets[i + 1]; ++j) {
      const LocalIndex c = f.cols[static_cast<std::size_t>(j)];
      const Real v = f.vals[static_cast<std::size_t>(j)];
      if (c < i)
        l(i, c) = v;
      else
        u(i, c) = v;
    }
  }
  return (ad - l * u).norm();
}

MatX dense_from_local(const LocalCsr& a) {
  MatX m = MatX::Zero(a.n, a.n);
  for (LocalIndex i = 0; i < a.n; ++i)
    for (std::int64_t j = a.offsets[i]; j < a.offsets[i + 1]; ++j)
      m(i, a.cols[static_cast<std::size_t>(j)]) += a.vals[static_cast<std::size_t>(j)];
  return m;
}

// ---------------------------------------------------------------------------
// Overlapping Schwarz

std::vector<GlobalIndex> overlap_indices(const CsrMatrix& a, int overlap) {
  TRELLIS_REQUIRE(overlap >= 0, "schwarz overlap must be >= 0");
  // Graph distance is measured on the symmetrized pattern.
  const CsrMatrix sym = add(a, transpose(a), 0.5, 0.5);

  std::vector<GlobalIndex> members(sym.row_map().globals().begin(), sym.row_map().globals().end());
  std::unordered_map<GlobalIndex, bool> in_set;
  for (GlobalIndex g : members) in_set[g] = true;
  std::vector<GlobalIndex> frontier = members;

  for (int step = 0; step < overlap; ++step) {
    // Rows of the frontier: local where owned, fetched otherwise. Every rank
    // performs the same number of fetch rounds, keeping collectives matched.
    std::vector<GlobalIndex> offrank;
    for (GlobalIndex g : frontier)
      if (!sym.row_map().owns_global(g)) offrank.push_back(g);
    FetchedRows fetched = fetch_rows(sym, offrank);

    std::vector<GlobalIndex> next;
    auto visit = [&](GlobalIndex neighbor) {
      if (!in_set[neighbor]) {
        in_set[neighbor] = true;
        next.push_back(neighbor);
      }
    };
    std::size_t fetch_slot = 0;
    for (GlobalIndex g : frontier) {
      const LocalIndex lr = sym.row_map().local_index(g);
      if (lr != Map::invalid_local) {
        for (LocalIndex c : sym.row_cols(lr)) visit(sym.col_global(c));
      } else {
        for (std::int64_t j = fetched.offsets[fetch_slot]; j < fetched.offsets[fetch_slot + 1]; ++j)
          visit(fetched.cols[static_cast<std::size_t>(j)]);
        ++fetch_slot;
      }
    }
    std::sort(next.begin(), next.end());
    frontier = next;
    members.insert(members.end(), next.begin(), next.end());
  }

  // Owned rows keep their local order; halo rows follow sorted ascending.
  std::sort(members.begin() + sym.row_map().local_count(), members.end());
  return members;
}

LocalCsr restrict_to_indices(const CsrMatrix& a, std::span<const GlobalIndex> indices) {
  std::unordered_map<GlobalIndex, LocalIndex> position;
  for (std::size_t i = 0; i < indices.size(); ++i) position[indices[i]] = static_cast<LocalIndex>(i);

  std::vector<GlobalIndex> offrank;
  for (GlobalIndex g : indices)
    if (!a.row_map().owns_global(g)) offrank.push_back(g);
  FetchedRows fetched = fetch_rows(a, offrank);
  std::unordered_map<GlobalIndex, std::size_t> fetched_slot;
  for (std::size_t i = 0; i < fetched.row_globals.size(); ++i) fetched_slot[fetched.row_globals[i]] = i;

  LocalCsr block;
  block.n = static_cast<LocalIndex>(indices.size());
  block.offsets.assign(indices.size() + 1, 0);
  std::vector<std::pair<LocalIndex, Real>> row;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    row.clear();
    const GlobalIndex g = indices[i];
    const LocalIndex lr = a.row_map().local_index(g);
    if (lr != Map::invalid_local) {
      const auto cols = a.row_cols(lr);
      const auto vals = a.row_vals(lr);
      for (std::size_t j = 0; j < cols.size(); ++j) {
        auto it = position.find(a.col_global(cols[j]));
        if (it != position.end()) row.emplace_back(it->second, vals[j]);
      }
    } else {
      const std::size_t slot = fetched_slot.at(g);
      for (std::int64_t j = fetched.offsets[slot]; j < fetched.offsets[slot + 1]; ++j) {
        auto it = position.find(fetched.cols[static_cast<std::size_t>(j)]);
        if (it != position.end()) row.emplace_back(it->second, fetched.vals[static_cast<std::size_t>(j)]);
      }
    }
    std::sort(row.begin(), row.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    for (const auto& [c, v] : row) {
      block.cols.push_back(c);
      block.vals.push_back(v);
    }
    block.offsets[i + 1] = static_cast<std::int64_t>(block.cols.size());
  }
  return block;
}

SchwarzPreconditioner::SchwarzPreconditioner(const CsrMatrix& a, const SchwarzConfig& cfg) : a_(&a), cfg_(cfg) {
  TRELLIS_REQUIRE(a.row_map().same_as(a.domain_map()), "schwarz requires row map == domain map");
  std::vector<GlobalIndex> members = overlap_indices(a, cfg.overlap);
  overlap_map_ = Map::from_globals(a.row_map().global_count(), members, a.row_map().ctx());
  plan_ = ImportPlan(a.row_map(), overlap_map_);

  LocalCsr sub = restrict_to_indices(a, members);
  if (cfg.solver == SubdomainSolverKind::dense_lu) {
    dense_lu_.compute(dense_from_local(sub));
  } else {
    try {
      ilu_ = ilu_factor(sub, cfg.ilu_fill);
    } catch (const Error& e) {
      throw Error("schwarz subdomain solver failed on rank " + std::to_string(a.row_map().ctx().rank()) +
                  ": " + e.what());
    }
  }
}

void SchwarzPreconditioner::apply(const MultiVector& r, MultiVector& z) const {
  TRELLIS_REQUIRE(r.map().same_as(a_->row_map()), "schwarz apply: map mismatch");
  const int k = r.num_cols();
  MultiVector r_ov(overlap_map_, k), sol_ov(overlap_map_, k);
  import_apply(plan_, r, r_ov, CombineMode::insert);

  for (int c = 0; c < k; ++c) {
    VecX rhs = r_ov.local().col(c);
    if (cfg_.solver == SubdomainSolverKind::dense_lu) {
      sol_ov.local().col(c) = dense_lu_.solve(rhs);
    } else {
      VecX out(rhs.size());
      ilu_solve(*ilu_, rhs, out);
      sol_ov.local().col(c) = out;
    }
  }

  if (cfg_.combine == SchwarzCombine::additive) {
    z.set_zero();
    export_apply(plan_, sol_ov, z, CombineMode::add);
  } else {
    // Restricted additive: each owned row keeps its owner's contribution,
    // which sits in the owned prefix of the overlap layout.
    z.local() = sol_ov.local().topRows(a_->local_rows());
  }
}

IluPreconditioner::IluPreconditioner(const CsrMatrix& a, int fill_level) : a_(&a) {
  factors_ = ilu_factor(local_diagonal_block(a), fill_level);
}

void IluPreconditioner::apply(const MultiVector& r, MultiVector& z) const {
  TRELLIS_REQUIRE(r.map().same_as(a_->row_map()), "ilu apply: map mismatch");
  VecX out(r.local_rows());
  for (int c = 0; c < r.num_cols(); ++c) {
    VecX rhs = r.local().col(c);
    ilu_solve(factors_, rhs, out);
    z.local().col(c) = out;
  }
}

// ---------------------------------------------------------------------------
// 2x2 blocks

void block_precond_2x2(const BlockOperator2x2& op, BlockSolveKind kind, const MultiVector& r0,
                       const MultiVector& r1, MultiVector& z0, MultiVector& z1) {
  TRELLIS_REQUIRE(op.inv00 != nullptr && op.inv11 != nullptr,
                  "block_precond_2x2: missing diagonal-block inverse approximation");
  switch (kind) {
    case BlockSolveKind::block_jacobi:
      op.inv00->apply(r0, z0);
      op.inv11->apply(r1, z1);
      return;
    case BlockSolveKind::block_gauss_seidel: {
      op.inv00->apply(r0, z0);
      MultiVector t(r1.map(), r1.num_cols());
      if (op.a10) {
        op.a10->apply(z0, t);
        t.local() = r1.local() - t.local();
      } else {
        t.local() = r1.local();
      }
      op.inv11->apply(t, z1);
      return;
    }
    case BlockSolveKind::block_lu: {
      TRELLIS_REQUIRE(op.schur_inv != nullptr, "block_lu needs a Schur complement approximation");
      MultiVector y0(r0.map(), r0.num_cols());
      op.inv00->apply(r0, y0);
      MultiVector t1(r1.map(), r1.num_cols());
      if (op.a10) {
        op.a10->apply(y0, t1);
        t1.local() = r1.local() - t1.local();
      } else {
        t1.local() = r1.local();
      }
      op.schur_inv->apply(t1, z1);
      if (op.a01) {
        MultiVector t0(r0.map(), r0.num_cols()), c0(r0.map(), r0.num_cols());
        op.a01->apply(z1, t0);
        op.inv00->apply(t0, c0);
        z0.local() = y0.local() - c0.local();
      } else {
        z0.local() = y0.local();
      }
      return;
    }
  }
}

}  // namespace trellis
