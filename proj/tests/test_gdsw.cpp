#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/test_support.hpp"

#include "trellis/gdsw.hpp"
#include "trellis/krylov.hpp"

#include <Eigen/Dense>

using namespace trellis;
namespace tt = trellis::testing;

TEST_CASE("interface of a two-subdomain 1d bar is the boundary pair") {
  const auto ts = tt::poisson1d_triplets(9);
  launch(2, [&](CommContext& ctx) {
    // rank 0 owns 0..4, rank 1 owns 5..8.
    std::vector<GlobalIndex> mine;
    for (GlobalIndex g = 0; g < 9; ++g)
      if ((g <= 4) == (ctx.rank() == 0)) mine.push_back(g);
    Map map = Map::from_globals(9, mine, ctx);
    CsrMatrix a = CsrMatrix::from_triplets(map, map, tt::owned_triplets(map, ts));

    InterfaceClassification cls = identify_interface(a);
    REQUIRE(cls.nodes == std::vector<GlobalIndex>{4, 5});
    CHECK(cls.signatures[0] == std::vector<int>{0, 1});
    CHECK(cls.signatures[1] == std::vector<int>{0, 1});
    // Adjacent nodes of identical signature form one component named by the
    // lowest global index; size 2 and signature size 2 make it an edge.
    CHECK(cls.component_of == std::vector<GlobalIndex>{4, 4});
    REQUIRE(cls.component_ids == std::vector<GlobalIndex>{4});
    CHECK(cls.component_class[0] == InterfaceClass::edge);
  });
}

TEST_CASE("a single rank has no interface") {
  const auto ts = tt::poisson1d_triplets(7);
  launch(1, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 7, ts);
    InterfaceClassification cls = identify_interface(a);
    CHECK(cls.empty());
  });
}

TEST_CASE("empty subdomains are rejected") {
  const auto ts = tt::poisson1d_triplets(3);
  launch(4, [&](CommContext& ctx) {
    Map map = Map::contiguous(3, ctx);  // rank 3 owns nothing
    CsrMatrix a = CsrMatrix::from_triplets(map, map, tt::owned_triplets(map, ts));
    CHECK_THROWS_WITH_AS(identify_interface(a), doctest::Contains("empty subdomain"), Error);
  });
}

TEST_CASE("cross points of a 2x2 decomposition classify as vertices") {
  const GlobalIndex g = 9;
  const auto ts = tt::poisson2d_triplets(g, g);
  launch(4, [&](CommContext& ctx) {
    // Quadrant decomposition of the 9x9 grid.
    std::vector<GlobalIndex> mine;
    for (GlobalIndex iy = 0; iy < g; ++iy)
      for (GlobalIndex ix = 0; ix < g; ++ix) {
        const int owner = (ix >= 5 ? 1 : 0) + 2 * (iy >= 5 ? 1 : 0);
        if (owner == ctx.rank()) mine.push_back(iy * g + ix);
      }
    Map map = Map::from_globals(g * g, mine, ctx);
    CsrMatrix a = CsrMatrix::from_triplets(map, map, tt::owned_triplets(map, ts));
    InterfaceClassification cls = identify_interface(a);

    // The four nodes ringing the cross point have three adjacent subdomains
    // each (the five-point stencil has no diagonal coupling), and each forms
    // its own component: vertex class by the signature rule.
    int vertices = 0, edges = 0;
    for (std::size_t c = 0; c < cls.component_ids.size(); ++c)
      (cls.component_class[c] == InterfaceClass::vertex ? vertices : edges)++;
    CHECK(vertices == 4);
    CHECK(edges == 4);
    const GlobalIndex cross = 4 * g + 4;  // node (4,4)
    const std::size_t s = cls.index_of(cross);
    CHECK(cls.signatures[s].size() == 3);
    CHECK(cls.component_class[static_cast<std::size_t>(
              cls.component_column(cls.component_of[s]))] == InterfaceClass::vertex);
  });
}

TEST_CASE("harmonic extension of the 1d hat is piecewise linear") {
  const auto ts = tt::poisson1d_triplets(9);
  launch(2, [&](CommContext& ctx) {
    std::vector<GlobalIndex> mine;
    for (GlobalIndex g = 0; g < 9; ++g)
      if ((g <= 4) == (ctx.rank() == 0)) mine.push_back(g);
    Map map = Map::from_globals(9, mine, ctx);
    CsrMatrix a = CsrMatrix::from_triplets(map, map, tt::owned_triplets(map, ts));

    InterfaceClassification cls = identify_interface(a);
    CsrMatrix phi = build_coarse_basis(a, cls);
    REQUIRE(phi.domain_map().global_count() == 1);

    MatX dense = tt::gather_to_dense(phi);
    VecX expect(9);
    expect << 0.2, 0.4, 0.6, 0.8, 1.0, 1.0, 0.75, 0.5, 0.25;
    CHECK((dense.col(0) - expect).cwiseAbs().maxCoeff() <= 1e-12);
  });
}

TEST_CASE("zero interior-to-interface coupling extends by zero") {
  // 1d bar whose rank-0 interior is disconnected from the interface in
  // values (the pattern entry stays, with an explicit zero).
  auto ts = tt::poisson1d_triplets(6);
  for (Triplet& t : ts) {
    if ((t.row == 1 && t.col == 2) || (t.row == 2 && t.col == 1)) t.value = 0.0;
  }
  launch(2, [&](CommContext& ctx) {
    Map map = Map::contiguous(6, ctx);
    CsrMatrix a = CsrMatrix::from_triplets(map, map, tt::owned_triplets(map, ts));
    InterfaceClassification cls = identify_interface(a);
    REQUIRE(cls.nodes == std::vector<GlobalIndex>{2, 3});
    CsrMatrix phi = build_coarse_basis(a, cls);
    MatX dense = tt::gather_to_dense(phi);
    // Interior nodes 0,1 see zero coupling: their extension vanishes.
    CHECK(dense(0, 0) == 0.0);
    CHECK(dense(1, 0) == 0.0);
    CHECK(dense(2, 0) == 1.0);
    CHECK(dense(3, 0) == 1.0);
    CHECK(dense(4, 0) != 0.0);
  });
}

TEST_CASE("interface rows of the basis form a partition of unity") {
  const GlobalIndex g = 12;
  const auto ts = tt::poisson2d_triplets(g, g);
  launch(4, [&](CommContext& ctx) {
    std::vector<GlobalIndex> mine;
    for (GlobalIndex iy = 0; iy < g; ++iy)
      for (GlobalIndex ix = 0; ix < g; ++ix) {
        const int owner = (ix >= g / 2 ? 1 : 0) + 2 * (iy >= g / 2 ? 1 : 0);
        if (owner == ctx.rank()) mine.push_back(iy * g + ix);
      }
    Map map = Map::from_globals(g * g, mine, ctx);
    CsrMatrix a = CsrMatrix::from_triplets(map, map, tt::owned_triplets(map, ts));
    InterfaceClassification cls = identify_interface(a);
    CsrMatrix phi = build_coarse_basis(a, cls);
    MatX dense = tt::gather_to_dense(phi);
    for (GlobalIndex node : cls.nodes) CHECK(dense.row(node).sum() == doctest::Approx(1.0).epsilon(1e-14));
  });
}

TEST_CASE("coarse matrix is symmetric for symmetric problems") {
  const auto ts = tt::poisson2d_triplets(10, 10);
  launch(4, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 100, ts);
    SchwarzConfig first;
    first.overlap = 1;
    GdswPreconditioner prec(a, first);
    const MatX& a0 = prec.coarse_matrix();
    REQUIRE(prec.coarse_dim() > 0);
    CHECK((a0 - a0.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * a0.cwiseAbs().maxCoeff());
  });
}

TEST_CASE("coarse correction is exact on the coarse range") {
  const auto ts = tt::poisson2d_triplets(10, 10);
  launch(4, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 100, ts);
    SchwarzConfig first;
    first.overlap = 1;
    GdswPreconditioner prec(a, first);
    const CsrMatrix& phi = prec.basis();
    REQUIRE(prec.coarse_dim() > 0);

    MultiVector y(phi.domain_map(), 1);
    for (LocalIndex i = 0; i < y.local_rows(); ++i) y.at(i) = 1.0 + 0.3 * double(y.map().global_index(i));
    MultiVector t(a.row_map(), 1), r(a.row_map(), 1);
    spmv(phi, y, t);
    spmv(a, t, r);  // r = A Phi y

    MultiVector z(a.row_map(), 1);
    prec.apply_coarse(r, z);
    MultiVector resid(a.row_map(), 1);
    resid.local() = r.local();
    spmv(a, z, resid, -1.0, 1.0);

    // Projected residual: Phi' (r - A z) vanishes.
    MultiVector rc_before(phi.domain_map(), 1), rc_after(phi.domain_map(), 1);
    CsrMatrix phit = transpose(phi);
    spmv(phit, r, rc_before);
    spmv(phit, resid, rc_after);
    CHECK(norm21(rc_after) <= 1e-10 * norm21(rc_before));
    // For this construction the correction is exact in the full space too.
    CHECK(norm21(resid) <= 1e-10 * norm21(r));
  });
}

TEST_CASE("two-level apply maps zero to zero and is symmetric") {
  const auto ts = tt::poisson2d_triplets(10, 10);
  launch(4, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 100, ts);
    SchwarzConfig first;
    first.overlap = 1;
    first.combine = SchwarzCombine::additive;
    GdswPreconditioner prec(a, first);

    MultiVector zero(a.row_map(), 1), z(a.row_map(), 1);
    prec.apply(zero, z);
    CHECK(norm21(z) == 0.0);

    std::mt19937 gen(3);
    std::normal_distribution<Real> dist;
    VecX r(100), s(100);
    for (int i = 0; i < 100; ++i) {
      r(i) = dist(gen);
      s(i) = dist(gen);
    }
    auto apply_dense = [&](const VecX& in) -> VecX {
      MultiVector rv(a.row_map(), 1), zv(a.row_map(), 1);
      for (LocalIndex i = 0; i < a.row_map().local_count(); ++i) rv.at(i) = in(a.row_map().global_index(i));
      prec.apply(rv, zv);
      return tt::gather_to_dense(zv).col(0);
    };
    const Real rms = r.dot(apply_dense(s));
    const Real smr = s.dot(apply_dense(r));
    CHECK(std::abs(rms - smr) <= 1e-10 * std::abs(rms));
  });
}

TEST_CASE("single-subdomain gdsw degenerates to the exact solve") {
  const auto ts = tt::poisson1d_triplets(20);
  launch(1, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 20, ts);
    SchwarzConfig first;  // one subdomain: the local solve is exact
    GdswPreconditioner prec(a, first);
    CHECK(prec.coarse_dim() == 0);

    MatrixOperator op(a);
    MultiVector b(a.row_map(), 1), x(a.row_map(), 1);
    tt::fill_by_global(b);
    KrylovOptions opts;
    SolveReport rep = solve_cg(op, &prec, b, x, opts);
    CHECK(rep.converged);
    CHECK(rep.iterations == 1);
  });
}

TEST_CASE("the coarse space keeps iteration counts flat while one-level grows") {
  const GlobalIndex n = 256;
  const auto ts = tt::poisson1d_triplets(n);
  std::vector<int> one_level, two_level;
  for (int P : {4, 8, 16}) {
    auto counts = launch(P, [&](CommContext& ctx) {
      CsrMatrix a = tt::make_matrix(ctx, n, ts);
      MatrixOperator op(a);
      MultiVector b(a.row_map(), 1);
      tt::fill_by_global(b);
      KrylovOptions opts;
      opts.rtol = 1e-8;

      SchwarzConfig first;
      first.overlap = 1;
      first.combine = SchwarzCombine::additive;

      SchwarzPreconditioner one(a, first);
      MultiVector x1(a.row_map(), 1);
      SolveReport rep1 = solve_cg(op, &one, b, x1, opts);

      GdswPreconditioner two(a, first);
      MultiVector x2(a.row_map(), 1);
      SolveReport rep2 = solve_cg(op, &two, b, x2, opts);

      REQUIRE(rep1.converged);
      REQUIRE(rep2.converged);
      return std::pair<int, int>(rep1.iterations, rep2.iterations);
    });
    one_level.push_back(counts[0].first);
    two_level.push_back(counts[0].second);
  }
  CHECK(one_level[1] > one_level[0]);
  CHECK(one_level[2] > one_level[1]);
  const auto [lo, hi] = std::minmax_element(two_level.begin(), two_level.end());
  CHECK(static_cast<Real>(*hi) <= 1.5 * static_cast<Real>(*lo));
}
