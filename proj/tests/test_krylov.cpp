#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/test_support.hpp"

#include "trellis/krylov.hpp"

#include <Eigen/Dense>

#include <random>

using namespace trellis;
namespace tt = trellis::testing;

namespace {

MultiVector vec_of(const Map& map, std::initializer_list<Real> values) {
  MultiVector v(map, 1);
  for (LocalIndex i = 0; i < map.local_count(); ++i)
    v.at(i) = *(values.begin() + static_cast<std::size_t>(map.global_index(i)));
  return v;
}

}  // namespace

TEST_CASE("cg solves the 2x2 oracle system in at most two iterations") {
  launch(1, [](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 2, {{0, 0, 4}, {0, 1, 1}, {1, 0, 1}, {1, 1, 3}});
    MatrixOperator op(a);
    MultiVector b = vec_of(a.row_map(), {1.0, 2.0});
    MultiVector x(a.row_map(), 1);
    KrylovOptions opts;
    opts.rtol = 1e-13;
    SolveReport rep = solve_cg(op, nullptr, b, x, opts);
    CHECK(rep.converged);
    CHECK(rep.iterations <= 2);
    CHECK(std::abs(x.at(0) - 1.0 / 11.0) <= 1e-12);
    CHECK(std::abs(x.at(1) - 7.0 / 11.0) <= 1e-12);
    CHECK(rep.history.size() == static_cast<std::size_t>(rep.iterations) + 1);
  });
}

TEST_CASE("every solver converges in one iteration on the identity") {
  launch(2, [](CommContext& ctx) {
    Map map = Map::contiguous(8, ctx);
    std::vector<Triplet> eye;
    for (GlobalIndex g : map.globals()) eye.push_back({g, g, 1.0});
    CsrMatrix a = CsrMatrix::from_triplets(map, map, eye);
    MatrixOperator op(a);
    MultiVector b(map, 1);
    tt::fill_by_global(b);
    KrylovOptions opts;

    MultiVector x(map, 1);
    CHECK(solve_cg(op, nullptr, b, x, opts).iterations == 1);
    x.set_zero();
    CHECK(solve_gmres(op, nullptr, b, x, opts).iterations == 1);
    x.set_zero();
    CHECK(solve_bicgstab(op, nullptr, b, x, opts).iterations == 1);
    x.set_zero();
    IdentityOperator m(map);
    CHECK(solve_fixed_point(op, m, b, x, opts).iterations == 1);
  });
}

TEST_CASE("cg reports breakdown on an indefinite operator") {
  launch(1, [](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 2, {{0, 0, 1}, {1, 1, -1}});
    MatrixOperator op(a);
    MultiVector b = vec_of(a.row_map(), {1.0, 1.0});
    MultiVector x(a.row_map(), 1);
    SolveReport rep = solve_cg(op, nullptr, b, x, KrylovOptions{});
    CHECK(rep.status == SolveStatus::breakdown);
    CHECK_FALSE(rep.converged);
  });
}

TEST_CASE("cg error decreases monotonically in the A-norm") {
  const auto ts = tt::poisson1d_triplets(16);
  const MatX ad = tt::dense_from_triplets(16, 16, ts);
  launch(1, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 16, ts);
    MatrixOperator op(a);
    MultiVector b(a.row_map(), 1);
    tt::fill_by_global(b);
    VecX bd = tt::gather_to_dense(b).col(0);
    VecX exact = ad.fullPivLu().solve(bd);

    Real prev = std::numeric_limits<Real>::infinity();
    for (int k = 1; k <= 8; ++k) {
      MultiVector x(a.row_map(), 1);
      KrylovOptions opts;
      opts.max_iterations = k;
      opts.rtol = 1e-30;
      (void)solve_cg(op, nullptr, b, x, opts);
      VecX e = tt::gather_to_dense(x).col(0) - exact;
      const Real anorm = std::sqrt(e.dot(ad * e));
      CHECK(anorm < prev);
      prev = anorm;
    }
  });
}

TEST_CASE("gmres solves the rotation system") {
  launch(1, [](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 2, {{0, 1, 1}, {1, 0, -1}});
    MatrixOperator op(a);
    MultiVector b = vec_of(a.row_map(), {1.0, 0.0});
    MultiVector x(a.row_map(), 1);
    KrylovOptions opts;
    opts.rtol = 1e-12;
    SolveReport rep = solve_gmres(op, nullptr, b, x, opts);
    CHECK(rep.converged);
    CHECK(rep.iterations <= 2);
    CHECK(std::abs(x.at(0) - 0.0) <= 1e-12);
    CHECK(std::abs(x.at(1) - 1.0) <= 1e-12);
  });
}

TEST_CASE("gmres histories are monotone within a cycle; tight restarts stagnate") {
  const auto ts = tt::poisson2d_triplets(16, 16);
  launch(2, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 256, ts);
    MatrixOperator op(a);
    MultiVector b(a.row_map(), 1);
    tt::fill_by_global(b);

    KrylovOptions wide;
    wide.restart = 30;
    wide.rtol = 1e-6;
    wide.max_iterations = 120;
    MultiVector x1(a.row_map(), 1);
    SolveReport rep_wide = solve_gmres(op, nullptr, b, x1, wide);
    CHECK(rep_wide.converged);

    KrylovOptions tight = wide;
    tight.restart = 1;
    MultiVector x2(a.row_map(), 1);
    SolveReport rep_tight = solve_gmres(op, nullptr, b, x2, tight);
    CHECK_FALSE(rep_tight.converged);

    // Monotone nonincreasing residual estimates within each restart cycle.
    auto check_monotone = [](const SolveReport& rep, int m) {
      for (std::size_t i = 1; i < rep.history.size(); ++i) {
        const bool cycle_start = ((i - 1) % static_cast<std::size_t>(m)) == 0 && i > 1;
        if (!cycle_start) CHECK(rep.history[i] <= rep.history[i - 1] * (1.0 + 1e-12));
      }
    };
    check_monotone(rep_wide, wide.restart);
    check_monotone(rep_tight, tight.restart);
  });
}

TEST_CASE("flexible gmres tolerates an iteration-varying preconditioner") {
  const auto ts = tt::poisson2d_triplets(8, 8);
  launch(1, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 64, ts);
    MatrixOperator op(a);
    // A deliberately non-constant preconditioner: damped diagonal scaling
    // whose damping changes every application.
    int calls = 0;
    FunctionOperator m(a.row_map(), a.row_map(), [&](const MultiVector& r, MultiVector& z) {
      const Real w = 0.2 + 0.05 * (calls++ % 4);
      z.local() = w * r.local() / 4.0;
    });
    MultiVector b(a.row_map(), 1);
    tt::fill_by_global(b);
    MultiVector x(a.row_map(), 1);
    KrylovOptions opts;
    opts.flexible = true;
    opts.rtol = 1e-8;
    opts.max_iterations = 200;
    SolveReport rep = solve_gmres(op, &m, b, x, opts);
    CHECK(rep.converged);
    CHECK(rep.final_relative_residual <= 1e-7);
  });
}

TEST_CASE("bicgstab handles the nonsymmetric convection-diffusion system") {
  const auto ts = tt::convdiff2d_triplets(16, 16, 1.0, 0.4, 0.05);
  launch(2, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 256, ts);
    MatrixOperator op(a);
    MultiVector b(a.row_map(), 1);
    tt::fill_by_global(b);
    MultiVector x(a.row_map(), 1);
    KrylovOptions opts;
    opts.rtol = 1e-8;
    SolveReport rep = solve_bicgstab(op, nullptr, b, x, opts);
    CHECK(rep.converged);
    for (Real h : rep.history) CHECK(std::isfinite(h));

    // Residual recomputed as ||b - A x|| against the report.
    MultiVector r(a.row_map(), 1);
    r.local() = b.local();
    spmv(a, x, r, -1.0, 1.0);
    CHECK(norm21(r) / norm21(b) <= opts.rtol * 10);
  });
}

TEST_CASE("bicgstab with zero right-hand side returns zero in zero iterations") {
  launch(1, [](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 4, tt::poisson1d_triplets(4));
    MatrixOperator op(a);
    MultiVector b(a.row_map(), 1), x(a.row_map(), 1);
    x.set_constant(5.0);
    SolveReport rep = solve_bicgstab(op, nullptr, b, x, KrylovOptions{});
    CHECK(rep.converged);
    CHECK(rep.iterations == 0);
    CHECK(norm21(x) == 0.0);
  });
}

TEST_CASE("pseudo-block cg: duplicated columns match the single solve") {
  const auto ts = tt::poisson1d_triplets(24);
  launch(2, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 24, ts);
    MatrixOperator op(a);
    MultiVector b1(a.row_map(), 1);
    tt::fill_by_global(b1);
    MultiVector x1(a.row_map(), 1);
    KrylovOptions opts;
    SolveReport single = solve_cg(op, nullptr, b1, x1, opts);

    MultiVector b2(a.row_map(), 2), x2(a.row_map(), 2);
    b2.local().col(0) = b1.local().col(0);
    b2.local().col(1) = b1.local().col(0);
    SolveReport both = solve_pseudo_block_cg(op, nullptr, b2, x2, opts);

    CHECK(both.converged);
    CHECK((x2.local().col(0) - x1.local().col(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((x2.local().col(1) - x1.local().col(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(both.per_rhs[0].iterations == single.iterations);
  });
}

TEST_CASE("pseudo-block cg with k=1 reproduces solve_cg exactly") {
  const auto ts = tt::poisson2d_triplets(6, 6);
  launch(1, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 36, ts);
    MatrixOperator op(a);
    MultiVector b(a.row_map(), 1);
    tt::fill_by_global(b);
    MultiVector xa(a.row_map(), 1), xb(a.row_map(), 1);
    SolveReport ra = solve_cg(op, nullptr, b, xa, KrylovOptions{});
    SolveReport rb = solve_pseudo_block_cg(op, nullptr, b, xb, KrylovOptions{});
    CHECK(ra.history == rb.history);
    CHECK((xa.local() - xb.local()).cwiseAbs().maxCoeff() == 0.0);
  });
}

TEST_CASE("pseudo-block cg freezes columns at their own convergence points") {
  launch(1, [](CommContext& ctx) {
    // Two decoupled blocks with very different conditioning: column 0 excites
    // only the well-conditioned block, column 1 the ill-conditioned one.
    std::vector<Triplet> ts;
    const GlobalIndex n = 32;
    auto block = tt::poisson1d_triplets(16);
    for (const Triplet& t : block) {
      ts.push_back(t);
      ts.push_back({t.row + 16, t.col + 16, t.value * (t.row == t.col ? 1.0 : 0.999)});
    }
    CsrMatrix a = tt::make_matrix(ctx, n, ts);
    MatrixOperator op(a);

    MultiVector b(a.row_map(), 2);
    for (LocalIndex i = 0; i < a.local_rows(); ++i) {
      const GlobalIndex g = a.row_map().global_index(i);
      if (g < 16) b.at(i, 0) = std::sin(double(g) + 1.0);
      if (g >= 16) b.at(i, 1) = std::cos(double(g));
    }
    KrylovOptions opts;
    opts.rtol = 1e-10;
    MultiVector x(a.row_map(), 2);
    SolveReport rep = solve_pseudo_block_cg(op, nullptr, b, x, opts);
    CHECK(rep.converged);

    // Independent single solves per column land on the same counts.
    for (int c = 0; c < 2; ++c) {
      MultiVector bc(a.row_map(), 1), xc(a.row_map(), 1);
      bc.local().col(0) = b.local().col(c);
      SolveReport solo = solve_cg(op, nullptr, bc, xc, opts);
      CHECK(solo.iterations == rep.per_rhs[static_cast<std::size_t>(c)].iterations);
      CHECK((xc.local().col(0) - x.local().col(c)).cwiseAbs().maxCoeff() == 0.0);
    }
  });
}

TEST_CASE("fixed point with the exact inverse converges in one iteration") {
  const auto ts = tt::random_triplets(12, 321);
  const MatX ad = tt::dense_from_triplets(12, 12, ts);
  launch(1, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 12, ts);
    MatrixOperator op(a);
    const Eigen::PartialPivLU<MatX> lu(ad);
    FunctionOperator minv(a.row_map(), a.row_map(), [&](const MultiVector& r, MultiVector& z) {
      z.local() = lu.solve(r.local());
    });
    MultiVector b(a.row_map(), 1);
    tt::fill_by_global(b);
    MultiVector x(a.row_map(), 1);
    SolveReport rep = solve_fixed_point(op, minv, b, x, KrylovOptions{});
    CHECK(rep.converged);
    CHECK(rep.iterations == 1);
  });
}

TEST_CASE("fixed point with jacobi preconditioner matches the richardson oracle") {
  launch(1, [](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 3, {{0, 0, 4}, {0, 1, 1}, {1, 0, 1}, {1, 1, 5}, {1, 2, 2}, {2, 1, 2}, {2, 2, 6}});
    MatX ad = tt::gather_to_dense(a);
    MatrixOperator op(a);
    FunctionOperator jacobi(a.row_map(), a.row_map(), [&](const MultiVector& r, MultiVector& z) {
      for (LocalIndex i = 0; i < 3; ++i) z.at(i) = r.at(i) / ad(i, i);
    });
    MultiVector b = vec_of(a.row_map(), {1.0, 2.0, 3.0});
    MultiVector x(a.row_map(), 1);
    KrylovOptions opts;
    opts.rtol = 1e-10;
    SolveReport rep = solve_fixed_point(op, jacobi, b, x, opts);
    CHECK(rep.converged);

    // Hand-rolled Richardson iteration with the same splitting.
    VecX xd = VecX::Zero(3), bd(3);
    bd << 1, 2, 3;
    for (int k = 0; k < rep.iterations; ++k) {
      VecX r = bd - ad * xd;
      for (int i = 0; i < 3; ++i) xd(i) += r(i) / ad(i, i);
    }
    for (LocalIndex i = 0; i < 3; ++i) CHECK(x.at(i) == doctest::Approx(xd(i)).epsilon(1e-14));
  });
}

TEST_CASE("fixed point with a zero preconditioner makes no progress") {
  launch(1, [](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 4, tt::poisson1d_triplets(4));
    MatrixOperator op(a);
    FunctionOperator zero(a.row_map(), a.row_map(), [](const MultiVector&, MultiVector& z) { z.set_zero(); });
    MultiVector b(a.row_map(), 1);
    b.set_constant(1.0);
    MultiVector x(a.row_map(), 1);
    KrylovOptions opts;
    opts.max_iterations = 25;
    SolveReport rep = solve_fixed_point(op, zero, b, x, opts);
    CHECK_FALSE(rep.converged);
    CHECK(rep.status == SolveStatus::max_iterations);
    CHECK(rep.history.front() == rep.history.back());
  });
}

TEST_CASE("solvers through a matrix-free operator reproduce the concrete path bitwise") {
  const auto ts = tt::poisson2d_triplets(8, 8);
  launch(2, [&](CommContext& ctx) {
    CsrMatrix a = tt::make_matrix(ctx, 64, ts);
    MatrixOperator concrete(a);
    FunctionOperator wrapped(a.domain_map(), a.range_map(),
                             [&](const MultiVector& x, MultiVector& y) { spmv(a, x, y); });
    MultiVector b(a.row_map(), 1);
    tt::fill_by_global(b);

    MultiVector x1(a.row_map(), 1), x2(a.row_map(), 1);
    SolveReport r1 = solve_cg(concrete, nullptr, b, x1, KrylovOptions{});
    SolveReport r2 = solve_cg(wrapped, nullptr, b, x2, KrylovOptions{});
    CHECK(r1.history == r2.history);
    CHECK((x1.local() - x2.local()).cwiseAbs().maxCoeff() == 0.0);

    x1.set_zero();
    x2.set_zero();
    SolveReport g1 = solve_gmres(concrete, nullptr, b, x1, KrylovOptions{});
    SolveReport g2 = solve_gmres(wrapped, nullptr, b, x2, KrylovOptions{});
    CHECK(g1.history == g2.history);
    CHECK((x1.local() - x2.local()).cwiseAbs().maxCoeff() == 0.0);
  });
}

TEST_CASE("orthonormalize against an empty basis returns the norm") {
  launch(1, [](CommContext& ctx) {
    Map map = Map::contiguous(5, ctx);
    MultiVector w(map, 1);
    w.at(0) = 3.0;
    w.at(4) = 4.0;
    OrthoResult res = orthonormalize({}, w, OrthoKind::icgs);
    CHECK(res.coefficients.size() == 0);
    CHECK(res.norm == doctest::Approx(5.0));
    CHECK_FALSE(res.dependent);
    CHECK(norm21(w) == doctest::Approx(1.0));
  });
}

TEST_CASE("orthonormalize signals dependence for a vector in the span") {
  launch(1, [](CommContext& ctx) {
    Map map = Map::contiguous(6, ctx);
    MultiVector v(map, 1);
    tt::fill_by_global(v);
    std::vector<MultiVector> basis;
    OrthoResult first = orthonormalize(basis, v, OrthoKind::icgs);
    REQUIRE_FALSE(first.dependent);
    basis.push_back(v);

    MultiVector w(map, 1);
    w.local() = 2.5 * basis[0].local();
    for (OrthoKind kind : {OrthoKind::icgs, OrthoKind::dgks, OrthoKind::imgs}) {
      MultiVector copy = w;
      OrthoResult res = orthonormalize(basis, copy, kind);
      CHECK(res.dependent);
    }
  });
}

TEST_CASE("all orthogonalization kinds survive 20 nearly dependent vectors") {
  // Condition ~1e8 via prescribed singular values.
  const int n = 100, m = 20;
  std::mt19937 gen(2024);
  std::normal_distribution<Real> dist;
  MatX u_raw(n, m), w_raw(m, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) u_raw(i, j) = dist(gen);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) w_raw(i, j) = dist(gen);
  const MatX u = Eigen::HouseholderQR<MatX>(u_raw).householderQ() * MatX::Identity(n, m);
  const MatX w = Eigen::HouseholderQR<MatX>(w_raw).householderQ() * MatX::Identity(m, m);
  VecX sv(m);
  for (int j = 0; j < m; ++j) sv(j) = std::pow(10.0, -8.0 * j / (m - 1));
  const MatX v = u * sv.asDiagonal() * w.transpose();

  launch(1, [&](CommContext& ctx) {
    Map map = Map::contiguous(n, ctx);
    for (OrthoKind kind : {OrthoKind::icgs, OrthoKind::dgks, OrthoKind::imgs}) {
      std::vector<MultiVector> basis;
      for (int j = 0; j < m; ++j) {
        MultiVector col(map, 1);
        col.local().col(0) = v.col(j);
        OrthoResult res = orthonormalize(basis, col, kind);
        REQUIRE_FALSE(res.dependent);
        basis.push_back(col);
      }
      MatX q(n, m);
      for (int j = 0; j < m; ++j) q.col(j) = basis[static_cast<std::size_t>(j)].local().col(0);
      const MatX gram = q.transpose() * q - MatX::Identity(m, m);
      CHECK(gram.cwiseAbs().maxCoeff() <= 1e-12);
    }
  });
}

TEST_CASE("krylov options parse from a parameter list") {
  ParameterList p = ParameterList::from_text(
      R"({"rtol":1e-10,"max iterations":50,"restart":7,"orthogonalization":"imgs","flexible":true})");
  KrylovOptions opts = krylov_options_from(p);
  CHECK(opts.rtol == 1e-10);
  CHECK(opts.max_iterations == 50);
  CHECK(opts.restart == 7);
  CHECK(opts.ortho == OrthoKind::imgs);
  CHECK(opts.flexible);
  CHECK(p.unused_entries().empty());

  ParameterList bad = ParameterList::from_text(R"({"orthogonalization":"qr"})");
  CHECK_THROWS_AS(krylov_options_from(bad), Error);
}
