#include "trellis/krylov.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace trellis {

namespace {

constexpr Real kDgksKappa = 0.7071067811865476;  // 1/sqrt(2)
constexpr Real kDependenceTol = 1e-14;
constexpr Real kBreakdownTol = 1e-30;

void apply_or_copy(const LinearOperator* m, const MultiVector& r, MultiVector& z) {
  if (m)
    m->apply(r, z);
  else
    z.local() = r.local();
}

/// Explicit residual ||b - A x|| / ||b|| per column.
std::vector<Real> explicit_relative_residual(const LinearOperator& a, const MultiVector& b, const MultiVector& x,
                                             const std::vector<Real>& normb) {
  MultiVector r(b.map(), b.num_cols());
  a.apply(x, r);
  r.local() = b.local() - r.local();
  std::vector<Real> res = norm2(r);
  for (std::size_t c = 0; c < res.size(); ++c) res[c] /= normb[c];
  return res;
}

std::vector<Real> guarded_norms(const MultiVector& b) {
  std::vector<Real> n = norm2(b);
  for (Real& v : n)
    if (v == 0.0) v = 1.0;
  return n;
}

}  // namespace

KrylovOptions krylov_options_from(const ParameterList& params) {
  KrylovOptions opts;
  opts.rtol = params.get_or_default("rtol", opts.rtol);
  opts.max_iterations = static_cast<int>(params.get_or_default("max iterations", std::int64_t{opts.max_iterations}));
  opts.restart = static_cast<int>(params.get_or_default("restart", std::int64_t{opts.restart}));
  opts.flexible = params.get_or_default("flexible", opts.flexible);
  const std::string ortho = params.get_or_default("orthogonalization", "icgs");
  if (ortho == "icgs")
    opts.ortho = OrthoKind::icgs;
  else if (ortho == "dgks")
    opts.ortho = OrthoKind::dgks;
  else if (ortho == "imgs")
    opts.ortho = OrthoKind::imgs;
  else
    throw Error("unknown orthogonalization \"" + ortho + "\" (expected icgs, dgks, or imgs)");
  return opts;
}

OrthoResult orthonormalize(const std::vector<MultiVector>& basis, MultiVector& w, OrthoKind kind) {
  TRELLIS_REQUIRE(w.num_cols() == 1, "orthonormalize works on single-column vectors");
  const std::size_t m = basis.size();
  OrthoResult out;
  out.coefficients = VecX::Zero(static_cast<Eigen::Index>(m));
  const Real initial_norm = norm21(w);

  // One batched reduction per classical pass keeps collective counts low and
  // results bitwise deterministic.
  auto classical_pass = [&](bool accumulate) {
    if (m == 0) return;
    std::vector<Real> local(m);
    for (std::size_t j = 0; j < m; ++j) local[j] = basis[j].local().col(0).dot(w.local().col(0));
    std::vector<Real> proj = w.map().ctx().all_reduce(local, ReduceOp::sum);
    for (std::size_t j = 0; j < m; ++j) {
      w.local() -= proj[j] * basis[j].local();
      if (accumulate) out.coefficients(static_cast<Eigen::Index>(j)) += proj[j];
    }
  };
  auto modified_sweep = [&] {
    for (std::size_t j = 0; j < m; ++j) {
      const Real proj = dot1(basis[j], w);
      w.local() -= proj * basis[j].local();
      out.coefficients(static_cast<Eigen::Index>(j)) += proj;
    }
  };

  switch (kind) {
    case OrthoKind::icgs:
      classical_pass(true);
      classical_pass(true);
      break;
    case OrthoKind::dgks: {
      classical_pass(true);
      const Real after = norm21(w);
      if (after < kDgksKappa * initial_norm) classical_pass(true);
      break;
    }
    case OrthoKind::imgs:
      modified_sweep();
      modified_sweep();
      break;
  }

  out.norm = norm21(w);
  if (out.norm < kDependenceTol * initial_norm || initial_norm == 0.0) {
    out.dependent = true;
    return out;
  }
  scale(w, 1.0 / out.norm);
  return out;
}

namespace {

/// Shared CG core: k recurrences in lockstep over k-column multivectors.
/// Frozen (converged or broken-down) columns skip their updates but stay in
/// the aggregated reductions so the collective schedule is uniform.
SolveReport cg_core(const LinearOperator& a, const LinearOperator* m, const MultiVector& b, MultiVector& x,
                    const KrylovOptions& opts) {
  require_same_shape(b, x, "cg");
  const int k = b.num_cols();
  SolveReport report;
  report.per_rhs.resize(static_cast<std::size_t>(k));

  const std::vector<Real> raw_normb = norm2(b);
  std::vector<Real> normb = raw_normb;
  for (Real& v : normb)
    if (v == 0.0) v = 1.0;

  MultiVector r(b.map(), k), z(b.map(), k), p(b.map(), k), q(b.map(), k);
  a.apply(x, r);
  r.local() = b.local() - r.local();
  apply_or_copy(m, r, z);
  p.local() = z.local();
  std::vector<Real> rz = dot(r, z);
  std::vector<Real> res = norm2(r);

  std::vector<bool> frozen(static_cast<std::size_t>(k), false);
  int active = k;
  for (int c = 0; c < k; ++c) {
    auto& rhs = report.per_rhs[static_cast<std::size_t>(c)];
    const Real rel = res[c] / normb[c];
    rhs.history.push_back(rel);
    if (raw_normb[c] == 0.0) {
      // Zero right-hand side: the solution is zero, no iterations needed.
      x.local().col(c).setZero();
      rhs.status = SolveStatus::converged;
      rhs.converged = true;
      rhs.final_relative_residual = 0.0;
      frozen[static_cast<std::size_t>(c)] = true;
      --active;
    } else if (rel <= opts.rtol) {
      rhs.status = SolveStatus::converged;
      rhs.converged = true;
      rhs.final_relative_residual = rel;
      frozen[static_cast<std::size_t>(c)] = true;
      --active;
    }
  }
  Real worst0 = 0.0;
  for (const auto& rhs : report.per_rhs) worst0 = std::max(worst0, rhs.history.back());
  report.history.push_back(worst0);

  int it = 0;
  while (active > 0 && it < opts.max_iterations) {
    ++it;
    a.apply(p, q);
    const std::vector<Real> pq = dot(p, q);
    for (int c = 0; c < k; ++c) {
      if (frozen[static_cast<std::size_t>(c)]) continue;
      auto& rhs = report.per_rhs[static_cast<std::size_t>(c)];
      if (pq[c] <= 0.0) {
        rhs.status = SolveStatus::breakdown;
        rhs.iterations = it;
        rhs.final_relative_residual = res[c] / normb[c];
        report.message = "cg breakdown: p'Ap <= 0 at iteration " + std::to_string(it) +
                         " (operator not positive definite)";
        frozen[static_cast<std::size_t>(c)] = true;
        --active;
        continue;
      }
      const Real alpha = rz[c] / pq[c];
      x.local().col(c) += alpha * p.local().col(c);
      r.local().col(c) -= alpha * q.local().col(c);
    }
    res = norm2(r);
    for (int c = 0; c < k; ++c) {
      auto& rhs = report.per_rhs[static_cast<std::size_t>(c)];
      if (frozen[static_cast<std::size_t>(c)]) continue;
      const Real rel = res[c] / normb[c];
      rhs.history.push_back(rel);
      if (rel <= opts.rtol) {
        rhs.status = SolveStatus::converged;
        rhs.converged = true;
        rhs.iterations = it;
        rhs.final_relative_residual = rel;
        frozen[static_cast<std::size_t>(c)] = true;
        --active;
      }
    }
    Real worst = 0.0;
    for (const auto& rhs : report.per_rhs) worst = std::max(worst, rhs.history.back());
    report.history.push_back(worst);
    if (active == 0) break;

    apply_or_copy(m, r, z);
    const std::vector<Real> rz_new = dot(r, z);
    for (int c = 0; c < k; ++c) {
      if (frozen[static_cast<std::size_t>(c)]) continue;
      const Real beta = rz_new[c] / rz[c];
      p.local().col(c) = z.local().col(c) + beta * p.local().col(c);
    }
    rz = rz_new;
  }

  // Explicit residual recomputation at declared convergence; a mismatch
  // beyond 10x the tolerance is reported as false convergence.
  const std::vector<Real> explicit_res = explicit_relative_residual(a, b, x, normb);
  report.iterations = it;
  bool all_converged = true;
  for (int c = 0; c < k; ++c) {
    auto& rhs = report.per_rhs[static_cast<std::size_t>(c)];
    if (rhs.converged && explicit_res[c] > 10.0 * opts.rtol && raw_normb[c] != 0.0) {
      rhs.status = SolveStatus::false_convergence;
      rhs.converged = false;
    }
    if (rhs.converged) rhs.final_relative_residual = raw_normb[c] == 0.0 ? 0.0 : explicit_res[c];
    if (!rhs.converged && rhs.status == SolveStatus::max_iterations) {
      rhs.iterations = it;
      rhs.final_relative_residual = rhs.history.back();
    }
    all_converged = all_converged && rhs.converged;
  }
  report.converged = all_converged;
  report.final_relative_residual = *std::max_element(explicit_res.begin(), explicit_res.end());
  if (all_converged) {
    report.status = SolveStatus::converged;
  } else {
    report.status = SolveStatus::max_iterations;
    for (const auto& rhs : report.per_rhs) {
      if (rhs.status == SolveStatus::breakdown) report.status = SolveStatus::breakdown;
      if (rhs.status == SolveStatus::false_convergence && report.status != SolveStatus::breakdown)
        report.status = SolveStatus::false_convergence;
    }
  }
  return report;
}

}  // namespace

SolveReport solve_cg(const LinearOperator& a, const LinearOperator* m, const MultiVector& b, MultiVector& x,
                     const KrylovOptions& opts) {
  TRELLIS_REQUIRE(b.num_cols() == 1, "solve_cg expects one right-hand side; use solve_pseudo_block_cg");
  return cg_core(a, m, b, x, opts);
}

SolveReport solve_pseudo_block_cg(const LinearOperator& a, const LinearOperator* m, const MultiVector& b,
                                  MultiVector& x, const KrylovOptions& opts) {
  return cg_core(a, m, b, x, opts);
}

SolveReport solve_gmres(const LinearOperator& a, const LinearOperator* m, const MultiVector& b, MultiVector& x,
                        const KrylovOptions& opts) {
  require_same_shape(b, x, "gmres");
  TRELLIS_REQUIRE(b.num_cols() == 1, "solve_gmres expects one right-hand side");
  TRELLIS_REQUIRE(opts.restart >= 1, "gmres restart length must be >= 1");

  SolveReport report;
  const Real raw_normb = norm21(b);
  const Real normb = raw_normb == 0.0 ? 1.0 : raw_normb;
  if (raw_normb == 0.0) {
    x.set_zero();
    report.status = SolveStatus::converged;
    report.converged = true;
    report.history = {0.0};
    return report;
  }

  const int mdim = opts.restart;
  MatX hess = MatX::Zero(mdim + 1, mdim);
  VecX givens_c = VecX::Zero(mdim), givens_s = VecX::Zero(mdim), g = VecX::Zero(mdim + 1);
  std::vector<MultiVector> basis;      // Arnoldi vectors
  std::vector<MultiVector> prec_basis; // flexible variant: preconditioned vectors

  MultiVector r(b.map(), 1), w(b.map(), 1), z(b.map(), 1);
  a.apply(x, r);
  r.local() = b.local() - r.local();
  Real beta = norm21(r);
  report.history.push_back(beta / normb);
  if (beta / normb <= opts.rtol) {
    report.status = SolveStatus::converged;
    report.converged = true;
    report.final_relative_residual = beta / normb;
    return report;
  }

  int total_iters = 0;
  Real operator_scale = 0.0;

  auto update_solution = [&](int stages) {
    // Back-substitute the triangularized Hessenberg system, then expand.
    VecX y = hess.topLeftCorner(stages, stages).triangularView<Eigen::Upper>().solve(g.head(stages));
    if (opts.flexible) {
      for (int j = 0; j < stages; ++j) x.local() += y(j) * prec_basis[static_cast<std::size_t>(j)].local();
    } else {
      MultiVector combo(b.map(), 1);
      for (int j = 0; j < stages; ++j) combo.local() += y(j) * basis[static_cast<std::size_t>(j)].local();
      apply_or_copy(m, combo, z);
      x.local() += z.local();
    }
  };

  while (total_iters < opts.max_iterations) {
    basis.clear();
    prec_basis.clear();
    hess.setZero();
    g.setZero();
    g(0) = beta;
    MultiVector v0 = r;
    scale(v0, 1.0 / beta);
    basis.push_back(std::move(v0));

    int stages = 0;
    for (int j = 0; j < mdim && total_iters < opts.max_iterations; ++j) {
      apply_or_copy(m, basis[static_cast<std::size_t>(j)], z);
      if (opts.flexible) prec_basis.push_back(z);
      a.apply(z, w);
      operator_scale = std::max(operator_scale, norm21(w));

      OrthoResult ortho = orthonormalize(basis, w, opts.ortho);
      hess.col(j).head(j + 1) = ortho.coefficients;
      hess(j + 1, j) = ortho.norm;

      for (int i = 0; i < j; ++i) {
        const Real t = givens_c(i) * hess(i, j) + givens_s(i) * hess(i + 1, j);
        hess(i + 1, j) = -givens_s(i) * hess(i, j) + givens_c(i) * hess(i + 1, j);
        hess(i, j) = t;
      }
      const Real denom = std::hypot(hess(j, j), hess(j + 1, j));
      givens_c(j) = denom == 0.0 ? 1.0 : hess(j, j) / denom;
      givens_s(j) = denom == 0.0 ? 0.0 : hess(j + 1, j) / denom;
      hess(j, j) = denom;
      hess(j + 1, j) = 0.0;
      g(j + 1) = -givens_s(j) * g(j);
      g(j) = givens_c(j) * g(j);

      ++total_iters;
      ++stages;
      const Real est = std::abs(g(j + 1)) / normb;
      report.history.push_back(est);

      // Happy breakdown: the Krylov space became invariant, so the
      // least-squares solution is exact.
      const bool happy = ortho.dependent || ortho.norm <= kDependenceTol * operator_scale;
      if (est <= opts.rtol || happy) {
        update_solution(stages);
        report.iterations = total_iters;
        const Real exact = explicit_relative_residual(a, b, x, {normb})[0];
        report.final_relative_residual = exact;
        if (exact <= 10.0 * opts.rtol) {
          report.status = SolveStatus::converged;
          report.converged = true;
        } else {
          report.status = SolveStatus::false_convergence;
          report.message = "gmres: implicit residual converged but explicit residual is " + std::to_string(exact);
        }
        return report;
      }
      basis.push_back(w);
    }

    update_solution(stages);
    a.apply(x, r);
    r.local() = b.local() - r.local();
    beta = norm21(r);
    if (beta / normb <= opts.rtol) {
      report.iterations = total_iters;
      report.final_relative_residual = beta / normb;
      report.status = SolveStatus::converged;
      report.converged = true;
      return report;
    }
  }

  report.iterations = total_iters;
  report.final_relative_residual = beta / normb;
  report.status = SolveStatus::max_iterations;
  return report;
}

SolveReport solve_bicgstab(const LinearOperator& a, const LinearOperator* m, const MultiVector& b, MultiVector& x,
                           const KrylovOptions& opts) {
  require_same_shape(b, x, "bicgstab");
  TRELLIS_REQUIRE(b.num_cols() == 1, "solve_bicgstab expects one right-hand side");

  SolveReport report;
  const Real raw_normb = norm21(b);
  const Real normb = raw_normb == 0.0 ? 1.0 : raw_normb;
  if (raw_normb == 0.0) {
    x.set_zero();
    report.status = SolveStatus::converged;
    report.converged = true;
    report.history = {0.0};
    return report;
  }

  MultiVector r(b.map(), 1), rhat(b.map(), 1), p(b.map(), 1), v(b.map(), 1), s(b.map(), 1), t(b.map(), 1);
  MultiVector phat(b.map(), 1), shat(b.map(), 1);
  a.apply(x, r);
  r.local() = b.local() - r.local();
  rhat.local() = r.local();
  Real rho = 1.0, alpha = 1.0, omega = 1.0;

  Real res = norm21(r);
  report.history.push_back(res / normb);
  if (res / normb <= opts.rtol) {
    report.status = SolveStatus::converged;
    report.converged = true;
    report.final_relative_residual = res / normb;
    return report;
  }

  auto breakdown = [&](const char* what, int it) {
    report.status = SolveStatus::breakdown;
    report.iterations = it;
    report.final_relative_residual = norm21(r) / normb;
    report.message = std::string("bicgstab breakdown: ") + what + " at iteration " + std::to_string(it);
    return report;
  };
  auto finish = [&](int it, Real implied) {
    report.iterations = it;
    const Real exact = explicit_relative_residual(a, b, x, {normb})[0];
    report.final_relative_residual = exact;
    if (exact <= 10.0 * opts.rtol) {
      report.status = SolveStatus::converged;
      report.converged = true;
    } else {
      report.status = SolveStatus::false_convergence;
      report.message = "bicgstab: recurrence residual " + std::to_string(implied) +
                       " but explicit residual " + std::to_string(exact);
    }
    return report;
  };

  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Real rho1 = dot1(rhat, r);
    if (std::abs(rho1) < kBreakdownTol) return breakdown("rho ~ 0", it);
    if (it == 1) {
      p.local() = r.local();
    } else {
      const Real beta = (rho1 / rho) * (alpha / omega);
      p.local() = r.local() + beta * (p.local() - omega * v.local());
    }
    apply_or_copy(m, p, phat);
    a.apply(phat, v);
    const Real gamma = dot1(rhat, v);
    if (std::abs(gamma) < kBreakdownTol) return breakdown("rhat'v ~ 0", it);
    alpha = rho1 / gamma;
    s.local() = r.local() - alpha * v.local();

    const Real snorm = norm21(s);
    if (snorm / normb <= opts.rtol) {
      x.local() += alpha * phat.local();
      report.history.push_back(snorm / normb);
      return finish(it, snorm / normb);
    }

    apply_or_copy(m, s, shat);
    a.apply(shat, t);
    const std::vector<Real> tt_ts = dot(t, t);
    const Real ts = dot1(t, s);
    if (tt_ts[0] == 0.0) return breakdown("t't = 0", it);
    omega = ts / tt_ts[0];
    if (std::abs(omega) < kBreakdownTol) return breakdown("omega ~ 0", it);

    x.local() += alpha * phat.local() + omega * shat.local();
    r.local() = s.local() - omega * t.local();
    rho = rho1;

    res = norm21(r);
    report.history.push_back(res / normb);
    if (res / normb <= opts.rtol) return finish(it, res / normb);
  }

  report.iterations = opts.max_iterations;
  report.final_relative_residual = report.history.back();
  report.status = SolveStatus::max_iterations;
  return report;
}

SolveReport solve_fixed_point(const LinearOperator& a, const LinearOperator& m, const MultiVector& b,
                              MultiVector& x, const KrylovOptions& opts) {
  require_same_shape(b, x, "fixed_point");
  SolveReport report;
  const Real raw_normb = norm21(b);
  const Real normb = raw_normb == 0.0 ? 1.0 : raw_normb;

  MultiVector r(b.map(), b.num_cols()), z(b.map(), b.num_cols());
  a.apply(x, r);
  r.local() = b.local() - r.local();
  Real res = norm21(r);
  const Real initial = res;
  report.history.push_back(res / normb);
  if (res / normb <= opts.rtol) {
    report.status = SolveStatus::converged;
    report.converged = true;
    report.final_relative_residual = res / normb;
    return report;
  }

  for (int it = 1; it <= opts.max_iterations; ++it) {
    m.apply(r, z);
    x.local() += z.local();
    a.apply(x, r);
    r.local() = b.local() - r.local();
    res = norm21(r);
    report.history.push_back(res / normb);
    report.iterations = it;
    if (res / normb <= opts.rtol) {
      report.status = SolveStatus::converged;
      report.converged = true;
      report.final_relative_residual = res / normb;
      return report;
    }
    if (res > 1e6 * initial) {
      report.status = SolveStatus::diverged;
      report.final_relative_residual = res / normb;
      report.message = "fixed-point iteration diverged (residual grew by more than 1e6)";
      return report;
    }
  }
  report.status = SolveStatus::max_iterations;
  report.final_relative_residual = res / normb;
  return report;
}

}  // namespace trellis
