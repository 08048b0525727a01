#pragma once

#include "trellis/csr_matrix.hpp"
#include "trellis/multivector.hpp"

#include <functional>
#include <memory>

namespace trellis {

/// Minimal operator contract the solvers are written against: a deterministic
/// action y = op(x) between two Maps. Concrete matrices, matrix-free closures,
/// and every preconditioner in the stack implement this.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;
  virtual void apply(const MultiVector& x, MultiVector& y) const = 0;
  virtual const Map& domain_map() const = 0;
  virtual const Map& range_map() const = 0;
};

/// y = A x for a concrete CSR matrix (does not own the matrix).
class MatrixOperator final : public LinearOperator {
 public:
  explicit MatrixOperator(const CsrMatrix& a) : a_(&a) {}
  void apply(const MultiVector& x, MultiVector& y) const override { spmv(*a_, x, y); }
  const Map& domain_map() const override { return a_->domain_map(); }
  const Map& range_map() const override { return a_->range_map(); }

 private:
  const CsrMatrix* a_;
};

class IdentityOperator final : public LinearOperator {
 public:
  explicit IdentityOperator(Map map) : map_(std::move(map)) {}
  void apply(const MultiVector& x, MultiVector& y) const override { y.local() = x.local(); }
  const Map& domain_map() const override { return map_; }
  const Map& range_map() const override { return map_; }

 private:
  Map map_;
};

/// Matrix-free operator around a closure.
class FunctionOperator final : public LinearOperator {
 public:
  using Fn = std::function<void(const MultiVector&, MultiVector&)>;
  FunctionOperator(Map domain, Map range, Fn fn)
      : domain_(std::move(domain)), range_(std::move(range)), fn_(std::move(fn)) {}
  void apply(const MultiVector& x, MultiVector& y) const override { fn_(x, y); }
  const Map& domain_map() const override { return domain_; }
  const Map& range_map() const override { return range_; }

 private:
  Map domain_;
  Map range_;
  Fn fn_;
};

}  // namespace trellis
