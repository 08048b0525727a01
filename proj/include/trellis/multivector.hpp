#pragma once

#include "trellis/map.hpp"

#include <span>
#include <vector>

namespace trellis {

/// Dense column block distributed by a Map: the local piece is an
/// n_local x k Eigen matrix. Single-writer mutation within a rank;
/// reductions (dot, norm2) are rank-collective.
class MultiVector {
 public:
  MultiVector() = default;
  MultiVector(Map map, int num_cols);

  const Map& map() const { return map_; }
  int num_cols() const { return static_cast<int>(local_.cols()); }
  LocalIndex local_rows() const { return static_cast<LocalIndex>(local_.rows()); }

  MatX& local() { return local_; }
  const MatX& local() const { return local_; }

  Real& at(LocalIndex i, int c = 0) { return local_(i, c); }
  Real at(LocalIndex i, int c = 0) const { return local_(i, c); }

  void set_constant(Real v) { local_.setConstant(v); }
  void set_zero() { local_.setZero(); }

 private:
  Map map_;
  MatX local_;
};

/// Column-wise global dot products x . y (k values, bitwise deterministic).
std::vector<Real> dot(const MultiVector& x, const MultiVector& y);
/// Column-wise global 2-norms.
std::vector<Real> norm2(const MultiVector& x);
Real dot1(const MultiVector& x, const MultiVector& y);
Real norm21(const MultiVector& x);

/// y <- alpha x + y
void axpy(Real alpha, const MultiVector& x, MultiVector& y);
void scale(MultiVector& x, Real alpha);
/// z = x .* y elementwise
MultiVector elementwise_multiply(const MultiVector& x, const MultiVector& y);

void require_same_shape(const MultiVector& x, const MultiVector& y, const char* what);

/// DistObject pack/unpack contract for multivectors: pack serializes the
/// selected local rows; unpack with insert restores exactly the packed
/// entries, unpack with add accumulates.
enum class CombineMode { insert, add };
Bytes pack_rows(const MultiVector& x, std::span<const LocalIndex> rows);
void unpack_rows(MultiVector& x, std::span<const LocalIndex> rows, const Bytes& buf, CombineMode mode);

}  // namespace trellis
