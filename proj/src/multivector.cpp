#include "trellis/multivector.hpp"

#include <cmath>

namespace trellis {

MultiVector::MultiVector(Map map, int num_cols) : map_(std::move(map)) {
  TRELLIS_REQUIRE(num_cols >= 1, "multivector needs at least one column");
  local_.setZero(map_.local_count(), num_cols);
}

void require_same_shape(const MultiVector& x, const MultiVector& y, const char* what) {
  TRELLIS_REQUIRE(x.map().same_as(y.map()), std::string(what) + ": map mismatch");
  TRELLIS_REQUIRE(x.num_cols() == y.num_cols(), std::string(what) + ": column count mismatch");
}

std::vector<Real> dot(const MultiVector& x, const MultiVector& y) {
  require_same_shape(x, y, "dot");
  const int k = x.num_cols();
  std::vector<Real> local(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) local[static_cast<std::size_t>(c)] = x.local().col(c).dot(y.local().col(c));
  return x.map().ctx().all_reduce(local, ReduceOp::sum);
}

std::vector<Real> norm2(const MultiVector& x) {
  std::vector<Real> sq = dot(x, x);
  for (Real& v : sq) v = std::sqrt(v);
  return sq;
}

Real dot1(const MultiVector& x, const MultiVector& y) { return dot(x, y)[0]; }
Real norm21(const MultiVector& x) { return norm2(x)[0]; }

void axpy(Real alpha, const MultiVector& x, MultiVector& y) {
  require_same_shape(x, y, "axpy");
  y.local() += alpha * x.local();
}

void scale(MultiVector& x, Real alpha) { x.local() *= alpha; }

MultiVector elementwise_multiply(const MultiVector& x, const MultiVector& y) {
  require_same_shape(x, y, "elementwise_multiply");
  MultiVector z(x.map(), x.num_cols());
  z.local() = x.local().cwiseProduct(y.local());
  return z;
}

Bytes pack_rows(const MultiVector& x, std::span<const LocalIndex> rows) {
  Bytes buf;
  const int k = x.num_cols();
  put<std::uint64_t>(buf, rows.size());
  put<std::int32_t>(buf, k);
  for (LocalIndex r : rows)
    for (int c = 0; c < k; ++c) put<Real>(buf, x.at(r, c));
  return buf;
}

void unpack_rows(MultiVector& x, std::span<const LocalIndex> rows, const Bytes& buf, CombineMode mode) {
  ByteReader reader(buf);
  const auto n = reader.get<std::uint64_t>();
  const auto k = reader.get<std::int32_t>();
  TRELLIS_REQUIRE(n == rows.size(), "unpack_rows: row count mismatch");
  TRELLIS_REQUIRE(k == x.num_cols(), "unpack_rows: column count mismatch");
  for (LocalIndex r : rows) {
    for (int c = 0; c < k; ++c) {
      const Real v = reader.get<Real>();
      if (mode == CombineMode::insert)
        x.at(r, c) = v;
      else
        x.at(r, c) += v;
    }
  }
}

}  // namespace trellis
