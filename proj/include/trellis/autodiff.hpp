#pragma once

#include "trellis/common.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace trellis {

/// Forward-mode dual number with a dynamic derivative dimension chosen at
/// seeding time. Dimensions up to 4 live inline; larger ones spill to the
/// heap. A dimension-0 dual acts as a scalar against any operand. Evaluating
/// with all-zero seeds reproduces the plain-real value channel bitwise.
class Dual {
 public:
  Dual() = default;
  Dual(Real v) : v_(v) {}
  Dual(Real v, int dim) : v_(v) { resize(dim); }

  /// Value v with derivative seed e_index in `dim` components.
  static Dual seeded(Real v, int dim, int index) {
    Dual d(v, dim);
    d.deriv(index) = 1.0;
    return d;
  }

  Real value() const { return v_; }
  int dim() const { return m_; }

  Real deriv(int i) const { return i < kInline ? small_[static_cast<std::size_t>(i)] : heap_[static_cast<std::size_t>(i)]; }
  Real& deriv(int i) { return i < kInline ? small_[static_cast<std::size_t>(i)] : heap_[static_cast<std::size_t>(i)]; }

  friend Dual operator+(const Dual& a, const Dual& b) {
    return combine(a, b, a.v_ + b.v_, [](Real da, Real db, Real, Real) { return da + db; });
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    return combine(a, b, a.v_ - b.v_, [](Real da, Real db, Real, Real) { return da - db; });
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    return combine(a, b, a.v_ * b.v_, [&](Real da, Real db, Real av, Real bv) { return da * bv + av * db; });
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    TRELLIS_REQUIRE(b.v_ != 0.0, "dual division by zero value");
    return combine(a, b, a.v_ / b.v_,
                   [&](Real da, Real db, Real av, Real bv) { return (da * bv - av * db) / (bv * bv); });
  }
  friend Dual operator-(const Dual& a) {
    Dual out(-a.v_, a.m_);
    for (int i = 0; i < a.m_; ++i) out.deriv(i) = -a.deriv(i);
    return out;
  }

  Dual& operator+=(const Dual& b) { return *this = *this + b; }
  Dual& operator-=(const Dual& b) { return *this = *this - b; }
  Dual& operator*=(const Dual& b) { return *this = *this * b; }
  Dual& operator/=(const Dual& b) { return *this = *this / b; }

 private:
  static constexpr int kInline = 4;

  void resize(int dim) {
    TRELLIS_REQUIRE(dim >= 0, "dual dimension must be nonnegative");
    m_ = dim;
    if (dim > kInline) heap_.assign(static_cast<std::size_t>(dim), 0.0);
  }

  /// Derivative combination with scalar promotion: a dimension-0 operand is
  /// a constant whose derivative contribution is zero.
  template <typename Rule>
  static Dual combine(const Dual& a, const Dual& b, Real value, Rule rule) {
    const int m = a.m_ != 0 ? a.m_ : b.m_;
    TRELLIS_REQUIRE(a.m_ == b.m_ || a.m_ == 0 || b.m_ == 0,
                    "dual dimension mismatch: " + std::to_string(a.m_) + " vs " + std::to_string(b.m_));
    Dual out(value, m);
    for (int i = 0; i < m; ++i) out.deriv(i) = rule(a.m_ ? a.deriv(i) : 0.0, b.m_ ? b.deriv(i) : 0.0, a.v_, b.v_);
    return out;
  }

  template <typename Fp>
  friend Dual chain(const Dual& a, Real value, Fp fprime) {
    Dual out(value, a.m_);
    for (int i = 0; i < a.m_; ++i) out.deriv(i) = fprime * a.deriv(i);
    return out;
  }

  Real v_ = 0.0;
  int m_ = 0;
  std::array<Real, kInline> small_{};
  std::vector<Real> heap_;
};

inline Dual sin(const Dual& a) { return chain(a, std::sin(a.value()), std::cos(a.value())); }
inline Dual cos(const Dual& a) { return chain(a, std::cos(a.value()), -std::sin(a.value())); }
inline Dual exp(const Dual& a) {
  const Real e = std::exp(a.value());
  return chain(a, e, e);
}
inline Dual log(const Dual& a) {
  TRELLIS_REQUIRE(a.value() > 0.0, "dual log requires a positive value");
  return chain(a, std::log(a.value()), 1.0 / a.value());
}
inline Dual sqrt(const Dual& a) {
  TRELLIS_REQUIRE(a.value() > 0.0, "dual sqrt requires a positive value for differentiability");
  const Real s = std::sqrt(a.value());
  return chain(a, s, 0.5 / s);
}
inline Dual pow(const Dual& a, Real p) {
  if (a.value() == 0.0) TRELLIS_REQUIRE(p >= 1.0, "dual pow at zero requires exponent >= 1");
  if (a.value() < 0.0)
    TRELLIS_REQUIRE(p == std::round(p), "dual pow of a negative value requires an integer exponent");
  const Real fp = p == 0.0 ? 0.0 : p * std::pow(a.value(), p - 1.0);
  return chain(a, std::pow(a.value(), p), fp);
}

/// Residual-style function of n dual inputs producing outputs in place.
using DualFunction = std::function<void(std::span<const Dual>, std::span<Dual>)>;

/// Dense Jacobian by forward seeding: one evaluation with m = n and
/// d_i = e_i; row i, column j holds d output_i / d x_j.
inline MatX jacobian(const DualFunction& f, std::span<const Real> x, int n_out) {
  const int n = static_cast<int>(x.size());
  std::vector<Dual> in;
  in.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) in.push_back(Dual::seeded(x[static_cast<std::size_t>(i)], n, i));
  std::vector<Dual> out(static_cast<std::size_t>(n_out), Dual(0.0, n));
  f(in, out);
  MatX jac(n_out, n);
  for (int i = 0; i < n_out; ++i)
    for (int j = 0; j < n; ++j) jac(i, j) = out[static_cast<std::size_t>(i)].deriv(j);
  return jac;
}

/// Jacobian-vector product via one dimension-1 sweep seeded with v.
inline VecX directional_derivative(const DualFunction& f, std::span<const Real> x, std::span<const Real> v,
                                   int n_out) {
  const int n = static_cast<int>(x.size());
  std::vector<Dual> in;
  in.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Dual d(x[static_cast<std::size_t>(i)], 1);
    d.deriv(0) = v[static_cast<std::size_t>(i)];
    in.push_back(d);
  }
  std::vector<Dual> out(static_cast<std::size_t>(n_out), Dual(0.0, 1));
  f(in, out);
  VecX jv(n_out);
  for (int i = 0; i < n_out; ++i) jv(i) = out[static_cast<std::size_t>(i)].deriv(0);
  return jv;
}

}  // namespace trellis
