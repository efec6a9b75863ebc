#pragma once

// Exact rational scalars used for expression coefficients.
//
// Arithmetic is performed in 128-bit intermediates and reduced with gcd; any
// result whose reduced numerator or denominator leaves the 64-bit range throws
// instead of silently wrapping.  Coefficients in this project come from small
// integer literals, decimal literals, and differentiation (which multiplies by
// small integers), so overflow indicates a malformed input rather than a
// legitimate value.

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

namespace feedinv {

class OverflowError : public std::runtime_error {
 public:
  explicit OverflowError(const std::string& what) : std::runtime_error(what) {}
};

class Rational {
 public:
  constexpr Rational() : num_(0), den_(1) {}
  constexpr Rational(std::int64_t n) : num_(n), den_(1) {}  // NOLINT(google-explicit-constructor)

  Rational(std::int64_t n, std::int64_t d) {
    if (d == 0) throw std::invalid_argument("Rational: zero denominator");
    __int128 nn = n, dd = d;
    if (dd < 0) { nn = -nn; dd = -dd; }
    normalize_(nn, dd);
  }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }

  bool is_zero() const { return num_ == 0; }
  bool is_one() const { return num_ == 1 && den_ == 1; }
  bool is_integer() const { return den_ == 1; }
  int sign() const { return num_ > 0 ? 1 : num_ < 0 ? -1 : 0; }

  double to_double() const {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }

  friend Rational operator+(const Rational& a, const Rational& b) {
    __int128 n = (__int128)a.num_ * b.den_ + (__int128)b.num_ * a.den_;
    __int128 d = (__int128)a.den_ * b.den_;
    return make_(n, d);
  }
  friend Rational operator-(const Rational& a, const Rational& b) {
    __int128 n = (__int128)a.num_ * b.den_ - (__int128)b.num_ * a.den_;
    __int128 d = (__int128)a.den_ * b.den_;
    return make_(n, d);
  }
  friend Rational operator*(const Rational& a, const Rational& b) {
    return make_((__int128)a.num_ * b.num_, (__int128)a.den_ * b.den_);
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) throw std::domain_error("Rational: division by zero");
    return make_((__int128)a.num_ * b.den_, (__int128)a.den_ * b.num_);
  }
  Rational operator-() const { Rational r; r.num_ = -num_; r.den_ = den_; return r; }

  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  Rational& operator-=(const Rational& o) { return *this = *this - o; }
  Rational& operator*=(const Rational& o) { return *this = *this * o; }
  Rational& operator/=(const Rational& o) { return *this = *this / o; }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend bool operator!=(const Rational& a, const Rational& b) { return !(a == b); }
  friend bool operator<(const Rational& a, const Rational& b) {
    return (__int128)a.num_ * b.den_ < (__int128)b.num_ * a.den_;
  }

  Rational abs() const { return num_ < 0 ? -*this : *this; }

  // Exact integer power; exp may be negative for nonzero values.
  Rational pow(int exp) const {
    if (exp < 0) return Rational(1) / pow(-exp);
    Rational r(1), b(*this);
    for (int e = exp; e > 0; e >>= 1) {
      if (e & 1) r *= b;
      if (e > 1) b *= b;
    }
    return r;
  }

  std::string str() const {
    std::string s = std::to_string(num_);
    if (den_ != 1) s += "/" + std::to_string(den_);
    return s;
  }

 private:
  static Rational make_(__int128 n, __int128 d) {
    Rational r;
    if (d < 0) { n = -n; d = -d; }
    r.normalize_(n, d);
    return r;
  }

  void normalize_(__int128 n, __int128 d) {
    if (n == 0) { num_ = 0; den_ = 1; return; }
    __int128 an = n < 0 ? -n : n;
    __int128 g = gcd128_(an, d);
    n /= g;
    d /= g;
    constexpr __int128 lo = INT64_MIN, hi = INT64_MAX;
    if (n < lo || n > hi || d > hi)
      throw OverflowError("Rational: value exceeds 64-bit range after reduction");
    num_ = static_cast<std::int64_t>(n);
    den_ = static_cast<std::int64_t>(d);
  }

  static __int128 gcd128_(__int128 a, __int128 b) {
    while (b != 0) { __int128 t = a % b; a = b; b = t; }
    return a;
  }

  std::int64_t num_;
  std::int64_t den_;
};

inline std::int64_t gcd_i64(std::int64_t a, std::int64_t b) {
  return std::gcd(a, b);
}

}  // namespace feedinv
