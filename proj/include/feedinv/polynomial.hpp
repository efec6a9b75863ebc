#pragma once

// Sparse multivariate polynomials with exact rational coefficients.
//
// This is internal scratch for canonicalization: variables are small integer
// ids handed out by the simplifier (base variables, jet coordinates, free
// symbols, and opaque elementary-function atoms all become ids).  Terms are
// kept sorted in graded-lexicographic order, leading term first, which makes
// equality, addition, and exact-division tests straightforward.

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include "feedinv/rational.hpp"

namespace feedinv {

using VarId = int;

// Exponent vector, sorted by variable id, exponents strictly positive.
struct Monomial {
  std::vector<std::pair<VarId, int>> v;

  int degree() const {
    int d = 0;
    for (auto& [_, e] : v) d += e;
    return d;
  }

  bool empty() const { return v.empty(); }

  // Graded-lex: higher total degree first; ties broken by giving lower ids
  // higher significance (id 0 is the "largest" variable).
  static int compare(const Monomial& a, const Monomial& b) {
    const int da = a.degree(), db = b.degree();
    if (da != db) return da < db ? -1 : 1;
    std::size_t i = 0, j = 0;
    while (i < a.v.size() && j < b.v.size()) {
      if (a.v[i].first != b.v[j].first) {
        // The monomial that *has* the lower id is lexicographically larger.
        return a.v[i].first < b.v[j].first ? 1 : -1;
      }
      if (a.v[i].second != b.v[j].second)
        return a.v[i].second > b.v[j].second ? 1 : -1;
      ++i; ++j;
    }
    if (i < a.v.size()) return 1;
    if (j < b.v.size()) return -1;
    return 0;
  }

  friend bool operator==(const Monomial& a, const Monomial& b) { return a.v == b.v; }

  static Monomial mul(const Monomial& a, const Monomial& b) {
    Monomial r;
    r.v.reserve(a.v.size() + b.v.size());
    std::size_t i = 0, j = 0;
    while (i < a.v.size() && j < b.v.size()) {
      if (a.v[i].first == b.v[j].first) {
        r.v.emplace_back(a.v[i].first, a.v[i].second + b.v[j].second);
        ++i; ++j;
      } else if (a.v[i].first < b.v[j].first) {
        r.v.push_back(a.v[i++]);
      } else {
        r.v.push_back(b.v[j++]);
      }
    }
    while (i < a.v.size()) r.v.push_back(a.v[i++]);
    while (j < b.v.size()) r.v.push_back(b.v[j++]);
    return r;
  }

  // a / b if every exponent of b is covered by a.
  static std::optional<Monomial> try_div(const Monomial& a, const Monomial& b) {
    Monomial r;
    std::size_t i = 0;
    for (auto& [vb, eb] : b.v) {
      while (i < a.v.size() && a.v[i].first < vb) r.v.push_back(a.v[i++]);
      if (i >= a.v.size() || a.v[i].first != vb || a.v[i].second < eb)
        return std::nullopt;
      if (a.v[i].second > eb) r.v.emplace_back(vb, a.v[i].second - eb);
      ++i;
    }
    while (i < a.v.size()) r.v.push_back(a.v[i++]);
    return r;
  }
};

struct PolyTerm {
  Rational c;
  Monomial m;
};

class Poly {
 public:
  Poly() = default;

  static Poly zero() { return Poly(); }
  static Poly constant(Rational c) {
    Poly p;
    if (!c.is_zero()) p.t_.push_back({c, Monomial{}});
    return p;
  }
  static Poly variable(VarId id, int exp = 1) {
    Poly p;
    Monomial m;
    m.v.emplace_back(id, exp);
    p.t_.push_back({Rational(1), std::move(m)});
    return p;
  }

  const std::vector<PolyTerm>& terms() const { return t_; }
  bool is_zero() const { return t_.empty(); }
  bool is_constant() const { return t_.empty() || (t_.size() == 1 && t_[0].m.empty()); }
  Rational constant_value() const {
    return t_.empty() ? Rational(0) : t_[0].c;
  }
  const PolyTerm& leading() const { return t_.front(); }
  std::size_t size() const { return t_.size(); }
  int degree() const { return t_.empty() ? 0 : t_[0].m.degree(); }

  friend bool operator==(const Poly& a, const Poly& b) {
    if (a.t_.size() != b.t_.size()) return false;
    for (std::size_t i = 0; i < a.t_.size(); ++i)
      if (!(a.t_[i].c == b.t_[i].c) || !(a.t_[i].m == b.t_[i].m)) return false;
    return true;
  }

  // Total order on polynomials for deterministic factor lists.
  static int compare(const Poly& a, const Poly& b) {
    const std::size_t n = std::min(a.t_.size(), b.t_.size());
    for (std::size_t i = 0; i < n; ++i) {
      int c = Monomial::compare(a.t_[i].m, b.t_[i].m);
      if (c != 0) return c;
      if (a.t_[i].c != b.t_[i].c) return a.t_[i].c < b.t_[i].c ? -1 : 1;
    }
    if (a.t_.size() != b.t_.size()) return a.t_.size() < b.t_.size() ? -1 : 1;
    return 0;
  }

  friend Poly operator+(const Poly& a, const Poly& b) {
    Poly r;
    r.t_.reserve(a.t_.size() + b.t_.size());
    std::size_t i = 0, j = 0;
    while (i < a.t_.size() && j < b.t_.size()) {
      int c = Monomial::compare(a.t_[i].m, b.t_[j].m);
      if (c > 0) r.t_.push_back(a.t_[i++]);
      else if (c < 0) r.t_.push_back(b.t_[j++]);
      else {
        Rational s = a.t_[i].c + b.t_[j].c;
        if (!s.is_zero()) r.t_.push_back({s, a.t_[i].m});
        ++i; ++j;
      }
    }
    while (i < a.t_.size()) r.t_.push_back(a.t_[i++]);
    while (j < b.t_.size()) r.t_.push_back(b.t_[j++]);
    return r;
  }

  friend Poly operator-(const Poly& a, const Poly& b) { return a + b.negated(); }

  Poly negated() const {
    Poly r = *this;
    for (auto& t : r.t_) t.c = -t.c;
    return r;
  }

  Poly scaled(const Rational& s) const {
    if (s.is_zero()) return Poly();
    Poly r = *this;
    for (auto& t : r.t_) t.c = t.c * s;
    return r;
  }

  friend Poly operator*(const Poly& a, const Poly& b) {
    if (a.is_zero() || b.is_zero()) return Poly();
    if (a.is_constant()) return b.scaled(a.constant_value());
    if (b.is_constant()) return a.scaled(b.constant_value());
    std::vector<PolyTerm> prod;
    prod.reserve(a.t_.size() * b.t_.size());
    for (auto& ta : a.t_)
      for (auto& tb : b.t_)
        prod.push_back({ta.c * tb.c, Monomial::mul(ta.m, tb.m)});
    std::sort(prod.begin(), prod.end(), [](const PolyTerm& x, const PolyTerm& y) {
      return Monomial::compare(x.m, y.m) > 0;
    });
    Poly r;
    r.t_.reserve(prod.size());
    for (auto& t : prod) {
      if (!r.t_.empty() && r.t_.back().m == t.m) {
        r.t_.back().c += t.c;
        if (r.t_.back().c.is_zero()) r.t_.pop_back();
      } else {
        r.t_.push_back(std::move(t));
      }
    }
    return r;
  }

  Poly pow(int e) const {
    if (e < 0) throw std::invalid_argument("Poly::pow: negative exponent");
    Poly r = Poly::constant(Rational(1));
    Poly b = *this;
    for (int k = e; k > 0; k >>= 1) {
      if (k & 1) r = r * b;
      if (k > 1) b = b * b;
    }
    return r;
  }

  // Rational content: c such that (*this)/c has coprime integer coefficients.
  // Zero polynomial has content 1 by convention.
  Rational content() const {
    if (t_.empty()) return Rational(1);
    std::int64_t g = 0, l = 1;
    for (auto& t : t_) {
      g = gcd_i64(g, t.c.num() < 0 ? -t.c.num() : t.c.num());
      std::int64_t d = t.c.den();
      l = l / gcd_i64(l, d) * d;  // lcm; coefficients are reduced so this stays small
    }
    if (g == 0) g = 1;
    return Rational(g, l);
  }

  // Exact division: returns a/b when b divides a with zero remainder.
  static std::optional<Poly> exact_div(const Poly& a, const Poly& b) {
    if (b.is_zero()) return std::nullopt;
    if (b.is_constant()) return a.scaled(Rational(1) / b.constant_value());
    Poly r = a, q;
    while (!r.is_zero()) {
      auto m = Monomial::try_div(r.leading().m, b.leading().m);
      if (!m) return std::nullopt;
      PolyTerm qt{r.leading().c / b.leading().c, std::move(*m)};
      Poly step;
      step.t_.push_back(qt);
      q = q + step;
      r = r - step * b;
    }
    return q;
  }

  // Evaluate with values indexed by VarId.
  double evaluate(const std::vector<double>& vals) const {
    double s = 0.0;
    for (auto& t : t_) {
      double p = t.c.to_double();
      for (auto& [v, e] : t.m.v) {
        double b = vals[static_cast<std::size_t>(v)], r = 1.0;
        for (int k = e; k > 0; k >>= 1) {
          if (k & 1) r *= b;
          if (k > 1) b *= b;
        }
        p *= r;
      }
      s += p;
    }
    return s;
  }

 private:
  std::vector<PolyTerm> t_;  // sorted descending graded-lex, no zero coeffs
};

}  // namespace feedinv
