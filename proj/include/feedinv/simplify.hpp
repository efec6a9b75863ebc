#pragma once

// Canonicalization of expression trees.
//
// simplify() rewrites an expression as a rational normal form over its
// leaves: a fully expanded numerator polynomial (like monomials collected,
// canonical graded-lex term order) over a list of primitive denominator
// factors.  Elementary-function calls are opaque atoms keyed by the canonical
// text of their (recursively simplified) argument, so `sin(y)*u + u*sin(y)`
// collects to `2*u*sin(y)` while nothing is assumed about the functions
// themselves.  Exact rational arithmetic throughout; cancellation against
// denominator factors uses exact polynomial division, which is what turns
// first-order construction identities into literal zeros.
//
// The resulting tree is a fixpoint: simplify(simplify(e)) == simplify(e),
// and canonical text equality of simplified trees is structural identity.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "feedinv/expr.hpp"
#include "feedinv/polynomial.hpp"

namespace feedinv {

namespace detail {

// ---------------------------------------------------------------------------
// Leaf interning

struct LeafKey {
  int rank;        // 0 base, 1 jet, 2 symbol, 3 atom
  int index = 0;   // base var / jet id
  std::string text;  // symbol name / atom canonical text

  friend bool operator<(const LeafKey& a, const LeafKey& b) {
    if (a.rank != b.rank) return a.rank < b.rank;
    if (a.index != b.index) return a.index < b.index;
    return a.text < b.text;
  }
};

struct LeafTable {
  std::map<LeafKey, VarId> ids;
  std::vector<ExprPtr> repr;             // canonical representative, by id
  std::map<const Expr*, VarId> call_ids; // per Call node instance

  VarId id_of(const ExprPtr& e) const {
    if (e->kind == Kind::Call) return call_ids.at(e.get());
    return ids.at(key_of_simple(e));
  }

  static LeafKey key_of_simple(const ExprPtr& e) {
    switch (e->kind) {
      case Kind::Base: return {0, static_cast<int>(e->base), {}};
      case Kind::Jet: return {1, e->jet.id(), {}};
      case Kind::Symbol: return {2, 0, e->symbol};
      default: throw std::logic_error("key_of_simple: not a simple leaf");
    }
  }
};

// ---------------------------------------------------------------------------
// Rational normal form

struct DenFactor {
  Poly p;   // integer-primitive, positive leading coefficient, non-constant
  int exp;  // >= 1
};

struct RatForm {
  Poly num;
  std::vector<DenFactor> den;  // sorted by Poly::compare, unique

  bool is_zero() const { return num.is_zero(); }

  static RatForm scalar(Rational c) { return {Poly::constant(c), {}}; }
  static RatForm variable(VarId v) { return {Poly::variable(v), {}}; }
};

inline void ratform_cancel(RatForm& f) {
  std::vector<DenFactor> kept;
  for (auto& d : f.den) {
    int e = d.exp;
    while (e > 0) {
      auto q = Poly::exact_div(f.num, d.p);
      if (!q) break;
      f.num = std::move(*q);
      --e;
    }
    if (e > 0) kept.push_back({d.p, e});
  }
  f.den = std::move(kept);
  if (f.num.is_zero()) f.den.clear();
}

// Normalizes p to its primitive positive-leading part, returning the scalar
// that was factored out (p == scale * primitive).
inline Rational factor_normalize(Poly& p) {
  Rational scale = p.content();
  if (!p.is_zero() && p.leading().c.sign() < 0) scale = -scale;
  p = p.scaled(Rational(1) / scale);
  return scale;
}

// Multiplies a denominator factor into the list (assumes prim normalized).
inline void den_insert(std::vector<DenFactor>& den, Poly p, int exp) {
  for (auto& d : den) {
    int c = Poly::compare(d.p, p);
    if (c == 0) { d.exp += exp; return; }
  }
  den.push_back({std::move(p), exp});
  std::sort(den.begin(), den.end(), [](const DenFactor& a, const DenFactor& b) {
    return Poly::compare(a.p, b.p) < 0;
  });
}

inline RatForm ratform_mul(const RatForm& a, const RatForm& b) {
  RatForm r;
  r.num = a.num * b.num;
  if (r.num.is_zero()) return r;
  r.den = a.den;
  for (auto& d : b.den) den_insert(r.den, d.p, d.exp);
  ratform_cancel(r);
  return r;
}

inline RatForm ratform_add(const RatForm& a, const RatForm& b) {
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  // Union denominator with max exponents.
  std::vector<DenFactor> uni = a.den;
  for (auto& d : b.den) {
    bool found = false;
    for (auto& e : uni)
      if (Poly::compare(e.p, d.p) == 0) { e.exp = std::max(e.exp, d.exp); found = true; break; }
    if (!found) uni.push_back(d);
  }
  std::sort(uni.begin(), uni.end(), [](const DenFactor& x, const DenFactor& y) {
    return Poly::compare(x.p, y.p) < 0;
  });
  auto complement = [&uni](const std::vector<DenFactor>& own) {
    Poly m = Poly::constant(Rational(1));
    for (auto& e : uni) {
      int have = 0;
      for (auto& d : own)
        if (Poly::compare(d.p, e.p) == 0) { have = d.exp; break; }
      if (e.exp > have) m = m * e.p.pow(e.exp - have);
    }
    return m;
  };
  RatForm r;
  r.num = a.num * complement(a.den) + b.num * complement(b.den);
  r.den = std::move(uni);
  if (r.num.is_zero()) { r.den.clear(); return r; }
  ratform_cancel(r);
  return r;
}

inline RatForm ratform_reciprocal(const RatForm& a, const ExprPtr& site) {
  if (a.is_zero()) throw DivisionByZeroError(to_text(site));
  RatForm r;
  r.num = Poly::constant(Rational(1));
  for (auto& d : a.den) r.num = r.num * d.p.pow(d.exp);
  Poly p = a.num;
  Rational scale = factor_normalize(p);
  r.num = r.num.scaled(Rational(1) / scale);
  if (!p.is_constant()) r.den.push_back({std::move(p), 1});
  return r;
}

inline RatForm ratform_pow(const RatForm& a, int e, const ExprPtr& site) {
  if (e < 0) return ratform_pow(ratform_reciprocal(a, site), -e, site);
  RatForm r;
  r.num = a.num.pow(e);
  for (auto& d : a.den) r.den.push_back({d.p, d.exp * e});
  ratform_cancel(r);
  return r;
}

// ---------------------------------------------------------------------------
// Tree -> form -> tree

inline ExprPtr simplify_impl(const ExprPtr& e);  // fwd

inline void collect_leaves(const ExprPtr& e,
                           std::vector<std::pair<LeafKey, ExprPtr>>& found,
                           std::vector<std::pair<const Expr*, LeafKey>>& calls) {
  switch (e->kind) {
    case Kind::Base:
    case Kind::Jet:
    case Kind::Symbol:
      found.emplace_back(LeafTable::key_of_simple(e), e);
      return;
    case Kind::Call: {
      // The atom's identity is its function plus the canonical text of its
      // simplified argument; its internals are not visible to this level.
      ExprPtr arg = simplify_impl(e->kids[0]);
      ExprPtr repr = call(e->func, arg);
      LeafKey k{3, static_cast<int>(e->func), to_text(arg)};
      found.emplace_back(k, repr);
      calls.emplace_back(e.get(), k);
      return;
    }
    case Kind::Number:
      return;
    default:
      for (auto& k : e->kids) collect_leaves(k, found, calls);
  }
}

inline RatForm canon_rec(const ExprPtr& e, const LeafTable& lt) {
  switch (e->kind) {
    case Kind::Number:
      return RatForm::scalar(e->number);
    case Kind::Base:
    case Kind::Jet:
    case Kind::Symbol:
    case Kind::Call:
      return RatForm::variable(lt.id_of(e));
    case Kind::Sum: {
      RatForm r = RatForm::scalar(Rational(0));
      for (auto& k : e->kids) r = ratform_add(r, canon_rec(k, lt));
      return r;
    }
    case Kind::Product: {
      RatForm r = RatForm::scalar(Rational(1));
      for (auto& k : e->kids) {
        r = ratform_mul(r, canon_rec(k, lt));
        if (r.is_zero()) return r;
      }
      return r;
    }
    case Kind::Power:
      return ratform_pow(canon_rec(e->kids[0], lt), e->exponent, e->kids[0]);
  }
  return RatForm::scalar(Rational(0));  // unreachable
}

inline ExprPtr poly_to_tree(const Poly& p, const LeafTable& lt) {
  if (p.is_zero()) return num(0);
  std::vector<ExprPtr> terms;
  terms.reserve(p.size());
  for (auto& t : p.terms()) {
    std::vector<ExprPtr> factors;
    factors.push_back(num(t.c));
    for (auto& [v, e] : t.m.v)
      factors.push_back(power(lt.repr[static_cast<std::size_t>(v)], e));
    terms.push_back(product(std::move(factors)));
  }
  return sum(std::move(terms));
}

inline ExprPtr ratform_to_tree(const RatForm& f, const LeafTable& lt) {
  ExprPtr n = poly_to_tree(f.num, lt);
  if (f.den.empty()) return n;
  std::vector<ExprPtr> factors;
  factors.push_back(n);
  for (auto& d : f.den) factors.push_back(power(poly_to_tree(d.p, lt), -d.exp));
  return product(std::move(factors));
}

inline ExprPtr simplify_impl(const ExprPtr& e) {
  std::vector<std::pair<LeafKey, ExprPtr>> found;
  std::vector<std::pair<const Expr*, LeafKey>> calls;
  collect_leaves(e, found, calls);

  LeafTable lt;
  std::sort(found.begin(), found.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [k, repr] : found) {
    if (lt.ids.find(k) == lt.ids.end()) {
      lt.ids[k] = static_cast<VarId>(lt.repr.size());
      lt.repr.push_back(repr);
    }
  }
  for (auto& [node, k] : calls) lt.call_ids[node] = lt.ids.at(k);

  return ratform_to_tree(canon_rec(e, lt), lt);
}

}  // namespace detail

// Canonical form: expanded numerator over primitive denominator factors,
// like terms collected, deterministic term and factor order.
inline ExprPtr simplify(const ExprPtr& e) { return detail::simplify_impl(e); }

// Canonical text of the simplified expression; equal text <=> structurally
// identical modulo the rational normal form.
inline std::string canonical_text(const ExprPtr& e) { return to_text(simplify(e)); }

inline bool is_structurally_zero(const ExprPtr& e) {
  return is_zero_literal(simplify(e));
}

// ---------------------------------------------------------------------------
// Zero classification with randomized fallback

enum class ZeroStatus { structurally_zero, probably_zero, nonzero };

struct ZeroReport {
  ZeroStatus status;
  double max_abs = 0.0;  // largest |value| seen at the sample points
  int points = 0;
};

namespace detail {

template <class Draw>
inline void assign_symbol_values(const ExprPtr& e, std::map<std::string, double>& out,
                                 Draw&& draw) {
  if (e->kind == Kind::Symbol && out.find(e->symbol) == out.end())
    out[e->symbol] = draw();
  for (auto& k : e->kids) assign_symbol_values(k, out, draw);
}

}  // namespace detail

// "Identically zero" decision: first try the canonicalizer; if the canonical
// form is not the literal 0, evaluate at `points` randomized assignments
// (all leaves drawn away from zero) and compare against `tol`.
inline ZeroReport classify_zero(const ExprPtr& e, std::uint64_t seed = 20260825,
                                int points = 50, double tol = 1e-10) {
  if (is_structurally_zero(e)) return {ZeroStatus::structurally_zero, 0.0, 0};

  std::vector<MultiIndex> jets;
  collect_jets(e, jets);
  int max_order = 0;
  for (auto& m : jets) max_order = std::max(max_order, m.order());

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::uniform_int_distribution<int> coin(0, 1);
  auto draw = [&] { return (coin(rng) ? 1.0 : -1.0) * mag(rng); };

  ZeroReport rep{ZeroStatus::probably_zero, 0.0, 0};
  int attempts = 0;
  while (rep.points < points && attempts < points * 10) {
    ++attempts;
    std::vector<double> jv(static_cast<std::size_t>(MultiIndex::count_up_to(max_order)));
    for (auto& v : jv) v = draw();
    EvalContext ctx;
    ctx.u = draw();
    ctx.y = draw();
    ctx.y1 = draw();
    ctx.jet_values = &jv;
    ctx.jet_order = max_order;
    std::map<std::string, double> syms;
    // Free symbols, if any, get randomized values too.
    detail::assign_symbol_values(e, syms, draw);
    ctx.symbols = &syms;
    try {
      double v = std::abs(evaluate(e, ctx));
      rep.max_abs = std::max(rep.max_abs, v);
      ++rep.points;
    } catch (const EvalError&) {
      continue;  // unlucky draw (denominator, log domain): resample
    }
  }
  if (rep.points == 0)
    throw EvalError("classify_zero: could not evaluate expression at any sample point");
  rep.status = rep.max_abs <= tol ? ZeroStatus::probably_zero : ZeroStatus::nonzero;
  return rep;
}

}  // namespace feedinv
