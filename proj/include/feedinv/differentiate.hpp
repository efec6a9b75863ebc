#pragma once

// Exact differentiation of expression trees.
//
// partial_derivative treats every leaf other than the differentiation
// variable as constant.  total_derivative implements the total derivative
// D_b on jet space: base variables differentiate as usual and every jet
// coordinate f_sigma contributes its shifted neighbour f_{sigma+b}, i.e.
//
//   D_b = d/db + sum_sigma f_{sigma+b} * d/df_sigma .
//
// Both walk the same recursion; only the leaf rule differs.

#include <variant>

#include "feedinv/expr.hpp"

namespace feedinv {

// What to differentiate with respect to (partial derivatives).
struct WrtBase { BaseVar v; };
struct WrtJet { MultiIndex m; };
struct WrtSymbol { std::string name; };
using Wrt = std::variant<WrtBase, WrtJet, WrtSymbol>;

namespace detail {

template <class LeafRule>
inline ExprPtr derive(const ExprPtr& e, const LeafRule& leaf) {
  switch (e->kind) {
    case Kind::Number:
      return num(0);
    case Kind::Base:
    case Kind::Jet:
    case Kind::Symbol:
      return leaf(e);
    case Kind::Sum: {
      std::vector<ExprPtr> kids;
      kids.reserve(e->kids.size());
      for (auto& k : e->kids) kids.push_back(derive(k, leaf));
      return sum(std::move(kids));
    }
    case Kind::Product: {
      // Product rule over n factors.
      std::vector<ExprPtr> terms;
      for (std::size_t i = 0; i < e->kids.size(); ++i) {
        ExprPtr di = derive(e->kids[i], leaf);
        if (is_zero_literal(di)) continue;
        std::vector<ExprPtr> factors;
        factors.reserve(e->kids.size());
        for (std::size_t j = 0; j < e->kids.size(); ++j)
          factors.push_back(j == i ? di : e->kids[j]);
        terms.push_back(product(std::move(factors)));
      }
      return sum(std::move(terms));
    }
    case Kind::Power: {
      // d(b^k) = k * b^(k-1) * db  (valid for negative k as well)
      ExprPtr db = derive(e->kids[0], leaf);
      if (is_zero_literal(db)) return num(0);
      return product({num(e->exponent), power(e->kids[0], e->exponent - 1), db});
    }
    case Kind::Call: {
      ExprPtr da = derive(e->kids[0], leaf);
      if (is_zero_literal(da)) return num(0);
      ExprPtr outer;
      const ExprPtr& a = e->kids[0];
      switch (e->func) {
        case Func::sin: outer = call(Func::cos, a); break;
        case Func::cos: outer = -call(Func::sin, a); break;
        case Func::exp: outer = call(Func::exp, a); break;
        case Func::log: outer = power(a, -1); break;
        case Func::sqrt:
          // d(sqrt(a)) = da / (2*sqrt(a))
          outer = product({num(Rational(1, 2)), power(call(Func::sqrt, a), -1)});
          break;
      }
      return product({outer, da});
    }
  }
  return num(0);  // unreachable
}

}  // namespace detail

inline ExprPtr partial_derivative(const ExprPtr& e, const Wrt& wrt) {
  return detail::derive(e, [&wrt](const ExprPtr& leaf) -> ExprPtr {
    if (const auto* b = std::get_if<WrtBase>(&wrt))
      return num(leaf->kind == Kind::Base && leaf->base == b->v ? 1 : 0);
    if (const auto* j = std::get_if<WrtJet>(&wrt))
      return num(leaf->kind == Kind::Jet && leaf->jet == j->m ? 1 : 0);
    const auto& s = std::get<WrtSymbol>(wrt);
    return num(leaf->kind == Kind::Symbol && leaf->symbol == s.name ? 1 : 0);
  });
}

inline ExprPtr partial_derivative(const ExprPtr& e, BaseVar v) {
  return partial_derivative(e, Wrt{WrtBase{v}});
}
inline ExprPtr partial_derivative(const ExprPtr& e, MultiIndex m) {
  return partial_derivative(e, Wrt{WrtJet{m}});
}
inline ExprPtr partial_derivative_symbol(const ExprPtr& e, const std::string& name) {
  return partial_derivative(e, Wrt{WrtSymbol{name}});
}

// Total derivative D_b on jet space (b one of u, y, y1).
inline ExprPtr total_derivative(const ExprPtr& e, JetDir b) {
  return detail::derive(e, [b](const ExprPtr& leaf) -> ExprPtr {
    switch (leaf->kind) {
      case Kind::Base:
        return num(leaf->base == base_var_of(b) ? 1 : 0);
      case Kind::Jet:
        return jet(leaf->jet.plus(b));
      default:  // free symbols are constants along total derivatives
        return num(0);
    }
  });
}

// Iterated total derivative D_sigma = D_u^du D_y^dy D_y1^dy1 (order is
// immaterial: total derivatives commute).
inline ExprPtr total_derivative(const ExprPtr& e, MultiIndex sigma) {
  ExprPtr r = e;
  for (int i = 0; i < sigma.du; ++i) r = total_derivative(r, JetDir::u);
  for (int i = 0; i < sigma.dy; ++i) r = total_derivative(r, JetDir::y);
  for (int i = 0; i < sigma.dy1; ++i) r = total_derivative(r, JetDir::y1);
  return r;
}

}  // namespace feedinv
