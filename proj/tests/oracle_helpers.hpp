#pragma once

// Independent numerical oracles used across the test suites.
//
// The finite-difference routines here deliberately bypass the symbolic
// engine: they evaluate expressions (or whole systems) at bumped points and
// form central differences, so agreement with the exact derivatives is a real
// cross-check rather than a tautology.

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "feedinv/differentiate.hpp"
#include "feedinv/expr.hpp"
#include "feedinv/system.hpp"

namespace feedinv::testing {

// Mutable value assignment mirroring EvalContext, convenient to bump.
struct Assignment {
  double u = 0.0, y = 0.0, y1 = 0.0;
  std::vector<double> jets;  // by MultiIndex id
  std::map<std::string, double> symbols;
  int jet_order = 0;

  EvalContext context() const {
    EvalContext ctx;
    ctx.u = u;
    ctx.y = y;
    ctx.y1 = y1;
    ctx.jet_values = &jets;
    ctx.jet_order = jet_order;
    ctx.symbols = &symbols;
    return ctx;
  }

  double* slot(const Wrt& w) {
    if (const auto* b = std::get_if<WrtBase>(&w)) {
      switch (b->v) {
        case BaseVar::u: return &u;
        case BaseVar::y: return &y;
        default: return &y1;
      }
    }
    if (const auto* j = std::get_if<WrtJet>(&w))
      return &jets.at(static_cast<std::size_t>(j->m.id()));
    return &symbols.at(std::get<WrtSymbol>(w).name);
  }
};

template <class Rng>
inline Assignment random_assignment(int jet_order, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.4, 1.4);
  std::uniform_int_distribution<int> coin(0, 1);
  auto draw = [&] { return (coin(rng) ? 1.0 : -1.0) * mag(rng); };
  Assignment a;
  a.jet_order = jet_order;
  a.u = draw();
  a.y = draw();
  a.y1 = draw();
  a.jets.resize(static_cast<std::size_t>(MultiIndex::count_up_to(jet_order)));
  for (auto& v : a.jets) v = draw();
  return a;
}

// Central-difference partial derivative of an expression at an assignment.
inline double fd_partial(const ExprPtr& e, Assignment a, const Wrt& w,
                         double h = 1e-5) {
  double* s = a.slot(w);
  const double x0 = *s;
  *s = x0 + h;
  const double hi = evaluate(e, a.context());
  *s = x0 - h;
  const double lo = evaluate(e, a.context());
  return (hi - lo) / (2.0 * h);
}

// Nested central differences of a plain base-point function; sigma counts the
// differentiations in each direction.  Bypasses the symbolic partial tables.
inline double fd_system_partial(const std::function<double(BasePoint)>& F,
                                BasePoint p, MultiIndex sigma, double h = 1e-4) {
  if (sigma.order() == 0) return F(p);
  auto bump = [&](JetDir d, double delta) {
    BasePoint q = p;
    switch (d) {
      case JetDir::u: q.u += delta; break;
      case JetDir::y: q.y += delta; break;
      case JetDir::y1: q.y1 += delta; break;
    }
    return q;
  };
  const JetDir d = sigma.du > 0 ? JetDir::u : sigma.dy > 0 ? JetDir::y : JetDir::y1;
  const MultiIndex rest = *sigma.minus(d);
  return (fd_system_partial(F, bump(d, h), rest, h) -
          fd_system_partial(F, bump(d, -h), rest, h)) /
         (2.0 * h);
}

// ---------------------------------------------------------------------------
// Random expression generator (grammar-shaped, domain-guarded)

struct GenOptions {
  bool jets = false;
  int max_jet_order = 2;
  bool functions = true;
  int max_depth = 4;
};

template <class Rng>
inline ExprPtr random_expression(Rng& rng, const GenOptions& opt, int depth = 0) {
  std::uniform_int_distribution<int> pick(0, 99);
  std::uniform_int_distribution<int> small(-3, 3);
  auto leaf = [&]() -> ExprPtr {
    switch (pick(rng) % (opt.jets ? 5 : 4)) {
      case 0: return var_u();
      case 1: return var_y();
      case 2: return var_y1();
      case 3: {
        int n = small(rng);
        if (n == 0) n = 2;
        return pick(rng) % 3 == 0 ? num(Rational(n, 2)) : num(n);
      }
      default: {
        std::uniform_int_distribution<int> oid(
            0, MultiIndex::count_up_to(opt.max_jet_order) - 1);
        return jet(MultiIndex::from_id(oid(rng)));
      }
    }
  };
  if (depth >= opt.max_depth) return leaf();
  // Positive-valued composite, safe under log/sqrt and as a denominator.
  auto positive = [&]() -> ExprPtr {
    ExprPtr inner = random_expression(rng, opt, depth + 2);
    return num(Rational(3, 2)) + power(inner, 2) * num(Rational(1, 4));
  };
  switch (pick(rng) % 10) {
    case 0: case 1:
      return random_expression(rng, opt, depth + 1) + random_expression(rng, opt, depth + 1);
    case 2:
      return random_expression(rng, opt, depth + 1) - random_expression(rng, opt, depth + 1);
    case 3: case 4:
      return random_expression(rng, opt, depth + 1) * random_expression(rng, opt, depth + 1);
    case 5:
      return random_expression(rng, opt, depth + 1) / positive();
    case 6:
      return power(random_expression(rng, opt, depth + 1), 2 + (pick(rng) % 2));
    case 7:
      if (opt.functions) {
        const int f = pick(rng) % 4;
        if (f == 0) return call(Func::sin, random_expression(rng, opt, depth + 1));
        if (f == 1) return call(Func::cos, random_expression(rng, opt, depth + 1));
        if (f == 2)
          return call(Func::exp, num(Rational(1, 4)) * random_expression(rng, opt, depth + 2));
        return call(Func::log, positive());
      }
      return leaf();
    case 8:
      if (opt.functions) return call(Func::sqrt, positive());
      return leaf();
    default:
      return leaf();
  }
}

}  // namespace feedinv::testing
