#pragma once

// Immutable expression trees over the jet-space coordinate ring.
//
// Leaves are exact rational constants, the base variables u, y, y1, jet
// coordinates f_sigma, and free named symbols (used internally for transform
// parameters; the public text grammar does not produce them).  Interior nodes
// are n-ary sums and products, integer powers, and calls of the five
// elementary functions.  Division is represented as multiplication by a
// negative power and carries no implicit domain restriction: evaluating at a
// zero denominator reports an error naming the offending subexpression.
//
// Builders perform only local folding (constants, flattening, 0/1 units);
// canonical collection of like terms lives in simplify() (see simplify.hpp).

#include <cassert>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "feedinv/multi_index.hpp"
#include "feedinv/rational.hpp"

namespace feedinv {

// ---------------------------------------------------------------------------
// Errors

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& what) : std::runtime_error(what) {}
};

class DivisionByZeroError : public EvalError {
 public:
  explicit DivisionByZeroError(const std::string& subexpr)
      : EvalError("division by zero while evaluating: " + subexpr),
        subexpression(subexpr) {}
  std::string subexpression;
};

class DomainError : public EvalError {
 public:
  explicit DomainError(const std::string& what) : EvalError(what) {}
};

class MissingValueError : public EvalError {
 public:
  explicit MissingValueError(const std::string& what) : EvalError(what) {}
};

// ---------------------------------------------------------------------------
// Node definitions

enum class Kind : std::uint8_t { Number, Base, Symbol, Jet, Sum, Product, Power, Call };

enum class BaseVar : std::uint8_t { u = 0, y = 1, y1 = 2 };

inline const char* base_var_name(BaseVar v) {
  switch (v) {
    case BaseVar::u: return "u";
    case BaseVar::y: return "y";
    default: return "y1";
  }
}

inline BaseVar base_var_of(JetDir d) { return static_cast<BaseVar>(d); }
inline JetDir jet_dir_of(BaseVar v) { return static_cast<JetDir>(v); }

enum class Func : std::uint8_t { sin, cos, exp, log, sqrt };

inline const char* func_name(Func f) {
  switch (f) {
    case Func::sin: return "sin";
    case Func::cos: return "cos";
    case Func::exp: return "exp";
    case Func::log: return "log";
    default: return "sqrt";
  }
}

inline std::optional<Func> func_from_name(const std::string& s) {
  if (s == "sin") return Func::sin;
  if (s == "cos") return Func::cos;
  if (s == "exp") return Func::exp;
  if (s == "log") return Func::log;
  if (s == "sqrt") return Func::sqrt;
  return std::nullopt;
}

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

class Expr {
 public:
  Kind kind;
  Rational number;              // Kind::Number
  BaseVar base = BaseVar::u;    // Kind::Base
  std::string symbol;           // Kind::Symbol
  MultiIndex jet;               // Kind::Jet
  std::vector<ExprPtr> kids;    // Sum/Product: n-ary; Power/Call: single child
  int exponent = 0;             // Kind::Power
  Func func = Func::sin;        // Kind::Call

  explicit Expr(Kind k) : kind(k) {}
};

// ---------------------------------------------------------------------------
// Builders (light local folding only)

inline ExprPtr num(Rational r) {
  auto e = std::make_shared<Expr>(Kind::Number);
  e->number = r;
  return e;
}
inline ExprPtr num(std::int64_t n) { return num(Rational(n)); }

inline ExprPtr base(BaseVar v) {
  auto e = std::make_shared<Expr>(Kind::Base);
  e->base = v;
  return e;
}
inline ExprPtr var_u() { return base(BaseVar::u); }
inline ExprPtr var_y() { return base(BaseVar::y); }
inline ExprPtr var_y1() { return base(BaseVar::y1); }

inline ExprPtr jet(MultiIndex m) {
  auto e = std::make_shared<Expr>(Kind::Jet);
  e->jet = m;
  return e;
}
inline ExprPtr jet(int du, int dy, int dy1) {
  MultiIndex m;
  m.du = static_cast<std::uint8_t>(du);
  m.dy = static_cast<std::uint8_t>(dy);
  m.dy1 = static_cast<std::uint8_t>(dy1);
  return jet(m);
}

inline ExprPtr symbol(std::string name) {
  auto e = std::make_shared<Expr>(Kind::Symbol);
  e->symbol = std::move(name);
  return e;
}

inline bool is_number(const ExprPtr& e) { return e->kind == Kind::Number; }
inline bool is_zero_literal(const ExprPtr& e) {
  return e->kind == Kind::Number && e->number.is_zero();
}
inline bool is_one_literal(const ExprPtr& e) {
  return e->kind == Kind::Number && e->number.is_one();
}

inline ExprPtr sum(std::vector<ExprPtr> children) {
  std::vector<ExprPtr> flat;
  Rational c(0);
  for (auto& ch : children) {
    if (!ch) throw std::invalid_argument("sum: null child");
    if (ch->kind == Kind::Number) {
      c += ch->number;
    } else if (ch->kind == Kind::Sum) {
      for (auto& g : ch->kids) {
        if (g->kind == Kind::Number) c += g->number;
        else flat.push_back(g);
      }
    } else {
      flat.push_back(ch);
    }
  }
  if (!c.is_zero()) flat.push_back(num(c));
  if (flat.empty()) return num(0);
  if (flat.size() == 1) return flat[0];
  auto e = std::make_shared<Expr>(Kind::Sum);
  e->kids = std::move(flat);
  return e;
}

inline ExprPtr product(std::vector<ExprPtr> children) {
  std::vector<ExprPtr> flat;
  Rational c(1);
  for (auto& ch : children) {
    if (!ch) throw std::invalid_argument("product: null child");
    if (ch->kind == Kind::Number) {
      c *= ch->number;
    } else if (ch->kind == Kind::Product) {
      for (auto& g : ch->kids) {
        if (g->kind == Kind::Number) c *= g->number;
        else flat.push_back(g);
      }
    } else {
      flat.push_back(ch);
    }
  }
  if (c.is_zero()) return num(0);
  if (!c.is_one()) flat.insert(flat.begin(), num(c));
  if (flat.empty()) return num(1);
  if (flat.size() == 1) return flat[0];
  auto e = std::make_shared<Expr>(Kind::Product);
  e->kids = std::move(flat);
  return e;
}

inline ExprPtr power(ExprPtr b, int exp) {
  if (!b) throw std::invalid_argument("power: null base");
  if (exp < -512 || exp > 512) throw std::invalid_argument("power: exponent out of range");
  if (exp == 0) return num(1);
  if (exp == 1) return b;
  if (b->kind == Kind::Number) {
    // Fold unless this is a division by literal zero, which must stay a node
    // so that evaluation reports it.
    if (exp > 0 || !b->number.is_zero()) return num(b->number.pow(exp));
  }
  if (b->kind == Kind::Power) return power(b->kids[0], b->exponent * exp);
  auto e = std::make_shared<Expr>(Kind::Power);
  e->kids = {std::move(b)};
  e->exponent = exp;
  return e;
}

inline ExprPtr call(Func f, ExprPtr arg) {
  if (!arg) throw std::invalid_argument("call: null argument");
  auto e = std::make_shared<Expr>(Kind::Call);
  e->func = f;
  e->kids = {std::move(arg)};
  return e;
}

inline ExprPtr operator+(const ExprPtr& a, const ExprPtr& b) { return sum({a, b}); }
inline ExprPtr operator-(const ExprPtr& a, const ExprPtr& b) {
  return sum({a, product({num(-1), b})});
}
inline ExprPtr operator-(const ExprPtr& a) { return product({num(-1), a}); }
inline ExprPtr operator*(const ExprPtr& a, const ExprPtr& b) { return product({a, b}); }
inline ExprPtr operator/(const ExprPtr& a, const ExprPtr& b) {
  return product({a, power(b, -1)});
}

// ---------------------------------------------------------------------------
// Structural equality

inline bool equal(const ExprPtr& a, const ExprPtr& b) {
  if (a.get() == b.get()) return true;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case Kind::Number: return a->number == b->number;
    case Kind::Base: return a->base == b->base;
    case Kind::Symbol: return a->symbol == b->symbol;
    case Kind::Jet: return a->jet == b->jet;
    case Kind::Power:
      if (a->exponent != b->exponent) return false;
      break;
    case Kind::Call:
      if (a->func != b->func) return false;
      break;
    default: break;
  }
  if (a->kids.size() != b->kids.size()) return false;
  for (std::size_t i = 0; i < a->kids.size(); ++i)
    if (!equal(a->kids[i], b->kids[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Printing
//
// Canonical text: products separate positive and negative powers into a
// numerator and denominator joined by '/', rational coefficients render as
// "p*..." or ".../q", and sums render "a - b" when a term's coefficient is
// negative.  The printer is deterministic, so canonical text of simplified
// expressions doubles as a structural identity key.

namespace detail {

inline int precedence(const Expr& e) {
  switch (e.kind) {
    case Kind::Sum: return 1;
    case Kind::Product: return 2;
    case Kind::Power: return 3;
    default: return 4;
  }
}

inline void print_rec(const ExprPtr& e, std::ostream& os, int parent_prec);

// Splits a term (Product/Power/leaf) into coefficient, numerator factors, and
// denominator factors (with positive exponents).
struct TermParts {
  Rational coeff{1};
  std::vector<std::pair<ExprPtr, int>> numer;  // factor, exponent > 0
  std::vector<std::pair<ExprPtr, int>> denom;  // factor, exponent > 0
};

inline void term_collect(const ExprPtr& e, TermParts& out) {
  if (e->kind == Kind::Number) {
    out.coeff *= e->number;
  } else if (e->kind == Kind::Product) {
    for (auto& k : e->kids) term_collect(k, out);
  } else if (e->kind == Kind::Power) {
    if (e->exponent < 0)
      out.denom.emplace_back(e->kids[0], -e->exponent);
    else
      out.numer.emplace_back(e->kids[0], e->exponent);
  } else {
    out.numer.emplace_back(e, 1);
  }
}

inline void print_factor(std::ostream& os, const std::pair<ExprPtr, int>& f) {
  print_rec(f.first, os, 3);
  if (f.second != 1) os << "^" << f.second;
}

inline void print_factor_list(std::ostream& os,
                              const std::vector<std::pair<ExprPtr, int>>& fs,
                              std::int64_t scalar) {
  bool first = true;
  if (scalar != 1 || fs.empty()) {
    os << scalar;
    first = false;
  }
  for (auto& f : fs) {
    if (!first) os << "*";
    print_factor(os, f);
    first = false;
  }
}

inline void print_term(std::ostream& os, const ExprPtr& e, bool* negative) {
  TermParts p;
  term_collect(e, p);
  if (negative) {
    *negative = p.coeff.sign() < 0;
    if (*negative) p.coeff = -p.coeff;
  }
  std::ostringstream numer;
  print_factor_list(numer, p.numer, p.coeff.num());
  if (p.denom.empty() && p.coeff.den() == 1) {
    os << numer.str();
    return;
  }
  const bool numer_needs_parens = p.numer.size() + (p.coeff.num() != 1 ? 1 : 0) > 1;
  if (numer_needs_parens && !p.denom.empty()) os << "(" << numer.str() << ")";
  else os << numer.str();
  os << "/";
  std::ostringstream denom;
  print_factor_list(denom, p.denom, p.coeff.den());
  const bool denom_multi = p.denom.size() + (p.coeff.den() != 1 ? 1 : 0) > 1;
  if (denom_multi) os << "(" << denom.str() << ")";
  else os << denom.str();
}

inline void print_rec(const ExprPtr& e, std::ostream& os, int parent_prec) {
  const int prec = precedence(*e);
  const bool parens =
      prec < parent_prec ||
      (e->kind == Kind::Number && parent_prec >= 2 &&
       (e->number.sign() < 0 || !e->number.is_integer()));
  if (parens) os << "(";
  switch (e->kind) {
    case Kind::Number:
      os << e->number.str();
      break;
    case Kind::Base:
      os << base_var_name(e->base);
      break;
    case Kind::Symbol:
      os << e->symbol;
      break;
    case Kind::Jet:
      os << e->jet.name();
      break;
    case Kind::Call:
      os << func_name(e->func) << "(";
      print_rec(e->kids[0], os, 0);
      os << ")";
      break;
    case Kind::Power:
    case Kind::Product:
      print_term(os, e, nullptr);
      break;
    case Kind::Sum: {
      bool first = true;
      for (auto& k : e->kids) {
        bool neg = false;
        std::ostringstream term;
        print_term(term, k, &neg);
        if (first) {
          if (neg) os << "-";
          os << term.str();
          first = false;
        } else {
          os << (neg ? " - " : " + ") << term.str();
        }
      }
      break;
    }
  }
  if (parens) os << ")";
}

}  // namespace detail

inline std::string to_text(const ExprPtr& e) {
  std::ostringstream os;
  detail::print_rec(e, os, 0);
  return os.str();
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalContext {
  double u = 0.0;
  double y = 0.0;
  double y1 = 0.0;
  // Jet coordinate values indexed by MultiIndex::id(); nullptr means the
  // expression must be jet-free.
  const std::vector<double>* jet_values = nullptr;
  int jet_order = -1;
  const std::map<std::string, double>* symbols = nullptr;

  double base_value(BaseVar v) const {
    switch (v) {
      case BaseVar::u: return u;
      case BaseVar::y: return y;
      default: return y1;
    }
  }
};

namespace detail {

inline double ipow(double b, int e) {
  double r = 1.0, p = b;
  for (int k = e; k > 0; k >>= 1) {
    if (k & 1) r *= p;
    if (k > 1) p *= p;
  }
  return r;
}

}  // namespace detail

inline double evaluate(const ExprPtr& e, const EvalContext& ctx) {
  switch (e->kind) {
    case Kind::Number:
      return e->number.to_double();
    case Kind::Base:
      return ctx.base_value(e->base);
    case Kind::Symbol: {
      if (ctx.symbols) {
        auto it = ctx.symbols->find(e->symbol);
        if (it != ctx.symbols->end()) return it->second;
      }
      throw MissingValueError("unbound symbol '" + e->symbol + "' in evaluation");
    }
    case Kind::Jet: {
      const int id = e->jet.id();
      if (!ctx.jet_values || id >= static_cast<int>(ctx.jet_values->size()))
        throw MissingValueError("jet coordinate " + e->jet.name() +
                                " (order " + std::to_string(e->jet.order()) +
                                ") not available; jet point has order " +
                                std::to_string(ctx.jet_order));
      return (*ctx.jet_values)[id];
    }
    case Kind::Sum: {
      double s = 0.0;
      for (auto& k : e->kids) s += evaluate(k, ctx);
      return s;
    }
    case Kind::Product: {
      double p = 1.0;
      for (auto& k : e->kids) p *= evaluate(k, ctx);
      return p;
    }
    case Kind::Power: {
      const double b = evaluate(e->kids[0], ctx);
      if (e->exponent < 0) {
        if (b == 0.0) throw DivisionByZeroError(to_text(e->kids[0]));
        return 1.0 / detail::ipow(b, -e->exponent);
      }
      return detail::ipow(b, e->exponent);
    }
    case Kind::Call: {
      const double a = evaluate(e->kids[0], ctx);
      switch (e->func) {
        case Func::sin: return std::sin(a);
        case Func::cos: return std::cos(a);
        case Func::exp: return std::exp(a);
        case Func::log:
          if (a <= 0.0)
            throw DomainError("log of non-positive argument (" + std::to_string(a) +
                              ") in: " + to_text(e));
          return std::log(a);
        case Func::sqrt:
          if (a < 0.0)
            throw DomainError("sqrt of negative argument (" + std::to_string(a) +
                              ") in: " + to_text(e));
          return std::sqrt(a);
      }
      return 0.0;  // unreachable
    }
  }
  return 0.0;  // unreachable
}

// ---------------------------------------------------------------------------
// Substitution

struct SubstMap {
  std::map<int, ExprPtr> bases;           // keyed by static_cast<int>(BaseVar)
  std::map<int, ExprPtr> jets;            // keyed by MultiIndex::id()
  std::map<std::string, ExprPtr> symbols;

  void set(BaseVar v, ExprPtr e) { bases[static_cast<int>(v)] = std::move(e); }
  void set(MultiIndex m, ExprPtr e) { jets[m.id()] = std::move(e); }
  void set(const std::string& s, ExprPtr e) { symbols[s] = std::move(e); }
};

inline ExprPtr substitute(const ExprPtr& e, const SubstMap& m) {
  switch (e->kind) {
    case Kind::Number:
      return e;
    case Kind::Base: {
      auto it = m.bases.find(static_cast<int>(e->base));
      return it != m.bases.end() ? it->second : e;
    }
    case Kind::Jet: {
      auto it = m.jets.find(e->jet.id());
      return it != m.jets.end() ? it->second : e;
    }
    case Kind::Symbol: {
      auto it = m.symbols.find(e->symbol);
      return it != m.symbols.end() ? it->second : e;
    }
    case Kind::Sum: {
      std::vector<ExprPtr> kids;
      kids.reserve(e->kids.size());
      for (auto& k : e->kids) kids.push_back(substitute(k, m));
      return sum(std::move(kids));
    }
    case Kind::Product: {
      std::vector<ExprPtr> kids;
      kids.reserve(e->kids.size());
      for (auto& k : e->kids) kids.push_back(substitute(k, m));
      return product(std::move(kids));
    }
    case Kind::Power:
      return power(substitute(e->kids[0], m), e->exponent);
    case Kind::Call:
      return call(e->func, substitute(e->kids[0], m));
  }
  return e;  // unreachable
}

// ---------------------------------------------------------------------------
// Structure queries

// Highest jet order appearing in the expression; -1 if jet-free.
inline int jet_order(const ExprPtr& e) {
  int o = -1;
  if (e->kind == Kind::Jet) o = e->jet.order();
  for (auto& k : e->kids) o = std::max(o, jet_order(k));
  return o;
}

inline void collect_jets(const ExprPtr& e, std::vector<MultiIndex>& out) {
  if (e->kind == Kind::Jet) {
    bool seen = false;
    for (auto& m : out)
      if (m == e->jet) { seen = true; break; }
    if (!seen) out.push_back(e->jet);
  }
  for (auto& k : e->kids) collect_jets(k, out);
}

inline bool contains_symbol(const ExprPtr& e) {
  if (e->kind == Kind::Symbol) return true;
  for (auto& k : e->kids)
    if (contains_symbol(k)) return true;
  return false;
}

inline bool contains_base(const ExprPtr& e, BaseVar v) {
  if (e->kind == Kind::Base && e->base == v) return true;
  for (auto& k : e->kids)
    if (contains_base(k, v)) return true;
  return false;
}

}  // namespace feedinv
