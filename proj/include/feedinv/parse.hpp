#pragma once

// Recursive-descent parser for the published expression grammar:
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := atom ('^' exponent)?          exponent := integer literal,
//                                            optionally parenthesised/signed
//   atom    := number | identifier | function '(' expr ')' | '(' expr ')'
//
// Numbers are decimal literals and become exact rationals ("0.25" -> 1/4);
// the rational form "p/q" parses through the division operator and folds
// exactly.  Identifiers are u, y, y1, the jet coordinates f and f_<suffix>
// with suffix over {u, y, y1}, and the functions sin, cos, exp, log, sqrt.
// Jet identifiers are only admitted when the caller opts in (invariant
// definition contexts); free symbols likewise (internal use only).  Errors
// carry the byte offset of the offending token.

#include <cctype>
#include <string>

#include "feedinv/expr.hpp"

namespace feedinv {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::size_t offset)
      : std::runtime_error(msg + " (at offset " + std::to_string(offset) + ")"),
        message(msg),
        offset(offset) {}
  std::string message;
  std::size_t offset;
};

struct ParseOptions {
  bool allow_jets = false;      // f, f_u, ... permitted
  bool allow_symbols = false;   // unknown identifiers become free symbols
};

namespace detail {

class Parser {
 public:
  Parser(const std::string& text, ParseOptions opts) : text_(text), opts_(opts) {}

  ExprPtr parse() {
    skip_ws();
    ExprPtr e = parse_expr();
    skip_ws();
    if (pos_ != text_.size())
      throw ParseError("unexpected trailing input", pos_);
    return e;
  }

 private:
  ExprPtr parse_expr() {
    ExprPtr e = parse_term();
    for (;;) {
      skip_ws();
      if (peek() == '+') { ++pos_; e = e + parse_term(); }
      else if (peek() == '-') { ++pos_; e = e - parse_term(); }
      else return e;
    }
  }

  ExprPtr parse_term() {
    ExprPtr e = parse_unary();
    for (;;) {
      skip_ws();
      if (peek() == '*') { ++pos_; e = e * parse_unary(); }
      else if (peek() == '/') { ++pos_; e = e / parse_unary(); }
      else return e;
    }
  }

  ExprPtr parse_unary() {
    skip_ws();
    if (peek() == '-') { ++pos_; return -parse_unary(); }
    if (peek() == '+') { ++pos_; return parse_unary(); }
    return parse_power();
  }

  ExprPtr parse_power() {
    ExprPtr b = parse_atom();
    skip_ws();
    if (peek() == '^') {
      ++pos_;
      return power(b, parse_exponent());
    }
    return b;
  }

  int parse_exponent() {
    skip_ws();
    const std::size_t at = pos_;
    bool parens = false;
    if (peek() == '(') { parens = true; ++pos_; skip_ws(); }
    int sign = 1;
    if (peek() == '-') { sign = -1; ++pos_; }
    else if (peek() == '+') { ++pos_; }
    if (!std::isdigit(static_cast<unsigned char>(peek())))
      throw ParseError("exponent must be an integer literal", pos_);
    long v = 0;
    while (std::isdigit(static_cast<unsigned char>(peek()))) {
      v = v * 10 + (peek() - '0');
      if (v > 512) throw ParseError("exponent out of range", at);
      ++pos_;
    }
    if (peek() == '.')
      throw ParseError("exponent must be an integer literal", at);
    if (parens) {
      skip_ws();
      if (peek() != ')') throw ParseError("expected ')' after exponent", pos_);
      ++pos_;
    }
    return sign * static_cast<int>(v);
  }

  ExprPtr parse_atom() {
    skip_ws();
    const std::size_t at = pos_;
    const char c = peek();
    if (c == '\0') throw ParseError("expected an operand", pos_);
    if (c == '(') {
      ++pos_;
      ExprPtr e = parse_expr();
      skip_ws();
      if (peek() != ')') throw ParseError("expected ')'", pos_);
      ++pos_;
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    throw ParseError(std::string("unexpected character '") + c + "'", at);
  }

  ExprPtr parse_number() {
    const std::size_t at = pos_;
    std::int64_t int_part = 0;
    bool any = false;
    while (std::isdigit(static_cast<unsigned char>(peek()))) {
      int_part = int_part * 10 + (peek() - '0');
      if (int_part < 0) throw ParseError("number literal out of range", at);
      ++pos_;
      any = true;
    }
    if (peek() == '.') {
      ++pos_;
      std::int64_t frac = 0, scale = 1;
      bool frac_any = false;
      while (std::isdigit(static_cast<unsigned char>(peek()))) {
        if (scale > 100000000000000000LL)
          throw ParseError("number literal has too many digits", at);
        frac = frac * 10 + (peek() - '0');
        scale *= 10;
        ++pos_;
        frac_any = true;
      }
      if (!any && !frac_any) throw ParseError("malformed number", at);
      return num(Rational(int_part) + Rational(frac, scale));
    }
    if (!any) throw ParseError("malformed number", at);
    return num(int_part);
  }

  ExprPtr parse_identifier() {
    const std::size_t at = pos_;
    std::string id;
    while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_') {
      id += peek();
      ++pos_;
    }
    if (id == "u") return var_u();
    if (id == "y") return var_y();
    if (id == "y1") return var_y1();
    if (auto f = func_from_name(id)) {
      skip_ws();
      if (peek() != '(')
        throw ParseError("expected '(' after function name '" + id + "'", pos_);
      ++pos_;
      ExprPtr arg = parse_expr();
      skip_ws();
      if (peek() != ')') throw ParseError("expected ')'", pos_);
      ++pos_;
      return call(*f, arg);
    }
    if (id == "f" || id.rfind("f_", 0) == 0) {
      if (!opts_.allow_jets)
        throw ParseError("jet coordinate '" + id +
                             "' is not permitted in this context (system "
                             "right-hand sides use only u, y, y1)",
                         at);
      if (id == "f") return jet(MultiIndex{});
      auto m = MultiIndex::parse_suffix(id.substr(2));
      if (!m)
        throw ParseError("malformed jet coordinate '" + id +
                             "'; suffix must be over {u, y, y1}",
                         at);
      return jet(*m);
    }
    if (opts_.allow_symbols) return symbol(id);
    throw ParseError("unknown identifier '" + id + "'", at);
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }

  const std::string& text_;
  ParseOptions opts_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ExprPtr parse_expression(const std::string& text, ParseOptions opts = {}) {
  return detail::Parser(text, opts).parse();
}

// Convenience: parse a system right-hand side F(y, y1, u) — jets disallowed.
inline ExprPtr parse_system_text(const std::string& text) {
  return parse_expression(text, ParseOptions{.allow_jets = false, .allow_symbols = false});
}

// Convenience: parse an invariant-definition expression — jets allowed.
inline ExprPtr parse_invariant_text(const std::string& text) {
  return parse_expression(text, ParseOptions{.allow_jets = true, .allow_symbols = false});
}

}  // namespace feedinv
