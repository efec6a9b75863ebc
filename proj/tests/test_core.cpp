// Core expression engine: rationals, multi-indices, parsing, printing,
// canonicalization, exact differentiation, and system jets.

#include <gtest/gtest.h>

#include <random>

#include "feedinv/differentiate.hpp"
#include "feedinv/expr.hpp"
#include "feedinv/multi_index.hpp"
#include "feedinv/parse.hpp"
#include "feedinv/rational.hpp"
#include "feedinv/simplify.hpp"
#include "feedinv/system.hpp"
#include "oracle_helpers.hpp"

using namespace feedinv;
using feedinv::testing::Assignment;
using feedinv::testing::fd_partial;
using feedinv::testing::fd_system_partial;
using feedinv::testing::GenOptions;
using feedinv::testing::random_assignment;
using feedinv::testing::random_expression;

TEST(Rational, ExactArithmetic) {
  Rational a(1, 2), b(1, 3);
  EXPECT_EQ((a + b).str(), "5/6");
  EXPECT_EQ((a * b).str(), "1/6");
  EXPECT_EQ((a - b).str(), "1/6");
  EXPECT_EQ((a / b).str(), "3/2");
  EXPECT_EQ(Rational(-4, -6).str(), "2/3");
  EXPECT_EQ(Rational(4, -6).str(), "-2/3");
  EXPECT_EQ(Rational(1, 3).pow(-2).str(), "9");
  EXPECT_THROW(Rational(1, 0), std::invalid_argument);
  EXPECT_THROW(Rational(1) / Rational(0), std::domain_error);
}

TEST(MultiIndex, OrderNameAndCounts) {
  MultiIndex m{2, 1, 0};
  EXPECT_EQ(m.order(), 3);
  EXPECT_EQ(m.name(), "f_uuy");
  EXPECT_EQ(MultiIndex::count_up_to(2), 10);
  EXPECT_EQ(MultiIndex::count_up_to(3), 20);
  EXPECT_EQ((MultiIndex{0, 0, 0}).name(), "f");
  EXPECT_EQ((MultiIndex{1, 0, 2}).name(), "f_uy1y1");
}

TEST(MultiIndex, IdRoundTrip) {
  for (int id = 0; id < MultiIndex::count_up_to(6); ++id) {
    MultiIndex m = MultiIndex::from_id(id);
    EXPECT_EQ(m.id(), id);
    EXPECT_LE(m.order(), 6);
  }
  // Grading: ids of order k all precede ids of order k+1.
  for (int id = 1; id < MultiIndex::count_up_to(6); ++id)
    EXPECT_LE(MultiIndex::from_id(id - 1).order(), MultiIndex::from_id(id).order());
}

TEST(MultiIndex, SuffixParsingAnyOrder) {
  auto a = MultiIndex::parse_suffix("uyy1");
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->du, 1);
  EXPECT_EQ(a->dy, 1);
  EXPECT_EQ(a->dy1, 1);
  auto b = MultiIndex::parse_suffix("y1y");  // same coordinate as "yy1"
  ASSERT_TRUE(b.has_value());
  EXPECT_EQ(b->name(), "f_yy1");
  EXPECT_FALSE(MultiIndex::parse_suffix("ux").has_value());
}

TEST(Parse, BasicExpressions) {
  ExprPtr e = parse_expression("u + y1^2");
  EXPECT_EQ(canonical_text(e), "y1^2 + u");
  ExprPtr t = parse_expression("sin(y)*u");
  EXPECT_EQ(canonical_text(t), "u*sin(y)");
  EXPECT_EQ(canonical_text(parse_expression("0.25*u")), "u/4");
  EXPECT_EQ(canonical_text(parse_expression("1/2*u")), "u/2");
  EXPECT_EQ(canonical_text(parse_expression("u^(-2)")), "1/u^2");
}

TEST(Parse, ErrorsCarryOffsets) {
  try {
    parse_expression("u +");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset, 3u);
  }
  try {
    parse_expression("u + q");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset, 4u);
    EXPECT_NE(std::string(e.what()).find("unknown identifier"), std::string::npos);
  }
  EXPECT_THROW(parse_expression("u^y"), ParseError);
  EXPECT_THROW(parse_expression("sin u"), ParseError);
}

TEST(Parse, JetGating) {
  // Jet coordinates are only admitted in invariant-definition contexts.
  EXPECT_NO_THROW(parse_invariant_text("f_uy1 + f"));
  try {
    parse_system_text("u + f_u");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset, 4u);
  }
}

TEST(Simplify, CollectsCancelsAndOrders) {
  ExprPtr j = parse_invariant_text("(y1*f_y1 - 2*f)/y1");
  EXPECT_EQ(canonical_text(j * var_y1()), "y1*f_y1 - 2*f");
  EXPECT_EQ(canonical_text(parse_expression("u + 0")), "u");
  EXPECT_EQ(canonical_text(parse_expression("u*1")), "u");
  EXPECT_EQ(canonical_text(parse_expression("u*0")), "0");
  EXPECT_EQ(canonical_text(parse_expression("u + u")), "2*u");
  EXPECT_EQ(canonical_text(parse_expression("sin(y)*u + u*sin(y)")), "2*u*sin(y)");
  EXPECT_EQ(canonical_text(parse_expression("(u + y)*(u - y)")), "u^2 - y^2");
  EXPECT_TRUE(is_structurally_zero(parse_expression("(u + y)^2 - u^2 - 2*u*y - y^2")));
}

TEST(Simplify, Idempotent) {
  std::mt19937_64 rng(11);
  GenOptions opt;
  opt.jets = true;
  for (int i = 0; i < 50; ++i) {
    ExprPtr e = random_expression(rng, opt);
    ExprPtr s = simplify(e);
    EXPECT_TRUE(equal(s, simplify(s))) << to_text(e);
  }
}

TEST(Simplify, PreservesEvaluation) {
  std::mt19937_64 rng(12);
  GenOptions opt;
  opt.jets = true;
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    ExprPtr e = random_expression(rng, opt);
    ExprPtr s = simplify(e);
    Assignment a = random_assignment(opt.max_jet_order, rng);
    try {
      const double ve = evaluate(e, a.context());
      const double vs = evaluate(s, a.context());
      EXPECT_NEAR(ve, vs, 1e-12 * (1.0 + std::abs(ve))) << to_text(e);
      ++checked;
    } catch (const EvalError&) {
      continue;  // domain-unlucky draw
    }
  }
  EXPECT_GE(checked, 60);
}

TEST(Evaluate, JetContextAndErrors) {
  SystemF f = SystemF::parse("u");
  JetPoint jp = f.jet_at({2.0, 0.0, 1.0}, 1);
  ExprPtr e = parse_invariant_text("f_u/f");
  EXPECT_DOUBLE_EQ(evaluate_at(e, jp), 0.5);

  // Missing coordinate: order-2 jet requested from an order-1 point.
  EXPECT_THROW(evaluate_at(parse_invariant_text("f_uy1"), jp), MissingValueError);

  // Division by zero names the offending subexpression.
  JetPoint sing = f.jet_at({1.0, 0.0, 0.0}, 1);
  try {
    evaluate_at(parse_invariant_text("f/y1"), sing);
    FAIL() << "expected DivisionByZeroError";
  } catch (const DivisionByZeroError& e) {
    EXPECT_EQ(e.subexpression, "y1");
  }
}

TEST(Evaluate, Deterministic) {
  std::mt19937_64 rng(13);
  GenOptions opt;
  opt.jets = true;
  ExprPtr e = random_expression(rng, opt);
  Assignment a = random_assignment(opt.max_jet_order, rng);
  double v1, v2;
  try {
    v1 = evaluate(e, a.context());
    v2 = evaluate(e, a.context());
  } catch (const EvalError&) {
    GTEST_SKIP() << "domain-unlucky draw";
  }
  EXPECT_EQ(v1, v2);  // bitwise
}

TEST(Derivatives, HandPickedForms) {
  ExprPtr e = parse_invariant_text("y1^2*u");
  EXPECT_EQ(canonical_text(partial_derivative(e, BaseVar::u)), "y1^2");
  // Total derivative shifts jets: D_y1(y1^2*f) = 2*y1*f + y1^2*f_y1.
  ExprPtr g = parse_invariant_text("y1^2*f");
  EXPECT_EQ(canonical_text(total_derivative(g, JetDir::y1)), "y1^2*f_y1 + 2*y1*f");
  // D_u(f_y) = f_uy.
  EXPECT_EQ(canonical_text(total_derivative(parse_invariant_text("f_y"), JetDir::u)),
            "f_uy");
}

TEST(Derivatives, MatchFiniteDifferences) {
  // Independent oracle: central differences at step 1e-5, relative 1e-6.
  std::mt19937_64 rng(21);
  GenOptions opt;
  opt.jets = true;
  int checked = 0;
  for (int i = 0; i < 1000 && checked < 400; ++i) {
    ExprPtr e = random_expression(rng, opt);
    Assignment a = random_assignment(opt.max_jet_order, rng);
    std::vector<Wrt> wrts = {Wrt{WrtBase{BaseVar::u}}, Wrt{WrtBase{BaseVar::y1}},
                             Wrt{WrtJet{MultiIndex{0, 0, 0}}}};
    for (const auto& w : wrts) {
      try {
        const double exact = evaluate(partial_derivative(e, w), a.context());
        const double fd = fd_partial(e, a, w);
        if (std::abs(fd) > 1e6) continue;  // steep draw, FD unreliable
        EXPECT_NEAR(exact, fd, 1e-6 * (1.0 + std::abs(exact)) + 1e-7)
            << to_text(e);
        ++checked;
      } catch (const EvalError&) {
        continue;
      }
    }
  }
  EXPECT_GE(checked, 200);
}

TEST(Derivatives, TotalDerivativesCommute) {
  std::mt19937_64 rng(22);
  GenOptions opt;
  opt.jets = true;
  for (int i = 0; i < 40; ++i) {
    ExprPtr e = random_expression(rng, opt);
    for (auto [a, b] : {std::pair{JetDir::u, JetDir::y}, {JetDir::u, JetDir::y1},
                        {JetDir::y, JetDir::y1}}) {
      ExprPtr ab = total_derivative(total_derivative(e, a), b);
      ExprPtr ba = total_derivative(total_derivative(e, b), a);
      EXPECT_TRUE(is_structurally_zero(ab - ba)) << to_text(e);
    }
  }
}

TEST(SystemJets, FrozenExampleValues) {
  // F = y1^2*u at (u=1, y=0, y1=2): the nonzero coordinates through order 2.
  SystemF f = SystemF::parse("y1^2*u");
  JetPoint jp = f.jet_at({1.0, 0.0, 2.0}, 2);
  EXPECT_DOUBLE_EQ(jp.value({0, 0, 0}), 4.0);   // f
  EXPECT_DOUBLE_EQ(jp.value({1, 0, 0}), 4.0);   // f_u
  EXPECT_DOUBLE_EQ(jp.value({0, 0, 1}), 4.0);   // f_y1
  EXPECT_DOUBLE_EQ(jp.value({1, 0, 1}), 4.0);   // f_uy1
  EXPECT_DOUBLE_EQ(jp.value({0, 0, 2}), 2.0);   // f_y1y1
  EXPECT_DOUBLE_EQ(jp.value({0, 1, 0}), 0.0);   // f_y
  EXPECT_DOUBLE_EQ(jp.value({2, 0, 0}), 0.0);   // f_uu
}

TEST(SystemJets, MatchNestedFiniteDifferences) {
  std::mt19937_64 rng(23);
  std::vector<SystemF> corpus = {
      SystemF::parse("u + u^3 + y*y1 + y1^3"),
      SystemF::parse("u*(1 + y1^2) + sin(y)"),
      SystemF::parse("exp(y/4)*u + y1^2*cos(u)"),
  };
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& sys : corpus) {
    auto F = [&sys](BasePoint p) {
      EvalContext ctx;
      ctx.u = p.u;
      ctx.y = p.y;
      ctx.y1 = p.y1;
      return evaluate(sys.expr(), ctx);
    };
    for (int rep = 0; rep < 3; ++rep) {
      BasePoint p{d(rng), d(rng), 1.0 + 0.3 * d(rng)};
      JetPoint jp = sys.jet_at(p, 3);
      for (int id = 0; id < MultiIndex::count_up_to(3); ++id) {
        MultiIndex m = MultiIndex::from_id(id);
        const double exact = jp.values()[static_cast<std::size_t>(id)];
        const double fd = fd_system_partial(F, p, m, m.order() >= 3 ? 2e-3 : 1e-4);
        EXPECT_NEAR(exact, fd, 1e-5 * (1.0 + std::abs(exact)) + 2e-5)
            << sys.label() << " " << m.name();
      }
    }
  }
}

TEST(SystemJets, DomainErrorsAreReported) {
  // sqrt(y1) at y1 = 0: the first y1-derivative divides by sqrt(0).
  SystemF f = SystemF::parse("sqrt(y1)");
  EXPECT_THROW(f.jet_at({1.0, 0.0, 0.0}, 1), DomainError);
  SystemF g = SystemF::parse("log(y)");
  EXPECT_THROW(g.jet_at({1.0, -1.0, 1.0}, 0), DomainError);
}

TEST(SystemJets, RejectsJetCoordinatesInRhs) {
  EXPECT_THROW(SystemF(parse_invariant_text("f_u + u"), "bad"), std::invalid_argument);
}

TEST(ZeroClassification, ThreeWay) {
  EXPECT_EQ(classify_zero(parse_expression("(u + y)^2 - u^2 - 2*u*y - y^2")).status,
            ZeroStatus::structurally_zero);
  // sin^2 + cos^2 - 1 is zero but not rationally: randomized fallback.
  ExprPtr pyth = parse_expression("sin(y)^2 + cos(y)^2 - 1");
  EXPECT_EQ(classify_zero(pyth).status, ZeroStatus::probably_zero);
  EXPECT_EQ(classify_zero(parse_expression("u - y")).status, ZeroStatus::nonzero);
}
