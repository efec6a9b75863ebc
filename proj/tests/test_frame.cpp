// Tests for the invariant frame: the basic invariant, the derivation frame,
// derived invariants, structure coefficients, the order-3 generators, the
// u-degenerate branch invariant, regularity classification, and the numeric
// dual frame.
//
// Frozen values below were derived by hand substitution before the frame was
// implemented:
//   F = u at (u,y,y1) = (1,0,2):
//     J = -1, J_u = -2, J_y1 = 1, J_uu = 0, J_uy1 = 2, J_y1y1 = -1,
//     K = 3, L = -2, alpha = 1/2, M = -1/2.
//   F = y1*u at (3,0,1): J = -3.
//   F = y1^2*g(u,y): J vanishes identically.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "feedinv/frame.hpp"
#include "feedinv/parse.hpp"
#include "feedinv/simplify.hpp"
#include "feedinv/system.hpp"

namespace feedinv {
namespace {

const InvariantFrame& frame() { return InvariantFrame::instance(); }

JetPoint jet_of(const std::string& text, double u, double y, double y1, int order) {
  SystemF F = SystemF::parse(text);
  return F.jet_at(BasePoint{u, y, y1}, order);
}

bool structurally_equal(const ExprPtr& a, const std::string& closed_form) {
  return is_structurally_zero(simplify(a - parse_invariant_text(closed_form)));
}

TEST(Frame, BasicInvariantFrozenValues) {
  const ExprPtr& J = frame().J();
  EXPECT_EQ(canonical_text(J), "(y1*f_y1 - 2*f)/y1");
  EXPECT_DOUBLE_EQ(evaluate_at(J, jet_of("u", 1, 0, 2, 1)), -1.0);
  EXPECT_DOUBLE_EQ(evaluate_at(J, jet_of("y1*u", 3, 0, 1, 1)), -3.0);

  // For F = y1^2*g(u, y) the invariant vanishes identically.
  SystemF F = SystemF::parse("y1^2*(sin(u) + y + 2)");
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(0.5, 1.5);
  for (int i = 0; i < 20; ++i) {
    JetPoint jp = F.jet_at(BasePoint{d(rng), d(rng), d(rng)}, 1);
    EXPECT_NEAR(evaluate_at(J, jp), 0.0, 1e-12);
  }
}

TEST(Frame, DerivationCoefficientsAndFrozenValues) {
  const FrameDerivations& der = frame().derivations();
  EXPECT_EQ(canonical_text(der.nabla_u.coeff_u), "y1/f_u");
  EXPECT_TRUE(is_structurally_zero(der.nabla_u.coeff_y));
  EXPECT_TRUE(is_structurally_zero(der.nabla_u.coeff_y1));
  EXPECT_EQ(canonical_text(der.nabla_y1.coeff_y1), "y1");
  EXPECT_EQ(canonical_text(der.nabla_y.coeff_y), "y1");
  EXPECT_EQ(canonical_text(der.nabla_y.coeff_y1), "f");

  // alpha at F = u, (1,0,2): hand value u^2/y1 = 1/2.
  EXPECT_NEAR(evaluate_at(frame().alpha(), jet_of("u", 1, 0, 2, 2)), 0.5, 1e-14);
}

TEST(Frame, NablaYAnnihilatesJ) {
  // Symbolically: the composite reduces to the literal zero expression.
  const FrameDerivations& der = frame().derivations();
  EXPECT_TRUE(is_structurally_zero(der.nabla_y.apply(frame().J())));

  // Numerically: the raw (unsimplified) composite cancels to rounding noise
  // at 1000 random jets.
  ExprPtr raw = der.nabla_y.apply_raw(frame().J());
  ExprPtr tu = der.nabla_y.coeff_u * total_derivative(frame().J(), JetDir::u);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    JetPoint jp = make_random_jet(2, rng);
    double scale = std::abs(evaluate_at(tu, jp));
    EXPECT_LE(std::abs(evaluate_at(raw, jp)), 1e-12 * (1.0 + scale));
  }
}

TEST(Frame, DerivedInvariantClosedForms) {
  // Hand-derived closed forms (chain rule applied to J on paper).
  const InvariantCatalog& cat = frame().catalog();
  EXPECT_TRUE(structurally_equal(cat.at("J_u").expr,
                                 "(y1*f_uy1 - 2*f_u)/f_u"));
  EXPECT_TRUE(structurally_equal(cat.at("J_y1").expr,
                                 "(y1^2*f_y1y1 - 2*y1*f_y1 + 2*f)/y1"));
  EXPECT_TRUE(structurally_equal(
      cat.at("J_uu").expr, "y1^2*(f_uuy1*f_u - f_uy1*f_uu)/f_u^3"));
  EXPECT_TRUE(structurally_equal(
      cat.at("J_uy1").expr, "(y1^2*f_uy1y1 - 2*y1*f_uy1 + 2*f_u)/f_u"));
  EXPECT_TRUE(structurally_equal(
      cat.at("J_y1y1").expr, "y1^2*f_y1y1y1 - y1*f_y1y1 + 2*f_y1 - 2*f/y1"));
}

TEST(Frame, DerivedInvariantFrozenValues) {
  const InvariantCatalog& cat = frame().catalog();
  JetPoint jp = jet_of("u", 1, 0, 2, 3);
  EXPECT_DOUBLE_EQ(evaluate_at(cat.at("J_u").expr, jp), -2.0);
  EXPECT_DOUBLE_EQ(evaluate_at(cat.at("J_y1").expr, jp), 1.0);
  EXPECT_DOUBLE_EQ(evaluate_at(cat.at("J_uu").expr, jp), 0.0);
  EXPECT_DOUBLE_EQ(evaluate_at(cat.at("J_uy1").expr, jp), 2.0);
  EXPECT_DOUBLE_EQ(evaluate_at(cat.at("J_y1y1").expr, jp), -1.0);
  EXPECT_NEAR(evaluate_at(cat.at("K").expr, jp), 3.0, 1e-12);
  EXPECT_NEAR(evaluate_at(cat.at("L").expr, jp), -2.0, 1e-12);
  EXPECT_NEAR(evaluate_at(cat.at("M").expr, jp), -0.5, 1e-14);

  // J_u is constant for F = u; alpha-direction derivative of it vanishes.
  JetPoint other = jet_of("u", -0.7, 1.3, 0.9, 3);
  EXPECT_DOUBLE_EQ(evaluate_at(cat.at("J_u").expr, other), -2.0);
}

TEST(Frame, StructureCoefficientIdentities) {
  const StructureCoefficients& c = frame().structure();
  const InvariantCatalog& cat = frame().catalog();
  const ExprPtr one = num(1);

  // The distinguished identity, as an exact symbolic statement.
  ExprPtr c_u_uy1 = c.at(FrameAxis::u, FrameAxis::y1, FrameAxis::u);
  EXPECT_TRUE(is_structurally_zero(
      simplify(c_u_uy1 - (one + cat.at("J_u").expr))));

  // The remaining six, also exact.
  EXPECT_TRUE(is_structurally_zero(
      simplify(c.at(FrameAxis::u, FrameAxis::y, FrameAxis::y1) - one)));
  EXPECT_TRUE(is_structurally_zero(
      c.at(FrameAxis::u, FrameAxis::y, FrameAxis::y)));
  EXPECT_TRUE(is_structurally_zero(
      c.at(FrameAxis::u, FrameAxis::y1, FrameAxis::y)));
  EXPECT_TRUE(is_structurally_zero(
      c.at(FrameAxis::u, FrameAxis::y1, FrameAxis::y1)));
  EXPECT_TRUE(is_structurally_zero(
      simplify(c.at(FrameAxis::y, FrameAxis::y1, FrameAxis::y) + one)));
  EXPECT_TRUE(is_structurally_zero(
      simplify(c.at(FrameAxis::y, FrameAxis::y1, FrameAxis::y1) + frame().J())));

  // Numerically: evaluate both sides independently at 100 random regular jets.
  std::mt19937_64 rng(23);
  for (int i = 0; i < 100; ++i) {
    JetPoint jp = make_random_jet(3, rng);
    auto expect_match = [&](const ExprPtr& lhs, double rhs) {
      EXPECT_NEAR(evaluate_at(lhs, jp), rhs, 1e-9 * (1.0 + std::abs(rhs)));
    };
    expect_match(c_u_uy1, 1.0 + evaluate_at(cat.at("J_u").expr, jp));
    expect_match(c.at(FrameAxis::u, FrameAxis::y, FrameAxis::y1), 1.0);
    expect_match(c.at(FrameAxis::u, FrameAxis::y, FrameAxis::y), 0.0);
    expect_match(c.at(FrameAxis::u, FrameAxis::y1, FrameAxis::y), 0.0);
    expect_match(c.at(FrameAxis::u, FrameAxis::y1, FrameAxis::y1), 0.0);
    expect_match(c.at(FrameAxis::y, FrameAxis::y1, FrameAxis::y), -1.0);
    expect_match(c.at(FrameAxis::y, FrameAxis::y1, FrameAxis::y1),
                 -evaluate_at(frame().J(), jp));
  }

  // Reversed pairs are not stored.
  EXPECT_THROW(c.at(FrameAxis::y, FrameAxis::u, FrameAxis::u),
               std::invalid_argument);
}

TEST(Frame, ThirdOrderInvariantsAreAffineAndIndependent) {
  const InvariantCatalog& cat = frame().catalog();
  const std::array<const char*, 5> names = {"J_uu", "J_uy1", "J_y1y1", "K", "L"};

  // Affine along order 3: every first partial with respect to an order-3 jet
  // coordinate is an expression of order <= 2; each invariant depends on at
  // least one order-3 coordinate.
  std::vector<MultiIndex> order3;
  for (int id = 0; id < MultiIndex::count_up_to(3); ++id) {
    MultiIndex m = MultiIndex::from_id(id);
    if (m.order() == 3) order3.push_back(m);
  }
  ASSERT_EQ(order3.size(), 10u);

  std::map<const char*, std::vector<ExprPtr>> grads;
  for (const char* n : names) {
    int nonzero = 0;
    for (MultiIndex m : order3) {
      ExprPtr g = simplify(partial_derivative(cat.at(n).expr, m));
      EXPECT_LE(jet_order(g), 2) << n << " not affine in " << m.name();
      if (!is_structurally_zero(g)) ++nonzero;
      grads[n].push_back(std::move(g));
    }
    EXPECT_GE(nonzero, 1) << n << " has no pure order-3 content";
  }

  // The five gradient rows are independent: rank 5 at random regular jets.
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    JetPoint jp = make_random_jet(3, rng);
    Eigen::MatrixXd Jac(5, 10);
    for (int r = 0; r < 5; ++r)
      for (int cidx = 0; cidx < 10; ++cidx)
        Jac(r, cidx) = evaluate_at(grads[names[r]][cidx], jp);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Jac);
    const auto& s = svd.singularValues();
    int rank = 0;
    for (int k = 0; k < s.size(); ++k)
      if (s(k) > 1e-8 * s(0)) ++rank;
    EXPECT_EQ(rank, 5);
  }
}

TEST(Frame, TresseDualityAndDecomposition) {
  const InvariantCatalog& cat = frame().catalog();
  const ExprPtr chart[3] = {cat.at("J").expr, cat.at("J_u").expr,
                            cat.at("J_y1").expr};

  // Precompute total derivatives of the chart invariants once.
  ExprPtr dchart[3][3];
  for (int g = 0; g < 3; ++g)
    for (int b = 0; b < 3; ++b)
      dchart[g][b] = simplify(total_derivative(chart[g], kJetDirs[b]));

  std::mt19937_64 rng(41);
  int accepted = 0;
  while (accepted < 100) {
    JetPoint jp = make_random_jet(3, rng);
    TresseFrame tf;
    try {
      tf = frame().tresse_frame(jp);
    } catch (const DomainError&) {
      continue;  // chart degenerates at this jet; redraw
    }
    // Keep the chart well conditioned so rounding stays below the tolerance.
    double cond = tf.transition.norm() * tf.transition.inverse().norm();
    if (cond > 1e6) continue;
    ++accepted;

    // Duality: D/DJ_beta applied to chart invariant gamma gives delta.
    for (int beta = 0; beta < 3; ++beta) {
      for (int g = 0; g < 3; ++g) {
        double v = 0;
        for (int b = 0; b < 3; ++b)
          v += tf.dual_coeffs(beta, b) * evaluate_at(dchart[g][b], jp);
        EXPECT_NEAR(v, beta == g ? 1.0 : 0.0, 1e-9);
      }
    }

    // Decomposition of each frame derivation over the dual frame, with the
    // coefficients given by named invariants:
    //   nabla_u  : (J_u,  J_uu,                J_uy1)
    //   nabla_y  : (0,    J_y1y1 - J_y1 - L,   (J_u*K + (J_y1-J_u)*(J_y1-J_y1y1))/J_u)
    //   nabla_y1 : (J_y1, J_uy1 - J_u - J_u^2, J_y1y1)
    const double J = evaluate_at(cat.at("J").expr, jp);
    (void)J;
    const double Ju = evaluate_at(cat.at("J_u").expr, jp);
    const double Jy1 = evaluate_at(cat.at("J_y1").expr, jp);
    const double Juu = evaluate_at(cat.at("J_uu").expr, jp);
    const double Juy1 = evaluate_at(cat.at("J_uy1").expr, jp);
    const double Jy1y1 = evaluate_at(cat.at("J_y1y1").expr, jp);
    const double K = evaluate_at(cat.at("K").expr, jp);
    const double L = evaluate_at(cat.at("L").expr, jp);
    const double named[3][3] = {
        {Ju, Juu, Juy1},
        {0.0, Jy1y1 - Jy1 - L, (Ju * K + (Jy1 - Ju) * (Jy1 - Jy1y1)) / Ju},
        {Jy1, Juy1 - Ju - Ju * Ju, Jy1y1}};
    for (int a = 0; a < 3; ++a) {
      Eigen::Vector3d recon = Eigen::Vector3d::Zero();
      for (int beta = 0; beta < 3; ++beta)
        recon += named[a][beta] * tf.dual_coeffs.row(beta).transpose();
      Eigen::Vector3d direct = tf.frame_coeffs.row(a).transpose();
      EXPECT_LE((recon - direct).norm(), 1e-9 * (1.0 + direct.norm()));
    }
  }

  // A convenience spot check of the helper.
  JetPoint jp = make_random_jet(3, rng);
  for (int guard = 0; guard < 100; ++guard) {
    try {
      TresseFrame tf = frame().tresse_frame(jp);
      EXPECT_NEAR(tresse_apply(tf, 0, cat.at("J").expr, jp), 1.0, 1e-6);
      EXPECT_NEAR(tresse_apply(tf, 0, cat.at("J_u").expr, jp), 0.0, 1e-6);
      break;
    } catch (const DomainError&) {
      jp = make_random_jet(3, rng);
    }
  }
}

TEST(Frame, TresseChartDegeneratesForConstantControlDerivative) {
  // For F = u the invariant J_u is the constant -2, so (J, J_u, J_y1) is not
  // a chart anywhere and the transition matrix is singular.
  EXPECT_THROW(frame().tresse_frame(jet_of("u", 1, 0, 2, 3)), DomainError);
  EXPECT_THROW(frame().tresse_frame(jet_of("u", 1, 0, 2, 2)),
               std::invalid_argument);
}

TEST(Frame, ClassifyRegularity) {
  SystemF F = SystemF::parse("u");
  std::vector<BasePoint> pts = {{1, 0, 2}, {1, 0, 0}, {0.5, 1, -1}};
  RegularityReport rep = classify_regularity(F, pts);
  ASSERT_EQ(rep.points.size(), 3u);
  EXPECT_FALSE(rep.points[0].singular);
  EXPECT_TRUE(rep.points[0].weakly_regular);
  EXPECT_TRUE(rep.points[0].regular);
  EXPECT_NEAR(rep.points[0].abs_J_u, 2.0, 1e-14);
  EXPECT_TRUE(rep.points[1].singular);
  EXPECT_FALSE(rep.points[1].weakly_regular);
  EXPECT_TRUE(rep.points[2].regular);
  EXPECT_EQ(rep.singular_count, 1u);
  EXPECT_EQ(rep.regular_count, 2u);
  EXPECT_FALSE(rep.irregular);
  EXPECT_NEAR(rep.max_abs_J_u, 2.0, 1e-14);

  // u-degenerate system: weakly regular sample, J_u vanishes on all of it.
  SystemF G = SystemF::parse("y1^2*u");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(0.5, 1.5);
  std::vector<BasePoint> sample;
  for (int i = 0; i < 20; ++i) sample.push_back({d(rng), d(rng), d(rng)});
  RegularityReport grep = classify_regularity(G, sample);
  EXPECT_EQ(grep.weakly_regular_count, 20u);
  EXPECT_EQ(grep.regular_count, 0u);
  EXPECT_TRUE(grep.irregular);
  EXPECT_LE(grep.max_abs_J_u, 1e-12);

  // Points where the system cannot be evaluated are reported, not fatal.
  SystemF H = SystemF::parse("sqrt(y) + u");
  RegularityReport hrep = classify_regularity(H, {{1, -1, 1}, {1, 1, 1}});
  EXPECT_EQ(hrep.failed_count, 1u);
  EXPECT_FALSE(hrep.points[0].evaluable);
  EXPECT_TRUE(hrep.points[1].regular);
}

TEST(Frame, UDegenerateFamilyHasVanishingJu) {
  // F = A(y, y1) + B(u, y)*y1^2 forces J_u to vanish identically.
  SystemF F = SystemF::parse("sin(y) + y1 + (u^2 + y)*y1^2");
  const ExprPtr& Ju = frame().catalog().at("J_u").expr;

  SubstMap jets;
  std::vector<MultiIndex> used;
  collect_jets(Ju, used);
  for (MultiIndex m : used) jets.set(m, F.partial(m));
  EXPECT_TRUE(is_structurally_zero(simplify(substitute(Ju, jets))));

  std::mt19937_64 rng(61);
  std::uniform_real_distribution<double> d(0.5, 1.5);
  std::vector<BasePoint> sample;
  for (int i = 0; i < 20; ++i) sample.push_back({d(rng), d(rng), d(rng)});
  for (const BasePoint& p : sample)
    EXPECT_NEAR(evaluate_at(Ju, F.jet_at(p, 2)), 0.0, 1e-12);
  EXPECT_TRUE(classify_regularity(F, sample).irregular);

  // M vanishes identically for F = y1^2*u.
  SystemF G = SystemF::parse("y1^2*u");
  for (const BasePoint& p : sample)
    EXPECT_NEAR(evaluate_at(frame().M(), G.jet_at(p, 3)), 0.0, 1e-12);
}

TEST(Frame, CatalogMetadataAndBranches) {
  const InvariantCatalog& cat = frame().catalog();
  for (const char* n : InvariantCatalog::regular_branch) EXPECT_TRUE(cat.contains(n));
  for (const char* n : InvariantCatalog::irregular_branch) EXPECT_TRUE(cat.contains(n));

  EXPECT_EQ(cat.at("J").order, 1);
  EXPECT_EQ(cat.at("J_u").order, 2);
  EXPECT_EQ(cat.at("J_y1").order, 2);
  EXPECT_EQ(cat.at("J_uu").order, 3);
  EXPECT_EQ(cat.at("J_uy1").order, 3);
  EXPECT_EQ(cat.at("J_y1y1").order, 3);
  EXPECT_EQ(cat.at("K").order, 3);
  EXPECT_EQ(cat.at("L").order, 3);
  EXPECT_EQ(cat.at("M").order, 3);

  EXPECT_EQ(cat.at("J").provenance, InvariantProvenance::printed_formula);
  EXPECT_EQ(cat.at("J_u").provenance, InvariantProvenance::operator_application);
  EXPECT_EQ(cat.at("K").provenance, InvariantProvenance::structure_coefficient);
  EXPECT_EQ(cat.at("L").provenance, InvariantProvenance::structure_coefficient);
  EXPECT_EQ(cat.at("M").provenance, InvariantProvenance::printed_formula);

  EXPECT_THROW(cat.at("Q"), std::out_of_range);

  InvariantCatalog base;
  base.add("J", InvariantProvenance::printed_formula, frame().J());
  InvariantCatalog extended = derived_invariants(std::move(base));
  for (const char* n : {"J", "J_u", "J_y1", "J_uu", "J_uy1", "J_y1y1"})
    EXPECT_TRUE(extended.contains(n));
  EXPECT_THROW(extended.add("J", InvariantProvenance::printed_formula, frame().J()),
               std::invalid_argument);
}

TEST(Frame, FormulaFixtures) {
  const std::vector<FormulaFixture>& fx = formula_fixtures();
  auto find = [&](const std::string& name) -> const FormulaFixture& {
    for (const auto& f : fx)
      if (f.name == name) return f;
    throw std::out_of_range("missing fixture " + name);
  };

  EXPECT_EQ(find("J").agreement, ZeroStatus::structurally_zero);

  // Transcribed forms with wrong denominators: measurably different from the
  // operator-derived forms, and equal after the single evident repair.
  const FormulaFixture& ju = find("J_u");
  EXPECT_EQ(ju.agreement, ZeroStatus::nonzero);
  EXPECT_GT(ju.max_abs_deviation, 1e-3);
  EXPECT_TRUE(ju.repaired_matches);

  const FormulaFixture& jy1 = find("J_y1");
  EXPECT_EQ(jy1.agreement, ZeroStatus::nonzero);
  EXPECT_GT(jy1.max_abs_deviation, 1e-3);
  EXPECT_TRUE(jy1.repaired_matches);

  const FormulaFixture& al = find("nabla_y coefficient of D_u");
  EXPECT_EQ(al.agreement, ZeroStatus::nonzero);  // unbound symbol z in source
  EXPECT_TRUE(al.repaired_matches);

  // The transcribed M differs from the library form in exactly one term
  // (leading factor f); the difference y1*f_y1y1y1*(1 - f) is visibly
  // nonzero, and the repaired text reproduces the library form.
  const FormulaFixture& m = find("M");
  EXPECT_EQ(m.agreement, ZeroStatus::nonzero);
  EXPECT_GT(m.max_abs_deviation, 1e-3);
  EXPECT_TRUE(m.repaired_matches);

  // The order-3 closed forms are recorded with whatever agreement holds; the
  // comparison itself must be computable.
  EXPECT_TRUE(std::isfinite(find("K").max_abs_deviation));
  EXPECT_TRUE(std::isfinite(find("L").max_abs_deviation));
}

}  // namespace
}  // namespace feedinv
