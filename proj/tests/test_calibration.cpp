// Tests for the calibration module: invariance-defect oracles, the affine
// ansatz dictionary, linear calibration against transported samples, the
// u-degenerate branch invariant, and the syzygy probe.
//
// Numeric bounds were frozen from probe runs before these tests were
// written.  Measured values sit far below every asserted tolerance:
//   dictionary margins 2.2e-3 / 3.9e-3; K/L reassembly 2.7e-15;
//   calibration holdout 1.2e-15, projections ~1e-14, stability angle
//   1.5e-8; catalog transport residuals <= 2.1e-15 and the deliberately
//   non-invariant probe (raw f under Y = 2y) 0.222; inverse-symmetry gap
//   3.9e-14; u-degenerate family residuals ~1e-15; syzygy spreads 0 /
//   1.6e-10 for matched systems and >= 8.6e-2 across unrelated ones.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "feedinv/calibration.hpp"
#include "feedinv/frame.hpp"
#include "feedinv/parse.hpp"
#include "feedinv/pseudogroup.hpp"
#include "feedinv/simplify.hpp"
#include "feedinv/system.hpp"

namespace feedinv {
namespace {

const InvariantFrame& frame() { return InvariantFrame::instance(); }

// ---------------------------------------------------------------------------
// Invariance-defect oracle

TEST(Calibration, CatalogInvariantsHaveVanishingResidual) {
  const InvariantCatalog& cat = frame().catalog();
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> box(-0.9, 0.9);
  SystemF F = SystemF::parse("u + (u + y/2 + y1/4)^3/16");

  double worst_J = 0.0, worst_K = 0.0;
  int used = 0;
  for (int t = 0; t < 140 && used < 100; ++t) {
    FeedbackMap phi = random_feedback(500 + static_cast<std::uint64_t>(t), 2);
    BasePoint p{box(rng), box(rng), 0.6 + 0.4 * std::abs(box(rng))};
    try {
      worst_J = std::max(worst_J,
                         invariance_residual(cat.at("J").expr, F, phi, p));
      worst_K = std::max(worst_K,
                         invariance_residual(cat.at("K").expr, F, phi, p));
      ++used;
    } catch (const EvalError&) {
      continue;  // transformed point left the regular locus
    }
  }
  EXPECT_GE(used, 100);
  EXPECT_LE(worst_J, 1e-10);
  EXPECT_LE(worst_K, 1e-7);
}

TEST(Calibration, EveryCatalogEntryTransports) {
  SystemF F = SystemF::parse("u*(1 + y1^2/4) + sin(y)*(1 + y1/2)");
  FeedbackMap phi = random_feedback(2024, 2);
  const BasePoint p{0.35, -0.2, 0.8};
  for (const InvariantEntry& e : frame().catalog().entries()) {
    if (e.name == "M") continue;  // defined on the u-degenerate branch
    EXPECT_LE(invariance_residual(e.expr, F, phi, p), 1e-8) << e.name;
  }
}

TEST(Calibration, NonInvariantExpressionIsRejectedByTheOracle) {
  // The right-hand side itself transports with a visible defect under a
  // plain rescaling Y = 2y, so the oracle cannot be vacuous.
  SystemF F = SystemF::parse("u + y*y1/2");
  FeedbackMap phi(parse_expression("2*y"), parse_expression("u"));
  const ExprPtr raw_f = jet(MultiIndex{0, 0, 0});
  double best = 0.0;
  for (double u : {0.4, -0.6})
    for (double y1 : {0.7, 1.1})
      best = std::max(best,
                      invariance_residual(raw_f, F, phi, BasePoint{u, 0.3, y1}));
  EXPECT_GE(best, 0.1);
}

TEST(Calibration, ResidualSymmetricUnderInvertingTheTransform) {
  SystemF F = SystemF::parse("u + u^3/8 + y*y1/2 + u*y*y1/4");
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> box(-0.8, 0.8);
  double worst = 0.0;
  int used = 0;
  for (int t = 0; t < 60 && used < 40; ++t) {
    FeedbackMap phi = random_feedback(900 + static_cast<std::uint64_t>(t), 2);
    BasePoint p{box(rng), box(rng), 0.7 + 0.3 * std::abs(box(rng))};
    try {
      worst = std::max(
          worst, inverse_symmetry_gap(frame().catalog().at("J").expr, F, phi, p));
      ++used;
    } catch (const EvalError&) {
      continue;
    }
  }
  EXPECT_GE(used, 40);
  EXPECT_LE(worst, 1e-9);
}

// ---------------------------------------------------------------------------
// Ansatz dictionary

TEST(Calibration, DictionaryIsNumericallyIndependent) {
  AnsatzBasis full = AnsatzBasis::affine_order3();
  AnsatzBasis low = AnsatzBasis::lower_only();
  EXPECT_EQ(full.order3_count(), 9);
  EXPECT_GT(full.size(), full.order3_count());
  EXPECT_EQ(low.order3_count(), 0);
  EXPECT_LT(low.size(), full.size());
  EXPECT_GT(full.independence_margin(11), 1e-4);
  EXPECT_GT(low.independence_margin(12), 1e-4);
}

TEST(Calibration, DictionaryRepresentsKAndLExactly) {
  AnsatzBasis basis = AnsatzBasis::affine_order3();
  ASSERT_TRUE(basis.has_named("K"));
  ASSERT_TRUE(basis.has_named("L"));
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    JetPoint jp = make_random_jet(3, rng);
    for (const char* nm : {"K", "L"}) {
      const double direct =
          evaluate_at(nm[0] == 'K' ? frame().K() : frame().L(), jp);
      const Eigen::VectorXd& v = basis.named(nm);
      double sum = 0.0;
      for (Eigen::Index c = 0; c < v.size(); ++c)
        if (v(c) != 0.0)
          sum += v(c) *
                 evaluate_at(basis.terms()[static_cast<std::size_t>(c)].expr, jp);
      worst = std::max(worst, std::abs(sum - direct) / (1.0 + std::abs(direct)));
    }
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Calibration, TruncatedGeneratorsAreNotNamedInLowerDictionary) {
  AnsatzBasis low = AnsatzBasis::lower_only();
  for (const char* nm : {"K", "L", "J_uu", "J_uy1", "J_y1y1"})
    EXPECT_FALSE(low.has_named(nm)) << nm;
  for (const char* nm : {"1", "J", "J_u", "J_y1", "J*J_u", "J_y1*J_y1"})
    EXPECT_TRUE(low.has_named(nm)) << nm;
}

// ---------------------------------------------------------------------------
// Samples and calibration

TEST(Calibration, SamplerFillsEveryRequestedSlot) {
  auto samples = make_calibration_samples(default_calibration_corpus(), 101, 4, 6);
  ASSERT_EQ(samples.size(), 24u);
  const ExprPtr& Ju = frame().catalog().at("J_u").expr;
  for (const CalibrationTriple& s : samples) {
    SystemF G = apply_feedback(s.system, s.transform);
    const BasePoint q = transform_point(s.transform, s.point);
    EXPECT_GE(std::abs(q.y1), 0.2);
    EXPECT_GE(std::abs(evaluate_at(Ju, G.jet_at(s.point, 2))), 0.1);
    EXPECT_GE(std::abs(evaluate_at(Ju, s.system.jet_at(q, 2))), 0.1);
  }
  EXPECT_THROW(make_calibration_samples({}, 1, 1, 1), std::invalid_argument);
}

TEST(Calibration, RecoversTheFullInvariantSpace) {
  AnsatzBasis basis = AnsatzBasis::affine_order3();
  auto samples = make_calibration_samples(default_calibration_corpus(), 101, 12, 24);
  ASSERT_EQ(samples.size(), 288u);
  CalibrationResult res = calibrate_affine_invariants(basis, samples);

  // Fifteen independent invariant combinations live in the dictionary: the
  // five order-3 generators and the ten lower-order products.
  EXPECT_EQ(static_cast<int>(res.nullspace.size()), 15);
  EXPECT_EQ(res.dropped, 0);
  EXPECT_EQ(static_cast<int>(res.expressions.size()), 15);
  EXPECT_EQ(res.pure_order3_dimension, 5);
  EXPECT_LE(res.K_projection_residual, 1e-6);
  EXPECT_LE(res.L_projection_residual, 1e-6);
  for (double r : res.holdout_residuals) EXPECT_LE(r, 1e-6);
  EXPECT_TRUE(std::isfinite(res.condition));
  EXPECT_EQ(res.train_samples, 216);
  EXPECT_EQ(res.holdout_samples, 72);
  // The spectrum must separate cleanly at the nullspace cutoff.
  const auto n = res.singular_values.size();
  ASSERT_GE(n, 16u);
  EXPECT_LE(res.singular_values[n - 15] / res.singular_values[0], 1e-10);
  EXPECT_GE(res.singular_values[n - 16] / res.singular_values[0], 1e-6);
}

TEST(Calibration, RecoveredSpaceStableAcrossDisjointSamples) {
  AnsatzBasis basis = AnsatzBasis::affine_order3();
  auto s1 = make_calibration_samples(default_calibration_corpus(), 101, 12, 24);
  auto s2 = make_calibration_samples(default_calibration_corpus(), 202, 12, 24);
  CalibrationResult r1 = calibrate_affine_invariants(basis, s1);
  CalibrationResult r2 = calibrate_affine_invariants(basis, s2);
  ASSERT_EQ(r1.nullspace.size(), r2.nullspace.size());
  EXPECT_LE(max_principal_angle(r1.nullspace, r2.nullspace), 1e-4);
}

TEST(Calibration, WithoutOrder3ColumnsOnlyLowerProductsSurvive) {
  AnsatzBasis low = AnsatzBasis::lower_only();
  auto samples = make_calibration_samples(default_calibration_corpus(), 101, 12, 24);
  CalibrationResult res = calibrate_affine_invariants(low, samples);
  EXPECT_EQ(static_cast<int>(res.nullspace.size()), 10);
  EXPECT_EQ(res.pure_order3_dimension, 0);
  EXPECT_EQ(res.dropped, 0);

  // Every named product must be contained in the recovered span.
  for (const auto& [name, v] : low.named_vectors()) {
    Eigen::VectorXd residual = v;
    for (const Eigen::VectorXd& b : res.nullspace) residual -= b.dot(v) * b;
    EXPECT_LE(residual.norm() / v.norm(), 1e-6) << name;
  }
}

TEST(Calibration, CalibrationErrorPaths) {
  AnsatzBasis basis = AnsatzBasis::affine_order3();
  auto samples = make_calibration_samples(default_calibration_corpus(), 101, 2, 4);
  // 8 samples cannot exceed twice the dictionary size.
  EXPECT_THROW(calibrate_affine_invariants(basis, samples),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// The u-degenerate branch invariant

TEST(Calibration, DegenerateBranchInvariantSuiteTransports) {
  // F = A(y,y1) + B(u,y)*y1^2 keeps J_u identically zero; on that family the
  // order-3 invariant and its two frame derivatives must transport.
  SystemF F = SystemF::parse("sin(y) + y*y1^3/8 + (u/2 + u^3/24 + u*y/4)*y1^2");
  const ExprPtr& Ju = frame().catalog().at("J_u").expr;
  const ExprPtr M = frame().M();
  const ExprPtr My1 = simplify(frame().derivations().nabla_y1.apply(M));
  const ExprPtr Mu = simplify(frame().derivations().nabla_u.apply(M));
  EXPECT_EQ(jet_order(M), 3);
  EXPECT_EQ(jet_order(My1), 4);
  EXPECT_EQ(jet_order(Mu), 4);

  double worst_M = 0.0, worst_My1 = 0.0, worst_Mu = 0.0, max_Ju = 0.0;
  for (int t = 0; t < 30; ++t) {
    FeedbackMap phi = random_feedback(3000 + static_cast<std::uint64_t>(t), 2);
    SystemF G = apply_feedback(F, phi);
    BasePoint p{0.5 - 0.03 * t, 0.2 + 0.03 * t,
                (t % 2 ? 1.0 : -1.0) * (0.7 + 0.02 * t)};
    worst_M = std::max(worst_M, invariance_residual(M, F, G, phi, p));
    worst_My1 = std::max(worst_My1, invariance_residual(My1, F, G, phi, p));
    worst_Mu = std::max(worst_Mu, invariance_residual(Mu, F, G, phi, p));
    max_Ju = std::max(max_Ju, std::abs(evaluate_at(Ju, F.jet_at(p, 2))));
  }
  EXPECT_LE(max_Ju, 1e-10);  // the family really is u-degenerate
  EXPECT_LE(worst_M, 1e-7);
  EXPECT_LE(worst_My1, 1e-7);
  EXPECT_LE(worst_Mu, 1e-7);
}

// ---------------------------------------------------------------------------
// Syzygy probe

TEST(Calibration, SyzygyHoldsOnASystemWithASelfEquivalence) {
  // F(-u,-y,-y1) = -F, so (Y,U) = (-y,-u) maps the system to itself and the
  // reflected point carries the same signature: every chart anchor has an
  // on-sheet partner and the syzygy combination must agree there.
  SystemF odd = SystemF::parse("u + u^3/8 + sin(y) + u*y1^2/4");
  for (const char* cand : {"J_u", "J_y1"}) {
    SyzygyReport rep = syzygy_probe({odd}, cand);
    EXPECT_EQ(rep.candidate, cand);
    EXPECT_EQ(rep.bins.size(), 12u) << cand;
    EXPECT_EQ(rep.underpopulated, 0) << cand;
    EXPECT_EQ(rep.off_sheet, 0) << cand;
    EXPECT_TRUE(rep.consistent) << cand;
    EXPECT_LE(rep.max_spread, 1e-6) << cand;
  }
}

TEST(Calibration, SyzygyConsistentAcrossAnEquivalentPair) {
  SystemF base = SystemF::parse("u + (u + y/2 + y1/4)^3/16");
  FeedbackMap phi = random_feedback(2026, 2, 0.5);
  SystemF moved = apply_feedback(base, phi);
  for (const char* cand : {"J_u", "J_y1"}) {
    SyzygyReport rep = syzygy_probe({base, moved}, cand);
    EXPECT_EQ(rep.bins.size(), 12u) << cand;
    EXPECT_EQ(rep.underpopulated, 0) << cand;
    EXPECT_EQ(rep.off_sheet, 0) << cand;
    EXPECT_TRUE(rep.consistent) << cand;
    EXPECT_LE(rep.max_spread, 1e-6) << cand;
  }
}

TEST(Calibration, UnrelatedPairSharesNoSignaturePoints) {
  // Matching the three chart values across unrelated systems never matches
  // the full signature, so no bin can certify the dependence; the spread
  // across those chart-only matches stays visibly large.
  SystemF base = SystemF::parse("u + (u + y/2 + y1/4)^3/16");
  SystemF other = SystemF::parse("u*exp(y/4) + y1*sin(y) + u^2*y1/8");
  for (const char* cand : {"J_u", "J_y1"}) {
    SyzygyReport rep = syzygy_probe({base, other}, cand);
    EXPECT_FALSE(rep.consistent) << cand;
    EXPECT_GE(rep.bins.size(), 4u) << cand;
    EXPECT_EQ(rep.off_sheet, static_cast<int>(rep.bins.size())) << cand;
    EXPECT_GE(rep.max_spread_all, 1e-3) << cand;
  }
}

TEST(Calibration, SyzygyErrorPaths) {
  EXPECT_THROW(syzygy_probe({}, "J_u"), std::invalid_argument);
  SystemF F = SystemF::parse("u");
  EXPECT_THROW(syzygy_probe({F}, "J_yy"), std::invalid_argument);
}

}  // namespace
}  // namespace feedinv
