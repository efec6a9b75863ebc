#pragma once

// Invariant frame for second-order control systems y'' = F(y, y', u).
//
// Builds, once, the symbolic core of the library:
//   - the first-order scalar invariant J = (y1*f_y1 - 2*f)/y1,
//   - three derivations nabla_u, nabla_y, nabla_y1 with invariant
//     coefficients that span the horizontal directions on the regular locus,
//   - the derived invariants J_u, J_y1, J_uu, J_uy1, J_y1y1 obtained by
//     applying the derivations to J,
//   - the structure coefficients of the derivation frame (commutators
//     re-expanded in the frame itself) and from them the two order-3
//     generators K and L,
//   - the order-3 invariant M of the u-degenerate branch (systems with
//     J_u identically zero),
//   - transcribed closed forms kept as cross-check fixtures with their
//     agreement status against the operator-derived expressions,
//   - regularity classification of points and whole systems, and
//   - the numeric dual frame (derivations D/DJ, D/DJ_u, D/DJ_y1 dual to the
//     invariants J, J_u, J_y1) used by chart computations.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "feedinv/differentiate.hpp"
#include "feedinv/expr.hpp"
#include "feedinv/parse.hpp"
#include "feedinv/simplify.hpp"
#include "feedinv/system.hpp"

namespace feedinv {

// ---------------------------------------------------------------------------
// Derivations with invariant coefficients

enum class FrameAxis { u = 0, y = 1, y1 = 2 };

inline const char* to_string(FrameAxis a) {
  switch (a) {
    case FrameAxis::u: return "u";
    case FrameAxis::y: return "y";
    case FrameAxis::y1: return "y1";
  }
  return "?";
}

// First-order operator coeff_u*D_u + coeff_y*D_y + coeff_y1*D_y1 built from
// total derivatives.  Applied to an invariant expression it yields an
// invariant expression.
struct InvariantDerivation {
  std::string name;
  ExprPtr coeff_u, coeff_y, coeff_y1;

  const ExprPtr& coeff(JetDir b) const {
    switch (b) {
      case JetDir::u: return coeff_u;
      case JetDir::y: return coeff_y;
      case JetDir::y1: return coeff_y1;
    }
    return coeff_u;  // unreachable
  }

  // Raw composite without simplification; useful when the cancellation
  // itself is under test.
  ExprPtr apply_raw(const ExprPtr& e) const {
    return coeff_u * total_derivative(e, JetDir::u) +
           coeff_y * total_derivative(e, JetDir::y) +
           coeff_y1 * total_derivative(e, JetDir::y1);
  }

  ExprPtr apply(const ExprPtr& e) const { return simplify(apply_raw(e)); }
};

// Commutator [d1, d2] expanded over the total-derivative basis.  Total
// derivatives commute, so the commutator is again a first-order operator:
//   [d1, d2] = sum_b (d1(c2_b) - d2(c1_b)) D_b.
inline InvariantDerivation commutator(const InvariantDerivation& d1,
                                      const InvariantDerivation& d2) {
  InvariantDerivation r;
  r.name = "[" + d1.name + "," + d2.name + "]";
  r.coeff_u = simplify(d1.apply(d2.coeff_u) - d2.apply(d1.coeff_u));
  r.coeff_y = simplify(d1.apply(d2.coeff_y) - d2.apply(d1.coeff_y));
  r.coeff_y1 = simplify(d1.apply(d2.coeff_y1) - d2.apply(d1.coeff_y1));
  return r;
}

struct FrameDerivations {
  InvariantDerivation nabla_u, nabla_y, nabla_y1;

  const InvariantDerivation& at(FrameAxis a) const {
    switch (a) {
      case FrameAxis::u: return nabla_u;
      case FrameAxis::y: return nabla_y;
      case FrameAxis::y1: return nabla_y1;
    }
    return nabla_u;  // unreachable
  }
};

// ---------------------------------------------------------------------------
// Structure coefficients

// c^gamma_{alpha beta} with [nabla_alpha, nabla_beta] =
// sum_gamma c^gamma_{alpha beta} nabla_gamma, stored for the ordered pairs
// (u,y), (u,y1), (y,y1); the reversed pairs follow by antisymmetry.
class StructureCoefficients {
 public:
  const ExprPtr& at(FrameAxis alpha, FrameAxis beta, FrameAxis gamma) const {
    int a = static_cast<int>(alpha), b = static_cast<int>(beta);
    if (a >= b)
      throw std::invalid_argument(
          "structure coefficients are stored for the ordered pairs "
          "(u,y), (u,y1), (y,y1)");
    return table_[pair_index(a, b)][static_cast<int>(gamma)];
  }

 private:
  friend class InvariantFrame;
  static int pair_index(int a, int b) { return a == 0 ? (b == 1 ? 0 : 1) : 2; }
  std::array<std::array<ExprPtr, 3>, 3> table_;  // [pair][gamma]
};

// ---------------------------------------------------------------------------
// Invariant catalog

enum class InvariantProvenance {
  printed_formula,        // adopted verbatim from a transcribed closed form
  operator_application,   // produced by applying frame derivations
  structure_coefficient,  // extracted from frame commutator coefficients
};

inline const char* to_string(InvariantProvenance p) {
  switch (p) {
    case InvariantProvenance::printed_formula: return "printed-formula";
    case InvariantProvenance::operator_application: return "operator-application";
    case InvariantProvenance::structure_coefficient: return "structure-coefficient";
  }
  return "?";
}

struct InvariantEntry {
  std::string name;
  int order;  // highest jet order appearing in the expression
  InvariantProvenance provenance;
  ExprPtr expr;
};

class InvariantCatalog {
 public:
  // Names valid on the regular locus (J_u != 0), in the order used by the
  // eight-component signature map, and the names valid on the u-degenerate
  // branch (J_u identically 0).
  static constexpr std::array<const char*, 8> regular_branch = {
      "J", "J_u", "J_y1", "J_uu", "J_uy1", "J_y1y1", "K", "L"};
  static constexpr std::array<const char*, 2> irregular_branch = {"J", "M"};

  void add(std::string name, InvariantProvenance prov, ExprPtr expr) {
    if (index_.count(name))
      throw std::invalid_argument("duplicate invariant name: " + name);
    InvariantEntry e{std::move(name), jet_order(expr), prov, std::move(expr)};
    index_.emplace(e.name, entries_.size());
    entries_.push_back(std::move(e));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const InvariantEntry& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::out_of_range("no invariant named '" + name + "' in catalog");
    return entries_[it->second];
  }

  const std::vector<InvariantEntry>& entries() const { return entries_; }

 private:
  std::vector<InvariantEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Cross-check fixtures for transcribed closed forms

// A closed form kept for comparison against the operator-derived expression
// that is actually used.  Known slips in the transcribed source (an unbound
// symbol, a wrong denominator) are repaired in `repaired_text` where the
// evident correction is unambiguous; `note` records the discrepancy.
struct FormulaFixture {
  std::string name;
  std::string printed_text;  // transcription in this library's syntax
  ExprPtr printed;           // parsed, invariant placeholders substituted
  ExprPtr normative;         // the expression the library uses
  ZeroStatus agreement;      // classify_zero(printed - normative)
  double max_abs_deviation = 0.0;
  std::optional<std::string> repaired_text;
  bool repaired_matches = false;  // structural zero after the repair
  std::string note;
};

// ---------------------------------------------------------------------------
// Regularity classification

struct RegularityThresholds {
  double singular_y1 = 1e-8;       // |y1| <= this  ->  singular point
  double weak_f_u = 1e-8;          // |f_u| > this required for weak regularity
  double regular_J_u = 1e-8;       // |J_u| > this required for regularity
  double system_irregular = 1e-10; // max |J_u| below this -> system u-degenerate
};

struct PointRegularity {
  BasePoint point{};
  bool evaluable = true;  // false when the system cannot be evaluated there
  bool singular = false;
  bool weakly_regular = false;
  bool regular = false;
  double abs_J_u = std::numeric_limits<double>::quiet_NaN();
};

struct RegularityReport {
  std::vector<PointRegularity> points;
  std::size_t singular_count = 0;
  std::size_t weakly_regular_count = 0;
  std::size_t regular_count = 0;
  std::size_t failed_count = 0;  // points where evaluation raised an error
  bool has_weakly_regular = false;
  double max_abs_J_u = 0.0;  // over the weakly regular sample points
  bool irregular = false;    // J_u vanishes on the whole weakly regular sample
};

// ---------------------------------------------------------------------------
// Numeric dual frame at a jet

// Frame data evaluated at one jet of order >= 3.  Rows are indexed by
// FrameAxis (u, y, y1) for the derivations and by the chart invariants
// (J, J_u, J_y1) for their duals; columns by the total-derivative basis
// (D_u, D_y, D_y1).
struct TresseFrame {
  Eigen::Matrix3d frame_coeffs;  // row alpha: nabla_alpha over (D_u, D_y, D_y1)
  Eigen::Matrix3d transition;    // (alpha, beta) -> nabla_alpha(J_beta)
  Eigen::Matrix3d dual_coeffs;   // row beta: D/DJ_beta over (D_u, D_y, D_y1)
};

// ---------------------------------------------------------------------------
// The frame singleton

class InvariantFrame {
 public:
  static const InvariantFrame& instance() {
    static const InvariantFrame frame;
    return frame;
  }

  const ExprPtr& J() const { return J_; }
  const FrameDerivations& derivations() const { return derivations_; }
  // D_u-coefficient of nabla_y, constructed so that nabla_y(J) = 0 exactly.
  const ExprPtr& alpha() const { return alpha_; }
  const StructureCoefficients& structure() const { return structure_; }
  const ExprPtr& K() const { return K_; }
  const ExprPtr& L() const { return L_; }
  const ExprPtr& M() const { return M_; }
  const InvariantCatalog& catalog() const { return catalog_; }
  const std::vector<FormulaFixture>& fixtures() const { return fixtures_; }

  // nabla_alpha applied to the chart invariant (J, J_u, J_y1)[b].
  const ExprPtr& transition_entry(FrameAxis a, int b) const {
    return transition_[static_cast<int>(a)][b];
  }

  TresseFrame tresse_frame(const JetPoint& jp) const {
    if (jp.order() < 3)
      throw std::invalid_argument(
          "tresse_frame: jet of order >= 3 required, got order " +
          std::to_string(jp.order()));
    TresseFrame tf;
    for (int a = 0; a < 3; ++a) {
      const InvariantDerivation& d = derivations_.at(static_cast<FrameAxis>(a));
      for (int b = 0; b < 3; ++b) {
        tf.frame_coeffs(a, b) = evaluate_at(d.coeff(kJetDirs[b]), jp);
        tf.transition(a, b) = evaluate_at(transition_[a][b], jp);
      }
    }
    Eigen::FullPivLU<Eigen::Matrix3d> lu(tf.transition);
    if (!lu.isInvertible())
      throw DomainError(
          "chart transition matrix [nabla_a(J_b)] is singular at the "
          "evaluation point; the (J, J_u, J_y1) chart degenerates there");
    tf.dual_coeffs = lu.inverse() * tf.frame_coeffs;
    return tf;
  }

  RegularityReport classify(const SystemF& F, const std::vector<BasePoint>& sample,
                            const RegularityThresholds& tol = {}) const {
    RegularityReport rep;
    rep.points.reserve(sample.size());
    const ExprPtr& Ju = catalog_.at("J_u").expr;
    for (const BasePoint& p : sample) {
      PointRegularity pr;
      pr.point = p;
      if (std::abs(p.y1) <= tol.singular_y1) {
        pr.singular = true;
        ++rep.singular_count;
        rep.points.push_back(pr);
        continue;
      }
      try {
        JetPoint jp = F.jet_at(p, 2);
        double fu = jp.value(MultiIndex{1, 0, 0});
        if (std::abs(fu) > tol.weak_f_u) {
          pr.weakly_regular = true;
          pr.abs_J_u = std::abs(evaluate_at(Ju, jp));
          pr.regular = pr.abs_J_u > tol.regular_J_u;
        }
      } catch (const EvalError&) {
        pr.evaluable = false;
        ++rep.failed_count;
        rep.points.push_back(pr);
        continue;
      }
      if (pr.weakly_regular) {
        ++rep.weakly_regular_count;
        rep.has_weakly_regular = true;
        rep.max_abs_J_u = std::max(rep.max_abs_J_u, pr.abs_J_u);
      }
      if (pr.regular) ++rep.regular_count;
      rep.points.push_back(pr);
    }
    rep.irregular = rep.has_weakly_regular && rep.max_abs_J_u < tol.system_irregular;
    return rep;
  }

  InvariantFrame(const InvariantFrame&) = delete;
  InvariantFrame& operator=(const InvariantFrame&) = delete;

 private:
  InvariantFrame() { build(); }

  static ExprPtr fjet(int du, int dy, int dy1) {
    return jet(MultiIndex{static_cast<std::uint8_t>(du),
                          static_cast<std::uint8_t>(dy),
                          static_cast<std::uint8_t>(dy1)});
  }

  static ExprPtr parse_fixture(const std::string& text) {
    return parse_expression(text,
                            ParseOptions{.allow_jets = true, .allow_symbols = true});
  }

  void build() {
    const ExprPtr y1 = var_y1();
    const ExprPtr f = fjet(0, 0, 0);
    const ExprPtr f_u = fjet(1, 0, 0);

    J_ = simplify((y1 * fjet(0, 0, 1) - num(2) * f) / y1);

    derivations_.nabla_u = {"nabla_u", simplify(y1 / f_u), num(0), num(0)};
    derivations_.nabla_y1 = {"nabla_y1", num(0), num(0), y1};

    // The D_u coefficient of nabla_y is forced by requiring nabla_y(J) = 0:
    //   alpha*D_u(J) + y1*D_y(J) + f*D_y1(J) = 0.
    alpha_ = simplify(num(-1) * (y1 * total_derivative(J_, JetDir::y) +
                                 f * total_derivative(J_, JetDir::y1)) /
                      total_derivative(J_, JetDir::u));
    derivations_.nabla_y = {"nabla_y", alpha_, y1, f};

    // Derived invariants by operator application.
    ExprPtr J_u = derivations_.nabla_u.apply(J_);
    ExprPtr J_y1 = derivations_.nabla_y1.apply(J_);
    ExprPtr J_uu = derivations_.nabla_u.apply(J_u);
    ExprPtr J_uy1 = derivations_.nabla_u.apply(J_y1);
    ExprPtr J_y1y1 = derivations_.nabla_y1.apply(J_y1);

    // Structure coefficients: commutators expanded over total derivatives,
    // then re-expressed in the frame.  The frame matrix is triangular in the
    // order (D_y, D_y1, D_u): only nabla_y has a D_y component, only nabla_y
    // and nabla_y1 have D_y1 components.
    const std::array<std::pair<FrameAxis, FrameAxis>, 3> pairs = {
        std::pair{FrameAxis::u, FrameAxis::y},
        std::pair{FrameAxis::u, FrameAxis::y1},
        std::pair{FrameAxis::y, FrameAxis::y1}};
    for (const auto& [a, b] : pairs) {
      InvariantDerivation comm = commutator(derivations_.at(a), derivations_.at(b));
      ExprPtr cy = simplify(comm.coeff_y / y1);
      ExprPtr cy1 = simplify((comm.coeff_y1 - cy * f) / y1);
      ExprPtr cu = simplify((comm.coeff_u - cy * alpha_) * f_u / y1);
      int pi = StructureCoefficients::pair_index(static_cast<int>(a),
                                                 static_cast<int>(b));
      structure_.table_[pi] = {cu, cy, cy1};
    }

    // Order-3 generators extracted from the commutator coefficients:
    // the D_u components of [nabla_u, nabla_y] and [nabla_y, nabla_y1]
    // carry exactly one new order-3 function each.
    const ExprPtr& c_uy_u = structure_.at(FrameAxis::u, FrameAxis::y, FrameAxis::u);
    const ExprPtr& c_yy1_u = structure_.at(FrameAxis::y, FrameAxis::y1, FrameAxis::u);
    L_ = simplify(J_y1y1 + J_u * c_uy_u);
    K_ = simplify((J_u * J_u * c_yy1_u -
                   J_y1 * (J_y1 - J_u + J_ * J_u) + J_y1y1 * (J_y1 - J_u)) /
                  J_u);

    // Order-3 invariant of the u-degenerate branch.  The transcribed closed
    // form opens with y1*f_y1y1y1, the only term whose weight under the
    // scaling y -> c*y differs from the rest, so that form cannot be
    // invariant (measured transport defect ~1.4).  Restoring a factor f in
    // that one term makes the expression weight-homogeneous, and the result
    // passes the transport oracle on the u-degenerate family to machine
    // precision; every other term and coefficient is kept as transcribed.
    M_ = simplify(f * y1 * fjet(0, 0, 3) + y1 * y1 * fjet(0, 1, 2) -
                  f * fjet(0, 0, 2) - num(2) * y1 * fjet(0, 1, 1) +
                  num(2) * f * fjet(0, 0, 1) / y1 + num(2) * fjet(0, 1, 0) -
                  num(2) * f * f / (y1 * y1));

    catalog_.add("J", InvariantProvenance::printed_formula, J_);
    catalog_.add("J_u", InvariantProvenance::operator_application, J_u);
    catalog_.add("J_y1", InvariantProvenance::operator_application, J_y1);
    catalog_.add("J_uu", InvariantProvenance::operator_application, J_uu);
    catalog_.add("J_uy1", InvariantProvenance::operator_application, J_uy1);
    catalog_.add("J_y1y1", InvariantProvenance::operator_application, J_y1y1);
    catalog_.add("K", InvariantProvenance::structure_coefficient, K_);
    catalog_.add("L", InvariantProvenance::structure_coefficient, L_);
    catalog_.add("M", InvariantProvenance::printed_formula, M_);

    // Entries of nabla_alpha applied to the chart invariants (J, J_u, J_y1);
    // most are already in the catalog, three need fresh applications.
    transition_[0] = {J_u, J_uu, J_uy1};
    transition_[1] = {num(0), derivations_.nabla_y.apply(J_u),
                      derivations_.nabla_y.apply(J_y1)};
    transition_[2] = {J_y1, derivations_.nabla_y1.apply(J_u), J_y1y1};

    build_fixtures();
  }

  void build_fixtures() {
    // Placeholders for invariant names appearing inside transcribed forms
    // map to the operator-derived expressions.
    SubstMap inv;
    inv.set("J", catalog_.at("J").expr);
    inv.set("J_u", catalog_.at("J_u").expr);
    inv.set("J_y1", catalog_.at("J_y1").expr);
    inv.set("J_uu", catalog_.at("J_uu").expr);
    inv.set("J_y1u", catalog_.at("J_uy1").expr);
    inv.set("J_uy1", catalog_.at("J_uy1").expr);
    inv.set("J_y1y1", catalog_.at("J_y1y1").expr);

    auto add_fixture = [&](std::string name, std::string printed_text,
                           const ExprPtr& normative,
                           std::optional<std::string> repaired_text,
                           std::string note) {
      FormulaFixture fx;
      fx.name = std::move(name);
      fx.printed_text = std::move(printed_text);
      fx.printed = substitute(parse_fixture(fx.printed_text), inv);
      fx.normative = normative;
      ExprPtr diff = fx.printed - normative;
      ZeroReport zr = classify_zero(diff);
      fx.agreement = zr.status;
      fx.max_abs_deviation = zr.max_abs;
      fx.repaired_text = std::move(repaired_text);
      if (fx.repaired_text) {
        ExprPtr rep = substitute(parse_fixture(*fx.repaired_text), inv);
        fx.repaired_matches = is_structurally_zero(simplify(rep - normative));
      }
      fx.note = std::move(note);
      fixtures_.push_back(std::move(fx));
    };

    add_fixture("J", "(y1*f_y1 - 2*f)/y1", J_, std::nullopt,
                "adopted verbatim; printed and library forms coincide");

    add_fixture(
        "J_u", "(y1*f_uy1 - 2*f_u)/f", catalog_.at("J_u").expr,
        "(y1*f_uy1 - 2*f_u)/f_u",
        "printed denominator f fails the invariance test; operator application "
        "nabla_u(J) yields denominator f_u, which is used");

    add_fixture(
        "J_y1", "(y1^2*f_y1y1 - 2*y1*f_y1 + 2*f)/y1^2", catalog_.at("J_y1").expr,
        "(y1^2*f_y1y1 - 2*y1*f_y1 + 2*f)/y1",
        "printed denominator y1^2 fails the invariance test; operator "
        "application nabla_y1(J) yields denominator y1, which is used");

    add_fixture(
        "nabla_y coefficient of D_u",
        "-(y1^3*f_uy1 - 2*z^2*f_y + y1^2*f*f_y1y1 - 2*y1*f*f_y1 + 2*f^2)"
        "/(y1*(-2*f_u + y1*f_uy1))",
        alpha_,
        "-(y1^3*f_yy1 - 2*y1^2*f_y + y1^2*f*f_y1y1 - 2*y1*f*f_y1 + 2*f^2)"
        "/(y1*(-2*f_u + y1*f_uy1))",
        "printed form contains an unbound symbol z (evidently y1) and a "
        "leading term y1^3*f_uy1 incompatible with nabla_y(J) = 0 (evidently "
        "y1^3*f_yy1); the coefficient is instead constructed from "
        "nabla_y(J) = 0, which reproduces the repaired form exactly");

    add_fixture(
        "K",
        "y1^2*f_uy1y1 - ((3*y1*J_u - y1*J_y1u)/J_u)*f_yy1 - y1*J_u*f_yy1"
        " + (2*(J_y1u + 2*J_u)/J_u)*f_u + 2*J_u*f_y"
        " - (((J_u*J_y1 + J_y1 - J_y1y1)*J_u + J_y1*J_y1u)/(y1*J_u))*f"
        " + ((J_u - J_y1)*(J_y1y1 + J_y1))/J_u",
        K_, std::nullopt,
        "transcribed closed form; the library form is extracted from the "
        "commutator [nabla_y, nabla_y1] and is guaranteed invariant; the "
        "mixed-derivative placeholder J_y1u is read as nabla_u(nabla_y1(J))");

    add_fixture(
        "L",
        "(y1^2/f_u)*f_uyy1 - ((2 + J_u)*y1/f_u)*f_uy - (y1*J_uu/J_u)*f_yy1"
        " + 2*(J_uu/J_u)*f_y + (J_y1u/y1 - J_y1*J_uu/(y1*J_u))*f"
        " + J_y1 + J_y1y1",
        L_, std::nullopt,
        "transcribed closed form; the library form is extracted from the "
        "commutator [nabla_u, nabla_y] and is guaranteed invariant; the "
        "mixed-derivative placeholder J_y1u is read as nabla_u(nabla_y1(J))");

    add_fixture(
        "M",
        "y1*f_y1y1y1 + y1^2*f_yy1y1 - f*f_y1y1 - 2*y1*f_yy1 + 2*f*f_y1/y1"
        " + 2*f_y - 2*f^2/y1^2",
        M_,
        "f*y1*f_y1y1y1 + y1^2*f_yy1y1 - f*f_y1y1 - 2*y1*f_yy1 + 2*f*f_y1/y1"
        " + 2*f_y - 2*f^2/y1^2",
        "transcribed leading term y1*f_y1y1y1 is the only one with a "
        "different weight under the scaling y -> c*y and breaks invariance "
        "on the u-degenerate family (transport defect ~1.4); a defect-matrix "
        "nullspace search over that family recovers the transcribed "
        "expression exactly once the leading term carries an extra factor f, "
        "so the library uses f*y1*f_y1y1y1 and keeps all other terms");
  }

  ExprPtr J_, alpha_, K_, L_, M_;
  FrameDerivations derivations_;
  StructureCoefficients structure_;
  InvariantCatalog catalog_;
  std::array<std::array<ExprPtr, 3>, 3> transition_;
  std::vector<FormulaFixture> fixtures_;
};

// ---------------------------------------------------------------------------
// Free functions mirroring the frame operations

inline ExprPtr basic_invariant_J() { return InvariantFrame::instance().J(); }

inline const FrameDerivations& frame_derivations() {
  return InvariantFrame::instance().derivations();
}

// Extends a catalog (expected to contain J) with the five operator-derived
// invariants of order 2 and 3.
inline InvariantCatalog derived_invariants(InvariantCatalog catalog) {
  const InvariantCatalog& full = InvariantFrame::instance().catalog();
  for (const char* name : {"J_u", "J_y1", "J_uu", "J_uy1", "J_y1y1"})
    catalog.add(name, InvariantProvenance::operator_application,
                full.at(name).expr);
  return catalog;
}

inline const StructureCoefficients& structure_coefficients() {
  return InvariantFrame::instance().structure();
}

inline std::pair<ExprPtr, ExprPtr> third_order_invariants() {
  const InvariantFrame& fr = InvariantFrame::instance();
  return {fr.K(), fr.L()};
}

inline ExprPtr irregular_invariant_M() { return InvariantFrame::instance().M(); }

inline const InvariantCatalog& invariant_catalog() {
  return InvariantFrame::instance().catalog();
}

inline const std::vector<FormulaFixture>& formula_fixtures() {
  return InvariantFrame::instance().fixtures();
}

inline RegularityReport classify_regularity(const SystemF& F,
                                            const std::vector<BasePoint>& sample,
                                            const RegularityThresholds& tol = {}) {
  return InvariantFrame::instance().classify(F, sample, tol);
}

inline TresseFrame tresse_frame(const JetPoint& jp) {
  return InvariantFrame::instance().tresse_frame(jp);
}

// D/DJ_beta (beta indexing the chart invariants J, J_u, J_y1) applied to an
// expression at a jet; jp.order must exceed the expression's jet order.
inline double tresse_apply(const TresseFrame& tf, int beta, const ExprPtr& e,
                           const JetPoint& jp) {
  double r = 0.0;
  for (int b = 0; b < 3; ++b) {
    if (tf.dual_coeffs(beta, b) == 0.0) continue;
    r += tf.dual_coeffs(beta, b) * evaluate_at(total_derivative(e, kJetDirs[b]), jp);
  }
  return r;
}

}  // namespace feedinv
