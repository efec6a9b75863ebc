#pragma once

// Feedback transformations (u, y, t) -> (U(u, y), Y(y), t): their pullback
// action on systems y'' = F(y, y', u), the induced point map on (u, y, y1),
// composition, infinitesimal fields a(y)*d_y + b(u,y)*d_u with their
// generating functions and prolongations to jet space, and the numeric
// dimension of group orbits in finite jet order.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <tuple>
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
// Feedback maps

class FeedbackMap {
 public:
  // Y must be a function of y alone, U a function of (u, y); both free of
  // jet coordinates and free symbols, with Y and U genuinely depending on
  // y resp. u (nonvanishing structural derivative).
  FeedbackMap(ExprPtr Y, ExprPtr U, std::string label = {})
      : label_(std::move(label)) {
    if (!Y || !U) throw std::invalid_argument("FeedbackMap: null expression");
    check_component("Y", Y, /*allow_u=*/false);
    check_component("U", U, /*allow_u=*/true);
    Y_ = simplify(std::move(Y));
    U_ = simplify(std::move(U));
    Yp_ = simplify(partial_derivative(Y_, BaseVar::y));
    Ypp_ = simplify(partial_derivative(Yp_, BaseVar::y));
    Uu_ = simplify(partial_derivative(U_, BaseVar::u));
    if (is_structurally_zero(Yp_))
      throw std::invalid_argument("FeedbackMap: Y must depend on y");
    if (is_structurally_zero(Uu_))
      throw std::invalid_argument("FeedbackMap: U must depend on u");
    if (label_.empty()) label_ = "(" + to_text(Y_) + ", " + to_text(U_) + ")";
  }

  static FeedbackMap identity() { return FeedbackMap(var_y(), var_u(), "identity"); }

  static FeedbackMap parse(const std::string& y_text, const std::string& u_text,
                           std::string label = {}) {
    return FeedbackMap(parse_system_text(y_text), parse_system_text(u_text),
                       std::move(label));
  }

  const ExprPtr& Y() const { return Y_; }
  const ExprPtr& U() const { return U_; }
  const ExprPtr& Y_prime() const { return Yp_; }
  const ExprPtr& Y_second() const { return Ypp_; }
  const ExprPtr& U_u() const { return Uu_; }
  const std::string& label() const { return label_; }

  // The map is admissible only where Y' and U_u are nonzero; this checks a
  // concrete sample and throws DomainError on violation.
  void require_valid_at(const std::vector<BasePoint>& pts, double tol = 1e-8) const {
    for (const BasePoint& p : pts) {
      EvalContext ctx;
      ctx.u = p.u;
      ctx.y = p.y;
      ctx.y1 = p.y1;
      if (std::abs(evaluate(Yp_, ctx)) <= tol)
        throw DomainError("FeedbackMap " + label_ + ": Y' vanishes near y=" +
                          std::to_string(p.y));
      if (std::abs(evaluate(Uu_, ctx)) <= tol)
        throw DomainError("FeedbackMap " + label_ + ": dU/du vanishes near (u,y)=(" +
                          std::to_string(p.u) + "," + std::to_string(p.y) + ")");
    }
  }

 private:
  static void check_component(const char* name, const ExprPtr& e, bool allow_u) {
    if (jet_order(e) >= 0)
      throw std::invalid_argument(std::string("FeedbackMap: ") + name +
                                  " must not contain jet coordinates");
    if (contains_symbol(e))
      throw std::invalid_argument(std::string("FeedbackMap: ") + name +
                                  " must not contain free symbols");
    if (contains_base(e, BaseVar::y1))
      throw std::invalid_argument(std::string("FeedbackMap: ") + name +
                                  " must not depend on y1");
    if (!allow_u && contains_base(e, BaseVar::u))
      throw std::invalid_argument(std::string("FeedbackMap: ") + name +
                                  " must not depend on u");
  }

  ExprPtr Y_, U_, Yp_, Ypp_, Uu_;
  std::string label_;
};

// The induced map on the reduced phase space: (u, y, y1) ->
// (U(u,y), Y(y), Y'(y)*y1).  All invariance statements are relative to this
// correspondence: an invariant I satisfies
//   I^{transformed F}(p) = I^F(transform_point(phi, p)).
inline BasePoint transform_point(const FeedbackMap& phi, const BasePoint& p) {
  EvalContext ctx;
  ctx.u = p.u;
  ctx.y = p.y;
  ctx.y1 = p.y1;
  return BasePoint{evaluate(phi.U(), ctx), evaluate(phi.Y(), ctx),
                   evaluate(phi.Y_prime(), ctx) * p.y1};
}

// Numeric inverse of the point map: the p with transform_point(phi, p) = q.
// Y is inverted by 1D Newton in y, then U by 1D Newton in u at that y, and
// y1 follows from q.y1 = Y'(y)*y1.  `guess` seeds the iterations (defaults
// to q itself, which converges wherever the map is a mild perturbation).
inline BasePoint invert_point(const FeedbackMap& phi, const BasePoint& q,
                              std::optional<BasePoint> guess = std::nullopt) {
  auto newton1d = [&](const ExprPtr& fun, const ExprPtr& der, double target,
                      double x0, bool x_is_u, double other_y, const char* what) {
    double x = x0;
    for (int it = 0; it < 80; ++it) {
      EvalContext ctx;
      ctx.u = x_is_u ? x : 0.0;
      ctx.y = x_is_u ? other_y : x;
      double r = evaluate(fun, ctx) - target;
      if (std::abs(r) <= 1e-13 * (1.0 + std::abs(target))) return x;
      double d = evaluate(der, ctx);
      if (!(std::abs(d) > 1e-12))
        throw DomainError(std::string("invert_point: derivative of ") + what +
                          " vanishes near the iterate");
      double step = r / d;
      const double cap = 1.0;
      if (std::abs(step) > cap) step = step > 0 ? cap : -cap;
      x -= step;
    }
    throw DomainError(std::string("invert_point: no convergence inverting ") + what);
  };
  const double y = newton1d(phi.Y(), phi.Y_prime(), q.y, guess ? guess->y : q.y,
                            false, 0.0, "Y");
  const double u = newton1d(phi.U(), phi.U_u(), q.u, guess ? guess->u : q.u,
                            true, y, "U");
  EvalContext ctx;
  ctx.y = y;
  const double yp = evaluate(phi.Y_prime(), ctx);
  if (!(std::abs(yp) > 1e-12))
    throw DomainError("invert_point: Y' vanishes at the recovered base point");
  return BasePoint{u, y, q.y1 / yp};
}

// Pullback action on systems:
//   (phi . F)(y, y1, u) = F(Y, Y'*y1, U)/Y' - (Y''/Y')*y1^2.
inline SystemF apply_feedback(const SystemF& F, const FeedbackMap& phi) {
  SubstMap m;
  m.set(BaseVar::u, phi.U());
  m.set(BaseVar::y, phi.Y());
  m.set(BaseVar::y1, phi.Y_prime() * var_y1());
  ExprPtr composed = substitute(F.expr(), m);
  ExprPtr y1 = var_y1();
  ExprPtr g = simplify(composed / phi.Y_prime() -
                       (phi.Y_second() / phi.Y_prime()) * y1 * y1);
  std::string label = F.label().empty() ? "F" : F.label();
  return SystemF(g, label + " via " + phi.label(), F.max_jet_order());
}

// Point-composition: the returned map sends p to outer(inner(p)), i.e.
//   Y = Y_outer(Y_inner(y)),  U = U_outer(U_inner(u,y), Y_inner(y)).
// On points the action is covariant,
//   transform_point(compose(o, i), p) = transform_point(o, transform_point(i, p));
// on systems the pullback is contravariant,
//   apply_feedback(apply_feedback(F, o), i) = apply_feedback(F, compose(o, i)).
inline FeedbackMap compose(const FeedbackMap& outer, const FeedbackMap& inner) {
  SubstMap my;
  my.set(BaseVar::y, inner.Y());
  SubstMap mu;
  mu.set(BaseVar::u, inner.U());
  mu.set(BaseVar::y, inner.Y());
  return FeedbackMap(substitute(outer.Y(), my), substitute(outer.U(), mu),
                     outer.label() + " after " + inner.label());
}

// ---------------------------------------------------------------------------
// Infinitesimal fields

struct FieldParams {
  ExprPtr a;  // function of y
  ExprPtr b;  // function of (u, y)
};

namespace detail {
inline void check_field_params(const FieldParams& fp) {
  if (!fp.a || !fp.b) throw std::invalid_argument("FieldParams: null expression");
  for (const auto& [name, e, allow_u] :
       {std::tuple{"a", fp.a, false}, std::tuple{"b", fp.b, true}}) {
    if (jet_order(e) >= 0 || contains_symbol(e) || contains_base(e, BaseVar::y1) ||
        (!allow_u && contains_base(e, BaseVar::u)))
      throw std::invalid_argument(std::string("FieldParams: ") + name +
                                  " must be a plain function of " +
                                  (allow_u ? "(u, y)" : "y"));
  }
}
}  // namespace detail

// Generating function of the field a(y)*d_y + b(u,y)*d_u acting on systems:
//   phi = a''*y1^2 + a'*f - b*f_u - a*f_y - a'*y1*f_y1.
inline ExprPtr generating_function(const FieldParams& fp) {
  detail::check_field_params(fp);
  ExprPtr ap = partial_derivative(fp.a, BaseVar::y);
  ExprPtr app = partial_derivative(ap, BaseVar::y);
  ExprPtr y1 = var_y1();
  ExprPtr f = jet(MultiIndex{0, 0, 0});
  ExprPtr f_u = jet(MultiIndex{1, 0, 0});
  ExprPtr f_y = jet(MultiIndex{0, 1, 0});
  ExprPtr f_y1 = jet(MultiIndex{0, 0, 1});
  return simplify(app * y1 * y1 + ap * f - fp.b * f_u - fp.a * f_y -
                  ap * y1 * f_y1);
}

// Prolongation of the field to jet space.  Acting on an expression e,
//   X(e) = sum_sigma D_sigma(phi) * de/df_sigma
//        + b*D_u(e) + a*D_y(e) + a'*y1*D_y1(e),
// with phi the generating function and D_sigma iterated total derivatives.
// The iterated derivatives are cached per field; an instance is cheap to
// reuse across many expressions and jets (not safe for concurrent mutation —
// call ensure_order first if sharing across threads).
class ProlongedField {
 public:
  explicit ProlongedField(FieldParams fp) : fp_(std::move(fp)) {
    detail::check_field_params(fp_);
    base_coeff_[0] = fp_.b;
    base_coeff_[1] = fp_.a;
    base_coeff_[2] = simplify(partial_derivative(fp_.a, BaseVar::y) * var_y1());
    dphi_.push_back(generating_function(fp_));
  }

  const FieldParams& params() const { return fp_; }

  // Fills the D_sigma(phi) cache for all |sigma| <= k.
  void ensure_order(int k) {
    const int want = MultiIndex::count_up_to(k);
    while (static_cast<int>(dphi_.size()) < want) {
      const int id = static_cast<int>(dphi_.size());
      MultiIndex m = MultiIndex::from_id(id);
      const JetDir dir = m.du > 0 ? JetDir::u : m.dy > 0 ? JetDir::y : JetDir::y1;
      const ExprPtr& src = dphi_[static_cast<std::size_t>(m.minus(dir)->id())];
      dphi_.push_back(simplify(total_derivative(src, dir)));
    }
  }

  const ExprPtr& dphi(MultiIndex sigma) {
    ensure_order(sigma.order());
    return dphi_[static_cast<std::size_t>(sigma.id())];
  }

  // Numeric value of X(e) at a jet, evaluating the defining sum term by term
  // (no symbolic cancellation).
  double apply(const ExprPtr& e, const JetPoint& jp) {
    const int eo = jet_order(e);
    if (eo >= 0 && jp.order() < eo + 1)
      throw std::invalid_argument(
          "ProlongedField::apply: expression of jet order " + std::to_string(eo) +
          " requires a jet of order >= " + std::to_string(eo + 1) + ", got " +
          std::to_string(jp.order()));
    double v = 0.0;
    std::vector<MultiIndex> jets_in_e;
    collect_jets(e, jets_in_e);
    for (MultiIndex m : jets_in_e)
      v += evaluate_at(dphi(m), jp) * evaluate_at(partial_derivative(e, m), jp);
    for (int d = 0; d < 3; ++d)
      v += evaluate_at(base_coeff_[d], jp) *
           evaluate_at(total_derivative(e, kJetDirs[d]), jp);
    return v;
  }

  // X(e) as one simplified expression (used for exact vanishing checks).
  ExprPtr apply_symbolic(const ExprPtr& e) {
    std::vector<MultiIndex> jets_in_e;
    collect_jets(e, jets_in_e);
    std::vector<ExprPtr> terms;
    for (MultiIndex m : jets_in_e)
      terms.push_back(dphi(m) * partial_derivative(e, m));
    for (int d = 0; d < 3; ++d)
      terms.push_back(base_coeff_[d] * total_derivative(e, kJetDirs[d]));
    return simplify(sum(std::move(terms)));
  }

 private:
  FieldParams fp_;
  std::array<ExprPtr, 3> base_coeff_;  // (b, a, a'*y1) over (D_u, D_y, D_y1)
  std::vector<ExprPtr> dphi_;          // D_sigma(phi) indexed by sigma id
};

inline double prolonged_field_apply(const FieldParams& fp, const ExprPtr& e,
                                    const JetPoint& jp) {
  ProlongedField field(fp);
  return field.apply(e, jp);
}

// ---------------------------------------------------------------------------
// Orbit dimension

// Monomial basis of fields whose span at a point equals the span of all
// order-k prolonged fields there: a in {1, y, ..., y^{k+2}} (with b = 0) and
// b in {u^i*y^j : i + j <= k} (with a = 0).  Prolongations depend on the
// (k+2)-jet of a and the k-jet of b only, so higher monomials cannot enlarge
// the span.
inline std::vector<FieldParams> orbit_basis_fields(int k) {
  std::vector<FieldParams> fields;
  for (int i = 0; i <= k + 2; ++i)
    fields.push_back({power(var_y(), i), num(0)});
  for (int i = 0; i <= k; ++i)
    for (int j = 0; i + j <= k; ++j)
      fields.push_back({num(0), power(var_u(), i) * power(var_y(), j)});
  return fields;
}

// Rows: the given fields; columns: the coordinates u, y, y1 followed by
// f_sigma for |sigma| <= k.  Entry = value of the prolonged field applied to
// the coordinate function at jp.  Jets of order exactly k are zero-padded to
// order k+1: the padding values cancel exactly between D_sigma(phi) and the
// base-direction terms, so they do not influence the matrix.
inline Eigen::MatrixXd orbit_matrix(const JetPoint& jp, int k,
                                    std::vector<ProlongedField>& fields) {
  if (k < 1) throw std::invalid_argument("orbit_matrix: order must be >= 1");
  if (jp.order() < k)
    throw std::invalid_argument("orbit_matrix: jet of order >= " +
                                std::to_string(k) + " required");
  const JetPoint* use = &jp;
  std::optional<JetPoint> padded;
  if (jp.order() == k) {
    std::vector<double> vals(static_cast<std::size_t>(MultiIndex::count_up_to(k + 1)),
                             0.0);
    for (int id = 0; id < MultiIndex::count_up_to(k); ++id)
      vals[static_cast<std::size_t>(id)] = jp.value(MultiIndex::from_id(id));
    padded.emplace(jp.point(), k + 1, std::move(vals));
    use = &*padded;
  }

  std::vector<ExprPtr> columns = {var_u(), var_y(), var_y1()};
  for (int id = 0; id < MultiIndex::count_up_to(k); ++id)
    columns.push_back(jet(MultiIndex::from_id(id)));

  Eigen::MatrixXd m(static_cast<Eigen::Index>(fields.size()),
                    static_cast<Eigen::Index>(columns.size()));
  for (std::size_t r = 0; r < fields.size(); ++r)
    for (std::size_t c = 0; c < columns.size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          fields[r].apply(columns[c], *use);
  return m;
}

struct OrbitReport {
  int order = 0;
  BasePoint point{};
  int rank = 0;
  int expected = 0;  // (k+2)(k+3)/2 at weakly regular jets
  int columns = 0;   // dimension of the ambient jet space
  std::vector<double> singular_values;
};

inline OrbitReport orbit_report(const JetPoint& jp, int k) {
  if (std::abs(jp.point().y1) <= 1e-8)
    throw DomainError("orbit dimension: point has y1 = 0 (singular locus)");
  if (std::abs(jp.value(MultiIndex{1, 0, 0})) <= 1e-8)
    throw DomainError("orbit dimension: point has f_u = 0 (not weakly regular)");

  // The monomial field basis and its derivative caches are shared across
  // calls; the lock also serializes cache growth.
  static std::mutex mu;
  static std::map<int, std::vector<ProlongedField>> basis;
  std::lock_guard<std::mutex> lock(mu);
  auto it = basis.find(k);
  if (it == basis.end()) {
    std::vector<ProlongedField> fields;
    for (FieldParams& fp : orbit_basis_fields(k)) fields.emplace_back(std::move(fp));
    for (ProlongedField& f : fields) f.ensure_order(k);
    it = basis.emplace(k, std::move(fields)).first;
  }

  Eigen::MatrixXd m = orbit_matrix(jp, k, it->second);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  OrbitReport rep;
  rep.order = k;
  rep.point = jp.point();
  rep.columns = static_cast<int>(m.cols());
  rep.expected = (k + 2) * (k + 3) / 2;
  rep.singular_values.assign(s.data(), s.data() + s.size());
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > 1e-8 * s(0)) ++rep.rank;
  return rep;
}

inline int orbit_dimension(const JetPoint& jp, int k) {
  return orbit_report(jp, k).rank;
}

// ---------------------------------------------------------------------------
// Random feedback maps

// Reproducible feedback maps with certified slopes: on the box
// |y|, |u| <= 3 the construction keeps |Y'| >= 0.1 and |dU/du| >= 0.1.
// `complexity` 0 gives affine maps, 1 adds quadratic terms, >= 2 adds cubic
// Y and quadratic-in-u coupling.  `strength` in [0, 1] scales all departures
// from the identity; small values give near-identity maps.
inline FeedbackMap random_feedback(std::uint64_t seed, int complexity = 2,
                                   double strength = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  strength = std::min(std::max(strength, 0.0), 1.0);
  // Coefficients are snapped to multiples of 1/32 so that arithmetic stays
  // exact: composing two maps substitutes one cubic into another, and the
  // coefficient denominators multiply (up to ~32^9 for the degree-9
  // composite, still well inside 64-bit rationals).  Finer snapping
  // overflows exact composition.
  auto snap = [](double v) {
    return num(Rational(static_cast<std::int64_t>(std::llround(v * 32.0)), 32));
  };

  // Y = c0 + s*y + q2*y^2 + q3*y^3 with |2*q2*y + 3*q3*y^2| <= 0.57*|s| on
  // |y| <= 3, so |Y'| >= 0.43*|s| >= 0.3.
  double s = 1.0 + 0.3 * strength * unit(rng);
  if (strength > 0.75 && coin(rng)) s = -s;
  const double c0 = 0.5 * strength * unit(rng);
  const double q2 = complexity >= 1 ? 0.05 * strength * s * unit(rng) : 0.0;
  const double q3 = complexity >= 2 ? 0.01 * strength * s * unit(rng) : 0.0;
  ExprPtr y = var_y();
  ExprPtr Y = snap(c0) + snap(s) * y + snap(q2) * y * y + snap(q3) * y * y * y;

  // U = d0 + t*u + r1*y + r4*y^2 + r2*u*y + r3*u^2 with
  // |r2*y + 2*r3*u| <= 0.27*|t| on the box, so |dU/du| >= 0.73*|t| >= 0.5.
  double t = 1.0 + 0.3 * strength * unit(rng);
  if (strength > 0.75 && coin(rng)) t = -t;
  const double d0 = 0.5 * strength * unit(rng);
  const double r1 = 0.5 * strength * unit(rng);
  const double r4 = complexity >= 1 ? 0.3 * strength * unit(rng) : 0.0;
  const double r2 = complexity >= 1 ? 0.05 * strength * t * unit(rng) : 0.0;
  const double r3 = complexity >= 2 ? 0.02 * strength * t * unit(rng) : 0.0;
  ExprPtr u = var_u();
  ExprPtr U = snap(d0) + snap(t) * u + snap(r1) * y + snap(r4) * y * y +
              snap(r2) * u * y + snap(r3) * u * u;

  return FeedbackMap(std::move(Y), std::move(U),
                     "random_feedback(" + std::to_string(seed) + ")");
}

}  // namespace feedinv
