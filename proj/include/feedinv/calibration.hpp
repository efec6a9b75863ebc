#pragma once

// Randomized invariance oracle for candidate invariants, linear calibration
// of invariants that are affine along the top-order jet fibre, and numeric
// probing of the differential syzygy between the third-order generators.
//
// Invariance is always tested pointwise through the point-map correspondence
// (value on the transformed system at p versus value on the original at the
// transformed point), never by symbolic quantification over all transforms.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "feedinv/frame.hpp"
#include "feedinv/pseudogroup.hpp"
#include "feedinv/simplify.hpp"
#include "feedinv/system.hpp"

namespace feedinv {

// ---------------------------------------------------------------------------
// Invariance oracle

struct InvarianceResidual {
  std::string invariant;
  std::string system;
  std::uint64_t transform_seed = 0;
  BasePoint point{};
  double residual = 0.0;
};

// |I^{transformed}(p) - I^{original}(phi(p))| / (1 + |I^{original}(phi(p))|),
// with `transformed` precomputed by the caller (it is reused across points).
inline double invariance_residual(const ExprPtr& I, const SystemF& original,
                                  const SystemF& transformed,
                                  const FeedbackMap& phi, const BasePoint& p) {
  const int ord = std::max(jet_order(I), 0);
  const double lhs = evaluate_at(I, transformed.jet_at(p, ord));
  const double rhs = evaluate_at(I, original.jet_at(transform_point(phi, p), ord));
  const double r = std::abs(lhs - rhs) / (1.0 + std::abs(rhs));
  if (!std::isfinite(r))
    throw DomainError("invariance residual is not finite for system '" +
                      original.label() + "'");
  return r;
}

inline double invariance_residual(const ExprPtr& I, const SystemF& F,
                                  const FeedbackMap& phi, const BasePoint& p) {
  return invariance_residual(I, F, apply_feedback(F, phi), phi, p);
}

// Gap between the forward residual of (F, phi) at p and the residual of the
// inverse transformation applied to the transformed system at phi(p).  The
// inverse point map is computed numerically, so a small gap certifies both
// the invariance statement and the point inversion.
inline double inverse_symmetry_gap(const ExprPtr& I, const SystemF& F,
                                   const FeedbackMap& phi, const BasePoint& p) {
  const int ord = std::max(jet_order(I), 0);
  SystemF G = apply_feedback(F, phi);
  const BasePoint q = transform_point(phi, p);
  const double at_p = evaluate_at(I, G.jet_at(p, ord));
  const double at_q = evaluate_at(I, F.jet_at(q, ord));
  const double forward = std::abs(at_p - at_q) / (1.0 + std::abs(at_q));
  const BasePoint back = invert_point(phi, q);
  const double at_back = evaluate_at(I, G.jet_at(back, ord));
  const double inverse = std::abs(at_q - at_back) / (1.0 + std::abs(at_back));
  return std::abs(forward - inverse);
}

// ---------------------------------------------------------------------------
// Affine ansatz dictionary

// Candidate terms for invariants affine along the order-3 fibre, at the
// granularity of affine decomposition: for each source expression and each
// order-3 jet coordinate, one column holding (coefficient x jet coordinate);
// one column per affine remainder; one column per lower-order invariant
// product.  Columns are deduplicated by canonical text.  Finer monomial-level
// splitting was rejected: rational identities between jet monomials (for
// instance y1*f_uy1/(f_u*(y1*f_uy1 - 2*f_u)) = 1/f_u + 2/(y1*f_uy1 - 2*f_u))
// make such dictionaries exactly linearly dependent, and their span picks up
// products of lower invariants with order-3 generators, inflating the
// recovered pure-order-3 count.  Exact representation vectors of every named
// source in this dictionary are kept alongside.
class AnsatzBasis {
 public:
  struct Term {
    ExprPtr expr;                     // the candidate summand
    std::optional<MultiIndex> sigma;  // set iff the term carries an order-3 jet
    ExprPtr coeff;                    // d(expr)/d f_sigma when sigma is set
  };

  static AnsatzBasis affine_order3() { return AnsatzBasis(true); }
  // Same dictionary with every order-3 carrying term removed; calibrating on
  // it can only recover combinations of lower-order invariants.
  static AnsatzBasis lower_only() { return AnsatzBasis(false); }

  const std::vector<Term>& terms() const { return terms_; }
  std::size_t size() const { return terms_.size(); }
  int order3_count() const {
    int n = 0;
    for (const Term& t : terms_)
      if (t.sigma) ++n;
    return n;
  }

  // Exact coefficient vectors of named invariants over the dictionary.  In
  // the no-order-3 variant the truncated generators are not invariants and
  // are therefore absent; the lower-order products remain.
  const std::map<std::string, Eigen::VectorXd>& named_vectors() const {
    return named_;
  }
  bool has_named(const std::string& name) const { return named_.count(name) > 0; }
  const Eigen::VectorXd& named(const std::string& name) const {
    return named_.at(name);
  }
  const Eigen::VectorXd& K_vector() const { return named_.at("K"); }
  const Eigen::VectorXd& L_vector() const { return named_.at("L"); }

  // Ratio of smallest to largest singular value of the term-value matrix at
  // random regular jets; a ratio above ~1e-10 certifies numerical linear
  // independence of the dictionary.
  double independence_margin(std::uint64_t seed, int jets = 0) const {
    if (jets <= 0) jets = 3 * static_cast<int>(terms_.size());
    std::mt19937_64 rng(seed);
    Eigen::MatrixXd m(jets, static_cast<Eigen::Index>(terms_.size()));
    for (int r = 0; r < jets; ++r) {
      JetPoint jp = make_random_jet(3, rng);
      for (std::size_t c = 0; c < terms_.size(); ++c)
        m(r, static_cast<Eigen::Index>(c)) = evaluate_at(terms_[c].expr, jp);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& s = svd.singularValues();
    return s(s.size() - 1) / s(0);
  }

 private:
  explicit AnsatzBasis(bool include_order3) {
    const InvariantFrame& fr = InvariantFrame::instance();
    const ExprPtr J = fr.J();
    const ExprPtr Ju = fr.catalog().at("J_u").expr;
    const ExprPtr Jy1 = fr.catalog().at("J_y1").expr;
    // Lower-order products come first so that generator remainders that are
    // exact combinations of them fold onto the existing columns (for example
    // the affine remainder of nabla_y1(J_y1) is exactly -J_y1; keeping it as
    // a separate column would make the dictionary exactly dependent).
    const std::vector<std::pair<std::string, ExprPtr>> sources = {
        {"1", num(1)},
        {"J", simplify(J)},
        {"J_u", simplify(Ju)},
        {"J_y1", simplify(Jy1)},
        {"J*J", simplify(J * J)},
        {"J*J_u", simplify(J * Ju)},
        {"J*J_y1", simplify(J * Jy1)},
        {"J_u*J_u", simplify(Ju * Ju)},
        {"J_u*J_y1", simplify(Ju * Jy1)},
        {"J_y1*J_y1", simplify(Jy1 * Jy1)},
        {"J_uu", fr.catalog().at("J_uu").expr},
        {"J_uy1", fr.catalog().at("J_uy1").expr},
        {"J_y1y1", fr.catalog().at("J_y1y1").expr},
        {"K", fr.K()},
        {"L", fr.L()}};
    const std::array<const char*, 5> generators = {"J_uu", "J_uy1", "J_y1y1",
                                                   "K", "L"};

    std::map<std::string, std::vector<std::pair<int, Rational>>> reps;
    for (const auto& [label, source] : sources)
      reps[label] = decompose(source, include_order3);

    for (const auto& [label, cols] : reps) {
      const bool truncated =
          !include_order3 &&
          std::find_if(generators.begin(), generators.end(), [&](const char* g) {
            return label == g;
          }) != generators.end();
      if (truncated) continue;  // not an invariant without its top-order part
      Eigen::VectorXd v =
          Eigen::VectorXd::Zero(static_cast<Eigen::Index>(terms_.size()));
      for (const auto& [idx, c] : cols) v(idx) += c.to_double();
      named_.emplace(label, std::move(v));
    }
  }

  // Splits `source` into dictionary columns: one column per order-3 jet
  // coordinate (the order <= 2 affine coefficient times that coordinate) and
  // one for the affine remainder.  Returns the exact representation of
  // `source` as (column index, coefficient) pairs.
  std::vector<std::pair<int, Rational>> decompose(const ExprPtr& source,
                                                  bool include_order3) {
    std::vector<std::pair<int, Rational>> rep;
    ExprPtr lower = source;
    if (jet_order(source) >= 3) {
      for (int id = MultiIndex::count_up_to(2); id < MultiIndex::count_up_to(3);
           ++id) {
        const MultiIndex sigma = MultiIndex::from_id(id);
        ExprPtr c = simplify(partial_derivative(source, sigma));
        if (is_structurally_zero(c)) continue;
        if (jet_order(c) > 2)
          throw std::logic_error(
              "AnsatzBasis: source is not affine along the order-3 fibre");
        lower = lower - c * jet(sigma);
        if (!include_order3) continue;
        const int idx = add(simplify(c * jet(sigma)), sigma, c);
        rep.emplace_back(idx, Rational(1));
      }
      lower = simplify(lower);
    }
    if (!is_structurally_zero(lower) && !try_fold(lower, rep))
      rep.emplace_back(add(lower, std::nullopt, num(0)), Rational(1));
    return rep;
  }

  // Attempts to express `lower` as an exact rational combination of the
  // sigma-free columns already present.  Coefficients are fitted numerically
  // at random jets, snapped to small rationals, and the identity is then
  // verified structurally; only a verified exact match is folded into `rep`.
  bool try_fold(const ExprPtr& lower,
                std::vector<std::pair<int, Rational>>& rep) {
    std::vector<int> cand;
    for (std::size_t i = 0; i < terms_.size(); ++i)
      if (!terms_[i].sigma) cand.push_back(static_cast<int>(i));
    if (cand.empty()) return false;
    const auto nc = static_cast<Eigen::Index>(cand.size());
    std::mt19937_64 rng(0x5eedf01dULL);
    const Eigen::Index rows = 24 + 2 * nc;
    Eigen::MatrixXd A(rows, nc);
    Eigen::VectorXd b(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      JetPoint jp = make_random_jet(2, rng);
      for (Eigen::Index k = 0; k < nc; ++k)
        A(r, k) = evaluate_at(terms_[static_cast<std::size_t>(cand[static_cast<std::size_t>(k)])].expr, jp);
      b(r) = evaluate_at(lower, jp);
    }
    Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
    constexpr std::int64_t den = 96;
    ExprPtr recon = num(0);
    std::vector<std::pair<int, Rational>> folded;
    for (Eigen::Index k = 0; k < nc; ++k) {
      const auto snapped = static_cast<std::int64_t>(
          std::llround(c(k) * static_cast<double>(den)));
      if (snapped == 0) continue;
      const Rational rc(snapped, den);
      recon = recon + num(rc) * terms_[static_cast<std::size_t>(cand[static_cast<std::size_t>(k)])].expr;
      folded.emplace_back(cand[static_cast<std::size_t>(k)], rc);
    }
    if (!is_structurally_zero(simplify(lower - recon))) return false;
    rep.insert(rep.end(), folded.begin(), folded.end());
    return true;
  }

  int add(ExprPtr e, std::optional<MultiIndex> sigma, ExprPtr coeff) {
    const std::string key = to_text(e);
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    const int idx = static_cast<int>(terms_.size());
    index_.emplace(key, idx);
    terms_.push_back(Term{std::move(e), sigma, std::move(coeff)});
    return idx;
  }

  std::map<std::string, int> index_;
  std::vector<Term> terms_;
  std::map<std::string, Eigen::VectorXd> named_;
};

// ---------------------------------------------------------------------------
// Calibration samples

struct CalibrationTriple {
  SystemF system;
  FeedbackMap transform;
  std::uint64_t transform_seed = 0;
  BasePoint point{};  // evaluation point on the transformed side
};

// Systems with generically nonvanishing mixed partial derivatives through
// order three, so that every dictionary column stays active on samples.  A
// cubic in (u + y/2 + y1/4) activates all ten third-order coordinates at
// once; the others add trigonometric and exponential structure.
inline std::vector<SystemF> default_calibration_corpus() {
  return {SystemF::parse("u + (u + y/2 + y1/4)^3/16"),
          SystemF::parse("u*(1 + y1^2/4) + sin(y)*(1 + y1/2)"),
          SystemF::parse("u + u^3/8 + y*y1/2 + u*y*y1/4"),
          SystemF::parse("u*exp(y/4) + y1*sin(y) + u^2*y1/8")};
}

// Draws (system, transform, point) triples whose evaluation stays safely
// inside the regular locus on both sides of the correspondence: |y1|, |f_u|
// and |J_u| bounded below, jet values bounded above.
inline std::vector<CalibrationTriple> make_calibration_samples(
    const std::vector<SystemF>& corpus, std::uint64_t seed, int pairs,
    int points_per_pair, double margin = 0.1) {
  if (corpus.empty())
    throw std::invalid_argument("make_calibration_samples: empty corpus");
  const InvariantFrame& fr = InvariantFrame::instance();
  const ExprPtr& Ju = fr.catalog().at("J_u").expr;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> box(-1.2, 1.2);
  std::uniform_real_distribution<double> mag(0.6, 1.8);
  std::uniform_int_distribution<int> coin(0, 1);

  std::vector<CalibrationTriple> out;
  for (int i = 0; i < pairs; ++i) {
    const SystemF& F = corpus[static_cast<std::size_t>(i) % corpus.size()];
    const std::uint64_t tseed = rng();
    FeedbackMap phi = random_feedback(tseed, 2);
    SystemF G = apply_feedback(F, phi);
    int found = 0;
    for (int attempt = 0; found < points_per_pair && attempt < 400 * points_per_pair;
         ++attempt) {
      BasePoint p{box(rng), box(rng), (coin(rng) ? 1.0 : -1.0) * mag(rng)};
      try {
        const BasePoint q = transform_point(phi, p);
        if (std::abs(q.y1) < 0.2) continue;
        JetPoint jg = G.jet_at(p, 2);
        JetPoint jf = F.jet_at(q, 2);
        if (std::abs(jg.value(MultiIndex{1, 0, 0})) < margin ||
            std::abs(jf.value(MultiIndex{1, 0, 0})) < margin)
          continue;
        if (std::abs(evaluate_at(Ju, jg)) < margin ||
            std::abs(evaluate_at(Ju, jf)) < margin)
          continue;
        // Materialize the jets before iterating: values() refers into the
        // JetPoint, and a temporary would not outlive the loop header.
        const JetPoint g3 = G.jet_at(p, 3);
        const JetPoint f3 = F.jet_at(q, 3);
        bool tame = true;
        for (double v : g3.values()) tame = tame && std::abs(v) < 50.0;
        for (double v : f3.values()) tame = tame && std::abs(v) < 50.0;
        if (!tame) continue;
        out.push_back(CalibrationTriple{F, phi, tseed, p});
        ++found;
      } catch (const EvalError&) {
        continue;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear calibration

struct CalibrationOptions {
  double nullspace_tol = 1e-8;   // singular value cutoff relative to largest
  double holdout_tol = 1e-6;     // invariance residual bound on held-out samples
  int holdout_every = 4;         // every n-th sample is held out
  std::uint64_t probe_seed = 99;
  int probe_jets = 8;            // jets for the pure-order-3 rank probe
  double order3_rank_tol = 1e-6;
  std::int64_t report_denominator = 1 << 20;  // coefficient snap for expressions
};

struct CalibrationResult {
  std::vector<Eigen::VectorXd> nullspace;  // orthonormal coefficient vectors
  std::vector<ExprPtr> expressions;        // snapped-coefficient reports
  std::vector<double> singular_values;     // full spectrum, descending
  std::vector<double> holdout_residuals;   // per kept vector
  int dropped = 0;                         // vectors failing the holdout oracle
  int pure_order3_dimension = 0;
  double K_projection_residual = std::numeric_limits<double>::quiet_NaN();
  double L_projection_residual = std::numeric_limits<double>::quiet_NaN();
  double condition = std::numeric_limits<double>::quiet_NaN();
  int train_samples = 0;
  int holdout_samples = 0;
};

inline CalibrationResult calibrate_affine_invariants(
    const AnsatzBasis& basis, const std::vector<CalibrationTriple>& samples,
    const CalibrationOptions& opts = {}) {
  const auto& terms = basis.terms();
  const Eigen::Index n = static_cast<Eigen::Index>(terms.size());
  if (n == 0) throw std::invalid_argument("calibrate: empty basis");

  // Evaluate every term on both sides of each sample, grouping by transform
  // so each transformed system is built once.
  struct Row {
    Eigen::VectorXd defect;  // T(transformed at p) - T(original at phi(p))
    Eigen::VectorXd value;   // T(original at phi(p))
  };
  std::vector<Row> rows;
  rows.reserve(samples.size());
  std::map<std::string, SystemF> transformed;
  for (const CalibrationTriple& s : samples) {
    const std::string key = s.system.label() + "|" + s.transform.label();
    auto it = transformed.find(key);
    if (it == transformed.end())
      it = transformed.emplace(key, apply_feedback(s.system, s.transform)).first;
    JetPoint jg = it->second.jet_at(s.point, 3);
    JetPoint jf = s.system.jet_at(transform_point(s.transform, s.point), 3);
    Row r{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (Eigen::Index c = 0; c < n; ++c) {
      const double a = evaluate_at(terms[static_cast<std::size_t>(c)].expr, jg);
      const double b = evaluate_at(terms[static_cast<std::size_t>(c)].expr, jf);
      r.defect(c) = a - b;
      r.value(c) = b;
    }
    rows.push_back(std::move(r));
  }

  // Deterministic train/holdout split.
  std::vector<const Row*> train, holdout;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (opts.holdout_every > 0 &&
        static_cast<int>(i % static_cast<std::size_t>(opts.holdout_every)) ==
            opts.holdout_every - 1)
      holdout.push_back(&rows[i]);
    else
      train.push_back(&rows[i]);
  }
  if (train.size() < static_cast<std::size_t>(2 * n))
    throw std::invalid_argument("calibrate: need at least twice as many training "
                                "samples as basis terms");

  // Scale columns by the typical magnitude of the term values (not of the
  // defects: defect columns of invariant terms are legitimately tiny).
  Eigen::VectorXd scale = Eigen::VectorXd::Zero(n);
  for (const Row* r : train) scale += r->value.cwiseAbs2();
  scale = (scale / static_cast<double>(train.size())).cwiseSqrt();
  for (Eigen::Index c = 0; c < n; ++c) scale(c) = std::max(scale(c), 1e-6);

  Eigen::MatrixXd A(static_cast<Eigen::Index>(train.size()), n);
  for (std::size_t r = 0; r < train.size(); ++r)
    A.row(static_cast<Eigen::Index>(r)) =
        train[r]->defect.cwiseQuotient(scale).transpose();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  CalibrationResult res;
  res.train_samples = static_cast<int>(train.size());
  res.holdout_samples = static_cast<int>(holdout.size());
  res.singular_values.assign(sv.data(), sv.data() + sv.size());
  // Spread of the non-null spectrum: the nullspace directions are the
  // sought invariants, so they are excluded from the conditioning figure.
  res.condition = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = sv.size() - 1; i >= 0; --i)
    if (sv(i) > opts.nullspace_tol * sv(0)) {
      res.condition = sv(0) / sv(i);
      break;
    }

  std::vector<Eigen::VectorXd> kept_raw;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) <= opts.nullspace_tol * sv(0))
      kept_raw.push_back(svd.matrixV().col(i).cwiseQuotient(scale));
  if (kept_raw.empty())
    throw DomainError("calibrate: empty nullspace (basis has no invariant "
                      "combinations at this tolerance)");

  // Re-orthonormalize the back-scaled vectors.
  Eigen::MatrixXd N(n, static_cast<Eigen::Index>(kept_raw.size()));
  for (std::size_t i = 0; i < kept_raw.size(); ++i)
    N.col(static_cast<Eigen::Index>(i)) = kept_raw[i];
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(N);
  Eigen::MatrixXd Q = qr.householderQ() *
                      Eigen::MatrixXd::Identity(n, static_cast<Eigen::Index>(
                                                       kept_raw.size()));

  // Holdout oracle: drop combinations that fail fresh invariance.
  for (Eigen::Index i = 0; i < Q.cols(); ++i) {
    const Eigen::VectorXd v = Q.col(i);
    double worst = 0.0;
    for (const Row* r : holdout) {
      const double defect = v.dot(r->defect);
      const double value = v.dot(r->value);
      worst = std::max(worst, std::abs(defect) / (1.0 + std::abs(value)));
    }
    if (holdout.empty() || worst <= opts.holdout_tol) {
      res.nullspace.push_back(v);
      res.holdout_residuals.push_back(worst);
    } else {
      ++res.dropped;
    }
  }
  if (res.nullspace.empty())
    throw DomainError("calibrate: all nullspace candidates failed the holdout "
                      "invariance oracle");

  // Projection residuals of the exact K and L representations.
  auto containment = [&](const Eigen::VectorXd& target) {
    if (target.size() != n || target.norm() == 0.0)
      return std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd t = target / target.norm();
    Eigen::VectorXd proj = Eigen::VectorXd::Zero(n);
    for (const Eigen::VectorXd& v : res.nullspace) proj += v.dot(t) * v;
    return (t - proj).norm();
  };
  if (basis.has_named("K")) res.K_projection_residual = containment(basis.named("K"));
  if (basis.has_named("L")) res.L_projection_residual = containment(basis.named("L"));

  // Pure order-3 content: rank of the map from kept vectors to their
  // order-3 gradient profiles at probe jets.
  {
    std::mt19937_64 rng(opts.probe_seed);
    const int nsig = MultiIndex::count_up_to(3) - MultiIndex::count_up_to(2);
    Eigen::MatrixXd g(static_cast<Eigen::Index>(res.nullspace.size()),
                      static_cast<Eigen::Index>(nsig * opts.probe_jets));
    g.setZero();
    for (int t = 0; t < opts.probe_jets; ++t) {
      JetPoint jp = make_random_jet(2, rng);
      for (std::size_t c = 0; c < terms.size(); ++c) {
        if (!terms[c].sigma) continue;
        const double cv = evaluate_at(terms[c].coeff, jp);
        const int soff = terms[c].sigma->id() - MultiIndex::count_up_to(2);
        for (std::size_t i = 0; i < res.nullspace.size(); ++i)
          g(static_cast<Eigen::Index>(i), t * nsig + soff) +=
              res.nullspace[i](static_cast<Eigen::Index>(c)) * cv;
      }
    }
    if (g.rows() > 0 && g.cols() > 0) {
      Eigen::JacobiSVD<Eigen::MatrixXd> gsvd(g);
      const auto& gs = gsvd.singularValues();
      for (Eigen::Index i = 0; i < gs.size(); ++i)
        if (gs(i) > opts.order3_rank_tol * gs(0)) ++res.pure_order3_dimension;
    }
  }

  // Reported expressions with rationalized coefficients (the numeric vectors
  // above stay authoritative for residual checks).
  for (const Eigen::VectorXd& v : res.nullspace) {
    std::vector<ExprPtr> parts;
    for (Eigen::Index c = 0; c < n; ++c) {
      const double w = v(c);
      if (std::abs(w) < 1e-12) continue;
      const std::int64_t d = opts.report_denominator;
      parts.push_back(num(Rational(std::llround(w * static_cast<double>(d)), d)) *
                      terms[static_cast<std::size_t>(c)].expr);
    }
    res.expressions.push_back(parts.empty() ? num(0) : simplify(sum(std::move(parts))));
  }
  return res;
}

// Largest principal angle (radians) between two orthonormal coefficient
// families; small values certify that calibration is stable under resampling.
inline double max_principal_angle(const std::vector<Eigen::VectorXd>& a,
                                  const std::vector<Eigen::VectorXd>& b) {
  if (a.empty() || b.empty() || a.size() != b.size())
    throw std::invalid_argument("max_principal_angle: dimension mismatch");
  const Eigen::Index n = a[0].size();
  Eigen::MatrixXd A(n, static_cast<Eigen::Index>(a.size()));
  Eigen::MatrixXd B(n, static_cast<Eigen::Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i) A.col(static_cast<Eigen::Index>(i)) = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) B.col(static_cast<Eigen::Index>(i)) = b[i];
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A.transpose() * B);
  const double c = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(c);
}

// ---------------------------------------------------------------------------
// Syzygy probing

// W = K_u - L_y1 + ((J_uy1 + J_u - J_x^2)/J_u)*L - (J_uu/J_u)*K, where
// K_u, L_y1 are frame derivatives and J_x is the ambiguous symbol, resolved
// empirically by probing both candidate readings.
inline const ExprPtr& syzygy_expression(const std::string& candidate) {
  static std::mutex mu;
  static std::map<std::string, ExprPtr> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(candidate);
  if (it != cache.end()) return it->second;
  const InvariantFrame& fr = InvariantFrame::instance();
  if (candidate != "J_u" && candidate != "J_y1")
    throw std::invalid_argument("syzygy candidate must be J_u or J_y1");
  const ExprPtr& Jx = fr.catalog().at(candidate).expr;
  const ExprPtr& Ju = fr.catalog().at("J_u").expr;
  const ExprPtr& Juy1 = fr.catalog().at("J_uy1").expr;
  const ExprPtr& Juu = fr.catalog().at("J_uu").expr;
  const ExprPtr& K = fr.K();
  const ExprPtr& L = fr.L();
  ExprPtr Ku = fr.derivations().nabla_u.apply(K);
  ExprPtr Ly = fr.derivations().nabla_y1.apply(L);
  ExprPtr W = simplify(Ku - Ly + ((Juy1 + Ju - Jx * Jx) / Ju) * L - (Juu / Ju) * K);
  return cache.emplace(candidate, std::move(W)).first->second;
}

// Newton search for a point of `F` whose chart values (J, J_u, J_y1) match
// `target`; the Jacobian is taken by central differences.
inline std::optional<BasePoint> solve_chart_point(const SystemF& F,
                                                  const std::array<double, 3>& target,
                                                  BasePoint start,
                                                  double tol = 1e-10,
                                                  int max_iters = 60) {
  const InvariantFrame& fr = InvariantFrame::instance();
  const ExprPtr charts[3] = {fr.J(), fr.catalog().at("J_u").expr,
                             fr.catalog().at("J_y1").expr};
  auto chart = [&](const BasePoint& p) -> std::optional<Eigen::Vector3d> {
    try {
      JetPoint jp = F.jet_at(p, 2);
      Eigen::Vector3d v;
      for (int i = 0; i < 3; ++i) v(i) = evaluate_at(charts[i], jp);
      if (!v.allFinite()) return std::nullopt;
      return v;
    } catch (const EvalError&) {
      return std::nullopt;
    }
  };
  const Eigen::Vector3d t(target[0], target[1], target[2]);
  BasePoint x = start;
  int forced = 0;
  for (int it = 0; it < max_iters; ++it) {
    auto c = chart(x);
    if (!c) return std::nullopt;
    Eigen::Vector3d r = *c - t;
    if (r.norm() <= tol * (1.0 + t.norm())) return x;
    const double h = 1e-6;
    Eigen::Matrix3d jac;
    for (int d = 0; d < 3; ++d) {
      BasePoint hi = x, lo = x;
      double* phi_ = d == 0 ? &hi.u : d == 1 ? &hi.y : &hi.y1;
      double* plo = d == 0 ? &lo.u : d == 1 ? &lo.y : &lo.y1;
      *phi_ += h;
      *plo -= h;
      auto chi = chart(hi), clo = chart(lo);
      if (!chi || !clo) return std::nullopt;
      jac.col(d) = (*chi - *clo) / (2.0 * h);
    }
    Eigen::FullPivLU<Eigen::Matrix3d> lu(jac);
    if (!lu.isInvertible()) return std::nullopt;
    Eigen::Vector3d step = lu.solve(r);
    // Damped update: halve the step until the residual improves.  A few
    // non-improving short steps are allowed to escape damping plateaus.
    double lambda = 1.0;
    bool moved = false;
    for (int half = 0; half < 10; ++half) {
      BasePoint trial{x.u - lambda * step(0), x.y - lambda * step(1),
                      x.y1 - lambda * step(2)};
      if (std::abs(trial.y1) > 0.05) {
        auto ct = chart(trial);
        if (ct && (*ct - t).norm() < r.norm()) {
          x = trial;
          moved = true;
          break;
        }
      }
      lambda *= 0.5;
    }
    if (!moved) {
      if (++forced > 4) return std::nullopt;
      BasePoint trial{x.u - lambda * step(0), x.y - lambda * step(1),
                      x.y1 - lambda * step(2)};
      if (std::abs(trial.y1) <= 0.05 || !chart(trial)) return std::nullopt;
      x = trial;
    }
  }
  return std::nullopt;
}

struct SyzygyOptions {
  std::uint64_t seed = 7;
  int targets_per_pair = 12;        // chart anchors attempted per system pair
  double bin_radius = 1e-3;         // chart proximity defining a bin
  double tolerance = 1e-4;          // verdict threshold on relative spread
  double sheet_tolerance = 1e-3;    // full-signature proximity within a bin
  double margin = 0.15;             // regularity margins at probed points
  int newton_restarts = 24;
  double min_self_distance = 0.25;  // single-system probing: distinct preimages
};

struct SyzygyMember {
  std::string system;
  BasePoint point{};
  double w = 0.0;
};

// The chart (J, J_u, J_y1) can be many-to-one on a single system: two points
// with matching chart values may still be distinct points of the signature
// manifold, where the remaining signature coordinates (J_uu, J_uy1, J_y1y1,
// K, L) differ.  `signature_gap` measures that difference; only bins whose
// members represent the same signature point (gap within the sheet
// tolerance) witness the functional dependence of W on the chart.
struct SyzygyBin {
  std::array<double, 3> chart{};  // (J, J_u, J_y1) anchor
  std::vector<SyzygyMember> members;
  double spread = 0.0;         // |dW| / (1 + max |W|) between members
  double signature_gap = 0.0;  // worst relative gap of the five order-3 values
  bool on_sheet = false;
};

struct SyzygyReport {
  std::string candidate;
  double bin_radius = 0.0;
  double tolerance = 0.0;
  std::vector<SyzygyBin> bins;   // bins with two chart-matched members
  int underpopulated = 0;        // anchors with no chart match found
  int off_sheet = 0;             // bins whose members sit on different sheets
  double max_spread = 0.0;       // over on-sheet bins (verdict basis)
  double max_spread_all = 0.0;   // over every bin, informational
  bool consistent = false;
};

inline SyzygyReport syzygy_probe(const std::vector<SystemF>& systems,
                                 const std::string& candidate,
                                 const SyzygyOptions& opts = {}) {
  if (systems.empty()) throw std::invalid_argument("syzygy_probe: no systems");
  const InvariantFrame& fr = InvariantFrame::instance();
  const ExprPtr& W = syzygy_expression(candidate);
  const ExprPtr& Ju = fr.catalog().at("J_u").expr;
  const ExprPtr& Jy1 = fr.catalog().at("J_y1").expr;
  const std::array<ExprPtr, 5> rest = {fr.catalog().at("J_uu").expr,
                                       fr.catalog().at("J_uy1").expr,
                                       fr.catalog().at("J_y1y1").expr, fr.K(),
                                       fr.L()};
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> box(-1.2, 1.2);
  std::uniform_real_distribution<double> mag(0.5, 1.6);
  std::uniform_int_distribution<int> coin(0, 1);

  auto regular_at = [&](const SystemF& F, const BasePoint& p) -> bool {
    if (std::abs(p.y1) < 0.3) return false;
    try {
      JetPoint jp = F.jet_at(p, 2);
      return std::abs(jp.value(MultiIndex{1, 0, 0})) >= opts.margin &&
             std::abs(evaluate_at(Ju, jp)) >= opts.margin;
    } catch (const EvalError&) {
      return false;
    }
  };
  auto chart_of = [&](const SystemF& F, const BasePoint& p) {
    JetPoint jp = F.jet_at(p, 2);
    return std::array<double, 3>{evaluate_at(fr.J(), jp), evaluate_at(Ju, jp),
                                 evaluate_at(Jy1, jp)};
  };
  auto rest_of = [&](const SystemF& F, const BasePoint& p) {
    JetPoint jp = F.jet_at(p, 3);
    std::array<double, 5> v{};
    for (int i = 0; i < 5; ++i) v[static_cast<std::size_t>(i)] =
        evaluate_at(rest[static_cast<std::size_t>(i)], jp);
    return v;
  };
  auto w_of = [&](const SystemF& F, const BasePoint& p) {
    return evaluate_at(W, F.jet_at(p, 4));
  };

  SyzygyReport rep;
  rep.candidate = candidate;
  rep.bin_radius = opts.bin_radius;
  rep.tolerance = opts.tolerance;

  auto probe_pair = [&](const SystemF& A, const SystemF& B, bool same) {
    for (int t = 0; t < opts.targets_per_pair; ++t) {
      BasePoint p{};
      bool ok = false;
      for (int tries = 0; tries < 200 && !ok; ++tries) {
        p = BasePoint{box(rng), box(rng), (coin(rng) ? 1.0 : -1.0) * mag(rng)};
        ok = regular_at(A, p);
      }
      if (!ok) {
        ++rep.underpopulated;
        continue;
      }
      const std::array<double, 3> target = chart_of(A, p);
      const std::array<double, 5> sig_a = rest_of(A, p);
      auto gap_to = [&](const BasePoint& q) {
        const std::array<double, 5> sig_b = rest_of(B, q);
        double g = 0.0;
        for (int i = 0; i < 5; ++i) {
          const double a = sig_a[static_cast<std::size_t>(i)];
          const double b = sig_b[static_cast<std::size_t>(i)];
          g = std::max(g, std::abs(a - b) /
                              (1.0 + std::max(std::abs(a), std::abs(b))));
        }
        return g;
      };
      // Among Newton solutions, prefer the one closest in full signature.
      // The first starts are the sign reflections of the anchor: partner
      // points of a discrete symmetry (for instance an odd right-hand side)
      // sit exactly there, and a random start rarely lands in their basin.
      std::optional<BasePoint> match;
      double best_gap = std::numeric_limits<double>::infinity();
      for (int s = 0; s < opts.newton_restarts; ++s) {
        BasePoint start =
            s < 8 ? BasePoint{(s & 1 ? -1.0 : 1.0) * p.u,
                              (s & 2 ? -1.0 : 1.0) * p.y,
                              (s & 4 ? -1.0 : 1.0) * p.y1}
                  : BasePoint{box(rng), box(rng),
                              (coin(rng) ? 1.0 : -1.0) * mag(rng)};
        auto cand = solve_chart_point(B, target, start);
        if (!cand) continue;
        if (!regular_at(B, *cand)) continue;
        if (same) {
          const double dist = std::hypot(cand->u - p.u, cand->y - p.y,
                                         cand->y1 - p.y1);
          if (dist < opts.min_self_distance) continue;
        }
        const double g = gap_to(*cand);
        if (g < best_gap) {
          best_gap = g;
          match = cand;
        }
        if (best_gap <= opts.sheet_tolerance) break;
      }
      if (!match) {
        ++rep.underpopulated;
        continue;
      }
      SyzygyBin bin;
      bin.chart = target;
      bin.signature_gap = best_gap;
      bin.on_sheet = best_gap <= opts.sheet_tolerance;
      bin.members.push_back(SyzygyMember{A.label(), p, w_of(A, p)});
      bin.members.push_back(SyzygyMember{B.label(), *match, w_of(B, *match)});
      const double wa = bin.members[0].w, wb = bin.members[1].w;
      bin.spread = std::abs(wa - wb) / (1.0 + std::max(std::abs(wa), std::abs(wb)));
      rep.max_spread_all = std::max(rep.max_spread_all, bin.spread);
      if (bin.on_sheet)
        rep.max_spread = std::max(rep.max_spread, bin.spread);
      else
        ++rep.off_sheet;
      rep.bins.push_back(std::move(bin));
    }
  };

  if (systems.size() == 1) {
    probe_pair(systems[0], systems[0], true);
  } else {
    for (std::size_t i = 0; i < systems.size(); ++i)
      for (std::size_t j = i + 1; j < systems.size(); ++j)
        probe_pair(systems[i], systems[j], false);
  }
  int on_sheet = 0;
  for (const SyzygyBin& b : rep.bins)
    if (b.on_sheet) ++on_sheet;
  rep.consistent = on_sheet > 0 && rep.max_spread <= opts.tolerance;
  return rep;
}

}  // namespace feedinv
