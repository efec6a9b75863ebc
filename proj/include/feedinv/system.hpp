#pragma once

// Control systems y'' = F(y, y', u) and their jets.
//
// A SystemF wraps the right-hand side expression (base variables only) and
// lazily maintains the table of exact symbolic partials d^sigma F.  A
// JetPoint is an immutable bundle of base coordinates plus the values of all
// jet coordinates f_sigma up to its order, stored densely by MultiIndex id.
// jet_at() evaluates the partial table at a base point, which is how every
// invariant in this project gets its numbers.

#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "feedinv/differentiate.hpp"
#include "feedinv/expr.hpp"
#include "feedinv/parse.hpp"
#include "feedinv/simplify.hpp"

namespace feedinv {

inline constexpr int kDefaultMaxJetOrder = 6;

struct BasePoint {
  double u = 0.0;
  double y = 0.0;
  double y1 = 0.0;
};

class JetPoint {
 public:
  JetPoint(BasePoint p, int order, std::vector<double> values)
      : point_(p), order_(order), values_(std::move(values)) {
    const auto expect = static_cast<std::size_t>(MultiIndex::count_up_to(order));
    if (values_.size() != expect)
      throw std::invalid_argument(
          "JetPoint: expected " + std::to_string(expect) + " jet values for order " +
          std::to_string(order) + ", got " + std::to_string(values_.size()));
  }

  const BasePoint& point() const { return point_; }
  int order() const { return order_; }
  const std::vector<double>& values() const { return values_; }

  double value(MultiIndex m) const {
    const int id = m.id();
    if (id >= static_cast<int>(values_.size()))
      throw MissingValueError("jet coordinate " + m.name() + " beyond stored order " +
                              std::to_string(order_));
    return values_[static_cast<std::size_t>(id)];
  }

  double f() const { return values_[0]; }

  EvalContext context() const {
    EvalContext ctx;
    ctx.u = point_.u;
    ctx.y = point_.y;
    ctx.y1 = point_.y1;
    ctx.jet_values = &values_;
    ctx.jet_order = order_;
    return ctx;
  }

 private:
  BasePoint point_;
  int order_;
  std::vector<double> values_;
};

// Evaluate an invariant-style expression (base vars + jets) at a jet point.
inline double evaluate_at(const ExprPtr& e, const JetPoint& jp) {
  return evaluate(e, jp.context());
}

class SystemF {
 public:
  SystemF(ExprPtr rhs, std::string label = {}, int max_jet_order = kDefaultMaxJetOrder)
      : label_(std::move(label)),
        max_order_(max_jet_order),
        cache_(std::make_shared<Cache>()) {
    if (!rhs) throw std::invalid_argument("SystemF: null expression");
    if (jet_order(rhs) >= 0)
      throw std::invalid_argument(
          "SystemF: right-hand side must not contain jet coordinates");
    if (contains_symbol(rhs))
      throw std::invalid_argument("SystemF: right-hand side must not contain free symbols");
    cache_->partials.push_back(simplify(rhs));
  }

  static SystemF parse(const std::string& text, std::string label = {}) {
    return SystemF(parse_system_text(text), label.empty() ? text : std::move(label));
  }

  const std::string& label() const { return label_; }
  const ExprPtr& expr() const { return cache_->partials[0]; }
  int max_jet_order() const { return max_order_; }

  // Exact symbolic partial derivative d^sigma F.
  ExprPtr partial(MultiIndex sigma) const {
    ensure_order(sigma.order());
    return cache_->partials[static_cast<std::size_t>(sigma.id())];
  }

  // Fills the partial table up to jet order k (thread-safe; call before
  // sharing the system across sampling threads).
  void ensure_order(int k) const {
    if (k > max_order_)
      throw std::invalid_argument("SystemF: jet order " + std::to_string(k) +
                                  " exceeds the configured maximum " +
                                  std::to_string(max_order_));
    std::lock_guard<std::mutex> lock(cache_->mu);
    const int want = MultiIndex::count_up_to(k);
    while (static_cast<int>(cache_->partials.size()) < want) {
      const int id = static_cast<int>(cache_->partials.size());
      MultiIndex m = MultiIndex::from_id(id);
      // Differentiate from the predecessor along one available direction.
      const JetDir dir = m.du > 0 ? JetDir::u : m.dy > 0 ? JetDir::y : JetDir::y1;
      auto parent = m.minus(dir);
      const ExprPtr& src = cache_->partials[static_cast<std::size_t>(parent->id())];
      cache_->partials.push_back(simplify(partial_derivative(src, base_var_of(dir))));
    }
  }

  // The jet of the system at a base point: all f_sigma values, |sigma| <= order.
  JetPoint jet_at(BasePoint p, int order) const {
    ensure_order(order);
    EvalContext ctx;
    ctx.u = p.u;
    ctx.y = p.y;
    ctx.y1 = p.y1;
    const int n = MultiIndex::count_up_to(order);
    std::vector<double> vals(static_cast<std::size_t>(n));
    for (int id = 0; id < n; ++id) {
      try {
        vals[static_cast<std::size_t>(id)] =
            evaluate(cache_->partials[static_cast<std::size_t>(id)], ctx);
      } catch (const EvalError& err) {
        throw DomainError("system '" + label_ + "': " + err.what() +
                          " while evaluating " + MultiIndex::from_id(id).name() +
                          " at (u=" + std::to_string(p.u) + ", y=" + std::to_string(p.y) +
                          ", y1=" + std::to_string(p.y1) + ")");
      }
    }
    return JetPoint(p, order, std::move(vals));
  }

 private:
  struct Cache {
    std::mutex mu;
    std::vector<ExprPtr> partials;  // by MultiIndex id; [0] is F itself
  };

  std::string label_;
  int max_order_;
  std::shared_ptr<Cache> cache_;
};

// A random jet point with all coordinates drawn away from zero.  When
// `regular` is set the draw additionally enforces the weak-regularity and
// regularity margins |y1|, |f_u| >= 0.3 and |y1*f_uy1 - 2*f_u| >= 0.3 (the
// latter keeps J_u's numerator, hence J_u itself, bounded away from zero).
template <class Rng>
inline JetPoint make_random_jet(int order, Rng& rng, bool regular = true) {
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::uniform_int_distribution<int> coin(0, 1);
  auto draw = [&] { return (coin(rng) ? 1.0 : -1.0) * mag(rng); };
  for (int attempt = 0; attempt < 1000; ++attempt) {
    BasePoint p{draw(), draw(), draw()};
    std::vector<double> vals(static_cast<std::size_t>(MultiIndex::count_up_to(order)));
    for (auto& v : vals) v = draw();
    JetPoint jp(p, order, std::move(vals));
    if (!regular) return jp;
    const double fu = jp.value(MultiIndex{1, 0, 0});
    const double fuy1 = order >= 2 ? jp.value(MultiIndex{1, 0, 1}) : 0.0;
    if (std::abs(p.y1) < 0.3 || std::abs(fu) < 0.3) continue;
    if (order >= 2 && std::abs(p.y1 * fuy1 - 2.0 * fu) < 0.3) continue;
    return jp;
  }
  throw std::runtime_error("make_random_jet: could not satisfy regularity margins");
}

}  // namespace feedinv
