#pragma once

// Signature manifolds and the local equivalence decision.
//
// A regular system is mapped pointwise to the eight-component signature
// vector (j, j1, j3, j11, j13, j33, k, l) — the values of the invariant
// catalog's regular branch.  Sampling a base-point grid yields a point cloud
// on the signature manifold; the first three components (the values of J,
// J_u, J_y1) serve as chart coordinates, and the remaining five are graphs
// over that chart.  Two sampled systems are compared by fitting one cloud's
// graph functions locally (moving least squares over nearest neighbors) and
// measuring how far the other cloud's graph values sit from the fit.
//
// Systems with J_u identically zero have no such chart; for them a
// restricted five-component signature (J, M, nabla_y1 J, nabla_u M,
// nabla_y1 M) is provided.  Because no completeness theorem backs that list,
// comparisons in this mode are labelled "heuristic".

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <queue>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "feedinv/frame.hpp"
#include "feedinv/pseudogroup.hpp"
#include "feedinv/system.hpp"

namespace feedinv {

// ---------------------------------------------------------------------------
// Sampling domains

struct AxisSpec {
  double lo = 0.0;
  double hi = 0.0;
  int count = 0;
};

struct GridBox {
  AxisSpec u, y, y1;
};

inline std::vector<double> axis_values(const AxisSpec& a) {
  if (a.count < 1)
    throw std::invalid_argument("axis needs at least one grid point");
  if (!(a.hi >= a.lo))
    throw std::invalid_argument("axis bounds must satisfy lo <= hi");
  std::vector<double> v(static_cast<std::size_t>(a.count));
  if (a.count == 1) {
    v[0] = 0.5 * (a.lo + a.hi);
    return v;
  }
  const double step = (a.hi - a.lo) / (a.count - 1);
  for (int i = 0; i < a.count; ++i) v[static_cast<std::size_t>(i)] = a.lo + step * i;
  return v;
}

inline std::vector<BasePoint> grid_points(const GridBox& box) {
  const auto us = axis_values(box.u);
  const auto ys = axis_values(box.y);
  const auto y1s = axis_values(box.y1);
  std::vector<BasePoint> pts;
  pts.reserve(us.size() * ys.size() * y1s.size());
  for (double u : us)
    for (double y : ys)
      for (double y1 : y1s) pts.push_back(BasePoint{u, y, y1});
  return pts;
}

// ---------------------------------------------------------------------------
// Nearest-neighbor index over chart coordinates
//
// Points are normalized per axis to [0, 1] and hashed into a uniform cell
// grid.  Queries expand cell shells outward; a shell search may stop once the
// current k-th best distance is provably smaller than anything an unvisited
// cell can contain.

class ChartIndex {
 public:
  ChartIndex() = default;

  void build(std::vector<std::array<double, 3>> pts) {
    pts_ = std::move(pts);
    const std::size_t n = pts_.size();
    // Whiten: sampled chart clouds are typically extremely anisotropic (for
    // mild systems the entries are strongly correlated), and nearest-neighbor
    // stencils in a skewed metric make terrible fit geometry.  Distances are
    // therefore measured after an affine map built from the cloud's mean and
    // covariance, followed by a per-axis rescale to [0, 1] for cell hashing.
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : pts_) mean += Eigen::Vector3d(p[0], p[1], p[2]);
    if (n > 0) mean /= static_cast<double>(n);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& p : pts_) {
      const Eigen::Vector3d d = Eigen::Vector3d(p[0], p[1], p[2]) - mean;
      cov += d * d.transpose();
    }
    if (n > 1) cov /= static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    // Principal axes ordered by descending variance so the leading whitened
    // coordinates carry the real variation (the solver sorts ascending);
    // callers that use only the first k coordinates rely on this.
    Eigen::Vector3d ev_sorted;
    Eigen::Matrix3d vec_sorted;
    for (int a = 0; a < 3; ++a) {
      ev_sorted(a) = eig.eigenvalues()(2 - a);
      vec_sorted.col(a) = eig.eigenvectors().col(2 - a);
    }
    Eigen::Vector3d ev =
        ev_sorted.cwiseMax(std::max(ev_sorted.maxCoeff(), 1e-300) * 1e-12);
    mean_ = mean;
    white_ = ev.cwiseSqrt().cwiseInverse().asDiagonal() * vec_sorted.transpose();

    std::array<std::array<double, 3>, 2> range{};
    for (int a = 0; a < 3; ++a) {
      range[0][static_cast<std::size_t>(a)] = std::numeric_limits<double>::infinity();
      range[1][static_cast<std::size_t>(a)] = -range[0][static_cast<std::size_t>(a)];
    }
    std::vector<Eigen::Vector3d> whitened(n);
    for (std::size_t i = 0; i < n; ++i) {
      whitened[i] =
          white_ * (Eigen::Vector3d(pts_[i][0], pts_[i][1], pts_[i][2]) - mean_);
      for (int a = 0; a < 3; ++a) {
        range[0][static_cast<std::size_t>(a)] =
            std::min(range[0][static_cast<std::size_t>(a)], whitened[i](a));
        range[1][static_cast<std::size_t>(a)] =
            std::max(range[1][static_cast<std::size_t>(a)], whitened[i](a));
      }
    }
    for (int a = 0; a < 3; ++a) {
      off_[static_cast<std::size_t>(a)] = n ? range[0][static_cast<std::size_t>(a)] : 0.0;
      scale_[static_cast<std::size_t>(a)] =
          n ? std::max(range[1][static_cast<std::size_t>(a)] -
                           range[0][static_cast<std::size_t>(a)],
                       1e-12)
            : 1.0;
    }
    norm_.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < 3; ++a)
        norm_[i][static_cast<std::size_t>(a)] =
            (whitened[i](a) - off_[static_cast<std::size_t>(a)]) /
            scale_[static_cast<std::size_t>(a)];
    grid_ = std::max(1, static_cast<int>(std::cbrt(static_cast<double>(n) / 4.0)));
    cells_.assign(static_cast<std::size_t>(grid_) * grid_ * grid_, {});
    for (std::size_t i = 0; i < n; ++i)
      cells_[cell_id(norm_[i])].push_back(static_cast<int>(i));
    median_spacing_ = compute_median_spacing();
  }

  std::size_t size() const { return pts_.size(); }

  // The affine map (whitening then unit-box rescale) behind all distances
  // served by this index.
  std::array<double, 3> normalize(const std::array<double, 3>& p) const {
    const Eigen::Vector3d w = white_ * (Eigen::Vector3d(p[0], p[1], p[2]) - mean_);
    return {(w(0) - off_[0]) / scale_[0], (w(1) - off_[1]) / scale_[1],
            (w(2) - off_[2]) / scale_[2]};
  }

  // Indices and normalized distances of the k nearest points, ascending.
  void nearest(const std::array<double, 3>& q, int k, std::vector<int>* idx,
               std::vector<double>* dist) const {
    idx->clear();
    dist->clear();
    if (pts_.empty() || k <= 0) return;
    const auto nq = normalize(q);
    const int cx = clamp_cell(nq[0]);
    const int cy = clamp_cell(nq[1]);
    const int cz = clamp_cell(nq[2]);
    const double w = 1.0 / grid_;
    // Distance from the query to its (clamped) home cell box; zero whenever
    // the query lies inside the indexed bounding box.
    double slack2 = 0.0;
    const int home[3] = {cx, cy, cz};
    for (int a = 0; a < 3; ++a) {
      const double lo = home[a] * w;
      const double hi = (home[a] + 1) * w;
      const double v = nq[static_cast<std::size_t>(a)];
      const double d = v < lo ? lo - v : v > hi ? v - hi : 0.0;
      slack2 += d * d;
    }
    const double slack = std::sqrt(slack2);

    std::priority_queue<std::pair<double, int>> best;  // max-heap on distance
    for (int r = 0; r <= grid_; ++r) {
      for (int dx = -r; dx <= r; ++dx)
        for (int dy = -r; dy <= r; ++dy)
          for (int dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            const int ix = cx + dx, iy = cy + dy, iz = cz + dz;
            if (ix < 0 || iy < 0 || iz < 0 || ix >= grid_ || iy >= grid_ || iz >= grid_)
              continue;
            const auto& cell =
                cells_[(static_cast<std::size_t>(ix) * grid_ + iy) * grid_ + iz];
            for (int i : cell) {
              const auto& p = norm_[static_cast<std::size_t>(i)];
              const double d = std::hypot(p[0] - nq[0], p[1] - nq[1], p[2] - nq[2]);
              if (static_cast<int>(best.size()) < k) {
                best.emplace(d, i);
              } else if (d < best.top().first) {
                best.pop();
                best.emplace(d, i);
              }
            }
          }
      // Every point of an unvisited cell (shell distance >= r+1) is separated
      // from the home cell box by at least r full cell widths on some axis.
      if (static_cast<int>(best.size()) == k && best.top().first <= r * w - slack) break;
    }
    idx->resize(best.size());
    dist->resize(best.size());
    for (std::size_t i = best.size(); i-- > 0;) {
      (*dist)[i] = best.top().first;
      (*idx)[i] = best.top().second;
      best.pop();
    }
  }

  double nearest_distance(const std::array<double, 3>& q) const {
    std::vector<int> idx;
    std::vector<double> dist;
    nearest(q, 1, &idx, &dist);
    return dist.empty() ? std::numeric_limits<double>::infinity() : dist[0];
  }

  // Median distance (normalized metric) from a point to its closest other
  // point, over a bounded probe subset; the scale of "adjacent" for coverage
  // tests.
  double median_spacing() const { return median_spacing_; }

 private:
  int clamp_cell(double v) const {
    const int c = static_cast<int>(std::floor(v * grid_));
    return std::min(std::max(c, 0), grid_ - 1);
  }

  std::size_t cell_id(const std::array<double, 3>& p) const {
    return (static_cast<std::size_t>(clamp_cell(p[0])) * grid_ + clamp_cell(p[1])) *
               grid_ +
           clamp_cell(p[2]);
  }

  double compute_median_spacing() const {
    const std::size_t n = pts_.size();
    if (n < 2) return 0.0;
    const std::size_t stride = std::max<std::size_t>(1, n / 512);
    std::vector<double> d1;
    std::vector<int> idx;
    std::vector<double> dist;
    for (std::size_t i = 0; i < n; i += stride) {
      // Spacing to the nearest *distinct* neighbour: low-dimensional charts
      // map many sample points onto coincident chart values, and a spacing of
      // zero would shrink the coverage radius to nothing.
      nearest(pts_[i], 32, &idx, &dist);
      for (double d : dist)
        if (d > 1e-12) {
          d1.push_back(d);
          break;
        }
    }
    if (d1.empty()) return 0.0;
    std::nth_element(d1.begin(), d1.begin() + static_cast<std::ptrdiff_t>(d1.size() / 2),
                     d1.end());
    return d1[d1.size() / 2];
  }

  std::vector<std::array<double, 3>> pts_;
  std::vector<std::array<double, 3>> norm_;
  Eigen::Vector3d mean_ = Eigen::Vector3d::Zero();
  Eigen::Matrix3d white_ = Eigen::Matrix3d::Identity();
  std::array<double, 3> off_{0, 0, 0};
  std::array<double, 3> scale_{1, 1, 1};
  int grid_ = 1;
  std::vector<std::vector<int>> cells_;
  double median_spacing_ = 0.0;
};

// ---------------------------------------------------------------------------
// Signature sampling (regular branch)

inline constexpr std::array<const char*, 8> kSignatureNames = {
    "j", "j1", "j3", "j11", "j13", "j33", "k", "l"};

struct SignatureSample {
  BasePoint point{};
  std::array<double, 8> sig{};
  int chart_rank = 0;        // numeric rank of d(J, J_u, J_y1)/d(u, y, y1)
  double chart_sv_ratio = 0; // smallest/largest singular value of that Jacobian
};

struct SampleSkips {
  std::size_t singular = 0;    // |y1| below threshold
  std::size_t not_weak = 0;    // |f_u| below threshold
  std::size_t degenerate = 0;  // |J_u| below threshold
  std::size_t failed = 0;      // evaluation error at the point
  std::size_t nonfinite = 0;   // a signature entry was inf/nan

  std::size_t total() const { return singular + not_weak + degenerate + failed + nonfinite; }

  std::string summary() const {
    std::ostringstream os;
    os << "singular=" << singular << " weak-failures=" << not_weak
       << " degenerate=" << degenerate << " eval-failures=" << failed
       << " nonfinite=" << nonfinite;
    return os.str();
  }
};

struct SignatureOptions {
  RegularityThresholds regularity{};
  double chart_rank_rtol = 1e-6;  // singular values below rtol*max count as zero
  double fd_step = 1e-5;          // relative central-difference step for the Jacobian
  int threads = 1;
};

class SignatureManifold {
 public:
  static constexpr double kChartRegularFraction = 0.99;

  SignatureManifold(std::string label, GridBox box, std::vector<SignatureSample> samples,
                    SampleSkips skips)
      : label_(std::move(label)), box_(box), samples_(std::move(samples)), skips_(skips) {
    std::vector<std::array<double, 3>> charts;
    charts.reserve(samples_.size());
    std::size_t full = 0;
    for (const auto& s : samples_) {
      charts.push_back({s.sig[0], s.sig[1], s.sig[2]});
      if (s.chart_rank == 3) ++full;
    }
    index_.build(std::move(charts));
    rank3_fraction_ = samples_.empty() ? 0.0 : static_cast<double>(full) / samples_.size();
  }

  const std::string& label() const { return label_; }
  const GridBox& box() const { return box_; }
  const std::vector<SignatureSample>& samples() const { return samples_; }
  const SampleSkips& skips() const { return skips_; }
  const ChartIndex& index() const { return index_; }
  double rank3_fraction() const { return rank3_fraction_; }
  bool chart_regular() const {
    return !samples_.empty() && rank3_fraction_ >= kChartRegularFraction;
  }

  std::array<double, 3> chart(std::size_t i) const {
    return {samples_[i].sig[0], samples_[i].sig[1], samples_[i].sig[2]};
  }

 private:
  std::string label_;
  GridBox box_;
  std::vector<SignatureSample> samples_;
  SampleSkips skips_;
  ChartIndex index_;
  double rank3_fraction_ = 0.0;
};

namespace detail {

// Numeric Jacobian of a family of jet expressions with respect to the base
// point, by second-order central differences; returns rank and min/max
// singular-value ratio.
template <std::size_t N>
inline std::pair<int, double> base_jacobian_rank(const SystemF& F,
                                                 const std::array<ExprPtr, N>& exprs,
                                                 int jet_order, const BasePoint& p,
                                                 double fd_step, double rtol) {
  Eigen::Matrix<double, N, 3> jac;
  const double coords[3] = {p.u, p.y, p.y1};
  for (int a = 0; a < 3; ++a) {
    const double h = fd_step * std::max(1.0, std::abs(coords[a]));
    BasePoint hi = p, lo = p;
    (a == 0 ? hi.u : a == 1 ? hi.y : hi.y1) += h;
    (a == 0 ? lo.u : a == 1 ? lo.y : lo.y1) -= h;
    const JetPoint jhi = F.jet_at(hi, jet_order);
    const JetPoint jlo = F.jet_at(lo, jet_order);
    for (std::size_t r = 0; r < N; ++r)
      jac(static_cast<Eigen::Index>(r), a) =
          (evaluate_at(exprs[r], jhi) - evaluate_at(exprs[r], jlo)) / (2.0 * h);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(jac);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0)) return {0, 0.0};
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rtol * sv(0)) ++rank;
  return {rank, sv(sv.size() - 1) / sv(0)};
}

}  // namespace detail

inline SignatureManifold sample_signature(const SystemF& F, const GridBox& box,
                                          const SignatureOptions& opts = {}) {
  const InvariantFrame& fr = InvariantFrame::instance();
  std::array<ExprPtr, 8> sig_exprs;
  for (std::size_t i = 0; i < 8; ++i)
    sig_exprs[i] = fr.catalog().at(InvariantCatalog::regular_branch[i]).expr;
  const std::array<ExprPtr, 3> chart_exprs = {sig_exprs[0], sig_exprs[1], sig_exprs[2]};
  F.ensure_order(3);

  const std::vector<BasePoint> pts = grid_points(box);
  struct Chunk {
    std::vector<SignatureSample> samples;
    SampleSkips skips;
  };
  const int threads = std::max(1, opts.threads);
  std::vector<Chunk> chunks(static_cast<std::size_t>(threads));

  auto work = [&](int t) {
    Chunk& out = chunks[static_cast<std::size_t>(t)];
    const std::size_t lo = pts.size() * static_cast<std::size_t>(t) / threads;
    const std::size_t hi = pts.size() * (static_cast<std::size_t>(t) + 1) / threads;
    for (std::size_t i = lo; i < hi; ++i) {
      const BasePoint& p = pts[i];
      if (std::abs(p.y1) <= opts.regularity.singular_y1) {
        ++out.skips.singular;
        continue;
      }
      SignatureSample s;
      s.point = p;
      try {
        const JetPoint jp = F.jet_at(p, 3);
        if (std::abs(jp.value(MultiIndex{1, 0, 0})) <= opts.regularity.weak_f_u) {
          ++out.skips.not_weak;
          continue;
        }
        // Gate on J_u before evaluating the rest of the catalog: several
        // entries divide by J_u and would otherwise surface as evaluation
        // errors instead of a degeneracy classification.
        s.sig[1] = evaluate_at(sig_exprs[1], jp);
        if (std::abs(s.sig[1]) <= opts.regularity.regular_J_u) {
          ++out.skips.degenerate;
          continue;
        }
        for (std::size_t r = 0; r < 8; ++r)
          if (r != 1) s.sig[r] = evaluate_at(sig_exprs[r], jp);
      } catch (const EvalError&) {
        ++out.skips.failed;
        continue;
      }
      bool finite = true;
      for (double v : s.sig) finite = finite && std::isfinite(v);
      if (!finite) {
        ++out.skips.nonfinite;
        continue;
      }
      try {
        const auto [rank, ratio] = detail::base_jacobian_rank(
            F, chart_exprs, 2, p, opts.fd_step, opts.chart_rank_rtol);
        s.chart_rank = rank;
        s.chart_sv_ratio = ratio;
      } catch (const EvalError&) {
        s.chart_rank = 0;
        s.chart_sv_ratio = 0.0;
      }
      out.samples.push_back(s);
    }
  };

  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }

  std::vector<SignatureSample> samples;
  SampleSkips skips;
  for (const Chunk& c : chunks) {
    samples.insert(samples.end(), c.samples.begin(), c.samples.end());
    skips.singular += c.skips.singular;
    skips.not_weak += c.skips.not_weak;
    skips.degenerate += c.skips.degenerate;
    skips.failed += c.skips.failed;
    skips.nonfinite += c.skips.nonfinite;
  }
  if (samples.empty())
    throw DomainError("sample_signature: no regular grid points for system '" +
                      F.label() + "' (" + skips.summary() + ")");
  return SignatureManifold(F.label(), box, std::move(samples), skips);
}

// ---------------------------------------------------------------------------
// Graph comparison

enum class Verdict { equivalent, inequivalent, inconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::equivalent: return "equivalent";
    case Verdict::inequivalent: return "inequivalent";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

struct CompareOptions {
  double tol = 1e-4;             // max relative graph deviation for "equivalent"
  int neighbors = 12;            // moving-least-squares stencil size
  double min_overlap = 0.2;      // required fraction of covered samples
  double coverage_factor = 2.0;  // x median spacing = "inside the cloud"
  double inequiv_factor = 10.0;  // deviations above factor*tol count against
  double inequiv_fraction = 0.05;
  std::size_t min_fitted = 10;        // fewer fits than this -> sparse data
  double fit_residual_limit = 2.5e-4; // reject fits whose own residual is above this
};

struct EquivalenceVerdict {
  Verdict verdict = Verdict::inconclusive;
  double max_deviation = 0.0;     // over successfully fitted samples
  double overlap_fraction = 0.0;  // covered / compared
  double exceed_fraction = 0.0;   // gross deviations / covered
  std::size_t compared = 0;
  std::size_t covered = 0;
  std::size_t fitted = 0;
  std::size_t degenerate_fits = 0;  // rank-deficient local fits (skipped)
  std::size_t unstable_fits = 0;    // fits rejected by the residual guard
  std::string mode = "regular";
  std::string reason;  // machine-readable cause when inconclusive
  std::string diagnostics;
};

namespace detail {

// Weighted local-linear fit of m response columns over the k nearest
// reference points; predicts at the query chart location (the intercept).
// Returns false when the design matrix is rank deficient.
inline bool mls_predict(const std::vector<std::array<double, 3>>& ref_norm_chart,
                        const std::vector<const double*>& responses, std::size_t m,
                        const std::vector<int>& idx, const std::vector<double>& dist,
                        const std::array<double, 3>& q_norm, int chart_dim,
                        std::vector<double>* predicted, double* fit_residual) {
  const std::size_t k = idx.size();
  const std::size_t cols = static_cast<std::size_t>(chart_dim) + 1;
  if (k < cols) return false;
  // An exact chart match is its own best local model; returning the stored
  // values keeps interpolation at a data site bias-free.
  if (dist[0] <= 1e-12) {
    predicted->resize(m);
    for (std::size_t r = 0; r < m; ++r)
      (*predicted)[r] = responses[r][idx[0]];
    *fit_residual = 0.0;
    return true;
  }
  const double dmax = dist.back();
  const double h = 1.05 * dmax + 1e-300;
  Eigen::MatrixXd X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(cols));
  Eigen::MatrixXd Y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  Eigen::VectorXd w(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    const double t = dist[i] / h;
    const double c = 1.0 - t * t * t;
    w(static_cast<Eigen::Index>(i)) = std::sqrt(std::max(c * c * c, 1e-6));
    const auto& nb = ref_norm_chart[static_cast<std::size_t>(idx[i])];
    X(static_cast<Eigen::Index>(i), 0) = 1.0;
    for (int a = 0; a < chart_dim; ++a)
      X(static_cast<Eigen::Index>(i), a + 1) =
          nb[static_cast<std::size_t>(a)] - q_norm[static_cast<std::size_t>(a)];
    for (std::size_t r = 0; r < m; ++r)
      Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) =
          responses[r][idx[i]];
  }
  const Eigen::MatrixXd Xw = w.asDiagonal() * X;
  const Eigen::MatrixXd Yw = w.asDiagonal() * Y;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < static_cast<Eigen::Index>(cols)) return false;
  const Eigen::MatrixXd beta = qr.solve(Yw);
  predicted->resize(m);
  // Residual of the stencil against its own linear model, on the same
  // relative scale as graph deviations; large values flag neighborhoods the
  // linear model cannot represent (so predictions there are unreliable).
  *fit_residual = 0.0;
  const Eigen::MatrixXd R = Xw * beta - Yw;
  for (std::size_t r = 0; r < m; ++r) {
    (*predicted)[r] = beta(0, static_cast<Eigen::Index>(r));
    const double rms = R.col(static_cast<Eigen::Index>(r)).norm() /
                       std::sqrt(static_cast<double>(k));
    *fit_residual = std::max(
        *fit_residual, rms / std::max(1.0, std::abs((*predicted)[r])));
  }
  return true;
}

struct GraphCompareInput {
  // Query side: chart location and graph values per sample.
  const std::vector<std::array<double, 3>>* query_chart = nullptr;  // raw coords
  const std::vector<std::vector<double>>* query_graphs = nullptr;   // [sample][m]
  // Reference side.
  const std::vector<std::array<double, 3>>* ref_chart = nullptr;  // raw coords
  const ChartIndex* ref_index = nullptr;
  const std::vector<const double*>* ref_graphs = nullptr;  // m column pointers
  int chart_dim = 3;
};

inline void compare_graphs(const GraphCompareInput& in, const CompareOptions& opts,
                           EquivalenceVerdict* out) {
  const auto& qc = *in.query_chart;
  const auto& qg = *in.query_graphs;
  const ChartIndex& ix = *in.ref_index;
  const std::size_t m = in.ref_graphs->size();
  // Normalized chart coordinates of every reference point, for fit offsets.
  std::vector<std::array<double, 3>> ref_norm(in.ref_chart->size());
  for (std::size_t i = 0; i < ref_norm.size(); ++i)
    ref_norm[i] = ix.normalize((*in.ref_chart)[i]);
  const double cover = opts.coverage_factor * ix.median_spacing() + 1e-12;
  std::vector<int> idx;
  std::vector<double> dist;
  std::vector<double> pred;
  out->compared = qc.size();
  for (std::size_t i = 0; i < qc.size(); ++i) {
    ix.nearest(qc[i], opts.neighbors, &idx, &dist);
    if (idx.empty() || dist[0] > cover) continue;
    ++out->covered;
    const auto q_norm = ix.normalize(qc[i]);
    double fit_residual = 0.0;
    if (!mls_predict(ref_norm, *in.ref_graphs, m, idx, dist, q_norm, in.chart_dim,
                     &pred, &fit_residual)) {
      ++out->degenerate_fits;
      continue;
    }
    if (fit_residual > opts.fit_residual_limit) {
      ++out->unstable_fits;
      continue;
    }
    double dev = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const double v = qg[i][r];
      dev = std::max(dev, std::abs(pred[r] - v) / std::max(1.0, std::abs(v)));
    }
    ++out->fitted;
    out->max_deviation = std::max(out->max_deviation, dev);
    if (dev > opts.inequiv_factor * opts.tol) out->exceed_fraction += 1.0;
  }
  out->overlap_fraction =
      out->compared ? static_cast<double>(out->covered) / out->compared : 0.0;
  out->exceed_fraction = out->covered ? out->exceed_fraction / out->covered : 0.0;
}

}  // namespace detail

inline EquivalenceVerdict compare_signatures(const SignatureManifold& A,
                                             const SignatureManifold& B,
                                             const CompareOptions& opts = {}) {
  EquivalenceVerdict v;
  v.mode = "regular";
  std::ostringstream diag;
  diag << "A='" << A.label() << "' (" << A.samples().size() << " samples, rank3 "
       << A.rank3_fraction() << "), B='" << B.label() << "' (" << B.samples().size()
       << " samples, rank3 " << B.rank3_fraction() << ")";
  if (!A.chart_regular() || !B.chart_regular()) {
    v.verdict = Verdict::inconclusive;
    v.reason = "chart-failure";
    diag << "; chart coordinates are rank deficient on "
         << (!A.chart_regular() ? "A" : "B");
    v.diagnostics = diag.str();
    return v;
  }

  std::vector<std::array<double, 3>> query_chart;
  std::vector<std::vector<double>> query_graphs;
  query_chart.reserve(A.samples().size());
  query_graphs.reserve(A.samples().size());
  for (const auto& s : A.samples()) {
    query_chart.push_back({s.sig[0], s.sig[1], s.sig[2]});
    query_graphs.push_back({s.sig[3], s.sig[4], s.sig[5], s.sig[6], s.sig[7]});
  }
  std::vector<std::vector<double>> ref_cols(5, std::vector<double>(B.samples().size()));
  for (std::size_t i = 0; i < B.samples().size(); ++i)
    for (std::size_t r = 0; r < 5; ++r) ref_cols[r][i] = B.samples()[i].sig[3 + r];
  std::vector<const double*> ref_ptrs;
  for (const auto& c : ref_cols) ref_ptrs.push_back(c.data());

  std::vector<std::array<double, 3>> ref_chart;
  ref_chart.reserve(B.samples().size());
  for (const auto& s : B.samples()) ref_chart.push_back({s.sig[0], s.sig[1], s.sig[2]});

  detail::GraphCompareInput in;
  in.query_chart = &query_chart;
  in.query_graphs = &query_graphs;
  in.ref_chart = &ref_chart;
  in.ref_index = &B.index();
  in.ref_graphs = &ref_ptrs;
  in.chart_dim = 3;
  detail::compare_graphs(in, opts, &v);

  diag << "; covered " << v.covered << "/" << v.compared << ", fitted " << v.fitted
       << ", degenerate " << v.degenerate_fits << ", unstable " << v.unstable_fits
       << ", max deviation " << v.max_deviation << ", gross fraction "
       << v.exceed_fraction;
  if (v.covered == 0) {
    v.verdict = Verdict::inconclusive;
    v.reason = "no-overlap";
  } else if (v.fitted == 0) {
    v.verdict = Verdict::inconclusive;
    v.reason = "sparse-data";
  } else if (v.max_deviation <= opts.tol && v.overlap_fraction >= opts.min_overlap &&
             v.fitted >= opts.min_fitted) {
    v.verdict = Verdict::equivalent;
  } else if (v.exceed_fraction >= opts.inequiv_fraction) {
    v.verdict = Verdict::inequivalent;
  } else {
    v.verdict = Verdict::inconclusive;
    v.reason = v.overlap_fraction < opts.min_overlap ? "no-overlap"
               : v.fitted < opts.min_fitted          ? "sparse-data"
                                                     : "borderline-deviation";
  }
  v.diagnostics = diag.str();
  return v;
}

// ---------------------------------------------------------------------------
// Restricted signature for systems with J_u identically zero
//
// On the branch F = A(y, y1) + B(u, y)*y1^2 the regular chart collapses.  The
// restricted five-component signature (J, M, nabla_y1 J, nabla_u M,
// nabla_y1 M) still transports along feedback transformations, but no
// theorem promises it separates inequivalent systems, so every verdict in
// this mode is labelled "heuristic".  Chart coordinates are chosen among
// {J, nabla_y1 J, nabla_u M} by numeric rank of their base-point gradients.

inline constexpr std::array<const char*, 5> kHeuristicNames = {
    "J", "M", "nabla_y1(J)", "nabla_u(M)", "nabla_y1(M)"};
inline constexpr std::array<int, 3> kHeuristicChartCandidates = {0, 2, 3};

inline const std::array<ExprPtr, 5>& heuristic_signature_exprs() {
  static const std::array<ExprPtr, 5> exprs = [] {
    const InvariantFrame& fr = InvariantFrame::instance();
    const FrameDerivations& d = fr.derivations();
    return std::array<ExprPtr, 5>{fr.J(), fr.M(), d.nabla_y1.apply(fr.J()),
                                  d.nabla_u.apply(fr.M()),
                                  d.nabla_y1.apply(fr.M())};
  }();
  return exprs;
}

struct HeuristicSample {
  BasePoint point{};
  std::array<double, 5> sig{};
  int chart_rank = 0;  // rank of the chosen chart entries' base-point Jacobian
};

struct HeuristicOptions {
  RegularityThresholds regularity{};
  double chart_rank_rtol = 1e-6;
  double fd_step = 1e-5;
  int threads = 1;
};

class HeuristicSignature {
 public:
  static constexpr double kChartRegularFraction = 0.99;

  HeuristicSignature(std::string label, GridBox box, std::vector<HeuristicSample> samples,
                     SampleSkips skips, std::vector<int> chart_axes, double max_abs_Ju,
                     std::map<std::vector<int>, double> subset_rank_fraction = {})
      : label_(std::move(label)),
        box_(box),
        samples_(std::move(samples)),
        skips_(skips),
        chart_axes_(std::move(chart_axes)),
        max_abs_Ju_(max_abs_Ju),
        subset_rank_fraction_(std::move(subset_rank_fraction)) {
    std::vector<std::array<double, 3>> charts;
    charts.reserve(samples_.size());
    std::size_t full = 0;
    for (const auto& s : samples_) {
      charts.push_back(chart_of(s));
      if (s.chart_rank == static_cast<int>(chart_axes_.size())) ++full;
    }
    index_.build(std::move(charts));
    rank_fraction_ = samples_.empty() ? 0.0 : static_cast<double>(full) / samples_.size();
  }

  const std::string& label() const { return label_; }
  const GridBox& box() const { return box_; }
  const std::vector<HeuristicSample>& samples() const { return samples_; }
  const SampleSkips& skips() const { return skips_; }
  const ChartIndex& index() const { return index_; }
  const std::vector<int>& chart_axes() const { return chart_axes_; }
  int chart_dim() const { return static_cast<int>(chart_axes_.size()); }
  std::vector<int> graph_axes() const {
    std::vector<int> g;
    for (int i = 0; i < 5; ++i)
      if (std::find(chart_axes_.begin(), chart_axes_.end(), i) == chart_axes_.end())
        g.push_back(i);
    return g;
  }
  double rank_fraction() const { return rank_fraction_; }
  bool chart_regular() const {
    return !samples_.empty() && !chart_axes_.empty() &&
           rank_fraction_ >= kChartRegularFraction;
  }
  // Largest |J_u| seen while sampling; ~0 confirms the degenerate branch.
  double max_abs_Ju() const { return max_abs_Ju_; }

  std::array<double, 3> chart_of(const HeuristicSample& s) const {
    return chart_of(s, chart_axes_);
  }
  static std::array<double, 3> chart_of(const HeuristicSample& s, const std::vector<int>& axes) {
    std::array<double, 3> c{0, 0, 0};
    for (std::size_t a = 0; a < axes.size() && a < 3; ++a)
      c[a] = s.sig[static_cast<std::size_t>(axes[a])];
    return c;
  }

  // Fraction of samples at which the given candidate-axis subset has full
  // pointwise gradient rank, for every nonempty subset of the active
  // candidates.  Lets a comparison pick axes that are regular on both sides.
  const std::map<std::vector<int>, double>& subset_rank_fractions() const {
    return subset_rank_fraction_;
  }
  double subset_fraction(const std::vector<int>& axes) const {
    auto it = subset_rank_fraction_.find(axes);
    return it == subset_rank_fraction_.end() ? 0.0 : it->second;
  }

 private:
  std::string label_;
  GridBox box_;
  std::vector<HeuristicSample> samples_;
  SampleSkips skips_;
  std::vector<int> chart_axes_;
  double max_abs_Ju_ = 0.0;
  std::map<std::vector<int>, double> subset_rank_fraction_;
  ChartIndex index_;
  double rank_fraction_ = 0.0;
};

inline HeuristicSignature sample_signature_heuristic(const SystemF& F, const GridBox& box,
                                                     const HeuristicOptions& opts = {}) {
  const auto& exprs = heuristic_signature_exprs();
  const ExprPtr& Ju_expr = InvariantFrame::instance().catalog().at("J_u").expr;
  const std::array<ExprPtr, 3> cand_exprs = {
      exprs[static_cast<std::size_t>(kHeuristicChartCandidates[0])],
      exprs[static_cast<std::size_t>(kHeuristicChartCandidates[1])],
      exprs[static_cast<std::size_t>(kHeuristicChartCandidates[2])]};
  F.ensure_order(4);

  const std::vector<BasePoint> pts = grid_points(box);
  struct Record {
    HeuristicSample sample;
    Eigen::Matrix3d grad;  // row: candidate, column: base direction
  };
  struct Chunk {
    std::vector<Record> records;
    SampleSkips skips;
    double max_abs_Ju = 0.0;
  };
  const int threads = std::max(1, opts.threads);
  std::vector<Chunk> chunks(static_cast<std::size_t>(threads));

  auto work = [&](int t) {
    Chunk& out = chunks[static_cast<std::size_t>(t)];
    const std::size_t lo = pts.size() * static_cast<std::size_t>(t) / threads;
    const std::size_t hi = pts.size() * (static_cast<std::size_t>(t) + 1) / threads;
    for (std::size_t i = lo; i < hi; ++i) {
      const BasePoint& p = pts[i];
      if (std::abs(p.y1) <= opts.regularity.singular_y1) {
        ++out.skips.singular;
        continue;
      }
      Record rec;
      rec.sample.point = p;
      try {
        const JetPoint jp = F.jet_at(p, 4);
        if (std::abs(jp.value(MultiIndex{1, 0, 0})) <= opts.regularity.weak_f_u) {
          ++out.skips.not_weak;
          continue;
        }
        for (std::size_t r = 0; r < 5; ++r) rec.sample.sig[r] = evaluate_at(exprs[r], jp);
        out.max_abs_Ju = std::max(out.max_abs_Ju, std::abs(evaluate_at(Ju_expr, jp)));
        // Base-point gradients of the chart candidates by central differences.
        const double coords[3] = {p.u, p.y, p.y1};
        for (int a = 0; a < 3; ++a) {
          const double h = opts.fd_step * std::max(1.0, std::abs(coords[a]));
          BasePoint phi = p, plo = p;
          (a == 0 ? phi.u : a == 1 ? phi.y : phi.y1) += h;
          (a == 0 ? plo.u : a == 1 ? plo.y : plo.y1) -= h;
          const JetPoint jhi = F.jet_at(phi, 4);
          const JetPoint jlo = F.jet_at(plo, 4);
          for (int r = 0; r < 3; ++r)
            rec.grad(r, a) = (evaluate_at(cand_exprs[static_cast<std::size_t>(r)], jhi) -
                              evaluate_at(cand_exprs[static_cast<std::size_t>(r)], jlo)) /
                             (2.0 * h);
        }
      } catch (const EvalError&) {
        ++out.skips.failed;
        continue;
      }
      bool finite = true;
      for (double v : rec.sample.sig) finite = finite && std::isfinite(v);
      finite = finite && rec.grad.allFinite();
      if (!finite) {
        ++out.skips.nonfinite;
        continue;
      }
      out.records.push_back(rec);
    }
  };

  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }

  std::vector<Record> records;
  SampleSkips skips;
  double max_abs_Ju = 0.0;
  for (const Chunk& c : chunks) {
    records.insert(records.end(), c.records.begin(), c.records.end());
    skips.singular += c.skips.singular;
    skips.not_weak += c.skips.not_weak;
    skips.failed += c.skips.failed;
    skips.nonfinite += c.skips.nonfinite;
    max_abs_Ju = std::max(max_abs_Ju, c.max_abs_Ju);
  }
  if (records.empty())
    throw DomainError("sample_signature_heuristic: no usable grid points for system '" +
                      F.label() + "' (" + skips.summary() + ")");

  // Choose chart axes: stack every sample's candidate gradients (one long
  // column per candidate) and read the independent columns off a
  // column-pivoted QR.  Candidates whose gradient is numerically zero across
  // the whole patch are constants: their finite-difference columns are pure
  // roundoff noise and must be discarded before normalization, or the noise
  // would masquerade as an independent direction.
  Eigen::MatrixXd stacked(static_cast<Eigen::Index>(3 * records.size()), 3);
  for (std::size_t i = 0; i < records.size(); ++i)
    for (int r = 0; r < 3; ++r)
      for (int a = 0; a < 3; ++a)
        stacked(static_cast<Eigen::Index>(3 * i + static_cast<std::size_t>(a)), r) =
            records[i].grad(r, a);
  const double entries = std::sqrt(static_cast<double>(stacked.rows()));
  std::array<double, 3> rms{};
  double rms_max = 0.0;
  for (int c = 0; c < 3; ++c) {
    rms[static_cast<std::size_t>(c)] = stacked.col(c).norm() / entries;
    rms_max = std::max(rms_max, rms[static_cast<std::size_t>(c)]);
  }
  constexpr double kGradFloor = 1e-7;  // below this RMS the candidate is constant
  std::vector<int> active;
  for (int c = 0; c < 3; ++c)
    if (rms[static_cast<std::size_t>(c)] > std::max(kGradFloor, 1e-6 * rms_max))
      active.push_back(c);
  // With at most three candidate axes there are only seven nonempty subsets:
  // pick, among the active candidates, the largest subset whose per-sample
  // gradient rows have full rank on at least kChartRegularFraction of the
  // samples (ties broken by higher fraction).  A global fit (e.g. stacked QR)
  // can pick directions that are independent in aggregate but collapse
  // pointwise, so the selection is done against the pointwise criterion that
  // the chart must eventually satisfy.
  auto rank_counts = [&](const std::vector<int>& subset) {
    std::size_t full = 0;
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(subset.size()), 3);
    for (const auto& rec : records) {
      for (std::size_t r = 0; r < subset.size(); ++r)
        sub.row(static_cast<Eigen::Index>(r)) = rec.grad.row(subset[r]);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(sub);
      const auto& sv = svd.singularValues();
      int rank = 0;
      if (sv.size() > 0 && sv(0) > 0.0)
        for (Eigen::Index i = 0; i < sv.size(); ++i)
          if (sv(i) > opts.chart_rank_rtol * sv(0)) ++rank;
      if (rank == static_cast<int>(subset.size())) ++full;
    }
    return records.empty() ? 0.0 : static_cast<double>(full) / records.size();
  };
  std::map<std::vector<int>, double> subset_fractions;  // keyed by catalog axes
  for (std::size_t mask = 1; mask < (1u << active.size()); ++mask) {
    std::vector<int> rows, axes;
    for (std::size_t c = 0; c < active.size(); ++c)
      if (mask & (1u << c)) {
        rows.push_back(active[c]);
        axes.push_back(kHeuristicChartCandidates[static_cast<std::size_t>(active[c])]);
      }
    std::sort(axes.begin(), axes.end());
    subset_fractions[axes] = rank_counts(rows);
  }
  // Largest subset that is pointwise full-rank on enough samples wins; if no
  // subset qualifies, keep the best singleton so diagnostics stay meaningful.
  std::vector<int> chart_axes;
  double chosen_frac = -1.0;
  for (const auto& [axes, f] : subset_fractions) {
    const bool qualifies = f >= HeuristicSignature::kChartRegularFraction;
    const bool chosen_qualifies = chosen_frac >= HeuristicSignature::kChartRegularFraction;
    bool better = false;
    if (qualifies && !chosen_qualifies) better = true;
    else if (qualifies == chosen_qualifies) {
      if (qualifies)
        better = axes.size() > chart_axes.size() ||
                 (axes.size() == chart_axes.size() && f > chosen_frac);
      else
        better = axes.size() == 1 && f > chosen_frac;
    }
    if (better) {
      chart_axes = axes;
      chosen_frac = f;
    }
  }

  // Per-sample rank of the chosen chart rows.
  const int dim = static_cast<int>(chart_axes.size());
  std::vector<HeuristicSample> samples;
  samples.reserve(records.size());
  for (auto& rec : records) {
    Eigen::MatrixXd sub(dim, 3);
    for (int r = 0; r < dim; ++r) {
      int cand = 0;
      for (int c = 0; c < 3; ++c)
        if (kHeuristicChartCandidates[static_cast<std::size_t>(c)] == chart_axes[static_cast<std::size_t>(r)])
          cand = c;
      sub.row(r) = rec.grad.row(cand);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(sub);
    const auto& sv = svd.singularValues();
    int rank = 0;
    if (sv.size() > 0 && sv(0) > 0.0)
      for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > opts.chart_rank_rtol * sv(0)) ++rank;
    rec.sample.chart_rank = rank;
    samples.push_back(rec.sample);
  }
  return HeuristicSignature(F.label(), box, std::move(samples), skips,
                            std::move(chart_axes), max_abs_Ju, std::move(subset_fractions));
}

inline EquivalenceVerdict compare_signatures_heuristic(const HeuristicSignature& A,
                                                       const HeuristicSignature& B,
                                                       const CompareOptions& opts = {}) {
  EquivalenceVerdict v;
  v.mode = "heuristic";
  std::ostringstream diag;
  auto axes_text = [](const std::vector<int>& ax) {
    std::string s = "{";
    for (std::size_t i = 0; i < ax.size(); ++i)
      s += std::string(i ? "," : "") + kHeuristicNames[static_cast<std::size_t>(ax[i])];
    return s + "}";
  };
  diag << "A='" << A.label() << "' (" << A.samples().size() << " samples, chart "
       << axes_text(A.chart_axes()) << ", rank ok " << A.rank_fraction() << "), B='"
       << B.label() << "' (" << B.samples().size() << " samples, chart "
       << axes_text(B.chart_axes()) << ", rank ok " << B.rank_fraction() << ")";
  if (A.chart_axes().empty() && B.chart_axes().empty()) {
    // Every candidate invariant is constant on both patches, so each signature
    // is a single point in R^5; compare the (median) values directly.
    auto median_sig = [](const HeuristicSignature& S, int r) {
      std::vector<double> vals;
      vals.reserve(S.samples().size());
      for (const auto& s : S.samples()) vals.push_back(s.sig[static_cast<std::size_t>(r)]);
      std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2),
                       vals.end());
      return vals[vals.size() / 2];
    };
    double maxdev = 0.0;
    for (int r = 0; r < 5; ++r) {
      const double a = median_sig(A, r), b = median_sig(B, r);
      maxdev = std::max(maxdev, std::abs(a - b) / std::max(1.0, std::abs(b)));
    }
    v.compared = v.covered = v.fitted = A.samples().size();
    v.overlap_fraction = 1.0;
    v.max_deviation = maxdev;
    if (maxdev <= opts.tol) {
      v.verdict = Verdict::equivalent;
    } else if (maxdev > opts.inequiv_factor * opts.tol) {
      v.verdict = Verdict::inequivalent;
      v.exceed_fraction = 1.0;
    } else {
      v.verdict = Verdict::inconclusive;
      v.reason = "borderline-deviation";
    }
    diag << "; constant signatures, max deviation " << maxdev;
    v.diagnostics = diag.str();
    return v;
  }
  // Pointwise rank of a given axis subset can differ between the two systems
  // (finite-difference truncation error scales with each system's higher
  // derivatives), so pick the largest subset that is regular on BOTH sides
  // rather than insisting each side's own favourite matches.
  std::vector<int> joint;
  double joint_fa = 0.0, joint_fb = 0.0;
  for (const auto& [axes, fa] : A.subset_rank_fractions()) {
    const double fb = B.subset_fraction(axes);
    if (fa < HeuristicSignature::kChartRegularFraction ||
        fb < HeuristicSignature::kChartRegularFraction)
      continue;
    if (axes.size() > joint.size() ||
        (axes.size() == joint.size() && std::min(fa, fb) > std::min(joint_fa, joint_fb))) {
      joint = axes;
      joint_fa = fa;
      joint_fb = fb;
    }
  }
  if (joint.empty() || A.samples().empty() || B.samples().empty()) {
    v.verdict = Verdict::inconclusive;
    v.reason = "chart-failure";
    v.diagnostics = diag.str();
    return v;
  }
  diag << "; joint chart " << axes_text(joint) << " (rank ok " << joint_fa << "/" << joint_fb
       << ")";

  std::vector<int> graphs;
  for (int i = 0; i < 5; ++i)
    if (std::find(joint.begin(), joint.end(), i) == joint.end()) graphs.push_back(i);
  const std::size_t m = graphs.size();
  std::vector<std::array<double, 3>> query_chart, ref_chart;
  std::vector<std::vector<double>> query_graphs;
  query_chart.reserve(A.samples().size());
  for (const auto& s : A.samples()) {
    query_chart.push_back(HeuristicSignature::chart_of(s, joint));
    std::vector<double> g(m);
    for (std::size_t r = 0; r < m; ++r)
      g[r] = s.sig[static_cast<std::size_t>(graphs[r])];
    query_graphs.push_back(std::move(g));
  }
  ref_chart.reserve(B.samples().size());
  std::vector<std::vector<double>> ref_cols(m, std::vector<double>(B.samples().size()));
  for (std::size_t i = 0; i < B.samples().size(); ++i) {
    ref_chart.push_back(HeuristicSignature::chart_of(B.samples()[i], joint));
    for (std::size_t r = 0; r < m; ++r)
      ref_cols[r][i] = B.samples()[i].sig[static_cast<std::size_t>(graphs[r])];
  }
  std::vector<const double*> ref_ptrs;
  for (const auto& c : ref_cols) ref_ptrs.push_back(c.data());

  ChartIndex joint_index;
  joint_index.build(ref_chart);

  detail::GraphCompareInput in;
  in.query_chart = &query_chart;
  in.query_graphs = &query_graphs;
  in.ref_chart = &ref_chart;
  in.ref_index = &joint_index;
  in.ref_graphs = &ref_ptrs;
  in.chart_dim = static_cast<int>(joint.size());
  detail::compare_graphs(in, opts, &v);

  diag << "; covered " << v.covered << "/" << v.compared << ", fitted " << v.fitted
       << ", degenerate " << v.degenerate_fits << ", unstable " << v.unstable_fits
       << ", max deviation " << v.max_deviation << ", gross fraction "
       << v.exceed_fraction;
  if (v.covered == 0) {
    v.verdict = Verdict::inconclusive;
    v.reason = "no-overlap";
  } else if (v.fitted == 0) {
    v.verdict = Verdict::inconclusive;
    v.reason = "sparse-data";
  } else if (v.max_deviation <= opts.tol && v.overlap_fraction >= opts.min_overlap &&
             v.fitted >= opts.min_fitted) {
    v.verdict = Verdict::equivalent;
  } else if (v.exceed_fraction >= opts.inequiv_fraction) {
    v.verdict = Verdict::inequivalent;
  } else {
    v.verdict = Verdict::inconclusive;
    v.reason = v.overlap_fraction < opts.min_overlap ? "no-overlap"
               : v.fitted < opts.min_fitted          ? "sparse-data"
                                                     : "borderline-deviation";
  }
  v.diagnostics = diag.str();
  return v;
}

// Axis-aligned bounding box of the point-map preimage of a sampling box,
// probed on a coarse sweep.  A transformed system sampled over this box
// reaches the same signature patch as the original system sampled over
// `box`: the transformed system's invariants at p equal the original's at
// transform_point(p), so matching patches means sampling the preimage.
inline GridBox preimage_box(const FeedbackMap& phi, const GridBox& box,
                            int probe_per_axis = 7, double margin = 0.05) {
  AxisSpec probes[3] = {box.u, box.y, box.y1};
  for (auto& a : probes) a.count = probe_per_axis;
  GridBox probe_box{probes[0], probes[1], probes[2]};
  double lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::numeric_limits<double>::infinity();
    hi[a] = -lo[a];
  }
  std::size_t inverted = 0;
  std::optional<BasePoint> guess;
  for (const BasePoint& p : grid_points(probe_box)) {
    BasePoint q;
    try {
      q = invert_point(phi, p, guess);
    } catch (const DomainError&) {
      continue;
    }
    guess = q;
    ++inverted;
    const double c[3] = {q.u, q.y, q.y1};
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], c[a]);
      hi[a] = std::max(hi[a], c[a]);
    }
  }
  if (inverted == 0)
    throw DomainError("preimage_box: point map could not be inverted anywhere on the box");
  GridBox out = box;
  AxisSpec* axes[3] = {&out.u, &out.y, &out.y1};
  for (int a = 0; a < 3; ++a) {
    const double pad = margin * std::max(hi[a] - lo[a], 1e-6);
    axes[a]->lo = lo[a] - pad;
    axes[a]->hi = hi[a] + pad;
  }
  return out;
}

}  // namespace feedinv

