#pragma once

// Quadrature and local-linear smoothing on dense time grids.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <vector>

#include "fmpred/errors.hpp"
#include "fmpred/grid.hpp"
#include "fmpred/random.hpp"

namespace fmpred {

inline constexpr int kDefaultCvFolds = 10;
inline constexpr int kMaxBandwidthDoublings = 3;
inline constexpr double kKernelSupport = 4.0;

inline Eigen::VectorXd trapezoid_weights(const TimeGrid& grid) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double half = 0.5 * (grid[i + 1] - grid[i]);
    w[static_cast<Eigen::Index>(i)] += half;
    w[static_cast<Eigen::Index>(i) + 1] += half;
  }
  return w;
}

/// Trapezoid approximation of the integral of f*g over the grid span.
inline double inner_product(const SampledCurve& f, const SampledCurve& g) {
  require_same_grid(f.grid, g.grid, "inner_product operands");
  const Eigen::VectorXd w = trapezoid_weights(f.grid);
  return (w.array() * f.values.array() * g.values.array()).sum();
}

/// Gaussian kernel truncated at kKernelSupport standard deviations.
inline double kernel_weight(double u) {
  return std::abs(u) > kKernelSupport ? 0.0 : std::exp(-0.5 * u * u);
}

/// Ten log-spaced values from 2 to 32 grid steps.
inline std::vector<Bandwidth> default_bandwidth_candidates(const TimeGrid& grid) {
  const double step = grid.step();
  std::vector<Bandwidth> out;
  for (int i = 0; i < 10; ++i)
    out.emplace_back(step * std::pow(2.0, 1.0 + 4.0 * i / 9.0));
  return out;
}

namespace detail {

// Scatter data merged by distinct abscissa. Smoothing with repeated x is
// identical to smoothing the merged totals, which keeps pooled-curve fits cheap.
struct Bins {
  std::vector<double> x;
  std::vector<double> w;
  std::vector<double> wy;
};

inline Bins make_bins(std::span<const double> xs, std::span<const double> ys, std::span<const double> ws,
                      const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> order(rows);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  Bins b;
  for (std::size_t r : order) {
    const double w = ws.empty() ? 1.0 : ws[r];
    if (!(w > 0.0)) continue;
    if (b.x.empty() || b.x.back() != xs[r]) {
      b.x.push_back(xs[r]);
      b.w.push_back(0.0);
      b.wy.push_back(0.0);
    }
    b.w.back() += w;
    b.wy.back() += w * ys[r];
  }
  return b;
}

inline std::optional<double> local_linear_at(const Bins& b, double h, double x0) {
  const double reach = kKernelSupport * h;
  auto lo = std::lower_bound(b.x.begin(), b.x.end(), x0 - reach);
  auto hi = std::upper_bound(b.x.begin(), b.x.end(), x0 + reach);
  double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
  int used = 0;
  for (auto it = lo; it != hi; ++it) {
    const auto i = static_cast<std::size_t>(it - b.x.begin());
    const double d = b.x[i] - x0;
    const double k = kernel_weight(d / h);
    if (k <= 0.0) continue;
    ++used;
    s0 += k * b.w[i];
    s1 += k * b.w[i] * d;
    s2 += k * b.w[i] * d * d;
    t0 += k * b.wy[i];
    t1 += k * b.wy[i] * d;
  }
  if (used < 2) return std::nullopt;
  const double det = s0 * s2 - s1 * s1;
  if (!(det > 1e-12 * s0 * s2)) return std::nullopt;
  return (s2 * t0 - s1 * t1) / det;
}

inline double local_linear_with_fallback(const Bins& b, double h, double x0) {
  double width = h;
  for (int attempt = 0; attempt <= kMaxBandwidthDoublings; ++attempt, width *= 2.0)
    if (auto v = local_linear_at(b, width, x0)) return *v;
  std::ostringstream msg;
  msg << "local linear smoothing failed at t=" << x0 << " (bandwidth " << h << " widened "
      << kMaxBandwidthDoublings << " times)";
  throw SmoothingError(msg.str());
}

// Intercept of a weighted plane fit from its normal equations:
// [a b c; b d e; c e f] beta = [p q r].
inline std::optional<double> plane_intercept(double a, double b, double c, double d, double e, double f,
                                             double p, double q, double r) {
  const double det = a * (d * f - e * e) - b * (b * f - c * e) + c * (b * e - c * d);
  const double scale = a * d * f;
  if (!(a > 0.0) || !(det > 1e-12 * scale)) return std::nullopt;
  const double num = p * (d * f - e * e) - b * (q * f - e * r) + c * (q * e - d * r);
  return num / det;
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

inline void check_scatter(std::span<const double> xs, std::span<const double> ys, std::span<const double> ws) {
  if (xs.size() != ys.size() || (!ws.empty() && ws.size() != xs.size()))
    throw ConfigError("scatter arrays must have equal length");
  if (xs.size() < 2) throw ConfigError("local linear smoothing needs at least 2 points");
}

}  // namespace detail

/// Local-linear smoother: at each evaluation point, the intercept of a kernel
/// weighted least-squares line. Degenerate neighbourhoods double the bandwidth
/// up to three times before failing.
inline SampledCurve local_linear_smooth_1d(std::span<const double> xs, std::span<const double> ys,
                                           std::span<const double> weights, Bandwidth h,
                                           const TimeGrid& eval_grid) {
  detail::check_scatter(xs, ys, weights);
  const auto bins = detail::make_bins(xs, ys, weights, detail::iota_rows(xs.size()));
  Eigen::VectorXd out(static_cast<Eigen::Index>(eval_grid.size()));
  for (std::size_t i = 0; i < eval_grid.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = detail::local_linear_with_fallback(bins, h.value(), eval_grid[i]);
  return SampledCurve(eval_grid, std::move(out));
}

/// Mean squared out-of-fold prediction error for each candidate; +inf marks a
/// candidate whose smoother failed on some fold.
inline std::vector<double> cv_error_curve(std::span<const double> xs, std::span<const double> ys,
                                          std::span<const Bandwidth> candidates, int folds,
                                          std::uint64_t seed, std::span<const double> weights = {}) {
  detail::check_scatter(xs, ys, weights);
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (candidates.empty()) throw ConfigError("no candidate bandwidths");
  if (xs.size() < static_cast<std::size_t>(folds)) throw ConfigError("fewer data points than folds");

  const std::size_t n = xs.size();
  std::vector<std::size_t> perm = detail::iota_rows(n);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> fold_of(n);
  for (std::size_t i = 0; i < n; ++i) fold_of[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));

  std::vector<double> sse(candidates.size(), 0.0);
  std::vector<bool> failed(candidates.size(), false);
  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> train, held;
    for (std::size_t i = 0; i < n; ++i) (fold_of[i] == f ? held : train).push_back(i);
    const auto bins = detail::make_bins(xs, ys, weights, train);
    // Held-out points often share abscissae; evaluate each distinct x once.
    std::vector<double> hx;
    for (std::size_t i : held) hx.push_back(xs[i]);
    std::sort(hx.begin(), hx.end());
    hx.erase(std::unique(hx.begin(), hx.end()), hx.end());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (failed[c]) continue;
      std::vector<double> fit(hx.size());
      try {
        for (std::size_t k = 0; k < hx.size(); ++k)
          fit[k] = detail::local_linear_with_fallback(bins, candidates[c].value(), hx[k]);
      } catch (const SmoothingError&) {
        failed[c] = true;
        continue;
      }
      for (std::size_t i : held) {
        const auto k = static_cast<std::size_t>(std::lower_bound(hx.begin(), hx.end(), xs[i]) - hx.begin());
        const double r = ys[i] - fit[k];
        sse[c] += r * r;
      }
    }
  }
  std::vector<double> out(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c)
    out[c] = failed[c] ? std::numeric_limits<double>::infinity() : sse[c] / static_cast<double>(n);
  return out;
}

/// Picks the candidate minimising a CV error curve; near-ties go to the
/// largest bandwidth. `scale` sets the absolute tie floor (typically mean y^2).
inline Bandwidth pick_bandwidth(std::span<const Bandwidth> candidates, const std::vector<double>& errors,
                                double scale) {
  double best = std::numeric_limits<double>::infinity();
  for (double e : errors) best = std::min(best, e);
  if (!std::isfinite(best)) {
    std::ostringstream msg;
    msg << "bandwidth selection failed for every candidate:";
    for (const auto& c : candidates) msg << ' ' << c.value();
    throw BandwidthSelectionError(msg.str());
  }
  const double tol = 1e-12 * best + 1e-24 * (1.0 + scale);
  std::optional<Bandwidth> chosen;
  for (std::size_t c = 0; c < candidates.size(); ++c)
    if (errors[c] <= best + tol && (!chosen || candidates[c].value() > chosen->value())) chosen = candidates[c];
  return *chosen;
}

inline Bandwidth select_bandwidth_cv(std::span<const double> xs, std::span<const double> ys,
                                     std::span<const Bandwidth> candidates, int folds = kDefaultCvFolds,
                                     std::uint64_t seed = 0, std::span<const double> weights = {}) {
  const auto errors = cv_error_curve(xs, ys, candidates, folds, seed, weights);
  double scale = 0.0;
  for (double y : ys) scale += y * y;
  scale /= static_cast<double>(ys.size());
  return pick_bandwidth(candidates, errors, scale);
}

struct ScatterPoint2d {
  double s;
  double t;
  double value;
  double weight = 1.0;
};

namespace detail {

inline std::optional<double> plane_at(std::span<const ScatterPoint2d> pts, double hs, double ht, double s0,
                                      double t0) {
  double a = 0, b = 0, c = 0, d = 0, e = 0, f = 0, p = 0, q = 0, r = 0;
  int used = 0;
  for (const auto& pt : pts) {
    const double ds = pt.s - s0, dt = pt.t - t0;
    const double k = kernel_weight(ds / hs) * kernel_weight(dt / ht) * pt.weight;
    if (k <= 0.0) continue;
    ++used;
    a += k;
    b += k * ds;
    c += k * dt;
    d += k * ds * ds;
    e += k * ds * dt;
    f += k * dt * dt;
    p += k * pt.value;
    q += k * pt.value * ds;
    r += k * pt.value * dt;
  }
  if (used < 3) return std::nullopt;
  return plane_intercept(a, b, c, d, e, f, p, q, r);
}

inline double plane_with_fallback(std::span<const ScatterPoint2d> pts, BandwidthPair h, double s0, double t0) {
  double scale = 1.0;
  for (int attempt = 0; attempt <= kMaxBandwidthDoublings; ++attempt, scale *= 2.0)
    if (auto v = plane_at(pts, h.s.value() * scale, h.t.value() * scale, s0, t0)) return *v;
  std::ostringstream msg;
  msg << "local plane smoothing failed at (" << s0 << ", " << t0 << ")";
  throw SmoothingError(msg.str());
}

}  // namespace detail

/// Local-linear plane smoother with a product kernel over arbitrary scatter.
inline Surface local_linear_smooth_2d(std::span<const ScatterPoint2d> points, BandwidthPair h,
                                      const TimeGrid& grid_s, const TimeGrid& grid_t) {
  if (points.size() < 3) throw ConfigError("local plane smoothing needs at least 3 points");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(grid_s.size()), static_cast<Eigen::Index>(grid_t.size()));
  for (std::size_t i = 0; i < grid_s.size(); ++i)
    for (std::size_t j = 0; j < grid_t.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          detail::plane_with_fallback(points, h, grid_s[i], grid_t[j]);
  return Surface(grid_s, grid_t, std::move(out));
}

/// Plane smoother for data binned on grid x grid cells, evaluated on the same
/// grid: `weight(j, l)` is the total weight in cell (j, l) and `weighted_sum`
/// the weight-times-value total. Equivalent to local_linear_smooth_2d on the
/// unbinned scatter, but the kernel sums reduce to dense matrix products.
inline Eigen::MatrixXd smooth_gridded_2d(const TimeGrid& grid, const Eigen::MatrixXd& weight,
                                         const Eigen::MatrixXd& weighted_sum, BandwidthPair h) {
  const auto m = static_cast<Eigen::Index>(grid.size());
  auto kernel_matrices = [&](double bw) {
    std::array<Eigen::MatrixXd, 3> k{Eigen::MatrixXd(m, m), Eigen::MatrixXd(m, m), Eigen::MatrixXd(m, m)};
    for (Eigen::Index e = 0; e < m; ++e)
      for (Eigen::Index j = 0; j < m; ++j) {
        const double d = grid[static_cast<std::size_t>(j)] - grid[static_cast<std::size_t>(e)];
        const double kw = kernel_weight(d / bw);
        k[0](e, j) = kw;
        k[1](e, j) = kw * d;
        k[2](e, j) = kw * d * d;
      }
    return k;
  };
  const auto ks = kernel_matrices(h.s.value());
  const auto kt = kernel_matrices(h.t.value());
  const Eigen::MatrixXd p0 = ks[0] * weight, p1 = ks[1] * weight, p2 = ks[2] * weight;
  const Eigen::MatrixXd q0 = ks[0] * weighted_sum, q1 = ks[1] * weighted_sum;
  const Eigen::MatrixXd a = p0 * kt[0].transpose(), b = p1 * kt[0].transpose(), c = p0 * kt[1].transpose();
  const Eigen::MatrixXd d = p2 * kt[0].transpose(), e = p1 * kt[1].transpose(), f = p0 * kt[2].transpose();
  const Eigen::MatrixXd p = q0 * kt[0].transpose(), q = q1 * kt[0].transpose(), r = q0 * kt[1].transpose();

  Eigen::MatrixXd out(m, m);
  std::vector<ScatterPoint2d> cells;  // built lazily for degenerate points
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      auto v = detail::plane_intercept(a(i, j), b(i, j), c(i, j), d(i, j), e(i, j), f(i, j), p(i, j), q(i, j),
                                       r(i, j));
      if (v) {
        out(i, j) = *v;
        continue;
      }
      if (cells.empty())
        for (Eigen::Index u = 0; u < m; ++u)
          for (Eigen::Index w = 0; w < m; ++w)
            if (weight(u, w) > 0.0)
              cells.push_back({grid[static_cast<std::size_t>(u)], grid[static_cast<std::size_t>(w)],
                               weighted_sum(u, w) / weight(u, w), weight(u, w)});
      out(i, j) = detail::plane_with_fallback(cells, h, grid[static_cast<std::size_t>(i)],
                                              grid[static_cast<std::size_t>(j)]);
    }
  return out;
}

}  // namespace fmpred
