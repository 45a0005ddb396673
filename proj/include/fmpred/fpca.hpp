#pragma once

// Per-cluster mean/covariance estimation, Karhunen-Loeve eigenpairs, scores,
// and restriction of a fitted model to observed/future subdomains.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmpred/errors.hpp"
#include "fmpred/grid.hpp"
#include "fmpred/numerics.hpp"
#include "fmpred/random.hpp"

namespace fmpred {

inline constexpr double kDefaultFve = 0.90;

struct FpcaOptions {
  double fve = kDefaultFve;
  int cv_folds = kDefaultCvFolds;
  std::uint64_t seed = 0;
  std::vector<double> candidate_bandwidths;  // hours; empty selects the default grid
  std::optional<double> mean_bandwidth;      // fixed bandwidths skip cross-validation
  std::optional<double> cov_bandwidth;

  std::vector<Bandwidth> candidates(const TimeGrid& grid) const {
    if (candidate_bandwidths.empty()) return default_bandwidth_candidates(grid);
    std::vector<Bandwidth> out;
    for (double h : candidate_bandwidths) out.emplace_back(h);
    return out;
  }
};

struct MeanEstimate {
  SampledCurve mean;
  Bandwidth bandwidth{1.0};
};

struct CovarianceEstimate {
  Surface covariance;
  double noise_variance = 0.0;
  bool noise_clamped = false;  // raw estimate was negative and was set to 0
  Bandwidth bandwidth{1.0};
};

/// Eigenpairs of a covariance kernel. Columns of `eigenfunctions` are
/// orthonormal under trapezoid quadrature; eigenvalues are positive and
/// nonincreasing.
struct Spectrum {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenfunctions;
};

/// Mean function, covariance and truncated eigenbasis for one cluster. Also
/// used for restrictions to a subdomain, in which case `grid` is the subgrid
/// and `covariance` the corresponding diagonal block.
struct ClusterModel {
  int label = 0;
  TimeGrid grid;
  Eigen::VectorXd mean;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenfunctions;  // grid points x eigenvalues.size()
  int num_components = 0;
  double noise_variance = 0.0;
  bool noise_clamped = false;
  Eigen::MatrixXd covariance;
  double mean_bandwidth = 0.0;
  double cov_bandwidth = 0.0;
  int num_curves = 0;

  Eigen::Ref<const Eigen::MatrixXd> basis() const { return eigenfunctions.leftCols(num_components); }
};

struct ScoreVector {
  Eigen::VectorXd scores;
  int cluster = 0;
};

struct SubdomainModel {
  double tau = 0.0;
  bool snapped = false;  // requested tau was off-grid
  ClusterModel observed;
  ClusterModel future;
  Surface cross_block;
};

/// Pooled local-linear smooth of all curve values; bandwidth by
/// select_bandwidth_cv unless fixed in the options.
inline MeanEstimate estimate_mean(const CurveSet& curves, const FpcaOptions& opts = {}) {
  if (curves.size() < 2) throw ConfigError("mean estimation needs at least 2 curves");
  const auto m = curves.grid.size();
  std::vector<double> xs, ys;
  xs.reserve(curves.size() * m);
  ys.reserve(curves.size() * m);
  for (std::size_t i = 0; i < curves.size(); ++i)
    for (std::size_t j = 0; j < m; ++j) {
      xs.push_back(curves.grid[j]);
      ys.push_back(curves.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
  std::optional<Bandwidth> h;
  if (opts.mean_bandwidth) {
    h = Bandwidth(*opts.mean_bandwidth);
  } else {
    const auto cands = opts.candidates(curves.grid);
    h = select_bandwidth_cv(xs, ys, cands, opts.cv_folds, derive_seed(opts.seed, streams::kFolds, 0));
  }
  return {local_linear_smooth_1d(xs, ys, {}, *h, curves.grid), *h};
}

inline MeanEstimate estimate_mean(const std::vector<SampledCurve>& curves, const FpcaOptions& opts = {}) {
  return estimate_mean(CurveSet::from_curves(curves), opts);
}

namespace detail {

inline Eigen::MatrixXd offdiag_products(const Eigen::MatrixXd& centered) {
  Eigen::MatrixXd p = centered.transpose() * centered;
  p.diagonal().setZero();
  return p;
}

inline Eigen::MatrixXd offdiag_counts(Eigen::Index m, double n) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Constant(m, m, n);
  w.diagonal().setZero();
  return w;
}

// Leave-curves-out CV for the covariance bandwidth: raw products of one curve
// are strongly dependent, so folds hold out whole curves.
inline Bandwidth select_cov_bandwidth(const TimeGrid& grid, const Eigen::MatrixXd& centered,
                                      const FpcaOptions& opts) {
  const auto n = static_cast<std::size_t>(centered.rows());
  const auto m = centered.cols();
  const int folds = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(opts.cv_folds), n));
  std::vector<std::size_t> perm = iota_rows(n);
  Rng rng(derive_seed(opts.seed, streams::kFolds, 1));
  std::shuffle(perm.begin(), perm.end(), rng);

  const Eigen::MatrixXd total_w = offdiag_counts(m, static_cast<double>(n));
  const Eigen::MatrixXd total_wy = offdiag_products(centered);
  const auto cands = opts.candidates(grid);
  std::vector<double> sse(cands.size(), 0.0);
  std::vector<bool> failed(cands.size(), false);
  double total_sq = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (static_cast<int>(i % static_cast<std::size_t>(folds)) == f) rows.push_back(static_cast<Eigen::Index>(perm[i]));
    Eigen::MatrixXd held(static_cast<Eigen::Index>(rows.size()), m);
    for (std::size_t r = 0; r < rows.size(); ++r) held.row(static_cast<Eigen::Index>(r)) = centered.row(rows[r]);
    const Eigen::MatrixXd wf = offdiag_counts(m, static_cast<double>(rows.size()));
    const Eigen::MatrixXd wyf = offdiag_products(held);
    const Eigen::MatrixXd sq = held.array().square().matrix();
    Eigen::MatrixXd qqf = sq.transpose() * sq;
    qqf.diagonal().setZero();
    total_sq += qqf.sum();
    for (std::size_t c = 0; c < cands.size(); ++c) {
      if (failed[c]) continue;
      try {
        const Eigen::MatrixXd fit =
            smooth_gridded_2d(grid, total_w - wf, total_wy - wyf, BandwidthPair{cands[c], cands[c]});
        sse[c] += (qqf.array() - 2.0 * fit.array() * wyf.array() + fit.array().square() * wf.array()).sum();
      } catch (const SmoothingError&) {
        failed[c] = true;
      }
    }
  }
  std::vector<double> errors(cands.size());
  for (std::size_t c = 0; c < cands.size(); ++c)
    errors[c] = failed[c] ? std::numeric_limits<double>::infinity() : sse[c];
  return pick_bandwidth(cands, errors, total_sq / std::max(1.0, total_w.sum()));
}

}  // namespace detail

/// Smoothed covariance surface from off-diagonal raw products plus the noise
/// variance, read off as the mean gap between the smoothed raw diagonal and the
/// surface diagonal over the middle half of the domain.
inline CovarianceEstimate estimate_covariance(const CurveSet& curves, const SampledCurve& mean,
                                              const FpcaOptions& opts = {}) {
  if (curves.size() < 3) throw ConfigError("covariance estimation needs at least 3 curves");
  require_same_grid(curves.grid, mean.grid, "covariance mean");
  const auto& grid = curves.grid;
  const auto m = static_cast<Eigen::Index>(grid.size());
  const Eigen::MatrixXd centered = curves.values.rowwise() - mean.values.transpose();

  const Bandwidth h = opts.cov_bandwidth ? Bandwidth(*opts.cov_bandwidth)
                                         : detail::select_cov_bandwidth(grid, centered, opts);
  Eigen::MatrixXd g = smooth_gridded_2d(grid, detail::offdiag_counts(m, static_cast<double>(curves.size())),
                                        detail::offdiag_products(centered), BandwidthPair{h, h});
  g = 0.5 * (g + g.transpose()).eval();

  std::vector<double> xs, ys;
  for (Eigen::Index i = 0; i < centered.rows(); ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      xs.push_back(grid[static_cast<std::size_t>(j)]);
      ys.push_back(centered(i, j) * centered(i, j));
    }
  const Bandwidth hd = opts.cov_bandwidth
                           ? h
                           : select_bandwidth_cv(xs, ys, opts.candidates(grid), opts.cv_folds,
                                                 derive_seed(opts.seed, streams::kFolds, 2));
  const SampledCurve diag = local_linear_smooth_1d(xs, ys, {}, hd, grid);

  const double lo = grid.front() + 0.25 * grid.span();
  const double hi = grid.back() - 0.25 * grid.span();
  std::size_t first = grid.nearest_index(lo), last = grid.nearest_index(hi);
  if (last <= first) {
    first = 0;
    last = grid.size() - 1;
  }
  const TimeGrid mid = grid.slice(first, last);
  const Eigen::VectorXd w = trapezoid_weights(mid);
  double gap = 0.0;
  for (std::size_t j = first; j <= last; ++j) {
    const auto k = static_cast<Eigen::Index>(j);
    gap += w[static_cast<Eigen::Index>(j - first)] * (diag.values[k] - g(k, k));
  }
  double sigma2 = gap / mid.span();
  const bool clamped = sigma2 < 0.0;
  if (clamped) sigma2 = 0.0;
  return {Surface(grid, grid, std::move(g)), sigma2, clamped, h};
}

/// Quadrature-weighted eigendecomposition: solves W^1/2 G W^1/2 v = lambda v
/// and maps back phi = W^-1/2 v, so <phi_j, phi_l> = delta_jl under the
/// trapezoid rule. Nonpositive eigenvalues are dropped. Each phi has a
/// nonnegative integral, or a nonnegative first value when the integral is 0.
inline Spectrum eigendecompose(const Surface& cov) {
  if (!(cov.grid_s == cov.grid_t)) throw InvalidCovarianceError("covariance surface is not square");
  const Eigen::MatrixXd& g = cov.values;
  const double asym = (g - g.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= 1e-8)) throw InvalidCovarianceError("covariance surface is not symmetric");
  const Eigen::VectorXd w = trapezoid_weights(cov.grid_s);
  const Eigen::VectorXd sw = w.cwiseSqrt();
  Eigen::MatrixXd a = sw.asDiagonal() * (0.5 * (g + g.transpose())) * sw.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success) throw InvalidCovarianceError("eigensolver failed");
  const Eigen::VectorXd& vals = es.eigenvalues();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = vals.size() - 1; i >= 0; --i)
    if (vals[i] > 0.0) keep.push_back(i);
  Spectrum s;
  s.eigenvalues.resize(static_cast<Eigen::Index>(keep.size()));
  s.eigenfunctions.resize(g.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(k);
    s.eigenvalues[c] = vals[keep[k]];
    Eigen::VectorXd phi = es.eigenvectors().col(keep[k]).cwiseQuotient(sw);
    const double integral = w.dot(phi);
    if (integral < -1e-12 || (std::abs(integral) <= 1e-12 && phi[0] < 0.0)) phi = -phi;
    s.eigenfunctions.col(c) = phi;
  }
  return s;
}

/// Smallest L whose leading eigenvalues explain at least `delta` of the
/// positive spectrum.
inline int select_num_components(std::span<const double> eigenvalues, double delta = kDefaultFve) {
  if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("FVE threshold must lie in (0, 1]");
  double total = 0.0;
  for (double l : eigenvalues)
    if (l > 0.0) total += l;
  if (!(total > 0.0)) throw NoVarianceError("no positive eigenvalues: the process has no variance");
  double cum = 0.0;
  int count = 0;
  for (double l : eigenvalues) {
    if (!(l > 0.0)) continue;
    cum += l;
    ++count;
    if (cum / total >= delta - 1e-12) return count;
  }
  return count;
}

inline int select_num_components(const Eigen::VectorXd& eigenvalues, double delta = kDefaultFve) {
  return select_num_components(std::span<const double>(eigenvalues.data(), static_cast<std::size_t>(eigenvalues.size())),
                               delta);
}

inline ClusterModel fit_cluster_model(const CurveSet& curves, int label, const FpcaOptions& opts = {}) {
  const MeanEstimate mu = estimate_mean(curves, opts);
  const CovarianceEstimate cov = estimate_covariance(curves, mu.mean, opts);
  Spectrum spec = eigendecompose(cov.covariance);
  // Identical curves leave only rounding noise in the covariance.
  const Eigen::VectorXd w = trapezoid_weights(curves.grid);
  const double energy = (curves.values.cwiseAbs2() * w).mean();
  if (spec.eigenvalues.size() == 0 || spec.eigenvalues.sum() <= 1e-20 * energy)
    throw NoVarianceError("the curves are numerically identical: no variance to decompose");
  ClusterModel model;
  model.label = label;
  model.grid = curves.grid;
  model.mean = mu.mean.values;
  model.num_components = select_num_components(spec.eigenvalues, opts.fve);
  model.eigenvalues = std::move(spec.eigenvalues);
  model.eigenfunctions = std::move(spec.eigenfunctions);
  model.noise_variance = cov.noise_variance;
  model.noise_clamped = cov.noise_clamped;
  model.covariance = cov.covariance.values;
  model.mean_bandwidth = mu.bandwidth.value();
  model.cov_bandwidth = cov.bandwidth.value();
  model.num_curves = static_cast<int>(curves.size());
  return model;
}

/// Scores <Y - mu, phi_j> for j < M by trapezoid quadrature, one row per curve.
inline Eigen::MatrixXd score_matrix(const Eigen::MatrixXd& values, const ClusterModel& model) {
  const Eigen::VectorXd w = trapezoid_weights(model.grid);
  return ((values.rowwise() - model.mean.transpose()) * w.asDiagonal()) * model.basis();
}

inline ScoreVector compute_scores(const SampledCurve& curve, const ClusterModel& model) {
  require_same_grid(curve.grid, model.grid, "curve vs cluster model");
  const Eigen::VectorXd w = trapezoid_weights(model.grid);
  ScoreVector s;
  s.cluster = model.label;
  s.scores = model.basis().transpose() * (w.asDiagonal() * (curve.values - model.mean));
  return s;
}

inline Eigen::VectorXd reconstruct(const ClusterModel& model, const Eigen::VectorXd& scores) {
  return model.mean + model.basis() * scores;
}

/// Squared L2 norm of the curve's residual after projection on the model's
/// truncated subspace.
inline double projection_residual(const Eigen::VectorXd& values, const ClusterModel& model) {
  const Eigen::VectorXd w = trapezoid_weights(model.grid);
  const Eigen::VectorXd centered = values - model.mean;
  const Eigen::VectorXd scores = model.basis().transpose() * (w.asDiagonal() * centered);
  const Eigen::VectorXd r = centered - model.basis() * scores;
  return w.dot(r.cwiseProduct(r));
}

struct TauIndex {
  std::size_t index = 0;
  bool snapped = false;
};

inline TauIndex resolve_tau(const TimeGrid& grid, double tau) {
  if (!std::isfinite(tau) || tau < grid.front() - 1e-9 || tau > grid.back() + 1e-9)
    throw DomainError("tau=" + std::to_string(tau) + " lies outside the model grid");
  if (auto i = grid.index_of(tau)) return {*i, false};
  return {grid.nearest_index(tau), true};
}

/// Inclusive index range of the observed window [max(t0, tau - omega), tau];
/// omega = nullopt means the whole past.
struct WindowSpan {
  std::size_t first = 0;
  std::size_t last = 0;
};

inline WindowSpan observed_window(const TimeGrid& grid, std::size_t tau_index, std::optional<double> omega) {
  if (tau_index < 1) throw DomainError("tau leaves fewer than 2 observed grid points");
  std::size_t first = 0;
  if (omega) {
    if (!(*omega > 0.0)) throw ConfigError("omega must be positive");
    const double start = grid[tau_index] - *omega;
    if (start > grid.front()) first = grid.nearest_index(start);
    if (first >= tau_index) first = tau_index - 1;
  }
  return {first, tau_index};
}

/// Restriction to grid indices [first, last]: sliced mean, diagonal covariance
/// block and its own eigenpairs. The component count is the block's FVE count
/// capped at the parent model's.
inline ClusterModel restrict_window(const ClusterModel& model, std::size_t first, std::size_t last) {
  if (last <= first || last >= model.grid.size()) throw DomainError("invalid subdomain");
  const auto a = static_cast<Eigen::Index>(first);
  const auto len = static_cast<Eigen::Index>(last - first + 1);
  ClusterModel out;
  out.label = model.label;
  out.grid = model.grid.slice(first, last);
  out.mean = model.mean.segment(a, len);
  out.covariance = model.covariance.block(a, a, len, len);
  Spectrum spec = eigendecompose(Surface(out.grid, out.grid, out.covariance));
  out.num_components = spec.eigenvalues.size() == 0
                           ? 0
                           : std::min(select_num_components(spec.eigenvalues, kDefaultFve), model.num_components);
  out.eigenvalues = std::move(spec.eigenvalues);
  out.eigenfunctions = std::move(spec.eigenfunctions);
  out.noise_variance = model.noise_variance;
  out.noise_clamped = model.noise_clamped;
  out.mean_bandwidth = model.mean_bandwidth;
  out.cov_bandwidth = model.cov_bandwidth;
  out.num_curves = model.num_curves;
  return out;
}

/// Same as restrict_window but with an explicit FVE threshold.
inline ClusterModel restrict_window(const ClusterModel& model, std::size_t first, std::size_t last, double fve) {
  ClusterModel out = restrict_window(model, first, last);
  if (out.eigenvalues.size() > 0)
    out.num_components = std::min(select_num_components(out.eigenvalues, fve), model.num_components);
  return out;
}

/// Splits a fitted model at tau into observed [t0, tau] and future [tau, T]
/// parts by slicing the stored covariance; nothing is re-smoothed.
inline SubdomainModel restrict_model(const ClusterModel& model, double tau, double fve = kDefaultFve) {
  const TauIndex ti = resolve_tau(model.grid, tau);
  if (ti.index < 1 || ti.index + 2 > model.grid.size())
    throw DomainError("tau=" + std::to_string(tau) + " must lie strictly inside the grid");
  const std::size_t last = model.grid.size() - 1;
  SubdomainModel sub;
  sub.tau = model.grid[ti.index];
  sub.snapped = ti.snapped;
  sub.observed = restrict_window(model, 0, ti.index, fve);
  sub.future = restrict_window(model, ti.index, last, fve);
  const auto k = static_cast<Eigen::Index>(ti.index);
  sub.cross_block = Surface(sub.observed.grid, sub.future.grid,
                            model.covariance.block(0, k, k + 1, static_cast<Eigen::Index>(last) - k + 1));
  return sub;
}

}  // namespace fmpred
