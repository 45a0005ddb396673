#pragma once

// Functional mixture prediction of the unobserved remainder of a curve.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "fmpred/classify.hpp"
#include "fmpred/clustering.hpp"
#include "fmpred/errors.hpp"
#include "fmpred/fpca.hpp"
#include "fmpred/logit.hpp"
#include "fmpred/mixture.hpp"
#include "fmpred/numerics.hpp"
#include "fmpred/parallel.hpp"
#include "fmpred/random.hpp"

namespace fmpred {

enum class MixtureMode { Soft, Hard };

struct Prediction {
  double tau = 0.0;
  TimeGrid future_grid;
  Eigen::VectorXd mixture;
  std::vector<Eigen::VectorXd> per_cluster;
  Eigen::VectorXd posterior;
  std::optional<Eigen::VectorXd> lower;
  std::optional<Eigen::VectorXd> upper;
  double band_level = 0.0;
  bool ridge_applied = false;  // FPCP system needed a ridge bump
};

/// One cluster restricted at one prediction time: observed window [first, tau]
/// and future [tau, end], plus training scores on both blocks.
struct TauSlice {
  std::size_t tau_index = 0;
  WindowSpan window;
  ClusterModel observed;
  ClusterModel future;
  Eigen::MatrixXd observed_scores;  // training curves x min(M_c, available pairs)
  Eigen::MatrixXd future_scores;
};

namespace detail {

inline Eigen::MatrixXd block_scores(const Eigen::MatrixXd& values, const ClusterModel& block, int count) {
  const Eigen::VectorXd w = trapezoid_weights(block.grid);
  return ((values.rowwise() - block.mean.transpose()) * w.asDiagonal()) * block.eigenfunctions.leftCols(count);
}

inline std::size_t tau_to_index(const TimeGrid& grid, double tau) {
  const auto i = grid.index_of(tau);
  if (!i) throw DomainError("tau=" + std::to_string(tau) + " is not a grid point");
  if (*i < 1 || *i + 2 > grid.size()) throw DomainError("tau=" + std::to_string(tau) + " must lie strictly inside the grid");
  return *i;
}

inline double overlap_inner(const ClusterModel& a, int ja, const ClusterModel& b, int jb) {
  // Inner product of two eigenfunctions over the times both grids share.
  const double lo = std::max(a.grid.front(), b.grid.front());
  const double hi = std::min(a.grid.back(), b.grid.back());
  const auto a0 = a.grid.index_of(lo), a1 = a.grid.index_of(hi);
  const auto b0 = b.grid.index_of(lo), b1 = b.grid.index_of(hi);
  if (!a0 || !a1 || !b0 || !b1 || *a1 <= *a0) return 1.0;
  const Eigen::VectorXd w = trapezoid_weights(a.grid.slice(*a0, *a1));
  const auto len = static_cast<Eigen::Index>(*a1 - *a0 + 1);
  return w.dot(a.eigenfunctions.col(ja).segment(static_cast<Eigen::Index>(*a0), len)
                   .cwiseProduct(b.eigenfunctions.col(jb).segment(static_cast<Eigen::Index>(*b0), len)));
}

}  // namespace detail

inline std::vector<TauSlice> build_slices(const ClusterModel& model, const Eigen::MatrixXd& training_values,
                                          const TimeGrid& tau_grid, std::optional<double> omega,
                                          double fve = kDefaultFve) {
  std::vector<TauSlice> out(tau_grid.size());
  const std::size_t last = model.grid.size() - 1;
  for (std::size_t q = 0; q < tau_grid.size(); ++q) {
    TauSlice& s = out[q];
    s.tau_index = detail::tau_to_index(model.grid, tau_grid[q]);
    s.window = observed_window(model.grid, s.tau_index, omega);
    s.observed = restrict_window(model, s.window.first, s.window.last, fve);
    s.future = restrict_window(model, s.tau_index, last, fve);
    const int ns = std::min<int>(model.num_components, static_cast<int>(s.observed.eigenvalues.size()));
    const int nt = std::min<int>(model.num_components, static_cast<int>(s.future.eigenvalues.size()));
    const auto len_s = static_cast<Eigen::Index>(s.window.last - s.window.first + 1);
    const auto len_t = static_cast<Eigen::Index>(last - s.tau_index + 1);
    if (training_values.rows() > 0) {
      s.observed_scores =
          detail::block_scores(training_values.middleCols(static_cast<Eigen::Index>(s.window.first), len_s), s.observed, ns);
      s.future_scores =
          detail::block_scores(training_values.middleCols(static_cast<Eigen::Index>(s.tau_index), len_t), s.future, nt);
    }
  }
  return out;
}

/// Raw coefficient matrix from centered score cross-moments divided by
/// (n-1) times the observed-block eigenvalue. Entries without a usable
/// eigenpair are 0 and reported through `near_singular`.
inline Eigen::MatrixXd beta_from_scores(const Eigen::MatrixXd& observed_scores, const Eigen::MatrixXd& future_scores,
                                        const Eigen::VectorXd& observed_eigenvalues, int m, bool* near_singular = nullptr) {
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(m, m);
  const Eigen::Index n = observed_scores.rows();
  if (n < 2) {
    if (near_singular) *near_singular = true;
    return beta;
  }
  const Eigen::MatrixXd xs = observed_scores.rowwise() - observed_scores.colwise().mean();
  const Eigen::MatrixXd xt = future_scores.rowwise() - future_scores.colwise().mean();
  const Eigen::MatrixXd cross = xt.transpose() * xs;  // k x j
  for (int k = 0; k < m; ++k)
    for (int j = 0; j < m; ++j) {
      if (k >= xt.cols() || j >= xs.cols() || !(observed_eigenvalues[j] >= 1e-12)) {
        if (near_singular) *near_singular = true;
        continue;
      }
      beta(k, j) = cross(k, j) / (static_cast<double>(n - 1) * observed_eigenvalues[j]);
    }
  return beta;
}

/// Raw coefficients for every cluster and tau. `slices[c]` comes from
/// build_slices on cluster c's training curves.
inline RegressionCoefficients fit_beta(const std::vector<ClusterModel>& models,
                                       const std::vector<std::vector<TauSlice>>& slices, const TimeGrid& tau_grid,
                                       std::optional<double> omega) {
  RegressionCoefficients rc;
  rc.tau_grid = tau_grid;
  rc.omega = omega;
  const std::size_t q_count = tau_grid.size();
  for (std::size_t c = 0; c < models.size(); ++c) {
    const int m = models[c].num_components;
    BetaPath path;
    path.observed_orientation = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(q_count), m);
    path.future_orientation = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(q_count), m);
    path.bandwidth = Eigen::MatrixXd::Zero(m, m);
    for (std::size_t q = 0; q < q_count; ++q) {
      const TauSlice& s = slices[c][q];
      bool flag = false;
      path.raw.push_back(beta_from_scores(s.observed_scores, s.future_scores, s.observed.eigenvalues, m, &flag));
      path.near_singular = path.near_singular || flag;
      path.observed_components.push_back(s.observed.num_components);
      path.future_components.push_back(s.future.num_components);
      if (q == 0) continue;
      const TauSlice& p = slices[c][q - 1];
      const auto qi = static_cast<Eigen::Index>(q);
      for (int j = 0; j < m; ++j) {
        double so = path.observed_orientation(qi - 1, j), sf = path.future_orientation(qi - 1, j);
        if (j < s.observed.eigenfunctions.cols() && j < p.observed.eigenfunctions.cols() &&
            detail::overlap_inner(s.observed, j, p.observed, j) < 0.0)
          so = -so;
        if (j < s.future.eigenfunctions.cols() && j < p.future.eigenfunctions.cols() &&
            detail::overlap_inner(s.future, j, p.future, j) < 0.0)
          sf = -sf;
        path.observed_orientation(qi, j) = so;
        path.future_orientation(qi, j) = sf;
      }
    }
    path.smoothed = path.raw;
    rc.clusters.push_back(std::move(path));
  }
  return rc;
}

namespace detail {

inline std::vector<double> aligned_sequence(const BetaPath& path, const std::vector<Eigen::MatrixXd>& values, int k,
                                            int j) {
  std::vector<double> a(values.size());
  for (std::size_t q = 0; q < values.size(); ++q) {
    const auto qi = static_cast<Eigen::Index>(q);
    a[q] = path.future_orientation(qi, k) * path.observed_orientation(qi, j) * values[q](k, j);
  }
  return a;
}

// Local-linear value of an aligned sequence at one tau with a fixed bandwidth.
inline double smooth_at(const TimeGrid& tau_grid, const std::vector<double>& aligned, double h, std::size_t q) {
  if (!(h > 0.0)) return aligned[q];
  const std::vector<double>& xs = tau_grid.points();
  const Bins b = make_bins(xs, aligned, {}, iota_rows(xs.size()));
  try {
    return local_linear_with_fallback(b, h, xs[q]);
  } catch (const SmoothingError&) {
    return aligned[q];
  }
}

}  // namespace detail

/// Local-linear smoothing of each coefficient sequence over tau, bandwidth by
/// cross-validation. Sequences are sign-aligned first so eigenfunction flips do
/// not read as jumps. A sequence that cannot be smoothed is kept raw.
inline RegressionCoefficients smooth_beta(RegressionCoefficients rc, int folds = kDefaultCvFolds,
                                          std::uint64_t seed = 0) {
  const TimeGrid& tg = rc.tau_grid;
  if (tg.size() < 4) throw ConfigError("smoothing over tau needs at least 4 prediction times");
  const auto cands = default_bandwidth_candidates(tg);
  const int f = std::min<int>(folds, static_cast<int>(tg.size()));
  for (std::size_t c = 0; c < rc.clusters.size(); ++c) {
    BetaPath& path = rc.clusters[c];
    const auto m = static_cast<int>(path.bandwidth.rows());
    path.smoothed = path.raw;
    for (int k = 0; k < m; ++k)
      for (int j = 0; j < m; ++j) {
        const std::vector<double> a = detail::aligned_sequence(path, path.raw, k, j);
        // Only taus where the entry enters the prediction; elsewhere the raw
        // value comes from a negligible eigenpair and can be huge.
        std::vector<double> xs, ys;
        for (std::size_t q = 0; q < tg.size(); ++q)
          if (j < path.observed_components[q] && k < path.future_components[q]) {
            xs.push_back(tg[q]);
            ys.push_back(a[q]);
          }
        try {
          if (xs.size() < 4) throw SmoothingError("too few active taus");
          const Bandwidth h = select_bandwidth_cv(xs, ys, cands, std::min<int>(f, static_cast<int>(xs.size())),
                                                  derive_seed(seed, streams::kFolds, 1000 + c * 10000 + k * 100 + j));
          const SampledCurve sm = local_linear_smooth_1d(xs, ys, {}, h, tg);
          for (std::size_t q = 0; q < tg.size(); ++q) {
            const auto qi = static_cast<Eigen::Index>(q);
            path.smoothed[q](k, j) =
                path.future_orientation(qi, k) * path.observed_orientation(qi, j) * sm.values[qi];
          }
          path.bandwidth(k, j) = h.value();
        } catch (const Error&) {
          path.bandwidth(k, j) = 0.0;
        }
      }
  }
  return rc;
}

/// mu_T + sum_{k < M_T} sum_{j < M_S} beta(k, j) xi_S,j phi_T,k on the future
/// grid, given observed values on the slice's window.
inline Eigen::VectorXd conditional_curve(const Eigen::VectorXd& observed_values, const TauSlice& slice,
                                         const Eigen::MatrixXd& beta) {
  const ClusterModel& o = slice.observed;
  const ClusterModel& f = slice.future;
  if (static_cast<std::size_t>(observed_values.size()) != o.grid.size())
    throw GridMismatchError("observed segment does not match the prediction window");
  const int ms = std::min<int>(o.num_components, static_cast<int>(beta.cols()));
  const int mt = std::min<int>(f.num_components, static_cast<int>(beta.rows()));
  Eigen::VectorXd out = f.mean;
  if (ms == 0 || mt == 0) return out;
  const Eigen::VectorXd w = trapezoid_weights(o.grid);
  const Eigen::VectorXd xi = o.eigenfunctions.leftCols(ms).transpose() * (w.asDiagonal() * (observed_values - o.mean));
  const Eigen::VectorXd coef = beta.topLeftCorner(mt, ms) * xi;
  out += f.eigenfunctions.leftCols(mt) * coef;
  return out;
}

/// Gaussian conditional expectation of the full-domain scores from the
/// observed window, xi = Lambda Phi_S' (G_S + sigma^2 I)^-1 (Y_S - mu_S),
/// reconstructed on the future grid.
inline Eigen::VectorXd fpcp_curve(const Eigen::VectorXd& observed_values, const ClusterModel& model,
                                  const WindowSpan& window, std::size_t tau_index, bool* ridge_applied = nullptr) {
  const auto a = static_cast<Eigen::Index>(window.first);
  const auto len = static_cast<Eigen::Index>(window.last - window.first + 1);
  if (observed_values.size() != len) throw GridMismatchError("observed segment does not match the prediction window");
  const auto t0 = static_cast<Eigen::Index>(tau_index);
  const auto lt = static_cast<Eigen::Index>(model.grid.size()) - t0;
  Eigen::VectorXd out = model.mean.segment(t0, lt);
  const int m = model.num_components;
  if (m == 0) return out;
  // Fitted covariance from the retained components, as in PACE; the raw
  // smoothed block can be indefinite and blow up the solve.
  const auto phi = model.eigenfunctions.block(a, 0, len, m);
  Eigen::MatrixXd sys = phi * model.eigenvalues.head(m).asDiagonal() * phi.transpose();
  sys.diagonal().array() += model.noise_variance;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(sys);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() >= 1e-12)) {
    sys.diagonal().array() += 1e-8 * std::max(sys.trace(), 1e-300);
    ldlt.compute(sys);
    if (ridge_applied) *ridge_applied = true;
  }
  const Eigen::VectorXd rhs = ldlt.solve(observed_values - model.mean.segment(a, len));
  const Eigen::VectorXd xi =
      model.eigenvalues.head(m).asDiagonal() * (model.eigenfunctions.block(a, 0, len, m).transpose() * rhs);
  out += model.eigenfunctions.block(t0, 0, lt, m) * xi;
  return out;
}

inline Eigen::VectorXd combine(const std::vector<Eigen::VectorXd>& curves, const Eigen::VectorXd& weights) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(curves.front().size());
  for (std::size_t c = 0; c < curves.size(); ++c) out += weights[static_cast<Eigen::Index>(c)] * curves[c];
  return out;
}

inline Eigen::VectorXd hard_weights(const Eigen::VectorXd& posterior) {
  Eigen::Index best = 0;
  posterior.maxCoeff(&best);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(posterior.size());
  w[best] = 1.0;
  return w;
}

/// Empirical quantile, linear interpolation between order statistics.
inline double quantile_type7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct BootstrapOptions {
  int samples = 200;
  double level = 0.95;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  MixtureMode mode = MixtureMode::Soft;
};

/// Cached restrictions, training scores and coefficients of one mixture for
/// one observed-window length.
class MixturePredictor {
 public:
  explicit MixturePredictor(std::shared_ptr<const MixtureModel> model, std::optional<double> omega = std::nullopt,
                            std::size_t jobs = 1)
      : model_(std::move(model)), omega_(omega) {
    const MixtureModel& m = *model_;
    const auto k = static_cast<std::size_t>(m.num_clusters());
    members_.resize(k);
    for (std::size_t i = 0; i < m.labels.size(); ++i) members_[static_cast<std::size_t>(m.labels[i])].push_back(i);
    slices_.resize(k);
    parallel_for(k, jobs, [&](std::size_t c) {
      const Eigen::MatrixXd vals = members_[c].empty() ? Eigen::MatrixXd(0, static_cast<Eigen::Index>(m.grid().size()))
                                                       : m.training.subset(members_[c]).values;
      slices_[c] = build_slices(m.clusters[c], vals, m.tau_grid, omega_, m.options.fve);
    });
    const bool reuse = !m.betas.clusters.empty() && m.betas.omega == omega_ && m.betas.tau_grid == m.tau_grid;
    betas_ = reuse ? m.betas
                   : smooth_beta(fit_beta(m.clusters, slices_, m.tau_grid, omega_), m.options.beta_cv_folds,
                                 m.options.seed);
    if (m.options.refit_gamma_per_tau && k > 1) {
      gammas_.resize(m.tau_grid.size());
      for (std::size_t q = 0; q < m.tau_grid.size(); ++q) {
        Eigen::MatrixXd d(static_cast<Eigen::Index>(m.labels.size()), static_cast<Eigen::Index>(k));
        for (std::size_t i = 0; i < m.labels.size(); ++i)
          d.row(static_cast<Eigen::Index>(i)) = observed_distances(segment(m.training.values.row(static_cast<Eigen::Index>(i)).transpose(), q), q).transpose();
        gammas_[q] = fit_logit(make_covariates(d), m.labels, static_cast<int>(k), m.options.ridge);
      }
    }
  }

  const MixtureModel& model() const { return *model_; }
  std::optional<double> omega() const { return omega_; }
  const RegressionCoefficients& betas() const { return betas_; }
  const TauSlice& slice(std::size_t c, std::size_t q) const { return slices_[c][q]; }
  std::size_t tau_count() const { return model_->tau_grid.size(); }

  std::size_t tau_position(double tau) const {
    const auto q = model_->tau_grid.index_of(tau);
    if (!q) throw DomainError("tau=" + std::to_string(tau) + " is not on the prediction-time grid");
    return *q;
  }

  WindowSpan window(std::size_t q) const { return slices_.front()[q].window; }
  std::size_t tau_index(std::size_t q) const { return slices_.front()[q].tau_index; }

  TimeGrid future_grid(std::size_t q) const {
    return model_->grid().slice(tau_index(q), model_->grid().size() - 1);
  }

  /// Observed window of a full-grid curve.
  Eigen::VectorXd segment(const Eigen::VectorXd& full, std::size_t q) const {
    const WindowSpan w = window(q);
    return full.segment(static_cast<Eigen::Index>(w.first), static_cast<Eigen::Index>(w.last - w.first + 1));
  }

  Eigen::VectorXd observed_distances(const Eigen::VectorXd& observed, std::size_t q) const {
    std::vector<ClusterModel> obs;
    for (const auto& s : slices_) obs.push_back(s[q].observed);
    return relative_distances(observed, obs).d;
  }

  Eigen::VectorXd posterior(const Eigen::VectorXd& observed, std::size_t q) const {
    if (model_->num_clusters() == 1) return Eigen::VectorXd::Ones(1);
    const LogitCoefficients& g = gammas_.empty() ? model_->gamma : gammas_[q];
    return fmpred::posterior(make_covariate(observed_distances(observed, q)), g);
  }

  Eigen::VectorXd conditional(const Eigen::VectorXd& observed, std::size_t c, std::size_t q) const {
    return conditional_curve(observed, slices_[c][q], betas_.clusters[c].smoothed[q]);
  }

  Prediction predict(const Eigen::VectorXd& observed, std::size_t q, MixtureMode mode = MixtureMode::Soft) const {
    Prediction p = shell(q);
    p.posterior = posterior(observed, q);
    for (std::size_t c = 0; c < slices_.size(); ++c) p.per_cluster.push_back(conditional(observed, c, q));
    p.mixture = assemble(p.per_cluster, p.posterior, mode);
    return p;
  }

  /// FPCP baseline with the same posterior weighting as predict().
  Prediction predict_fpcp(const Eigen::VectorXd& observed, std::size_t q, MixtureMode mode = MixtureMode::Soft) const {
    Prediction p = shell(q);
    p.posterior = posterior(observed, q);
    for (std::size_t c = 0; c < slices_.size(); ++c) {
      bool ridge = false;
      p.per_cluster.push_back(fpcp_curve(observed, model_->clusters[c], window(q), tau_index(q), &ridge));
      p.ridge_applied = p.ridge_applied || ridge;
    }
    p.mixture = assemble(p.per_cluster, p.posterior, mode);
    return p;
  }

  /// Pointwise bootstrap band: training curves are resampled within clusters
  /// and the coefficients refitted with the eigenbases and smoothing
  /// bandwidths held fixed. Each replicate samples a cluster from the
  /// posterior and adds one of that cluster's training residual curves to its
  /// refitted conditional prediction.
  Prediction bootstrap_interval(const Eigen::VectorXd& observed, std::size_t q, const BootstrapOptions& opts) const {
    if (opts.samples < 1) throw ConfigError("bootstrap needs at least one sample");
    if (!(opts.level > 0.0 && opts.level < 1.0)) throw ConfigError("band level must lie in (0, 1)");
    Prediction point = predict(observed, q, opts.mode);
    const MixtureModel& m = *model_;
    const std::size_t k = slices_.size();

    // Training residual curves per cluster at this tau.
    std::vector<Eigen::MatrixXd> residuals(k);
    for (std::size_t c = 0; c < k; ++c) {
      const auto& rows = members_[c];
      const std::size_t t0 = tau_index(q);
      const auto lt = static_cast<Eigen::Index>(m.grid().size() - t0);
      residuals[c].resize(static_cast<Eigen::Index>(rows.size()), lt);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const Eigen::VectorXd full = m.training.values.row(static_cast<Eigen::Index>(rows[r])).transpose();
        residuals[c].row(static_cast<Eigen::Index>(r)) =
            (full.segment(static_cast<Eigen::Index>(t0), lt) - conditional(segment(full, q), c, q)).transpose();
      }
    }

    const auto b = static_cast<std::size_t>(opts.samples);
    std::vector<std::optional<Eigen::VectorXd>> draws(b);
    parallel_for(b, opts.jobs, [&](std::size_t r) {
      Rng rng(derive_seed(opts.seed, streams::kBootstrap, r));
      try {
        std::vector<std::vector<std::size_t>> picks(k);
        for (std::size_t c = 0; c < k; ++c) {
          const std::size_t nc = members_[c].size();
          if (nc == 0) throw IntervalError("empty cluster");
          std::uniform_int_distribution<std::size_t> u(0, nc - 1);
          picks[c].resize(nc);
          for (auto& p : picks[c]) p = u(rng);
        }
        Eigen::VectorXd post = point.posterior;
        if (m.options.resample_gamma && k > 1) post = resampled_posterior(observed, q, picks);
        // Draw from the mixture's predictive distribution: a cluster from the
        // posterior, then that cluster's refitted prediction plus one of its residuals.
        const Eigen::VectorXd wts = opts.mode == MixtureMode::Hard ? hard_weights(post) : post;
        std::discrete_distribution<std::size_t> pick_c(wts.data(), wts.data() + wts.size());
        const std::size_t cs = pick_c(rng);
        Eigen::VectorXd y = conditional_curve(observed, slices_[cs][q], refit_beta(cs, q, picks[cs]));
        if (residuals[cs].rows() > 0) {
          std::uniform_int_distribution<Eigen::Index> u(0, residuals[cs].rows() - 1);
          y += residuals[cs].row(u(rng)).transpose();
        }
        if (!y.allFinite()) throw IntervalError("non-finite replicate");
        draws[r] = std::move(y);
      } catch (const Error&) {
        draws[r].reset();
      }
    });
    std::vector<Eigen::VectorXd> ok;
    for (auto& d : draws)
      if (d) ok.push_back(std::move(*d));
    if (static_cast<double>(ok.size()) < 0.8 * static_cast<double>(b))
      throw IntervalError("only " + std::to_string(ok.size()) + " of " + std::to_string(b) +
                          " bootstrap replicates succeeded");
    const Eigen::Index len = point.mixture.size();
    Eigen::VectorXd lower(len), upper(len);
    const double alpha = 1.0 - opts.level;
    std::vector<double> col(ok.size());
    for (Eigen::Index t = 0; t < len; ++t) {
      for (std::size_t r = 0; r < ok.size(); ++r) col[r] = ok[r][t];
      lower[t] = std::min(quantile_type7(col, alpha / 2.0), point.mixture[t]);
      upper[t] = std::max(quantile_type7(col, 1.0 - alpha / 2.0), point.mixture[t]);
    }
    point.lower = std::move(lower);
    point.upper = std::move(upper);
    point.band_level = opts.level;
    return point;
  }

 private:
  Prediction shell(std::size_t q) const {
    Prediction p;
    p.tau = model_->tau_grid[q];
    p.future_grid = future_grid(q);
    return p;
  }

  static Eigen::VectorXd assemble(const std::vector<Eigen::VectorXd>& per, const Eigen::VectorXd& post, MixtureMode mode) {
    if (per.size() == 1) return per.front();
    const Eigen::VectorXd w = mode == MixtureMode::Hard ? hard_weights(post) : post;
    return combine(per, w);
  }

  // Coefficients at tau index q from the resampled rows of cluster c, smoothed
  // with the bandwidths chosen on the original sample.
  Eigen::MatrixXd refit_beta(std::size_t c, std::size_t q, const std::vector<std::size_t>& rows) const {
    const BetaPath& path = betas_.clusters[c];
    const TimeGrid& tg = model_->tau_grid;
    const auto m = static_cast<int>(path.bandwidth.rows());
    const double hmax = path.bandwidth.size() > 0 ? path.bandwidth.maxCoeff() : 0.0;
    std::vector<Eigen::MatrixXd> raw(tg.size(), Eigen::MatrixXd::Zero(m, m));
    for (std::size_t p = 0; p < tg.size(); ++p) {
      if (p != q && std::abs(tg[p] - tg[q]) > kKernelSupport * hmax * 8.0) continue;
      const TauSlice& s = slices_[c][p];
      Eigen::MatrixXd xs(static_cast<Eigen::Index>(rows.size()), s.observed_scores.cols());
      Eigen::MatrixXd xt(static_cast<Eigen::Index>(rows.size()), s.future_scores.cols());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        xs.row(static_cast<Eigen::Index>(r)) = s.observed_scores.row(static_cast<Eigen::Index>(rows[r]));
        xt.row(static_cast<Eigen::Index>(r)) = s.future_scores.row(static_cast<Eigen::Index>(rows[r]));
      }
      raw[p] = beta_from_scores(xs, xt, s.observed.eigenvalues, m);
    }
    Eigen::MatrixXd out(m, m);
    const auto qi = static_cast<Eigen::Index>(q);
    for (int k = 0; k < m; ++k)
      for (int j = 0; j < m; ++j) {
        const std::vector<double> a = detail::aligned_sequence(path, raw, k, j);
        out(k, j) = path.future_orientation(qi, k) * path.observed_orientation(qi, j) *
                    detail::smooth_at(tg, a, path.bandwidth(k, j), q);
      }
    return out;
  }

  Eigen::VectorXd resampled_posterior(const Eigen::VectorXd& observed, std::size_t q,
                                      const std::vector<std::vector<std::size_t>>& picks) const {
    const MixtureModel& m = *model_;
    const auto k = static_cast<Eigen::Index>(slices_.size());
    std::vector<int> labels;
    std::vector<Eigen::VectorXd> rows;
    for (std::size_t c = 0; c < picks.size(); ++c)
      for (std::size_t r : picks[c]) {
        labels.push_back(static_cast<int>(c));
        rows.push_back(relative_distances(
            m.training.values.row(static_cast<Eigen::Index>(members_[c][r])).transpose(), m.clusters).d);
      }
    Eigen::MatrixXd d(static_cast<Eigen::Index>(rows.size()), k);
    for (std::size_t i = 0; i < rows.size(); ++i) d.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    const LogitCoefficients g = fit_logit(make_covariates(d), labels, static_cast<int>(k), m.options.ridge);
    return fmpred::posterior(make_covariate(observed_distances(observed, q)), g);
  }

  std::shared_ptr<const MixtureModel> model_;
  std::optional<double> omega_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::vector<TauSlice>> slices_;
  RegressionCoefficients betas_;
  std::vector<LogitCoefficients> gammas_;
};

/// Clusters the training curves (or uses the given labels), fits the logit
/// and the full-past regression paths.
inline MixtureModel assemble_mixture(const CurveSet& training, ClusteringResult clusters, const MixtureOptions& opts,
                                     const TimeGrid& tau_grid = default_tau_grid()) {
  MixtureModel m;
  m.clusters = std::move(clusters.models);
  m.gamma = std::move(clusters.gamma);
  if (m.clusters.size() == 1) m.gamma.gamma = Eigen::MatrixXd::Zero(0, 1);
  m.tau_grid = tau_grid;
  m.training = training;
  m.labels = std::move(clusters.labels);
  m.options = opts;
  std::vector<std::vector<std::size_t>> members(m.clusters.size());
  for (std::size_t i = 0; i < m.labels.size(); ++i) members[static_cast<std::size_t>(m.labels[i])].push_back(i);
  std::vector<std::vector<TauSlice>> slices(m.clusters.size());
  for (std::size_t c = 0; c < m.clusters.size(); ++c)
    slices[c] = build_slices(m.clusters[c], training.subset(members[c]).values, tau_grid, std::nullopt, opts.fve);
  m.betas = smooth_beta(fit_beta(m.clusters, slices, tau_grid, std::nullopt), opts.beta_cv_folds, opts.seed);
  return m;
}

inline MixtureModel fit_mixture(const CurveSet& training, int k, const ClusteringOptions& copts,
                                const MixtureOptions& opts, const TimeGrid& tau_grid = default_tau_grid()) {
  return assemble_mixture(training, fit_clusters(training, k, copts), opts, tau_grid);
}

inline MixtureModel fit_mixture_from_labels(const CurveSet& training, const std::vector<int>& labels, int k,
                                            const ClusteringOptions& copts, const MixtureOptions& opts,
                                            const TimeGrid& tau_grid = default_tau_grid()) {
  return assemble_mixture(training, fit_clusters_from_labels(training, labels, k, copts), opts, tau_grid);
}

/// Conditional prediction for cluster c from a partial curve ending at tau.
inline SampledCurve predict_conditional(const SampledCurve& partial, const MixturePredictor& pred, std::size_t c,
                                        double tau) {
  const std::size_t q = pred.tau_position(tau);
  return SampledCurve(pred.future_grid(q), pred.conditional(partial.values, c, q));
}

inline Prediction predict_mixture(const SampledCurve& partial, const MixturePredictor& pred, double tau,
                                  MixtureMode mode = MixtureMode::Soft) {
  return pred.predict(partial.values, pred.tau_position(tau), mode);
}

inline Prediction predict_fpcp(const SampledCurve& partial, const MixturePredictor& pred, double tau,
                               MixtureMode mode = MixtureMode::Soft) {
  return pred.predict_fpcp(partial.values, pred.tau_position(tau), mode);
}

}  // namespace fmpred
