#pragma once

// Subspace-projected functional clustering and forward selection of K.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmpred/errors.hpp"
#include "fmpred/fpca.hpp"
#include "fmpred/grid.hpp"
#include "fmpred/logit.hpp"
#include "fmpred/parallel.hpp"
#include "fmpred/random.hpp"

namespace fmpred {

struct RelativeDistances {
  Eigen::VectorXd d;
  bool degenerate = false;  // every residual was zero; d is uniform
};

/// d_c = ||Y - Z_c||^2 / sum_k ||Y - Z_k||^2, Z_c the M_c-truncated
/// projection of Y on cluster c.
inline RelativeDistances relative_distances(const Eigen::VectorXd& values, const std::vector<ClusterModel>& models) {
  if (models.empty()) throw ConfigError("relative distances need at least one model");
  const auto k = static_cast<Eigen::Index>(models.size());
  Eigen::VectorXd r(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    if (static_cast<std::size_t>(values.size()) != models[static_cast<std::size_t>(c)].grid.size())
      throw GridMismatchError("curve length does not match the cluster grid");
    r[c] = projection_residual(values, models[static_cast<std::size_t>(c)]);
  }
  const double total = r.sum();
  if (!(total > 0.0)) return {Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k)), true};
  return {r / total, false};
}

inline RelativeDistances relative_distances(const SampledCurve& curve, const std::vector<ClusterModel>& models) {
  for (const auto& m : models) require_same_grid(curve.grid, m.grid, "curve vs cluster model");
  return relative_distances(curve.values, models);
}

inline Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& values, const std::vector<ClusterModel>& models) {
  Eigen::MatrixXd d(values.rows(), static_cast<Eigen::Index>(models.size()));
  for (Eigen::Index i = 0; i < values.rows(); ++i) d.row(i) = relative_distances(values.row(i).transpose(), models).d.transpose();
  return d;
}

struct ClusteringOptions {
  FpcaOptions fpca;
  int max_iterations = 50;
  int min_cluster_size = 4;
  double ridge = kDefaultRidge;
  int kmeans_restarts = 10;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct ClusteringResult {
  std::vector<ClusterModel> models;
  std::vector<int> labels;      // 0-based
  Eigen::MatrixXd posterior;    // curves x K
  Eigen::MatrixXd distances;    // curves x K, rows sum to 1
  LogitCoefficients gamma;
  int iterations = 0;
  bool converged = false;

  int num_clusters() const { return static_cast<int>(models.size()); }
};

inline std::vector<int> cluster_sizes(const std::vector<int>& labels, int k) {
  std::vector<int> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  return sizes;
}

namespace detail {

struct KMeansFit {
  std::vector<int> labels;
  double inertia = std::numeric_limits<double>::infinity();
  bool valid = false;
};

inline KMeansFit kmeans_once(const Eigen::MatrixXd& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd centers(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.row(0) = x.row(first(rng));
  Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    Eigen::Index pick = 0;
    const double total = d2.sum();
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    centers.row(c) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }
  KMeansFit fit;
  fit.labels.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dist = (x.row(i) - centers.row(c)).squaredNorm();
        if (dist < bd) {
          bd = dist;
          best = c;
        }
      }
      if (fit.labels[static_cast<std::size_t>(i)] != best) {
        fit.labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    const auto sizes = cluster_sizes(fit.labels, k);
    if (std::find(sizes.begin(), sizes.end(), 0) != sizes.end()) return fit;
    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) centers.row(fit.labels[static_cast<std::size_t>(i)]) += x.row(i);
    for (int c = 0; c < k; ++c) centers.row(c) /= sizes[static_cast<std::size_t>(c)];
    if (!changed) break;
  }
  fit.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) fit.inertia += (x.row(i) - centers.row(fit.labels[static_cast<std::size_t>(i)])).squaredNorm();
  fit.valid = true;
  return fit;
}

}  // namespace detail

/// k-means (k-means++ seeding, best of several restarts) on the leading
/// scores of one pooled FPCA.
inline std::vector<int> initial_clusters(const CurveSet& curves, int k, const ClusteringOptions& opts = {}) {
  if (k < 1) throw ConfigError("K must be at least 1");
  const auto n = curves.size();
  if (k == 1) return std::vector<int>(n, 0);
  if (n < static_cast<std::size_t>(3 * k)) throw ConfigError("need at least 3*K curves to cluster");
  Eigen::MatrixXd scores(static_cast<Eigen::Index>(n), 0);
  try {
    const ClusterModel pooled = fit_cluster_model(curves, 0, opts.fpca);
    scores = score_matrix(curves.values, pooled);
  } catch (const NoVarianceError&) {
  }
  detail::KMeansFit best;
  int valid = 0;
  const int max_attempts = opts.kmeans_restarts + 10;
  for (int attempt = 0; attempt < max_attempts && valid < opts.kmeans_restarts; ++attempt) {
    Rng rng(derive_seed(opts.seed, streams::kKMeans, static_cast<std::uint64_t>(attempt)));
    detail::KMeansFit fit = scores.cols() > 0 ? detail::kmeans_once(scores, k, rng)
                                               : detail::kmeans_once(Eigen::MatrixXd::Zero(scores.rows(), 1), k, rng);
    if (!fit.valid) continue;
    ++valid;
    if (fit.inertia < best.inertia) best = std::move(fit);
  }
  if (!best.valid) throw EmptyClusterError("k-means left a cluster empty after 10 re-seeds");
  return best.labels;
}

namespace detail {

inline std::vector<ClusterModel> fit_models(const CurveSet& curves, const std::vector<int>& labels, int k,
                                            const ClusteringOptions& opts) {
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) members[static_cast<std::size_t>(labels[i])].push_back(i);
  std::vector<ClusterModel> models(static_cast<std::size_t>(k));
  parallel_for(static_cast<std::size_t>(k), opts.jobs, [&](std::size_t c) {
    models[c] = fit_cluster_model(curves.subset(members[c]), static_cast<int>(c), opts.fpca);
  });
  return models;
}

inline std::vector<int> argmax_rows(const Eigen::MatrixXd& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index j = 0;
    m.row(i).maxCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

inline std::vector<int> argmin_rows(const Eigen::MatrixXd& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index j = 0;
    m.row(i).minCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

inline void check_sizes(const std::vector<int>& labels, int k, int min_size, int iteration) {
  const auto sizes = cluster_sizes(labels, k);
  for (int c = 0; c < k; ++c)
    if (sizes[static_cast<std::size_t>(c)] < min_size)
      throw ClusterCollapseError("cluster " + std::to_string(c + 1) + " shrank to " +
                                 std::to_string(sizes[static_cast<std::size_t>(c)]) + " curves at iteration " +
                                 std::to_string(iteration) + " (minimum " + std::to_string(min_size) + ")");
}

}  // namespace detail

/// Alternates per-cluster FPCA fits with membership updates: minimal relative
/// distance on the first pass, argmax logit posterior afterwards. Stops when
/// no label changes; otherwise returns the iterate whose labels agreed best
/// with their own update.
inline ClusteringResult fit_clusters(const CurveSet& curves, int k, const ClusteringOptions& opts = {},
                                     std::optional<std::vector<int>> initial = std::nullopt) {
  if (k < 1) throw ConfigError("K must be at least 1");
  std::vector<int> labels = initial ? *initial : initial_clusters(curves, k, opts);
  if (labels.size() != curves.size()) throw ConfigError("initial label count does not match curves");
  for (int l : labels)
    if (l < 0 || l >= k) throw ConfigError("initial label out of range");

  ClusteringResult res;
  if (k == 1) {
    res.models = detail::fit_models(curves, labels, 1, opts);
    res.labels = labels;
    res.distances = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(curves.size()), 1);
    res.posterior = res.distances;
    res.gamma.gamma = Eigen::MatrixXd::Zero(0, 1);
    res.iterations = 0;
    res.converged = true;
    return res;
  }

  struct Iterate {
    std::vector<ClusterModel> models;
    std::vector<int> labels;
    Eigen::MatrixXd distances;
    int agreement = -1;
  } best;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    detail::check_sizes(labels, k, opts.min_cluster_size, it);
    std::vector<ClusterModel> models = detail::fit_models(curves, labels, k, opts);
    Eigen::MatrixXd dist = distance_matrix(curves.values, models);
    std::vector<int> next;
    if (it == 1) {
      next = detail::argmin_rows(dist);
    } else {
      const LogitCoefficients g = fit_logit(make_covariates(dist), labels, k, opts.ridge);
      next = detail::argmax_rows(posterior_matrix(make_covariates(dist), g));
    }
    int agreement = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) agreement += labels[i] == next[i];
    res.iterations = it;
    if (agreement > best.agreement) best = {models, labels, dist, agreement};
    if (next == labels) {
      res.converged = true;
      best = {std::move(models), labels, std::move(dist), agreement};
      break;
    }
    labels = std::move(next);
  }
  res.models = std::move(best.models);
  res.labels = std::move(best.labels);
  res.distances = std::move(best.distances);
  res.gamma = fit_logit(make_covariates(res.distances), res.labels, k, opts.ridge);
  res.posterior = posterior_matrix(make_covariates(res.distances), res.gamma);
  return res;
}

/// Fit per-cluster models and the logit for known labels.
inline ClusteringResult fit_clusters_from_labels(const CurveSet& curves, const std::vector<int>& labels, int k,
                                                 const ClusteringOptions& opts = {}) {
  ClusteringResult res;
  detail::check_sizes(labels, k, opts.min_cluster_size, 0);
  res.models = detail::fit_models(curves, labels, k, opts);
  res.labels = labels;
  res.distances = distance_matrix(curves.values, res.models);
  res.gamma = k > 1 ? fit_logit(make_covariates(res.distances), labels, k, opts.ridge) : LogitCoefficients{};
  if (k == 1) res.gamma.gamma = Eigen::MatrixXd::Zero(0, 1);
  res.posterior = posterior_matrix(make_covariates(res.distances), res.gamma);
  res.converged = true;
  return res;
}

/// Cosines of the principal angles between two truncated eigenspaces.
inline Eigen::VectorXd principal_cosines(const ClusterModel& a, const ClusterModel& b) {
  require_same_grid(a.grid, b.grid, "principal angles");
  const Eigen::VectorXd w = trapezoid_weights(a.grid);
  const Eigen::MatrixXd cross = a.basis().transpose() * w.asDiagonal() * b.basis();
  if (cross.size() == 0) return Eigen::VectorXd();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(cross);
  return svd.singularValues().cwiseMin(1.0);
}

/// Sum of squared principal-angle sines over min(M_a, M_b) angles.
inline double subspace_distance(const ClusterModel& a, const ClusterModel& b) {
  const Eigen::VectorXd cs = principal_cosines(a, b);
  return (1.0 - cs.array().square()).max(0.0).sum();
}

inline double mean_distance(const ClusterModel& a, const ClusterModel& b) {
  require_same_grid(a.grid, b.grid, "mean distance");
  const Eigen::VectorXd diff = a.mean - b.mean;
  return trapezoid_weights(a.grid).dot(diff.cwiseProduct(diff));
}

struct IdentifiabilityPair {
  int c = 0;
  int d = 0;
  double max_sine = 0.0;     // largest principal-angle sine of the smaller space vs the larger
  bool nested = false;
  bool mean_condition = false;
  bool violation = false;
};

struct IdentifiabilityReport {
  std::vector<IdentifiabilityPair> pairs;
  std::vector<std::pair<int, int>> violations;
};

/// Flags pairs where one truncated eigenspace lies inside the other and the
/// means coincide or each mean lies in the other cluster's span.
inline IdentifiabilityReport check_identifiability(const std::vector<ClusterModel>& models, double tol = 1e-6) {
  if (models.size() < 2) throw ConfigError("identifiability check needs at least 2 clusters");
  IdentifiabilityReport rep;
  auto in_span = [&](const Eigen::VectorXd& f, const ClusterModel& m) {
    const Eigen::VectorXd w = trapezoid_weights(m.grid);
    const Eigen::VectorXd coef = m.basis().transpose() * (w.asDiagonal() * f);
    const Eigen::VectorXd r = f - m.basis() * coef;
    return w.dot(r.cwiseProduct(r)) <= tol * tol * std::max(1.0, w.dot(f.cwiseProduct(f)));
  };
  for (std::size_t c = 0; c < models.size(); ++c)
    for (std::size_t d = c + 1; d < models.size(); ++d) {
      IdentifiabilityPair p;
      p.c = static_cast<int>(c);
      p.d = static_cast<int>(d);
      const Eigen::VectorXd cs = principal_cosines(models[c], models[d]);
      p.max_sine = cs.size() == 0 ? 0.0 : std::sqrt(std::max(0.0, 1.0 - cs.minCoeff() * cs.minCoeff()));
      p.nested = p.max_sine < tol;
      const Eigen::VectorXd diff = models[c].mean - models[d].mean;
      const Eigen::VectorXd w = trapezoid_weights(models[c].grid);
      const bool equal = w.dot(diff.cwiseProduct(diff)) <= tol * tol * std::max(1.0, w.dot(models[c].mean.cwiseAbs2()));
      p.mean_condition = equal || (in_span(models[c].mean, models[d]) && in_span(models[d].mean, models[c]));
      p.violation = p.nested && p.mean_condition;
      if (p.violation) rep.violations.emplace_back(p.c, p.d);
      rep.pairs.push_back(p);
    }
  return rep;
}

/// How the level is split at a given K. Pairs divides by the number of
/// cluster pairs and applies it to each hypothesis family separately; Tests
/// divides by every pair-hypothesis test (both families).
enum class Multiplicity { Pairs, Tests };

struct SelectKOptions {
  int max_clusters = 3;
  Multiplicity multiplicity = Multiplicity::Pairs;
  int bootstrap_samples = 200;
  double level = 0.05;
  std::uint64_t seed = 0;
  ClusteringOptions clustering;
};

struct PairTest {
  int c = 0;
  int d = 0;
  double mean_stat = 0.0;      // integrated squared mean difference
  double subspace_stat = 0.0;  // sum of squared principal-angle sines
  double h01_rate = 0.0;       // fraction of null replicates at or above the observed statistic
  double h02_rate = 0.0;
  double h01_pvalue = 1.0;
  double h02_pvalue = 1.0;
  int replicates = 0;          // null replicates that fitted successfully
  bool reject_h01 = false;
  bool reject_h02 = false;
};

struct ClusterCountTest {
  int k = 0;
  int bootstrap_samples = 0;
  double adjusted_level = 0.0;
  std::vector<PairTest> pairs;
  bool accepted = false;
  std::string failure;  // set when the K-cluster fit itself failed
};

struct SelectKResult {
  int k = 1;  // 1 means no significant split
  std::vector<ClusterCountTest> tests;
};

namespace detail {

struct NullStats {
  double mean_stat = 0.0;
  double subspace_stat = 0.0;
};

// One null replicate for a pair: Gaussian scores on the pooled eigenbasis plus
// residual curves resampled from the pair, re-split into two clusters with the
// pooled bandwidths held fixed.
inline std::optional<NullStats> null_replicate(const ClusterModel& pooled, const Eigen::MatrixXd& residuals,
                                               const ClusteringOptions& opts, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_int_distribution<Eigen::Index> pick(0, residuals.rows() - 1);
  const Eigen::Index n = residuals.rows();
  Eigen::MatrixXd sample(n, residuals.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd y = pooled.mean + residuals.row(pick(rng)).transpose();
    for (int j = 0; j < pooled.num_components; ++j) y += std::sqrt(pooled.eigenvalues[j]) * z(rng) * pooled.eigenfunctions.col(j);
    sample.row(i) = y.transpose();
  }
  ClusteringOptions o = opts;
  o.seed = splitmix64(seed);
  o.fpca.mean_bandwidth = pooled.mean_bandwidth;
  o.fpca.cov_bandwidth = pooled.cov_bandwidth;
  o.jobs = 1;
  try {
    const ClusteringResult r = fit_clusters(CurveSet(pooled.grid, std::move(sample)), 2, o);
    return NullStats{mean_distance(r.models[0], r.models[1]), subspace_distance(r.models[0], r.models[1])};
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline PairTest test_pair(const CurveSet& curves, const ClusteringResult& fit, int c, int d,
                          const SelectKOptions& opts, std::uint64_t pair_seed) {
  PairTest t;
  t.c = c;
  t.d = d;
  t.mean_stat = mean_distance(fit.models[static_cast<std::size_t>(c)], fit.models[static_cast<std::size_t>(d)]);
  t.subspace_stat = subspace_distance(fit.models[static_cast<std::size_t>(c)], fit.models[static_cast<std::size_t>(d)]);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < fit.labels.size(); ++i)
    if (fit.labels[i] == c || fit.labels[i] == d) rows.push_back(i);
  const CurveSet pair = curves.subset(rows);
  FpcaOptions fo = opts.clustering.fpca;
  fo.seed = pair_seed;
  const ClusterModel pooled = fit_cluster_model(pair, 0, fo);
  Eigen::MatrixXd residuals(pair.values.rows(), pair.values.cols());
  const Eigen::MatrixXd sc = score_matrix(pair.values, pooled);
  for (Eigen::Index i = 0; i < pair.values.rows(); ++i)
    residuals.row(i) = pair.values.row(i) - (pooled.mean + pooled.basis() * sc.row(i).transpose()).transpose();

  const auto b = static_cast<std::size_t>(opts.bootstrap_samples);
  std::vector<std::optional<NullStats>> stats(b);
  parallel_for(b, opts.clustering.jobs, [&](std::size_t r) {
    stats[r] = null_replicate(pooled, residuals, opts.clustering, derive_seed(pair_seed, streams::kSelectK, r));
  });
  int ge1 = 0, ge2 = 0;
  for (const auto& s : stats) {
    if (!s) continue;
    ++t.replicates;
    ge1 += s->mean_stat >= t.mean_stat;
    ge2 += s->subspace_stat >= t.subspace_stat;
  }
  if (t.replicates == 0) throw StudyError("every null replicate failed for clusters " + std::to_string(c + 1) +
                                          " vs " + std::to_string(d + 1));
  const double br = t.replicates;
  t.h01_rate = ge1 / br;
  t.h02_rate = ge2 / br;
  t.h01_pvalue = (1.0 + ge1) / (br + 1.0);
  t.h02_pvalue = (1.0 + ge2) / (br + 1.0);
  return t;
}

}  // namespace detail

inline double adjusted_level(const SelectKOptions& opts, int k) {
  const double pairs = k * (k - 1) / 2.0;
  return opts.level / (opts.multiplicity == Multiplicity::Pairs ? pairs : 2.0 * pairs);
}

/// The empirical rate moves in steps of 1/B; below one step per adjusted
/// level a single null exceedance already decides the test.
inline void check_bootstrap_size(const SelectKOptions& opts, int k) {
  if (opts.bootstrap_samples < 1) throw ConfigError("bootstrap sample count must be positive");
  if (!(opts.level > 0.0 && opts.level < 1.0)) throw ConfigError("test level must lie in (0, 1)");
  const double a = adjusted_level(opts, k);
  if (opts.bootstrap_samples * a < 1.0)
    throw ConfigError("B=" + std::to_string(opts.bootstrap_samples) + " cannot resolve the adjusted level " +
                      std::to_string(a) + " at K=" + std::to_string(k));
}

/// Bootstrap tests of equal means (H01) and equal eigenspaces (H02) for each
/// cluster pair of a K-cluster fit. A null is rejected when the fraction of
/// null replicates reaching the observed statistic is at most the adjusted
/// level.
inline ClusterCountTest test_cluster_count(const CurveSet& curves, int k, const SelectKOptions& opts) {
  ClusterCountTest out;
  out.k = k;
  out.bootstrap_samples = opts.bootstrap_samples;
  out.adjusted_level = adjusted_level(opts, k);
  check_bootstrap_size(opts, k);
  ClusteringOptions co = opts.clustering;
  co.seed = derive_seed(opts.seed, streams::kClustering, static_cast<std::uint64_t>(k));
  ClusteringResult fit;
  try {
    fit = fit_clusters(curves, k, co);
  } catch (const Error& e) {
    out.failure = e.what();
    return out;
  }
  out.accepted = true;
  int pair_index = 0;
  for (int c = 0; c < k; ++c)
    for (int d = c + 1; d < k; ++d, ++pair_index) {
      PairTest t = detail::test_pair(curves, fit, c, d, opts,
                                     derive_seed(opts.seed, streams::kSelectK,
                                                 static_cast<std::uint64_t>(k * 100 + pair_index)));
      t.reject_h01 = t.h01_rate <= out.adjusted_level;
      t.reject_h02 = t.h02_rate <= out.adjusted_level;
      out.accepted = out.accepted && t.reject_h01 && t.reject_h02;
      out.pairs.push_back(t);
    }
  return out;
}

/// Forward testing: K = 2, 3, ... is accepted while every pair rejects both
/// nulls; the largest accepted K is returned (1 if K = 2 already fails).
inline SelectKResult select_num_clusters(const CurveSet& curves, const SelectKOptions& opts) {
  if (opts.max_clusters < 2) throw ConfigError("K_max must be at least 2");
  check_bootstrap_size(opts, opts.max_clusters);
  SelectKResult res;
  for (int k = 2; k <= opts.max_clusters; ++k) {
    ClusterCountTest t = test_cluster_count(curves, k, opts);
    const bool ok = t.accepted;
    res.tests.push_back(std::move(t));
    if (!ok) break;
    res.k = k;
  }
  return res;
}

}  // namespace fmpred
