#pragma once

// Synthetic clustered curve data and replicate studies.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fmpred/errors.hpp"
#include "fmpred/eval.hpp"
#include "fmpred/grid.hpp"
#include "fmpred/numerics.hpp"
#include "fmpred/parallel.hpp"
#include "fmpred/predict.hpp"
#include "fmpred/random.hpp"

namespace fmpred {

/// One cluster of the generator: y = mean + sum_j xi_j phi_j + eps with
/// xi_j ~ N(0, lambda_j) and eps ~ N(0, noise_variance) per grid point.
struct ClusterSpec {
  Eigen::VectorXd mean;
  Eigen::MatrixXd eigenfunctions;  // grid points x L, orthonormal under trapezoid quadrature
  Eigen::VectorXd eigenvalues;
  double noise_variance = 0.0;
  int n_train = 0;
  int n_test = 0;
};

struct SimulationConfig {
  TimeGrid grid = TimeGrid::quarter_hours();
  std::vector<ClusterSpec> clusters;
  int replicates = 100;
  std::uint64_t seed = 0;
};

struct Dataset {
  CurveSet train;
  std::vector<int> train_labels;
  CurveSet test;
  std::vector<int> test_labels;
};

/// Gram-Schmidt under trapezoid quadrature; columns are processed in order.
inline Eigen::MatrixXd orthonormalize(const TimeGrid& grid, Eigen::MatrixXd f) {
  const Eigen::VectorXd w = trapezoid_weights(grid);
  for (Eigen::Index j = 0; j < f.cols(); ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index l = 0; l < j; ++l) f.col(j) -= w.dot(f.col(j).cwiseProduct(f.col(l))) * f.col(l);
    const double norm = std::sqrt(w.dot(f.col(j).cwiseAbs2()));
    if (!(norm > 1e-12)) throw ConfigError("eigenfunction basis is linearly dependent");
    f.col(j) /= norm;
  }
  return f;
}

namespace shapes {

inline double bump(double t, double center, double width) {
  const double u = (t - center) / width;
  return std::exp(-0.5 * u * u);
}

inline double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

inline double plateau(double t, double start, double end, double edge) {
  return logistic((t - start) / edge) * logistic((end - t) / edge);
}

}  // namespace shapes

/// Three artificial traffic patterns: a busy day with a broad daytime plateau
/// and large variability; a quiet day peaking at midday; and a day equal to
/// the quiet one until about noon with heavier, more variable evening traffic.
inline SimulationConfig default_simulation_config() {
  using namespace shapes;
  SimulationConfig cfg;
  const TimeGrid& g = cfg.grid;
  const auto m = static_cast<Eigen::Index>(g.size());
  auto make = [&](auto fn) {
    Eigen::VectorXd v(m);
    for (Eigen::Index i = 0; i < m; ++i) v[i] = fn(g[static_cast<std::size_t>(i)]);
    return v;
  };
  auto midday = [](double t) { return 3.0 + 18.0 * bump(t, 13.0, 3.2); };

  ClusterSpec busy;
  busy.mean = make([](double t) { return 4.0 + 24.0 * plateau(t, 7.0, 17.5, 0.6) + 4.0 * bump(t, 8.0, 0.8); });
  Eigen::MatrixXd f1(m, 3);
  f1.col(0) = make([](double t) { return plateau(t, 7.0, 17.5, 0.6); });
  f1.col(1) = make([](double t) { return std::sin(2.0 * M_PI * (t - 6.0) / 12.0) * plateau(t, 6.0, 18.0, 0.8); });
  f1.col(2) = make([](double t) { return bump(t, 20.0, 1.8); });
  busy.eigenfunctions = orthonormalize(g, f1);
  busy.eigenvalues = Eigen::Vector3d(120.0, 30.0, 8.0);
  busy.noise_variance = 1.5;
  busy.n_train = 21;
  busy.n_test = 3;

  ClusterSpec quiet;
  quiet.mean = make(midday);
  Eigen::MatrixXd f2(m, 2);
  f2.col(0) = make([](double t) { return bump(t, 13.0, 3.0); });
  f2.col(1) = make([](double t) { return (t - 13.0) / 3.0 * bump(t, 13.0, 3.0); });
  quiet.eigenfunctions = orthonormalize(g, f2);
  quiet.eigenvalues = Eigen::Vector2d(25.0, 6.0);
  quiet.noise_variance = 1.5;
  quiet.n_train = 31;
  quiet.n_test = 8;

  ClusterSpec evening;
  evening.mean = make([&](double t) { return midday(t) + 10.0 * plateau(t, 14.5, 22.5, 0.8); });
  Eigen::MatrixXd f3(m, 3);
  f3.col(0) = make([](double t) { return bump(t, 18.5, 1.6); });
  f3.col(1) = make([](double t) { return bump(t, 13.0, 3.0); });
  f3.col(2) = make([](double t) { return std::sin(2.0 * M_PI * (t - 15.0) / 8.0) * plateau(t, 15.0, 23.0, 0.6); });
  evening.eigenfunctions = orthonormalize(g, f3);
  evening.eigenvalues = Eigen::Vector3d(40.0, 20.0, 10.0);
  evening.noise_variance = 1.5;
  evening.n_train = 18;
  evening.n_test = 3;

  cfg.clusters = {busy, quiet, evening};
  return cfg;
}

inline void validate(const SimulationConfig& cfg) {
  if (cfg.clusters.empty()) throw ConfigError("simulation needs at least one cluster");
  if (cfg.replicates < 1) throw ConfigError("replicates must be at least 1");
  const Eigen::VectorXd w = trapezoid_weights(cfg.grid);
  const auto m = static_cast<Eigen::Index>(cfg.grid.size());
  for (std::size_t c = 0; c < cfg.clusters.size(); ++c) {
    const ClusterSpec& s = cfg.clusters[c];
    const std::string tag = "cluster " + std::to_string(c + 1);
    if (s.mean.size() != m || s.eigenfunctions.rows() != m) throw ConfigError(tag + ": spec does not match the grid");
    if (s.eigenfunctions.cols() != s.eigenvalues.size()) throw ConfigError(tag + ": eigenpair count mismatch");
    if ((s.eigenvalues.array() < 0.0).any()) throw ConfigError(tag + ": negative eigenvalue");
    if (s.noise_variance < 0.0) throw ConfigError(tag + ": negative noise variance");
    if (s.n_train < 1 || s.n_test < 0) throw ConfigError(tag + ": invalid curve counts");
    const Eigen::MatrixXd gram = s.eigenfunctions.transpose() * w.asDiagonal() * s.eigenfunctions;
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
    if (gram.size() > 0 && (gram - eye).cwiseAbs().maxCoeff() > 1e-6)
      throw ConfigError(tag + ": eigenfunctions are not orthonormal");
  }
}

inline Eigen::VectorXd draw_curve(const ClusterSpec& s, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd y = s.mean;
  for (Eigen::Index j = 0; j < s.eigenvalues.size(); ++j)
    if (s.eigenvalues[j] > 0.0) y += std::sqrt(s.eigenvalues[j]) * z(rng) * s.eigenfunctions.col(j);
  if (s.noise_variance > 0.0) {
    const double sd = std::sqrt(s.noise_variance);
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += sd * z(rng);
  }
  return y;
}

/// Training curves of every cluster followed by the test curves; labels are
/// 0-based cluster indices.
inline Dataset generate_dataset(const SimulationConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  Rng rng(derive_seed(seed, streams::kDataset, 0));
  int n_train = 0, n_test = 0;
  for (const auto& s : cfg.clusters) {
    n_train += s.n_train;
    n_test += s.n_test;
  }
  const auto m = static_cast<Eigen::Index>(cfg.grid.size());
  Eigen::MatrixXd train(n_train, m), test(n_test, m);
  Dataset d;
  std::vector<std::string> train_ids, test_ids;
  int r = 0;
  for (std::size_t c = 0; c < cfg.clusters.size(); ++c)
    for (int i = 0; i < cfg.clusters[c].n_train; ++i, ++r) {
      train.row(r) = draw_curve(cfg.clusters[c], rng).transpose();
      d.train_labels.push_back(static_cast<int>(c));
      train_ids.push_back("train-" + std::to_string(r + 1));
    }
  r = 0;
  for (std::size_t c = 0; c < cfg.clusters.size(); ++c)
    for (int i = 0; i < cfg.clusters[c].n_test; ++i, ++r) {
      test.row(r) = draw_curve(cfg.clusters[c], rng).transpose();
      d.test_labels.push_back(static_cast<int>(c));
      test_ids.push_back("test-" + std::to_string(r + 1));
    }
  d.train = CurveSet(cfg.grid, std::move(train), std::move(train_ids));
  d.test = CurveSet(cfg.grid, std::move(test), std::move(test_ids));
  return d;
}

/// Label map from fitted to true clusters maximizing agreement; exhaustive
/// over permutations for K <= 8.
inline std::vector<int> best_permutation(const std::vector<int>& truth, const std::vector<int>& fitted, int k) {
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  if (k > 8) return perm;
  Eigen::MatrixXi agree = Eigen::MatrixXi::Zero(k, k);
  for (std::size_t i = 0; i < truth.size(); ++i) ++agree(fitted[i], truth[i]);
  std::vector<int> best = perm;
  int best_score = -1;
  do {
    int s = 0;
    for (int c = 0; c < k; ++c) s += agree(c, perm[static_cast<std::size_t>(c)]);
    if (s > best_score) {
      best_score = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

struct StudyConfig {
  CompareConfig compare;
  int replicates = 100;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  bool evaluate_methods = true;
};

struct ReplicateResult {
  double clustering_error = 0.0;
  std::vector<double> cluster_errors;       // per true cluster
  std::vector<double> classification_error;  // per tau
  std::optional<MethodTable> table;
};

struct StudyReport {
  int replicates = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
  double clustering_error = 0.0;
  double clustering_error_se = 0.0;
  std::vector<double> cluster_errors;
  TimeGrid tau_grid = default_tau_grid();
  std::vector<double> classification_error;
  std::vector<double> classification_error_se;
  std::optional<MethodTable> table;  // mean over replicates with standard errors
  std::vector<ReplicateResult> runs;
};

inline ReplicateResult run_replicate(const SimulationConfig& sim, const StudyConfig& cfg, std::uint64_t seed) {
  const Dataset data = generate_dataset(sim, seed);
  const int k = static_cast<int>(sim.clusters.size());
  CompareConfig cc = cfg.compare;
  cc.num_clusters = k;
  cc.clustering.seed = derive_seed(seed, streams::kClustering, 0);
  cc.clustering.fpca.seed = derive_seed(seed, streams::kFolds, 0);
  cc.mixture.seed = derive_seed(seed, streams::kFolds, 1);
  auto mixture = std::make_shared<MixtureModel>(fit_mixture(data.train, k, cc.clustering, cc.mixture, cc.tau_grid));

  ReplicateResult out;
  const std::vector<int> perm = best_permutation(data.train_labels, mixture->labels, k);
  std::vector<int> wrong(static_cast<std::size_t>(k), 0), size(static_cast<std::size_t>(k), 0);
  int total_wrong = 0;
  for (std::size_t i = 0; i < data.train_labels.size(); ++i) {
    const auto t = static_cast<std::size_t>(data.train_labels[i]);
    ++size[t];
    const bool bad = perm[static_cast<std::size_t>(mixture->labels[i])] != data.train_labels[i];
    wrong[t] += bad;
    total_wrong += bad;
  }
  out.clustering_error = static_cast<double>(total_wrong) / static_cast<double>(data.train_labels.size());
  for (int c = 0; c < k; ++c)
    out.cluster_errors.push_back(size[static_cast<std::size_t>(c)] ? static_cast<double>(wrong[static_cast<std::size_t>(c)]) / size[static_cast<std::size_t>(c)] : 0.0);

  const MixturePredictor pred(mixture, std::nullopt);
  for (std::size_t q = 0; q < cc.tau_grid.size(); ++q) {
    int errors = 0;
    for (std::size_t i = 0; i < data.test.size(); ++i) {
      const Eigen::VectorXd post = pred.posterior(pred.segment(data.test.values.row(static_cast<Eigen::Index>(i)).transpose(), q), q);
      Eigen::Index best = 0;
      post.maxCoeff(&best);
      errors += perm[static_cast<std::size_t>(best)] != data.test_labels[i];
    }
    out.classification_error.push_back(static_cast<double>(errors) / static_cast<double>(data.test.size()));
  }
  if (cfg.evaluate_methods) {
    ComparisonModels given;
    given.mixture = mixture;
    out.table = compare_methods(data.train, data.train_labels, data.test, data.test_labels, cc, given);
  }
  return out;
}

namespace detail {

inline std::pair<double, double> mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace detail

/// Replicates run with derived seeds; failures are recorded and skipped, and
/// more than 20% failures abort the study.
inline StudyReport run_study(const SimulationConfig& sim, const StudyConfig& cfg) {
  validate(sim);
  if (cfg.replicates < 1) throw ConfigError("replicates must be at least 1");
  const auto r = static_cast<std::size_t>(cfg.replicates);
  std::vector<std::optional<ReplicateResult>> results(r);
  std::vector<std::string> errors(r);
  parallel_for(r, cfg.jobs, [&](std::size_t i) {
    try {
      results[i] = run_replicate(sim, cfg, derive_seed(cfg.seed, streams::kReplicate, i));
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  StudyReport rep;
  rep.replicates = cfg.replicates;
  rep.tau_grid = cfg.compare.tau_grid;
  for (std::size_t i = 0; i < r; ++i) {
    if (results[i]) {
      rep.runs.push_back(std::move(*results[i]));
    } else {
      ++rep.failures;
      rep.failure_messages.push_back("replicate " + std::to_string(i + 1) + ": " + errors[i]);
    }
  }
  if (rep.failures > 0.2 * cfg.replicates)
    throw StudyError(std::to_string(rep.failures) + " of " + std::to_string(cfg.replicates) +
                     " replicates failed; first: " + rep.failure_messages.front());
  std::vector<double> ce;
  for (const auto& run : rep.runs) ce.push_back(run.clustering_error);
  std::tie(rep.clustering_error, rep.clustering_error_se) = detail::mean_se(ce);
  const std::size_t k = rep.runs.front().cluster_errors.size();
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> v;
    for (const auto& run : rep.runs) v.push_back(run.cluster_errors[c]);
    rep.cluster_errors.push_back(detail::mean_se(v).first);
  }
  for (std::size_t q = 0; q < rep.tau_grid.size(); ++q) {
    std::vector<double> v;
    for (const auto& run : rep.runs) v.push_back(run.classification_error[q]);
    const auto [mu, se] = detail::mean_se(v);
    rep.classification_error.push_back(mu);
    rep.classification_error_se.push_back(se);
  }
  if (rep.runs.front().table) {
    MethodTable t = *rep.runs.front().table;
    t.std_errors.assign(t.values.size(), 0.0);
    t.failed_predictions = 0;
    for (std::size_t cell = 0; cell < t.values.size(); ++cell) {
      std::vector<double> v;
      for (const auto& run : rep.runs) v.push_back(run.table->values[cell]);
      std::tie(t.values[cell], t.std_errors[cell]) = detail::mean_se(v);
    }
    for (const auto& run : rep.runs) t.failed_predictions += run.table->failed_predictions;
    rep.table = std::move(t);
  }
  return rep;
}

}  // namespace fmpred
