#pragma once

// Prediction-error metrics and the method comparison harness.

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fmpred/clustering.hpp"
#include "fmpred/errors.hpp"
#include "fmpred/fpca.hpp"
#include "fmpred/mixture.hpp"
#include "fmpred/numerics.hpp"
#include "fmpred/predict.hpp"

namespace fmpred {

/// Average over curves of the span-normalized integrated squared error of the
/// M_c-truncated reconstruction.
inline double reconstruction_mipe(const CurveSet& curves, const ClusterModel& model) {
  if (curves.size() == 0) throw ConfigError("reconstruction error of an empty cluster");
  require_same_grid(curves.grid, model.grid, "reconstruction");
  const Eigen::VectorXd w = trapezoid_weights(model.grid);
  const Eigen::MatrixXd sc = score_matrix(curves.values, model);
  double total = 0.0;
  for (Eigen::Index i = 0; i < curves.values.rows(); ++i) {
    const Eigen::VectorXd r = curves.values.row(i).transpose() - reconstruct(model, sc.row(i).transpose());
    total += w.dot(r.cwiseProduct(r));
  }
  return total / (static_cast<double>(curves.size()) * model.grid.span());
}

/// tau with observed length omega (nullopt: the whole past) and future length
/// kappa (nullopt: to the end of the day).
struct EvaluationWindow {
  double tau = 0.0;
  std::optional<double> omega;
  std::optional<double> kappa;
};

/// Grid index range [tau, min(tau + kappa, end)] used for integration.
inline WindowSpan future_window(const TimeGrid& grid, std::size_t tau_index, std::optional<double> kappa) {
  std::size_t last = grid.size() - 1;
  if (kappa) {
    if (!(*kappa > 0.0)) throw ConfigError("kappa must be positive");
    const double end = grid[tau_index] + *kappa;
    if (end < grid.back()) last = grid.nearest_index(end);
  }
  if (last <= tau_index) throw DomainError("future window has fewer than 2 grid points");
  return {tau_index, last};
}

/// Integrated squared error on the future window divided by its length, so a
/// constant offset delta gives exactly delta^2. `prediction` starts at tau.
inline double integrated_error(const TimeGrid& grid, const Eigen::VectorXd& truth_full,
                               const Eigen::VectorXd& prediction, const WindowSpan& fw) {
  const TimeGrid sub = grid.slice(fw.first, fw.last);
  const Eigen::VectorXd w = trapezoid_weights(sub);
  const auto len = static_cast<Eigen::Index>(fw.last - fw.first + 1);
  const Eigen::VectorXd e = prediction.head(len) - truth_full.segment(static_cast<Eigen::Index>(fw.first), len);
  return w.dot(e.cwiseProduct(e)) / w.sum();
}

/// Predicts curve i from its observed window at the q-th prediction time; the
/// result lives on [tau, end].
using Forecaster = std::function<Eigen::VectorXd(std::size_t curve, std::size_t q)>;

struct MipeResult {
  double value = 0.0;
  int failures = 0;
};

inline MipeResult mipe(const Forecaster& forecast, const CurveSet& test, std::size_t q, std::size_t tau_index,
                       std::optional<double> kappa) {
  const WindowSpan fw = future_window(test.grid, tau_index, kappa);
  MipeResult r;
  double total = 0.0;
  int used = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    try {
      total += integrated_error(test.grid, test.values.row(static_cast<Eigen::Index>(i)).transpose(), forecast(i, q), fw);
      ++used;
    } catch (const Error&) {
      ++r.failures;
    }
  }
  if (used == 0) throw StudyError("every prediction failed at tau index " + std::to_string(tau_index));
  r.value = total / used;
  return r;
}

/// Trapezoid integral over tau of a per-tau MIPE trace.
inline double tmipe(const TimeGrid& tau_grid, const std::vector<double>& trace) {
  if (trace.size() != tau_grid.size()) throw ConfigError("MIPE trace length does not match the tau grid");
  const Eigen::VectorXd w = trapezoid_weights(tau_grid);
  return w.dot(Eigen::Map<const Eigen::VectorXd>(trace.data(), static_cast<Eigen::Index>(trace.size())));
}

inline double tmipe(const Forecaster& forecast, const CurveSet& test, const TimeGrid& tau_grid,
                    std::optional<double> kappa) {
  std::vector<double> trace;
  for (std::size_t q = 0; q < tau_grid.size(); ++q)
    trace.push_back(mipe(forecast, test, q, test.grid.nearest_index(tau_grid[q]), kappa).value);
  return tmipe(tau_grid, trace);
}

enum class Method { FP, FMP_H, FMP_S, FMP_S_Oracle, FPCP, FPCP_H, FPCP_S };

inline constexpr std::array<Method, 7> kAllMethods = {Method::FP,   Method::FMP_H,  Method::FMP_S, Method::FMP_S_Oracle,
                                                      Method::FPCP, Method::FPCP_H, Method::FPCP_S};

inline std::string method_name(Method m) {
  switch (m) {
    case Method::FP: return "FP";
    case Method::FMP_H: return "FMP_H";
    case Method::FMP_S: return "FMP_S";
    case Method::FMP_S_Oracle: return "FMP_S*";
    case Method::FPCP: return "FPCP";
    case Method::FPCP_H: return "FPCP_H";
    case Method::FPCP_S: return "FPCP_S";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : kAllMethods)
    if (method_name(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

/// TMIPE per (method, kappa, omega). nullopt kappa/omega stand for the rest of
/// the day and the whole past.
struct MethodTable {
  std::vector<Method> methods;
  std::vector<std::optional<double>> kappas;
  std::vector<std::optional<double>> omegas;
  std::vector<double> values;  // [method][kappa][omega]
  std::vector<double> std_errors;  // same layout; empty for a single run
  int failed_predictions = 0;

  double& at(std::size_t m, std::size_t k, std::size_t o) { return values[(m * kappas.size() + k) * omegas.size() + o]; }
  double at(std::size_t m, std::size_t k, std::size_t o) const {
    return values[(m * kappas.size() + k) * omegas.size() + o];
  }
  double se(std::size_t m, std::size_t k, std::size_t o) const {
    return std_errors.empty() ? 0.0 : std_errors[(m * kappas.size() + k) * omegas.size() + o];
  }
  std::size_t method_index(Method m) const {
    for (std::size_t i = 0; i < methods.size(); ++i)
      if (methods[i] == m) return i;
    throw ConfigError("method " + method_name(m) + " is not in the table");
  }
};

inline std::vector<std::optional<double>> default_kappas() { return {1.0, 4.0, 8.0, std::nullopt}; }
inline std::vector<std::optional<double>> default_omegas() {
  return {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, std::nullopt};
}

struct CompareConfig {
  int num_clusters = 3;
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  std::vector<std::optional<double>> kappas = default_kappas();
  std::vector<std::optional<double>> omegas = default_omegas();
  ClusteringOptions clustering;
  MixtureOptions mixture;
  TimeGrid tau_grid = default_tau_grid();
  std::size_t jobs = 1;
};

/// Mixtures a comparison needs; any can be supplied pre-fitted.
struct ComparisonModels {
  std::shared_ptr<const MixtureModel> mixture;  // K clusters, fitted labels
  std::shared_ptr<const MixtureModel> pooled;   // K = 1
  std::shared_ptr<const MixtureModel> oracle;   // true training labels
};

inline bool needs(const std::vector<Method>& ms, std::initializer_list<Method> any) {
  for (Method m : ms)
    for (Method a : any)
      if (m == a) return true;
  return false;
}

inline ComparisonModels fit_comparison_models(const CurveSet& train, const std::optional<std::vector<int>>& train_labels,
                                              const CompareConfig& cfg, ComparisonModels given = {}) {
  if (!given.mixture && needs(cfg.methods, {Method::FMP_H, Method::FMP_S, Method::FPCP_H, Method::FPCP_S}))
    given.mixture = std::make_shared<MixtureModel>(fit_mixture(train, cfg.num_clusters, cfg.clustering, cfg.mixture, cfg.tau_grid));
  if (!given.pooled && needs(cfg.methods, {Method::FP, Method::FPCP}))
    given.pooled = std::make_shared<MixtureModel>(fit_mixture(train, 1, cfg.clustering, cfg.mixture, cfg.tau_grid));
  if (!given.oracle && needs(cfg.methods, {Method::FMP_S_Oracle})) {
    if (!train_labels) throw ConfigError("FMP_S* needs ground-truth training labels");
    int k = 0;
    for (int l : *train_labels) k = std::max(k, l + 1);
    given.oracle =
        std::make_shared<MixtureModel>(fit_mixture_from_labels(train, *train_labels, k, cfg.clustering, cfg.mixture, cfg.tau_grid));
  }
  return given;
}

/// Fills the TMIPE table. Each prediction is made once per (method, omega,
/// tau, curve) and scored on every kappa window.
inline MethodTable compare_methods(const CurveSet& train, const std::optional<std::vector<int>>& train_labels,
                                   const CurveSet& test, const std::optional<std::vector<int>>& test_labels,
                                   const CompareConfig& cfg, ComparisonModels models = {}) {
  if (needs(cfg.methods, {Method::FMP_S_Oracle}) && !test_labels)
    throw ConfigError("FMP_S* needs ground-truth test labels");
  models = fit_comparison_models(train, train_labels, cfg, std::move(models));
  MethodTable table;
  table.methods = cfg.methods;
  table.kappas = cfg.kappas;
  table.omegas = cfg.omegas;
  table.values.assign(cfg.methods.size() * cfg.kappas.size() * cfg.omegas.size(), 0.0);
  const std::size_t nq = cfg.tau_grid.size();

  std::vector<int> failures(cfg.omegas.size(), 0);
  std::vector<std::vector<double>> cells(cfg.omegas.size());
  parallel_for(cfg.omegas.size(), cfg.jobs, [&](std::size_t o) {
    const auto omega = cfg.omegas[o];
    std::optional<MixturePredictor> main, pooled, oracle;
    if (models.mixture) main.emplace(models.mixture, omega);
    if (models.pooled) pooled.emplace(models.pooled, omega);
    if (models.oracle) oracle.emplace(models.oracle, omega);
    // traces[m][k][q]
    std::vector<std::vector<std::vector<double>>> sums(
        cfg.methods.size(), std::vector<std::vector<double>>(cfg.kappas.size(), std::vector<double>(nq, 0.0)));
    std::vector<std::vector<std::vector<int>>> counts(
        cfg.methods.size(), std::vector<std::vector<int>>(cfg.kappas.size(), std::vector<int>(nq, 0)));
    for (std::size_t q = 0; q < nq; ++q) {
      const MixturePredictor& ref = main ? *main : (pooled ? *pooled : *oracle);
      const std::size_t t0 = ref.tau_index(q);
      std::vector<WindowSpan> fws;
      for (const auto& kappa : cfg.kappas) fws.push_back(future_window(test.grid, t0, kappa));
      for (std::size_t i = 0; i < test.size(); ++i) {
        const Eigen::VectorXd full = test.values.row(static_cast<Eigen::Index>(i)).transpose();
        std::optional<Prediction> fmp, fpcp;
        for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
          Eigen::VectorXd pred;
          try {
            switch (cfg.methods[mi]) {
              case Method::FP: pred = pooled->predict(pooled->segment(full, q), q).mixture; break;
              case Method::FPCP: pred = pooled->predict_fpcp(pooled->segment(full, q), q).mixture; break;
              case Method::FMP_H:
              case Method::FMP_S: {
                if (!fmp) fmp = main->predict(main->segment(full, q), q);
                pred = cfg.methods[mi] == Method::FMP_S ? fmp->mixture : combine(fmp->per_cluster, hard_weights(fmp->posterior));
                break;
              }
              case Method::FPCP_H:
              case Method::FPCP_S: {
                if (!fpcp) fpcp = main->predict_fpcp(main->segment(full, q), q);
                pred = cfg.methods[mi] == Method::FPCP_S ? fpcp->mixture
                                                         : combine(fpcp->per_cluster, hard_weights(fpcp->posterior));
                break;
              }
              case Method::FMP_S_Oracle:
                pred = oracle->conditional(oracle->segment(full, q), static_cast<std::size_t>((*test_labels)[i]), q);
                break;
            }
          } catch (const Error&) {
            ++failures[o];
            continue;
          }
          for (std::size_t k = 0; k < cfg.kappas.size(); ++k) {
            sums[mi][k][q] += integrated_error(test.grid, full, pred, fws[k]);
            ++counts[mi][k][q];
          }
        }
      }
    }
    cells[o].assign(cfg.methods.size() * cfg.kappas.size(), 0.0);
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi)
      for (std::size_t k = 0; k < cfg.kappas.size(); ++k) {
        std::vector<double> trace(nq);
        for (std::size_t q = 0; q < nq; ++q) {
          if (counts[mi][k][q] == 0) throw StudyError("every prediction failed for " + method_name(cfg.methods[mi]));
          trace[q] = sums[mi][k][q] / counts[mi][k][q];
        }
        cells[o][mi * cfg.kappas.size() + k] = tmipe(cfg.tau_grid, trace);
      }
  });
  for (std::size_t o = 0; o < cfg.omegas.size(); ++o) {
    table.failed_predictions += failures[o];
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi)
      for (std::size_t k = 0; k < cfg.kappas.size(); ++k) table.at(mi, k, o) = cells[o][mi * cfg.kappas.size() + k];
  }
  return table;
}

}  // namespace fmpred
