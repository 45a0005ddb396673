#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <vector>

#include "fmpred/fpca.hpp"
#include "fmpred/grid.hpp"
#include "fmpred/logit.hpp"

namespace fmpred {

/// Default prediction times: every 15 minutes from 8:00 to 20:00 (49 points).
inline TimeGrid default_tau_grid() { return TimeGrid::uniform(8.0, 20.0, 49); }

struct MixtureOptions {
  double fve = kDefaultFve;
  double ridge = kDefaultRidge;
  bool refit_gamma_per_tau = false;    // refit the logit on partial distances at each tau
  bool resample_gamma = false;         // bootstrap also refits the logit
  int beta_cv_folds = kDefaultCvFolds;
  std::uint64_t seed = 0;
};

/// Regression of future-block scores on observed-block scores for one cluster
/// along the tau grid. Matrices are M_c x M_c with rows indexing the future
/// component k and columns the observed component j.
struct BetaPath {
  std::vector<Eigen::MatrixXd> raw;
  std::vector<Eigen::MatrixXd> smoothed;
  // Sign flips that make eigenfunctions continuous in tau; entries are +-1.
  Eigen::MatrixXd observed_orientation;  // Q x M_c
  Eigen::MatrixXd future_orientation;    // Q x M_c
  Eigen::MatrixXd bandwidth;             // M_c x M_c; 0 where smoothing fell back to raw
  std::vector<int> observed_components;  // per tau
  std::vector<int> future_components;
  bool near_singular = false;            // some coefficient was zeroed for lack of variance
};

struct RegressionCoefficients {
  TimeGrid tau_grid;
  std::optional<double> omega;  // observed window length; nullopt is the full past
  std::vector<BetaPath> clusters;
};

/// Fitted mixture: cluster models, logit, regression paths for the full-past
/// window, and the training data needed for bootstrap refits.
struct MixtureModel {
  std::vector<ClusterModel> clusters;
  LogitCoefficients gamma;
  TimeGrid tau_grid = default_tau_grid();
  RegressionCoefficients betas;
  CurveSet training;
  std::vector<int> labels;
  MixtureOptions options;

  int num_clusters() const { return static_cast<int>(clusters.size()); }
  const TimeGrid& grid() const { return clusters.front().grid; }
};

}  // namespace fmpred
