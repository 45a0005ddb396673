#pragma once

// Dynamic classification of a partially observed curve.

#include <Eigen/Dense>

#include <vector>

#include "fmpred/clustering.hpp"
#include "fmpred/errors.hpp"
#include "fmpred/fpca.hpp"
#include "fmpred/logit.hpp"
#include "fmpred/mixture.hpp"

namespace fmpred {

/// Relative distances computed on the observed window only, using each
/// cluster's restricted mean, eigenfunctions and block component count.
inline RelativeDistances partial_distances(const SampledCurve& partial, const std::vector<ClusterModel>& observed) {
  if (partial.grid.size() < 2) throw DomainError("too early: fewer than 2 observed grid points");
  return relative_distances(partial, observed);
}

inline RelativeDistances partial_distances(const SampledCurve& partial, const std::vector<SubdomainModel>& models) {
  std::vector<ClusterModel> observed;
  for (const auto& m : models) observed.push_back(m.observed);
  return partial_distances(partial, observed);
}

/// Locates the partial curve inside the model grid: its first and last points
/// must be grid points.
inline WindowSpan locate_window(const TimeGrid& grid, const TimeGrid& partial) {
  const auto first = grid.index_of(partial.front());
  const auto last = grid.index_of(partial.back());
  if (!first || !last) throw GridMismatchError("partial curve times are not on the model grid");
  if (*last <= *first) throw DomainError("too early: fewer than 2 observed grid points");
  if (!(grid.slice(*first, *last) == partial)) throw GridMismatchError("partial curve grid is not a contiguous model subgrid");
  return {*first, *last};
}

/// Posterior membership of a partial curve observed up to tau under the
/// mixture's training-time logit (no refit).
inline Eigen::VectorXd classify_partial(const SampledCurve& partial, const MixtureModel& mixture, double tau) {
  if (mixture.num_clusters() == 1) return Eigen::VectorXd::Ones(1);
  const WindowSpan w = locate_window(mixture.grid(), partial.grid);
  if (std::abs(mixture.grid()[w.last] - tau) > 1e-9) throw DomainError("partial curve does not end at tau");
  std::vector<ClusterModel> observed;
  for (const auto& m : mixture.clusters)
    observed.push_back(restrict_window(m, w.first, w.last, mixture.options.fve));
  return posterior(make_covariate(partial_distances(partial, observed).d), mixture.gamma);
}

}  // namespace fmpred
