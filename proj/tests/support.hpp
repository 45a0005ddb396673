#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "fmpred/fmpred.hpp"

namespace fmtest {

using fmpred::CurveSet;
using fmpred::TimeGrid;

/// Columns orthonormal under the trapezoid rule on `grid`: Gram-Schmidt on
/// 1, t, t^2, ...
inline Eigen::MatrixXd orthonormal_polys(const TimeGrid& grid, int count) {
  const Eigen::VectorXd w = fmpred::trapezoid_weights(grid);
  const auto m = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd f(m, count);
  const double mid = 0.5 * (grid.front() + grid.back());
  for (int j = 0; j < count; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) f(i, j) = std::pow((grid[static_cast<std::size_t>(i)] - mid) / grid.span(), j);
    for (int l = 0; l < j; ++l) f.col(j) -= w.dot(f.col(j).cwiseProduct(f.col(l))) * f.col(l);
    f.col(j) /= std::sqrt(w.dot(f.col(j).cwiseAbs2()));
  }
  return f;
}

inline Eigen::VectorXd sampled(const TimeGrid& grid, double (*fn)(double)) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) v[static_cast<Eigen::Index>(i)] = fn(grid[i]);
  return v;
}

/// n curves mean + sum_j sqrt(lambda_j) z_j phi_j + N(0, sigma2) noise.
inline CurveSet gaussian_curves(const TimeGrid& grid, const Eigen::VectorXd& mean, const Eigen::MatrixXd& phi,
                                const Eigen::VectorXd& lambda, double sigma2, int n, std::uint64_t seed) {
  fmpred::Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd v(n, static_cast<Eigen::Index>(grid.size()));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd y = mean;
    for (Eigen::Index j = 0; j < lambda.size(); ++j) y += std::sqrt(lambda[j]) * z(rng) * phi.col(j);
    for (Eigen::Index t = 0; t < y.size(); ++t) y[t] += std::sqrt(sigma2) * z(rng);
    v.row(i) = y.transpose();
  }
  return CurveSet(grid, std::move(v));
}

/// Cluster model with the given mean and orthonormal basis; covariance is
/// the matching finite-rank kernel.
inline fmpred::ClusterModel make_model(const TimeGrid& g, Eigen::VectorXd mean, Eigen::MatrixXd phi,
                                       Eigen::VectorXd lambda, int label = 0) {
  fmpred::ClusterModel m;
  m.label = label;
  m.grid = g;
  m.mean = std::move(mean);
  m.covariance = phi * lambda.asDiagonal() * phi.transpose();
  m.eigenfunctions = std::move(phi);
  m.eigenvalues = std::move(lambda);
  m.num_components = static_cast<int>(m.eigenvalues.size());
  return m;
}

inline Eigen::VectorXd unit_bump(const TimeGrid& g, double center = 12.0, double width = 12.0) {
  Eigen::VectorXd f(static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double u = (g[i] - center) / width;
    f[static_cast<Eigen::Index>(i)] = std::abs(u) < 1.0 ? std::cos(0.5 * M_PI * u) : 0.0;
  }
  return f / std::sqrt(fmpred::trapezoid_weights(g).dot(f.cwiseAbs2()));
}

inline double weighted_norm2(const TimeGrid& grid, const Eigen::VectorXd& f) {
  return fmpred::trapezoid_weights(grid).dot(f.cwiseAbs2());
}

inline constexpr std::size_t kNoon = 47;  // t = 12 on the quarter-hour grid

// Sine shapes vanishing at both ends of [first, last], orthonormal under the
// trapezoid rule on the full grid.
inline Eigen::MatrixXd block_sines(const TimeGrid& g, std::size_t first, std::size_t last, int count) {
  const Eigen::VectorXd w = fmpred::trapezoid_weights(g);
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.size()), count);
  const double span = static_cast<double>(last - first);
  for (int j = 0; j < count; ++j) {
    for (std::size_t i = first; i <= last; ++i)
      f(static_cast<Eigen::Index>(i), j) = std::sin((j + 1) * M_PI * static_cast<double>(i - first) / span);
    for (int l = 0; l < j; ++l) f.col(j) -= w.dot(f.col(j).cwiseProduct(f.col(l))) * f.col(l);
    f.col(j) /= std::sqrt(w.dot(f.col(j).cwiseAbs2()));
  }
  return f;
}

struct RegressionData {
  CurveSet curves;
  Eigen::MatrixXd psi;  // observed-block shapes
  Eigen::MatrixXd eta;  // future-block shapes
};

// xi_T = B xi_S exactly, xi_S ~ N(0, diag(lambda)); no measurement noise.
// With independent = true the future scores are drawn on their own instead.
inline RegressionData regression_curves(const Eigen::Matrix2d& b, const Eigen::Vector2d& lambda, int n, std::uint64_t seed,
                                 bool independent = false) {
  const TimeGrid g = TimeGrid::quarter_hours();
  RegressionData d;
  d.psi = block_sines(g, 0, kNoon, 2);
  d.eta = block_sines(g, kNoon, 95, 2);
  fmpred::Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd v(n, 96);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d xs(std::sqrt(lambda[0]) * z(rng), std::sqrt(lambda[1]) * z(rng));
    Eigen::Vector2d xt = b * xs;
    if (independent) xt = Eigen::Vector2d(2.0 * z(rng), z(rng));
    Eigen::VectorXd y = d.psi * xs + d.eta * xt;
    for (Eigen::Index t = 0; t < 96; ++t) y[t] += 2.0 + 0.1 * g[static_cast<std::size_t>(t)];
    v.row(i) = y.transpose();
  }
  d.curves = CurveSet(g, std::move(v));
  return d;
}

// Unsmoothed cluster model: sample mean and sample covariance.
inline fmpred::ClusterModel sample_model(const CurveSet& cs, int components) {
  fmpred::ClusterModel m;
  m.grid = cs.grid;
  m.mean = cs.values.colwise().mean().transpose();
  const Eigen::MatrixXd c = cs.values.rowwise() - m.mean.transpose();
  m.covariance = c.transpose() * c / static_cast<double>(cs.values.rows() - 1);
  fmpred::Spectrum s = fmpred::eigendecompose(fmpred::Surface(cs.grid, cs.grid, m.covariance));
  m.eigenvalues = s.eigenvalues;
  m.eigenfunctions = s.eigenfunctions;
  m.num_components = components;
  m.num_curves = static_cast<std::size_t>(cs.values.rows());
  return m;
}

}  // namespace fmtest
