#pragma once

// Multinomial logit on relative-distance covariates. Class K-1 (0-based) is
// the baseline with an implicit zero coefficient vector.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fmpred/errors.hpp"

namespace fmpred {

inline constexpr double kDefaultRidge = 1e-6;
inline constexpr double kSeparationNorm = 1e4;

struct LogitCoefficients {
  Eigen::MatrixXd gamma;  // (K-1) x K: row c holds gamma_c for covariate (1, d_1, ..., d_{K-1})
  int iterations = 0;
  bool converged = true;
  bool separated = false;  // coefficient norm passed kSeparationNorm; the ridge kept it finite

  int num_classes() const { return static_cast<int>(gamma.rows()) + 1; }
};

/// Intercept followed by the first K-1 relative distances.
inline Eigen::VectorXd make_covariate(const Eigen::VectorXd& distances) {
  Eigen::VectorXd x(distances.size());
  x[0] = 1.0;
  x.tail(distances.size() - 1) = distances.head(distances.size() - 1);
  return x;
}

inline Eigen::MatrixXd make_covariates(const Eigen::MatrixXd& distances) {
  Eigen::MatrixXd x(distances.rows(), distances.cols());
  x.col(0).setOnes();
  x.rightCols(distances.cols() - 1) = distances.leftCols(distances.cols() - 1);
  return x;
}

namespace detail {

inline Eigen::VectorXd softmax_scores(const Eigen::VectorXd& scores) {
  const double mx = scores.maxCoeff();
  Eigen::VectorXd p = (scores.array() - mx).exp().matrix();
  for (Eigen::Index c = 0; c < p.size(); ++c) p[c] = std::max(p[c], std::numeric_limits<double>::min());
  return p / p.sum();
}

inline Eigen::VectorXd class_scores(const Eigen::MatrixXd& gamma, const Eigen::VectorXd& x) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(gamma.rows() + 1);
  s.head(gamma.rows()) = gamma * x;
  return s;
}

inline double penalized_loglik(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& x, const std::vector<int>& y,
                               double ridge) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd s = class_scores(gamma, x.row(i).transpose());
    const double mx = s.maxCoeff();
    const double lse = mx + std::log((s.array() - mx).exp().sum());
    ll += s[y[static_cast<std::size_t>(i)]] - lse;
  }
  return ll - ridge * gamma.squaredNorm();
}

}  // namespace detail

/// Softmax over {gamma_c' x} and the baseline 0. Entries are strictly positive
/// and sum to 1.
inline Eigen::VectorXd posterior(const Eigen::VectorXd& covariate, const LogitCoefficients& coef) {
  if (coef.gamma.rows() == 0) return Eigen::VectorXd::Ones(1);
  if (coef.gamma.cols() != covariate.size()) throw ConfigError("logit covariate has the wrong dimension");
  return detail::softmax_scores(detail::class_scores(coef.gamma, covariate));
}

inline Eigen::MatrixXd posterior_matrix(const Eigen::MatrixXd& covariates, const LogitCoefficients& coef) {
  Eigen::MatrixXd p(covariates.rows(), coef.num_classes());
  for (Eigen::Index i = 0; i < covariates.rows(); ++i) p.row(i) = posterior(covariates.row(i).transpose(), coef).transpose();
  return p;
}

/// Newton/IRLS maximization of the multinomial log-likelihood minus
/// ridge*||gamma||^2, with step halving. Labels are 0-based classes.
inline LogitCoefficients fit_logit(const Eigen::MatrixXd& covariates, const std::vector<int>& labels, int num_classes,
                                   double ridge = kDefaultRidge, int max_iterations = 100) {
  const Eigen::Index n = covariates.rows();
  const Eigen::Index p = covariates.cols();
  if (num_classes < 1) throw ConfigError("logit needs at least one class");
  if (static_cast<std::size_t>(n) != labels.size()) throw ConfigError("logit label count mismatch");
  if (!(ridge >= 0.0)) throw ConfigError("ridge must be nonnegative");
  LogitCoefficients out;
  const Eigen::Index km1 = num_classes - 1;
  out.gamma = Eigen::MatrixXd::Zero(km1, p);
  if (km1 == 0) return out;
  std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ConfigError("logit label out of range");
    seen[static_cast<std::size_t>(y)] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw ConfigError("logit fit needs every class present in the labels");

  const Eigen::Index dim = km1 * p;
  double ll = detail::penalized_loglik(out.gamma, covariates, labels, ridge);
  out.converged = false;
  for (int it = 1; it <= max_iterations; ++it) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd x = covariates.row(i).transpose();
      const Eigen::VectorXd pi = detail::softmax_scores(detail::class_scores(out.gamma, x));
      const Eigen::MatrixXd xx = x * x.transpose();
      for (Eigen::Index c = 0; c < km1; ++c) {
        const double r = (labels[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0) - pi[c];
        grad.segment(c * p, p) += r * x;
        for (Eigen::Index d = 0; d < km1; ++d) {
          const double w = pi[c] * ((c == d ? 1.0 : 0.0) - pi[d]);
          hess.block(c * p, d * p, p, p) += w * xx;
        }
      }
    }
    Eigen::VectorXd g_flat = Eigen::Map<const Eigen::VectorXd>(out.gamma.transpose().eval().data(), dim);
    grad -= 2.0 * ridge * g_flat;
    hess.diagonal().array() += 2.0 * ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    Eigen::VectorXd step = ldlt.info() == Eigen::Success ? ldlt.solve(grad).eval()
                                                          : hess.completeOrthogonalDecomposition().solve(grad).eval();
    if (!step.allFinite()) break;
    double scale = 1.0;
    Eigen::MatrixXd candidate;
    double ll_new = -std::numeric_limits<double>::infinity();
    for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
      Eigen::VectorXd next = g_flat + scale * step;
      candidate = Eigen::Map<const Eigen::MatrixXd>(next.data(), p, km1).transpose();
      ll_new = detail::penalized_loglik(candidate, covariates, labels, ridge);
      if (ll_new >= ll - 1e-12 * std::abs(ll)) break;
    }
    out.iterations = it;
    if (!(ll_new >= ll - 1e-12 * std::abs(ll))) {
      out.converged = true;  // no ascent direction left
      break;
    }
    const double change = std::abs(ll_new - ll);
    out.gamma = candidate;
    ll = ll_new;
    if (change < 1e-9) {
      out.converged = true;
      break;
    }
  }
  out.separated = out.gamma.norm() > kSeparationNorm;
  return out;
}

}  // namespace fmpred
