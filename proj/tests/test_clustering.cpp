#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "support.hpp"

using namespace fmpred;
using fmtest::make_model;

namespace {

CurveSet two_groups(int per_group, double noise, std::uint64_t seed) {
  const TimeGrid g = TimeGrid::quarter_hours();
  const Eigen::VectorXd phi = fmtest::unit_bump(g);
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd v(2 * per_group, 96);
  for (int i = 0; i < 2 * per_group; ++i) {
    const double sign = i < per_group ? 1.0 : -1.0;
    for (Eigen::Index t = 0; t < 96; ++t) v(i, t) = sign * 5.0 * phi[t] + noise * z(rng);
  }
  return CurveSet(g, v);
}

bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j)
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
  return true;
}

double error_rate(const std::vector<int>& truth, const std::vector<int>& fitted, int k) {
  const auto perm = best_permutation(truth, fitted, k);
  int bad = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) bad += perm[static_cast<std::size_t>(fitted[i])] != truth[i];
  return static_cast<double>(bad) / static_cast<double>(truth.size());
}

}  // namespace

TEST(InitialClusters, SeparatesMirroredGroups) {
  const CurveSet cs = two_groups(10, 0.01, 1);
  const auto labels = initial_clusters(cs, 2);
  std::vector<int> truth(20, 0);
  std::fill(truth.begin() + 10, truth.end(), 1);
  EXPECT_TRUE(same_partition(labels, truth));
}

TEST(InitialClusters, SingleCluster) {
  const CurveSet cs = two_groups(5, 0.1, 2);
  const auto labels = initial_clusters(cs, 1);
  EXPECT_TRUE(std::all_of(labels.begin(), labels.end(), [](int l) { return l == 0; }));
}

TEST(InitialClusters, IdenticalCurvesLeaveEmptyCluster) {
  const TimeGrid g = TimeGrid::quarter_hours();
  Eigen::MatrixXd v(8, 96);
  for (Eigen::Index i = 0; i < 8; ++i) v.row(i) = fmtest::unit_bump(g).transpose();
  EXPECT_THROW(initial_clusters(CurveSet(g, v), 2), EmptyClusterError);
}

TEST(RelativeDistances, ExactMembership) {
  const TimeGrid g = TimeGrid::quarter_hours();
  const Eigen::MatrixXd phi = fmtest::orthonormal_polys(g, 3);
  const std::vector<ClusterModel> models{
      make_model(g, Eigen::VectorXd::Zero(96), phi.leftCols(1), Eigen::VectorXd::Ones(1)),
      make_model(g, Eigen::VectorXd::Zero(96), phi.col(1), Eigen::VectorXd::Ones(1))};
  const RelativeDistances d = relative_distances(SampledCurve(g, 3.0 * phi.col(0)), models);
  EXPECT_NEAR(d.d[0], 0.0, 1e-12);
  EXPECT_NEAR(d.d[1], 1.0, 1e-12);
}

TEST(RelativeDistances, EqualResidualsSplitEvenly) {
  const TimeGrid g = TimeGrid::quarter_hours();
  const Eigen::MatrixXd phi = fmtest::orthonormal_polys(g, 3);
  const std::vector<ClusterModel> models{
      make_model(g, Eigen::VectorXd::Zero(96), phi.col(0), Eigen::VectorXd::Ones(1)),
      make_model(g, Eigen::VectorXd::Zero(96), phi.col(1), Eigen::VectorXd::Ones(1))};
  const RelativeDistances d = relative_distances(SampledCurve(g, phi.col(0) + phi.col(1) + phi.col(2)), models);
  EXPECT_NEAR(d.d[0], 0.5, 1e-12);
  EXPECT_NEAR(d.d[1], 0.5, 1e-12);
}

TEST(RelativeDistances, NormalizedAgainstDirectQuadrature) {
  const TimeGrid g = TimeGrid::quarter_hours();
  const Eigen::MatrixXd phi = fmtest::orthonormal_polys(g, 4);
  std::vector<ClusterModel> models;
  for (int c = 0; c < 3; ++c)
    models.push_back(make_model(g, Eigen::VectorXd::Constant(96, c), phi.col(c), Eigen::VectorXd::Ones(1), c));
  Rng rng(6);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd y(96);
  for (Eigen::Index i = 0; i < 96; ++i) y[i] = z(rng) + 0.5;
  const RelativeDistances d = relative_distances(SampledCurve(g, y), models);
  const Eigen::VectorXd w = trapezoid_weights(g);
  Eigen::Vector3d direct;
  for (int c = 0; c < 3; ++c) {
    const Eigen::VectorXd centered = y - models[static_cast<std::size_t>(c)].mean;
    const double score = w.dot(centered.cwiseProduct(phi.col(c)));
    const Eigen::VectorXd r = centered - score * phi.col(c);
    direct[c] = w.dot(r.cwiseAbs2());
  }
  direct /= direct.sum();
  EXPECT_NEAR(d.d.sum(), 1.0, 1e-12);
  for (int c = 0; c < 3; ++c) {
    EXPECT_GE(d.d[c], 0.0);
    EXPECT_NEAR(d.d[c], direct[c], 1e-12);
  }
}

TEST(FitClusters, SingleClusterShortcut) {
  const CurveSet cs = two_groups(6, 0.5, 3);
  const ClusteringResult r = fit_clusters(cs, 1);
  EXPECT_EQ(r.num_clusters(), 1);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_TRUE(r.converged);
}

TEST(FitClusters, GeneratorClustersRecovered) {
  const SimulationConfig sim = default_simulation_config();
  double total = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Dataset d = generate_dataset(sim, seed);
    ClusteringOptions o;
    o.seed = seed;
    const ClusteringResult r = fit_clusters(d.train, 3, o);
    total += error_rate(d.train_labels, r.labels, 3);
  }
  EXPECT_LT(total / 3.0, 0.10);
}

TEST(FitClusters, InitialLabelPermutationInvariant) {
  const Dataset d = generate_dataset(default_simulation_config(), 4);
  ClusteringOptions o;
  o.seed = 4;
  const auto init = initial_clusters(d.train, 3, o);
  std::vector<int> permuted(init);
  for (int& l : permuted) l = (l + 1) % 3;
  const ClusteringResult a = fit_clusters(d.train, 3, o, init);
  const ClusteringResult b = fit_clusters(d.train, 3, o, permuted);
  EXPECT_TRUE(same_partition(a.labels, b.labels));
}

TEST(FitClusters, PosteriorRowsAreSimplexVectors) {
  const Dataset d = generate_dataset(default_simulation_config(), 5);
  ClusteringOptions o;
  o.seed = 5;
  const ClusteringResult r = fit_clusters(d.train, 3, o);
  for (Eigen::Index i = 0; i < r.posterior.rows(); ++i) {
    EXPECT_NEAR(r.posterior.row(i).sum(), 1.0, 1e-12);
    EXPECT_NEAR(r.distances.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(FitClusters, TinyClusterCollapses) {
  const CurveSet cs = two_groups(6, 0.5, 3);
  std::vector<int> init(12, 0);
  init[0] = 1;
  init[1] = 1;
  EXPECT_THROW(fit_clusters(cs, 2, {}, init), ClusterCollapseError);
}

TEST(Identifiability, SharedStructureFlagged) {
  const TimeGrid g = TimeGrid::quarter_hours();
  const Eigen::MatrixXd phi = fmtest::orthonormal_polys(g, 2);
  const auto a = make_model(g, Eigen::VectorXd::Constant(96, 2.0), phi, Eigen::Vector2d(2, 1), 0);
  const auto b = make_model(g, Eigen::VectorXd::Constant(96, 2.0), phi, Eigen::Vector2d(3, 1), 1);
  EXPECT_EQ(check_identifiability({a, b}).violations.size(), 1u);
}

TEST(Identifiability, OrthogonalDistinctModelsPass) {
  const TimeGrid g = TimeGrid::quarter_hours();
  const Eigen::MatrixXd phi = fmtest::orthonormal_polys(g, 4);
  const auto a = make_model(g, 5.0 * phi.col(2), phi.col(0), Eigen::VectorXd::Ones(1), 0);
  const auto b = make_model(g, -5.0 * phi.col(3), phi.col(1), Eigen::VectorXd::Ones(1), 1);
  const auto rep = check_identifiability({a, b});
  EXPECT_TRUE(rep.violations.empty());
  EXPECT_NEAR(rep.pairs[0].max_sine, 1.0, 1e-9);
}

TEST(Identifiability, NestedSubspacesWithSpannedMeansFlagged) {
  const TimeGrid g = TimeGrid::quarter_hours();
  const Eigen::MatrixXd phi = fmtest::orthonormal_polys(g, 2);
  // c uses phi1; d uses phi1, phi2; both means lie in span(phi1).
  const auto c = make_model(g, 2.0 * phi.col(0), phi.col(0), Eigen::VectorXd::Ones(1), 0);
  const auto d = make_model(g, -1.0 * phi.col(0), phi, Eigen::Vector2d(2, 1), 1);
  const auto rep = check_identifiability({c, d});
  ASSERT_EQ(rep.violations.size(), 1u);
  // Oracle: the projection of phi1 on d's span has unit norm, so the only
  // principal angle is zero.
  const Eigen::VectorXd w = trapezoid_weights(g);
  const Eigen::VectorXd coef = phi.transpose() * (w.asDiagonal() * phi.col(0));
  EXPECT_NEAR(coef.norm(), 1.0, 1e-9);
  EXPECT_NEAR(rep.pairs[0].max_sine, 0.0, 1e-6);
}

TEST(SelectK, SmallBootstrapIsConfigError) {
  const CurveSet cs = two_groups(10, 0.5, 7);
  SelectKOptions o;
  o.max_clusters = 4;
  o.bootstrap_samples = 50;  // 50 * 0.05 / 6 < 1
  EXPECT_THROW(select_num_clusters(cs, o), ConfigError);
  o.max_clusters = 1;
  EXPECT_THROW(select_num_clusters(cs, o), ConfigError);
}

TEST(SelectK, AdjustedLevels) {
  SelectKOptions o;
  EXPECT_DOUBLE_EQ(adjusted_level(o, 2), 0.05);
  EXPECT_NEAR(adjusted_level(o, 3), 0.05 / 3.0, 1e-15);
  o.multiplicity = Multiplicity::Tests;
  EXPECT_NEAR(adjusted_level(o, 3), 0.05 / 6.0, 1e-15);
}

TEST(SelectK, SeparatedGroupsSplit) {
  const CurveSet cs = two_groups(12, 0.3, 8);
  SelectKOptions o;
  o.max_clusters = 2;
  o.bootstrap_samples = 60;
  o.seed = 8;
  const SelectKResult r = select_num_clusters(cs, o);
  ASSERT_EQ(r.tests.size(), 1u);
  // Both groups are pure noise around their means, so only H01 has signal.
  EXPECT_TRUE(r.tests[0].pairs[0].reject_h01);
}
