#include <gtest/gtest.h>

#include <algorithm>

#include "support.hpp"

using namespace fmpred;

namespace {

SimulationConfig separated_spec() {
  SimulationConfig s;
  const Eigen::MatrixXd phi = fmtest::orthonormal_polys(s.grid, 3);
  for (int c = 0; c < 2; ++c) {
    ClusterSpec cs;
    cs.mean = (c == 0 ? 10.0 : -10.0) * phi.col(0) + 4.0 * phi.col(2);
    cs.eigenfunctions = phi.col(1);
    cs.eigenvalues = Eigen::VectorXd::Ones(1);
    cs.n_train = 15;
    cs.n_test = 3;
    s.clusters.push_back(cs);
  }
  s.replicates = 2;
  return s;
}

}  // namespace

TEST(Generator, DefaultCounts) {
  const SimulationConfig cfg = default_simulation_config();
  ASSERT_EQ(cfg.clusters.size(), 3u);
  const int train[] = {21, 31, 18}, test[] = {3, 8, 3};
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(cfg.clusters[c].n_train, train[c]);
    EXPECT_EQ(cfg.clusters[c].n_test, test[c]);
  }
  EXPECT_EQ(cfg.grid.size(), 96u);
  EXPECT_DOUBLE_EQ(cfg.grid.front(), 0.25);
  EXPECT_DOUBLE_EQ(cfg.grid.back(), 24.0);
  const Dataset d = generate_dataset(cfg, 1);
  EXPECT_EQ(d.train.size(), 70u);
  EXPECT_EQ(d.test.size(), 14u);
  EXPECT_EQ(std::count(d.train_labels.begin(), d.train_labels.end(), 1), 31);
}

TEST(Generator, DegenerateSpecReturnsMeans) {
  SimulationConfig cfg = default_simulation_config();
  for (auto& c : cfg.clusters) {
    c.eigenvalues.setZero();
    c.noise_variance = 0.0;
  }
  const Dataset d = generate_dataset(cfg, 2);
  for (std::size_t i = 0; i < d.train.size(); ++i)
    EXPECT_TRUE(d.train.values.row(static_cast<Eigen::Index>(i)).transpose() ==
                cfg.clusters[static_cast<std::size_t>(d.train_labels[i])].mean);
}

TEST(Generator, SampleCovarianceMatchesAnalytic) {
  SimulationConfig cfg = default_simulation_config();
  ClusterSpec s = cfg.clusters[0];
  s.n_train = 2000;
  s.n_test = 0;
  cfg.clusters = {s};
  const Dataset d = generate_dataset(cfg, 3);
  const Eigen::RowVectorXd mean = d.train.values.colwise().mean();
  const Eigen::MatrixXd c = d.train.values.rowwise() - mean;
  const Eigen::MatrixXd sample = c.transpose() * c / 1999.0;
  Eigen::MatrixXd analytic = s.eigenfunctions * s.eigenvalues.asDiagonal() * s.eigenfunctions.transpose();
  analytic.diagonal().array() += s.noise_variance;
  EXPECT_LT((sample - analytic).norm() / analytic.norm(), 0.10);
}

TEST(Generator, ScoreMomentsMatchEigenvalues) {
  SimulationConfig cfg = default_simulation_config();
  ClusterSpec s = cfg.clusters[1];
  s.noise_variance = 0.0;
  s.n_train = 2000;
  s.n_test = 0;
  cfg.clusters = {s};
  const Dataset d = generate_dataset(cfg, 4);
  const Eigen::VectorXd w = trapezoid_weights(cfg.grid);
  const Eigen::MatrixXd centered = d.train.values.rowwise() - s.mean.transpose();
  const Eigen::MatrixXd scores = centered * w.asDiagonal() * s.eigenfunctions;
  for (Eigen::Index j = 0; j < s.eigenvalues.size(); ++j) {
    const double lam = s.eigenvalues[j];
    if (lam <= 0.0) continue;
    const double m = scores.col(j).mean();
    const double v = scores.col(j).squaredNorm() / 2000.0;
    EXPECT_LT(std::abs(m), 3.0 * std::sqrt(lam / 2000.0)) << "j=" << j;
    EXPECT_LT(std::abs(v - lam), 3.0 * lam * std::sqrt(2.0 / 2000.0)) << "j=" << j;
  }
}

TEST(Generator, SeedDeterminesData) {
  const SimulationConfig cfg = default_simulation_config();
  const Dataset a = generate_dataset(cfg, 9), b = generate_dataset(cfg, 9), c = generate_dataset(cfg, 10);
  EXPECT_TRUE(a.train.values == b.train.values);
  EXPECT_TRUE(a.test.values == b.test.values);
  EXPECT_FALSE(a.train.values == c.train.values);
}

TEST(Generator, NonOrthonormalSpecRejected) {
  SimulationConfig cfg = default_simulation_config();
  cfg.clusters[0].eigenfunctions.col(0) *= 1.01;
  EXPECT_THROW(generate_dataset(cfg, 1), ConfigError);
  cfg = default_simulation_config();
  cfg.clusters[2].eigenvalues[0] = -1.0;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(BestPermutation, UndoesRelabelling) {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2, 2};
  const std::vector<int> fitted{2, 2, 0, 0, 1, 1, 0};
  const auto perm = best_permutation(truth, fitted, 3);
  EXPECT_EQ(perm, (std::vector<int>{1, 2, 0}));
}

TEST(Study, SeparableSpecHasNoClusteringError) {
  StudyConfig cfg;
  cfg.replicates = 2;
  cfg.seed = 5;
  cfg.evaluate_methods = false;
  const StudyReport r = run_study(separated_spec(), cfg);
  EXPECT_EQ(r.failures, 0);
  ASSERT_EQ(r.runs.size(), 2u);
  for (const auto& run : r.runs) EXPECT_EQ(run.clustering_error, 0.0);
  EXPECT_EQ(r.classification_error.size(), r.tau_grid.size());
}

TEST(Study, DeterministicUnderMasterSeed) {
  StudyConfig cfg;
  cfg.replicates = 2;
  cfg.seed = 6;
  cfg.evaluate_methods = false;
  const StudyReport a = run_study(default_simulation_config(), cfg);
  const StudyReport b = run_study(default_simulation_config(), cfg);
  EXPECT_EQ(a.clustering_error, b.clustering_error);
  EXPECT_EQ(a.classification_error, b.classification_error);
}
