#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmpred/errors.hpp"

namespace fmpred {

inline constexpr double kDefaultHorizon = 24.0;

/// Ordered time points (hours) inside the daily domain [0, horizon].
class TimeGrid {
 public:
  TimeGrid() = default;

  explicit TimeGrid(std::vector<double> points, double horizon = kDefaultHorizon)
      : points_(std::move(points)), horizon_(horizon) {
    if (points_.size() < 2) throw ConfigError("time grid needs at least 2 points");
    if (!(horizon_ > 0.0)) throw ConfigError("time grid horizon must be positive");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (!std::isfinite(points_[i]) || points_[i] < 0.0 || points_[i] > horizon_)
        throw ConfigError("time grid point outside [0, horizon]: " + std::to_string(points_[i]));
      if (i > 0 && !(points_[i] > points_[i - 1]))
        throw ConfigError("time grid must be strictly increasing");
    }
  }

  static TimeGrid uniform(double first, double last, std::size_t n, double horizon = kDefaultHorizon) {
    if (n < 2) throw ConfigError("uniform grid needs at least 2 points");
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i)
      p[i] = first + (last - first) * static_cast<double>(i) / static_cast<double>(n - 1);
    p.back() = last;
    return TimeGrid(std::move(p), horizon);
  }

  /// t_j = j / 4 for j = 1..96: one reading per 15 minutes.
  static TimeGrid quarter_hours() {
    std::vector<double> p(96);
    for (int j = 1; j <= 96; ++j) p[j - 1] = j / 4.0;
    return TimeGrid(std::move(p));
  }

  std::size_t size() const noexcept { return points_.size(); }
  double operator[](std::size_t i) const { return points_[i]; }
  const std::vector<double>& points() const noexcept { return points_; }
  double horizon() const noexcept { return horizon_; }
  double front() const { return points_.front(); }
  double back() const { return points_.back(); }
  double span() const { return points_.back() - points_.front(); }

  std::size_t nearest_index(double t) const {
    auto it = std::lower_bound(points_.begin(), points_.end(), t);
    if (it == points_.begin()) return 0;
    if (it == points_.end()) return points_.size() - 1;
    const auto hi = static_cast<std::size_t>(it - points_.begin());
    return (points_[hi] - t) < (t - points_[hi - 1]) ? hi : hi - 1;
  }

  std::optional<std::size_t> index_of(double t, double tol = 1e-9) const {
    const std::size_t i = nearest_index(t);
    if (std::abs(points_[i] - t) <= tol) return i;
    return std::nullopt;
  }

  /// Inclusive index range [first, last].
  TimeGrid slice(std::size_t first, std::size_t last) const {
    if (last >= points_.size() || last <= first) throw DomainError("invalid grid slice");
    return TimeGrid(std::vector<double>(points_.begin() + static_cast<std::ptrdiff_t>(first),
                                        points_.begin() + static_cast<std::ptrdiff_t>(last) + 1),
                    horizon_);
  }

  /// Median spacing; the unit for default bandwidth candidates.
  double step() const {
    std::vector<double> d(points_.size() - 1);
    for (std::size_t i = 0; i + 1 < points_.size(); ++i) d[i] = points_[i + 1] - points_[i];
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    return d[d.size() / 2];
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) {
    return a.horizon_ == b.horizon_ && a.points_ == b.points_;
  }

 private:
  std::vector<double> points_;
  double horizon_ = kDefaultHorizon;
};

/// One day's trajectory sampled on a grid.
struct SampledCurve {
  TimeGrid grid;
  Eigen::VectorXd values;
  std::string id;

  SampledCurve() = default;
  SampledCurve(TimeGrid g, Eigen::VectorXd v, std::string label = {})
      : grid(std::move(g)), values(std::move(v)), id(std::move(label)) {
    if (static_cast<std::size_t>(values.size()) != grid.size())
      throw ConfigError("curve length does not match its grid");
    if (!values.allFinite()) throw ConfigError("curve '" + id + "' has non-finite values");
  }

  /// Restriction to the inclusive index range [first, last].
  SampledCurve slice(std::size_t first, std::size_t last) const {
    return SampledCurve(grid.slice(first, last),
                        values.segment(static_cast<Eigen::Index>(first),
                                       static_cast<Eigen::Index>(last - first + 1)),
                        id);
  }
};

/// Real-valued function of (s, t) on a product grid.
struct Surface {
  TimeGrid grid_s;
  TimeGrid grid_t;
  Eigen::MatrixXd values;

  Surface() = default;
  Surface(TimeGrid gs, TimeGrid gt, Eigen::MatrixXd v)
      : grid_s(std::move(gs)), grid_t(std::move(gt)), values(std::move(v)) {
    if (static_cast<std::size_t>(values.rows()) != grid_s.size() ||
        static_cast<std::size_t>(values.cols()) != grid_t.size())
      throw ConfigError("surface dimensions do not match its grids");
  }
};

/// Kernel bandwidth in hours.
class Bandwidth {
 public:
  explicit Bandwidth(double h) : h_(h) {
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("bandwidth must be positive and finite");
  }
  double value() const noexcept { return h_; }
  friend bool operator==(Bandwidth a, Bandwidth b) { return a.h_ == b.h_; }

 private:
  double h_;
};

struct BandwidthPair {
  Bandwidth s;
  Bandwidth t;
};

/// Curves sharing one grid, stored row-wise.
struct CurveSet {
  TimeGrid grid;
  Eigen::MatrixXd values;  // rows: curves, cols: grid points
  std::vector<std::string> ids;

  CurveSet() = default;
  CurveSet(TimeGrid g, Eigen::MatrixXd v, std::vector<std::string> labels = {})
      : grid(std::move(g)), values(std::move(v)), ids(std::move(labels)) {
    if (static_cast<std::size_t>(values.cols()) != grid.size())
      throw ConfigError("curve set width does not match its grid");
    if (ids.empty())
      for (Eigen::Index i = 0; i < values.rows(); ++i) ids.push_back(std::to_string(i));
    if (ids.size() != static_cast<std::size_t>(values.rows()))
      throw ConfigError("curve set id count does not match its rows");
  }

  static CurveSet from_curves(const std::vector<SampledCurve>& curves) {
    if (curves.empty()) throw ConfigError("empty curve list");
    Eigen::MatrixXd v(static_cast<Eigen::Index>(curves.size()),
                      static_cast<Eigen::Index>(curves.front().grid.size()));
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < curves.size(); ++i) {
      if (!(curves[i].grid == curves.front().grid))
        throw GridMismatchError("curves do not share a common grid");
      v.row(static_cast<Eigen::Index>(i)) = curves[i].values.transpose();
      ids.push_back(curves[i].id);
    }
    return CurveSet(curves.front().grid, std::move(v), std::move(ids));
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(values.rows()); }

  SampledCurve curve(std::size_t i) const {
    return SampledCurve(grid, values.row(static_cast<Eigen::Index>(i)).transpose(), ids[i]);
  }

  CurveSet subset(const std::vector<std::size_t>& rows) const {
    Eigen::MatrixXd v(static_cast<Eigen::Index>(rows.size()), values.cols());
    std::vector<std::string> sub_ids;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      v.row(static_cast<Eigen::Index>(r)) = values.row(static_cast<Eigen::Index>(rows[r]));
      sub_ids.push_back(ids[rows[r]]);
    }
    return CurveSet(grid, std::move(v), std::move(sub_ids));
  }
};

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b, const char* what) {
  if (!(a == b)) throw GridMismatchError(std::string("grid mismatch: ") + what);
}

}  // namespace fmpred
