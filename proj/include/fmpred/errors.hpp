#pragma once

#include <stdexcept>
#include <string>

namespace fmpred {

// Broad error classes; the CLI maps each to its own exit code.
enum class ErrorClass { Config, Ingestion, Fit, Predict };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorClass::Config, w) {}
};

struct IngestionError : Error {
  explicit IngestionError(const std::string& w) : Error(ErrorClass::Ingestion, w) {}
};

struct GridMismatchError : Error {
  explicit GridMismatchError(const std::string& w) : Error(ErrorClass::Predict, w) {}
};

struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error(ErrorClass::Predict, w) {}
};

struct SmoothingError : Error {
  explicit SmoothingError(const std::string& w) : Error(ErrorClass::Fit, w) {}
};

struct BandwidthSelectionError : Error {
  explicit BandwidthSelectionError(const std::string& w) : Error(ErrorClass::Fit, w) {}
};

struct InvalidCovarianceError : Error {
  explicit InvalidCovarianceError(const std::string& w) : Error(ErrorClass::Fit, w) {}
};

struct NoVarianceError : Error {
  explicit NoVarianceError(const std::string& w) : Error(ErrorClass::Fit, w) {}
};

struct EmptyClusterError : Error {
  explicit EmptyClusterError(const std::string& w) : Error(ErrorClass::Fit, w) {}
};

// A cluster fell below the minimum size during iterative reassignment.
struct ClusterCollapseError : Error {
  explicit ClusterCollapseError(const std::string& w) : Error(ErrorClass::Fit, w) {}
};

struct IntervalError : Error {
  explicit IntervalError(const std::string& w) : Error(ErrorClass::Predict, w) {}
};

struct StudyError : Error {
  explicit StudyError(const std::string& w) : Error(ErrorClass::Fit, w) {}
};

}  // namespace fmpred
