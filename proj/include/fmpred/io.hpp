#pragma once

// Curve CSV ingestion, pipeline configuration, model artifacts and the tidy
// CSV writers used by the command-line tool.

#include <Eigen/Dense>
#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fmpred/clustering.hpp"
#include "fmpred/errors.hpp"
#include "fmpred/eval.hpp"
#include "fmpred/grid.hpp"
#include "fmpred/mixture.hpp"
#include "fmpred/predict.hpp"
#include "fmpred/simulate.hpp"

namespace fmpred {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Number formatting

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

inline std::string hex_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

inline double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw IngestionError("artifact: malformed number '" + s + "'");
  return x;
}

// ---------------------------------------------------------------------------
// Curve CSV

struct IngestResult {
  CurveSet curves;
  std::optional<std::vector<int>> labels;  // 0-based; present when the file has a label column
  std::vector<std::string> rejected;       // one message per dropped day
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i)
    if (i == line.size() || line[i] == ',') {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  return out;
}

inline double parse_number(std::string_view s, std::size_t row, const char* column) {
  double x = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(x))
    throw IngestionError("row " + std::to_string(row) + ": " + column + " '" + std::string(s) + "' is not a number");
  return x;
}

}  // namespace detail

/// Reads long-format curves: header day_id,time_hours,flow_rate with an
/// optional integer label column (1-based cluster numbers). Row numbers in
/// messages count the header as row 1.
inline IngestResult ingest_csv(std::istream& in) {
  IngestResult res;
  std::string line;
  std::size_t row = 0;
  bool have_header = false;
  int c_day = -1, c_time = -1, c_flow = -1, c_label = -1;
  std::size_t width = 0;

  struct Cell {
    double value;
    std::size_t row;
  };
  struct Day {
    std::string id;
    std::map<double, Cell> cells;
    std::optional<int> label;
    std::size_t label_row = 0;
  };
  std::vector<Day> days;
  std::unordered_map<std::string, std::size_t> day_index;

  while (std::getline(in, line)) {
    ++row;
    std::string_view view(line);
    if (row == 1 && view.size() >= 3 && view.substr(0, 3) == "\xEF\xBB\xBF") view.remove_prefix(3);
    if (detail::trim(view).empty()) continue;
    const auto cells = detail::split_csv(view);
    if (!have_header) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const int ii = static_cast<int>(i);
        if (cells[i] == "day_id") c_day = ii;
        else if (cells[i] == "time_hours") c_time = ii;
        else if (cells[i] == "flow_rate") c_flow = ii;
        else if (cells[i] == "label") c_label = ii;
        else throw IngestionError("row " + std::to_string(row) + ": unknown column '" + std::string(cells[i]) + "'");
      }
      if (c_day < 0 || c_time < 0 || c_flow < 0)
        throw IngestionError("row " + std::to_string(row) + ": header must name day_id, time_hours and flow_rate");
      width = cells.size();
      have_header = true;
      continue;
    }
    if (cells.size() != width)
      throw IngestionError("row " + std::to_string(row) + ": expected " + std::to_string(width) + " cells, found " +
                           std::to_string(cells.size()));
    const std::string id(cells[static_cast<std::size_t>(c_day)]);
    if (id.empty()) throw IngestionError("row " + std::to_string(row) + ": empty day_id");
    const double t = detail::parse_number(cells[static_cast<std::size_t>(c_time)], row, "time_hours");
    const double y = detail::parse_number(cells[static_cast<std::size_t>(c_flow)], row, "flow_rate");
    auto [it, inserted] = day_index.try_emplace(id, days.size());
    if (inserted) days.push_back(Day{id, {}, std::nullopt, 0});
    Day& d = days[it->second];
    if (auto prev = d.cells.find(t); prev != d.cells.end())
      throw IngestionError("row " + std::to_string(row) + ": duplicate reading for day " + id + " at time " +
                           format_double(t) + " (first at row " + std::to_string(prev->second.row) + ")");
    d.cells.emplace(t, Cell{y, row});
    if (c_label >= 0) {
      const double lv = detail::parse_number(cells[static_cast<std::size_t>(c_label)], row, "label");
      if (lv < 1.0 || lv != std::floor(lv))
        throw IngestionError("row " + std::to_string(row) + ": label must be a positive integer");
      const int l = static_cast<int>(lv) - 1;
      if (d.label && *d.label != l)
        throw IngestionError("row " + std::to_string(row) + ": day " + id + " changes label (first set at row " +
                             std::to_string(d.label_row) + ")");
      if (!d.label) {
        d.label = l;
        d.label_row = row;
      }
    }
  }
  if (!have_header) {
    res.warnings.push_back("empty dataset: the file has no header and no rows");
    return res;
  }
  if (days.empty()) {
    res.warnings.push_back("empty dataset: the file has a header but no rows");
    return res;
  }

  // The common grid is every time seen on at least half of the days; a time
  // seen on fewer days is off-grid.
  std::map<double, std::size_t> seen;
  std::map<double, std::size_t> first_row;
  for (const auto& d : days)
    for (const auto& [t, c] : d.cells) {
      ++seen[t];
      auto [fr, ins] = first_row.try_emplace(t, c.row);
      if (!ins) fr->second = std::min(fr->second, c.row);
    }
  std::vector<double> points;
  for (const auto& [t, n] : seen) {
    if (2 * n < days.size())
      throw IngestionError("row " + std::to_string(first_row[t]) + ": time " + format_double(t) +
                           " is not on the common grid (seen on " + std::to_string(n) + " of " +
                           std::to_string(days.size()) + " days)");
    points.push_back(t);
  }
  TimeGrid grid;
  try {
    grid = TimeGrid(points);
  } catch (const ConfigError& e) {
    throw IngestionError(std::string("invalid time grid: ") + e.what());
  }

  std::vector<const Day*> kept;
  for (const auto& d : days) {
    if (d.cells.size() == points.size()) {
      kept.push_back(&d);
      continue;
    }
    std::string missing;
    int shown = 0;
    for (double t : points)
      if (!d.cells.count(t) && shown++ < 5) missing += (missing.empty() ? "" : " ") + format_double(t);
    res.rejected.push_back("day " + d.id + ": missing " + std::to_string(points.size() - d.cells.size()) + " of " +
                           std::to_string(points.size()) + " grid cells (" + missing + (shown > 5 ? " ..." : "") + ")");
  }
  Eigen::MatrixXd values(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(points.size()));
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    Eigen::Index j = 0;
    for (const auto& [t, c] : kept[i]->cells) values(static_cast<Eigen::Index>(i), j++) = c.value;
    ids.push_back(kept[i]->id);
    if (c_label >= 0) labels.push_back(*kept[i]->label);
  }
  res.curves = CurveSet(grid, std::move(values), std::move(ids));
  if (c_label >= 0) res.labels = std::move(labels);
  if (kept.empty()) res.warnings.push_back("empty dataset: every day was rejected");
  return res;
}

inline IngestResult ingest_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path);
  return ingest_csv(in);
}

inline void write_curves_csv(std::ostream& os, const CurveSet& curves,
                             const std::optional<std::vector<int>>& labels = std::nullopt) {
  os << "day_id,time_hours,flow_rate" << (labels ? ",label" : "") << '\n';
  for (std::size_t i = 0; i < curves.size(); ++i)
    for (std::size_t j = 0; j < curves.grid.size(); ++j) {
      os << curves.ids[i] << ',' << format_double(curves.grid[j]) << ','
         << format_double(curves.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      if (labels) os << ',' << (*labels)[i] + 1;
      os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Pipeline configuration

struct PipelineConfig {
  std::optional<int> clusters = 3;  // nullopt selects K by bootstrap tests
  // fpca
  double fve = kDefaultFve;
  int cv_folds = kDefaultCvFolds;
  std::vector<double> bandwidths;  // hours; empty uses the default candidates
  // clustering
  int max_iterations = 50;
  int min_cluster_size = 4;
  int kmeans_restarts = 10;
  double ridge = kDefaultRidge;
  // K selection
  int max_clusters = 3;
  int k_bootstrap = 200;
  double k_level = 0.05;
  Multiplicity multiplicity = Multiplicity::Pairs;
  // prediction
  double tau_start = 8.0;
  double tau_end = 20.0;
  int tau_count = 49;
  bool refit_gamma_per_tau = false;
  int bootstrap_samples = 200;
  double band_level = 0.95;
  bool resample_gamma = false;
  // evaluation
  std::vector<std::optional<double>> omegas = default_omegas();
  std::vector<std::optional<double>> kappas = default_kappas();
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  // simulation
  int replicates = 100;
  std::uint64_t seed = 0;

  bool operator==(const PipelineConfig&) const = default;

  TimeGrid tau_grid() const { return TimeGrid::uniform(tau_start, tau_end, static_cast<std::size_t>(tau_count)); }

  FpcaOptions fpca() const {
    FpcaOptions o;
    o.fve = fve;
    o.cv_folds = cv_folds;
    o.seed = seed;
    o.candidate_bandwidths = bandwidths;
    return o;
  }
  ClusteringOptions clustering(std::size_t jobs = 1) const {
    ClusteringOptions o;
    o.fpca = fpca();
    o.max_iterations = max_iterations;
    o.min_cluster_size = min_cluster_size;
    o.kmeans_restarts = kmeans_restarts;
    o.ridge = ridge;
    o.seed = seed;
    o.jobs = jobs;
    return o;
  }
  MixtureOptions mixture() const {
    MixtureOptions o;
    o.fve = fve;
    o.ridge = ridge;
    o.refit_gamma_per_tau = refit_gamma_per_tau;
    o.resample_gamma = resample_gamma;
    o.beta_cv_folds = cv_folds;
    o.seed = seed;
    return o;
  }
  SelectKOptions select_k(std::size_t jobs = 1) const {
    SelectKOptions o;
    o.max_clusters = max_clusters;
    o.bootstrap_samples = k_bootstrap;
    o.level = k_level;
    o.multiplicity = multiplicity;
    o.seed = seed;
    o.clustering = clustering(jobs);
    return o;
  }
  BootstrapOptions bootstrap(std::size_t jobs = 1) const {
    BootstrapOptions o;
    o.samples = bootstrap_samples;
    o.level = band_level;
    o.seed = seed;
    o.jobs = jobs;
    return o;
  }
  CompareConfig compare(std::size_t jobs = 1) const {
    CompareConfig c;
    c.num_clusters = clusters.value_or(3);
    c.methods = methods;
    c.kappas = kappas;
    c.omegas = omegas;
    c.clustering = clustering(jobs);
    c.mixture = mixture();
    c.tau_grid = tau_grid();
    c.jobs = jobs;
    return c;
  }
  StudyConfig study(std::size_t jobs = 1) const {
    StudyConfig s;
    s.compare = compare(jobs);
    s.replicates = replicates;
    s.seed = seed;
    s.jobs = jobs;
    return s;
  }
};

namespace detail {

inline json window_list_to_json(const std::vector<std::optional<double>>& v, const char* open_end) {
  json a = json::array();
  for (const auto& x : v) a.push_back(x ? json(*x) : json(open_end));
  return a;
}

inline std::vector<std::optional<double>> window_list_from_json(const json& a, const char* open_end,
                                                                const char* key) {
  if (!a.is_array() || a.empty()) throw ConfigError(std::string(key) + " must be a nonempty array");
  std::vector<std::optional<double>> out;
  for (const auto& x : a) {
    if (x.is_string() && x.get<std::string>() == open_end) {
      out.push_back(std::nullopt);
    } else if (x.is_number()) {
      const double v = x.get<double>();
      if (!(v > 0.0)) throw ConfigError(std::string(key) + " entries must be positive");
      out.push_back(v);
    } else {
      throw ConfigError(std::string(key) + " entries must be numbers or \"" + open_end + "\"");
    }
  }
  return out;
}

template <class T>
void read_key(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

}  // namespace detail

inline json config_to_json(const PipelineConfig& c) {
  json j;
  j["clusters"] = c.clusters ? json(*c.clusters) : json("auto");
  j["seed"] = c.seed;
  j["fpca"] = {{"fve", c.fve}, {"cv_folds", c.cv_folds}, {"bandwidths", c.bandwidths}};
  j["clustering"] = {{"max_iterations", c.max_iterations},
                     {"min_cluster_size", c.min_cluster_size},
                     {"kmeans_restarts", c.kmeans_restarts},
                     {"ridge", c.ridge}};
  j["select_k"] = {{"max_clusters", c.max_clusters},
                   {"bootstrap_samples", c.k_bootstrap},
                   {"level", c.k_level},
                   {"multiplicity", c.multiplicity == Multiplicity::Pairs ? "pairs" : "tests"}};
  j["prediction"] = {{"tau_start", c.tau_start},
                     {"tau_end", c.tau_end},
                     {"tau_count", c.tau_count},
                     {"refit_gamma_per_tau", c.refit_gamma_per_tau}};
  j["bootstrap"] = {{"samples", c.bootstrap_samples}, {"level", c.band_level}, {"resample_gamma", c.resample_gamma}};
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(method_name(m));
  j["evaluation"] = {{"omegas", detail::window_list_to_json(c.omegas, "full")},
                     {"kappas", detail::window_list_to_json(c.kappas, "end")},
                     {"methods", methods}};
  j["simulation"] = {{"replicates", c.replicates}};
  return j;
}

inline void validate(const PipelineConfig& c) {
  if (c.clusters && *c.clusters < 1) throw ConfigError("clusters must be at least 1 or \"auto\"");
  if (!(c.fve > 0.0 && c.fve <= 1.0)) throw ConfigError("fve must lie in (0, 1]");
  if (c.cv_folds < 2) throw ConfigError("cv_folds must be at least 2");
  for (double h : c.bandwidths)
    if (!(h > 0.0)) throw ConfigError("bandwidths must be positive");
  if (c.max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  if (c.min_cluster_size < 2) throw ConfigError("min_cluster_size must be at least 2");
  if (c.kmeans_restarts < 1) throw ConfigError("kmeans_restarts must be at least 1");
  if (!(c.ridge >= 0.0)) throw ConfigError("ridge must be nonnegative");
  if (c.max_clusters < 2) throw ConfigError("select_k.max_clusters must be at least 2");
  if (c.k_bootstrap < 50) throw ConfigError("select_k.bootstrap_samples must be at least 50");
  if (!(c.k_level > 0.0 && c.k_level < 1.0)) throw ConfigError("select_k.level must lie in (0, 1)");
  if (c.clusters == std::nullopt) check_bootstrap_size(c.select_k(), c.max_clusters);
  if (c.tau_count < 4 || !(c.tau_end > c.tau_start)) throw ConfigError("tau grid needs tau_end > tau_start and 4+ points");
  if (c.bootstrap_samples < 1) throw ConfigError("bootstrap.samples must be positive");
  if (!(c.band_level > 0.0 && c.band_level < 1.0)) throw ConfigError("bootstrap.level must lie in (0, 1)");
  if (c.methods.empty()) throw ConfigError("evaluation.methods is empty");
  if (c.replicates < 1) throw ConfigError("simulation.replicates must be at least 1");
}

inline PipelineConfig config_from_json(const json& j) {
  using detail::read_key;
  detail::reject_unknown(j, {"clusters", "seed", "fpca", "clustering", "select_k", "prediction", "bootstrap",
                             "evaluation", "simulation"},
                         "");
  PipelineConfig c;
  if (j.contains("clusters")) {
    const json& k = j.at("clusters");
    if (k.is_string() && k.get<std::string>() == "auto") c.clusters = std::nullopt;
    else if (k.is_number_integer()) c.clusters = k.get<int>();
    else throw ConfigError("clusters must be an integer or \"auto\"");
  }
  read_key(j, "seed", c.seed);
  if (j.contains("fpca")) {
    const json& f = j.at("fpca");
    detail::reject_unknown(f, {"fve", "cv_folds", "bandwidths"}, "fpca");
    read_key(f, "fve", c.fve);
    read_key(f, "cv_folds", c.cv_folds);
    read_key(f, "bandwidths", c.bandwidths);
  }
  if (j.contains("clustering")) {
    const json& f = j.at("clustering");
    detail::reject_unknown(f, {"max_iterations", "min_cluster_size", "kmeans_restarts", "ridge"}, "clustering");
    read_key(f, "max_iterations", c.max_iterations);
    read_key(f, "min_cluster_size", c.min_cluster_size);
    read_key(f, "kmeans_restarts", c.kmeans_restarts);
    read_key(f, "ridge", c.ridge);
  }
  if (j.contains("select_k")) {
    const json& f = j.at("select_k");
    detail::reject_unknown(f, {"max_clusters", "bootstrap_samples", "level", "multiplicity"}, "select_k");
    read_key(f, "max_clusters", c.max_clusters);
    read_key(f, "bootstrap_samples", c.k_bootstrap);
    read_key(f, "level", c.k_level);
    if (f.contains("multiplicity")) {
      const std::string m = f.at("multiplicity").is_string() ? f.at("multiplicity").get<std::string>() : "";
      if (m == "pairs") c.multiplicity = Multiplicity::Pairs;
      else if (m == "tests") c.multiplicity = Multiplicity::Tests;
      else throw ConfigError("select_k.multiplicity must be \"pairs\" or \"tests\"");
    }
  }
  if (j.contains("prediction")) {
    const json& f = j.at("prediction");
    detail::reject_unknown(f, {"tau_start", "tau_end", "tau_count", "refit_gamma_per_tau"}, "prediction");
    read_key(f, "tau_start", c.tau_start);
    read_key(f, "tau_end", c.tau_end);
    read_key(f, "tau_count", c.tau_count);
    read_key(f, "refit_gamma_per_tau", c.refit_gamma_per_tau);
  }
  if (j.contains("bootstrap")) {
    const json& f = j.at("bootstrap");
    detail::reject_unknown(f, {"samples", "level", "resample_gamma"}, "bootstrap");
    read_key(f, "samples", c.bootstrap_samples);
    read_key(f, "level", c.band_level);
    read_key(f, "resample_gamma", c.resample_gamma);
  }
  if (j.contains("evaluation")) {
    const json& f = j.at("evaluation");
    detail::reject_unknown(f, {"omegas", "kappas", "methods"}, "evaluation");
    if (f.contains("omegas")) c.omegas = detail::window_list_from_json(f.at("omegas"), "full", "evaluation.omegas");
    if (f.contains("kappas")) c.kappas = detail::window_list_from_json(f.at("kappas"), "end", "evaluation.kappas");
    if (f.contains("methods")) {
      std::vector<std::string> names;
      read_key(f, "methods", names);
      c.methods.clear();
      for (const auto& n : names) c.methods.push_back(parse_method(n));
    }
  }
  if (j.contains("simulation")) {
    const json& f = j.at("simulation");
    detail::reject_unknown(f, {"replicates"}, "simulation");
    read_key(f, "replicates", c.replicates);
  }
  validate(c);
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const PipelineConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_to_json(c).dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Model artifact

inline constexpr const char* kArtifactVersion = "fmpred-artifact/1";

namespace detail {

inline json enc(double x) { return hex_double(x); }

inline double dec(const json& j) {
  if (!j.is_string()) throw IngestionError("artifact: expected a hex-float string");
  return parse_hex_double(j.get<std::string>());
}

inline json enc(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(hex_double(v[i]));
  return a;
}

inline Eigen::VectorXd dec_vector(const json& a) {
  if (!a.is_array()) throw IngestionError("artifact: expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = dec(a[i]);
  return v;
}

inline json enc(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(hex_double(m(r, c)));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Eigen::MatrixXd dec_matrix(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols))
    throw IngestionError("artifact: matrix size does not match its data");
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dec(data[k++]);
  return m;
}

inline json enc(const TimeGrid& g) {
  const Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(g.points().data(), static_cast<Eigen::Index>(g.size()));
  return {{"points", enc(p)}, {"horizon", enc(g.horizon())}};
}

inline TimeGrid dec_grid(const json& j) {
  const Eigen::VectorXd p = dec_vector(j.at("points"));
  return TimeGrid(std::vector<double>(p.data(), p.data() + p.size()), dec(j.at("horizon")));
}

inline json enc(const ClusterModel& m) {
  return {{"label", m.label},
          {"grid", enc(m.grid)},
          {"mean", enc(m.mean)},
          {"eigenvalues", enc(m.eigenvalues)},
          {"eigenfunctions", enc(m.eigenfunctions)},
          {"num_components", m.num_components},
          {"noise_variance", enc(m.noise_variance)},
          {"noise_clamped", m.noise_clamped},
          {"covariance", enc(m.covariance)},
          {"mean_bandwidth", enc(m.mean_bandwidth)},
          {"cov_bandwidth", enc(m.cov_bandwidth)},
          {"num_curves", m.num_curves}};
}

inline ClusterModel dec_cluster(const json& j) {
  ClusterModel m;
  m.label = j.at("label").get<int>();
  m.grid = dec_grid(j.at("grid"));
  m.mean = dec_vector(j.at("mean"));
  m.eigenvalues = dec_vector(j.at("eigenvalues"));
  m.eigenfunctions = dec_matrix(j.at("eigenfunctions"));
  m.num_components = j.at("num_components").get<int>();
  m.noise_variance = dec(j.at("noise_variance"));
  m.noise_clamped = j.at("noise_clamped").get<bool>();
  m.covariance = dec_matrix(j.at("covariance"));
  m.mean_bandwidth = dec(j.at("mean_bandwidth"));
  m.cov_bandwidth = dec(j.at("cov_bandwidth"));
  m.num_curves = j.at("num_curves").get<int>();
  const auto n = static_cast<Eigen::Index>(m.grid.size());
  if (m.mean.size() != n || m.eigenfunctions.rows() != n || m.eigenfunctions.cols() != m.eigenvalues.size() ||
      m.covariance.rows() != n || m.covariance.cols() != n || m.num_components < 0 ||
      m.num_components > m.eigenvalues.size())
    throw IngestionError("artifact: cluster model dimensions are inconsistent");
  return m;
}

inline json enc(const BetaPath& p) {
  json raw = json::array(), smoothed = json::array();
  for (const auto& b : p.raw) raw.push_back(enc(b));
  for (const auto& b : p.smoothed) smoothed.push_back(enc(b));
  return {{"raw", raw},
          {"smoothed", smoothed},
          {"observed_orientation", enc(p.observed_orientation)},
          {"future_orientation", enc(p.future_orientation)},
          {"bandwidth", enc(p.bandwidth)},
          {"observed_components", p.observed_components},
          {"future_components", p.future_components},
          {"near_singular", p.near_singular}};
}

inline BetaPath dec_beta(const json& j) {
  BetaPath p;
  for (const auto& b : j.at("raw")) p.raw.push_back(dec_matrix(b));
  for (const auto& b : j.at("smoothed")) p.smoothed.push_back(dec_matrix(b));
  p.observed_orientation = dec_matrix(j.at("observed_orientation"));
  p.future_orientation = dec_matrix(j.at("future_orientation"));
  p.bandwidth = dec_matrix(j.at("bandwidth"));
  p.observed_components = j.at("observed_components").get<std::vector<int>>();
  p.future_components = j.at("future_components").get<std::vector<int>>();
  p.near_singular = j.at("near_singular").get<bool>();
  return p;
}

}  // namespace detail

struct ModelArtifact {
  MixtureModel model;
  PipelineConfig config;
  json metadata = json::object();  // seed, config hash, fit diagnostics
};

inline json artifact_to_json(const ModelArtifact& a) {
  using detail::enc;
  const MixtureModel& m = a.model;
  json clusters = json::array();
  for (const auto& c : m.clusters) clusters.push_back(enc(c));
  json betas = json::array();
  for (const auto& p : m.betas.clusters) betas.push_back(enc(p));
  json j;
  j["version"] = kArtifactVersion;
  j["config"] = config_to_json(a.config);
  j["metadata"] = a.metadata;
  j["model"] = {
      {"clusters", clusters},
      {"gamma",
       {{"gamma", enc(m.gamma.gamma)},
        {"iterations", m.gamma.iterations},
        {"converged", m.gamma.converged},
        {"separated", m.gamma.separated}}},
      {"tau_grid", enc(m.tau_grid)},
      {"betas",
       {{"tau_grid", enc(m.betas.tau_grid)},
        {"omega", m.betas.omega ? enc(*m.betas.omega) : json(nullptr)},
        {"clusters", betas}}},
      {"training", {{"grid", enc(m.training.grid)}, {"values", enc(m.training.values)}, {"ids", m.training.ids}}},
      {"labels", m.labels},
      {"options",
       {{"fve", enc(m.options.fve)},
        {"ridge", enc(m.options.ridge)},
        {"refit_gamma_per_tau", m.options.refit_gamma_per_tau},
        {"resample_gamma", m.options.resample_gamma},
        {"beta_cv_folds", m.options.beta_cv_folds},
        {"seed", m.options.seed}}}};
  return j;
}

inline ModelArtifact artifact_from_json(const json& j) {
  using namespace detail;
  if (!j.is_object() || !j.contains("version")) throw IngestionError("artifact: missing version");
  if (j.at("version") != kArtifactVersion)
    throw IngestionError("artifact: unsupported version " + j.at("version").dump());
  ModelArtifact a;
  try {
    a.config = config_from_json(j.at("config"));
    a.metadata = j.at("metadata");
    const json& mj = j.at("model");
    MixtureModel& m = a.model;
    for (const auto& c : mj.at("clusters")) m.clusters.push_back(dec_cluster(c));
    if (m.clusters.empty()) throw IngestionError("artifact: no clusters");
    const json& g = mj.at("gamma");
    m.gamma.gamma = dec_matrix(g.at("gamma"));
    m.gamma.iterations = g.at("iterations").get<int>();
    m.gamma.converged = g.at("converged").get<bool>();
    m.gamma.separated = g.at("separated").get<bool>();
    m.tau_grid = dec_grid(mj.at("tau_grid"));
    const json& b = mj.at("betas");
    m.betas.tau_grid = dec_grid(b.at("tau_grid"));
    if (!b.at("omega").is_null()) m.betas.omega = dec(b.at("omega"));
    for (const auto& p : b.at("clusters")) m.betas.clusters.push_back(dec_beta(p));
    const json& t = mj.at("training");
    m.training = CurveSet(dec_grid(t.at("grid")), dec_matrix(t.at("values")), t.at("ids").get<std::vector<std::string>>());
    m.labels = mj.at("labels").get<std::vector<int>>();
    const json& o = mj.at("options");
    m.options.fve = dec(o.at("fve"));
    m.options.ridge = dec(o.at("ridge"));
    m.options.refit_gamma_per_tau = o.at("refit_gamma_per_tau").get<bool>();
    m.options.resample_gamma = o.at("resample_gamma").get<bool>();
    m.options.beta_cv_folds = o.at("beta_cv_folds").get<int>();
    m.options.seed = o.at("seed").get<std::uint64_t>();
    const std::size_t k = m.clusters.size();
    if (m.labels.size() != m.training.size() || m.betas.clusters.size() != k ||
        (k > 1 && m.gamma.gamma.rows() + 1 != static_cast<Eigen::Index>(k)))
      throw IngestionError("artifact: model parts disagree on sizes");
    for (const auto& c : m.clusters) require_same_grid(c.grid, m.training.grid, "artifact cluster vs training data");
  } catch (const json::exception& e) {
    throw IngestionError(std::string("artifact: ") + e.what());
  } catch (const ConfigError& e) {
    throw IngestionError(std::string("artifact: ") + e.what());
  }
  return a;
}

inline void save_artifact(const ModelArtifact& a, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << artifact_to_json(a).dump(1) << '\n';
}

inline ModelArtifact load_artifact(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open artifact " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw IngestionError("artifact " + path + ": " + e.what());
  }
  return artifact_from_json(j);
}

// ---------------------------------------------------------------------------
// Output CSVs (fixed column orders)

/// t, prediction, cluster_1..cluster_K[, lower, upper]
inline void write_prediction_csv(std::ostream& os, const Prediction& p) {
  os << "t,prediction";
  for (std::size_t c = 0; c < p.per_cluster.size(); ++c) os << ",cluster_" << c + 1;
  if (p.lower) os << ",lower,upper";
  os << '\n';
  for (std::size_t i = 0; i < p.future_grid.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    os << format_double(p.future_grid[i]) << ',' << format_double(p.mixture[ii]);
    for (const auto& c : p.per_cluster) os << ',' << format_double(c[ii]);
    if (p.lower) os << ',' << format_double((*p.lower)[ii]) << ',' << format_double((*p.upper)[ii]);
    os << '\n';
  }
}

/// tau, p_1..p_K
inline void write_posterior_csv(std::ostream& os, const std::vector<double>& taus,
                                const std::vector<Eigen::VectorXd>& posteriors) {
  os << "tau";
  const std::size_t k = posteriors.empty() ? 0 : static_cast<std::size_t>(posteriors.front().size());
  for (std::size_t c = 0; c < k; ++c) os << ",p_" << c + 1;
  os << '\n';
  for (std::size_t q = 0; q < taus.size(); ++q) {
    os << format_double(taus[q]);
    for (Eigen::Index c = 0; c < posteriors[q].size(); ++c) os << ',' << format_double(posteriors[q][c]);
    os << '\n';
  }
}

inline std::string window_label(const std::optional<double>& w, const char* open_end) {
  return w ? format_double(*w) : std::string(open_end);
}

/// method, kappa, omega, tmipe, se
inline void write_method_table_csv(std::ostream& os, const MethodTable& t) {
  os << "method,kappa,omega,tmipe,se\n";
  for (std::size_t m = 0; m < t.methods.size(); ++m)
    for (std::size_t k = 0; k < t.kappas.size(); ++k)
      for (std::size_t o = 0; o < t.omegas.size(); ++o)
        os << method_name(t.methods[m]) << ',' << window_label(t.kappas[k], "end") << ','
           << window_label(t.omegas[o], "full") << ',' << format_double(t.at(m, k, o)) << ','
           << format_double(t.se(m, k, o)) << '\n';
}

/// K, pair, mean_stat, subspace_stat, H01_rate, H02_rate, H01_pvalue,
/// H02_pvalue, reject_H01, reject_H02, adjusted_level, accepted
inline void write_select_k_csv(std::ostream& os, const SelectKResult& r) {
  os << "K,pair,mean_stat,subspace_stat,H01_rate,H02_rate,H01_pvalue,H02_pvalue,reject_H01,reject_H02,"
        "adjusted_level,accepted\n";
  for (const auto& t : r.tests) {
    if (t.pairs.empty()) {
      os << t.k << ",,,,,,,,,," << format_double(t.adjusted_level) << ',' << (t.accepted ? 1 : 0) << '\n';
      continue;
    }
    for (const auto& p : t.pairs)
      os << t.k << ',' << p.c + 1 << " vs " << p.d + 1 << ',' << format_double(p.mean_stat) << ','
         << format_double(p.subspace_stat) << ',' << format_double(p.h01_rate) << ',' << format_double(p.h02_rate)
         << ',' << format_double(p.h01_pvalue) << ',' << format_double(p.h02_pvalue) << ','
         << (p.reject_h01 ? 1 : 0) << ',' << (p.reject_h02 ? 1 : 0) << ',' << format_double(t.adjusted_level)
         << ',' << (t.accepted ? 1 : 0) << '\n';
  }
}

/// metric, index, value, se
inline void write_study_csv(std::ostream& os, const StudyReport& r) {
  os << "metric,index,value,se\n";
  os << "replicates,," << r.replicates << ",\n";
  os << "failures,," << r.failures << ",\n";
  os << "clustering_error,," << format_double(r.clustering_error) << ',' << format_double(r.clustering_error_se)
     << '\n';
  for (std::size_t c = 0; c < r.cluster_errors.size(); ++c)
    os << "cluster_error," << c + 1 << ',' << format_double(r.cluster_errors[c]) << ",\n";
  for (std::size_t q = 0; q < r.classification_error.size(); ++q)
    os << "classification_error," << format_double(r.tau_grid[q]) << ',' << format_double(r.classification_error[q])
       << ',' << format_double(r.classification_error_se[q]) << '\n';
}

inline json run_metadata(const std::string& command, const PipelineConfig& c) {
  return {{"command", command}, {"seed", c.seed}, {"config_hash", config_hash(c)}, {"artifact_version", kArtifactVersion}};
}

}  // namespace fmpred
