// fmpred: ingest, train, predict, evaluate, simulate and select-k.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fmpred/fmpred.hpp"

namespace fs = std::filesystem;
using namespace fmpred;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kIngestion = 3, kFit = 4, kPredict = 5 };

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON pipeline configuration");
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--jobs", c.jobs, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory");
}

PipelineConfig resolve_config(const Common& c) {
  PipelineConfig cfg = c.config_path.empty() ? PipelineConfig{} : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  validate(cfg);
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError("cannot create output directory " + c.out + ": " + ec.message());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw ConfigError("cannot write " + p.string());
  return f;
}

void write_json(const fs::path& p, const json& j) { open_out(p) << j.dump(1) << '\n'; }

IngestResult load_curves(const std::string& path) {
  IngestResult r = ingest_csv_file(path);
  for (const auto& w : r.warnings) std::cerr << "warning: " << path << ": " << w << '\n';
  for (const auto& m : r.rejected) std::cerr << "rejected: " << m << '\n';
  return r;
}

IngestResult load_nonempty(const std::string& path) {
  IngestResult r = load_curves(path);
  if (r.curves.size() == 0) throw IngestionError(path + ": no usable curves");
  return r;
}

std::string safe_name(const std::string& id) {
  std::string s;
  for (char ch : id) s += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_') ? ch : '_';
  return s;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const std::string& input, const Common& c) {
  const IngestResult r = load_curves(input);
  const fs::path dir = out_dir(c);
  auto f = open_out(dir / "curves.csv");
  write_curves_csv(f, r.curves, r.labels);
  std::cout << "curves " << r.curves.size() << " length " << r.curves.grid.size() << " rejected " << r.rejected.size()
            << '\n';
  return kOk;
}

int cmd_train(const std::string& data, const std::string& clusters, const Common& c) {
  PipelineConfig cfg = resolve_config(c);
  if (!clusters.empty()) {
    if (clusters == "auto") {
      cfg.clusters = std::nullopt;
    } else {
      try {
        cfg.clusters = std::stoi(clusters);
      } catch (const std::exception&) {
        throw ConfigError("--clusters must be an integer or auto");
      }
    }
    validate(cfg);
  }
  const IngestResult in = load_nonempty(data);
  const fs::path dir = out_dir(c);

  json meta = run_metadata("train", cfg);
  int k = cfg.clusters.value_or(0);
  if (!cfg.clusters) {
    const SelectKResult sel = select_num_clusters(in.curves, cfg.select_k(c.jobs));
    auto f = open_out(dir / "select_k.csv");
    write_select_k_csv(f, sel);
    k = sel.k;
    meta["selected_k"] = k;
  }
  ClusteringResult cr = fit_clusters(in.curves, k, cfg.clustering(c.jobs));
  meta["clustering_iterations"] = cr.iterations;
  meta["clustering_converged"] = cr.converged;
  if (in.labels) meta["true_labels"] = *in.labels;

  ModelArtifact art;
  art.model = assemble_mixture(in.curves, std::move(cr), cfg.mixture(), cfg.tau_grid());
  art.config = cfg;
  art.metadata = meta;
  save_artifact(art, (dir / "model.json").string());

  auto lf = open_out(dir / "labels.csv");
  lf << "day_id,cluster\n";
  for (std::size_t i = 0; i < in.curves.size(); ++i) lf << in.curves.ids[i] << ',' << art.model.labels[i] + 1 << '\n';
  write_json(dir / "run.json", meta);
  std::cout << "K " << k << " curves " << in.curves.size() << '\n';
  return kOk;
}

// Values of the partial curve on the model's observed window for prediction
// time q; the partial curve must sit on the model grid.
Eigen::VectorXd window_values(const CurveSet& partial, std::size_t row, const MixturePredictor& pred, std::size_t q) {
  const TimeGrid& g = pred.model().grid();
  const WindowSpan w = pred.window(q);
  Eigen::VectorXd out(static_cast<Eigen::Index>(w.last - w.first + 1));
  for (std::size_t i = w.first; i <= w.last; ++i) {
    const auto j = partial.grid.index_of(g[i]);
    if (!j) throw GridMismatchError("partial curve has no reading at t=" + format_double(g[i]) + " inside the observed window");
    out[static_cast<Eigen::Index>(i - w.first)] = partial.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(*j));
  }
  return out;
}

int cmd_predict(const std::string& model_path, const std::string& input, std::optional<double> tau,
                std::optional<double> omega, const std::string& mode, std::optional<double> bands, const Common& c) {
  if (mode != "soft" && mode != "hard" && mode != "fpcp") throw ConfigError("--mode must be soft, hard or fpcp");
  if (mode == "fpcp" && bands) throw ConfigError("--bands is not available with --mode fpcp");
  const ModelArtifact art = load_artifact(model_path);
  PipelineConfig cfg = art.config;
  if (!c.config_path.empty()) cfg = load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  const IngestResult in = load_nonempty(input);
  for (double t : in.curves.grid.points())
    if (!art.model.grid().index_of(t)) throw GridMismatchError("partial curve time " + format_double(t) + " is not on the model grid");
  const double tq = tau.value_or(in.curves.grid.back());
  const TimeGrid& tg = art.model.tau_grid;
  if (tq < tg.front() - 1e-9) throw DomainError("tau=" + format_double(tq) + " is before the first prediction time " + format_double(tg.front()));
  if (tq > in.curves.grid.back() + 1e-9) throw DomainError("tau=" + format_double(tq) + " is after the last observed time");

  auto model = std::make_shared<const MixtureModel>(art.model);
  const MixturePredictor pred(model, omega, c.jobs);
  const std::size_t q = pred.tau_position(tq);
  const MixtureMode mm = mode == "hard" ? MixtureMode::Hard : MixtureMode::Soft;
  const fs::path dir = out_dir(c);
  const bool many = in.curves.size() > 1;

  for (std::size_t r = 0; r < in.curves.size(); ++r) {
    const Eigen::VectorXd obs = window_values(in.curves, r, pred, q);
    Prediction p;
    if (mode == "fpcp") {
      p = pred.predict_fpcp(obs, q, MixtureMode::Soft);
      if (p.ridge_applied) std::cerr << "note: FPCP system needed a ridge for day " << in.curves.ids[r] << '\n';
    } else if (bands) {
      BootstrapOptions bo = cfg.bootstrap(c.jobs);
      bo.level = *bands;
      bo.mode = mm;
      p = pred.bootstrap_interval(obs, q, bo);
    } else {
      p = pred.predict(obs, q, mm);
    }
    const std::string suffix = many ? "_" + safe_name(in.curves.ids[r]) : "";
    auto pf = open_out(dir / ("prediction" + suffix + ".csv"));
    write_prediction_csv(pf, p);

    // Posterior trace over the prediction times up to tau.
    std::vector<double> taus;
    std::vector<Eigen::VectorXd> posts;
    for (std::size_t s = 0; s <= q; ++s) {
      try {
        posts.push_back(pred.posterior(window_values(in.curves, r, pred, s), s));
        taus.push_back(tg[s]);
      } catch (const GridMismatchError&) {
        // window starts before the partial curve
      }
    }
    auto tf = open_out(dir / ("posterior" + suffix + ".csv"));
    write_posterior_csv(tf, taus, posts);
  }
  json meta = run_metadata("predict", cfg);
  meta["tau"] = tg[q];
  meta["omega"] = omega ? json(*omega) : json("full");
  meta["mode"] = mode;
  if (bands) meta["bands"] = *bands;
  write_json(dir / "run.json", meta);
  return kOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& data, std::optional<double> omega,
                 std::optional<double> kappa, const Common& c) {
  const ModelArtifact art = load_artifact(model_path);
  PipelineConfig cfg = c.config_path.empty() ? art.config : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (omega) cfg.omegas = {*omega};
  if (kappa) cfg.kappas = {*kappa};
  const IngestResult test = load_nonempty(data);
  require_same_grid(test.curves.grid, art.model.grid(), "test data vs model");

  CompareConfig cc = cfg.compare(c.jobs);
  cc.num_clusters = art.model.num_clusters();
  cc.tau_grid = art.model.tau_grid;
  ComparisonModels models;
  models.mixture = std::make_shared<const MixtureModel>(art.model);
  std::optional<std::vector<int>> train_labels;
  if (art.metadata.contains("true_labels")) train_labels = art.metadata.at("true_labels").get<std::vector<int>>();
  if (needs(cc.methods, {Method::FMP_S_Oracle}) && (!train_labels || !test.labels)) {
    std::cerr << "note: FMP_S* skipped; it needs labels in both the training and test files\n";
    std::erase(cc.methods, Method::FMP_S_Oracle);
  }
  const MethodTable t = compare_methods(art.model.training, train_labels, test.curves, test.labels, cc, models);
  const fs::path dir = out_dir(c);
  auto f = open_out(dir / "methods.csv");
  write_method_table_csv(f, t);
  json meta = run_metadata("evaluate", cfg);
  meta["failed_predictions"] = t.failed_predictions;
  write_json(dir / "run.json", meta);
  return kOk;
}

int cmd_simulate(bool emit_data, std::optional<int> replicates, const Common& c) {
  PipelineConfig cfg = resolve_config(c);
  if (replicates) cfg.replicates = *replicates;
  validate(cfg);
  SimulationConfig sim = default_simulation_config();
  sim.seed = cfg.seed;
  sim.replicates = cfg.replicates;
  const fs::path dir = out_dir(c);
  if (emit_data) {
    const Dataset d = generate_dataset(sim, cfg.seed);
    auto tr = open_out(dir / "train.csv");
    write_curves_csv(tr, d.train, d.train_labels);
    auto te = open_out(dir / "test.csv");
    write_curves_csv(te, d.test, d.test_labels);
    std::cout << "train " << d.train.size() << " test " << d.test.size() << '\n';
    return kOk;
  }
  StudyConfig sc = cfg.study(c.jobs);
  const StudyReport rep = run_study(sim, sc);
  auto sf = open_out(dir / "study_summary.csv");
  write_study_csv(sf, rep);
  if (rep.table) {
    auto mf = open_out(dir / "study_methods.csv");
    write_method_table_csv(mf, *rep.table);
  }
  json meta = run_metadata("simulate", cfg);
  meta["failures"] = rep.failures;
  meta["failure_messages"] = rep.failure_messages;
  write_json(dir / "run.json", meta);
  std::cout << "replicates " << rep.replicates << " failures " << rep.failures << " clustering_error "
            << format_double(rep.clustering_error) << '\n';
  return kOk;
}

int cmd_select_k(const std::string& data, const Common& c) {
  const PipelineConfig cfg = resolve_config(c);
  const IngestResult in = load_nonempty(data);
  const SelectKResult sel = select_num_clusters(in.curves, cfg.select_k(c.jobs));
  const fs::path dir = out_dir(c);
  auto f = open_out(dir / "select_k.csv");
  write_select_k_csv(f, sel);
  json meta = run_metadata("select-k", cfg);
  meta["selected_k"] = sel.k;
  write_json(dir / "run.json", meta);
  std::cout << "K " << sel.k << '\n';
  return kOk;
}

int exit_code(const Error& e) {
  switch (e.error_class()) {
    case ErrorClass::Config: return kConfig;
    case ErrorClass::Ingestion: return kIngestion;
    case ErrorClass::Fit: return kFit;
    case ErrorClass::Predict: return kPredict;
  }
  return kOther;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional mixture prediction of daily flow curves"};
  app.require_subcommand(1);

  Common common;
  std::string input, data, model_path, clusters, mode = "soft";
  std::optional<double> tau, omega, bands;
  std::optional<int> replicates;
  bool emit_data = false;

  auto* ingest = app.add_subcommand("ingest", "validate a curve CSV and write the cleaned curves");
  ingest->add_option("--input", input, "curve CSV")->required();
  add_common(ingest, common);

  auto* train = app.add_subcommand("train", "fit clusters, logit and regression coefficients");
  train->add_option("--data", data, "training curve CSV")->required();
  train->add_option("--clusters", clusters, "number of clusters or auto (overrides the config)");
  add_common(train, common);

  auto* predict = app.add_subcommand("predict", "predict the rest of a partially observed day");
  predict->add_option("--model", model_path, "model.json from train")->required();
  predict->add_option("--input", input, "partial curve CSV")->required();
  predict->add_option("--tau", tau, "current time in hours (default: last observed time)");
  predict->add_option("--omega", omega, "observed window length in hours (default: full past)")->check(CLI::PositiveNumber);
  predict->add_option("--mode", mode, "soft, hard or fpcp");
  predict->add_option("--bands", bands, "bootstrap band level, e.g. 0.95")->check(CLI::Range(0.0, 1.0));
  add_common(predict, common);

  auto* evaluate = app.add_subcommand("evaluate", "TMIPE table of every method on test curves");
  evaluate->add_option("--model", model_path, "model.json from train")->required();
  evaluate->add_option("--data", data, "test curve CSV")->required();
  std::optional<double> kappa_flag;
  evaluate->add_option("--omega", omega, "evaluate a single observed window length")->check(CLI::PositiveNumber);
  evaluate->add_option("--kappa", kappa_flag, "evaluate a single future window length")->check(CLI::PositiveNumber);
  add_common(evaluate, common);

  auto* simulate = app.add_subcommand("simulate", "replicate study on the three-pattern generator");
  simulate->add_flag("--emit-data", emit_data, "write one train/test dataset instead of running the study");
  simulate->add_option("--replicates", replicates, "number of replicates (overrides the config)")->check(CLI::PositiveNumber);
  add_common(simulate, common);

  auto* selectk = app.add_subcommand("select-k", "bootstrap tests for the number of clusters");
  selectk->add_option("--data", data, "curve CSV")->required();
  add_common(selectk, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*ingest) return cmd_ingest(input, common);
    if (*train) return cmd_train(data, clusters, common);
    if (*predict) return cmd_predict(model_path, input, tau, omega, mode, bands, common);
    if (*evaluate) return cmd_evaluate(model_path, data, omega, kappa_flag, common);
    if (*simulate) return cmd_simulate(emit_data, replicates, common);
    if (*selectk) return cmd_select_k(data, common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
