// Command-line surface: fit estimators on CSV data, run simulation
// scenarios, and report version information.
#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cencov/estimators.hpp"
#include "cencov/inference.hpp"
#include "cencov/simulation.hpp"

namespace {

using nlohmann::json;
using namespace cencov;

constexpr const char* kVersion = "1.0.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------- small JSON helpers ----------

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

VectorXd to_vector(const json& j) {
  VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

MatrixXd to_matrix(const json& j) {
  const int r = static_cast<int>(j.size());
  if (r == 0) return MatrixXd(0, 0);
  const int c = static_cast<int>(j[0].size());
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    if (static_cast<int>(j[i].size()) != c)
      throw ConfigError("ragged matrix rows in JSON");
    for (int k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

json from_vector(const VectorXd& v) {
  json j = json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v(i));
  return j;
}

json from_matrix(const MatrixXd& m) {
  json j = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    j.push_back(row);
  }
  return j;
}

// ---------- enum parsing ----------

template <typename T>
T parse_enum(const std::string& v,
             std::initializer_list<std::pair<const char*, T>> table,
             const std::string& what) {
  for (const auto& [name, val] : table)
    if (v == name) return val;
  std::string allowed;
  for (const auto& [name, val] : table) {
    if (!allowed.empty()) allowed += ", ";
    allowed += name;
  }
  throw ConfigError("unknown " + what + " '" + v + "' (expected one of: " +
                    allowed + ")");
}

EstimatorKind parse_kind(const std::string& v) {
  return parse_enum<EstimatorKind>(v,
                                   {{"cc", EstimatorKind::CC},
                                    {"ipw", EstimatorKind::IPW},
                                    {"mle", EstimatorKind::MLE},
                                    {"acc", EstimatorKind::ACC},
                                    {"macc", EstimatorKind::MACC},
                                    {"aipw", EstimatorKind::AIPW}},
                                   "estimator kind");
}

Problem parse_problem(const std::string& v) {
  return parse_enum<Problem>(
      v, {{"censored", Problem::Censored}, {"missing", Problem::Missing}},
      "problem");
}

Dependence parse_dependence(const std::string& v) {
  return parse_enum<Dependence>(v,
                                {{"independent", Dependence::Independent},
                                 {"dependent", Dependence::Dependent}},
                                "dependence");
}

PsiMode parse_psi(const std::string& v) {
  return parse_enum<PsiMode>(
      v, {{"closed", PsiMode::Closed}, {"effective", PsiMode::Effective}},
      "psi_mode");
}

LambdaMode parse_lambda(const std::string& v) {
  return parse_enum<LambdaMode>(
      v,
      {{"none", LambdaMode::None},
       {"plain", LambdaMode::Plain},
       {"nuisance_adjusted", LambdaMode::NuisanceAdjusted}},
      "lambda_mode");
}

ProbabilitySource parse_source(const std::string& v) {
  return parse_enum<ProbabilitySource>(
      v,
      {{"analytic", ProbabilitySource::Analytic},
       {"logistic", ProbabilitySource::Logistic},
       {"injected", ProbabilitySource::Injected}},
      "probability_source");
}

DataView parse_view(const std::string& v) {
  return parse_enum<DataView>(v,
                              {{"as_is", DataView::AsIs},
                               {"oracle", DataView::Oracle},
                               {"naive", DataView::Naive}},
                              "view");
}

MeanSpec parse_mean(const json& j) {
  MeanSpec m;
  m.form = parse_enum<MeanForm>(
      get_or<std::string>(j, "form", "linear_x"),
      {{"linear_x", MeanForm::LinearX},
       {"time_to_event", MeanForm::TimeToEvent}},
      "mean form");
  m.age_column = get_or<int>(j, "age_column", 0);
  return m;
}

Theta parse_theta(const json& j) {
  Theta t;
  t.beta = to_vector(j.at("beta"));
  t.sigma = j.at("sigma").get<double>();
  return t;
}

GaussianConditional parse_conditional(const json& j) {
  GaussianConditional g;
  g.intercept = j.at("intercept").get<double>();
  g.slopes = to_vector(j.at("slopes"));
  g.sd = j.at("sd").get<double>();
  return g;
}

EstimatorSpec parse_estimator(const json& j) {
  EstimatorSpec e;
  e.kind = parse_kind(j.at("kind").get<std::string>());
  if (j.contains("problem"))
    e.problem = parse_problem(j.at("problem").get<std::string>());
  e.dependence =
      parse_dependence(get_or<std::string>(j, "dependence", "independent"));
  e.psi_mode = parse_psi(get_or<std::string>(j, "psi_mode", "closed"));
  e.lambda_mode = parse_lambda(get_or<std::string>(j, "lambda_mode", "none"));
  e.probability_source =
      parse_source(get_or<std::string>(j, "probability_source", "analytic"));
  e.weight_by_pi_yz = get_or<bool>(j, "weight_by_pi_yz", false);
  e.quad_nodes = get_or<int>(j, "quad_nodes", 60);
  return e;
}

NuisanceBundle parse_bundle(const json& j, Dependence dep) {
  NuisanceBundle b;
  b.dependence = dep;
  if (j.contains("x_given_z")) b.x_given_z = parse_conditional(j.at("x_given_z"));
  if (j.contains("c_cond")) b.c_cond = parse_conditional(j.at("c_cond"));
  if (j.contains("x_given_cz"))
    b.x_given_cz = parse_conditional(j.at("x_given_cz"));
  if (j.contains("theta_for_pi")) b.theta_for_pi = parse_theta(j.at("theta_for_pi"));
  if (j.contains("kappa")) b.kappa = to_vector(j.at("kappa"));
  if (j.contains("x_dist_for_mle"))
    b.x_dist_for_mle = parse_conditional(j.at("x_dist_for_mle"));
  return b;
}

// ---------- CSV ----------

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && rows.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw ConfigError(path + ": empty CSV");
  return rows;
}

int column_index(const std::vector<std::string>& header,
                 const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw ConfigError("column '" + name + "' not found in CSV header");
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    if (!std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("non-numeric value '" + s + "' in column " + what);
  }
}

// ---------- fit command ----------

int cmd_fit(const std::string& config_path) {
  const json cfg = load_json(config_path);
  const std::string input = cfg.at("input").get<std::string>();
  const std::string output = get_or<std::string>(cfg, "output", "fit_result.json");
  const std::uint64_t seed = get_or<std::uint64_t>(cfg, "seed", 0);

  EstimatorSpec spec = parse_estimator(cfg.at("estimator"));
  spec.problem = parse_problem(get_or<std::string>(cfg, "problem", "censored"));
  spec.mean = cfg.contains("mean") ? parse_mean(cfg.at("mean")) : MeanSpec{};
  spec.validate();

  const json cols = cfg.at("columns");
  const auto rows = read_csv(input);
  const auto& header = rows.front();
  const int iy = column_index(header, get_or<std::string>(cols, "y", "y"));
  std::vector<int> iz;
  for (const auto& zn : cols.at("z"))
    iz.push_back(column_index(header, zn.get<std::string>()));
  std::optional<int> ipi;
  if (cols.contains("pi"))
    ipi = column_index(header, cols.at("pi").get<std::string>());

  Dataset data;
  data.problem = spec.problem;
  VectorXd injected(rows.size() - 1);
  const bool censored_layout = spec.problem == Problem::Censored;
  const int iw = censored_layout
                     ? column_index(header, get_or<std::string>(cols, "w", "w"))
                     : column_index(header, get_or<std::string>(cols, "x", "x"));
  const int id =
      censored_layout
          ? column_index(header, get_or<std::string>(cols, "delta", "delta"))
          : column_index(header, get_or<std::string>(cols, "r", "r"));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size())
      throw ConfigError("CSV row " + std::to_string(r) +
                        " has a different number of fields than the header");
    CensoredObservation o;
    o.y = parse_double(row[iy], "y");
    const double dv = parse_double(row[id], censored_layout ? "delta" : "r");
    if (dv != 0.0 && dv != 1.0)
      throw ConfigError("indicator column must be 0 or 1");
    o.delta = static_cast<int>(dv);
    if (censored_layout) {
      o.w = parse_double(row[iw], "w");
    } else {
      if (o.delta == 1)
        o.w = parse_double(row[iw], "x");
      else if (!row[iw].empty())
        throw ConfigError("x must be blank when r = 0 (row " +
                          std::to_string(r) + ")");
      else
        o.w = -std::numeric_limits<double>::infinity();
    }
    o.z.resize(iz.size());
    for (std::size_t k = 0; k < iz.size(); ++k)
      o.z(k) = parse_double(row[iz[k]], "z");
    if (ipi) injected(r - 1) = parse_double(row[*ipi], "pi");
    data.records.push_back(std::move(o));
  }

  NuisanceConfig nc;
  if (cfg.contains("nuisance")) {
    const json& nj = cfg.at("nuisance");
    nc.mode = get_or<std::string>(nj, "mode", "known") == "estimate"
                  ? NuisanceConfig::Mode::Estimate
                  : NuisanceConfig::Mode::Known;
    if (nj.contains("known")) nc.known = parse_bundle(nj.at("known"), spec.dependence);
    nc.known_resid_cov_xc = get_or<double>(nj, "resid_cov_xc", 0.0);
    nc.x_only_from_complete_cases =
        get_or<bool>(nj, "x_only_from_complete_cases", false);
  }
  nc.known.dependence = spec.dependence;
  if (ipi) nc.known.injected_pi = injected;

  FitResult fit = fit_estimator(spec, data, nc);

  const VectorXd est = fit.theta_hat.flat();
  const int p = static_cast<int>(est.size());
  std::vector<std::string> names;
  for (int j = 0; j < p - 1; ++j) names.push_back("beta" + std::to_string(j));
  names.push_back("sigma");
  const auto cis = confidence_intervals(est, fit.se, 0.95);

  json out;
  out["version"] = kVersion;
  out["seed"] = seed;
  out["converged"] = fit.converged;
  out["iterations"] = fit.iterations;
  out["n"] = data.n();
  json coefs = json::array();
  for (int j = 0; j < p; ++j) {
    coefs.push_back({{"name", names[j]},
                     {"estimate", est(j)},
                     {"se", fit.se(j)},
                     {"ci_lower", cis[j].first},
                     {"ci_upper", cis[j].second}});
  }
  out["coefficients"] = coefs;
  out["covariance"] = from_matrix(fit.covariance);
  json diag;
  diag["clamp_events"] = fit.clamp_events;
  if (fit.lambda) diag["lambda"] = from_matrix(*fit.lambda);
  if (fit.se_uncorrected) diag["se_uncorrected"] = from_vector(*fit.se_uncorrected);
  out["diagnostics"] = diag;

  std::ofstream of(output);
  if (!of) throw ConfigError("cannot write " + output);
  of << out.dump(2) << "\n";

  std::cout << "coefficient   estimate        se     95% CI\n";
  for (int j = 0; j < p; ++j) {
    std::ostringstream line;
    line.setf(std::ios::fixed);
    line.precision(6);
    line.width(12);
    line << std::left << names[j] << "  " << est(j) << "  " << fit.se(j)
         << "  [" << cis[j].first << ", " << cis[j].second << "]";
    std::cout << line.str() << "\n";
  }
  if (!fit.converged) {
    std::cerr << "fit did not converge; diagnostics written to " << output
              << "\n";
    return 3;
  }
  std::cout << "result written to " << output << "\n";
  return 0;
}

// ---------- simulate command ----------

Scenario parse_scenario(const json& j) {
  Scenario sc;
  sc.name = get_or<std::string>(j, "name", "scenario");
  sc.n = get_or<int>(j, "n", 1000);
  sc.replications = get_or<int>(j, "replications", 300);
  sc.master_seed = get_or<std::uint64_t>(j, "master_seed", 0);
  sc.theta_true = parse_theta(j.at("theta_true"));
  sc.mean = j.contains("mean") ? parse_mean(j.at("mean")) : MeanSpec{};
  sc.dependence =
      parse_dependence(get_or<std::string>(j, "dependence", "independent"));
  sc.failure_cap = get_or<double>(j, "failure_cap", 0.02);
  if (j.contains("mvn")) {
    sc.mvn_mean = to_vector(j.at("mvn").at("mean"));
    sc.mvn_cov = to_matrix(j.at("mvn").at("cov"));
  }
  if (j.contains("beta_gap")) {
    const json& bj = j.at("beta_gap");
    BetaGapDesign bg;
    bg.x_intercept = get_or<double>(bj, "x_intercept", 0.0);
    bg.x_slope = get_or<double>(bj, "x_slope", 0.5);
    bg.x_sd = get_or<double>(bj, "x_sd", bg.x_sd);
    bg.eta = to_vector(bj.at("eta"));
    sc.beta_gap = bg;
  }
  for (const json& aj : j.at("arms")) {
    ArmSpec a;
    a.label = aj.at("label").get<std::string>();
    a.view = parse_view(get_or<std::string>(aj, "view", "as_is"));
    a.est = parse_estimator(aj.at("estimator"));
    a.est.problem = Problem::Censored;
    a.nuisance_mode =
        get_or<std::string>(aj, "nuisance_mode", "known") == "estimate"
            ? NuisanceConfig::Mode::Estimate
            : NuisanceConfig::Mode::Known;
    a.x_only_from_complete_cases =
        get_or<bool>(aj, "x_only_from_complete_cases", false);
    if (aj.contains("injector")) {
      const json& ij = aj.at("injector");
      MisspecInjector inj;
      inj.kind = parse_enum<MisspecInjector::Kind>(
          ij.at("kind").get<std::string>(),
          {{"uniform_pi", MisspecInjector::Kind::UniformPi},
           {"wrong_x_dist", MisspecInjector::Kind::WrongXDist},
           {"pi_yz_in_ipw", MisspecInjector::Kind::UsePiYZInIPW}},
          "injector kind");
      inj.lo = get_or<double>(ij, "lo", 0.1);
      inj.hi = get_or<double>(ij, "hi", 0.9);
      inj.mean = get_or<double>(ij, "mean", -2.0);
      inj.sd = get_or<double>(ij, "sd", 1.0);
      a.injector = inj;
    }
    sc.arms.push_back(std::move(a));
  }
  return sc;
}

json summary_to_json(const SimulationSummary& s) {
  json j;
  j["version"] = kVersion;
  j["scenario"] = s.scenario_name;
  j["master_seed"] = s.master_seed;
  j["n"] = s.n;
  j["replications"] = s.replications;
  j["theta_true"] = from_vector(s.theta_true);
  json arms = json::array();
  for (const ArmSummary& a : s.arms) {
    json aj;
    aj["label"] = a.label;
    aj["n_success"] = a.n_success;
    aj["n_failed"] = a.n_failed;
    aj["mean_estimate"] = from_vector(a.mean_estimate);
    aj["mean_bias"] = from_vector(a.mean_bias);
    aj["percent_bias"] = from_vector(a.percent_bias);
    aj["mean_se"] = from_vector(a.mean_se);
    aj["empirical_sd"] = from_vector(a.empirical_sd);
    aj["coverage_95"] = from_vector(a.coverage);
    arms.push_back(std::move(aj));
  }
  j["arms"] = arms;
  return j;
}

int cmd_simulate(const std::string& scenario_path, int threads,
                 std::string out_prefix) {
  const json j = load_json(scenario_path);
  Scenario sc = parse_scenario(j);
  sc.validate();  // configuration errors exit 2 before any work
  if (out_prefix.empty()) out_prefix = sc.name;

  if (threads <= 0) {
    if (const char* env = std::getenv("CENCOV_THREADS"))
      threads = std::max(1, std::atoi(env));
    else
      threads = 1;
  }

  SimulationSummary summary;
  try {
    summary = run_replications(sc, threads);
  } catch (const SimulationError& e) {
    std::cerr << "simulation failed: " << e.what() << "\n";
    return 4;
  }

  const std::string csv_path = out_prefix + ".csv";
  const std::string json_path = out_prefix + ".json";
  {
    std::ofstream cf(csv_path);
    if (!cf) throw ConfigError("cannot write " + csv_path);
    cf << summary_to_csv(summary);
  }
  {
    std::ofstream jf(json_path);
    if (!jf) throw ConfigError("cannot write " + json_path);
    jf << summary_to_json(summary).dump(2) << "\n";
  }
  std::cout << summarize_to_table(summary);
  std::cout << "summary written to " << csv_path << " and " << json_path
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cencov: regression with a right-censored or missing covariate"};
  app.require_subcommand(1);

  std::string fit_config;
  CLI::App* fit = app.add_subcommand("fit", "fit an estimator on CSV data");
  fit->add_option("--config", fit_config, "fit configuration JSON")->required();

  std::string scenario_path, out_prefix;
  int threads = 0;
  CLI::App* sim = app.add_subcommand("simulate", "run a simulation scenario");
  sim->add_option("--scenario", scenario_path, "scenario JSON")->required();
  sim->add_option("--threads", threads, "worker thread count");
  sim->add_option("--out", out_prefix, "output file prefix");

  CLI::App* ver = app.add_subcommand("version", "print the version");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ver->parsed()) {
      std::cout << "cencov " << kVersion << "\n";
      return 0;
    }
    if (fit->parsed()) return cmd_fit(fit_config);
    if (sim->parsed()) return cmd_simulate(scenario_path, threads, out_prefix);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ModelError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const EstimatorError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const SimulationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
