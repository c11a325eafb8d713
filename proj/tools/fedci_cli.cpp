// Command-line front end: single-dataset fits, offline summary-file
// federation, and the simulation experiments.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "fedci/csv.hpp"
#include "fedci/diagnostics.hpp"
#include "fedci/protocol.hpp"
#include "fedci/simulation.hpp"

using json = nlohmann::json;
using namespace fedci;

namespace {

constexpr int kExitParse = 2;
constexpr int kExitModel = 3;
constexpr int kExitOverlap = 4;
constexpr int kExitFingerprint = 5;

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(csv);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << content;
}

struct CommonArgs {
  std::string input;
  std::string outcome = "y";
  std::string treatment = "w";
  std::string covariates;
  std::string family = "logit";
  std::string estimand = "ate";
  std::string estimator = "mle";
  std::string mode = "restricted";
  std::vector<std::string> unstable;    // "site:col1,col2"
  std::string propensity = "estimate";  // or known:<file>
  std::string propensity_covariates;    // defaults to --covariates
  std::string out;
  double eta = 0.01;
};

Family parse_family(const std::string& name) {
  if (name == "logit") return Family::logit();
  if (name == "linear") return Family::linear_gaussian(1.0);
  throw ParseError("unknown family: " + name);
}

Estimand parse_estimand(const std::string& name) {
  if (name == "ate") return Estimand::ATE;
  if (name == "att") return Estimand::ATT;
  throw ParseError("unknown estimand: " + name);
}

FederationMode parse_mode(const std::string& name) {
  if (name == "restricted") return FederationMode::Restricted;
  if (name == "unrestricted") return FederationMode::Unrestricted;
  throw ParseError("unknown mode: " + name);
}

std::map<std::string, std::vector<std::string>> parse_unstable(
    const std::vector<std::string>& entries) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& entry : entries) {
    const auto colon = entry.find(':');
    if (colon == std::string::npos)
      throw ParseError("--unstable expects <site>:<col,col,...>: " + entry);
    const std::string site = entry.substr(0, colon);
    for (const auto& name : split_list(entry.substr(colon + 1)))
      out[site].push_back(name);
  }
  return out;
}

VectorXd known_propensity_from_file(const std::string& spec,
                                    Eigen::Index expected_rows) {
  const std::string path = spec.substr(std::string("known:").size());
  const CsvTable table = read_csv(path);
  const Eigen::Index col =
      std::find(table.header.begin(), table.header.end(), "e") !=
              table.header.end()
          ? table.column("e")
          : 0;
  if (table.values.rows() != expected_rows)
    throw ParseError("propensity file rows do not match the dataset");
  return table.values.col(col);
}

json coefficient_table(const std::vector<std::string>& names,
                       const VectorXd& point, const MatrixXd& var_scaled,
                       Eigen::Index n) {
  json coefs = json::array();
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto idx = static_cast<Eigen::Index>(j);
    const double se = std::sqrt(var_scaled(idx, idx) / static_cast<double>(n));
    coefs.push_back(json{{"name", names[j]},
                         {"estimate", point[idx]},
                         {"se", se},
                         {"ci_low", point[idx] - 1.96 * se},
                         {"ci_high", point[idx] + 1.96 * se}});
  }
  return coefs;
}

json effect_block(double tau, double var_scaled, Eigen::Index n) {
  const double se = std::sqrt(var_scaled / static_cast<double>(n));
  return json{{"tau_hat", tau},
              {"se", se},
              {"ci_low", tau - 1.96 * se},
              {"ci_high", tau + 1.96 * se}};
}

json overlap_block(const OverlapReport& report) {
  return json{{"eta", report.eta},
              {"min_e", report.min_e},
              {"max_e", report.max_e},
              {"violations", report.violations.size()}};
}

void emit(const std::string& out, const json& report) {
  const std::string text = report.dump(2) + "\n";
  if (out.empty())
    std::cout << text;
  else
    spit(out, text);
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

int cmd_fit(const CommonArgs& args) {
  const CsvTable table = read_csv(args.input);
  const auto covs = split_list(args.covariates);
  const Dataset data =
      dataset_from_csv(table, args.outcome, args.treatment, covs);
  const Family family = parse_family(args.family);
  const Estimand estimand = parse_estimand(args.estimand);
  const ModelSpec outcome{family, covs};
  const ModelSpec prop_spec{Family::logit(),
                            args.propensity_covariates.empty()
                                ? covs
                                : split_list(args.propensity_covariates)};

  json report;
  report["estimator"] = args.estimator;
  report["family"] = args.family;
  report["estimand"] = args.estimand;
  report["n"] = data.n();

  const bool known = args.propensity.rfind("known:", 0) == 0;
  auto propensity_fit = [&]() -> PropensityFit {
    if (known)
      return known_propensity_values(
          known_propensity_from_file(args.propensity, data.n()));
    return fit_propensity(data, prop_spec);
  };

  if (args.estimator == "mle") {
    const MatrixXd xmat = outcome_design(data, outcome);
    const FitResult fit = fit_mle(xmat, data.y, family);
    const MatrixXd var = robust_variance(xmat, data.y, fit.beta_hat, family);
    report["converged"] = fit.converged;
    report["separation_flag"] = fit.separation_flag;
    report["iterations"] = fit.iterations;
    report["coefficients"] = coefficient_table(outcome_coef_names(outcome),
                                               fit.beta_hat, var, data.n());
  } else if (args.estimator == "ipw-mle") {
    const PropensityFit prop = propensity_fit();
    report["overlap"] = overlap_block(check_overlap(prop, args.eta));
    const IpwMleFit fit = fit_ipw_mle(
        data, outcome, prop, prop.known ? nullptr : &prop_spec, estimand);
    report["converged"] = fit.fit.converged;
    report["separation_flag"] = fit.fit.separation_flag;
    report["propensity_known"] = prop.known;
    report["coefficients"] =
        coefficient_table(outcome_coef_names(outcome), fit.beta_hat,
                          fit.variance_scaled, data.n());
    const EffectEstimate effect =
        treatment_effect_from_ipw_mle(data, fit, outcome, estimand);
    report["effect"] =
        effect_block(effect.tau_hat, effect.var_scaled, data.n());
  } else if (args.estimator == "aipw") {
    if (known)
      throw ParseError(
          "aipw needs a parametric propensity; use --propensity estimate");
    const MatrixXd xmat = outcome_design(data, outcome);
    const FitResult ofit = fit_mle(xmat, data.y, family);
    const PropensityFit prop = propensity_fit();
    report["overlap"] = overlap_block(check_overlap(prop, args.eta));
    const NuisanceModels nuis =
        make_nuisances(data, outcome, ofit.beta_hat, prop_spec, prop.gamma_hat,
                       NuisanceProvenance::SiteLocal);
    const AipwResult result = estimate_aipw(data, nuis, estimand);
    report["effect"] =
        effect_block(result.tau_hat, result.var_scaled, data.n());
  } else {
    throw ParseError("unknown estimator: " + args.estimator);
  }

  emit(args.out, report);
  return 0;
}

// ---------------------------------------------------------------------------
// summarize
// ---------------------------------------------------------------------------

struct SummarizeArgs {
  CommonArgs common;
  std::string site_id = "site1";
  std::string sites;  // full roster, comma separated (defaults to site_id)
  std::string round;  // "", "propensity", "outcome", "models", "aipw"
  std::string gamma_in;
  std::string nuisances_in;
  std::string summary_out;
};

FederationPlan plan_from_args(const CommonArgs& args,
                              const std::vector<std::string>& covs,
                              const std::vector<std::string>& prop_covs) {
  FederationPlan plan;
  plan.outcome = ModelSpec{parse_family(args.family), covs};
  plan.propensity = ModelSpec{Family::logit(), prop_covs};
  plan.mode = parse_mode(args.mode);
  plan.estimand = parse_estimand(args.estimand);
  const auto unstable = parse_unstable(args.unstable);
  plan.unstable_outcome = unstable;
  if (plan.mode == FederationMode::Unrestricted) {
    plan.unstable_propensity = unstable;
    plan.propensity_mode = PropensityMode::Unstable;
  } else {
    plan.propensity_mode = PropensityMode::EstimatedStable;
  }
  return plan;
}

std::vector<SiteData> roster_placeholders(const std::string& sites,
                                          const std::string& fallback) {
  std::vector<SiteData> out;
  for (const auto& id : split_list(sites.empty() ? fallback : sites))
    out.push_back(SiteData{id, Dataset{}});
  return out;
}

int cmd_summarize(const SummarizeArgs& args) {
  const CsvTable table = read_csv(args.common.input);
  const auto covs = split_list(args.common.covariates);
  const auto prop_covs = args.common.propensity_covariates.empty()
                             ? covs
                             : split_list(args.common.propensity_covariates);
  const Dataset data = dataset_from_csv(table, args.common.outcome,
                                        args.common.treatment, covs);
  const SiteData site{args.site_id, data};

  const FederationPlan plan = plan_from_args(args.common, covs, prop_covs);
  const auto roster = roster_placeholders(args.sites, args.site_id);
  const GlobalLayout beta_layout = plan.beta_layout(roster);
  const GlobalLayout gamma_layout = plan.gamma_layout(roster);

  SiteSummary summary;
  const std::string& estimator = args.common.estimator;
  if (estimator == "mle") {
    summary = site_outcome_mle_summary(site, plan.outcome, beta_layout);
  } else if (estimator == "ipw-mle") {
    if (args.round == "propensity") {
      add_propensity_mle_summary(summary, site, plan.propensity, gamma_layout);
    } else if (args.round == "outcome") {
      if (args.gamma_in.empty())
        throw ParseError("--round outcome needs --gamma-in <file>");
      const VectorXd gamma_fed =
          deserialize_federated_gamma(slurp(args.gamma_in), gamma_layout);
      const bool known = args.common.propensity.rfind("known", 0) == 0;
      summary = site_ipw_summary(site, plan.outcome, beta_layout,
                                 plan.propensity, gamma_layout, gamma_fed,
                                 known, plan.estimand);
    } else {
      throw ParseError("ipw-mle summarize needs --round propensity|outcome");
    }
  } else if (estimator == "aipw") {
    if (plan.mode == FederationMode::Unrestricted) {
      summary = site_local_aipw_summary(site, plan, beta_layout, gamma_layout);
    } else if (args.round == "models" || args.round.empty()) {
      summary = site_outcome_mle_summary(site, plan.outcome, beta_layout);
      add_propensity_mle_summary(summary, site, plan.propensity, gamma_layout);
    } else if (args.round == "aipw") {
      if (args.nuisances_in.empty())
        throw ParseError("--round aipw needs --nuisances-in <file>");
      const FederatedNuisanceShare fed = deserialize_federated_nuisances(
          slurp(args.nuisances_in), beta_layout, gamma_layout);
      const NuisanceModels nuis =
          make_nuisances(data, plan.outcome, fed.beta, plan.propensity,
                         fed.gamma, NuisanceProvenance::PooledFederated);
      summary = site_aipw_summary(site, nuis, plan.estimand);
    } else {
      throw ParseError("aipw summarize needs --round models|aipw");
    }
  } else {
    throw ParseError("unknown estimator: " + estimator);
  }

  if (args.summary_out.empty()) throw ParseError("--summary-out is required");
  spit(args.summary_out, serialize_summary(summary, beta_layout, gamma_layout));
  return 0;
}

// ---------------------------------------------------------------------------
// federate
// ---------------------------------------------------------------------------

struct FederateArgs {
  std::vector<std::string> summary_in;
  std::string estimator = "mle";
  std::string mode = "restricted";
  std::string estimand = "ate";
  std::string propensity = "estimate";
  std::string gamma_out;
  std::string nuisances_out;
  std::string out;
};

int cmd_federate(const FederateArgs& args) {
  if (args.summary_in.empty()) throw ParseError("--summary-in is required");

  std::vector<std::string> blobs;
  for (const auto& path : args.summary_in) blobs.push_back(slurp(path));

  const SummaryFileKind kind = classify_summary_json(blobs.front());
  json report;
  report["estimator"] = args.estimator;
  report["mode"] = args.mode;

  if (kind == SummaryFileKind::Coefficients) {
    // Meta-analysis style IVW of externally produced (point, variance) pairs.
    std::vector<VectorXd> points;
    std::vector<MatrixXd> vars;
    Eigen::Index n_pool = 0;
    std::vector<std::string> names;
    for (const auto& blob : blobs) {
      const CoefficientShare share = deserialize_coefficients(blob);
      if (names.empty())
        names = share.names;
      else if (names != share.names)
        throw ProtocolError(ProtocolFault::LayoutDisagreement,
                            "coefficient names differ between shares");
      points.push_back(share.point);
      vars.push_back(share.variance);
      n_pool += share.n;
    }
    const auto [point, var_scaled] =
        inverse_variance_weighting(points, vars, n_pool);
    report["scheme"] = "inverse-variance";
    report["n_pool"] = n_pool;
    report["coefficients"] =
        coefficient_table(names, point, var_scaled, n_pool);
    emit(args.out, report);
    return 0;
  }

  if (kind != SummaryFileKind::ModelSummary)
    throw ParseError("federate expects site summary files");

  // Layouts ride along in the files; fingerprint agreement is enforced by
  // deserialize_summary against the first file's layouts.
  const auto [beta_layout, gamma_layout] = summary_layouts(blobs.front());
  std::vector<SiteSummary> summaries;
  for (const auto& blob : blobs)
    summaries.push_back(deserialize_summary(blob, beta_layout, gamma_layout));

  const FederationMode mode = parse_mode(args.mode);

  if (!args.gamma_out.empty()) {
    const VectorXd gamma_fed =
        hessian_weighting(summaries, Space::Gamma, gamma_layout);
    spit(args.gamma_out, serialize_federated_gamma(gamma_fed, gamma_layout));
    return 0;
  }
  if (!args.nuisances_out.empty()) {
    FederatedNuisanceShare share;
    share.beta = hessian_weighting(summaries, Space::Beta, beta_layout);
    share.gamma = hessian_weighting(summaries, Space::Gamma, gamma_layout);
    spit(args.nuisances_out,
         serialize_federated_nuisances(share, beta_layout, gamma_layout));
    return 0;
  }

  FederatedEstimate est;
  if (args.estimator == "mle") {
    est = federated_mle(summaries, beta_layout, mode);
  } else if (args.estimator == "ipw-mle") {
    const bool known = args.propensity.rfind("known", 0) == 0;
    est = federate_ipw(summaries, beta_layout, gamma_layout, known, mode);
  } else if (args.estimator == "aipw") {
    est = federate_aipw(summaries, mode);
  } else {
    throw ParseError("unknown estimator: " + args.estimator);
  }

  report["scheme"] = est.scheme == AggregationScheme::Hessian ? "hessian"
                     : est.scheme == AggregationScheme::SampleSize
                         ? "sample-size"
                         : "inverse-variance";
  report["n_pool"] = est.n_pool;
  if (args.estimator == "aipw")
    report["effect"] =
        effect_block(est.point[0], est.var_scaled(0, 0), est.n_pool);
  else
    report["coefficients"] =
        coefficient_table(est.names, est.point, est.var_scaled, est.n_pool);
  emit(args.out, report);
  return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string experiment = "normality";
  int reps = 2000;
  std::uint64_t seed = 0;
  std::string n_pools = "500,1000";
  std::string sites = "1,2,5";
  std::string estimators = "mle,ipw-mle,aipw";
  int threads = 0;
  std::string out;  // path prefix
};

int cmd_simulate(const SimulateArgs& args) {
  if (args.experiment == "normality") {
    std::vector<EstimatorKind> estimators;
    for (const auto& name : split_list(args.estimators)) {
      if (name == "mle")
      estimators.push_back(EstimatorKind::Mle);
      else if (name == "ipw-mle")
        estimators.push_back(EstimatorKind::IpwMle);
      else if (name == "aipw")
        estimators.push_back(EstimatorKind::Aipw);
      else
        throw ParseError("unknown estimator: " + name);
    }
    std::vector<Eigen::Index> n_pools;
    for (const auto& n : split_list(args.n_pools))
      n_pools.push_back(static_cast<Eigen::Index>(std::stoll(n)));
    std::vector<int> site_counts;
    for (const auto& d : split_list(args.sites))
      site_counts.push_back(std::stoi(d));

    const auto cells = standardization_experiment(
        estimators, n_pools, site_counts, args.reps, args.seed, args.threads);
    const std::string text = render_standardization_table(cells);
    std::cout << text;
    if (!args.out.empty()) {
      spit(args.out + "normality.txt", text);
      spit(args.out + "normality.csv", standardization_csv(cells));
    }
    return 0;
  }
  if (args.experiment == "double-robustness") {
    const auto rows = double_robustness_experiment(
        args.reps > 0 ? args.reps : 50, args.seed, args.threads);
    const std::string text = render_double_robustness_table(rows);
    std::cout << text;
    if (!args.out.empty()) {
      spit(args.out + "double_robustness.txt", text);
      spit(args.out + "double_robustness.csv", double_robustness_csv(rows));
    }
    return 0;
  }
  throw ParseError("unknown experiment: " + args.experiment);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated causal inference toolkit"};
  app.require_subcommand(1);

  CommonArgs fit_args;
  auto* fit = app.add_subcommand("fit", "fit one estimator on a CSV dataset");
  fit->add_option("--input", fit_args.input)->required();
  fit->add_option("--outcome", fit_args.outcome);
  fit->add_option("--treatment", fit_args.treatment);
  fit->add_option("--covariates", fit_args.covariates);
  fit->add_option("--family", fit_args.family);
  fit->add_option("--estimand", fit_args.estimand);
  fit->add_option("--estimator", fit_args.estimator);
  fit->add_option("--propensity", fit_args.propensity);
  fit->add_option("--propensity-covariates", fit_args.propensity_covariates);
  fit->add_option("--eta", fit_args.eta);
  fit->add_option("--out", fit_args.out);

  SummarizeArgs sum_args;
  auto* summarize = app.add_subcommand("summarize", "write a site summary file");
  summarize->add_option("--input", sum_args.common.input)->required();
  summarize->add_option("--outcome", sum_args.common.outcome);
  summarize->add_option("--treatment", sum_args.common.treatment);
  summarize->add_option("--covariates", sum_args.common.covariates);
  summarize->add_option("--family", sum_args.common.family);
  summarize->add_option("--estimand", sum_args.common.estimand);
  summarize->add_option("--estimator", sum_args.common.estimator);
  summarize->add_option("--mode", sum_args.common.mode);
  summarize->add_option("--unstable", sum_args.common.unstable);
  summarize->add_option("--propensity", sum_args.common.propensity);
  summarize->add_option("--propensity-covariates",
                        sum_args.common.propensity_covariates);
  summarize->add_option("--site-id", sum_args.site_id);
  summarize->add_option("--sites", sum_args.sites);
  summarize->add_option("--round", sum_args.round);
  summarize->add_option("--gamma-in", sum_args.gamma_in);
  summarize->add_option("--nuisances-in", sum_args.nuisances_in);
  summarize->add_option("--summary-out", sum_args.summary_out)->required();

  FederateArgs fed_args;
  auto* federate = app.add_subcommand("federate", "combine site summary files");
  federate->add_option("--summary-in", fed_args.summary_in)->required();
  federate->add_option("--estimator", fed_args.estimator);
  federate->add_option("--mode", fed_args.mode);
  federate->add_option("--estimand", fed_args.estimand);
  federate->add_option("--propensity", fed_args.propensity);
  federate->add_option("--gamma-out", fed_args.gamma_out);
  federate->add_option("--nuisances-out", fed_args.nuisances_out);
  federate->add_option("--out", fed_args.out);

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand("simulate", "run the simulation experiments");
  simulate->add_option("--experiment", sim_args.experiment);
  simulate->add_option("--reps", sim_args.reps);
  simulate->add_option("--seed", sim_args.seed);
  simulate->add_option("--n-pool", sim_args.n_pools);
  simulate->add_option("--sites", sim_args.sites);
  simulate->add_option("--estimators", sim_args.estimators);
  simulate->add_option("--threads", sim_args.threads);
  simulate->add_option("--out", sim_args.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitParse;
  }

  try {
    if (*fit) return cmd_fit(fit_args);
    if (*summarize) return cmd_summarize(sum_args);
    if (*federate) return cmd_federate(fed_args);
    if (*simulate) return cmd_simulate(sim_args);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitParse;
  } catch (const OverlapError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOverlap;
  } catch (const ProtocolError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.fault == ProtocolFault::FingerprintMismatch ? kExitFingerprint
                                                         : kExitModel;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitModel;
  }
  return 0;
}
