// Python bindings for the main operations: GLM fits, propensity tooling,
// IPW-MLE, AIPW, federation, diagnostics, and the simulation DGP.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedci/diagnostics.hpp"
#include "fedci/protocol.hpp"
#include "fedci/simulation.hpp"

namespace py = pybind11;
using namespace fedci;

namespace {

Dataset make_dataset(const MatrixXd& x, const VectorXd& w, const VectorXd& y,
                     std::vector<std::string> names) {
  Dataset data;
  data.x = x;
  data.w = w;
  data.y = y;
  if (names.empty())
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      names.push_back("x" + std::to_string(j + 1));
  data.covariate_names = std::move(names);
  data.validate();
  return data;
}

ModelSpec make_spec(const std::string& family,
                    const std::vector<std::string>& covariates,
                    double dispersion) {
  ModelSpec spec;
  spec.family = family == "linear" ? Family::linear_gaussian(dispersion)
                                   : Family::logit();
  spec.covariates = covariates;
  return spec;
}

FederationPlan make_plan(const ModelSpec& outcome, const ModelSpec& propensity,
                         const std::string& mode, const std::string& estimand,
                         const std::string& propensity_mode,
                         const std::map<std::string, std::vector<std::string>>&
                             unstable_outcome,
                         const std::map<std::string, std::vector<std::string>>&
                             unstable_propensity,
                         const std::optional<VectorXd>& known_gamma) {
  FederationPlan plan;
  plan.outcome = outcome;
  plan.propensity = propensity;
  plan.mode = mode == "unrestricted" ? FederationMode::Unrestricted
                                     : FederationMode::Restricted;
  plan.estimand = estimand == "att" ? Estimand::ATT : Estimand::ATE;
  if (propensity_mode == "known")
    plan.propensity_mode = PropensityMode::KnownStable;
  else if (propensity_mode == "unstable")
    plan.propensity_mode = PropensityMode::Unstable;
  else
    plan.propensity_mode = PropensityMode::EstimatedStable;
  plan.unstable_outcome = unstable_outcome;
  plan.unstable_propensity = unstable_propensity;
  plan.known_gamma = known_gamma;
  return plan;
}

std::vector<SiteData> make_sites(
    const std::vector<std::pair<std::string, Dataset>>& sites) {
  std::vector<SiteData> out;
  for (const auto& [id, data] : sites) out.push_back(SiteData{id, data});
  return out;
}

}  // namespace

PYBIND11_MODULE(fedci, m) {
  m.doc() = "federated causal inference: summary-statistic estimators for "
            "MLE, IPW-MLE and AIPW across data sites";

  py::register_exception<OverlapError>(m, "OverlapError");
  py::register_exception<SingularMatrixError>(m, "SingularMatrixError");

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("x"), py::arg("w"), py::arg("y"),
           py::arg("covariate_names") = std::vector<std::string>{})
      .def_readonly("x", &Dataset::x)
      .def_readonly("w", &Dataset::w)
      .def_readonly("y", &Dataset::y)
      .def_readonly("covariate_names", &Dataset::covariate_names)
      .def("__len__", [](const Dataset& d) { return d.n(); });

  py::class_<ModelSpec>(m, "ModelSpec")
      .def(py::init(&make_spec), py::arg("family") = "logit",
           py::arg("covariates") = std::vector<std::string>{},
           py::arg("dispersion") = 1.0);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("beta_hat", &FitResult::beta_hat)
      .def_readonly("hessian_at_opt", &FitResult::hessian_at_opt)
      .def_readonly("converged", &FitResult::converged)
      .def_readonly("iterations", &FitResult::iterations)
      .def_readonly("final_gradient_norm", &FitResult::final_gradient_norm)
      .def_readonly("separation_flag", &FitResult::separation_flag)
      .def_readonly("dispersion_hat", &FitResult::dispersion_hat);

  m.def(
      "fit_mle",
      [](const Dataset& data, const ModelSpec& outcome,
         std::optional<VectorXd> weights) {
        const MatrixXd xmat = outcome_design(data, outcome);
        return fit_mle(xmat, data.y, outcome.family,
                       weights ? &*weights : nullptr);
      },
      py::arg("data"), py::arg("outcome"), py::arg("weights") = std::nullopt,
      "maximum-likelihood fit of the outcome model on [1, w, x]");

  m.def(
      "robust_variance",
      [](const Dataset& data, const ModelSpec& outcome, const VectorXd& beta,
         std::optional<VectorXd> weights) {
        const MatrixXd xmat = outcome_design(data, outcome);
        return robust_variance(xmat, data.y, beta, outcome.family,
                               weights ? &*weights : nullptr);
      },
      py::arg("data"), py::arg("outcome"), py::arg("beta"),
      py::arg("weights") = std::nullopt);

  py::class_<PropensityFit>(m, "PropensityFit")
      .def_readonly("gamma_hat", &PropensityFit::gamma_hat)
      .def_readonly("fitted_e", &PropensityFit::fitted_e)
      .def_readonly("known", &PropensityFit::known)
      .def_readonly("converged", &PropensityFit::converged);

  m.def("fit_propensity", &fit_propensity, py::arg("data"), py::arg("spec"));
  m.def("known_propensity", &known_propensity, py::arg("data"),
        py::arg("spec"), py::arg("gamma_true"));
  m.def(
      "ipw_weights",
      [](const VectorXd& e, const VectorXd& w, const std::string& estimand) {
        return ipw_weights(e, w,
                           estimand == "att" ? Estimand::ATT : Estimand::ATE);
      },
      py::arg("e"), py::arg("w"), py::arg("estimand") = "ate");

  py::class_<OverlapReport>(m, "OverlapReport")
      .def_readonly("eta", &OverlapReport::eta)
      .def_readonly("min_e", &OverlapReport::min_e)
      .def_readonly("max_e", &OverlapReport::max_e)
      .def_readonly("violations", &OverlapReport::violations)
      .def("ok", &OverlapReport::ok);
  m.def("check_overlap", &check_overlap, py::arg("fit"), py::arg("eta"));

  py::class_<IpwMleFit>(m, "IpwMleFit")
      .def_readonly("beta_hat", &IpwMleFit::beta_hat)
      .def_readonly("variance_scaled", &IpwMleFit::variance_scaled)
      .def_readonly("propensity_known", &IpwMleFit::propensity_known);

  m.def(
      "fit_ipw_mle",
      [](const Dataset& data, const ModelSpec& outcome,
         const PropensityFit& prop, std::optional<ModelSpec> prop_spec,
         const std::string& estimand) {
        return fit_ipw_mle(data, outcome, prop,
                           prop_spec ? &*prop_spec : nullptr,
                           estimand == "att" ? Estimand::ATT : Estimand::ATE);
      },
      py::arg("data"), py::arg("outcome"), py::arg("propensity"),
      py::arg("propensity_spec") = std::nullopt, py::arg("estimand") = "ate");

  py::class_<EffectEstimate>(m, "EffectEstimate")
      .def_readonly("tau_hat", &EffectEstimate::tau_hat)
      .def_readonly("var_scaled", &EffectEstimate::var_scaled);
  m.def(
      "treatment_effect_from_ipw_mle",
      [](const Dataset& data, const IpwMleFit& fit, const ModelSpec& outcome,
         const std::string& estimand) {
        return treatment_effect_from_ipw_mle(
            data, fit, outcome,
            estimand == "att" ? Estimand::ATT : Estimand::ATE);
      },
      py::arg("data"), py::arg("fit"), py::arg("outcome"),
      py::arg("estimand") = "ate");

  py::class_<AipwResult>(m, "AipwResult")
      .def_readonly("tau_hat", &AipwResult::tau_hat)
      .def_readonly("var_scaled", &AipwResult::var_scaled)
      .def_readonly("n", &AipwResult::n);

  m.def(
      "estimate_aipw",
      [](const Dataset& data, const ModelSpec& outcome, const VectorXd& beta,
         const ModelSpec& propensity, const VectorXd& gamma,
         const std::string& estimand) {
        const NuisanceModels nuis =
            make_nuisances(data, outcome, beta, propensity, gamma,
                           NuisanceProvenance::SiteLocal);
        return estimate_aipw(
            data, nuis, estimand == "att" ? Estimand::ATT : Estimand::ATE);
      },
      py::arg("data"), py::arg("outcome"), py::arg("beta"),
      py::arg("propensity"), py::arg("gamma"), py::arg("estimand") = "ate",
      "AIPW effect with parametric nuisance models evaluated at the given "
      "coefficients");

  py::class_<FederatedEstimate>(m, "FederatedEstimate")
      .def_readonly("point", &FederatedEstimate::point)
      .def_readonly("var_scaled", &FederatedEstimate::var_scaled)
      .def_readonly("n_pool", &FederatedEstimate::n_pool)
      .def_readonly("names", &FederatedEstimate::names)
      .def("se", &FederatedEstimate::se)
      .def("coef", &FederatedEstimate::coef);

  const auto plan_args =
      [](py::module_& mod, const char* name, auto&& runner) {
        mod.def(
            name,
            [runner](const std::vector<std::pair<std::string, Dataset>>& sites,
                     const ModelSpec& outcome, const ModelSpec& propensity,
                     const std::string& mode, const std::string& estimand,
                     const std::string& propensity_mode,
                     const std::map<std::string, std::vector<std::string>>&
                         unstable_outcome,
                     const std::map<std::string, std::vector<std::string>>&
                         unstable_propensity,
                     const std::optional<VectorXd>& known_gamma) {
              const auto site_data = make_sites(sites);
              const auto plan = make_plan(
                  outcome, propensity, mode, estimand, propensity_mode,
                  unstable_outcome, unstable_propensity, known_gamma);
              return runner(site_data, plan);
            },
            py::arg("sites"), py::arg("outcome"), py::arg("propensity"),
            py::arg("mode") = "restricted", py::arg("estimand") = "ate",
            py::arg("propensity_mode") = "estimate",
            py::arg("unstable_outcome") =
                std::map<std::string, std::vector<std::string>>{},
            py::arg("unstable_propensity") =
                std::map<std::string, std::vector<std::string>>{},
            py::arg("known_gamma") = std::nullopt);
      };
  plan_args(m, "federated_mle", [](const auto& sites, const auto& plan) {
    return federated_mle_run(sites, plan);
  });
  plan_args(m, "federated_ipw_mle", [](const auto& sites, const auto& plan) {
    return federated_ipw_mle(sites, plan);
  });
  plan_args(m, "federated_aipw", [](const auto& sites, const auto& plan) {
    return federated_aipw(sites, plan);
  });

  py::class_<StabilityTestResult>(m, "StabilityTestResult")
      .def_readonly("t2", &StabilityTestResult::t2)
      .def_readonly("dof", &StabilityTestResult::dof)
      .def_readonly("p_value", &StabilityTestResult::p_value)
      .def_readonly("reject_at", &StabilityTestResult::reject_at);

  m.def(
      "hotelling_stability_test",
      [](const VectorXd& beta_a, const MatrixXd& var_a, Eigen::Index n_a,
         const VectorXd& beta_b, const MatrixXd& var_b, Eigen::Index n_b,
         std::optional<std::vector<Eigen::Index>> subset) {
        return hotelling_stability_test(beta_a, var_a, n_a, beta_b, var_b, n_b,
                                        subset ? &*subset : nullptr);
      },
      py::arg("beta_a"), py::arg("var_a"), py::arg("n_a"), py::arg("beta_b"),
      py::arg("var_b"), py::arg("n_b"), py::arg("subset") = std::nullopt);

  m.def(
      "generate_dgp",
      [](Eigen::Index n_pool, std::uint64_t seed, const VectorXd& beta0,
         const VectorXd& gamma0) {
        DgpConfig config = DgpConfig::single_covariate();
        if (beta0.size() > 0) {
          config.beta0 = beta0;
          config.gamma0 = gamma0;
          config.covariate_dim = beta0.size() - 2;
        }
        config.n_pool = n_pool;
        config.seed = seed;
        return generate_dgp(config);
      },
      py::arg("n_pool"), py::arg("seed") = 0, py::arg("beta0") = VectorXd(),
      py::arg("gamma0") = VectorXd(),
      "logit treatment / logit outcome benchmark generator over "
      "uniform(-1,1) covariates");

  m.def("split_sites", &split_sites, py::arg("data"), py::arg("n_sites"),
        py::arg("seed") = 0);

  m.def(
      "dgp_true_ate",
      [](Eigen::Index, const VectorXd& beta0, std::uint64_t draws) {
        DgpConfig config = DgpConfig::single_covariate();
        if (beta0.size() > 0) {
          config.beta0 = beta0;
          config.covariate_dim = beta0.size() - 2;
        }
        return dgp_true_ate(config, draws).tau;
      },
      py::arg("covariate_dim") = 1, py::arg("beta0") = VectorXd(),
      py::arg("draws") = 10'000'000);
}
