#ifndef FEDCI_AIPW_HPP
#define FEDCI_AIPW_HPP

#include <functional>

#include "fedci/ipw_mle.hpp"

namespace fedci {

enum class NuisanceProvenance { PooledFederated, SiteLocal };

// Immutable evaluators over covariate rows (raw x, not the design row).
struct NuisanceModels {
  std::function<double(const Eigen::RowVectorXd&)> mu1;
  std::function<double(const Eigen::RowVectorXd&)> mu0;
  std::function<double(const Eigen::RowVectorXd&)> e;
  NuisanceProvenance provenance = NuisanceProvenance::SiteLocal;
};

// Evaluators closed over fitted parameter vectors. `x_index` maps spec
// covariates to dataset columns so that rows can be passed as raw covariate
// vectors in dataset order.
NuisanceModels make_nuisances(const Dataset& data, const ModelSpec& outcome,
                              const VectorXd& beta, const ModelSpec& propensity,
                              const VectorXd& gamma,
                              NuisanceProvenance provenance);

struct AipwResult {
  double tau_hat = 0.0;
  double var_scaled = 0.0;  // V_tau, per-observation
  Eigen::Index n = 0;
  Estimand estimand = Estimand::ATE;
};

// ATE: mu1 - mu0 + w(y-mu1)/e - (1-w)(y-mu0)/(1-e).
// ATT: w(y-mu0) - e(1-w)(y-mu0)/(1-e); summed over everyone and divided by
// the treated count in estimate_aipw.
double aipw_score(const Eigen::RowVectorXd& x, double w, double y,
                  const NuisanceModels& nuisances, Estimand estimand);

AipwResult estimate_aipw(const Dataset& data, const NuisanceModels& nuisances,
                         Estimand estimand);

}  // namespace fedci

#endif  // FEDCI_AIPW_HPP
