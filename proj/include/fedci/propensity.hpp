#ifndef FEDCI_PROPENSITY_HPP
#define FEDCI_PROPENSITY_HPP

#include "fedci/glm.hpp"
#include "fedci/types.hpp"

namespace fedci {

// A fitted (or supplied) treatment model. When `known` is true the scores
// were not estimated: gamma_hat holds the supplied truth when it has a
// parametric form, or stays empty when only per-row probabilities are given.
struct PropensityFit {
  VectorXd gamma_hat;
  MatrixXd hessian_at_opt;  // d^2 of the W-loglik at gamma_hat, empty if n/a
  VectorXd fitted_e;        // strictly inside (0,1)
  bool known = false;
  bool converged = true;
  std::vector<std::string> coef_names;  // propensity coefficient space
};

PropensityFit fit_propensity(const Dataset& data, const ModelSpec& spec);

// True scores from a supplied gamma on the same design convention.
PropensityFit known_propensity(const Dataset& data, const ModelSpec& spec,
                               const VectorXd& gamma_true);

// True scores given directly per row.
PropensityFit known_propensity_values(const VectorXd& e_values);

struct OverlapReport {
  double eta = 0.0;
  double min_e = 1.0;
  double max_e = 0.0;
  std::vector<Eigen::Index> violations;  // rows with e outside (eta, 1-eta)
  Eigen::Index n = 0;
  bool ok() const { return violations.empty(); }
};

// Reporting only; never trims or mutates.
OverlapReport check_overlap(const PropensityFit& fit, double eta);

// Hard guard applied before weights are formed; the default keeps the
// estimand intact while refusing numerically explosive weights.
inline constexpr double kHardOverlapEps = 1e-6;

// ATE: w/e + (1-w)/(1-e).  ATT: w + e(1-w)/(1-e).
VectorXd ipw_weights(const VectorXd& e, const VectorXd& w, Estimand estimand,
                     double hard_eps = kHardOverlapEps);

}  // namespace fedci

#endif  // FEDCI_PROPENSITY_HPP
