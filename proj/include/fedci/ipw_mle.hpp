#ifndef FEDCI_IPW_MLE_HPP
#define FEDCI_IPW_MLE_HPP

#include "fedci/propensity.hpp"

namespace fedci {

// Sample-average estimates of the matrices entering the IPW-MLE sandwich
// variance. All blocks are per-observation averages; n is carried separately
// so federation can rescale explicitly. A-type matrices use the positive
// (negated-curvature) convention. Gamma blocks are empty (size 0) when the
// propensity was supplied rather than estimated.
struct MatrixBundle {
  MatrixXd a_beta_varpi;  // -avg varpi * d2 loglik_f
  MatrixXd d_beta_varpi;  // avg (varpi * g)(varpi * g)^T
  MatrixXd c;             // ATE: avg varpi * g d^T
  MatrixXd c1;            // ATT: avg ((1-w)/(1-e)) g d^T
  MatrixXd c2;            // ATT: avg varpi * g d^T
  MatrixXd a_gamma;       // -avg d2 loglik_e
  MatrixXd b_gamma;       // avg d d^T
  Eigen::Index n = 0;
  Estimand estimand = Estimand::ATE;
  bool has_gamma() const { return a_gamma.size() > 0; }
};

struct IpwMleFit {
  VectorXd beta_hat;
  FitResult fit;  // weighted-likelihood solve underneath
  MatrixBundle bundle;
  bool propensity_known = false;
  MatrixXd variance_scaled;  // per-observation asymptotic variance
};

// Per-row Table-style integrands averaged over the sample at (beta, gamma).
// When `working_residuals` is set and the outcome is Logit, D uses
// (y-p)/(p(1-p)) in place of the true score residual (survey-GLM convention,
// kept for cross-checking only).
MatrixBundle estimate_bundle(const Dataset& data, const ModelSpec& outcome,
                             const VectorXd& beta, const PropensityFit& prop,
                             const ModelSpec* prop_spec, Estimand estimand,
                             bool working_residuals = false);

// Lemma-style sandwich. Known propensity: A^-1 D A^-1. Estimated, ATE:
// A^-1 (D - C Vg C^T) A^-1. Estimated, ATT: A^-1 (D - C1 Vg C2^T
// - C2 Vg C1^T + C1 Vg C1^T) A^-1, with Vg = Ag^-1 Bg Ag^-1.
MatrixXd ipw_mle_variance(const MatrixBundle& bundle, bool propensity_known);

IpwMleFit fit_ipw_mle(const Dataset& data, const ModelSpec& outcome,
                      const PropensityFit& prop, const ModelSpec* prop_spec,
                      Estimand estimand, const FitOptions& opts = {});

// Plug-in effect from the fitted outcome model plus its delta-method
// variance J^T V J (per-observation scale).
struct EffectEstimate {
  double tau_hat = 0.0;
  double var_scaled = 0.0;
};

EffectEstimate treatment_effect_from_ipw_mle(const Dataset& data,
                                             const IpwMleFit& fit,
                                             const ModelSpec& outcome,
                                             Estimand estimand);

// Shared helper: conditional mean mu_w(x) and its beta-gradient for the
// outcome design convention [1, w, x].
double outcome_mean(const Eigen::RowVectorXd& design_row, const VectorXd& beta,
                    const Family& family);

}  // namespace fedci

#endif  // FEDCI_IPW_MLE_HPP
