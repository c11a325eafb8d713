#include "fedci/propensity.hpp"

namespace fedci {

namespace {

VectorXd fitted_probs(const MatrixXd& zmat, const VectorXd& gamma) {
  VectorXd eta = zmat * gamma;
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = sigmoid(eta[i]);
  return eta;
}

}  // namespace

PropensityFit fit_propensity(const Dataset& data, const ModelSpec& spec) {
  data.validate();
  const MatrixXd zmat = propensity_design(data, spec);
  const FitResult fit = fit_mle(zmat, data.w, Family::logit());
  PropensityFit out;
  out.gamma_hat = fit.beta_hat;
  out.hessian_at_opt = fit.hessian_at_opt;
  out.fitted_e = fitted_probs(zmat, fit.beta_hat);
  out.known = false;
  out.converged = fit.converged;
  out.coef_names = propensity_coef_names(spec);
  return out;
}

PropensityFit known_propensity(const Dataset& data, const ModelSpec& spec,
                               const VectorXd& gamma_true) {
  const MatrixXd zmat = propensity_design(data, spec);
  if (gamma_true.size() != zmat.cols())
    throw DimensionError("gamma length does not match propensity design");
  PropensityFit out;
  out.gamma_hat = gamma_true;
  out.fitted_e = fitted_probs(zmat, gamma_true);
  out.known = true;
  out.coef_names = propensity_coef_names(spec);
  return out;
}

PropensityFit known_propensity_values(const VectorXd& e_values) {
  for (Eigen::Index i = 0; i < e_values.size(); ++i)
    if (!(e_values[i] > 0.0 && e_values[i] < 1.0))
      throw OverlapError("supplied propensity outside (0,1)");
  PropensityFit out;
  out.fitted_e = e_values;
  out.known = true;
  return out;
}

OverlapReport check_overlap(const PropensityFit& fit, double eta) {
  if (!(eta > 0.0 && eta < 0.5)) throw Error("eta must lie in (0, 0.5)");
  OverlapReport rep;
  rep.eta = eta;
  rep.n = fit.fitted_e.size();
  for (Eigen::Index i = 0; i < fit.fitted_e.size(); ++i) {
    const double e = fit.fitted_e[i];
    rep.min_e = std::min(rep.min_e, e);
    rep.max_e = std::max(rep.max_e, e);
    if (!(e > eta && e < 1.0 - eta)) rep.violations.push_back(i);
  }
  return rep;
}

VectorXd ipw_weights(const VectorXd& e, const VectorXd& w, Estimand estimand,
                     double hard_eps) {
  if (e.size() != w.size())
    throw DimensionError("propensity and treatment lengths differ");
  VectorXd out(e.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const double ei = e[i];
    if (!(ei > 0.0 && ei < 1.0))
      throw OverlapError("propensity outside (0,1)");
    if (ei < hard_eps || ei > 1.0 - hard_eps)
      throw OverlapError("propensity beyond the hard overlap threshold");
    if (estimand == Estimand::ATE)
      out[i] = w[i] / ei + (1.0 - w[i]) / (1.0 - ei);
    else
      out[i] = w[i] + ei * (1.0 - w[i]) / (1.0 - ei);
  }
  return out;
}

}  // namespace fedci
