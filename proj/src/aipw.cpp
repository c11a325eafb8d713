#include "fedci/aipw.hpp"

namespace fedci {

NuisanceModels make_nuisances(const Dataset& data, const ModelSpec& outcome,
                              const VectorXd& beta, const ModelSpec& propensity,
                              const VectorXd& gamma,
                              NuisanceProvenance provenance) {
  // Map model covariates to dataset column indices once; the closures then
  // accept raw rows in dataset order.
  std::vector<Eigen::Index> ocols, pcols;
  for (const auto& name : outcome.covariates) ocols.push_back(data.column(name));
  for (const auto& name : propensity.covariates)
    pcols.push_back(data.column(name));
  if (beta.size() != static_cast<Eigen::Index>(ocols.size()) + 2)
    throw DimensionError("beta length does not match outcome model");
  if (gamma.size() != static_cast<Eigen::Index>(pcols.size()) + 1)
    throw DimensionError("gamma length does not match propensity model");

  const Family family = outcome.family;
  auto mu = [family, beta, ocols](const Eigen::RowVectorXd& x, double w) {
    double eta = beta[0] + beta[1] * w;
    for (std::size_t j = 0; j < ocols.size(); ++j)
      eta += beta[2 + static_cast<Eigen::Index>(j)] * x[ocols[j]];
    return family.kind == FamilyKind::Logit ? sigmoid(eta) : eta;
  };

  NuisanceModels out;
  out.mu1 = [mu](const Eigen::RowVectorXd& x) { return mu(x, 1.0); };
  out.mu0 = [mu](const Eigen::RowVectorXd& x) { return mu(x, 0.0); };
  out.e = [gamma, pcols](const Eigen::RowVectorXd& x) {
    double eta = gamma[0];
    for (std::size_t j = 0; j < pcols.size(); ++j)
      eta += gamma[1 + static_cast<Eigen::Index>(j)] * x[pcols[j]];
    return sigmoid(eta);
  };
  out.provenance = provenance;
  return out;
}

double aipw_score(const Eigen::RowVectorXd& x, double w, double y,
                  const NuisanceModels& nuisances, Estimand estimand) {
  const double e = nuisances.e(x);
  if (!(e > 0.0 && e < 1.0)) throw OverlapError("propensity outside (0,1)");
  if (estimand == Estimand::ATE) {
    const double m1 = nuisances.mu1(x);
    const double m0 = nuisances.mu0(x);
    return m1 - m0 + w * (y - m1) / e - (1.0 - w) * (y - m0) / (1.0 - e);
  }
  const double m0 = nuisances.mu0(x);
  return w * (y - m0) - e * (1.0 - w) * (y - m0) / (1.0 - e);
}

AipwResult estimate_aipw(const Dataset& data, const NuisanceModels& nuisances,
                         Estimand estimand) {
  data.validate();
  const Eigen::Index n = data.n();
  if (n == 0) throw Error("empty dataset");

  VectorXd scores(n);
  Eigen::Index n_treated = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    scores[i] =
        aipw_score(data.x.row(i), data.w[i], data.y[i], nuisances, estimand);
    if (data.w[i] == 1.0) ++n_treated;
  }

  AipwResult out;
  out.n = n;
  out.estimand = estimand;
  if (estimand == Estimand::ATE) {
    out.tau_hat = scores.mean();
    out.var_scaled = (scores.array() - out.tau_hat).square().sum() /
                     static_cast<double>(n);
  } else {
    if (n_treated == 0) throw Error("no treated rows for ATT");
    const double nt = static_cast<double>(n_treated);
    out.tau_hat = scores.sum() / nt;
    // Influence of the ratio estimator sum(phi)/sum(w): center the treated
    // contributions at tau_hat and rescale by (n/n_t)^2 so var_scaled/n
    // estimates Var(tau_att).
    double ssq = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double centered = scores[i] - out.tau_hat * data.w[i];
      ssq += centered * centered;
    }
    const double dn = static_cast<double>(n);
    out.var_scaled = (dn / nt) * (dn / nt) * ssq / dn;
  }
  return out;
}

}  // namespace fedci
