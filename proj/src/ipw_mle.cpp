#include "fedci/ipw_mle.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace fedci {

namespace {

MatrixXd solve_spd(const MatrixXd& a, const MatrixXd& rhs,
                   const char* what) {
  Eigen::LDLT<MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw SingularMatrixError(std::string("singular matrix: ") + what);
  return ldlt.solve(rhs);
}

MatrixXd sandwich(const MatrixXd& a, const MatrixXd& middle,
                  const char* what) {
  const MatrixXd ainv_m = solve_spd(a, middle, what);
  const MatrixXd v = solve_spd(a, ainv_m.transpose(), what).transpose();
  return 0.5 * (v + v.transpose());
}

void check_psd(const MatrixXd& v, double tol, const char* what) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(v, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < tol)
    throw Error(std::string(what) + ": variance failed the PSD check");
}

}  // namespace

double outcome_mean(const Eigen::RowVectorXd& design_row, const VectorXd& beta,
                    const Family& family) {
  const double eta = design_row * beta;
  return family.kind == FamilyKind::Logit ? sigmoid(eta) : eta;
}

MatrixBundle estimate_bundle(const Dataset& data, const ModelSpec& outcome,
                             const VectorXd& beta, const PropensityFit& prop,
                             const ModelSpec* prop_spec, Estimand estimand,
                             bool working_residuals) {
  const MatrixXd xmat = outcome_design(data, outcome);
  if (beta.size() != xmat.cols())
    throw DimensionError("beta length does not match outcome design");
  if (prop.fitted_e.size() != data.n())
    throw DimensionError("propensity values do not match dataset rows");

  const bool with_gamma = prop.gamma_hat.size() > 0 && prop_spec != nullptr;
  MatrixXd zmat;
  if (with_gamma) {
    zmat = propensity_design(data, *prop_spec);
    if (prop.gamma_hat.size() != zmat.cols())
      throw DimensionError("gamma length does not match propensity design");
  }

  const Eigen::Index n = data.n();
  const Eigen::Index p = xmat.cols();
  const Eigen::Index q = with_gamma ? zmat.cols() : 0;

  MatrixBundle out;
  out.n = n;
  out.estimand = estimand;
  out.a_beta_varpi = MatrixXd::Zero(p, p);
  out.d_beta_varpi = MatrixXd::Zero(p, p);
  if (estimand == Estimand::ATE) {
    if (with_gamma) out.c = MatrixXd::Zero(p, q);
  } else if (with_gamma) {
    out.c1 = MatrixXd::Zero(p, q);
    out.c2 = MatrixXd::Zero(p, q);
  }
  if (with_gamma) {
    out.a_gamma = MatrixXd::Zero(q, q);
    out.b_gamma = MatrixXd::Zero(q, q);
  }

  const VectorXd eta = xmat * beta;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = prop.fitted_e[i];
    if (!(e > 0.0 && e < 1.0)) throw OverlapError("propensity outside (0,1)");
    const double w = data.w[i];
    const double varpi = estimand == Estimand::ATE
                             ? w / e + (1.0 - w) / (1.0 - e)
                             : w + e * (1.0 - w) / (1.0 - e);

    double resid, curvature;  // score residual and negated loglik curvature
    double d_resid_sq;        // residual entering D (working variant opt-in)
    if (outcome.family.kind == FamilyKind::Logit) {
      const double pfit = sigmoid(eta[i]);
      resid = data.y[i] - pfit;
      curvature = pfit * (1.0 - pfit);
      d_resid_sq = resid * resid;
      if (working_residuals) {
        const double wr = resid / std::max(curvature, 1e-12);
        d_resid_sq = wr * wr;
      }
    } else {
      const double s2 = outcome.family.dispersion;
      resid = (data.y[i] - eta[i]) / s2;
      curvature = 1.0 / s2;
      d_resid_sq = resid * resid;
    }

    const auto xi = xmat.row(i);
    out.a_beta_varpi.noalias() += varpi * curvature * xi.transpose() * xi;
    out.d_beta_varpi.noalias() +=
        varpi * varpi * d_resid_sq * xi.transpose() * xi;

    if (with_gamma) {
      const auto zi = zmat.row(i);
      const double d_resid = w - e;  // treatment-model score residual
      out.a_gamma.noalias() += e * (1.0 - e) * zi.transpose() * zi;
      out.b_gamma.noalias() += d_resid * d_resid * zi.transpose() * zi;
      if (estimand == Estimand::ATE) {
        out.c.noalias() += (varpi * resid * d_resid) * xi.transpose() * zi;
      } else {
        const double h = (1.0 - w) / (1.0 - e) * resid;
        out.c1.noalias() += (h * d_resid) * xi.transpose() * zi;
        out.c2.noalias() += (varpi * resid * d_resid) * xi.transpose() * zi;
      }
    }
  }

  const double dn = static_cast<double>(n);
  out.a_beta_varpi /= dn;
  out.d_beta_varpi /= dn;
  if (with_gamma) {
    out.a_gamma /= dn;
    out.b_gamma /= dn;
    if (estimand == Estimand::ATE)
      out.c /= dn;
    else {
      out.c1 /= dn;
      out.c2 /= dn;
    }
  }
  return out;
}

MatrixXd ipw_mle_variance(const MatrixBundle& bundle, bool propensity_known) {
  const MatrixXd& a = bundle.a_beta_varpi;
  MatrixXd middle = bundle.d_beta_varpi;

  if (!propensity_known) {
    if (!bundle.has_gamma())
      throw Error("estimated-propensity variance requires gamma blocks");
    const MatrixXd v_gamma =
        sandwich(bundle.a_gamma, bundle.b_gamma, "A_gamma");
    if (bundle.estimand == Estimand::ATE) {
      middle -= bundle.c * v_gamma * bundle.c.transpose();
    } else {
      // Correction per the expansion of the weighted first-order condition:
      // M = C1 Vg C2^T + C2 Vg C1^T - C1 Vg C1^T.
      const MatrixXd c1v = bundle.c1 * v_gamma;
      middle -= c1v * bundle.c2.transpose() +
                bundle.c2 * v_gamma * bundle.c1.transpose() -
                c1v * bundle.c1.transpose();
    }
    middle = 0.5 * (middle + middle.transpose());
  }

  const MatrixXd v = sandwich(a, middle, "A_beta_varpi");
  check_psd(v, -1e-6, "ipw_mle_variance");
  return v;
}

IpwMleFit fit_ipw_mle(const Dataset& data, const ModelSpec& outcome,
                      const PropensityFit& prop, const ModelSpec* prop_spec,
                      Estimand estimand, const FitOptions& opts) {
  data.validate();
  const VectorXd varpi = ipw_weights(prop.fitted_e, data.w, estimand);
  const MatrixXd xmat = outcome_design(data, outcome);
  IpwMleFit out;
  out.fit = fit_mle(xmat, data.y, outcome.family, &varpi, nullptr, opts);
  out.beta_hat = out.fit.beta_hat;
  out.propensity_known = prop.known;
  out.bundle =
      estimate_bundle(data, outcome, out.beta_hat, prop, prop_spec, estimand);
  out.variance_scaled = ipw_mle_variance(out.bundle, prop.known);
  return out;
}

EffectEstimate treatment_effect_from_ipw_mle(const Dataset& data,
                                             const IpwMleFit& fit,
                                             const ModelSpec& outcome,
                                             Estimand estimand) {
  const MatrixXd xmat = outcome_design(data, outcome);
  const VectorXd& beta = fit.beta_hat;
  const Eigen::Index n = data.n();
  const Eigen::Index p = xmat.cols();

  double tau_sum = 0.0;
  VectorXd jbar = VectorXd::Zero(p);
  Eigen::Index count = 0;
  Eigen::RowVectorXd row1(p), row0(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (estimand == Estimand::ATT && data.w[i] != 1.0) continue;
    row1 = xmat.row(i);
    row0 = xmat.row(i);
    row1[1] = 1.0;
    row0[1] = 0.0;
    const double mu1 = outcome_mean(row1, beta, outcome.family);
    const double mu0 = outcome_mean(row0, beta, outcome.family);
    tau_sum += mu1 - mu0;
    if (outcome.family.kind == FamilyKind::Logit) {
      jbar += (mu1 * (1.0 - mu1)) * row1.transpose() -
              (mu0 * (1.0 - mu0)) * row0.transpose();
    } else {
      jbar += row1.transpose() - row0.transpose();
    }
    ++count;
  }
  if (count == 0) throw Error("no treated rows for the ATT effect");

  EffectEstimate out;
  out.tau_hat = tau_sum / static_cast<double>(count);
  jbar /= static_cast<double>(count);
  out.var_scaled = jbar.dot(fit.variance_scaled * jbar);
  return out;
}

}  // namespace fedci
