#include <doctest.h>

#include "helpers.hpp"

using namespace fedci;
using namespace fedci::testing;

namespace {

const ModelSpec kOutcome{Family::logit(), {"x1"}};
const ModelSpec kPropensity{Family::logit(), {"x1"}};

}  // namespace

TEST_CASE("fixed-weight linear fit equals weighted least squares") {
  Dataset data = small_dgp(80, 31);
  // Recast the binary outcome as a numeric response for the linear family.
  const ModelSpec outcome{Family::linear_gaussian(1.0), {"x1"}};
  const double marginal = data.w.mean();
  VectorXd e = VectorXd::Constant(data.n(), marginal);
  const PropensityFit prop = known_propensity_values(e);

  const IpwMleFit fit = fit_ipw_mle(data, outcome, prop, nullptr, Estimand::ATE);

  const MatrixXd xmat = outcome_design(data, outcome);
  const VectorXd varpi = ipw_weights(e, data.w, Estimand::ATE);
  const MatrixXd xtwx =
      xmat.transpose() * varpi.asDiagonal() * xmat;
  const VectorXd xtwy = xmat.transpose() * (varpi.asDiagonal() * data.y);
  const VectorXd wls = xtwx.ldlt().solve(xtwy);
  CHECK((fit.beta_hat - wls).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("constant e=0.5 ATE weights reproduce the unweighted MLE") {
  const Dataset data = small_dgp(300, 32);
  VectorXd e = VectorXd::Constant(data.n(), 0.5);
  const PropensityFit prop = known_propensity_values(e);
  const IpwMleFit weighted =
      fit_ipw_mle(data, kOutcome, prop, nullptr, Estimand::ATE);
  const MatrixXd xmat = outcome_design(data, kOutcome);
  const FitResult plain = fit_mle(xmat, data.y, Family::logit());
  CHECK((weighted.beta_hat - plain.beta_hat).lpNorm<Eigen::Infinity>() < 1e-7);
}

TEST_CASE("IPW-MLE treatment coefficient approaches the truth at n=50k") {
  DgpConfig config = DgpConfig::single_covariate();
  config.n_pool = 50'000;
  config.seed = 33;
  const Dataset data = generate_dgp(config);
  const PropensityFit prop = fit_propensity(data, kPropensity);
  const IpwMleFit fit =
      fit_ipw_mle(data, kOutcome, prop, &kPropensity, Estimand::ATE);
  CHECK(std::abs(fit.beta_hat[1] - (-0.3)) < 0.05);
}

TEST_CASE("single-row bundle equals the hand-computed integrand") {
  Dataset data;
  data.x.resize(1, 1);
  data.x << 0.4;
  data.w.resize(1);
  data.w << 1.0;
  data.y.resize(1);
  data.y << 1.0;
  data.covariate_names = {"x1"};

  const VectorXd beta = (VectorXd(3) << 0.2, -0.1, 0.3).finished();
  const VectorXd gamma = (VectorXd(2) << 0.1, 0.2).finished();
  const PropensityFit prop = known_propensity(data, kPropensity, gamma);
  PropensityFit estimated = prop;
  estimated.known = false;
  const MatrixBundle bundle = estimate_bundle(data, kOutcome, beta, estimated,
                                              &kPropensity, Estimand::ATE);

  // Hand arithmetic for the single row (w=1, y=1).
  const double eta_y = 0.2 - 0.1 + 0.3 * 0.4;
  const double p = 1.0 / (1.0 + std::exp(-eta_y));
  const double eta_w = 0.1 + 0.2 * 0.4;
  const double e = 1.0 / (1.0 + std::exp(-eta_w));
  const double varpi = 1.0 / e;
  Eigen::Vector3d xt(1.0, 1.0, 0.4);
  Eigen::Vector2d zt(1.0, 0.4);

  const MatrixXd a_expect = varpi * p * (1.0 - p) * xt * xt.transpose();
  const MatrixXd d_expect =
      varpi * varpi * (1.0 - p) * (1.0 - p) * xt * xt.transpose();
  const MatrixXd c_expect =
      varpi * (1.0 - p) * (1.0 - e) * xt * zt.transpose();
  const MatrixXd ag_expect = e * (1.0 - e) * zt * zt.transpose();
  const MatrixXd bg_expect = (1.0 - e) * (1.0 - e) * zt * zt.transpose();

  CHECK((bundle.a_beta_varpi - a_expect).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((bundle.d_beta_varpi - d_expect).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((bundle.c - c_expect).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((bundle.a_gamma - ag_expect).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((bundle.b_gamma - bg_expect).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("bundle A_gamma equals the negated propensity hessian over n") {
  const Dataset data = small_dgp(400, 34);
  const PropensityFit prop = fit_propensity(data, kPropensity);
  const MatrixXd xmat = outcome_design(data, kOutcome);
  const FitResult ofit = fit_mle(xmat, data.y, Family::logit());
  const MatrixBundle bundle = estimate_bundle(
      data, kOutcome, ofit.beta_hat, prop, &kPropensity, Estimand::ATE);

  const MatrixXd zmat = propensity_design(data, kPropensity);
  const MatrixXd h =
      hessian(zmat, data.w, prop.gamma_hat, Family::logit());
  CHECK((bundle.a_gamma - (-h / static_cast<double>(data.n())))
            .lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("gamma information equality under correct specification") {
  DgpConfig config = DgpConfig::single_covariate();
  config.n_pool = 50'000;
  config.seed = 35;
  const Dataset data = generate_dgp(config);
  const PropensityFit prop = fit_propensity(data, kPropensity);
  const MatrixXd xmat = outcome_design(data, kOutcome);
  const FitResult ofit = fit_mle(xmat, data.y, Family::logit());
  const MatrixBundle bundle = estimate_bundle(
      data, kOutcome, ofit.beta_hat, prop, &kPropensity, Estimand::ATE);
  CHECK((bundle.a_gamma - bundle.b_gamma).lpNorm<Eigen::Infinity>() /
            bundle.a_gamma.lpNorm<Eigen::Infinity>() <
        0.05);
}

TEST_CASE("zero C makes the estimated-propensity variance collapse to known") {
  const Dataset data = small_dgp(200, 36);
  const PropensityFit prop = fit_propensity(data, kPropensity);
  const MatrixXd xmat = outcome_design(data, kOutcome);
  const FitResult ofit = fit_mle(xmat, data.y, Family::logit());
  MatrixBundle bundle = estimate_bundle(data, kOutcome, ofit.beta_hat, prop,
                                        &kPropensity, Estimand::ATE);
  bundle.c.setZero();
  const MatrixXd v_known = ipw_mle_variance(bundle, true);
  const MatrixXd v_est = ipw_mle_variance(bundle, false);
  CHECK((v_known - v_est).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("estimated-propensity ATE variance is never larger than known") {
  for (std::uint64_t seed = 40; seed < 48; ++seed) {
    const Dataset data = small_dgp(400, seed);
    const PropensityFit prop = fit_propensity(data, kPropensity);
    const MatrixXd xmat = outcome_design(data, kOutcome);
    const VectorXd varpi = ipw_weights(prop.fitted_e, data.w, Estimand::ATE);
    const FitResult ofit = fit_mle(xmat, data.y, Family::logit(), &varpi);
    const MatrixBundle bundle = estimate_bundle(
        data, kOutcome, ofit.beta_hat, prop, &kPropensity, Estimand::ATE);
    const MatrixXd v_known = ipw_mle_variance(bundle, true);
    const MatrixXd v_est = ipw_mle_variance(bundle, false);
    CHECK(min_eigenvalue(v_known - v_est) >= -1e-8);
  }
}

TEST_CASE("hand-set 2x2 bundle reproduces the sandwich arithmetic") {
  MatrixBundle bundle;
  bundle.n = 100;
  bundle.estimand = Estimand::ATE;
  bundle.a_beta_varpi = (MatrixXd(2, 2) << 2.0, 0.5, 0.5, 1.0).finished();
  bundle.d_beta_varpi = (MatrixXd(2, 2) << 1.5, 0.2, 0.2, 0.8).finished();
  bundle.c = (MatrixXd(2, 2) << 0.3, 0.0, 0.1, 0.2).finished();
  bundle.a_gamma = (MatrixXd(2, 2) << 1.0, 0.2, 0.2, 0.5).finished();
  bundle.b_gamma = (MatrixXd(2, 2) << 0.9, 0.1, 0.1, 0.6).finished();

  const MatrixXd a_inv = bundle.a_beta_varpi.inverse();
  const MatrixXd vg = bundle.a_gamma.inverse() * bundle.b_gamma *
                      bundle.a_gamma.inverse();
  const MatrixXd expected_known = a_inv * bundle.d_beta_varpi * a_inv;
  const MatrixXd expected_est =
      a_inv * (bundle.d_beta_varpi - bundle.c * vg * bundle.c.transpose()) *
      a_inv;

  CHECK((ipw_mle_variance(bundle, true) - expected_known)
            .lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((ipw_mle_variance(bundle, false) - expected_est)
            .lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("ATT correction follows the three-term expansion") {
  MatrixBundle bundle;
  bundle.n = 50;
  bundle.estimand = Estimand::ATT;
  bundle.a_beta_varpi = (MatrixXd(2, 2) << 1.4, 0.1, 0.1, 0.9).finished();
  bundle.d_beta_varpi = (MatrixXd(2, 2) << 2.0, 0.3, 0.3, 1.1).finished();
  bundle.c1 = (MatrixXd(2, 2) << 0.12, 0.05, -0.02, 0.07).finished();
  bundle.c2 = (MatrixXd(2, 2) << 0.2, -0.04, 0.06, 0.09).finished();
  bundle.a_gamma = (MatrixXd(2, 2) << 0.8, 0.1, 0.1, 0.6).finished();
  bundle.b_gamma = (MatrixXd(2, 2) << 0.7, 0.05, 0.05, 0.55).finished();

  const MatrixXd a_inv = bundle.a_beta_varpi.inverse();
  const MatrixXd vg =
      bundle.a_gamma.inverse() * bundle.b_gamma * bundle.a_gamma.inverse();
  const MatrixXd correction = bundle.c1 * vg * bundle.c2.transpose() +
                              bundle.c2 * vg * bundle.c1.transpose() -
                              bundle.c1 * vg * bundle.c1.transpose();
  const MatrixXd expected = a_inv * (bundle.d_beta_varpi - correction) * a_inv;
  CHECK((ipw_mle_variance(bundle, false) - expected).lpNorm<Eigen::Infinity>() <
        1e-12);
}

TEST_CASE("bundle on concatenated data is the n-weighted average") {
  const Dataset a = small_dgp(60, 50);
  const Dataset b = small_dgp(90, 51);
  Dataset both;
  both.covariate_names = a.covariate_names;
  both.x.resize(a.n() + b.n(), 1);
  both.x << a.x, b.x;
  both.w.resize(a.n() + b.n());
  both.w << a.w, b.w;
  both.y.resize(a.n() + b.n());
  both.y << a.y, b.y;

  const VectorXd beta = (VectorXd(3) << 0.1, -0.2, 0.4).finished();
  const VectorXd gamma = (VectorXd(2) << 0.1, 0.2).finished();
  auto bundle_of = [&](const Dataset& d) {
    PropensityFit prop = known_propensity(d, kPropensity, gamma);
    prop.known = false;
    return estimate_bundle(d, kOutcome, beta, prop, &kPropensity,
                           Estimand::ATE);
  };
  const MatrixBundle ba = bundle_of(a);
  const MatrixBundle bb = bundle_of(b);
  const MatrixBundle bc = bundle_of(both);

  const double wa = static_cast<double>(a.n()) / static_cast<double>(both.n());
  const double wb = 1.0 - wa;
  CHECK((bc.a_beta_varpi - (wa * ba.a_beta_varpi + wb * bb.a_beta_varpi))
            .lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((bc.d_beta_varpi - (wa * ba.d_beta_varpi + wb * bb.d_beta_varpi))
            .lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((bc.c - (wa * ba.c + wb * bb.c)).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((bc.a_gamma - (wa * ba.a_gamma + wb * bb.a_gamma))
            .lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("linear outcome treatment effect is the treatment coefficient") {
  Dataset data = small_dgp(120, 52);
  const ModelSpec outcome{Family::linear_gaussian(1.0), {"x1"}};
  const PropensityFit prop = fit_propensity(data, kPropensity);
  const IpwMleFit fit =
      fit_ipw_mle(data, outcome, prop, &kPropensity, Estimand::ATE);
  const EffectEstimate effect =
      treatment_effect_from_ipw_mle(data, fit, outcome, Estimand::ATE);
  CHECK(effect.tau_hat == doctest::Approx(fit.beta_hat[1]).epsilon(1e-12));
  CHECK(effect.var_scaled ==
        doctest::Approx(fit.variance_scaled(1, 1)).epsilon(1e-12));
}

TEST_CASE("null logit model has zero effect") {
  Dataset data = small_dgp(50, 53);
  const PropensityFit prop = fit_propensity(data, kPropensity);
  IpwMleFit fit = fit_ipw_mle(data, kOutcome, prop, &kPropensity, Estimand::ATE);
  fit.beta_hat.setZero();
  const EffectEstimate effect =
      treatment_effect_from_ipw_mle(data, fit, kOutcome, Estimand::ATE);
  CHECK(effect.tau_hat == doctest::Approx(0.0));
}

TEST_CASE("plug-in ATE tracks the Monte Carlo truth at n=50k") {
  DgpConfig config = DgpConfig::single_covariate();
  config.n_pool = 50'000;
  config.seed = 54;
  const Dataset data = generate_dgp(config);
  const double truth = dgp_true_ate(config, 2'000'000).tau;
  const PropensityFit prop = fit_propensity(data, kPropensity);
  const IpwMleFit fit =
      fit_ipw_mle(data, kOutcome, prop, &kPropensity, Estimand::ATE);
  const EffectEstimate effect =
      treatment_effect_from_ipw_mle(data, fit, kOutcome, Estimand::ATE);
  CHECK(std::abs(effect.tau_hat - truth) < 0.02);
}

TEST_CASE("double robustness of the plug-in effect") {
  // Misspecified propensity (drop x2), correct outcome; and vice versa. The
  // DGP uses three covariates so dropping one matters.
  DgpConfig config = DgpConfig::three_covariate();
  config.n_pool = 50'000;
  config.seed = 55;
  const Dataset data = generate_dgp(config);
  const double truth = dgp_true_ate(config, 4'000'000).tau;

  const ModelSpec outcome_full{Family::logit(), {"x1", "x2", "x3"}};
  const ModelSpec prop_full{Family::logit(), {"x1", "x2", "x3"}};
  const ModelSpec outcome_bad{Family::logit(), {"x1", "x2"}};
  const ModelSpec prop_bad{Family::logit(), {"x1", "x2"}};

  // 3 MC-standard-error budget at n=50k: the influence sd is below ~1.1, so
  // 3*1.1/sqrt(50000) ~ 0.015; use 0.02 for slack.
  {
    const PropensityFit prop = fit_propensity(data, prop_bad);
    const IpwMleFit fit =
        fit_ipw_mle(data, outcome_full, prop, &prop_bad, Estimand::ATE);
    const EffectEstimate effect =
        treatment_effect_from_ipw_mle(data, fit, outcome_full, Estimand::ATE);
    CHECK(std::abs(effect.tau_hat - truth) < 0.02);
  }
  {
    const PropensityFit prop = fit_propensity(data, prop_full);
    const IpwMleFit fit =
        fit_ipw_mle(data, outcome_bad, prop, &prop_full, Estimand::ATE);
    const EffectEstimate effect =
        treatment_effect_from_ipw_mle(data, fit, outcome_bad, Estimand::ATE);
    CHECK(std::abs(effect.tau_hat - truth) < 0.02);
  }
}

TEST_CASE("ATT effect requires treated rows") {
  Dataset data = small_dgp(30, 56);
  VectorXd e = VectorXd::Constant(data.n(), 0.4);
  const PropensityFit prop = known_propensity_values(e);
  const IpwMleFit fit =
      fit_ipw_mle(data, kOutcome, prop, nullptr, Estimand::ATT);
  Dataset untreated = data;
  untreated.w.setZero();
  CHECK_THROWS_AS(
      treatment_effect_from_ipw_mle(untreated, fit, kOutcome, Estimand::ATT),
      Error);
}

TEST_CASE("working residual variant changes only D") {
  const Dataset data = small_dgp(150, 57);
  const PropensityFit prop = fit_propensity(data, kPropensity);
  const MatrixXd xmat = outcome_design(data, kOutcome);
  const FitResult ofit = fit_mle(xmat, data.y, Family::logit());
  const MatrixBundle plain = estimate_bundle(
      data, kOutcome, ofit.beta_hat, prop, &kPropensity, Estimand::ATE, false);
  const MatrixBundle working = estimate_bundle(
      data, kOutcome, ofit.beta_hat, prop, &kPropensity, Estimand::ATE, true);
  CHECK((plain.a_beta_varpi - working.a_beta_varpi).lpNorm<Eigen::Infinity>() <
        1e-14);
  CHECK((plain.c - working.c).lpNorm<Eigen::Infinity>() < 1e-14);
  CHECK((plain.d_beta_varpi - working.d_beta_varpi).lpNorm<Eigen::Infinity>() >
        1e-6);
}
