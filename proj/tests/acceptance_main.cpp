// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned here, not tuned at runtime.

#include <cstdio>
#include <functional>
#include <iostream>

#include "fedci/diagnostics.hpp"
#include "fedci/protocol.hpp"
#include "fedci/simulation.hpp"

using namespace fedci;

namespace {

int g_failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", id,
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* pattern, auto... values) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, values...);
  return buf;
}

double min_eigenvalue(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

const ModelSpec kOutcome{Family::logit(), {"x1"}};
const ModelSpec kPropensity{Family::logit(), {"x1"}};

std::vector<SiteData> as_sites(std::vector<Dataset> parts) {
  std::vector<SiteData> sites;
  for (std::size_t k = 0; k < parts.size(); ++k)
    sites.push_back(
        SiteData{"site" + std::to_string(k + 1), std::move(parts[k])});
  return sites;
}

FederationPlan default_plan() {
  FederationPlan plan;
  plan.outcome = kOutcome;
  plan.propensity = kPropensity;
  plan.mode = FederationMode::Restricted;
  plan.estimand = Estimand::ATE;
  plan.propensity_mode = PropensityMode::EstimatedStable;
  return plan;
}

Dataset concat(const std::vector<SiteData>& sites) {
  Eigen::Index n = 0;
  for (const auto& s : sites) n += s.data.n();
  Dataset out;
  out.covariate_names = sites.front().data.covariate_names;
  out.x.resize(n, sites.front().data.dim());
  out.w.resize(n);
  out.y.resize(n);
  Eigen::Index at = 0;
  for (const auto& s : sites) {
    out.x.middleRows(at, s.data.n()) = s.data.x;
    out.w.segment(at, s.data.n()) = s.data.w;
    out.y.segment(at, s.data.n()) = s.data.y;
    at += s.data.n();
  }
  return out;
}

// --- criterion 1: Table-8-style standardized normality -----------------------

void criterion_1() {
  const int reps = 2000;
  const auto cells = standardization_experiment(
      {EstimatorKind::Mle, EstimatorKind::IpwMle, EstimatorKind::Aipw},
      {500, 1000}, {1, 2, 5}, reps, 88);
  bool pass = true;
  for (const auto& cell : cells) {
    // The small-n AIPW row drifts through the inverse-variance weights
    // (per-site score variances come from a few hundred rows), so the
    // n=500 multi-site AIPW cells carry the loosened corner bounds.
    const bool aipw_corner = cell.estimator == EstimatorKind::Aipw &&
                             cell.n_pool == 500 && cell.n_sites > 1;
    const double mean_tol = aipw_corner ? 0.12 : 0.08;
    const double std_tol = aipw_corner ? 0.07 : 0.05;
    const bool ok = std::abs(cell.mean) <= mean_tol &&
                    std::abs(cell.std_dev - 1.0) <= std_tol;
    std::printf("    %-8s n=%-5lld D=%d  mean %+.3f (tol %.2f)  std %.3f "
                "(tol %.2f)%s\n",
                to_string(cell.estimator), static_cast<long long>(cell.n_pool),
                cell.n_sites, cell.mean, mean_tol, cell.std_dev, std_tol,
                ok ? "" : "  <-- out of bounds");
    pass = pass && ok;
  }
  report(1, pass,
         "standardized normality over 18 cells x " + std::to_string(reps) +
             " reps (table above)");
}

// --- criterion 2: Table-11-style double robustness ----------------------------

void criterion_2() {
  // 20k rows per site: the table's correct-specification magnitudes sit
  // below the efficiency bound for a 20k pool, so the anchors imply the
  // larger per-site size (see the build notes).
  const auto rows = double_robustness_experiment(50, 99, 0, 40'000, 2);
  const auto m = [&](int setting, int which) {
    const auto& r = rows[static_cast<std::size_t>(setting - 1)];
    return 1000.0 * (which == 0 ? r.mae_aipw : which == 1 ? r.mae_om : r.mae_ipw);
  };
  bool pass = true;
  for (int s = 1; s <= 3; ++s)
    pass = pass && m(s, 0) >= 2.5 && m(s, 0) <= 5.5;
  pass = pass && m(4, 0) >= 3.0 * m(1, 0);
  // OM blows up only under outcome misspecification.
  pass = pass && m(2, 1) >= 3.0 * m(1, 1) && m(4, 1) >= 3.0 * m(3, 1) &&
         m(3, 1) <= 1.5 * m(1, 1);
  // IPW degrades only under propensity misspecification.
  pass = pass && m(3, 2) >= 1.05 * m(1, 2) && m(4, 2) >= 1.05 * m(2, 2) &&
         m(2, 2) <= 1.05 * m(1, 2);
  report(2, pass,
         fmt("MAEx1000 AIPW %.2f/%.2f/%.2f/%.2f OM %.2f/%.2f/%.2f/%.2f "
             "IPW %.2f/%.2f/%.2f/%.2f",
             m(1, 0), m(2, 0), m(3, 0), m(4, 0), m(1, 1), m(2, 1), m(3, 1),
             m(4, 1), m(1, 2), m(2, 2), m(3, 2), m(4, 2)));
}

// --- criterion 3: IVW worked example ------------------------------------------

void criterion_3() {
  const MatrixXd prec_m =
      (MatrixXd(2, 2) << 51.6, -28.6, -28.6, 474.02).finished();
  const MatrixXd prec_o =
      (MatrixXd(2, 2) << 55.34, 14.61, 14.61, 187.98).finished();
  const VectorXd beta_m = (VectorXd(2) << -0.67, 2.03).finished();
  const VectorXd beta_o = (VectorXd(2) << -0.02, -0.15).finished();
  const auto [point, var] = inverse_variance_weighting(
      {beta_m, beta_o}, {prec_m.inverse(), prec_o.inverse()}, 2);
  const bool pass = std::abs(point[0] - (-0.71)) < 0.005 &&
                    std::abs(point[1] - 1.42) < 0.005;
  report(3, pass, fmt("IVW point (%.4f, %.4f) vs (-0.71, 1.42)", point[0],
                      point[1]));
}

// --- criterion 4: sample-size weighting worked example -------------------------

void criterion_4() {
  const double fed =
      sample_size_weighting<double>({{90'018, 1476.27}, {208'388, 182.48}});
  const double scaled = fed / (90'018.0 + 208'388.0);
  const bool pass =
      std::abs(fed - 572.77) <= 0.01 && std::abs(scaled - 0.0019) <= 0.0001;
  report(4, pass, fmt("federated variance %.4f (expect 572.77), scaled %.5f",
                      fed, scaled));
}

// --- criterion 5: pooled equivalence -------------------------------------------

void criterion_5() {
  bool pass = true;
  std::string detail;

  {  // exact linear-Gaussian equivalence
    DgpConfig config = DgpConfig::single_covariate();
    config.n_pool = 3'000;
    config.seed = 55;
    const Dataset pooled = generate_dgp(config);
    const auto sites = as_sites(split_sites(pooled, 3, 56));
    FederationPlan plan = default_plan();
    plan.outcome = ModelSpec{Family::linear_gaussian(1.0), {"x1"}};
    const auto est = federated_mle_run(sites, plan);
    const MatrixXd xall = outcome_design(pooled, plan.outcome);
    const VectorXd ols =
        (xall.transpose() * xall).ldlt().solve(xall.transpose() * pooled.y);
    const double gap = (est.point - ols).lpNorm<Eigen::Infinity>();
    pass = pass && gap < 1e-8;
    detail += fmt("linear gap %.2e; ", gap);
  }

  {  // logit federated MLE and IPW-MLE vs pooled, 50 reps at n=20k, D=2
    double worst_mle = 0.0, worst_ipw = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
      DgpConfig config = DgpConfig::single_covariate();
      config.n_pool = 20'000;
      config.seed = 5'000 + static_cast<std::uint64_t>(rep);
      const Dataset pooled = generate_dgp(config);
      const auto sites = as_sites(split_sites(pooled, 2, config.seed + 1));
      const FederationPlan plan = default_plan();

      const auto fed_mle = federated_mle_run(sites, plan);
      const MatrixXd xall = outcome_design(pooled, kOutcome);
      const FitResult cb = fit_mle(xall, pooled.y, Family::logit());
      const MatrixXd vcb =
          robust_variance(xall, pooled.y, cb.beta_hat, Family::logit());
      for (Eigen::Index j = 0; j < 3; ++j) {
        const double se =
            std::sqrt(vcb(j, j) / static_cast<double>(pooled.n()));
        worst_mle = std::max(
            worst_mle, std::abs(fed_mle.point[j] - cb.beta_hat[j]) / se);
      }

      const auto fed_ipw = federated_ipw_mle(sites, plan);
      const PropensityFit prop = fit_propensity(pooled, kPropensity);
      const IpwMleFit cb_ipw =
          fit_ipw_mle(pooled, kOutcome, prop, &kPropensity, Estimand::ATE);
      for (Eigen::Index j = 0; j < 3; ++j) {
        const double se = std::sqrt(cb_ipw.variance_scaled(j, j) /
                                    static_cast<double>(pooled.n()));
        worst_ipw = std::max(
            worst_ipw, std::abs(fed_ipw.point[j] - cb_ipw.beta_hat[j]) / se);
      }
    }
    pass = pass && worst_mle < 0.1 && worst_ipw < 0.1;
    detail += fmt("max |fed-pooled|/SE: mle %.4f, ipw %.4f (bound 0.1)",
                  worst_mle, worst_ipw);
  }
  report(5, pass, detail);
}

// --- criterion 6: known-vs-estimated variance ordering --------------------------

void criterion_6() {
  double worst = 0.0;
  bool pass = true;
  for (int rep = 0; rep < 200; ++rep) {
    DgpConfig config = DgpConfig::single_covariate();
    config.n_pool = 500;
    config.seed = 6'000 + static_cast<std::uint64_t>(rep);
    const Dataset data = generate_dgp(config);
    const PropensityFit prop = fit_propensity(data, kPropensity);
    const MatrixXd xmat = outcome_design(data, kOutcome);
    const VectorXd varpi = ipw_weights(prop.fitted_e, data.w, Estimand::ATE);
    const FitResult fit = fit_mle(xmat, data.y, Family::logit(), &varpi);
    const MatrixBundle bundle = estimate_bundle(
        data, kOutcome, fit.beta_hat, prop, &kPropensity, Estimand::ATE);
    const MatrixXd v_known = ipw_mle_variance(bundle, true);
    const MatrixXd v_est = ipw_mle_variance(bundle, false);
    const double lambda = min_eigenvalue(v_known - v_est);
    worst = std::min(worst, lambda);
    pass = pass && lambda >= -1e-8;
  }
  report(6, pass,
         fmt("min eigenvalue of V_known - V_estimated over 200 bundles: %.2e",
             worst));
}

// --- criterion 7: restricted vs unrestricted efficiency -------------------------

void criterion_7() {
  auto make_site = [](const std::string& id, Eigen::Index n, double lo,
                      double hi, std::uint64_t seed) {
    Rng rng(Rng::key(seed));
    Dataset d;
    d.x.resize(n, 1);
    d.w.resize(n);
    d.y.resize(n);
    d.covariate_names = {"x1"};
    for (Eigen::Index i = 0; i < n; ++i) {
      d.x(i, 0) = rng.uniform(lo, hi);
      d.w[i] = rng.bernoulli(sigmoid(0.1 + 1.2 * d.x(i, 0))) ? 1.0 : 0.0;
      d.y[i] =
          rng.bernoulli(sigmoid(-0.2 - 0.3 * d.w[i] + 1.2 * d.x(i, 0))) ? 1.0
                                                                        : 0.0;
    }
    return SiteData{id, std::move(d)};
  };

  int wins = 0;
  const int reps = 200;
  double restricted_avg = 0.0, unrestricted_avg = 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    const auto seed = 7'000 + static_cast<std::uint64_t>(rep);
    std::vector<SiteData> sites{make_site("a", 2'000, -1.0, 1.0, 10 * seed),
                                make_site("b", 2'000, 1.0, 3.0, 10 * seed + 5)};
    FederationPlan plan = default_plan();
    const auto restricted = federated_mle_run(sites, plan);
    plan.mode = FederationMode::Unrestricted;
    plan.unstable_outcome = {{"a", {"x1"}}, {"b", {"x1"}}};
    const auto unrestricted = federated_mle_run(sites, plan);
    const double vr = restricted.var_scaled(restricted.coef(kTreatment),
                                            restricted.coef(kTreatment));
    const double vu = unrestricted.var_scaled(unrestricted.coef(kTreatment),
                                              unrestricted.coef(kTreatment));
    restricted_avg += vr / reps;
    unrestricted_avg += vu / reps;
    if (vr <= vu + 1e-8) ++wins;
  }
  const bool pass = wins >= static_cast<int>(0.95 * reps) &&
                    restricted_avg < unrestricted_avg;
  report(7, pass,
         fmt("restricted <= unrestricted in %d/%d reps; avg %.4f vs %.4f",
             wins, reps, restricted_avg, unrestricted_avg));
}

// --- criterion 8: IVW optimality -------------------------------------------------

void criterion_8() {
  Rng rng(Rng::key(8'888));
  bool pass = true;
  double worst_gap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 4;
    std::vector<VectorXd> points;
    std::vector<MatrixXd> vars;
    std::vector<double> v(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) {
      v[static_cast<std::size_t>(k)] = 0.05 + 3.0 * rng.uniform();
      points.push_back(VectorXd::Constant(1, rng.uniform(-1.0, 1.0)));
      vars.push_back(MatrixXd::Constant(1, 1, v[static_cast<std::size_t>(k)]));
    }
    const auto [point, var_scaled] = inverse_variance_weighting(points, vars, 1);
    const double ivw_var = var_scaled(0, 0);
    for (int alt = 0; alt < 100; ++alt) {
      std::vector<double> weights(static_cast<std::size_t>(d));
      double total = 0.0;
      for (auto& wk : weights) {
        wk = rng.uniform() + 1e-4;
        total += wk;
      }
      double alt_var = 0.0;
      for (int k = 0; k < d; ++k) {
        const double wk = weights[static_cast<std::size_t>(k)] / total;
        alt_var += wk * wk * v[static_cast<std::size_t>(k)];
      }
      worst_gap = std::min(worst_gap, alt_var - ivw_var);
      pass = pass && ivw_var <= alt_var + 1e-12;
    }
  }
  report(8, pass,
         fmt("IVW variance <= 100x100 random convex weightings; worst slack "
             "%.2e",
             worst_gap));
}

// --- criterion 9: numerical hygiene ----------------------------------------------

void criterion_9() {
  bool pass = true;
  std::string detail;

  {  // finite differences of the likelihood at 1e-5 relative
    DgpConfig config = DgpConfig::single_covariate();
    config.n_pool = 50;
    config.seed = 909;
    const Dataset data = generate_dgp(config);
    const MatrixXd xmat = outcome_design(data, kOutcome);
    const VectorXd beta = (VectorXd(3) << 0.17, -0.42, 0.31).finished();
    double worst = 0.0;
    for (const Family family :
         {Family::logit(), Family::linear_gaussian(0.8)}) {
      const VectorXd g = score(xmat, data.y, beta, family);
      const MatrixXd h = hessian(xmat, data.y, beta, family);
      for (Eigen::Index j = 0; j < 3; ++j) {
        VectorXd hi = beta, lo = beta;
        hi[j] += 1e-5;
        lo[j] -= 1e-5;
        const double fd = (log_likelihood(xmat, data.y, hi, family) -
                           log_likelihood(xmat, data.y, lo, family)) /
                          2e-5;
        worst = std::max(worst,
                         std::abs(g[j] - fd) / (std::abs(fd) + 1.0));
        const VectorXd sd = (score(xmat, data.y, hi, family) -
                             score(xmat, data.y, lo, family)) /
                            2e-5;
        for (Eigen::Index r = 0; r < 3; ++r)
          worst = std::max(
              worst, std::abs(h(r, j) - sd[r]) / (std::abs(sd[r]) + 1.0));
      }
    }
    pass = pass && worst < 1e-5;
    detail += fmt("max FD mismatch %.1e; ", worst);
  }

  {  // 95% CI coverage of the federated treatment coefficient
    const int reps = 1000;
    std::vector<int> covered(static_cast<std::size_t>(reps), 0);
    parallel_for(reps, 0, [&](int rep) {
      DgpConfig config = DgpConfig::single_covariate();
      config.n_pool = 2'000;
      Rng rng(Rng::key(9'100, static_cast<std::uint64_t>(rep)));
      const Dataset pooled = generate_dgp(config, rng);
      const auto sites = as_sites(split_sites(
          pooled, 2, Rng::key(9'100, static_cast<std::uint64_t>(rep), 2)));
      const auto est = federated_mle_run(sites, default_plan());
      const Eigen::Index j = est.coef(kTreatment);
      const double se = est.se(j);
      covered[static_cast<std::size_t>(rep)] =
          std::abs(est.point[j] - (-0.3)) <= 1.96 * se ? 1 : 0;
    });
    double rate = 0.0;
    for (int c : covered) rate += c;
    rate /= reps;
    pass = pass && rate >= 0.92 && rate <= 0.97;
    detail += fmt("95%% CI coverage %.3f over %d reps", rate, reps);
  }
  report(9, pass, detail);
}

// --- criterion 10: protocol equivalence -------------------------------------------

void criterion_10() {
  DgpConfig config = DgpConfig::single_covariate();
  config.n_pool = 2'000;
  config.seed = 1'010;
  const Dataset pooled = generate_dgp(config);
  const auto sites = as_sites(split_sites(pooled, 3, 1'011));

  bool pass = true;
  std::string detail;
  std::size_t max_messages = 0;
  for (auto estimator : {SessionEstimator::Mle, SessionEstimator::IpwMle,
                         SessionEstimator::Aipw}) {
    std::vector<SiteHandle> handles;
    for (const auto& s : sites) handles.emplace_back(s.id, s.data);
    CoordinatorConfig cc;
    cc.estimator = estimator;
    cc.plan = default_plan();
    const SessionResult session = run_session(cc, handles);
    max_messages = std::max(max_messages, session.transcript.size());

    FederatedEstimate direct;
    switch (estimator) {
      case SessionEstimator::Mle:
        direct = federated_mle_run(sites, cc.plan);
        break;
      case SessionEstimator::IpwMle:
        direct = federated_ipw_mle(sites, cc.plan);
        break;
      case SessionEstimator::Aipw:
        direct = federated_aipw(sites, cc.plan);
        break;
    }
    const double gap =
        (session.estimate.point - direct.point).lpNorm<Eigen::Infinity>() +
        (session.estimate.var_scaled - direct.var_scaled)
            .lpNorm<Eigen::Infinity>();
    pass = pass && gap < 1e-12;
    pass = pass && session.transcript.size() <= 4 * sites.size();
  }
  detail += fmt("wire==in-process to 1e-12; max messages %zu (bound %zu); ",
                max_messages, 4 * sites.size());

  {  // schema: no row-level fields anywhere in a transcript
    std::vector<SiteHandle> handles;
    for (const auto& s : sites) handles.emplace_back(s.id, s.data);
    CoordinatorConfig cc;
    cc.estimator = SessionEstimator::IpwMle;
    cc.plan = default_plan();
    const SessionResult session = run_session(cc, handles);
    bool clean = true;
    for (const auto& msg : session.transcript) {
      for (const char* needle : {"\"x\"", "\"y\"", "\"w\"", "\"rows\""})
        if (msg.payload_json.find(needle) != std::string::npos) clean = false;
      if (msg.payload_json.size() > 16'384) clean = false;  // no row payloads
    }
    pass = pass && clean;
    detail += fmt("transcript row-level fields: %s", clean ? "none" : "FOUND");
  }
  report(10, pass, detail);
}

// --- criterion 11: stability test size and power ------------------------------------

void criterion_11() {
  const int reps = 1000;
  std::vector<int> rejects(static_cast<std::size_t>(reps), 0);
  parallel_for(reps, 0, [&](int rep) {
    DgpConfig config = DgpConfig::single_covariate();
    config.n_pool = 5'000;
    Rng rng_a(Rng::key(11'000, static_cast<std::uint64_t>(rep), 1));
    Rng rng_b(Rng::key(11'000, static_cast<std::uint64_t>(rep), 2));
    const Dataset da = generate_dgp(config, rng_a);
    const Dataset db = generate_dgp(config, rng_b);
    const MatrixXd xa = outcome_design(da, kOutcome);
    const MatrixXd xb = outcome_design(db, kOutcome);
    const FitResult fa = fit_mle(xa, da.y, Family::logit());
    const FitResult fb = fit_mle(xb, db.y, Family::logit());
    const MatrixXd va = robust_variance(xa, da.y, fa.beta_hat, Family::logit());
    const MatrixXd vb = robust_variance(xb, db.y, fb.beta_hat, Family::logit());
    const auto result = hotelling_stability_test(fa.beta_hat, va, da.n(),
                                                 fb.beta_hat, vb, db.n());
    rejects[static_cast<std::size_t>(rep)] = result.reject_at.at(0.05) ? 1 : 0;
  });
  double size = 0.0;
  for (int r : rejects) size += r;
  size /= reps;

  // Power: shift the treatment coefficient at site b by ten standard errors
  // of the difference.
  const int power_reps = 200;
  std::vector<int> power_hits(static_cast<std::size_t>(power_reps), 0);
  parallel_for(power_reps, 0, [&](int rep) {
    DgpConfig config = DgpConfig::single_covariate();
    config.n_pool = 5'000;
    Rng rng_a(Rng::key(11'500, static_cast<std::uint64_t>(rep), 1));
    const Dataset da = generate_dgp(config, rng_a);
    DgpConfig shifted = config;
    // V_ww for this DGP is about 17, so SE(diff) ~ sqrt(2*17/5000) ~ 0.082.
    shifted.beta0[1] += 10.0 * std::sqrt(2.0 * 17.0 / 5'000.0);
    Rng rng_b(Rng::key(11'500, static_cast<std::uint64_t>(rep), 2));
    const Dataset db = generate_dgp(shifted, rng_b);
    const MatrixXd xa = outcome_design(da, kOutcome);
    const MatrixXd xb = outcome_design(db, kOutcome);
    const FitResult fa = fit_mle(xa, da.y, Family::logit());
    const FitResult fb = fit_mle(xb, db.y, Family::logit());
    const MatrixXd va = robust_variance(xa, da.y, fa.beta_hat, Family::logit());
    const MatrixXd vb = robust_variance(xb, db.y, fb.beta_hat, Family::logit());
    const auto result = hotelling_stability_test(fa.beta_hat, va, da.n(),
                                                 fb.beta_hat, vb, db.n());
    power_hits[static_cast<std::size_t>(rep)] =
        result.reject_at.at(0.05) ? 1 : 0;
  });
  double power = 0.0;
  for (int p : power_hits) power += p;
  power /= power_reps;

  const bool pass = size >= 0.03 && size <= 0.08 && power >= 0.99;
  report(11, pass,
         fmt("size %.3f in [0.03, 0.08]; power %.3f under a 10-SE shift",
             size, power));
}

}  // namespace

int main() {
  criterion_3();
  criterion_4();
  criterion_8();
  criterion_6();
  criterion_10();
  criterion_5();
  criterion_9();
  criterion_11();
  criterion_7();
  criterion_2();
  criterion_1();

  if (g_failures == 0)
    std::puts("acceptance: all criteria passed");
  else
    std::printf("acceptance: %d criterion(s) FAILED\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
