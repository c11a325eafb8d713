#include "fedci/simulation.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace fedci {

DgpConfig DgpConfig::single_covariate() {
  DgpConfig c;
  c.beta0 = (VectorXd(3) << -0.2, -0.3, 0.5).finished();
  c.gamma0 = (VectorXd(2) << 0.1, 0.2).finished();
  c.covariate_dim = 1;
  return c;
}

DgpConfig DgpConfig::three_covariate() {
  DgpConfig c;
  c.beta0 = (VectorXd(5) << -0.2, -0.3, 0.5, 0.7, -0.6).finished();
  c.gamma0 = (VectorXd(4) << 0.1, 0.2, 0.3, 0.4).finished();
  c.covariate_dim = 3;
  return c;
}

Dataset generate_dgp(const DgpConfig& config, Rng& rng) {
  const Eigen::Index n = config.n_pool;
  const Eigen::Index d = config.covariate_dim;
  if (config.beta0.size() != d + 2 || config.gamma0.size() != d + 1)
    throw DimensionError("beta0/gamma0 do not match covariate_dim");

  Dataset data;
  data.x.resize(n, d);
  data.w.resize(n);
  data.y.resize(n);
  for (Eigen::Index j = 0; j < d; ++j)
    data.covariate_names.push_back("x" + std::to_string(j + 1));

  for (Eigen::Index i = 0; i < n; ++i) {
    double eta_w = config.gamma0[0];
    for (Eigen::Index j = 0; j < d; ++j) {
      data.x(i, j) = rng.uniform(-1.0, 1.0);
      eta_w += config.gamma0[1 + j] * data.x(i, j);
    }
    data.w[i] = rng.bernoulli(sigmoid(eta_w)) ? 1.0 : 0.0;
    double eta_y = config.beta0[0] + config.beta0[1] * data.w[i];
    for (Eigen::Index j = 0; j < d; ++j)
      eta_y += config.beta0[2 + j] * data.x(i, j);
    data.y[i] = rng.bernoulli(sigmoid(eta_y)) ? 1.0 : 0.0;
  }
  return data;
}

Dataset generate_dgp(const DgpConfig& config) {
  Rng rng(Rng::key(config.seed));
  return generate_dgp(config, rng);
}

std::vector<Dataset> split_sites(const Dataset& data, int n_sites,
                                 std::uint64_t seed) {
  if (n_sites < 1) throw Error("need at least one site");
  const Eigen::Index n = data.n();
  if (static_cast<Eigen::Index>(n_sites) > n)
    throw Error("more sites than rows");
  if (n_sites == 1) return {data};

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(Rng::key(seed, 0, 0x51717));
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[rng.below(i)]);

  // Equal sizes, remainder spread over the leading sites.
  std::vector<Dataset> out;
  const Eigen::Index base = n / n_sites;
  const Eigen::Index extra = n % n_sites;
  std::size_t cursor = 0;
  for (int k = 0; k < n_sites; ++k) {
    const Eigen::Index nk = base + (k < extra ? 1 : 0);
    Dataset site;
    site.covariate_names = data.covariate_names;
    site.x.resize(nk, data.dim());
    site.w.resize(nk);
    site.y.resize(nk);
    for (Eigen::Index i = 0; i < nk; ++i, ++cursor) {
      site.x.row(i) = data.x.row(perm[cursor]);
      site.w[i] = data.w[perm[cursor]];
      site.y[i] = data.y[perm[cursor]];
    }
    out.push_back(std::move(site));
  }
  return out;
}

Dataset skewed_subsample(const Dataset& data, const std::string& column,
                         Eigen::Index size, double share_below_median,
                         std::uint64_t seed) {
  if (!(share_below_median >= 0.0 && share_below_median <= 1.0))
    throw Error("share_below_median must lie in [0, 1]");
  const Eigen::Index col = data.column(column);
  std::vector<double> sorted(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) sorted[i] = data.x(i, col);
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2,
                   sorted.end());
  const double median = sorted[sorted.size() / 2];

  std::vector<Eigen::Index> below, above;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    (data.x(i, col) < median ? below : above).push_back(i);
  if (below.empty() || above.empty())
    throw Error("column '" + column + "' does not split at its median");

  Rng rng(Rng::key(seed, 0, 0x5c37));
  Dataset out;
  out.covariate_names = data.covariate_names;
  out.x.resize(size, data.dim());
  out.w.resize(size);
  out.y.resize(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    const auto& bucket = rng.uniform() < share_below_median ? below : above;
    const Eigen::Index row = bucket[rng.below(bucket.size())];
    out.x.row(i) = data.x.row(row);
    out.w[i] = data.w[row];
    out.y[i] = data.y[row];
  }
  return out;
}

MonteCarloTruth dgp_true_ate(const DgpConfig& config, std::uint64_t draws,
                             std::uint64_t seed) {
  Rng rng(Rng::key(seed, 0, 0x7a7e));
  const Eigen::Index d = config.covariate_dim;
  double sum = 0.0, sumsq = 0.0;
  for (std::uint64_t t = 0; t < draws; ++t) {
    double eta1 = config.beta0[0] + config.beta0[1];
    double eta0 = config.beta0[0];
    for (Eigen::Index j = 0; j < d; ++j) {
      const double x = rng.uniform(-1.0, 1.0);
      eta1 += config.beta0[2 + j] * x;
      eta0 += config.beta0[2 + j] * x;
    }
    const double contrast = sigmoid(eta1) - sigmoid(eta0);
    sum += contrast;
    sumsq += contrast * contrast;
  }
  MonteCarloTruth out;
  const double dn = static_cast<double>(draws);
  out.tau = sum / dn;
  const double var = sumsq / dn - out.tau * out.tau;
  out.standard_error = std::sqrt(std::max(var, 0.0) / dn);
  return out;
}

void parallel_for(int reps, int threads, const std::function<void(int)>& job) {
  if (threads <= 0)
    threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, reps));
  if (threads == 1) {
    for (int r = 0; r < reps; ++r) job(r);
    return;
  }
  std::atomic<int> cursor{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (;;) {
        const int r = cursor.fetch_add(1);
        if (r >= reps) return;
        try {
          job(r);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

struct ModelSpecs {
  ModelSpec outcome;
  ModelSpec propensity;
};

ModelSpecs specs_for(const DgpConfig& config) {
  ModelSpecs out;
  out.outcome.family = Family::logit();
  out.propensity.family = Family::logit();
  const Eigen::Index d = config.covariate_dim;
  const Eigen::Index d_out = config.outcome_drop_covariates ? d - 1 : d;
  const Eigen::Index d_prop = config.propensity_drop_covariates ? d - 1 : d;
  for (Eigen::Index j = 0; j < d_out; ++j)
    out.outcome.covariates.push_back("x" + std::to_string(j + 1));
  for (Eigen::Index j = 0; j < d_prop; ++j)
    out.propensity.covariates.push_back("x" + std::to_string(j + 1));
  return out;
}

std::vector<SiteData> as_sites(std::vector<Dataset> parts) {
  std::vector<SiteData> sites;
  for (std::size_t k = 0; k < parts.size(); ++k)
    sites.push_back(SiteData{"site" + std::to_string(k + 1), std::move(parts[k])});
  return sites;
}

double standardized_stat(const FederatedEstimate& est, const char* name,
                         double truth) {
  const Eigen::Index j = est.coef(name);
  return (est.point[j] - truth) / est.se(j);
}

}  // namespace

std::vector<StandardizationCell> standardization_experiment(
    const std::vector<EstimatorKind>& estimators,
    const std::vector<Eigen::Index>& n_pools, const std::vector<int>& site_counts,
    int reps, std::uint64_t seed, int threads) {
  if (reps < 100) throw Error("standardization experiment needs reps >= 100");
  const DgpConfig base = DgpConfig::single_covariate();
  const double tau_truth = dgp_true_ate(base).tau;
  const ModelSpecs specs = specs_for(base);

  std::vector<StandardizationCell> cells;
  for (auto estimator : estimators)
    for (auto n_pool : n_pools)
      for (auto n_sites : site_counts) {
        std::vector<double> stats(static_cast<std::size_t>(reps), 0.0);
        parallel_for(reps, threads, [&](int rep) {
          DgpConfig config = base;
          config.n_pool = n_pool;
          // Pooled draw depends only on (seed, rep); the split draws on
          // (seed, rep, D) so D-cells share their pooled data.
          Rng rng(Rng::key(seed, static_cast<std::uint64_t>(rep)));
          const Dataset pooled = generate_dgp(config, rng);
          const auto sites = as_sites(split_sites(
              pooled, n_sites,
              Rng::key(seed, static_cast<std::uint64_t>(rep),
                       static_cast<std::uint64_t>(n_sites))));

          FederationPlan plan;
          plan.outcome = specs.outcome;
          plan.propensity = specs.propensity;
          plan.estimand = Estimand::ATE;
          plan.mode = FederationMode::Restricted;
          plan.propensity_mode = PropensityMode::EstimatedStable;

          double stat = 0.0;
          switch (estimator) {
            case EstimatorKind::Mle: {
              const auto est = federated_mle_run(sites, plan);
              stat = standardized_stat(est, kTreatment, base.beta0[1]);
              break;
            }
            case EstimatorKind::IpwMle: {
              const auto est = federated_ipw_mle(sites, plan);
              stat = standardized_stat(est, kTreatment, base.beta0[1]);
              break;
            }
            case EstimatorKind::Aipw: {
              const auto est = federated_aipw(sites, plan);
              stat = standardized_stat(est, "tau", tau_truth);
              break;
            }
          }
          stats[static_cast<std::size_t>(rep)] = stat;
        });

        StandardizationCell cell;
        cell.estimator = estimator;
        cell.n_pool = n_pool;
        cell.n_sites = n_sites;
        cell.reps = reps;
        const double mean =
            std::accumulate(stats.begin(), stats.end(), 0.0) / reps;
        double ss = 0.0;
        for (double s : stats) ss += (s - mean) * (s - mean);
        cell.mean = mean;
        cell.std_dev = std::sqrt(ss / (reps - 1));
        cells.push_back(cell);
      }
  return cells;
}

std::vector<DoubleRobustnessRow> double_robustness_experiment(
    int reps, std::uint64_t seed, int threads, Eigen::Index n_pool,
    int n_sites) {
  if (reps < 50) throw Error("double robustness experiment needs reps >= 50");
  DgpConfig base = DgpConfig::three_covariate();
  base.n_pool = n_pool;
  const double tau_truth = dgp_true_ate(base).tau;

  // setting -> (outcome misspecified, propensity misspecified)
  const bool misspec[4][2] = {
      {false, false}, {true, false}, {false, true}, {true, true}};

  std::vector<std::array<double, 12>> errs(static_cast<std::size_t>(reps));
  parallel_for(reps, threads, [&](int rep) {
    DgpConfig config = base;
    Rng rng(Rng::key(seed, static_cast<std::uint64_t>(rep)));
    const Dataset pooled = generate_dgp(config, rng);
    const auto sites = as_sites(split_sites(
        pooled, n_sites,
        Rng::key(seed, static_cast<std::uint64_t>(rep),
                 static_cast<std::uint64_t>(n_sites))));

    for (int s = 0; s < 4; ++s) {
      DgpConfig cell = config;
      cell.outcome_drop_covariates = misspec[s][0];
      cell.propensity_drop_covariates = misspec[s][1];
      const ModelSpecs specs = specs_for(cell);

      FederationPlan plan;
      plan.outcome = specs.outcome;
      plan.propensity = specs.propensity;
      plan.estimand = Estimand::ATE;
      plan.mode = FederationMode::Restricted;
      plan.propensity_mode = PropensityMode::EstimatedStable;

      // Federated-MLE nuisances shared by all three estimators.
      const GlobalLayout beta_layout = plan.beta_layout(sites);
      const GlobalLayout gamma_layout = plan.gamma_layout(sites);
      std::vector<SiteSummary> shares;
      for (const auto& site : sites) {
        SiteSummary share =
            site_outcome_mle_summary(site, plan.outcome, beta_layout);
        add_propensity_mle_summary(share, site, plan.propensity, gamma_layout);
        shares.push_back(std::move(share));
      }
      const VectorXd beta_fed =
          hessian_weighting(shares, Space::Beta, beta_layout);
      const VectorXd gamma_fed =
          hessian_weighting(shares, Space::Gamma, gamma_layout);

      double tau_aipw, tau_om, tau_ipw;
      {
        std::vector<VectorXd> pts_a, pts_o, pts_i;
        std::vector<MatrixXd> var_a, var_o, var_i;
        for (const auto& site : sites) {
          const NuisanceModels nuis = make_nuisances(
              site.data, plan.outcome, beta_fed, plan.propensity, gamma_fed,
              NuisanceProvenance::PooledFederated);
          const auto aipw = estimate_aipw(site.data, nuis, Estimand::ATE);
          const double nk = static_cast<double>(site.data.n());
          pts_a.push_back(VectorXd::Constant(1, aipw.tau_hat));
          var_a.push_back(MatrixXd::Constant(1, 1, aipw.var_scaled / nk));

          // Plug-in comparators; IVW weights from per-row contribution
          // variances (the paper defines only the point estimators).
          double om_sum = 0.0, om_ss = 0.0, ipw_sum = 0.0, ipw_ss = 0.0;
          for (Eigen::Index i = 0; i < site.data.n(); ++i) {
            const auto xi = site.data.x.row(i);
            const double om = nuis.mu1(xi) - nuis.mu0(xi);
            const double e = nuis.e(xi);
            const double ht = site.data.w[i] * site.data.y[i] / e -
                              (1.0 - site.data.w[i]) * site.data.y[i] / (1.0 - e);
            om_sum += om;
            om_ss += om * om;
            ipw_sum += ht;
            ipw_ss += ht * ht;
          }
          const double om_mean = om_sum / nk;
          const double ipw_mean = ipw_sum / nk;
          pts_o.push_back(VectorXd::Constant(1, om_mean));
          var_o.push_back(MatrixXd::Constant(
              1, 1, std::max(om_ss / nk - om_mean * om_mean, 1e-300) / nk));
          pts_i.push_back(VectorXd::Constant(1, ipw_mean));
          var_i.push_back(MatrixXd::Constant(
              1, 1, std::max(ipw_ss / nk - ipw_mean * ipw_mean, 1e-300) / nk));
        }
        const Eigen::Index n_all = n_pool;
        tau_aipw = inverse_variance_weighting(pts_a, var_a, n_all).first[0];
        tau_om = inverse_variance_weighting(pts_o, var_o, n_all).first[0];
        tau_ipw = inverse_variance_weighting(pts_i, var_i, n_all).first[0];
      }

      auto& row = errs[static_cast<std::size_t>(rep)];
      row[static_cast<std::size_t>(3 * s)] = std::abs(tau_aipw - tau_truth);
      row[static_cast<std::size_t>(3 * s + 1)] = std::abs(tau_om - tau_truth);
      row[static_cast<std::size_t>(3 * s + 2)] = std::abs(tau_ipw - tau_truth);
    }
  });

  std::vector<DoubleRobustnessRow> out;
  for (int s = 0; s < 4; ++s) {
    DoubleRobustnessRow row;
    row.setting = s + 1;
    for (const auto& e : errs) {
      row.mae_aipw += e[static_cast<std::size_t>(3 * s)];
      row.mae_om += e[static_cast<std::size_t>(3 * s + 1)];
      row.mae_ipw += e[static_cast<std::size_t>(3 * s + 2)];
    }
    row.mae_aipw /= reps;
    row.mae_om /= reps;
    row.mae_ipw /= reps;
    out.push_back(row);
  }
  return out;
}

std::string render_standardization_table(
    const std::vector<StandardizationCell>& cells) {
  std::ostringstream os;
  os << "estimator   n_pool  sites  reps      mean       std\n";
  char buf[128];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof(buf), "%-10s %7lld %6d %5d %9.3f %9.3f\n",
                  to_string(c.estimator), static_cast<long long>(c.n_pool),
                  c.n_sites, c.reps, c.mean, c.std_dev);
    os << buf;
  }
  return os.str();
}

std::string standardization_csv(const std::vector<StandardizationCell>& cells) {
  std::ostringstream os;
  os << "estimator,n_pool,sites,reps,mean,std\n";
  for (const auto& c : cells)
    os << to_string(c.estimator) << "," << c.n_pool << "," << c.n_sites << ","
       << c.reps << "," << c.mean << "," << c.std_dev << "\n";
  return os.str();
}

std::string render_double_robustness_table(
    const std::vector<DoubleRobustnessRow>& rows) {
  std::ostringstream os;
  os << "setting   AIPW(x1000)   OM(x1000)   IPW(x1000)\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%7d %13.3f %11.3f %12.3f\n", r.setting,
                  1000.0 * r.mae_aipw, 1000.0 * r.mae_om, 1000.0 * r.mae_ipw);
    os << buf;
  }
  return os.str();
}

std::string double_robustness_csv(const std::vector<DoubleRobustnessRow>& rows) {
  std::ostringstream os;
  os << "setting,mae_aipw,mae_om,mae_ipw\n";
  for (const auto& r : rows)
    os << r.setting << "," << r.mae_aipw << "," << r.mae_om << "," << r.mae_ipw
       << "\n";
  return os.str();
}

}  // namespace fedci
