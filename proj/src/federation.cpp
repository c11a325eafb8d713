#include "fedci/federation.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <set>

namespace fedci {

namespace {

std::vector<SiteSummary> canonical_order(std::vector<SiteSummary> summaries) {
  std::sort(summaries.begin(), summaries.end(),
            [](const SiteSummary& a, const SiteSummary& b) {
              return a.site_id < b.site_id;
            });
  return summaries;
}

std::vector<Eigen::Index> occupied_slots(
    const std::vector<SiteSummary>& summaries, const GlobalLayout& layout) {
  std::set<Eigen::Index> slots;
  for (const auto& s : summaries)
    for (auto j : layout.site_slots(s.site_id)) slots.insert(j);
  return {slots.begin(), slots.end()};
}

MatrixXd compress(const MatrixXd& m, const std::vector<Eigen::Index>& rows,
                  const std::vector<Eigen::Index>& cols) {
  MatrixXd out(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          m(rows[r], cols[c]);
  return out;
}

VectorXd compress(const VectorXd& v, const std::vector<Eigen::Index>& idx) {
  VectorXd out(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j)
    out[static_cast<Eigen::Index>(j)] = v[idx[j]];
  return out;
}

std::vector<std::string> slot_names(const GlobalLayout& layout,
                                    const std::vector<Eigen::Index>& idx) {
  // Layout names in global slot order.
  std::vector<std::string> all = layout.shared_names;
  for (const auto& [site, block] : layout.per_site_unstable)
    for (const auto& name : block) all.push_back(name + "@" + site);
  std::vector<std::string> out;
  for (auto j : idx) out.push_back(all[static_cast<std::size_t>(j)]);
  return out;
}

Eigen::Index pooled_n(const std::vector<SiteSummary>& summaries) {
  Eigen::Index n = 0;
  for (const auto& s : summaries) n += s.n;
  return n;
}

MatrixXd spd_solve(const MatrixXd& a, const MatrixXd& rhs, const char* what) {
  Eigen::FullPivLU<MatrixXd> lu(a);
  if (!lu.isInvertible())
    throw SingularMatrixError(std::string("singular aggregate matrix: ") + what);
  return lu.solve(rhs);
}

MatrixXd sandwich_of(const MatrixXd& a, const MatrixXd& b, const char* what) {
  const MatrixXd ainv_b = spd_solve(a, b, what);
  const MatrixXd v = spd_solve(a, ainv_b.transpose(), what).transpose();
  return 0.5 * (v + v.transpose());
}

}  // namespace

VectorXd hessian_weighting(const std::vector<SiteSummary>& input, Space space,
                           const GlobalLayout& layout) {
  if (input.empty()) throw Error("no summaries");
  const auto summaries = canonical_order(input);
  const auto occ = occupied_slots(summaries, layout);

  const Eigen::Index dim = layout.total_dim();
  MatrixXd h_sum = MatrixXd::Zero(dim, dim);
  VectorXd hb_sum = VectorXd::Zero(dim);
  for (const auto& s : summaries) {
    const MatrixXd& h =
        space == Space::Beta ? s.hessian_beta_pad : s.hessian_gamma_pad;
    const VectorXd& b = space == Space::Beta ? s.beta_pad : s.gamma_pad;
    if (h.rows() != dim || b.size() != dim)
      throw DimensionError("summary does not match the layout");
    h_sum += h;
    hb_sum += h * b;
  }

  const MatrixXd h_occ = compress(h_sum, occ, occ);
  const VectorXd rhs = compress(hb_sum, occ);
  const VectorXd sol = spd_solve(h_occ, rhs, "sum of Hessians");

  VectorXd out =
      VectorXd::Constant(dim, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t j = 0; j < occ.size(); ++j)
    out[occ[j]] = sol[static_cast<Eigen::Index>(j)];
  return out;
}

std::pair<VectorXd, MatrixXd> inverse_variance_weighting(
    const std::vector<VectorXd>& points, const std::vector<MatrixXd>& variances,
    Eigen::Index n_pool) {
  if (points.empty() || points.size() != variances.size())
    throw DimensionError("points/variances size mismatch");
  const Eigen::Index dim = points.front().size();
  MatrixXd prec_sum = MatrixXd::Zero(dim, dim);
  VectorXd weighted = VectorXd::Zero(dim);
  for (std::size_t k = 0; k < points.size(); ++k) {
    if (points[k].size() != dim || variances[k].rows() != dim ||
        variances[k].cols() != dim)
      throw DimensionError("inconsistent dimensions in IVW");
    Eigen::FullPivLU<MatrixXd> lu(variances[k]);
    if (!lu.isInvertible()) throw SingularMatrixError("singular variance in IVW");
    const MatrixXd prec = lu.inverse();
    prec_sum += prec;
    weighted += prec * points[k];
  }
  Eigen::FullPivLU<MatrixXd> lu(prec_sum);
  if (!lu.isInvertible())
    throw SingularMatrixError("singular precision sum in IVW");
  const MatrixXd cov = lu.inverse();
  VectorXd point = cov * weighted;
  MatrixXd var_scaled = static_cast<double>(n_pool) * cov;
  return {std::move(point), 0.5 * (var_scaled + var_scaled.transpose())};
}

// --- site-side ---------------------------------------------------------------

ModelSpec local_outcome_spec(const ModelSpec& full, const GlobalLayout& beta_layout,
                             const std::string& site) {
  ModelSpec spec;
  spec.family = full.family;
  for (const auto& name : beta_layout.site_local_names(site))
    if (name != kIntercept && name != kTreatment) spec.covariates.push_back(name);
  return spec;
}

ModelSpec local_propensity_spec(const ModelSpec& full,
                                const GlobalLayout& gamma_layout,
                                const std::string& site) {
  ModelSpec spec;
  spec.family = Family::logit();
  for (const auto& name : gamma_layout.site_local_names(site))
    if (name != kIntercept) spec.covariates.push_back(name);
  return spec;
}

SiteSummary site_outcome_mle_summary(const SiteData& site, const ModelSpec& outcome,
                                     const GlobalLayout& beta_layout) {
  const ModelSpec spec = local_outcome_spec(outcome, beta_layout, site.id);
  const MatrixXd xmat = outcome_design(site.data, spec);
  const FitResult fit = fit_mle(xmat, site.data.y, spec.family);

  SiteSummary out;
  out.site_id = site.id;
  out.n = site.data.n();
  out.beta_pad = zero_pad_vector(fit.beta_hat, site.id, beta_layout);
  out.hessian_beta_pad = zero_pad_matrix(fit.hessian_at_opt, site.id, beta_layout);
  out.a_beta_pad = zero_pad_matrix(
      info_matrix_a(xmat, site.data.y, fit.beta_hat, spec.family), site.id,
      beta_layout);
  out.b_beta_pad = zero_pad_matrix(
      info_matrix_b(xmat, site.data.y, fit.beta_hat, spec.family), site.id,
      beta_layout);
  return out;
}

void add_propensity_mle_summary(SiteSummary& summary, const SiteData& site,
                                const ModelSpec& propensity,
                                const GlobalLayout& gamma_layout) {
  const ModelSpec spec = local_propensity_spec(propensity, gamma_layout, site.id);
  const MatrixXd zmat = propensity_design(site.data, spec);
  const FitResult fit = fit_mle(zmat, site.data.w, Family::logit());
  summary.site_id = site.id;
  summary.n = site.data.n();
  summary.gamma_pad = zero_pad_vector(fit.beta_hat, site.id, gamma_layout);
  summary.hessian_gamma_pad =
      zero_pad_matrix(fit.hessian_at_opt, site.id, gamma_layout);
  summary.a_gamma_mle_pad = zero_pad_matrix(
      info_matrix_a(zmat, site.data.w, fit.beta_hat, Family::logit()), site.id,
      gamma_layout);
  summary.b_gamma_mle_pad = zero_pad_matrix(
      info_matrix_b(zmat, site.data.w, fit.beta_hat, Family::logit()), site.id,
      gamma_layout);
}

SiteSummary site_ipw_summary(const SiteData& site, const ModelSpec& outcome,
                             const GlobalLayout& beta_layout,
                             const ModelSpec& propensity,
                             const GlobalLayout& gamma_layout,
                             const VectorXd& gamma_pad_or_true, bool known,
                             Estimand estimand) {
  const ModelSpec ospec = local_outcome_spec(outcome, beta_layout, site.id);
  const ModelSpec pspec = local_propensity_spec(propensity, gamma_layout, site.id);

  VectorXd gamma_local;
  if (gamma_pad_or_true.size() == gamma_layout.total_dim())
    gamma_local = gather_vector(gamma_pad_or_true, site.id, gamma_layout);
  else
    gamma_local = gamma_pad_or_true;  // already in the site's local order

  PropensityFit prop = known_propensity(site.data, pspec, gamma_local);
  prop.known = known;

  IpwMleFit fit = fit_ipw_mle(site.data, ospec, prop, &pspec, estimand);

  SiteSummary out;
  out.site_id = site.id;
  out.n = site.data.n();
  out.beta_pad = zero_pad_vector(fit.beta_hat, site.id, beta_layout);
  out.hessian_beta_pad =
      zero_pad_matrix(fit.fit.hessian_at_opt, site.id, beta_layout);

  MatrixBundle padded;
  padded.n = fit.bundle.n;
  padded.estimand = fit.bundle.estimand;
  padded.a_beta_varpi =
      zero_pad_matrix(fit.bundle.a_beta_varpi, site.id, beta_layout);
  padded.d_beta_varpi =
      zero_pad_matrix(fit.bundle.d_beta_varpi, site.id, beta_layout);
  if (fit.bundle.has_gamma()) {
    padded.a_gamma = zero_pad_matrix(fit.bundle.a_gamma, site.id, gamma_layout);
    padded.b_gamma = zero_pad_matrix(fit.bundle.b_gamma, site.id, gamma_layout);
    if (estimand == Estimand::ATE) {
      padded.c = zero_pad_cross(fit.bundle.c, site.id, beta_layout, gamma_layout);
    } else {
      padded.c1 =
          zero_pad_cross(fit.bundle.c1, site.id, beta_layout, gamma_layout);
      padded.c2 =
          zero_pad_cross(fit.bundle.c2, site.id, beta_layout, gamma_layout);
    }
  }
  out.bundle = std::move(padded);
  return out;
}

SiteSummary site_aipw_summary(const SiteData& site, const NuisanceModels& nuisances,
                              Estimand estimand) {
  SiteSummary out;
  out.site_id = site.id;
  out.n = site.data.n();
  out.tau = estimate_aipw(site.data, nuisances, estimand);
  out.tau_provenance = nuisances.provenance;
  return out;
}

// --- coordinator-side ---------------------------------------------------------

FederatedEstimate federated_mle(const std::vector<SiteSummary>& input,
                                const GlobalLayout& layout, FederationMode mode,
                                Space space) {
  if (mode == FederationMode::Restricted && !layout.restricted())
    throw Error("restricted federation requires an empty unstable partition");
  const auto summaries = canonical_order(input);
  const auto occ = occupied_slots(summaries, layout);

  const VectorXd point_pad = hessian_weighting(summaries, space, layout);

  std::vector<std::pair<Eigen::Index, MatrixXd>> a_items, b_items;
  for (const auto& s : summaries) {
    a_items.emplace_back(s.n, space == Space::Beta ? s.a_beta_pad : s.a_gamma_mle_pad);
    b_items.emplace_back(s.n, space == Space::Beta ? s.b_beta_pad : s.b_gamma_mle_pad);
  }
  const MatrixXd a_fed = compress(sample_size_weighting(a_items), occ, occ);
  const MatrixXd b_fed = compress(sample_size_weighting(b_items), occ, occ);

  FederatedEstimate out;
  out.point = compress(point_pad, occ);
  out.var_scaled = sandwich_of(a_fed, b_fed, "A_fed");
  out.n_pool = pooled_n(summaries);
  out.scheme = AggregationScheme::Hessian;
  out.mode = mode;
  out.names = slot_names(layout, occ);
  return out;
}

FederatedEstimate federate_ipw(const std::vector<SiteSummary>& input,
                               const GlobalLayout& beta_layout,
                               const GlobalLayout& gamma_layout,
                               bool propensity_known, FederationMode mode) {
  const auto summaries = canonical_order(input);
  const auto occ_b = occupied_slots(summaries, beta_layout);
  const auto occ_g = occupied_slots(summaries, gamma_layout);

  const VectorXd point_pad = hessian_weighting(summaries, Space::Beta, beta_layout);

  // Sample-size weight every bundle matrix, then apply the sandwich on the
  // occupied coordinates.
  std::vector<std::pair<Eigen::Index, MatrixXd>> a_items, d_items, c_items,
      c1_items, c2_items, ag_items, bg_items;
  Estimand estimand = Estimand::ATE;
  for (const auto& s : summaries) {
    if (!s.bundle) throw Error("summary lacks the IPW bundle");
    const MatrixBundle& b = *s.bundle;
    estimand = b.estimand;
    a_items.emplace_back(s.n, b.a_beta_varpi);
    d_items.emplace_back(s.n, b.d_beta_varpi);
    if (!propensity_known) {
      if (!b.has_gamma())
        throw Error("estimated-propensity federation needs gamma blocks");
      ag_items.emplace_back(s.n, b.a_gamma);
      bg_items.emplace_back(s.n, b.b_gamma);
      if (b.estimand == Estimand::ATE)
        c_items.emplace_back(s.n, b.c);
      else {
        c1_items.emplace_back(s.n, b.c1);
        c2_items.emplace_back(s.n, b.c2);
      }
    }
  }

  MatrixBundle fed;
  fed.n = pooled_n(summaries);
  fed.estimand = estimand;
  fed.a_beta_varpi = compress(sample_size_weighting(a_items), occ_b, occ_b);
  fed.d_beta_varpi = compress(sample_size_weighting(d_items), occ_b, occ_b);
  if (!propensity_known) {
    fed.a_gamma = compress(sample_size_weighting(ag_items), occ_g, occ_g);
    fed.b_gamma = compress(sample_size_weighting(bg_items), occ_g, occ_g);
    if (estimand == Estimand::ATE)
      fed.c = compress(sample_size_weighting(c_items), occ_b, occ_g);
    else {
      fed.c1 = compress(sample_size_weighting(c1_items), occ_b, occ_g);
      fed.c2 = compress(sample_size_weighting(c2_items), occ_b, occ_g);
    }
  }

  FederatedEstimate out;
  out.point = compress(point_pad, occ_b);
  out.var_scaled = ipw_mle_variance(fed, propensity_known);
  out.n_pool = fed.n;
  out.scheme = AggregationScheme::Hessian;
  out.mode = mode;
  out.names = slot_names(beta_layout, occ_b);
  return out;
}

FederatedEstimate federate_aipw(const std::vector<SiteSummary>& input,
                                FederationMode mode) {
  const auto summaries = canonical_order(input);
  FederatedEstimate out;
  out.n_pool = pooled_n(summaries);
  out.mode = mode;
  out.names = {"tau"};

  if (mode == FederationMode::Restricted) {
    std::vector<VectorXd> points;
    std::vector<MatrixXd> vars;
    for (const auto& s : summaries) {
      if (!s.tau) throw Error("summary lacks the AIPW share");
      if (s.tau_provenance != NuisanceProvenance::PooledFederated)
        throw ProvenanceError(
            "restricted AIPW federation requires pooled-federated nuisances "
            "(site '" + s.site_id + "' shipped site-local ones)");
      points.push_back(VectorXd::Constant(1, s.tau->tau_hat));
      vars.push_back(MatrixXd::Constant(
          1, 1, s.tau->var_scaled / static_cast<double>(s.n)));
    }
    auto [point, var] = inverse_variance_weighting(points, vars, out.n_pool);
    out.point = point;
    out.var_scaled = var;
    out.scheme = AggregationScheme::InverseVariance;
  } else {
    std::vector<std::pair<Eigen::Index, double>> t_items, v_items;
    for (const auto& s : summaries) {
      if (!s.tau) throw Error("summary lacks the AIPW share");
      t_items.emplace_back(s.n, s.tau->tau_hat);
      v_items.emplace_back(s.n, s.tau->var_scaled);
    }
    out.point = VectorXd::Constant(1, sample_size_weighting(t_items));
    out.var_scaled = MatrixXd::Constant(1, 1, sample_size_weighting(v_items));
    out.scheme = AggregationScheme::SampleSize;
  }
  return out;
}

// --- in-process composed estimators --------------------------------------------

GlobalLayout FederationPlan::beta_layout(const std::vector<SiteData>& sites) const {
  std::vector<std::string> order;
  for (const auto& s : sites) order.push_back(s.id);
  std::sort(order.begin(), order.end());
  if (mode == FederationMode::Restricted)
    return GlobalLayout::all_shared(outcome_coef_names(outcome));
  return GlobalLayout::partition(outcome_coef_names(outcome), unstable_outcome,
                                 order);
}

GlobalLayout FederationPlan::gamma_layout(const std::vector<SiteData>& sites) const {
  std::vector<std::string> order;
  for (const auto& s : sites) order.push_back(s.id);
  std::sort(order.begin(), order.end());
  if (mode == FederationMode::Restricted ||
      propensity_mode != PropensityMode::Unstable)
    return GlobalLayout::all_shared(propensity_coef_names(propensity));
  return GlobalLayout::partition(propensity_coef_names(propensity),
                                 unstable_propensity, order);
}

FederatedEstimate federated_mle_run(const std::vector<SiteData>& sites,
                                    const FederationPlan& plan) {
  const GlobalLayout layout = plan.beta_layout(sites);
  std::vector<SiteSummary> summaries;
  for (const auto& s : sites)
    summaries.push_back(site_outcome_mle_summary(s, plan.outcome, layout));
  return federated_mle(summaries, layout, plan.mode);
}

FederatedEstimate federated_ipw_mle(const std::vector<SiteData>& sites,
                                    const FederationPlan& plan) {
  const GlobalLayout beta_layout = plan.beta_layout(sites);
  const GlobalLayout gamma_layout = plan.gamma_layout(sites);
  const bool known = plan.propensity_mode == PropensityMode::KnownStable;

  VectorXd gamma_fed;
  if (known) {
    if (!plan.known_gamma) throw Error("KnownStable requires known_gamma");
    if (plan.known_gamma->size() != gamma_layout.total_dim())
      throw DimensionError("known_gamma does not match the propensity layout");
    gamma_fed = *plan.known_gamma;
  } else {
    std::vector<SiteSummary> prop_shares;
    for (const auto& s : sites) {
      SiteSummary share;
      add_propensity_mle_summary(share, s, plan.propensity, gamma_layout);
      prop_shares.push_back(std::move(share));
    }
    gamma_fed = hessian_weighting(prop_shares, Space::Gamma, gamma_layout);
  }

  std::vector<SiteSummary> summaries;
  for (const auto& s : sites)
    summaries.push_back(site_ipw_summary(s, plan.outcome, beta_layout,
                                         plan.propensity, gamma_layout,
                                         gamma_fed, known, plan.estimand));
  return federate_ipw(summaries, beta_layout, gamma_layout, known, plan.mode);
}

FederatedEstimate federated_aipw(const std::vector<SiteData>& sites,
                                 const FederationPlan& plan) {
  const Estimand estimand = plan.estimand;

  if (plan.mode == FederationMode::Restricted) {
    // Federate both nuisance models first, then every site scores with the
    // same pooled nuisances.
    const GlobalLayout beta_layout = plan.beta_layout(sites);
    const GlobalLayout gamma_layout = plan.gamma_layout(sites);
    if (!beta_layout.restricted() || !gamma_layout.restricted())
      throw ProvenanceError(
          "restricted AIPW requires fully shared nuisance models");

    std::vector<SiteSummary> model_shares;
    for (const auto& s : sites) {
      SiteSummary share = site_outcome_mle_summary(s, plan.outcome, beta_layout);
      if (plan.propensity_mode != PropensityMode::KnownStable)
        add_propensity_mle_summary(share, s, plan.propensity, gamma_layout);
      model_shares.push_back(std::move(share));
    }
    const VectorXd beta_fed =
        hessian_weighting(model_shares, Space::Beta, beta_layout);
    VectorXd gamma_fed;
    if (plan.propensity_mode == PropensityMode::KnownStable) {
      if (!plan.known_gamma) throw Error("KnownStable requires known_gamma");
      gamma_fed = *plan.known_gamma;
    } else {
      gamma_fed = hessian_weighting(model_shares, Space::Gamma, gamma_layout);
    }

    std::vector<SiteSummary> aipw_shares;
    for (const auto& s : sites) {
      const NuisanceModels nuis =
          make_nuisances(s.data, plan.outcome, beta_fed, plan.propensity,
                         gamma_fed, NuisanceProvenance::PooledFederated);
      aipw_shares.push_back(site_aipw_summary(s, nuis, estimand));
    }
    return federate_aipw(aipw_shares, plan.mode);
  }

  // Unrestricted: every site scores with its own locally fitted nuisances.
  const GlobalLayout beta_layout = plan.beta_layout(sites);
  const GlobalLayout gamma_layout = plan.gamma_layout(sites);
  std::vector<SiteSummary> aipw_shares;
  for (const auto& s : sites)
    aipw_shares.push_back(
        site_local_aipw_summary(s, plan, beta_layout, gamma_layout));
  return federate_aipw(aipw_shares, plan.mode);
}

SiteSummary site_local_aipw_summary(const SiteData& site,
                                    const FederationPlan& plan,
                                    const GlobalLayout& beta_layout,
                                    const GlobalLayout& gamma_layout) {
  const ModelSpec ospec = local_outcome_spec(plan.outcome, beta_layout, site.id);
  const ModelSpec pspec =
      local_propensity_spec(plan.propensity, gamma_layout, site.id);
  const MatrixXd xmat = outcome_design(site.data, ospec);
  const FitResult ofit = fit_mle(xmat, site.data.y, ospec.family);
  VectorXd gamma_local;
  if (plan.propensity_mode == PropensityMode::KnownStable) {
    if (!plan.known_gamma) throw Error("KnownStable requires known_gamma");
    gamma_local = gather_vector(*plan.known_gamma, site.id, gamma_layout);
  } else {
    const MatrixXd zmat = propensity_design(site.data, pspec);
    gamma_local = fit_mle(zmat, site.data.w, Family::logit()).beta_hat;
  }
  const NuisanceModels nuis =
      make_nuisances(site.data, ospec, ofit.beta_hat, pspec, gamma_local,
                     NuisanceProvenance::SiteLocal);
  return site_aipw_summary(site, nuis, plan.estimand);
}

}  // namespace fedci
