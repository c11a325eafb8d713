#ifndef FEDCI_FEDERATION_HPP
#define FEDCI_FEDERATION_HPP

#include <optional>

#include "fedci/aipw.hpp"
#include "fedci/layout.hpp"

namespace fedci {

enum class FederationMode { Restricted, Unrestricted };
enum class AggregationScheme { Hessian, SampleSize, InverseVariance };
enum class PropensityMode { KnownStable, EstimatedStable, Unstable };

inline const char* to_string(FederationMode m) {
  return m == FederationMode::Restricted ? "restricted" : "unrestricted";
}

// Everything a site ships. Total-scale Hessians sit next to per-observation
// A/B/bundle averages; federation rescales explicitly via n. All padded
// objects are in the global layouts; entries outside the site's blocks are
// exactly zero.
struct SiteSummary {
  std::string site_id;
  Eigen::Index n = 0;

  // Outcome-model MLE share.
  VectorXd beta_pad;
  MatrixXd hessian_beta_pad;  // d^2 loglik at beta_hat, total scale
  MatrixXd a_beta_pad;        // per-obs -d^2/n
  MatrixXd b_beta_pad;        // per-obs score outer products

  // Propensity-model MLE share.
  VectorXd gamma_pad;
  MatrixXd hessian_gamma_pad;
  MatrixXd a_gamma_mle_pad;
  MatrixXd b_gamma_mle_pad;

  // IPW-MLE share: weighted Hessian plus the padded variance bundle.
  std::optional<MatrixBundle> bundle;

  // AIPW share; restricted federation insists on pooled-federated nuisances.
  std::optional<AipwResult> tau;
  NuisanceProvenance tau_provenance = NuisanceProvenance::SiteLocal;

  bool has_beta() const { return beta_pad.size() > 0; }
  bool has_gamma() const { return gamma_pad.size() > 0; }
};

struct FederatedEstimate {
  VectorXd point;      // occupied coordinates only (scalar tau -> 1-dim)
  MatrixXd var_scaled; // per-observation asymptotic variance
  Eigen::Index n_pool = 0;
  AggregationScheme scheme = AggregationScheme::Hessian;
  FederationMode mode = FederationMode::Restricted;
  std::vector<std::string> names;  // names of the occupied coordinates

  double se(Eigen::Index j) const {
    return std::sqrt(var_scaled(j, j) / static_cast<double>(n_pool));
  }
  Eigen::Index coef(const std::string& name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return static_cast<Eigen::Index>(j);
    throw Error("no coefficient named " + name);
  }
};

// --- aggregation primitives ------------------------------------------------

enum class Space { Beta, Gamma };

// (sum_k H_pad_k)^-1 (sum_k H_pad_k beta_pad_k) solved on the occupied
// principal submatrix; unoccupied coordinates come back as NaN ("absent").
VectorXd hessian_weighting(const std::vector<SiteSummary>& summaries,
                           Space space, const GlobalLayout& layout);

template <typename T>
T sample_size_weighting(const std::vector<std::pair<Eigen::Index, T>>& items) {
  if (items.empty()) throw Error("nothing to weight");
  double n_pool = 0.0;
  for (const auto& [n, value] : items) n_pool += static_cast<double>(n);
  T out = (static_cast<double>(items.front().first) / n_pool) *
          items.front().second;
  for (std::size_t k = 1; k < items.size(); ++k)
    out += (static_cast<double>(items[k].first) / n_pool) * items[k].second;
  return out;
}

// Fixed-effects pooling. `variances` are finite-sample (unscaled) variances
// of the points; the returned variance is n_pool (sum V_k^-1)^-1, i.e. the
// per-observation convention used throughout.
std::pair<VectorXd, MatrixXd> inverse_variance_weighting(
    const std::vector<VectorXd>& points, const std::vector<MatrixXd>& variances,
    Eigen::Index n_pool);

// --- site-side summary producers -------------------------------------------

struct SiteData {
  std::string id;
  Dataset data;
};

// Which covariates each site's local model uses is derived from the layout:
// shared block plus the site's own unstable block.
ModelSpec local_outcome_spec(const ModelSpec& full, const GlobalLayout& beta_layout,
                             const std::string& site);
ModelSpec local_propensity_spec(const ModelSpec& full,
                                const GlobalLayout& gamma_layout,
                                const std::string& site);

SiteSummary site_outcome_mle_summary(const SiteData& site, const ModelSpec& outcome,
                                     const GlobalLayout& beta_layout);
// Adds the propensity-model MLE share onto `summary`.
void add_propensity_mle_summary(SiteSummary& summary, const SiteData& site,
                                const ModelSpec& propensity,
                                const GlobalLayout& gamma_layout);

// IPW-MLE round-2 share: fit with the federated (or known true) propensity,
// ship weighted Hessian, coefficients and the padded variance bundle.
SiteSummary site_ipw_summary(const SiteData& site, const ModelSpec& outcome,
                             const GlobalLayout& beta_layout,
                             const ModelSpec& propensity,
                             const GlobalLayout& gamma_layout,
                             const VectorXd& gamma_pad_or_true, bool known,
                             Estimand estimand);

SiteSummary site_aipw_summary(const SiteData& site, const NuisanceModels& nuisances,
                              Estimand estimand);

// --- coordinator-side estimators --------------------------------------------

// Point by Hessian weighting, variance A^-1 B A^-1 with A, B sample-size
// weighted. Works on outcome shares (Space::Beta) or propensity shares.
FederatedEstimate federated_mle(const std::vector<SiteSummary>& summaries,
                                const GlobalLayout& layout, FederationMode mode,
                                Space space = Space::Beta);

FederatedEstimate federate_ipw(const std::vector<SiteSummary>& summaries,
                               const GlobalLayout& beta_layout,
                               const GlobalLayout& gamma_layout,
                               bool propensity_known, FederationMode mode);

// Restricted: inverse variance weighting (requires PooledFederated
// provenance, enforced by the callers that build the summaries).
// Unrestricted: sample size weighting of both point and variance.
FederatedEstimate federate_aipw(const std::vector<SiteSummary>& summaries,
                                FederationMode mode);

// --- in-process composed estimators -----------------------------------------

struct FederationPlan {
  ModelSpec outcome;
  ModelSpec propensity;
  FederationMode mode = FederationMode::Restricted;
  std::map<std::string, std::vector<std::string>> unstable_outcome;
  std::map<std::string, std::vector<std::string>> unstable_propensity;
  Estimand estimand = Estimand::ATE;
  PropensityMode propensity_mode = PropensityMode::EstimatedStable;
  std::optional<VectorXd> known_gamma;  // KnownStable: truth on the shared design

  GlobalLayout beta_layout(const std::vector<SiteData>& sites) const;
  GlobalLayout gamma_layout(const std::vector<SiteData>& sites) const;
};

FederatedEstimate federated_mle_run(const std::vector<SiteData>& sites,
                                    const FederationPlan& plan);
FederatedEstimate federated_ipw_mle(const std::vector<SiteData>& sites,
                                    const FederationPlan& plan);
FederatedEstimate federated_aipw(const std::vector<SiteData>& sites,
                                 const FederationPlan& plan);

// Unrestricted AIPW share: nuisances fitted on the site's own rows.
SiteSummary site_local_aipw_summary(const SiteData& site,
                                    const FederationPlan& plan,
                                    const GlobalLayout& beta_layout,
                                    const GlobalLayout& gamma_layout);

}  // namespace fedci

#endif  // FEDCI_FEDERATION_HPP
