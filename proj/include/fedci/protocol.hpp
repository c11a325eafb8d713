#ifndef FEDCI_PROTOCOL_HPP
#define FEDCI_PROTOCOL_HPP

#include <string>

#include "fedci/federation.hpp"

namespace fedci {

inline constexpr const char* kProtocolVersion = "fedci/1";

// The only things that ever cross the site boundary: padded coefficient
// vectors, padded curvature/variance matrices, counts, and effect/variance
// pairs. The message schema has no row-level fields by construction.
enum class Round { PropensityUp, PropensityDown, OutcomeUp, ResultDown };

const char* to_string(Round round);

struct RoundMessage {
  Round round;
  std::string site_id;      // sender or recipient
  std::string payload_kind; // e.g. "propensity_mle", "ipw_outcome", "aipw"
  std::string payload_json;
  std::string protocol_version = kProtocolVersion;
  std::uint64_t layout_fingerprint = 0;
};

using Transcript = std::vector<RoundMessage>;

std::string transcript_to_json(const Transcript& transcript);

// --- summary serialization ---------------------------------------------------

// Self-describing JSON; doubles survive a round trip bit-exactly. The
// deserializer revalidates the zero-padding pattern against the layouts.
std::string serialize_summary(const SiteSummary& summary,
                              const GlobalLayout& beta_layout,
                              const GlobalLayout& gamma_layout);
SiteSummary deserialize_summary(const std::string& bytes,
                                const GlobalLayout& beta_layout,
                                const GlobalLayout& gamma_layout);

std::string serialize_layout(const GlobalLayout& layout);
GlobalLayout deserialize_layout(const std::string& bytes);

// A (point, variance, n) share for meta-analysis style IVW federation of
// externally produced coefficients.
struct CoefficientShare {
  std::string site_id;
  Eigen::Index n = 0;
  std::vector<std::string> names;
  VectorXd point;
  MatrixXd variance;  // finite-sample variance of `point`
};
std::string serialize_coefficients(const CoefficientShare& share);
CoefficientShare deserialize_coefficients(const std::string& bytes);

// Generic summary-file classifier for the offline pipeline.
enum class SummaryFileKind {
  ModelSummary,
  Coefficients,
  FederatedGamma,
  FederatedNuisances,
};
SummaryFileKind classify_summary_json(const std::string& bytes);

std::string serialize_federated_gamma(const VectorXd& gamma_pad,
                                      const GlobalLayout& gamma_layout);
VectorXd deserialize_federated_gamma(const std::string& bytes,
                                     const GlobalLayout& gamma_layout);

// Federated nuisance parameters for the restricted AIPW down-round.
struct FederatedNuisanceShare {
  VectorXd beta;
  VectorXd gamma;
};
std::string serialize_federated_nuisances(const FederatedNuisanceShare& share,
                                          const GlobalLayout& beta_layout,
                                          const GlobalLayout& gamma_layout);
FederatedNuisanceShare deserialize_federated_nuisances(
    const std::string& bytes, const GlobalLayout& beta_layout,
    const GlobalLayout& gamma_layout);

// The layouts a summary file was built against (embedded alongside the
// fingerprints so the offline federate step is self-contained).
std::pair<GlobalLayout, GlobalLayout> summary_layouts(const std::string& bytes);

// --- session orchestration -----------------------------------------------------

// In-process site handle: owns its rows, answers round requests with
// summaries only.
class SiteHandle {
 public:
  SiteHandle(std::string id, Dataset data)
      : site_(SiteData{std::move(id), std::move(data)}) {}

  const std::string& id() const { return site_.id; }
  Eigen::Index n() const { return site_.data.n(); }
  const SiteData& site() const { return site_; }

 private:
  SiteData site_;
};

enum class SessionEstimator { Mle, IpwMle, Aipw };

struct CoordinatorConfig {
  SessionEstimator estimator = SessionEstimator::Mle;
  FederationPlan plan;
};

struct SessionResult {
  FederatedEstimate estimate;
  Transcript transcript;
};

// Executes the round schedule over serialized messages:
//   MLE                  : OutcomeUp
//   IPW-MLE (estimated)  : PropensityUp, PropensityDown, OutcomeUp
//   IPW-MLE (known)      : OutcomeUp
//   AIPW restricted      : OutcomeUp (both models), PropensityDown, OutcomeUp
//   AIPW unrestricted    : OutcomeUp (tau shares)
// plus one ResultDown per site. A site failure aborts the session.
SessionResult run_session(const CoordinatorConfig& config,
                          std::vector<SiteHandle>& sites);

}  // namespace fedci

#endif  // FEDCI_PROTOCOL_HPP
