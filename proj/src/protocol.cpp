#include "fedci/protocol.hpp"

#include <json.hpp>

namespace fedci {

using nlohmann::json;

namespace {

constexpr const char* kSummarySchema = "fedci.summary/1";
constexpr const char* kCoefficientsSchema = "fedci.coefficients/1";
constexpr const char* kFederatedGammaSchema = "fedci.federated-gamma/1";
constexpr const char* kFederatedNuisancesSchema = "fedci.federated-nuisances/1";

json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw ProtocolError(ProtocolFault::BadMessage, "not a matrix");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return MatrixXd(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j.front().size());
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw ProtocolError(ProtocolFault::BadMessage, "ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json vector_to_json(const VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

VectorXd vector_from_json(const json& j) {
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

bool cross_padding_is_clean(const MatrixXd& padded, const std::string& site_id,
                            const GlobalLayout& row_layout,
                            const GlobalLayout& col_layout) {
  std::vector<bool> row_owned(padded.rows(), false), col_owned(padded.cols(), false);
  for (auto s : row_layout.site_slots(site_id))
    row_owned[static_cast<std::size_t>(s)] = true;
  for (auto s : col_layout.site_slots(site_id))
    col_owned[static_cast<std::size_t>(s)] = true;
  for (Eigen::Index r = 0; r < padded.rows(); ++r)
    for (Eigen::Index c = 0; c < padded.cols(); ++c)
      if ((!row_owned[static_cast<std::size_t>(r)] ||
           !col_owned[static_cast<std::size_t>(c)]) &&
          padded(r, c) != 0.0)
        return false;
  return true;
}

void require_clean(bool ok, const std::string& what) {
  if (!ok)
    throw ProtocolError(ProtocolFault::PaddingViolation,
                        "nonzero entry in a forbidden block of " + what);
}

}  // namespace

const char* to_string(Round round) {
  switch (round) {
    case Round::PropensityUp: return "PropensityUp";
    case Round::PropensityDown: return "PropensityDown";
    case Round::OutcomeUp: return "OutcomeUp";
    default: return "ResultDown";
  }
}

std::string serialize_layout(const GlobalLayout& layout) {
  json j;
  j["schema"] = "fedci.layout/1";
  j["shared"] = layout.shared_names;
  json blocks = json::array();
  for (const auto& [site, names] : layout.per_site_unstable)
    blocks.push_back(json{{"site", site}, {"names", names}});
  j["unstable"] = std::move(blocks);
  return j.dump();
}

GlobalLayout deserialize_layout(const std::string& bytes) {
  const json j = json::parse(bytes);
  GlobalLayout layout;
  layout.shared_names = j.at("shared").get<std::vector<std::string>>();
  for (const auto& block : j.at("unstable"))
    layout.per_site_unstable.emplace_back(
        block.at("site").get<std::string>(),
        block.at("names").get<std::vector<std::string>>());
  return layout;
}

namespace {

json layout_to_json(const GlobalLayout& layout) {
  json j;
  j["shared"] = layout.shared_names;
  json blocks = json::array();
  for (const auto& [site, names] : layout.per_site_unstable)
    blocks.push_back(json{{"site", site}, {"names", names}});
  j["unstable"] = std::move(blocks);
  return j;
}

GlobalLayout layout_from_json(const json& j) {
  GlobalLayout layout;
  layout.shared_names = j.at("shared").get<std::vector<std::string>>();
  for (const auto& block : j.at("unstable"))
    layout.per_site_unstable.emplace_back(
        block.at("site").get<std::string>(),
        block.at("names").get<std::vector<std::string>>());
  return layout;
}

}  // namespace

std::string serialize_summary(const SiteSummary& summary,
                              const GlobalLayout& beta_layout,
                              const GlobalLayout& gamma_layout) {
  json j;
  j["schema"] = kSummarySchema;
  j["site_id"] = summary.site_id;
  j["n"] = summary.n;
  j["beta_fingerprint"] = std::to_string(beta_layout.fingerprint());
  j["gamma_fingerprint"] = std::to_string(gamma_layout.fingerprint());
  j["beta_layout"] = layout_to_json(beta_layout);
  j["gamma_layout"] = layout_to_json(gamma_layout);
  if (summary.has_beta()) {
    j["beta"] = vector_to_json(summary.beta_pad);
    j["hessian_beta"] = matrix_to_json(summary.hessian_beta_pad);
    if (summary.a_beta_pad.size() > 0) {
      j["a_beta"] = matrix_to_json(summary.a_beta_pad);
      j["b_beta"] = matrix_to_json(summary.b_beta_pad);
    }
  }
  if (summary.has_gamma()) {
    j["gamma"] = vector_to_json(summary.gamma_pad);
    j["hessian_gamma"] = matrix_to_json(summary.hessian_gamma_pad);
    if (summary.a_gamma_mle_pad.size() > 0) {
      j["a_gamma_mle"] = matrix_to_json(summary.a_gamma_mle_pad);
      j["b_gamma_mle"] = matrix_to_json(summary.b_gamma_mle_pad);
    }
  }
  if (summary.bundle) {
    const MatrixBundle& b = *summary.bundle;
    json jb;
    jb["estimand"] = to_string(b.estimand);
    jb["n"] = b.n;
    jb["a"] = matrix_to_json(b.a_beta_varpi);
    jb["d"] = matrix_to_json(b.d_beta_varpi);
    if (b.has_gamma()) {
      jb["a_gamma"] = matrix_to_json(b.a_gamma);
      jb["b_gamma"] = matrix_to_json(b.b_gamma);
      if (b.estimand == Estimand::ATE)
        jb["c"] = matrix_to_json(b.c);
      else {
        jb["c1"] = matrix_to_json(b.c1);
        jb["c2"] = matrix_to_json(b.c2);
      }
    }
    j["bundle"] = std::move(jb);
  }
  if (summary.tau) {
    j["tau"] = json{
        {"estimand", to_string(summary.tau->estimand)},
        {"tau_hat", summary.tau->tau_hat},
        {"var_scaled", summary.tau->var_scaled},
        {"n", summary.tau->n},
        {"provenance",
         summary.tau_provenance == NuisanceProvenance::PooledFederated
             ? "pooled"
             : "local"}};
  }
  return j.dump();
}

SiteSummary deserialize_summary(const std::string& bytes,
                                const GlobalLayout& beta_layout,
                                const GlobalLayout& gamma_layout) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    throw ProtocolError(ProtocolFault::BadMessage, e.what());
  }
  if (j.value("schema", "") != kSummarySchema)
    throw ProtocolError(ProtocolFault::VersionMismatch,
                        "unexpected summary schema");
  if (j.at("beta_fingerprint").get<std::string>() !=
          std::to_string(beta_layout.fingerprint()) ||
      j.at("gamma_fingerprint").get<std::string>() !=
          std::to_string(gamma_layout.fingerprint()))
    throw ProtocolError(ProtocolFault::FingerprintMismatch,
                        "layout fingerprint mismatch");

  SiteSummary out;
  out.site_id = j.at("site_id").get<std::string>();
  out.n = j.at("n").get<Eigen::Index>();
  if (out.n < 1)
    throw ProtocolError(ProtocolFault::BadMessage, "summary has n < 1");

  const std::string& site = out.site_id;
  if (j.contains("beta")) {
    out.beta_pad = vector_from_json(j["beta"]);
    out.hessian_beta_pad = matrix_from_json(j.at("hessian_beta"));
    require_clean(padding_is_clean(out.beta_pad, site, beta_layout), "beta");
    require_clean(padding_is_clean(out.hessian_beta_pad, site, beta_layout),
                  "hessian_beta");
    if (j.contains("a_beta")) {
      out.a_beta_pad = matrix_from_json(j["a_beta"]);
      out.b_beta_pad = matrix_from_json(j.at("b_beta"));
      require_clean(padding_is_clean(out.a_beta_pad, site, beta_layout), "a_beta");
      require_clean(padding_is_clean(out.b_beta_pad, site, beta_layout), "b_beta");
    }
  }
  if (j.contains("gamma")) {
    out.gamma_pad = vector_from_json(j["gamma"]);
    out.hessian_gamma_pad = matrix_from_json(j.at("hessian_gamma"));
    require_clean(padding_is_clean(out.gamma_pad, site, gamma_layout), "gamma");
    require_clean(padding_is_clean(out.hessian_gamma_pad, site, gamma_layout),
                  "hessian_gamma");
    if (j.contains("a_gamma_mle")) {
      out.a_gamma_mle_pad = matrix_from_json(j["a_gamma_mle"]);
      out.b_gamma_mle_pad = matrix_from_json(j.at("b_gamma_mle"));
      require_clean(padding_is_clean(out.a_gamma_mle_pad, site, gamma_layout),
                    "a_gamma_mle");
      require_clean(padding_is_clean(out.b_gamma_mle_pad, site, gamma_layout),
                    "b_gamma_mle");
    }
  }
  if (j.contains("bundle")) {
    const json& jb = j["bundle"];
    MatrixBundle b;
    b.estimand =
        jb.at("estimand").get<std::string>() == "att" ? Estimand::ATT : Estimand::ATE;
    b.n = jb.at("n").get<Eigen::Index>();
    b.a_beta_varpi = matrix_from_json(jb.at("a"));
    b.d_beta_varpi = matrix_from_json(jb.at("d"));
    require_clean(padding_is_clean(b.a_beta_varpi, site, beta_layout), "bundle.a");
    require_clean(padding_is_clean(b.d_beta_varpi, site, beta_layout), "bundle.d");
    if (jb.contains("a_gamma")) {
      b.a_gamma = matrix_from_json(jb["a_gamma"]);
      b.b_gamma = matrix_from_json(jb.at("b_gamma"));
      require_clean(padding_is_clean(b.a_gamma, site, gamma_layout),
                    "bundle.a_gamma");
      require_clean(padding_is_clean(b.b_gamma, site, gamma_layout),
                    "bundle.b_gamma");
      if (b.estimand == Estimand::ATE) {
        b.c = matrix_from_json(jb.at("c"));
        require_clean(
            cross_padding_is_clean(b.c, site, beta_layout, gamma_layout),
            "bundle.c");
      } else {
        b.c1 = matrix_from_json(jb.at("c1"));
        b.c2 = matrix_from_json(jb.at("c2"));
        require_clean(
            cross_padding_is_clean(b.c1, site, beta_layout, gamma_layout),
            "bundle.c1");
        require_clean(
            cross_padding_is_clean(b.c2, site, beta_layout, gamma_layout),
            "bundle.c2");
      }
    }
    out.bundle = std::move(b);
  }
  if (j.contains("tau")) {
    const json& jt = j["tau"];
    AipwResult t;
    t.estimand =
        jt.at("estimand").get<std::string>() == "att" ? Estimand::ATT : Estimand::ATE;
    t.tau_hat = jt.at("tau_hat").get<double>();
    t.var_scaled = jt.at("var_scaled").get<double>();
    t.n = jt.at("n").get<Eigen::Index>();
    out.tau = t;
    out.tau_provenance = jt.value("provenance", "local") == "pooled"
                             ? NuisanceProvenance::PooledFederated
                             : NuisanceProvenance::SiteLocal;
  }
  return out;
}

std::string serialize_coefficients(const CoefficientShare& share) {
  json j;
  j["schema"] = kCoefficientsSchema;
  j["site_id"] = share.site_id;
  j["n"] = share.n;
  j["names"] = share.names;
  j["point"] = vector_to_json(share.point);
  j["variance"] = matrix_to_json(share.variance);
  return j.dump();
}

CoefficientShare deserialize_coefficients(const std::string& bytes) {
  const json j = json::parse(bytes);
  if (j.value("schema", "") != kCoefficientsSchema)
    throw ProtocolError(ProtocolFault::VersionMismatch,
                        "unexpected coefficients schema");
  CoefficientShare out;
  out.site_id = j.at("site_id").get<std::string>();
  out.n = j.at("n").get<Eigen::Index>();
  out.names = j.at("names").get<std::vector<std::string>>();
  out.point = vector_from_json(j.at("point"));
  out.variance = matrix_from_json(j.at("variance"));
  return out;
}

SummaryFileKind classify_summary_json(const std::string& bytes) {
  json j;
  try {
    j = json::parse(bytes);
  } catch (const json::exception& e) {
    throw ParseError(e.what());
  }
  const std::string schema = j.value("schema", "");
  if (schema == kSummarySchema) return SummaryFileKind::ModelSummary;
  if (schema == kCoefficientsSchema) return SummaryFileKind::Coefficients;
  if (schema == kFederatedGammaSchema) return SummaryFileKind::FederatedGamma;
  if (schema == kFederatedNuisancesSchema)
    return SummaryFileKind::FederatedNuisances;
  throw ProtocolError(ProtocolFault::VersionMismatch,
                      "unknown summary schema: " + schema);
}

std::pair<GlobalLayout, GlobalLayout> summary_layouts(const std::string& bytes) {
  const json j = json::parse(bytes);
  if (j.value("schema", "") != kSummarySchema)
    throw ProtocolError(ProtocolFault::VersionMismatch,
                        "not a model summary file");
  return {layout_from_json(j.at("beta_layout")),
          layout_from_json(j.at("gamma_layout"))};
}

std::string serialize_federated_nuisances(const FederatedNuisanceShare& share,
                                          const GlobalLayout& beta_layout,
                                          const GlobalLayout& gamma_layout) {
  json j;
  j["schema"] = kFederatedNuisancesSchema;
  j["beta_fingerprint"] = std::to_string(beta_layout.fingerprint());
  j["gamma_fingerprint"] = std::to_string(gamma_layout.fingerprint());
  j["beta"] = vector_to_json(share.beta);
  j["gamma"] = vector_to_json(share.gamma);
  return j.dump();
}

FederatedNuisanceShare deserialize_federated_nuisances(
    const std::string& bytes, const GlobalLayout& beta_layout,
    const GlobalLayout& gamma_layout) {
  const json j = json::parse(bytes);
  if (j.value("schema", "") != kFederatedNuisancesSchema)
    throw ProtocolError(ProtocolFault::VersionMismatch,
                        "unexpected federated-nuisances schema");
  if (j.at("beta_fingerprint").get<std::string>() !=
          std::to_string(beta_layout.fingerprint()) ||
      j.at("gamma_fingerprint").get<std::string>() !=
          std::to_string(gamma_layout.fingerprint()))
    throw ProtocolError(ProtocolFault::FingerprintMismatch,
                        "layout fingerprint mismatch");
  FederatedNuisanceShare out;
  out.beta = vector_from_json(j.at("beta"));
  out.gamma = vector_from_json(j.at("gamma"));
  return out;
}

std::string serialize_federated_gamma(const VectorXd& gamma_pad,
                                      const GlobalLayout& gamma_layout) {
  json j;
  j["schema"] = kFederatedGammaSchema;
  j["gamma_fingerprint"] = std::to_string(gamma_layout.fingerprint());
  j["gamma"] = vector_to_json(gamma_pad);
  return j.dump();
}

VectorXd deserialize_federated_gamma(const std::string& bytes,
                                     const GlobalLayout& gamma_layout) {
  const json j = json::parse(bytes);
  if (j.value("schema", "") != kFederatedGammaSchema)
    throw ProtocolError(ProtocolFault::VersionMismatch,
                        "unexpected federated-gamma schema");
  if (j.at("gamma_fingerprint").get<std::string>() !=
      std::to_string(gamma_layout.fingerprint()))
    throw ProtocolError(ProtocolFault::FingerprintMismatch,
                        "layout fingerprint mismatch");
  return vector_from_json(j.at("gamma"));
}

std::string transcript_to_json(const Transcript& transcript) {
  json out = json::array();
  for (const auto& msg : transcript) {
    out.push_back(json{{"round", to_string(msg.round)},
                       {"site_id", msg.site_id},
                       {"payload_kind", msg.payload_kind},
                       {"protocol_version", msg.protocol_version},
                       {"layout_fingerprint", std::to_string(msg.layout_fingerprint)},
                       {"payload", json::parse(msg.payload_json)}});
  }
  return out.dump(2);
}

// --- session -------------------------------------------------------------------

namespace {

struct SessionContext {
  const CoordinatorConfig& config;
  GlobalLayout beta_layout;
  GlobalLayout gamma_layout;
  std::uint64_t fingerprint;
  Transcript transcript;

  void record(Round round, const std::string& site, const std::string& kind,
              std::string payload) {
    transcript.push_back(RoundMessage{round, site, kind, std::move(payload),
                                      kProtocolVersion, fingerprint});
  }
};

// Every up-message passes through serialize/deserialize so the session result
// is exactly what the wire format can carry.
std::vector<SiteSummary> gather_round(SessionContext& ctx, Round round,
                                      const std::string& kind,
                                      std::vector<SiteHandle>& sites,
                                      const std::function<SiteSummary(SiteHandle&)>& op) {
  std::vector<SiteSummary> received;
  for (auto& site : sites) {
    std::string payload;
    try {
      const SiteSummary share = op(site);
      payload = serialize_summary(share, ctx.beta_layout, ctx.gamma_layout);
    } catch (const ProtocolError&) {
      throw;
    } catch (const std::exception& e) {
      throw ProtocolError(ProtocolFault::SiteFailure,
                          "site '" + site.id() + "' failed: " + e.what());
    }
    ctx.record(round, site.id(), kind, payload);
    received.push_back(
        deserialize_summary(payload, ctx.beta_layout, ctx.gamma_layout));
  }
  return received;
}

void broadcast_result(SessionContext& ctx, std::vector<SiteHandle>& sites,
                      const FederatedEstimate& estimate) {
  json j;
  j["kind"] = "federated_estimate";
  j["point"] = json::array();
  for (Eigen::Index i = 0; i < estimate.point.size(); ++i)
    j["point"].push_back(estimate.point[i]);
  j["names"] = estimate.names;
  j["n_pool"] = estimate.n_pool;
  const std::string payload = j.dump();
  for (auto& site : sites)
    ctx.record(Round::ResultDown, site.id(), "result", payload);
}

}  // namespace

SessionResult run_session(const CoordinatorConfig& config,
                          std::vector<SiteHandle>& sites) {
  if (sites.empty()) throw Error("session needs at least one site");
  std::vector<SiteData> site_data;
  for (const auto& s : sites) site_data.push_back(s.site());

  SessionContext ctx{config,
                     config.plan.beta_layout(site_data),
                     config.plan.gamma_layout(site_data),
                     0,
                     {}};
  ctx.fingerprint =
      ctx.beta_layout.fingerprint() ^ (ctx.gamma_layout.fingerprint() << 1);

  const FederationPlan& plan = config.plan;
  FederatedEstimate estimate;

  switch (config.estimator) {
    case SessionEstimator::Mle: {
      auto summaries = gather_round(
          ctx, Round::OutcomeUp, "outcome_mle", sites, [&](SiteHandle& s) {
            return site_outcome_mle_summary(s.site(), plan.outcome,
                                            ctx.beta_layout);
          });
      estimate = federated_mle(summaries, ctx.beta_layout, plan.mode);
      break;
    }
    case SessionEstimator::IpwMle: {
      const bool known = plan.propensity_mode == PropensityMode::KnownStable;
      VectorXd gamma_fed;
      if (known) {
        if (!plan.known_gamma) throw Error("KnownStable requires known_gamma");
        gamma_fed = *plan.known_gamma;
      } else {
        auto prop_shares = gather_round(
            ctx, Round::PropensityUp, "propensity_mle", sites,
            [&](SiteHandle& s) {
              SiteSummary share;
              add_propensity_mle_summary(share, s.site(), plan.propensity,
                                         ctx.gamma_layout);
              return share;
            });
        gamma_fed = hessian_weighting(prop_shares, Space::Gamma, ctx.gamma_layout);
        const std::string down =
            serialize_federated_gamma(gamma_fed, ctx.gamma_layout);
        for (auto& s : sites)
          ctx.record(Round::PropensityDown, s.id(), "federated_gamma", down);
      }
      auto summaries = gather_round(
          ctx, Round::OutcomeUp, "ipw_outcome", sites, [&](SiteHandle& s) {
            return site_ipw_summary(s.site(), plan.outcome, ctx.beta_layout,
                                    plan.propensity, ctx.gamma_layout, gamma_fed,
                                    known, plan.estimand);
          });
      estimate = federate_ipw(summaries, ctx.beta_layout, ctx.gamma_layout,
                              known, plan.mode);
      break;
    }
    case SessionEstimator::Aipw: {
      if (plan.mode == FederationMode::Restricted) {
        auto model_shares = gather_round(
            ctx, Round::OutcomeUp, "nuisance_mle", sites, [&](SiteHandle& s) {
              SiteSummary share = site_outcome_mle_summary(s.site(), plan.outcome,
                                                           ctx.beta_layout);
              if (plan.propensity_mode != PropensityMode::KnownStable)
                add_propensity_mle_summary(share, s.site(), plan.propensity,
                                           ctx.gamma_layout);
              return share;
            });
        const VectorXd beta_fed =
            hessian_weighting(model_shares, Space::Beta, ctx.beta_layout);
        VectorXd gamma_fed;
        if (plan.propensity_mode == PropensityMode::KnownStable) {
          if (!plan.known_gamma) throw Error("KnownStable requires known_gamma");
          gamma_fed = *plan.known_gamma;
        } else {
          gamma_fed =
              hessian_weighting(model_shares, Space::Gamma, ctx.gamma_layout);
        }
        {
          json down;
          down["kind"] = "federated_nuisances";
          down["beta"] = json::array();
          for (Eigen::Index i = 0; i < beta_fed.size(); ++i)
            down["beta"].push_back(beta_fed[i]);
          down["gamma"] = json::array();
          for (Eigen::Index i = 0; i < gamma_fed.size(); ++i)
            down["gamma"].push_back(gamma_fed[i]);
          const std::string payload = down.dump();
          for (auto& s : sites)
            ctx.record(Round::PropensityDown, s.id(), "federated_nuisances",
                       payload);
        }
        auto aipw_shares = gather_round(
            ctx, Round::OutcomeUp, "aipw", sites, [&](SiteHandle& s) {
              const NuisanceModels nuis = make_nuisances(
                  s.site().data, plan.outcome, beta_fed, plan.propensity,
                  gamma_fed, NuisanceProvenance::PooledFederated);
              return site_aipw_summary(s.site(), nuis, plan.estimand);
            });
        estimate = federate_aipw(aipw_shares, plan.mode);
      } else {
        auto aipw_shares = gather_round(
            ctx, Round::OutcomeUp, "aipw", sites, [&](SiteHandle& s) {
              return site_local_aipw_summary(s.site(), plan,
                                             ctx.beta_layout, ctx.gamma_layout);
            });
        estimate = federate_aipw(aipw_shares, plan.mode);
      }
      break;
    }
  }

  broadcast_result(ctx, sites, estimate);
  return SessionResult{std::move(estimate), std::move(ctx.transcript)};
}

}  // namespace fedci
