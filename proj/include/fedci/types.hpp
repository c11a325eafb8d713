#ifndef FEDCI_TYPES_HPP
#define FEDCI_TYPES_HPP

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedci {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

class OverlapError : public Error {
 public:
  using Error::Error;
};

class ProvenanceError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

enum class ProtocolFault {
  VersionMismatch,
  FingerprintMismatch,
  PaddingViolation,
  LayoutDisagreement,
  SiteFailure,
  BadMessage,
};

class ProtocolError : public Error {
 public:
  ProtocolError(ProtocolFault fault, const std::string& msg)
      : Error(msg), fault(fault) {}
  ProtocolFault fault;
};

// ---------------------------------------------------------------------------
// Model families
// ---------------------------------------------------------------------------

enum class FamilyKind { Logit, LinearGaussian };

// Outcome density family. For LinearGaussian the dispersion sigma^2 is a
// fixed nuisance configured by the caller (default 1); it scales the
// log-likelihood but not the maximizer.
struct Family {
  FamilyKind kind = FamilyKind::Logit;
  double dispersion = 1.0;  // sigma^2_e, LinearGaussian only

  static Family logit() { return Family{FamilyKind::Logit, 1.0}; }
  static Family linear_gaussian(double sigma2 = 1.0) {
    if (!(sigma2 > 0.0)) throw Error("dispersion must be > 0");
    return Family{FamilyKind::LinearGaussian, sigma2};
  }
};

enum class Estimand { ATE, ATT };

inline const char* to_string(Estimand e) {
  return e == Estimand::ATE ? "ate" : "att";
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

// One site's rows: raw covariates (no intercept, no treatment column),
// a binary treatment vector and an outcome vector.
struct Dataset {
  MatrixXd x;                                // n x d
  VectorXd w;                                // treatment, entries in {0,1}
  VectorXd y;                                // outcome (binary for Logit)
  std::vector<std::string> covariate_names;  // size d

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }

  void validate() const {
    if (w.size() != x.rows() || y.size() != x.rows())
      throw DimensionError("dataset columns have inconsistent lengths");
    if (static_cast<Eigen::Index>(covariate_names.size()) != x.cols())
      throw DimensionError("covariate_names does not match x");
    if (!x.allFinite() || !w.allFinite() || !y.allFinite())
      throw Error("non-finite values in dataset");
    for (Eigen::Index i = 0; i < w.size(); ++i)
      if (w[i] != 0.0 && w[i] != 1.0)
        throw Error("treatment must be 0/1");
  }

  Eigen::Index column(const std::string& name) const {
    for (std::size_t j = 0; j < covariate_names.size(); ++j)
      if (covariate_names[j] == name) return static_cast<Eigen::Index>(j);
    throw Error("unknown covariate: " + name);
  }
};

// Selects the covariates that enter a model. The design matrix carries a
// leading intercept column; outcome designs additionally carry the treatment
// column right after it, so the treatment coefficient sits at index 1.
struct ModelSpec {
  Family family;
  std::vector<std::string> covariates;
};

// Coefficient-space names for a spec. kIntercept/kTreatment are reserved
// names that cannot collide with CSV column names in practice.
inline constexpr const char* kIntercept = "(const)";
inline constexpr const char* kTreatment = "(treat)";

inline std::vector<std::string> outcome_coef_names(const ModelSpec& spec) {
  std::vector<std::string> names{kIntercept, kTreatment};
  names.insert(names.end(), spec.covariates.begin(), spec.covariates.end());
  return names;
}

inline std::vector<std::string> propensity_coef_names(const ModelSpec& spec) {
  std::vector<std::string> names{kIntercept};
  names.insert(names.end(), spec.covariates.begin(), spec.covariates.end());
  return names;
}

// Design matrix [1, (w,) x_selected] for the given spec.
MatrixXd outcome_design(const Dataset& data, const ModelSpec& spec);
MatrixXd propensity_design(const Dataset& data, const ModelSpec& spec);

}  // namespace fedci

#endif  // FEDCI_TYPES_HPP
