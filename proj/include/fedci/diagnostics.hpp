#ifndef FEDCI_DIAGNOSTICS_HPP
#define FEDCI_DIAGNOSTICS_HPP

#include <map>
#include <optional>

#include "fedci/types.hpp"

namespace fedci {

struct StabilityTestResult {
  double t2 = 0.0;
  Eigen::Index dof = 0;
  double p_value = 1.0;
  std::map<double, bool> reject_at;  // conventional levels -> rejected
};

// Two-sample coefficient stability test. var_a/var_b are the per-observation
// asymptotic variances; the quadratic form is weighted by the estimated
// variance of the difference, var_a/n_a + var_b/n_b, and referred to a
// chi-square with |subset| degrees of freedom.
StabilityTestResult hotelling_stability_test(
    const VectorXd& beta_a, const MatrixXd& var_a, Eigen::Index n_a,
    const VectorXd& beta_b, const MatrixXd& var_b, Eigen::Index n_b,
    const std::vector<Eigen::Index>* subset = nullptr);

// Upper tail of chi-square(dof) at x.
double chi_squared_upper_tail(double x, Eigen::Index dof);

struct PartitionProposal {
  std::vector<std::string> shared;
  std::vector<std::string> unstable;
  double full_test_p = 1.0;
  std::map<std::string, double> per_coefficient_p;
  std::optional<double> remainder_p;  // joint re-test of the surviving subset
};

// Greedy, advisory-only: full test; on rejection, per-coefficient tests flag
// unstable names at `alpha`, then the remainder is re-tested jointly.
// Coefficients present at only one site (per the masks) are unstable
// automatically and excluded from testing.
PartitionProposal suggest_partition(
    const std::vector<std::string>& names, const VectorXd& beta_a,
    const MatrixXd& var_a, Eigen::Index n_a, const VectorXd& beta_b,
    const MatrixXd& var_b, Eigen::Index n_b, double alpha,
    const std::vector<bool>* present_a = nullptr,
    const std::vector<bool>* present_b = nullptr);

// More than two sites: each site is tested pairwise against the first one at
// a Bonferroni-adjusted level alpha/(D-1).
struct SiteCoefficients {
  VectorXd beta;
  MatrixXd var_scaled;
  Eigen::Index n = 0;
};
struct StabilityScan {
  std::vector<StabilityTestResult> pairwise;  // site k vs site 0, k = 1..D-1
  double adjusted_alpha = 0.0;
  bool any_rejection = false;
};
StabilityScan stability_scan(const std::vector<SiteCoefficients>& sites,
                             double alpha);

}  // namespace fedci

#endif  // FEDCI_DIAGNOSTICS_HPP
