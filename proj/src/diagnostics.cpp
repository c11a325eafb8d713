#include "fedci/diagnostics.hpp"

#include <Eigen/LU>
#include <boost/math/distributions/chi_squared.hpp>

namespace fedci {

double chi_squared_upper_tail(double x, Eigen::Index dof) {
  if (x <= 0.0) return 1.0;
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::cdf(boost::math::complement(dist, x));
}

StabilityTestResult hotelling_stability_test(
    const VectorXd& beta_a, const MatrixXd& var_a, Eigen::Index n_a,
    const VectorXd& beta_b, const MatrixXd& var_b, Eigen::Index n_b,
    const std::vector<Eigen::Index>* subset) {
  const Eigen::Index p = beta_a.size();
  if (beta_b.size() != p || var_a.rows() != p || var_b.rows() != p)
    throw DimensionError("stability test inputs do not align");

  std::vector<Eigen::Index> idx;
  if (subset) {
    idx = *subset;
  } else {
    idx.resize(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) idx[static_cast<std::size_t>(j)] = j;
  }
  const Eigen::Index m = static_cast<Eigen::Index>(idx.size());

  VectorXd delta(m);
  MatrixXd weight(m, m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto ir = idx[static_cast<std::size_t>(r)];
    delta[r] = beta_a[ir] - beta_b[ir];
    for (Eigen::Index c = 0; c < m; ++c) {
      const auto ic = idx[static_cast<std::size_t>(c)];
      weight(r, c) = var_a(ir, ic) / static_cast<double>(n_a) +
                     var_b(ir, ic) / static_cast<double>(n_b);
    }
  }

  Eigen::FullPivLU<MatrixXd> lu(weight);
  if (!lu.isInvertible())
    throw SingularMatrixError("singular weight matrix in stability test");

  StabilityTestResult out;
  out.t2 = delta.dot(lu.solve(delta));
  out.dof = m;
  out.p_value = chi_squared_upper_tail(out.t2, out.dof);
  for (double level : {0.10, 0.05, 0.01})
    out.reject_at[level] = out.p_value < level;
  return out;
}

StabilityScan stability_scan(const std::vector<SiteCoefficients>& sites,
                             double alpha) {
  if (sites.size() < 2) throw Error("stability scan needs at least two sites");
  StabilityScan out;
  out.adjusted_alpha = alpha / static_cast<double>(sites.size() - 1);
  const auto& ref = sites.front();
  for (std::size_t k = 1; k < sites.size(); ++k) {
    auto result = hotelling_stability_test(ref.beta, ref.var_scaled, ref.n,
                                           sites[k].beta, sites[k].var_scaled,
                                           sites[k].n);
    if (result.p_value < out.adjusted_alpha) out.any_rejection = true;
    out.pairwise.push_back(std::move(result));
  }
  return out;
}

PartitionProposal suggest_partition(
    const std::vector<std::string>& names, const VectorXd& beta_a,
    const MatrixXd& var_a, Eigen::Index n_a, const VectorXd& beta_b,
    const MatrixXd& var_b, Eigen::Index n_b, double alpha,
    const std::vector<bool>* present_a, const std::vector<bool>* present_b) {
  const Eigen::Index p = beta_a.size();
  if (static_cast<Eigen::Index>(names.size()) != p)
    throw DimensionError("names do not match coefficients");

  PartitionProposal out;
  std::vector<Eigen::Index> testable;
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    const bool in_a = !present_a || (*present_a)[sj];
    const bool in_b = !present_b || (*present_b)[sj];
    if (in_a && in_b)
      testable.push_back(j);
    else
      out.unstable.push_back(names[sj]);  // unique to one site
  }

  if (testable.empty()) return out;

  const auto full =
      hotelling_stability_test(beta_a, var_a, n_a, beta_b, var_b, n_b, &testable);
  out.full_test_p = full.p_value;
  if (full.p_value >= alpha) {
    for (auto j : testable)
      out.shared.push_back(names[static_cast<std::size_t>(j)]);
    return out;
  }

  std::vector<Eigen::Index> survivors;
  for (auto j : testable) {
    std::vector<Eigen::Index> one{j};
    const auto single =
        hotelling_stability_test(beta_a, var_a, n_a, beta_b, var_b, n_b, &one);
    out.per_coefficient_p[names[static_cast<std::size_t>(j)]] = single.p_value;
    if (single.p_value < alpha)
      out.unstable.push_back(names[static_cast<std::size_t>(j)]);
    else
      survivors.push_back(j);
  }
  if (!survivors.empty()) {
    const auto rest = hotelling_stability_test(beta_a, var_a, n_a, beta_b, var_b,
                                               n_b, &survivors);
    out.remainder_p = rest.p_value;
    for (auto j : survivors)
      out.shared.push_back(names[static_cast<std::size_t>(j)]);
  }
  return out;
}

}  // namespace fedci
