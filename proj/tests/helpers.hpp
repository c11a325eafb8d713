#ifndef FEDCI_TESTS_HELPERS_HPP
#define FEDCI_TESTS_HELPERS_HPP

#include <functional>

#include "fedci/glm.hpp"
#include "fedci/simulation.hpp"

namespace fedci::testing {

// Central finite differences of a scalar function.
inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f,
                            const VectorXd& at, double h = 1e-5) {
  VectorXd g(at.size());
  for (Eigen::Index j = 0; j < at.size(); ++j) {
    VectorXd hi = at, lo = at;
    hi[j] += h;
    lo[j] -= h;
    g[j] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

inline MatrixXd fd_jacobian(const std::function<VectorXd(const VectorXd&)>& f,
                            const VectorXd& at, double h = 1e-5) {
  const VectorXd f0 = f(at);
  MatrixXd jac(f0.size(), at.size());
  for (Eigen::Index j = 0; j < at.size(); ++j) {
    VectorXd hi = at, lo = at;
    hi[j] += h;
    lo[j] -= h;
    jac.col(j) = (f(hi) - f(lo)) / (2.0 * h);
  }
  return jac;
}

// Derivative-free coordinate refinement of the log-likelihood; slow but
// independent of the Newton path it checks.
inline VectorXd coordinate_refine_mle(
    const std::function<double(const VectorXd&)>& loglik, VectorXd beta,
    double initial_step = 0.5, int sweeps = 200) {
  double step = initial_step;
  double best = loglik(beta);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    bool improved = false;
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      for (double direction : {+1.0, -1.0}) {
        VectorXd cand = beta;
        cand[j] += direction * step;
        const double value = loglik(cand);
        if (value > best) {
          best = value;
          beta = cand;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
    if (step < 1e-10) break;
  }
  return beta;
}

inline double min_eigenvalue(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline Dataset small_dgp(Eigen::Index n, std::uint64_t seed) {
  DgpConfig config = DgpConfig::single_covariate();
  config.n_pool = n;
  config.seed = seed;
  return generate_dgp(config);
}

}  // namespace fedci::testing

#endif
