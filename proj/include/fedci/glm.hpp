#ifndef FEDCI_GLM_HPP
#define FEDCI_GLM_HPP

#include <optional>

#include "fedci/types.hpp"

namespace fedci {

// Result of a (weighted) maximum-likelihood fit. hessian_at_opt is the
// second derivative of the weighted log-likelihood at beta_hat (so it is
// negative definite at a strict interior optimum) at the family's configured
// dispersion; it scales with the sample size.
struct FitResult {
  VectorXd beta_hat;
  MatrixXd hessian_at_opt;
  bool converged = false;
  int iterations = 0;
  double final_gradient_norm = std::numeric_limits<double>::infinity();
  bool separation_flag = false;
  double dispersion_hat = 1.0;  // weighted RSS / sum(weights), LinearGaussian
};

// All functions below take the design matrix directly ("xmat" rows are
// x-tilde in the chosen layout) plus the response; weights default to ones.
// For Logit, the response enters through y only; w is part of the design.

double log_likelihood(const MatrixXd& xmat, const VectorXd& y,
                      const VectorXd& beta, const Family& family,
                      const VectorXd* weights = nullptr);

VectorXd score(const MatrixXd& xmat, const VectorXd& y, const VectorXd& beta,
               const Family& family, const VectorXd* weights = nullptr);

MatrixXd hessian(const MatrixXd& xmat, const VectorXd& y, const VectorXd& beta,
                 const Family& family, const VectorXd* weights = nullptr);

struct FitOptions {
  double gradient_tol = 1e-8;  // sup-norm
  int max_iterations = 100;
  int max_halvings = 30;
};

FitResult fit_mle(const MatrixXd& xmat, const VectorXd& y, const Family& family,
                  const VectorXd* weights = nullptr,
                  const VectorXd* init = nullptr, const FitOptions& opts = {});

// Sandwich A^-1 B A^-1 with A, B per-observation averages of the Table-style
// curvature and score outer products at beta (not multiplied by n).
MatrixXd robust_variance(const MatrixXd& xmat, const VectorXd& y,
                         const VectorXd& beta, const Family& family,
                         const VectorXd* weights = nullptr);

// Per-observation average of -d^2 loglik (A) and of score outer products (B).
MatrixXd info_matrix_a(const MatrixXd& xmat, const VectorXd& y,
                       const VectorXd& beta, const Family& family,
                       const VectorXd* weights = nullptr);
MatrixXd info_matrix_b(const MatrixXd& xmat, const VectorXd& y,
                       const VectorXd& beta, const Family& family,
                       const VectorXd* weights = nullptr);

double estimate_dispersion(const MatrixXd& xmat, const VectorXd& y,
                           const VectorXd& beta,
                           const VectorXd* weights = nullptr);

// Numerically stable logistic helpers.
inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double log_sigmoid(double t) {  // log(sigma(t))
  if (t >= 0.0) return -std::log1p(std::exp(-t));
  return t - std::log1p(std::exp(t));
}

}  // namespace fedci

#endif  // FEDCI_GLM_HPP
