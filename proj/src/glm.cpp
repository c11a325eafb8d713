#include "fedci/glm.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

namespace fedci {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_inputs(const MatrixXd& xmat, const VectorXd& y, const VectorXd& beta,
                  const VectorXd* weights) {
  if (y.size() != xmat.rows())
    throw DimensionError("y length does not match design rows");
  if (beta.size() != xmat.cols())
    throw DimensionError("beta length does not match design width");
  if (weights && weights->size() != xmat.rows())
    throw DimensionError("weights length does not match design rows");
  if (!xmat.allFinite() || !y.allFinite() || !beta.allFinite())
    throw Error("non-finite values in data or beta");
  if (weights && !(weights->array() >= 0.0).all())
    throw Error("weights must be nonnegative");
}

}  // namespace

MatrixXd outcome_design(const Dataset& data, const ModelSpec& spec) {
  MatrixXd xt(data.n(), 2 + static_cast<Eigen::Index>(spec.covariates.size()));
  xt.col(0).setOnes();
  xt.col(1) = data.w;
  for (std::size_t j = 0; j < spec.covariates.size(); ++j)
    xt.col(2 + static_cast<Eigen::Index>(j)) = data.x.col(data.column(spec.covariates[j]));
  return xt;
}

MatrixXd propensity_design(const Dataset& data, const ModelSpec& spec) {
  MatrixXd xt(data.n(), 1 + static_cast<Eigen::Index>(spec.covariates.size()));
  xt.col(0).setOnes();
  for (std::size_t j = 0; j < spec.covariates.size(); ++j)
    xt.col(1 + static_cast<Eigen::Index>(j)) = data.x.col(data.column(spec.covariates[j]));
  return xt;
}

double log_likelihood(const MatrixXd& xmat, const VectorXd& y,
                      const VectorXd& beta, const Family& family,
                      const VectorXd* weights) {
  check_inputs(xmat, y, beta, weights);
  const VectorXd eta = xmat * beta;
  double ll = 0.0;
  if (family.kind == FamilyKind::Logit) {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double wi = weights ? (*weights)[i] : 1.0;
      // y*log(p) + (1-y)*log(1-p) = log(sigma(t)) - (1-y)*t, stable form
      ll += wi * (y[i] * log_sigmoid(eta[i]) +
                  (1.0 - y[i]) * log_sigmoid(-eta[i]));
    }
  } else {
    const double s2 = family.dispersion;
    const double c = -0.5 * std::log(kTwoPi * s2);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double wi = weights ? (*weights)[i] : 1.0;
      const double r = y[i] - eta[i];
      ll += wi * (c - 0.5 * r * r / s2);
    }
  }
  return ll;
}

VectorXd score(const MatrixXd& xmat, const VectorXd& y, const VectorXd& beta,
               const Family& family, const VectorXd* weights) {
  check_inputs(xmat, y, beta, weights);
  const VectorXd eta = xmat * beta;
  VectorXd resid(y.size());
  if (family.kind == FamilyKind::Logit) {
    for (Eigen::Index i = 0; i < y.size(); ++i)
      resid[i] = y[i] - sigmoid(eta[i]);
  } else {
    resid = (y - eta) / family.dispersion;
  }
  if (weights) resid.array() *= weights->array();
  return xmat.transpose() * resid;
}

MatrixXd hessian(const MatrixXd& xmat, const VectorXd& y, const VectorXd& beta,
                 const Family& family, const VectorXd* weights) {
  check_inputs(xmat, y, beta, weights);
  VectorXd diag(y.size());
  if (family.kind == FamilyKind::Logit) {
    const VectorXd eta = xmat * beta;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double p = sigmoid(eta[i]);
      diag[i] = p * (1.0 - p);
    }
  } else {
    diag.setConstant(1.0 / family.dispersion);
  }
  if (weights) diag.array() *= weights->array();
  MatrixXd h = -(xmat.transpose() * diag.asDiagonal() * xmat);
  return 0.5 * (h + h.transpose());  // enforce exact symmetry
}

double estimate_dispersion(const MatrixXd& xmat, const VectorXd& y,
                           const VectorXd& beta, const VectorXd* weights) {
  const VectorXd resid = y - xmat * beta;
  double rss = 0.0, wsum = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double wi = weights ? (*weights)[i] : 1.0;
    rss += wi * resid[i] * resid[i];
    wsum += wi;
  }
  return wsum > 0.0 ? rss / wsum : 0.0;
}

namespace {

// Rows with positive weight all have |eta| > 30 within one outcome class.
bool separation_suspect(const MatrixXd& xmat, const VectorXd& y,
                        const VectorXd& beta, const VectorXd* weights) {
  const VectorXd eta = xmat * beta;
  bool class_seen[2] = {false, false};
  bool class_far[2] = {true, true};
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (weights && (*weights)[i] == 0.0) continue;
    const int c = y[i] > 0.5 ? 1 : 0;
    class_seen[c] = true;
    if (std::abs(eta[i]) <= 30.0) class_far[c] = false;
  }
  return (class_seen[0] && class_far[0]) || (class_seen[1] && class_far[1]);
}

bool degenerate_logit_outcome(const VectorXd& y, const VectorXd* weights) {
  bool seen0 = false, seen1 = false;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (weights && (*weights)[i] == 0.0) continue;
    (y[i] > 0.5 ? seen1 : seen0) = true;
  }
  return !(seen0 && seen1);
}

}  // namespace

FitResult fit_mle(const MatrixXd& xmat, const VectorXd& y, const Family& family,
                  const VectorXd* weights, const VectorXd* init,
                  const FitOptions& opts) {
  FitResult out;
  out.beta_hat = init ? *init : VectorXd::Zero(xmat.cols());
  check_inputs(xmat, y, out.beta_hat, weights);

  {
    // Full column rank on the weighted support is required up front.
    MatrixXd xw = xmat;
    if (weights)
      for (Eigen::Index i = 0; i < xw.rows(); ++i)
        if ((*weights)[i] == 0.0) xw.row(i).setZero();
    Eigen::ColPivHouseholderQR<MatrixXd> qr(xw);
    if (qr.rank() < xmat.cols())
      throw SingularMatrixError("design matrix is rank deficient");
  }

  if (family.kind == FamilyKind::Logit &&
      degenerate_logit_outcome(y, weights)) {
    out.converged = false;
    out.separation_flag = true;
    out.hessian_at_opt = hessian(xmat, y, out.beta_hat, family, weights);
    out.final_gradient_norm =
        score(xmat, y, out.beta_hat, family, weights).lpNorm<Eigen::Infinity>();
    return out;
  }

  double ll = log_likelihood(xmat, y, out.beta_hat, family, weights);
  for (int it = 0; it < opts.max_iterations; ++it) {
    const VectorXd g = score(xmat, y, out.beta_hat, family, weights);
    out.final_gradient_norm = g.lpNorm<Eigen::Infinity>();
    if (out.final_gradient_norm < opts.gradient_tol) {
      out.converged = true;
      break;
    }
    const MatrixXd h = hessian(xmat, y, out.beta_hat, family, weights);
    Eigen::LDLT<MatrixXd> ldlt(-h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw SingularMatrixError("Hessian is singular or indefinite");
    const VectorXd step = ldlt.solve(g);
    if (!step.allFinite())
      throw SingularMatrixError("Newton step is not finite");

    double scale = 1.0;
    VectorXd candidate = out.beta_hat + step;
    double cand_ll = log_likelihood(xmat, y, candidate, family, weights);
    int halvings = 0;
    while (!(cand_ll >= ll) && halvings < opts.max_halvings) {
      scale *= 0.5;
      candidate = out.beta_hat + scale * step;
      cand_ll = log_likelihood(xmat, y, candidate, family, weights);
      ++halvings;
    }
    out.beta_hat = candidate;
    ll = cand_ll;
    out.iterations = it + 1;
  }
  if (!out.converged)
    out.final_gradient_norm = score(xmat, y, out.beta_hat, family, weights)
                                  .lpNorm<Eigen::Infinity>();

  out.hessian_at_opt = hessian(xmat, y, out.beta_hat, family, weights);
  if (family.kind == FamilyKind::Logit)
    out.separation_flag = separation_suspect(xmat, y, out.beta_hat, weights);
  else
    out.dispersion_hat = estimate_dispersion(xmat, y, out.beta_hat, weights);
  return out;
}

MatrixXd info_matrix_a(const MatrixXd& xmat, const VectorXd& y,
                       const VectorXd& beta, const Family& family,
                       const VectorXd* weights) {
  const double n = static_cast<double>(xmat.rows());
  return -hessian(xmat, y, beta, family, weights) / n;
}

MatrixXd info_matrix_b(const MatrixXd& xmat, const VectorXd& y,
                       const VectorXd& beta, const Family& family,
                       const VectorXd* weights) {
  check_inputs(xmat, y, beta, weights);
  const VectorXd eta = xmat * beta;
  VectorXd resid(y.size());
  if (family.kind == FamilyKind::Logit) {
    for (Eigen::Index i = 0; i < y.size(); ++i)
      resid[i] = y[i] - sigmoid(eta[i]);
  } else {
    resid = (y - eta) / family.dispersion;
  }
  // B = avg of (w_i * resid_i)^2 x x^T; weights enter the score linearly.
  VectorXd sq(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double wi = weights ? (*weights)[i] : 1.0;
    sq[i] = wi * wi * resid[i] * resid[i];
  }
  MatrixXd b = xmat.transpose() * sq.asDiagonal() * xmat /
               static_cast<double>(xmat.rows());
  return 0.5 * (b + b.transpose());
}

MatrixXd robust_variance(const MatrixXd& xmat, const VectorXd& y,
                         const VectorXd& beta, const Family& family,
                         const VectorXd* weights) {
  const MatrixXd a = info_matrix_a(xmat, y, beta, family, weights);
  const MatrixXd b = info_matrix_b(xmat, y, beta, family, weights);
  Eigen::LDLT<MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw SingularMatrixError("A matrix is singular in sandwich variance");
  const MatrixXd ainv_b = ldlt.solve(b);
  const MatrixXd v = ldlt.solve(ainv_b.transpose()).transpose();
  return 0.5 * (v + v.transpose());
}

}  // namespace fedci
