#ifndef FEDCI_SIMULATION_HPP
#define FEDCI_SIMULATION_HPP

#include <cstdint>
#include <functional>

#include "fedci/federation.hpp"

namespace fedci {

// splitmix64: counter-based stream keyed by hash(seed, replication, site).
// Deterministic and splittable, so replications can run in parallel without
// sequence coupling.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : state_(mix(key ^ 0x9e3779b97f4a7c15ull)) {}

  static std::uint64_t key(std::uint64_t seed, std::uint64_t replication = 0,
                           std::uint64_t site = 0) {
    return mix(mix(seed) ^ mix(replication * 0xbf58476d1ce4e5b9ull + 1) ^
               mix(site * 0x94d049bb133111ebull + 2));
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t below(std::uint64_t bound) { return next_u64() % bound; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  std::uint64_t state_;
};

// Logit treatment and logit outcome over uniform(-1,1) covariates.
struct DgpConfig {
  VectorXd beta0;   // (const, treat, x...)
  VectorXd gamma0;  // (const, x...)
  Eigen::Index n_pool = 500;
  int n_sites = 1;
  std::uint64_t seed = 0;
  Eigen::Index covariate_dim = 1;
  bool outcome_drop_covariates = false;     // model misspecification flags:
  bool propensity_drop_covariates = false;  // fit without the last covariate

  static DgpConfig single_covariate();  // beta0=[-0.2,-0.3,0.5], gamma0=[0.1,0.2]
  static DgpConfig three_covariate();   // beta_x=[0.5,0.7,-0.6], gamma_x=[0.2,0.3,0.4]
};

Dataset generate_dgp(const DgpConfig& config);
Dataset generate_dgp(const DgpConfig& config, Rng& rng);

std::vector<Dataset> split_sites(const Dataset& data, int n_sites,
                                 std::uint64_t seed);

// Demographic-skew resampling: rows are bucketed by thresholding `column` at
// its median, and the subsample draws `share_below_median` of its rows from
// the lower bucket (the rest from the upper one), with replacement.
Dataset skewed_subsample(const Dataset& data, const std::string& column,
                         Eigen::Index size, double share_below_median,
                         std::uint64_t seed);

// Population ATE of the logit DGP by Monte Carlo integration over the
// covariate law; `draws` >= 1e7 keeps the standard error under 2e-4.
struct MonteCarloTruth {
  double tau = 0.0;
  double standard_error = 0.0;
};
MonteCarloTruth dgp_true_ate(const DgpConfig& config,
                             std::uint64_t draws = 10'000'000,
                             std::uint64_t seed = 0xfedc1);

enum class EstimatorKind { Mle, IpwMle, Aipw };

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::Mle: return "mle";
    case EstimatorKind::IpwMle: return "ipw-mle";
    default: return "aipw";
  }
}

struct StandardizationCell {
  EstimatorKind estimator;
  Eigen::Index n_pool;
  int n_sites;
  int reps;
  double mean = 0.0;
  double std_dev = 0.0;
};

// Normality study: per replication, simulate, split, federate, and record
// sqrt(n) (theta_hat - theta0) / sqrt(V_hat) for the treatment coefficient
// (MLE, IPW-MLE) or for the ATE (AIPW, against the Monte Carlo truth).
std::vector<StandardizationCell> standardization_experiment(
    const std::vector<EstimatorKind>& estimators,
    const std::vector<Eigen::Index>& n_pools, const std::vector<int>& site_counts,
    int reps, std::uint64_t seed, int threads = 0);

struct DoubleRobustnessRow {
  int setting = 0;  // 1..4
  double mae_aipw = 0.0;
  double mae_om = 0.0;
  double mae_ipw = 0.0;
};

// Misspecification grid on the three-covariate DGP over two sites. OM and
// IPW comparators use federated-MLE nuisances and IVW federation of the
// per-site effects. The default pool size is 40k (20k per site), which is
// the scale the reference MAE magnitudes correspond to.
std::vector<DoubleRobustnessRow> double_robustness_experiment(
    int reps, std::uint64_t seed, int threads = 0, Eigen::Index n_pool = 40'000,
    int n_sites = 2);

std::string render_standardization_table(
    const std::vector<StandardizationCell>& cells);
std::string render_double_robustness_table(
    const std::vector<DoubleRobustnessRow>& rows);
std::string standardization_csv(const std::vector<StandardizationCell>& cells);
std::string double_robustness_csv(const std::vector<DoubleRobustnessRow>& rows);

// Runs `reps` jobs across a small pool; results land in a caller-owned
// vector indexed by replication so the reduction is deterministic.
void parallel_for(int reps, int threads, const std::function<void(int)>& job);

}  // namespace fedci

#endif  // FEDCI_SIMULATION_HPP
