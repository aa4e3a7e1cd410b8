#ifndef TRAJCLUST_KERNELS_HPP
#define TRAJCLUST_KERNELS_HPP

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "trajclust/dataset.hpp"
#include "trajclust/errors.hpp"

namespace trajclust {

struct KernelParams {
  double variance = 1.0;     // sigma^2, squared z-score units
  double lengthscale = 1.0;  // years

  void validate() const;
};

/// Parameters of the per-cluster compound covariance: a latent kernel
/// shared by every subject in the cluster, an individual-deviation kernel
/// applied within subjects only, observation noise on the exact diagonal,
/// and a small jitter for factorization stability.
struct ClusterCovConfig {
  KernelParams latent;
  KernelParams individual;
  double nugget = 0.0;
  double jitter = 1e-8;

  void validate() const;
};

/// Concatenated observations of every subject in one cluster. Entries are
/// grouped in contiguous blocks per subject, owner[i] in 0..n_subjects-1.
struct StackedCluster {
  Eigen::VectorXd y;
  Eigen::VectorXd t;
  std::vector<int> owner;
  int n_subjects = 0;

  std::size_t size() const { return owner.size(); }
  void validate() const;

  static StackedCluster from_subjects(std::span<const Subject* const> subjects);
  static StackedCluster from_dataset(const TrajectoryDataset& data,
                                     std::span<const int> subject_indices);
};

double se_kernel(double t, double tp, const KernelParams& p);

/// Compound covariance between observation (t, n) and (t', n'): latent
/// kernel always, individual kernel added when n == n'. The nugget is not
/// included here; it belongs on the exact diagonal only.
double compound_covariance(double t, double tp, int n, int np,
                           const ClusterCovConfig& cfg);

/// Dense cluster covariance: compound covariance at every pair plus
/// (nugget + jitter) on the diagonal.
Eigen::MatrixXd assemble_cluster_cov(const StackedCluster& sc,
                                     const ClusterCovConfig& cfg);

/// Lower Cholesky factor, with jitter escalated x10 from `extra_start` up
/// to 1e-4 if the base factorization fails. Throws NotPositiveDefinite.
struct CholFactor {
  Eigen::MatrixXd L;
  double extra_jitter = 0.0;  // escalation applied beyond cfg.jitter
};
CholFactor cholesky_with_escalation(const Eigen::MatrixXd& K);

/// log N(y | 0, K) computed from the factor without forming an inverse.
double gaussian_loglik_chol(const Eigen::MatrixXd& L, const Eigen::VectorXd& y);

/// Marginal likelihood of a stacked cluster: log N(y | 0, K).
double log_marginal_likelihood(const StackedCluster& sc,
                               const ClusterCovConfig& cfg);

struct GpPrediction {
  double mean = 0.0;
  double variance = 0.0;  // clamped at 0
};

/// Query subject index meaning "a subject not present in the cluster":
/// only the latent kernel correlates the query with the training data.
inline constexpr int kNewSubject = -1;

GpPrediction gp_posterior_predict(const StackedCluster& train,
                                  const ClusterCovConfig& cfg,
                                  double query_time, int query_subject);

}  // namespace trajclust

#endif
