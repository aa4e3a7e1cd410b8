#ifndef TRAJCLUST_DPGP_HPP
#define TRAJCLUST_DPGP_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "trajclust/kernels.hpp"
#include "trajclust/rng.hpp"

namespace trajclust {

struct DpgpHyperParams {
  ClusterCovConfig cov;  // shared across clusters, fixed during a run
  double alpha = 1.0;    // CRP concentration

  void validate() const;
};

/// Partition of subjects into clusters during Gibbs sampling. Cluster ids
/// are stable within a run; empty clusters are removed immediately.
class CrpState {
 public:
  /// All subjects start in a single cluster.
  static CrpState single_cluster(int n_subjects);
  /// All subjects unassigned (assignment -1); used for incremental builds.
  static CrpState unassigned(int n_subjects);

  int n_subjects() const { return static_cast<int>(assignment_.size()); }
  int n_assigned() const { return n_assigned_; }
  int cluster_of(int subject) const { return assignment_[subject]; }
  const std::map<int, int>& cluster_sizes() const { return sizes_; }
  const std::vector<int>& assignment() const { return assignment_; }
  std::vector<int> members(int cluster) const;

  void assign(int subject, int cluster);
  int assign_new(int subject);  // open a fresh cluster, returns its id
  int remove(int subject);      // returns the cluster it left

  void check_consistent() const;  // throws InvalidState

 private:
  explicit CrpState(int n_subjects);
  std::vector<int> assignment_;  // subject -> cluster id, -1 unassigned
  std::map<int, int> sizes_;
  int next_cluster_id_ = 0;
  int n_assigned_ = 0;
};

struct CrpWeights {
  std::vector<std::pair<int, double>> existing;  // (cluster id, weight)
  double new_cluster = 0.0;
};

/// Predictive cluster weights for one unassigned subject:
/// size_k / (M + alpha) per existing cluster, alpha / (M + alpha) for a
/// new one, where M is the number of currently assigned subjects.
CrpWeights crp_prior_weights(const CrpState& state, double alpha);

/// Collapsed Gibbs sampler over the partition. Latent cluster functions
/// are never instantiated; reassignment weights combine the CRP prior with
/// marginal-likelihood ratios of the compound-covariance model. Caches
/// per-cluster Cholesky factors and extends them blockwise when scoring a
/// candidate subject, so a sweep costs far less than refactoring every
/// cluster from scratch.
class GibbsSampler {
 public:
  GibbsSampler(const TrajectoryDataset& data, const DpgpHyperParams& hyper);
  ~GibbsSampler();
  GibbsSampler(GibbsSampler&&) noexcept;
  GibbsSampler& operator=(GibbsSampler&&) noexcept;

  void sweep(CrpState& state, Rng& rng);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One full sweep with no cross-sweep cache (convenience for tests).
void gibbs_sweep(CrpState& state, const TrajectoryDataset& data,
                 const DpgpHyperParams& hyper, Rng& rng);

/// CRP partition log-prior plus the sum of per-cluster marginal
/// log-likelihoods; invariant under relabeling of cluster ids.
double crp_partition_log_prior(const CrpState& state, double alpha);
double joint_log_likelihood(const CrpState& state,
                            const TrajectoryDataset& data,
                            const DpgpHyperParams& hyper);

struct DpgpPosterior {
  std::vector<std::vector<int>> samples;  // retained assignment vectors
  std::vector<double> joint_log_liks;
  DpgpHyperParams hyper;
  int map_index = -1;  // argmax of joint_log_liks
};

struct DpgpFitSettings {
  int sweeps = 500;
  int burnin = 100;
  int thin = 5;
};

/// Initializes all subjects in one cluster, runs `sweeps` Gibbs passes and
/// retains every thin-th post-burn-in state. Deterministic given the rng.
DpgpPosterior fit_dpgp(const TrajectoryDataset& data,
                       const DpgpHyperParams& hyper,
                       const DpgpFitSettings& settings, Rng& rng);

/// Posterior-averaged GP prediction: each retained sample predicts within
/// the query subject's cluster; the final mean averages over samples.
/// Queries are (subject id, time); each query subject needs at least one
/// training observation in `data`.
std::vector<double> dpgp_predict(
    const DpgpPosterior& post, const TrajectoryDataset& data,
    const std::vector<std::pair<std::string, double>>& queries);

struct GridEvalConfig {
  double holdout_fraction = 0.3;
  int trials = 3;
  std::uint64_t seed = 0;
  DpgpFitSettings fit;
  int jobs = 1;
};

struct GridSearchResult {
  DpgpHyperParams best;
  std::size_t best_index = 0;
  std::vector<double> mean_rmse;  // one entry per grid point, +inf on failure
};

/// Scores every grid point by mean held-out RMSE over eval trials and
/// returns the argmin (first occurrence wins ties).
GridSearchResult grid_search(const TrajectoryDataset& data,
                             const std::vector<DpgpHyperParams>& grid,
                             const GridEvalConfig& eval_cfg);

}  // namespace trajclust

#endif
