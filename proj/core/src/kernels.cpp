#include "trajclust/kernels.hpp"

#include <cmath>

namespace trajclust {

void KernelParams::validate() const {
  if (!(std::isfinite(variance) && variance >= 0.0))
    throw InvalidConfig("kernel variance must be finite and >= 0");
  if (!(std::isfinite(lengthscale) && lengthscale > 0.0))
    throw InvalidConfig("kernel lengthscale must be finite and > 0");
}

void ClusterCovConfig::validate() const {
  latent.validate();
  individual.validate();
  if (!(std::isfinite(nugget) && nugget >= 0.0))
    throw InvalidConfig("nugget must be finite and >= 0");
  if (!(std::isfinite(jitter) && jitter >= 0.0))
    throw InvalidConfig("jitter must be finite and >= 0");
}

void StackedCluster::validate() const {
  if (y.size() != t.size() ||
      static_cast<std::size_t>(y.size()) != owner.size())
    throw InvalidConfig("stacked cluster vectors have unequal lengths");
  int current = -1;
  for (int o : owner) {
    if (o == current) continue;
    if (o != current + 1)
      throw InvalidConfig("owner indices must form contiguous blocks 0..N-1");
    current = o;
  }
  if (current + 1 != n_subjects)
    throw InvalidConfig("owner blocks do not match n_subjects");
}

StackedCluster StackedCluster::from_subjects(
    std::span<const Subject* const> subjects) {
  StackedCluster sc;
  std::size_t total = 0;
  for (const Subject* s : subjects) total += s->observations.size();
  sc.y.resize(static_cast<Eigen::Index>(total));
  sc.t.resize(static_cast<Eigen::Index>(total));
  sc.owner.reserve(total);
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    for (const auto& o : subjects[i]->observations) {
      sc.y[pos] = o.value;
      sc.t[pos] = o.time;
      sc.owner.push_back(static_cast<int>(i));
      ++pos;
    }
  sc.n_subjects = static_cast<int>(subjects.size());
  return sc;
}

StackedCluster StackedCluster::from_dataset(const TrajectoryDataset& data,
                                            std::span<const int> subject_indices) {
  std::vector<const Subject*> ptrs;
  ptrs.reserve(subject_indices.size());
  for (int i : subject_indices) ptrs.push_back(&data.subjects.at(i));
  return from_subjects(ptrs);
}

double se_kernel(double t, double tp, const KernelParams& p) {
  const double d = t - tp;
  return p.variance * std::exp(-d * d / (2.0 * p.lengthscale * p.lengthscale));
}

double compound_covariance(double t, double tp, int n, int np,
                           const ClusterCovConfig& cfg) {
  double k = se_kernel(t, tp, cfg.latent);
  if (n == np) k += se_kernel(t, tp, cfg.individual);
  return k;
}

Eigen::MatrixXd assemble_cluster_cov(const StackedCluster& sc,
                                     const ClusterCovConfig& cfg) {
  sc.validate();
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(sc.size());
  Eigen::MatrixXd K(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double k =
          compound_covariance(sc.t[i], sc.t[j], sc.owner[i], sc.owner[j], cfg);
      K(i, j) = k;
      K(j, i) = k;
    }
    K(i, i) += cfg.nugget + cfg.jitter;
  }
  return K;
}

CholFactor cholesky_with_escalation(const Eigen::MatrixXd& K) {
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  if (llt.info() == Eigen::Success) return {llt.matrixL(), 0.0};
  for (double extra = 1e-8; extra <= 1e-4 + 1e-18; extra *= 10.0) {
    Eigen::MatrixXd Kj = K;
    Kj.diagonal().array() += extra;
    llt.compute(Kj);
    if (llt.info() == Eigen::Success) return {llt.matrixL(), extra};
  }
  throw NotPositiveDefinite(
      "covariance matrix not positive definite after jitter escalation");
}

double gaussian_loglik_chol(const Eigen::MatrixXd& L, const Eigen::VectorXd& y) {
  const Eigen::VectorXd z =
      L.triangularView<Eigen::Lower>().solve(y);
  const double logdet_half = L.diagonal().array().log().sum();
  return -0.5 * z.squaredNorm() - logdet_half -
         0.5 * static_cast<double>(y.size()) * std::log(2.0 * M_PI);
}

double log_marginal_likelihood(const StackedCluster& sc,
                               const ClusterCovConfig& cfg) {
  const CholFactor chol = cholesky_with_escalation(assemble_cluster_cov(sc, cfg));
  return gaussian_loglik_chol(chol.L, sc.y);
}

GpPrediction gp_posterior_predict(const StackedCluster& train,
                                  const ClusterCovConfig& cfg,
                                  double query_time, int query_subject) {
  if (train.size() == 0) throw InvalidConfig("empty training cluster");
  const CholFactor chol =
      cholesky_with_escalation(assemble_cluster_cov(train, cfg));
  const auto d = static_cast<Eigen::Index>(train.size());
  Eigen::VectorXd kstar(d);
  for (Eigen::Index i = 0; i < d; ++i)
    kstar[i] = compound_covariance(query_time, train.t[i], query_subject,
                                   train.owner[i], cfg);
  const double kss =
      compound_covariance(query_time, query_time, query_subject, query_subject,
                          cfg) +
      cfg.nugget;
  const Eigen::VectorXd zy = chol.L.triangularView<Eigen::Lower>().solve(train.y);
  const Eigen::VectorXd zk = chol.L.triangularView<Eigen::Lower>().solve(kstar);
  GpPrediction pred;
  pred.mean = zk.dot(zy);
  pred.variance = std::max(0.0, kss - zk.squaredNorm());
  return pred;
}

}  // namespace trajclust
