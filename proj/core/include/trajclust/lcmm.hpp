#ifndef TRAJCLUST_LCMM_HPP
#define TRAJCLUST_LCMM_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "trajclust/dataset.hpp"
#include "trajclust/rng.hpp"

namespace trajclust {

/// Within-subject time-covariance structures.
enum class CovKind { NC, AR, BM };

std::string to_string(CovKind k);
CovKind cov_kind_from_string(const std::string& s);

struct LcmmSpec {
  int n_classes = 1;
  CovKind cov_kind = CovKind::NC;

  void validate() const;
};

/// Fitted latent class mixed model. The fixed-effect basis is [1, t] for
/// both the shared and class-specific parts; the shared coefficients are
/// constrained to zero and absorbed into the class effects, so each class
/// mean curve is v.row(g) = (intercept, slope per year).
struct LcmmFit {
  LcmmSpec spec;
  Eigen::MatrixXd v;            // n_classes x 2 class effects
  Eigen::VectorXd pi;           // class probabilities
  double w_var = 0.0;           // sigma_w^2 (AR, BM)
  double w_rate = 0.0;          // theta_w, AR decay per year (AR only)
  double sigma_eps2 = 0.0;      // residual variance
  double loglik = 0.0;
  int n_params = 0;
  Eigen::MatrixXd posteriors;   // n_subjects x n_classes, rows sum to 1
  std::vector<double> loglik_trace;  // per-iteration, winning start
};

/// Within-subject covariance on a set of strictly increasing times.
///   NC: sigma_eps2 * I
///   AR: w_var * exp(-w_rate |ti - tj|) + sigma_eps2 on the diagonal
///   BM: w_var * min(ti, tj) + sigma_eps2 on the diagonal
Eigen::MatrixXd class_cov_matrix(const Eigen::VectorXd& times, CovKind kind,
                                 double w_var, double w_rate,
                                 double sigma_eps2);

/// Observed-data mixture log-likelihood at the given parameters
/// (log-sum-exp over classes, summed over subjects).
double lcmm_loglik(const TrajectoryDataset& data, const LcmmSpec& spec,
                   const Eigen::MatrixXd& v, const Eigen::VectorXd& pi,
                   double w_var, double w_rate, double sigma_eps2);

struct EmSettings {
  int n_starts = 10;
  double tol = 1e-6;
  int max_iters = 500;
};

/// EM with random k-means initializations on per-subject (intercept,
/// slope) summaries. Class effects update by posterior-weighted GLS;
/// covariance parameters by golden-section coordinate maximization of the
/// expected log-likelihood. Throws DegenerateFit when every start loses a
/// class.
LcmmFit em_fit(const TrajectoryDataset& data, const LcmmSpec& spec,
               const EmSettings& settings, Rng& rng);

/// BIC with sample size = number of subjects (grouped-data convention).
double bic(const LcmmFit& fit, std::size_t n_subjects);

struct ModelSelectionEntry {
  LcmmSpec spec;
  double bic_value = 0.0;  // +inf when the fit failed
  bool failed = false;
};

struct ModelSelectionResult {
  std::vector<ModelSelectionEntry> table;
  std::vector<std::pair<CovKind, LcmmSpec>> best_per_family;
  LcmmSpec best;
  LcmmFit best_fit;
};

ModelSelectionResult select_model(const TrajectoryDataset& data,
                                  const std::vector<LcmmSpec>& candidates,
                                  const EmSettings& settings, Rng& rng);

/// Class posteriors are recomputed from the subject's training
/// observations; each class contributes its mean at query_time plus the
/// conditional-Gaussian correction from the class covariance, and the
/// output is the posterior-weighted average.
double lcmm_predict(const LcmmFit& fit,
                    const std::vector<Observation>& train_obs,
                    double query_time);

}  // namespace trajclust

#endif
