#ifndef TRAJCLUST_DATASET_HPP
#define TRAJCLUST_DATASET_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trajclust/errors.hpp"

namespace trajclust {

/// One measurement: age in years and (typically z-scored) phenotype value.
struct Observation {
  double time = 0.0;
  double value = 0.0;
};

struct Subject {
  std::string id;
  std::vector<Observation> observations;  // times strictly increasing
};

/// A cohort of irregular longitudinal trajectories. Immutable after
/// construction; all model code takes it by const reference.
struct TrajectoryDataset {
  std::vector<Subject> subjects;
  std::optional<std::vector<double>> schedule_hint;  // nominal ages, years

  /// Throws InvalidConfig / NonMonotoneTimes on violated invariants.
  void validate() const;

  std::size_t n_subjects() const { return subjects.size(); }
  std::size_t n_observations() const;
  const Subject* find(const std::string& id) const;
  int index_of(const std::string& id) const;  // -1 if absent
};

struct WiggleParams {
  double amplitude = 0.3;    // sd of the per-subject smooth deviation
  double lengthscale = 2.0;  // years
};

/// Configuration for the synthetic cohort generator. Defaults mimic a
/// 95-subject, 4-wave design at ages 1.5/2/4/5 with three well separated
/// trajectory groups.
struct SimulationConfig {
  int n_subjects = 95;
  std::vector<double> schedule = {1.5, 2.0, 4.0, 5.0};
  int n_clusters = 3;
  /// Polynomial coefficients over age, low degree first, one per cluster.
  std::vector<std::vector<double>> cluster_mean_polys = {
      {-2.0, -0.2}, {0.0, 0.0}, {2.0, 0.2}};
  std::vector<double> cluster_weights = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  double individual_noise_sd = 0.25;
  WiggleParams individual_wiggle;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws InvalidConfig
};

double polyval(const std::vector<double>& coeffs, double t);

struct SimulatedCohort {
  TrajectoryDataset data;
  std::vector<int> true_labels;  // subject index -> cluster
};

/// Draws each subject a cluster, evaluates the cluster mean curve on the
/// schedule, adds a smooth squared-exponential deviation plus iid noise,
/// then thins observations at missing_rate (keeping at least one each).
/// Bit-identical across runs for a fixed seed.
SimulatedCohort simulate_cohort(const SimulationConfig& cfg);

/// True conditional mean of the value at query_time for a subject with the
/// given training observations and known cluster, under the generative
/// model of simulate_cohort. This is the unbeatable reference predictor
/// used by the evaluation harness.
double oracle_conditional_mean(const SimulationConfig& cfg, int cluster,
                               const std::vector<Observation>& train,
                               double query_time);

enum class ZscoreMode {
  Standardize,    // (x - mean) / sd, n-1 denominator
  InverseNormal,  // rank-based inverse-normal transform
};

/// Standardizes values within each shared time point. Requires a common
/// grid: every observation time must be a column with >= 2 distinct values.
TrajectoryDataset zscore_per_timepoint(const TrajectoryDataset& raw,
                                       ZscoreMode mode = ZscoreMode::Standardize);

/// Shortest decimal text that round-trips the double, up to 17 significant
/// digits.
std::string format_double(double x);

// CSV long format, header `subject_id,age_years,value`.
TrajectoryDataset load_csv(const std::string& path);
void save_csv(const TrajectoryDataset& data, const std::string& path);

// Labels file, header `subject_id,cluster`.
void save_labels_csv(const TrajectoryDataset& data,
                     const std::vector<int>& labels, const std::string& path);
std::vector<std::pair<std::string, int>> load_labels_csv(const std::string& path);

}  // namespace trajclust

#endif
