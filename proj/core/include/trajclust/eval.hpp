#ifndef TRAJCLUST_EVAL_HPP
#define TRAJCLUST_EVAL_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trajclust/dataset.hpp"
#include "trajclust/rng.hpp"

namespace trajclust {

struct HeldoutPoint {
  std::string subject_id;
  double time = 0.0;
  double value = 0.0;
};

/// Final-time-point hold-out: selected subjects keep all but their last
/// observation in `train`; the removed observations live in `heldout`.
struct HoldoutSplit {
  TrajectoryDataset train;
  std::vector<HeldoutPoint> heldout;
};

/// Hides round-half-up(fraction * N) subjects' final observations, chosen
/// uniformly among subjects with >= 2 observations.
HoldoutSplit make_holdout_split(const TrajectoryDataset& data, double fraction,
                                Rng& rng);

double rmse(std::span<const double> preds, std::span<const double> truths);
double pearson(std::span<const double> preds, std::span<const double> truths);

double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

/// A fit-and-predict procedure under evaluation. fit_seconds receives the
/// wall-clock of the fit alone (not the split or the metric computation).
class Model {
 public:
  virtual ~Model() = default;
  virtual std::string tag() const = 0;
  virtual std::vector<double> fit_and_predict(
      const TrajectoryDataset& train,
      const std::vector<std::pair<std::string, double>>& queries,
      std::uint64_t seed, double* fit_seconds) const = 0;
};

struct SummaryStats {
  double mean = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

SummaryStats summarize(std::span<const double> values);

struct TrialReport {
  std::string model;
  std::vector<double> rmse_values;
  std::vector<double> corr_values;
  std::vector<double> fit_seconds;
  int n_failed = 0;
  SummaryStats rmse_summary;
  SummaryStats corr_summary;
};

/// Repeated hold-out trials, each with a derived per-trial seed so results
/// do not depend on scheduling when jobs > 1. Failed trials are excluded
/// from summaries; more than 20% failures aborts.
TrialReport run_trials(const Model& model, const TrajectoryDataset& data,
                       double fraction, int n_trials, std::uint64_t seed,
                       int jobs = 1);

struct ComparisonRow {
  std::string model;
  SummaryStats rmse;
  SummaryStats corr;
  double mean_fit_seconds = 0.0;
};

std::vector<ComparisonRow> compare_models(std::span<const TrialReport> reports);

/// Figure-data CSV, header `model,metric,q1,median,q3,mean`.
void write_figure_csv(std::span<const ComparisonRow> rows,
                      const std::string& path);

}  // namespace trajclust

#endif
