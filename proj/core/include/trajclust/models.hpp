#ifndef TRAJCLUST_MODELS_HPP
#define TRAJCLUST_MODELS_HPP

#include <chrono>
#include <string>
#include <utility>
#include <vector>

#include "trajclust/dpgp.hpp"
#include "trajclust/eval.hpp"
#include "trajclust/lcmm.hpp"

namespace trajclust {

/// DP-GP wrapped for the trial harness: fit on the training cohort, then
/// posterior-averaged GP prediction at the queries.
class DpgpModel final : public Model {
 public:
  DpgpModel(DpgpHyperParams hyper, DpgpFitSettings settings,
            std::string tag = "dpgp")
      : hyper_(std::move(hyper)), settings_(settings), tag_(std::move(tag)) {}

  std::string tag() const override { return tag_; }

  std::vector<double> fit_and_predict(
      const TrajectoryDataset& train,
      const std::vector<std::pair<std::string, double>>& queries,
      std::uint64_t seed, double* fit_seconds) const override {
    Rng rng(seed);
    const auto t0 = std::chrono::steady_clock::now();
    DpgpPosterior post = fit_dpgp(train, hyper_, settings_, rng);
    const auto t1 = std::chrono::steady_clock::now();
    if (fit_seconds)
      *fit_seconds = std::chrono::duration<double>(t1 - t0).count();
    return dpgp_predict(post, train, queries);
  }

 private:
  DpgpHyperParams hyper_;
  DpgpFitSettings settings_;
  std::string tag_;
};

class LcmmModel final : public Model {
 public:
  LcmmModel(LcmmSpec spec, EmSettings settings, std::string tag = "")
      : spec_(spec), settings_(settings) {
    tag_ = tag.empty() ? "lcmm-" + to_string(spec.cov_kind) +
                             std::to_string(spec.n_classes)
                       : std::move(tag);
  }

  std::string tag() const override { return tag_; }

  std::vector<double> fit_and_predict(
      const TrajectoryDataset& train,
      const std::vector<std::pair<std::string, double>>& queries,
      std::uint64_t seed, double* fit_seconds) const override {
    Rng rng(seed);
    const auto t0 = std::chrono::steady_clock::now();
    LcmmFit fit = em_fit(train, spec_, settings_, rng);
    const auto t1 = std::chrono::steady_clock::now();
    if (fit_seconds)
      *fit_seconds = std::chrono::duration<double>(t1 - t0).count();
    std::vector<double> preds;
    preds.reserve(queries.size());
    for (const auto& [id, t] : queries) {
      const Subject* s = train.find(id);
      if (!s) throw InvalidConfig("unknown query subject '" + id + "'");
      preds.push_back(lcmm_predict(fit, s->observations, t));
    }
    return preds;
  }

 private:
  LcmmSpec spec_;
  EmSettings settings_;
  std::string tag_;
};

}  // namespace trajclust

#endif
