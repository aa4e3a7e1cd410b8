#include "trajclust/dpgp.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>
#include <unordered_map>

#include "trajclust/eval.hpp"

namespace trajclust {

void DpgpHyperParams::validate() const {
  cov.validate();
  if (!(std::isfinite(alpha) && alpha > 0.0))
    throw InvalidConfig("alpha must be finite and > 0");
}

CrpState::CrpState(int n_subjects) : assignment_(n_subjects, -1) {}

CrpState CrpState::single_cluster(int n_subjects) {
  CrpState s(n_subjects);
  s.next_cluster_id_ = 1;
  s.sizes_[0] = n_subjects;
  s.n_assigned_ = n_subjects;
  std::fill(s.assignment_.begin(), s.assignment_.end(), 0);
  return s;
}

CrpState CrpState::unassigned(int n_subjects) { return CrpState(n_subjects); }

std::vector<int> CrpState::members(int cluster) const {
  std::vector<int> out;
  for (int i = 0; i < n_subjects(); ++i)
    if (assignment_[i] == cluster) out.push_back(i);
  return out;
}

void CrpState::assign(int subject, int cluster) {
  if (assignment_[subject] != -1)
    throw InvalidState("subject already assigned");
  if (!sizes_.count(cluster)) throw InvalidState("no such cluster");
  assignment_[subject] = cluster;
  ++sizes_[cluster];
  ++n_assigned_;
}

int CrpState::assign_new(int subject) {
  if (assignment_[subject] != -1)
    throw InvalidState("subject already assigned");
  const int id = next_cluster_id_++;
  sizes_[id] = 1;
  assignment_[subject] = id;
  ++n_assigned_;
  return id;
}

int CrpState::remove(int subject) {
  const int c = assignment_[subject];
  if (c == -1) throw InvalidState("subject not assigned");
  assignment_[subject] = -1;
  --n_assigned_;
  if (--sizes_[c] == 0) sizes_.erase(c);
  return c;
}

void CrpState::check_consistent() const {
  std::map<int, int> counts;
  int assigned = 0;
  for (int c : assignment_)
    if (c != -1) {
      ++counts[c];
      ++assigned;
    }
  if (assigned != n_assigned_ || counts != sizes_)
    throw InvalidState("assignment and cluster sizes disagree");
  for (const auto& [id, size] : sizes_)
    if (size < 1 || id >= next_cluster_id_)
      throw InvalidState("invalid cluster bookkeeping");
}

CrpWeights crp_prior_weights(const CrpState& state, double alpha) {
  state.check_consistent();
  const double M = state.n_assigned();
  CrpWeights w;
  for (const auto& [id, size] : state.cluster_sizes())
    w.existing.emplace_back(id, size / (M + alpha));
  w.new_cluster = alpha / (M + alpha);
  return w;
}

double crp_partition_log_prior(const CrpState& state, double alpha) {
  const int n = state.n_assigned();
  double lp = static_cast<double>(state.cluster_sizes().size()) * std::log(alpha);
  for (const auto& [id, size] : state.cluster_sizes())
    lp += std::lgamma(static_cast<double>(size));
  lp += std::lgamma(alpha) - std::lgamma(alpha + n);
  return lp;
}

// ---------------------------------------------------------------------------
// Sampler internals: per-cluster caches of the stacked data, the Cholesky
// factor of the assembled covariance, and the whitened observation vector.
// Scoring a candidate subject extends the factor by one block instead of
// refactoring the whole cluster.

namespace {

struct ClusterCache {
  std::vector<int> member_ids;  // subject indices, block order
  StackedCluster sc;
  Eigen::MatrixXd L;
  Eigen::VectorXd z;  // L^{-1} y
  double logml = 0.0;
};

double logml_from(const Eigen::MatrixXd& L, const Eigen::VectorXd& z) {
  return -0.5 * z.squaredNorm() - L.diagonal().array().log().sum() -
         0.5 * static_cast<double>(z.size()) * std::log(2.0 * M_PI);
}

}  // namespace

struct GibbsSampler::Impl {
  const TrajectoryDataset* data;
  DpgpHyperParams hyper;
  std::unordered_map<int, ClusterCache> cache;

  ClusterCache build(const std::vector<int>& members) const {
    ClusterCache c;
    c.member_ids = members;
    c.sc = StackedCluster::from_dataset(*data, members);
    const CholFactor chol =
        cholesky_with_escalation(assemble_cluster_cov(c.sc, hyper.cov));
    c.L = chol.L;
    c.z = c.L.triangularView<Eigen::Lower>().solve(c.sc.y);
    c.logml = logml_from(c.L, c.z);
    return c;
  }

  /// Extend `base` with one subject's block. Returns the augmented cache;
  /// falls back to a full rebuild if the Schur complement is not PD.
  ClusterCache extend(const ClusterCache& base, int subject) const {
    const auto& obs = data->subjects[subject].observations;
    const auto n = static_cast<Eigen::Index>(base.sc.size());
    const auto m = static_cast<Eigen::Index>(obs.size());
    const int new_owner = base.sc.n_subjects;

    Eigen::MatrixXd B(n, m);  // cross-covariance, latent kernel only
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        B(i, j) = se_kernel(base.sc.t[i], obs[j].time, hyper.cov.latent);
    Eigen::MatrixXd C(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double k = compound_covariance(obs[i].time, obs[j].time,
                                             new_owner, new_owner, hyper.cov);
        C(i, j) = k;
        C(j, i) = k;
      }
      C(i, i) += hyper.cov.nugget + hyper.cov.jitter;
    }

    const Eigen::MatrixXd X = base.L.triangularView<Eigen::Lower>().solve(B);
    Eigen::LLT<Eigen::MatrixXd> schur((C - X.transpose() * X).eval());

    ClusterCache out;
    out.member_ids = base.member_ids;
    out.member_ids.push_back(subject);
    if (schur.info() != Eigen::Success) return build(out.member_ids);

    out.sc.n_subjects = base.sc.n_subjects + 1;
    out.sc.y.resize(n + m);
    out.sc.t.resize(n + m);
    out.sc.y.head(n) = base.sc.y;
    out.sc.t.head(n) = base.sc.t;
    out.sc.owner = base.sc.owner;
    for (Eigen::Index j = 0; j < m; ++j) {
      out.sc.y[n + j] = obs[j].value;
      out.sc.t[n + j] = obs[j].time;
      out.sc.owner.push_back(new_owner);
    }
    out.L.setZero(n + m, n + m);
    out.L.topLeftCorner(n, n) = base.L;
    out.L.bottomLeftCorner(m, n) = X.transpose();
    out.L.bottomRightCorner(m, m) = schur.matrixL();
    out.z.resize(n + m);
    out.z.head(n) = base.z;
    out.z.tail(m) = schur.matrixL().solve(
        (out.sc.y.tail(m) - X.transpose() * base.z).eval());
    out.logml = logml_from(out.L, out.z);
    return out;
  }

  void sync(const CrpState& state) {
    // Rebuild any cluster whose membership no longer matches the cache.
    std::unordered_map<int, std::vector<int>> members;
    for (int i = 0; i < state.n_subjects(); ++i) {
      const int c = state.cluster_of(i);
      if (c != -1) members[c].push_back(i);
    }
    for (auto it = cache.begin(); it != cache.end();) {
      auto m = members.find(it->first);
      if (m == members.end())
        it = cache.erase(it);
      else
        ++it;
    }
    for (const auto& [id, mem] : members) {
      auto it = cache.find(id);
      if (it == cache.end() || it->second.member_ids != mem)
        cache[id] = build(mem);
    }
  }

  void sweep(CrpState& state, Rng& rng) {
    sync(state);
    const int n = state.n_subjects();
    for (int subject = 0; subject < n; ++subject) {
      const int old_cluster = state.remove(subject);
      if (state.cluster_sizes().count(old_cluster)) {
        auto remaining = state.members(old_cluster);
        cache[old_cluster] = build(remaining);
      } else {
        cache.erase(old_cluster);
      }

      const CrpWeights prior = crp_prior_weights(state, hyper.alpha);
      const std::size_t n_options = prior.existing.size() + 1;
      std::vector<double> logw(n_options);
      std::vector<ClusterCache> candidates(prior.existing.size());
      for (std::size_t k = 0; k < prior.existing.size(); ++k) {
        const auto& entry = cache.at(prior.existing[k].first);
        candidates[k] = extend(entry, subject);
        logw[k] = std::log(prior.existing[k].second) + candidates[k].logml -
                  entry.logml;
      }
      ClusterCache singleton = build({subject});
      logw.back() = std::log(prior.new_cluster) + singleton.logml;

      const double maxw = *std::max_element(logw.begin(), logw.end());
      if (!std::isfinite(maxw))
        throw NumericalFailure("all reassignment weights are -inf");
      std::vector<double> w(n_options);
      for (std::size_t k = 0; k < n_options; ++k)
        w[k] = std::exp(logw[k] - maxw);
      const std::size_t pick = rng.categorical(w);

      if (pick + 1 == n_options) {
        const int id = state.assign_new(subject);
        cache[id] = std::move(singleton);
      } else {
        const int id = prior.existing[pick].first;
        state.assign(subject, id);
        cache[id] = std::move(candidates[pick]);
      }
    }
  }
};

GibbsSampler::GibbsSampler(const TrajectoryDataset& data,
                           const DpgpHyperParams& hyper)
    : impl_(std::make_unique<Impl>()) {
  data.validate();
  hyper.validate();
  impl_->data = &data;
  impl_->hyper = hyper;
}

GibbsSampler::~GibbsSampler() = default;
GibbsSampler::GibbsSampler(GibbsSampler&&) noexcept = default;
GibbsSampler& GibbsSampler::operator=(GibbsSampler&&) noexcept = default;

void GibbsSampler::sweep(CrpState& state, Rng& rng) {
  impl_->sweep(state, rng);
}

void gibbs_sweep(CrpState& state, const TrajectoryDataset& data,
                 const DpgpHyperParams& hyper, Rng& rng) {
  GibbsSampler sampler(data, hyper);
  sampler.sweep(state, rng);
}

double joint_log_likelihood(const CrpState& state,
                            const TrajectoryDataset& data,
                            const DpgpHyperParams& hyper) {
  state.check_consistent();
  double ll = crp_partition_log_prior(state, hyper.alpha);
  for (const auto& [id, size] : state.cluster_sizes()) {
    const auto members = state.members(id);
    ll += log_marginal_likelihood(StackedCluster::from_dataset(data, members),
                                  hyper.cov);
  }
  return ll;
}

DpgpPosterior fit_dpgp(const TrajectoryDataset& data,
                       const DpgpHyperParams& hyper,
                       const DpgpFitSettings& settings, Rng& rng) {
  if (settings.burnin < 0 || settings.sweeps <= settings.burnin)
    throw InvalidConfig("need sweeps > burnin >= 0");
  if (settings.thin < 1) throw InvalidConfig("thin must be >= 1");

  GibbsSampler sampler(data, hyper);
  CrpState state = CrpState::single_cluster(static_cast<int>(data.n_subjects()));

  DpgpPosterior post;
  post.hyper = hyper;
  for (int s = 1; s <= settings.sweeps; ++s) {
    sampler.sweep(state, rng);
    if (s > settings.burnin && (s - settings.burnin - 1) % settings.thin == 0) {
      post.samples.push_back(state.assignment());
      post.joint_log_liks.push_back(joint_log_likelihood(state, data, hyper));
    }
  }
  post.map_index = static_cast<int>(
      std::max_element(post.joint_log_liks.begin(), post.joint_log_liks.end()) -
      post.joint_log_liks.begin());
  return post;
}

std::vector<double> dpgp_predict(
    const DpgpPosterior& post, const TrajectoryDataset& data,
    const std::vector<std::pair<std::string, double>>& queries) {
  if (post.samples.empty()) throw InvalidConfig("empty posterior");
  std::vector<int> query_subjects;
  query_subjects.reserve(queries.size());
  for (const auto& [id, t] : queries) {
    const int idx = data.index_of(id);
    if (idx < 0) throw InvalidConfig("unknown query subject '" + id + "'");
    query_subjects.push_back(idx);
  }

  std::vector<double> sums(queries.size(), 0.0);
  for (const auto& sample : post.samples) {
    // Group queries by cluster so each factorization happens once.
    std::unordered_map<int, std::vector<std::size_t>> by_cluster;
    for (std::size_t q = 0; q < queries.size(); ++q)
      by_cluster[sample[query_subjects[q]]].push_back(q);

    for (const auto& [cluster, qidx] : by_cluster) {
      std::vector<int> members;
      for (std::size_t i = 0; i < sample.size(); ++i)
        if (sample[i] == cluster) members.push_back(static_cast<int>(i));
      const StackedCluster sc = StackedCluster::from_dataset(data, members);
      const CholFactor chol =
          cholesky_with_escalation(assemble_cluster_cov(sc, post.hyper.cov));
      const Eigen::VectorXd zy =
          chol.L.triangularView<Eigen::Lower>().solve(sc.y);
      for (std::size_t q : qidx) {
        const auto it = std::find(members.begin(), members.end(),
                                  query_subjects[q]);
        const int owner = static_cast<int>(it - members.begin());
        const auto d = static_cast<Eigen::Index>(sc.size());
        Eigen::VectorXd kstar(d);
        for (Eigen::Index i = 0; i < d; ++i)
          kstar[i] = compound_covariance(queries[q].second, sc.t[i], owner,
                                         sc.owner[i], post.hyper.cov);
        const Eigen::VectorXd zk =
            chol.L.triangularView<Eigen::Lower>().solve(kstar);
        sums[q] += zk.dot(zy);
      }
    }
  }
  for (double& s : sums) s /= static_cast<double>(post.samples.size());
  return sums;
}

GridSearchResult grid_search(const TrajectoryDataset& data,
                             const std::vector<DpgpHyperParams>& grid,
                             const GridEvalConfig& eval_cfg) {
  if (grid.empty()) throw InvalidConfig("empty hyperparameter grid");

  std::vector<double> mean_rmse(grid.size(),
                                std::numeric_limits<double>::infinity());
  std::atomic<std::size_t> next{0};
  const int jobs = std::max(1, eval_cfg.jobs);

  auto score_point = [&](std::size_t g) {
    double total = 0.0;
    int ok = 0;
    for (int trial = 0; trial < eval_cfg.trials; ++trial) {
      try {
        Rng split_rng(derive_seed(eval_cfg.seed, "grid/split",
                                  g * 1000003ull + trial));
        HoldoutSplit split =
            make_holdout_split(data, eval_cfg.holdout_fraction, split_rng);
        Rng fit_rng(derive_seed(eval_cfg.seed, "grid/fit",
                                g * 1000003ull + trial));
        DpgpPosterior post =
            fit_dpgp(split.train, grid[g], eval_cfg.fit, fit_rng);
        std::vector<std::pair<std::string, double>> queries;
        std::vector<double> truths;
        for (const auto& h : split.heldout) {
          queries.emplace_back(h.subject_id, h.time);
          truths.push_back(h.value);
        }
        const std::vector<double> preds =
            dpgp_predict(post, split.train, queries);
        total += rmse(preds, truths);
        ++ok;
      } catch (const Error&) {
        // Failed trial contributes nothing; a point with no successes
        // keeps RMSE = +inf.
      }
    }
    if (ok > 0) mean_rmse[g] = total / ok;
  };

  if (jobs == 1) {
    for (std::size_t g = 0; g < grid.size(); ++g) score_point(g);
  } else {
    std::vector<std::thread> workers;
    for (int w = 0; w < jobs; ++w)
      workers.emplace_back([&] {
        for (std::size_t g = next.fetch_add(1); g < grid.size();
             g = next.fetch_add(1))
          score_point(g);
      });
    for (auto& t : workers) t.join();
  }

  GridSearchResult res;
  res.mean_rmse = mean_rmse;
  res.best_index = static_cast<std::size_t>(
      std::min_element(mean_rmse.begin(), mean_rmse.end()) - mean_rmse.begin());
  res.best = grid[res.best_index];
  return res;
}

}  // namespace trajclust
