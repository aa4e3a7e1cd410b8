#include "trajclust/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <thread>

namespace trajclust {

HoldoutSplit make_holdout_split(const TrajectoryDataset& data, double fraction,
                                Rng& rng) {
  data.validate();
  if (fraction < 0.0 || fraction >= 1.0)
    throw InvalidConfig("holdout fraction must be in [0, 1)");

  const std::size_t n = data.n_subjects();
  const auto want = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(n) + 0.5));

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < n; ++i)
    if (data.subjects[i].observations.size() >= 2) eligible.push_back(i);
  if (eligible.size() < want)
    throw NotEnoughSubjects("only " + std::to_string(eligible.size()) +
                            " subjects have >= 2 observations, need " +
                            std::to_string(want));

  rng.shuffle(eligible);
  std::vector<bool> selected(n, false);
  for (std::size_t i = 0; i < want; ++i) selected[eligible[i]] = true;

  HoldoutSplit split;
  split.train = data;
  for (std::size_t i = 0; i < n; ++i) {
    if (!selected[i]) continue;
    auto& obs = split.train.subjects[i].observations;
    const Observation last = obs.back();
    obs.pop_back();
    split.heldout.push_back({data.subjects[i].id, last.time, last.value});
  }
  return split;
}

double rmse(std::span<const double> preds, std::span<const double> truths) {
  if (preds.size() != truths.size() || preds.empty())
    throw InvalidConfig("rmse needs equal non-empty vectors");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - truths[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

double pearson(std::span<const double> preds, std::span<const double> truths) {
  if (preds.size() != truths.size() || preds.empty())
    throw InvalidConfig("pearson needs equal non-empty vectors");
  const double n = static_cast<double>(preds.size());
  const double mx = std::accumulate(preds.begin(), preds.end(), 0.0) / n;
  const double my = std::accumulate(truths.begin(), truths.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    sxy += (preds[i] - mx) * (truths[i] - my);
    sxx += (preds[i] - mx) * (preds[i] - mx);
    syy += (truths[i] - my) * (truths[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw ZeroVariance("pearson input has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.empty())
    throw InvalidConfig("ARI needs equal non-empty label vectors");
  std::map<std::pair<int, int>, long long> joint;
  std::map<int, long long> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++ca[a[i]];
    ++cb[b[i]];
  }
  auto choose2 = [](long long m) { return m * (m - 1) / 2.0; };
  double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [k, m] : joint) sum_joint += choose2(m);
  for (const auto& [k, m] : ca) sum_a += choose2(m);
  for (const auto& [k, m] : cb) sum_b += choose2(m);
  const double total = choose2(static_cast<long long>(a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial
  return (sum_joint - expected) / (max_index - expected);
}

SummaryStats summarize(std::span<const double> values) {
  SummaryStats s;
  if (values.empty()) return s;
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) /
           static_cast<double>(v.size());
  // Linear interpolation between order statistics (R type 7).
  auto quantile = [&](double p) {
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - std::floor(h)) * (v[hi] - v[lo]);
  };
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  return s;
}

TrialReport run_trials(const Model& model, const TrajectoryDataset& data,
                       double fraction, int n_trials, std::uint64_t seed,
                       int jobs) {
  if (n_trials < 1) throw InvalidConfig("n_trials must be >= 1");

  struct TrialResult {
    bool ok = false;
    double rmse_v = 0.0, corr_v = 0.0, seconds = 0.0;
  };
  std::vector<TrialResult> results(n_trials);

  auto run_one = [&](int t) {
    TrialResult& r = results[t];
    try {
      Rng split_rng(derive_seed(seed, "trial/split", t));
      HoldoutSplit split = make_holdout_split(data, fraction, split_rng);
      std::vector<std::pair<std::string, double>> queries;
      std::vector<double> truths;
      for (const auto& h : split.heldout) {
        queries.emplace_back(h.subject_id, h.time);
        truths.push_back(h.value);
      }
      double seconds = 0.0;
      const std::vector<double> preds = model.fit_and_predict(
          split.train, queries, derive_seed(seed, "trial/fit", t), &seconds);
      r.rmse_v = rmse(preds, truths);
      r.corr_v = pearson(preds, truths);
      r.seconds = seconds;
      r.ok = true;
    } catch (const Error&) {
      r.ok = false;
    }
  };

  jobs = std::max(1, jobs);
  if (jobs == 1) {
    for (int t = 0; t < n_trials; ++t) run_one(t);
  } else {
    std::vector<std::thread> workers;
    std::atomic<int> next{0};
    for (int w = 0; w < std::min(jobs, n_trials); ++w)
      workers.emplace_back([&] {
        for (int t = next.fetch_add(1); t < n_trials; t = next.fetch_add(1))
          run_one(t);
      });
    for (auto& th : workers) th.join();
  }

  TrialReport report;
  report.model = model.tag();
  for (const auto& r : results) {
    if (!r.ok) {
      ++report.n_failed;
      continue;
    }
    report.rmse_values.push_back(r.rmse_v);
    report.corr_values.push_back(r.corr_v);
    report.fit_seconds.push_back(r.seconds);
  }
  if (report.n_failed * 5 > n_trials)
    throw FailureRateExceeded(std::to_string(report.n_failed) + " of " +
                              std::to_string(n_trials) + " trials failed");
  report.rmse_summary = summarize(report.rmse_values);
  report.corr_summary = summarize(report.corr_values);
  return report;
}

std::vector<ComparisonRow> compare_models(std::span<const TrialReport> reports) {
  std::vector<ComparisonRow> rows;
  rows.reserve(reports.size());
  for (const auto& rep : reports) {
    ComparisonRow row;
    row.model = rep.model;
    row.rmse = rep.rmse_summary;
    row.corr = rep.corr_summary;
    row.mean_fit_seconds =
        rep.fit_seconds.empty()
            ? 0.0
            : std::accumulate(rep.fit_seconds.begin(), rep.fit_seconds.end(),
                              0.0) /
                  static_cast<double>(rep.fit_seconds.size());
    rows.push_back(row);
  }
  return rows;
}

void write_figure_csv(std::span<const ComparisonRow> rows,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "model,metric,q1,median,q3,mean\n";
  for (const auto& r : rows) {
    out << r.model << ",rmse," << format_double(r.rmse.q1) << ','
        << format_double(r.rmse.median) << ',' << format_double(r.rmse.q3)
        << ',' << format_double(r.rmse.mean) << '\n';
    out << r.model << ",correlation," << format_double(r.corr.q1) << ','
        << format_double(r.corr.median) << ',' << format_double(r.corr.q3)
        << ',' << format_double(r.corr.mean) << '\n';
    out << r.model << ",fit_seconds,,,," << format_double(r.mean_fit_seconds)
        << '\n';
  }
}

}  // namespace trajclust
