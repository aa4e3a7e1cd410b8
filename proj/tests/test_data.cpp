#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "trajclust/dataset.hpp"
#include "trajclust/rng.hpp"

using namespace trajclust;

namespace {

TrajectoryDataset grid_dataset(const std::vector<std::vector<double>>& values,
                               const std::vector<double>& times) {
  TrajectoryDataset d;
  d.schedule_hint = times;
  for (std::size_t i = 0; i < values.size(); ++i) {
    Subject s;
    s.id = "S" + std::to_string(i + 1);
    for (std::size_t j = 0; j < times.size(); ++j)
      s.observations.push_back({times[j], values[i][j]});
    d.subjects.push_back(std::move(s));
  }
  return d;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("zscore: two-point column symmetry") {
  auto d = grid_dataset({{1.0}, {3.0}}, {4.0});
  auto z = zscore_per_timepoint(d);
  CHECK(z.subjects[0].observations[0].value ==
        doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(z.subjects[1].observations[0].value ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("zscore: zero-variance column rejected") {
  auto d = grid_dataset({{2.0, 1.0}, {2.0, 3.0}}, {1.5, 2.0});
  CHECK_THROWS_AS(zscore_per_timepoint(d), DegenerateColumn);
}

TEST_CASE("zscore: single-observation column rejected") {
  TrajectoryDataset d;
  d.subjects.push_back({"a", {{1.5, 1.0}, {2.0, 2.0}}});
  d.subjects.push_back({"b", {{1.5, 3.0}}});
  CHECK_THROWS_AS(zscore_per_timepoint(d), DegenerateColumn);
}

TEST_CASE("zscore: off-schedule time rejected when a schedule is given") {
  auto d = grid_dataset({{1.0, 2.0}, {2.0, 1.0}}, {1.5, 2.0});
  d.subjects[0].observations[1].time = 3.0;  // not on the shared grid
  CHECK_THROWS_AS(zscore_per_timepoint(d), DegenerateColumn);
}

TEST_CASE("zscore: 95x4 matrix has columns recentred to mean 0 sd 1") {
  Rng rng(11);
  std::vector<double> schedule = {1.5, 2.0, 4.0, 5.0};
  std::vector<std::vector<double>> vals(95, std::vector<double>(4));
  for (auto& row : vals)
    for (auto& v : row) v = 3.0 * rng.normal() + 1.0;
  auto z = zscore_per_timepoint(grid_dataset(vals, schedule));

  // Independent recomputation of the column moments.
  for (std::size_t j = 0; j < schedule.size(); ++j) {
    std::vector<double> col;
    for (const auto& s : z.subjects) col.push_back(s.observations[j].value);
    const double mean =
        std::accumulate(col.begin(), col.end(), 0.0) / col.size();
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (col.size() - 1.0));
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(sd - 1.0) < 1e-9);
  }
}

TEST_CASE("zscore is idempotent") {
  Rng rng(3);
  std::vector<std::vector<double>> vals(20, std::vector<double>(3));
  for (auto& row : vals)
    for (auto& v : row) v = rng.normal();
  auto d = grid_dataset(vals, {1.0, 2.0, 3.0});
  for (auto mode : {ZscoreMode::Standardize, ZscoreMode::InverseNormal}) {
    auto once = zscore_per_timepoint(d, mode);
    auto twice = zscore_per_timepoint(once, mode);
    for (std::size_t i = 0; i < d.subjects.size(); ++i)
      for (std::size_t j = 0; j < 3; ++j)
        CHECK(std::abs(once.subjects[i].observations[j].value -
                       twice.subjects[i].observations[j].value) < 1e-9);
  }
}

TEST_CASE("zscore: inverse-normal column is a normal-quantile ladder") {
  auto d = grid_dataset({{5.0}, {1.0}, {3.0}, {9.0}}, {2.0});
  auto z = zscore_per_timepoint(d, ZscoreMode::InverseNormal);
  // Ranks 3,1,2,4 of 4 -> quantiles at (r-0.5)/4.
  std::vector<double> got;
  for (const auto& s : z.subjects) got.push_back(s.observations[0].value);
  CHECK(got[1] < got[2]);
  CHECK(got[2] < got[0]);
  CHECK(got[0] < got[3]);
  CHECK(got[0] == doctest::Approx(-got[2]).epsilon(1e-9));  // symmetric ranks
  CHECK(got[3] == doctest::Approx(-got[1]).epsilon(1e-9));
}

TEST_CASE("simulate: defaults mirror the four-wave 95-subject design") {
  SimulationConfig cfg;
  CHECK(cfg.n_subjects == 95);
  CHECK(cfg.schedule == std::vector<double>{1.5, 2.0, 4.0, 5.0});
  auto cohort = simulate_cohort(cfg);
  CHECK(cohort.data.n_subjects() == 95);
  CHECK(cohort.data.n_observations() == 95 * 4);
}

TEST_CASE("simulate: noiseless limit reproduces the cluster means") {
  SimulationConfig cfg;
  cfg.n_subjects = 10;
  cfg.individual_noise_sd = 0.0;
  cfg.individual_wiggle.amplitude = 0.0;
  auto cohort = simulate_cohort(cfg);
  for (std::size_t i = 0; i < cohort.data.subjects.size(); ++i) {
    const auto& poly = cfg.cluster_mean_polys[cohort.true_labels[i]];
    for (const auto& o : cohort.data.subjects[i].observations)
      CHECK(o.value == doctest::Approx(polyval(poly, o.time)).epsilon(1e-9));
  }
}

TEST_CASE("simulate: same seed is bit-identical") {
  SimulationConfig cfg;
  cfg.n_subjects = 40;
  cfg.missing_rate = 0.2;
  cfg.seed = 123;
  auto a = simulate_cohort(cfg);
  auto b = simulate_cohort(cfg);
  REQUIRE(a.data.subjects.size() == b.data.subjects.size());
  CHECK(a.true_labels == b.true_labels);
  for (std::size_t i = 0; i < a.data.subjects.size(); ++i) {
    REQUIRE(a.data.subjects[i].observations.size() ==
            b.data.subjects[i].observations.size());
    for (std::size_t j = 0; j < a.data.subjects[i].observations.size(); ++j) {
      CHECK(a.data.subjects[i].observations[j].time ==
            b.data.subjects[i].observations[j].time);
      CHECK(a.data.subjects[i].observations[j].value ==
            b.data.subjects[i].observations[j].value);
    }
  }
}

TEST_CASE("simulate: times stay on the schedule, each subject keeps >= 1") {
  SimulationConfig cfg;
  cfg.n_subjects = 200;
  cfg.missing_rate = 0.85;
  cfg.seed = 9;
  auto cohort = simulate_cohort(cfg);
  for (const auto& s : cohort.data.subjects) {
    CHECK(s.observations.size() >= 1);
    double prev = -1.0;
    for (const auto& o : s.observations) {
      CHECK(std::find(cfg.schedule.begin(), cfg.schedule.end(), o.time) !=
            cfg.schedule.end());
      CHECK(o.time > prev);
      prev = o.time;
    }
  }
}

TEST_CASE("simulate: empirical cluster proportions match the weights") {
  SimulationConfig cfg;
  cfg.n_subjects = 2000;
  cfg.cluster_weights = {0.5, 0.3, 0.2};
  cfg.seed = 77;
  auto cohort = simulate_cohort(cfg);
  std::vector<int> counts(3, 0);
  for (int k : cohort.true_labels) ++counts[k];
  for (int k = 0; k < 3; ++k) {
    const double p = cfg.cluster_weights[k];
    const double se = std::sqrt(p * (1.0 - p) / cfg.n_subjects);
    CHECK(std::abs(counts[k] / 2000.0 - p) < 3.0 * se);
  }
}

TEST_CASE("simulate: invalid configs rejected") {
  SimulationConfig cfg;
  cfg.cluster_weights = {0.5, 0.3, 0.3};
  CHECK_THROWS_AS(simulate_cohort(cfg), InvalidConfig);
  cfg = {};
  cfg.schedule = {2.0, 1.5};
  CHECK_THROWS_AS(simulate_cohort(cfg), InvalidConfig);
  cfg = {};
  cfg.missing_rate = 1.0;
  CHECK_THROWS_AS(simulate_cohort(cfg), InvalidConfig);
}

TEST_CASE("csv: round-trip preserves a simulated cohort bit-for-bit") {
  SimulationConfig cfg;
  cfg.n_subjects = 30;
  cfg.missing_rate = 0.3;
  cfg.seed = 5;
  auto cohort = simulate_cohort(cfg);
  const auto path = temp_path("trajclust_roundtrip.csv");
  save_csv(cohort.data, path);
  auto loaded = load_csv(path);
  REQUIRE(loaded.subjects.size() == cohort.data.subjects.size());
  for (std::size_t i = 0; i < loaded.subjects.size(); ++i) {
    CHECK(loaded.subjects[i].id == cohort.data.subjects[i].id);
    REQUIRE(loaded.subjects[i].observations.size() ==
            cohort.data.subjects[i].observations.size());
    for (std::size_t j = 0; j < loaded.subjects[i].observations.size(); ++j) {
      CHECK(loaded.subjects[i].observations[j].time ==
            cohort.data.subjects[i].observations[j].time);
      CHECK(loaded.subjects[i].observations[j].value ==
            cohort.data.subjects[i].observations[j].value);
    }
  }
  std::remove(path.c_str());
}

TEST_CASE("csv: non-numeric value reports the line number") {
  const auto path = temp_path("trajclust_bad.csv");
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("subject_id,age_years,value\nA,1.5,0.3\nA,2.0,oops\n", f);
    std::fclose(f);
  }
  try {
    load_csv(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line_number == 3);
  }
  std::remove(path.c_str());
}

TEST_CASE("csv: non-monotone times name the subject") {
  const auto path = temp_path("trajclust_nonmono.csv");
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("subject_id,age_years,value\nA,2.0,0.3\nA,1.5,0.1\n", f);
    std::fclose(f);
  }
  try {
    load_csv(path);
    FAIL("expected NonMonotoneTimes");
  } catch (const NonMonotoneTimes& e) {
    CHECK(e.subject == "A");
  }
  std::remove(path.c_str());
}

TEST_CASE("labels csv round-trip") {
  SimulationConfig cfg;
  cfg.n_subjects = 12;
  cfg.seed = 2;
  auto cohort = simulate_cohort(cfg);
  const auto path = temp_path("trajclust_labels.csv");
  save_labels_csv(cohort.data, cohort.true_labels, path);
  auto labels = load_labels_csv(path);
  REQUIRE(labels.size() == 12);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CHECK(labels[i].first == cohort.data.subjects[i].id);
    CHECK(labels[i].second == cohort.true_labels[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("oracle_conditional_mean: no data falls back to the mean curve") {
  SimulationConfig cfg;
  CHECK(oracle_conditional_mean(cfg, 2, {}, 5.0) ==
        doctest::Approx(polyval(cfg.cluster_mean_polys[2], 5.0)));
}
