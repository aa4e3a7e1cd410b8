#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "trajclust/lcmm.hpp"

using namespace trajclust;

namespace {

SimulationConfig nc_cohort_config(int n_subjects, std::uint64_t seed,
                                  double noise_sd = 0.4) {
  SimulationConfig cfg;
  cfg.n_subjects = n_subjects;
  cfg.seed = seed;
  cfg.individual_noise_sd = noise_sd;
  cfg.individual_wiggle.amplitude = 0.0;  // pure NC generative model
  return cfg;
}

}  // namespace

TEST_CASE("class_cov_matrix: NC is a scaled identity") {
  Eigen::VectorXd t(2);
  t << 1.5, 2.0;
  auto S = class_cov_matrix(t, CovKind::NC, 0.0, 0.0, 1.0);
  CHECK((S - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("class_cov_matrix: BM off-diagonal is min of times") {
  Eigen::VectorXd t(2);
  t << 1.5, 2.0;
  auto S = class_cov_matrix(t, CovKind::BM, 1.0, 0.0, 0.3);
  CHECK(S(0, 1) == doctest::Approx(1.5));
  CHECK(S(1, 0) == doctest::Approx(1.5));
  CHECK(S(0, 0) == doctest::Approx(1.5 + 0.3));
  CHECK(S(1, 1) == doctest::Approx(2.0 + 0.3));
}

TEST_CASE("class_cov_matrix: AR decay") {
  Eigen::VectorXd t(2);
  t << 1.0, 3.0;
  auto S = class_cov_matrix(t, CovKind::AR, 1.0, 0.5, 0.2);
  CHECK(S(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(S(0, 0) == doctest::Approx(1.2));
}

TEST_CASE("class_cov_matrix: rejects non-increasing times") {
  Eigen::VectorXd t(2);
  t << 2.0, 1.5;
  CHECK_THROWS_AS(class_cov_matrix(t, CovKind::NC, 0.0, 0.0, 1.0),
                  InvalidConfig);
}

TEST_CASE("lcmm_loglik: G=1 collapses to a plain Gaussian density") {
  TrajectoryDataset d;
  d.subjects.push_back({"a", {{1.0, 0.5}, {2.0, 0.8}}});
  d.subjects.push_back({"b", {{1.0, -0.1}, {3.0, 0.4}}});
  LcmmSpec spec;
  spec.n_classes = 1;
  spec.cov_kind = CovKind::AR;
  Eigen::MatrixXd v(1, 2);
  v << 0.1, 0.2;
  Eigen::VectorXd pi(1);
  pi << 1.0;
  const double got = lcmm_loglik(d, spec, v, pi, 0.5, 1.0, 0.3);

  double expected = 0.0;
  for (const auto& s : d.subjects) {
    Eigen::VectorXd t(2), y(2);
    for (int i = 0; i < 2; ++i) {
      t[i] = s.observations[i].time;
      y[i] = s.observations[i].value;
    }
    Eigen::MatrixXd S = class_cov_matrix(t, CovKind::AR, 0.5, 1.0, 0.3);
    Eigen::VectorXd mu(2);
    mu << 0.1 + 0.2 * t[0], 0.1 + 0.2 * t[1];
    const Eigen::VectorXd r = y - mu;
    expected += -0.5 * r.dot(S.inverse() * r) -
                0.5 * std::log(S.determinant()) - std::log(2.0 * M_PI);
  }
  CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("lcmm_loglik: G=2 matches a brute-force mixture oracle") {
  TrajectoryDataset d;
  d.subjects.push_back({"a", {{1.0, 0.5}, {2.0, 0.8}}});
  d.subjects.push_back({"b", {{1.5, -0.3}, {3.0, 0.2}}});
  LcmmSpec spec;
  spec.n_classes = 2;
  spec.cov_kind = CovKind::BM;
  Eigen::MatrixXd v(2, 2);
  v << 0.0, 0.3, -0.5, 0.1;
  Eigen::VectorXd pi(2);
  pi << 0.6, 0.4;
  const double w_var = 0.4, eps2 = 0.2;
  const double got = lcmm_loglik(d, spec, v, pi, w_var, 0.0, eps2);

  // Direct per-subject sum over classes with dense densities.
  double expected = 0.0;
  for (const auto& s : d.subjects) {
    Eigen::VectorXd t(2), y(2);
    for (int i = 0; i < 2; ++i) {
      t[i] = s.observations[i].time;
      y[i] = s.observations[i].value;
    }
    Eigen::MatrixXd S = class_cov_matrix(t, CovKind::BM, w_var, 0.0, eps2);
    const Eigen::MatrixXd Sinv = S.inverse();
    const double norm =
        1.0 / (2.0 * M_PI * std::sqrt(S.determinant()));
    double mix = 0.0;
    for (int g = 0; g < 2; ++g) {
      Eigen::VectorXd mu(2);
      mu << v(g, 0) + v(g, 1) * t[0], v(g, 0) + v(g, 1) * t[1];
      const Eigen::VectorXd r = y - mu;
      mix += pi[g] * norm * std::exp(-0.5 * r.dot(Sinv * r));
    }
    expected += std::log(mix);
  }
  CHECK(got == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("lcmm_loglik: exactly invariant under class relabeling and subject order") {
  auto cohort = simulate_cohort(nc_cohort_config(12, 31));
  LcmmSpec spec;
  spec.n_classes = 2;
  spec.cov_kind = CovKind::AR;
  Eigen::MatrixXd v(2, 2);
  v << 0.2, -0.1, -0.4, 0.3;
  Eigen::VectorXd pi(2);
  pi << 0.7, 0.3;
  const double base = lcmm_loglik(cohort.data, spec, v, pi, 0.3, 0.8, 0.2);

  Eigen::MatrixXd v_swapped(2, 2);
  v_swapped << v.row(1), v.row(0);
  Eigen::VectorXd pi_swapped(2);
  pi_swapped << pi[1], pi[0];
  CHECK(lcmm_loglik(cohort.data, spec, v_swapped, pi_swapped, 0.3, 0.8, 0.2) ==
        base);

  TrajectoryDataset reversed = cohort.data;
  std::reverse(reversed.subjects.begin(), reversed.subjects.end());
  CHECK(lcmm_loglik(reversed, spec, v, pi, 0.3, 0.8, 0.2) == base);
}

TEST_CASE("em_fit: G=1 NC equals pooled ordinary least squares") {
  auto cohort = simulate_cohort(nc_cohort_config(40, 8));
  LcmmSpec spec;
  spec.n_classes = 1;
  spec.cov_kind = CovKind::NC;
  EmSettings settings;
  settings.n_starts = 1;
  Rng rng(1);
  auto fit = em_fit(cohort.data, spec, settings, rng);

  // Closed-form pooled regression.
  Eigen::Matrix2d XtX = Eigen::Matrix2d::Zero();
  Eigen::Vector2d Xty = Eigen::Vector2d::Zero();
  std::size_t n_obs = 0;
  for (const auto& s : cohort.data.subjects)
    for (const auto& o : s.observations) {
      Eigen::Vector2d x(1.0, o.time);
      XtX += x * x.transpose();
      Xty += x * o.value;
      ++n_obs;
    }
  const Eigen::Vector2d beta = XtX.ldlt().solve(Xty);
  double rss = 0.0;
  for (const auto& s : cohort.data.subjects)
    for (const auto& o : s.observations) {
      const double r = o.value - beta[0] - beta[1] * o.time;
      rss += r * r;
    }
  CHECK(fit.v(0, 0) == doctest::Approx(beta[0]).epsilon(1e-6));
  CHECK(fit.v(0, 1) == doctest::Approx(beta[1]).epsilon(1e-6));
  CHECK(fit.sigma_eps2 ==
        doctest::Approx(rss / static_cast<double>(n_obs)).epsilon(1e-6));
}

TEST_CASE("em_fit: loglik trace is non-decreasing on random datasets") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SimulationConfig cfg = nc_cohort_config(25, seed);
    cfg.individual_wiggle.amplitude = (seed % 2) ? 0.0 : 0.3;
    auto cohort = simulate_cohort(cfg);
    LcmmSpec spec;
    spec.n_classes = 1 + static_cast<int>(seed % 3);
    spec.cov_kind = static_cast<CovKind>(seed % 3);
    EmSettings settings;
    settings.n_starts = 2;
    settings.max_iters = 60;
    Rng rng(seed);
    LcmmFit fit;
    try {
      fit = em_fit(cohort.data, spec, settings, rng);
    } catch (const DegenerateFit&) {
      continue;  // an unlucky split; monotonicity applies to completed runs
    }
    for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i)
      CHECK(fit.loglik_trace[i] >= fit.loglik_trace[i - 1] - 1e-8);
  }
}

TEST_CASE("em_fit: recovers planted 3-class NC mean curves") {
  SimulationConfig cfg = nc_cohort_config(90, 14, 0.3);
  auto cohort = simulate_cohort(cfg);
  LcmmSpec spec;
  spec.n_classes = 3;
  spec.cov_kind = CovKind::NC;
  EmSettings settings;
  Rng rng(5);
  auto fit = em_fit(cohort.data, spec, settings, rng);

  // Match each planted curve to its closest recovered class.
  for (const auto& poly : cfg.cluster_mean_polys) {
    double best = std::numeric_limits<double>::infinity();
    for (int g = 0; g < 3; ++g) {
      const double d = std::abs(fit.v(g, 0) - poly[0]) +
                       std::abs(fit.v(g, 1) - poly[1]);
      best = std::min(best, d);
    }
    CHECK(best < 0.5);
  }
}

TEST_CASE("bic: arithmetic and monotonicity in parameter count") {
  LcmmFit fit;
  fit.loglik = 0.0;
  fit.n_params = 0;
  CHECK(bic(fit, 95) == doctest::Approx(0.0));
  fit.loglik = -100.0;
  fit.n_params = 3;
  CHECK(bic(fit, 95) ==
        doctest::Approx(200.0 + 3.0 * std::log(95.0)).epsilon(1e-12));
  LcmmFit more = fit;
  more.n_params = 4;
  CHECK(bic(more, 95) > bic(fit, 95));
}

TEST_CASE("select_model: single candidate wins; argmin is consistent") {
  auto cohort = simulate_cohort(nc_cohort_config(30, 19));
  EmSettings settings;
  settings.n_starts = 2;
  settings.max_iters = 80;
  Rng rng(3);

  LcmmSpec only;
  only.n_classes = 2;
  only.cov_kind = CovKind::NC;
  auto res1 = select_model(cohort.data, {only}, settings, rng);
  CHECK(res1.best.n_classes == 2);
  CHECK(res1.best.cov_kind == CovKind::NC);

  std::vector<LcmmSpec> candidates;
  for (auto kind : {CovKind::NC, CovKind::AR})
    for (int g = 1; g <= 3; ++g) candidates.push_back({g, kind});
  auto res = select_model(cohort.data, candidates, settings, rng);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : res.table) best = std::min(best, e.bic_value);
  bool found = false;
  for (const auto& e : res.table)
    if (e.spec.n_classes == res.best.n_classes &&
        e.spec.cov_kind == res.best.cov_kind)
      found = e.bic_value == best;
  CHECK(found);
}

TEST_CASE("lcmm_predict: G=1 NC prediction is the fitted line, independent of values") {
  auto cohort = simulate_cohort(nc_cohort_config(30, 23));
  LcmmSpec spec;
  spec.n_classes = 1;
  spec.cov_kind = CovKind::NC;
  EmSettings settings;
  settings.n_starts = 1;
  Rng rng(9);
  auto fit = em_fit(cohort.data, spec, settings, rng);
  std::vector<Observation> obs = {{1.5, 0.3}, {2.0, -0.4}};
  const double p1 = lcmm_predict(fit, obs, 5.0);
  CHECK(p1 == doctest::Approx(fit.v(0, 0) + 5.0 * fit.v(0, 1)).epsilon(1e-12));
  // Changing the observed values does not move an NC single-class forecast.
  obs[0].value = 3.0;
  obs[1].value = -2.0;
  CHECK(lcmm_predict(fit, obs, 5.0) == doctest::Approx(p1).epsilon(1e-12));
}

TEST_CASE("lcmm_predict: AR single-class conditional-Gaussian oracle") {
  LcmmFit fit;
  fit.spec = {1, CovKind::AR};
  fit.v.resize(1, 2);
  fit.v << 0.2, 0.1;
  fit.pi.resize(1);
  fit.pi << 1.0;
  fit.w_var = 0.5;
  fit.w_rate = 0.7;
  fit.sigma_eps2 = 0.2;
  const std::vector<Observation> obs = {{1.5, 0.9}, {2.0, 0.1}};
  const double qt = 4.0;
  const double got = lcmm_predict(fit, obs, qt);

  // Hand-built 2x2 conditional Gaussian.
  Eigen::Matrix2d S;
  S << 0.5 + 0.2, 0.5 * std::exp(-0.7 * 0.5), 0.5 * std::exp(-0.7 * 0.5),
      0.5 + 0.2;
  Eigen::Vector2d cross(0.5 * std::exp(-0.7 * 2.5), 0.5 * std::exp(-0.7 * 2.0));
  Eigen::Vector2d resid(0.9 - (0.2 + 0.1 * 1.5), 0.1 - (0.2 + 0.1 * 2.0));
  const double expected =
      0.2 + 0.1 * qt + cross.dot(S.inverse() * resid);
  CHECK(got == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("lcmm_predict: recomputed class posteriors sum to one") {
  auto cohort = simulate_cohort(nc_cohort_config(45, 29));
  LcmmSpec spec;
  spec.n_classes = 3;
  spec.cov_kind = CovKind::NC;
  EmSettings settings;
  Rng rng(2);
  auto fit = em_fit(cohort.data, spec, settings, rng);
  for (Eigen::Index i = 0; i < fit.posteriors.rows(); ++i)
    CHECK(fit.posteriors.row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(fit.pi.sum() == doctest::Approx(1.0).epsilon(1e-10));
}
