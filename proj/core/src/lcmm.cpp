#include "trajclust/lcmm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>

#include "trajclust/kernels.hpp"

namespace trajclust {

std::string to_string(CovKind k) {
  switch (k) {
    case CovKind::NC: return "NC";
    case CovKind::AR: return "AR";
    case CovKind::BM: return "BM";
  }
  return "?";
}

CovKind cov_kind_from_string(const std::string& s) {
  std::string u;
  for (char c : s) u.push_back(static_cast<char>(std::toupper(c)));
  if (u == "NC") return CovKind::NC;
  if (u == "AR") return CovKind::AR;
  if (u == "BM") return CovKind::BM;
  throw InvalidConfig("unknown covariance kind '" + s + "'");
}

void LcmmSpec::validate() const {
  if (n_classes < 1) throw InvalidConfig("n_classes must be >= 1");
}

Eigen::MatrixXd class_cov_matrix(const Eigen::VectorXd& times, CovKind kind,
                                 double w_var, double w_rate,
                                 double sigma_eps2) {
  const Eigen::Index n = times.size();
  for (Eigen::Index i = 1; i < n; ++i)
    if (times[i] <= times[i - 1])
      throw InvalidConfig("times must be strictly increasing");
  if (sigma_eps2 <= 0.0) throw InvalidConfig("sigma_eps2 must be > 0");

  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(n, n);
  switch (kind) {
    case CovKind::NC:
      break;
    case CovKind::AR:
      if (w_var < 0.0 || w_rate <= 0.0)
        throw InvalidConfig("AR needs w_var >= 0 and w_rate > 0");
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          S(i, j) = w_var * std::exp(-w_rate * std::abs(times[i] - times[j]));
      break;
    case CovKind::BM:
      if (w_var < 0.0) throw InvalidConfig("BM needs w_var >= 0");
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          S(i, j) = w_var * std::min(times[i], times[j]);
      break;
  }
  S.diagonal().array() += sigma_eps2;
  return S;
}

namespace {

struct SubjectData {
  Eigen::VectorXd y;
  Eigen::VectorXd t;
  Eigen::MatrixXd X;  // [1, t] design
};

std::vector<SubjectData> pack(const TrajectoryDataset& data) {
  std::vector<SubjectData> out;
  out.reserve(data.subjects.size());
  for (const auto& s : data.subjects) {
    const auto n = static_cast<Eigen::Index>(s.observations.size());
    SubjectData d;
    d.y.resize(n);
    d.t.resize(n);
    d.X.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      d.y[i] = s.observations[i].value;
      d.t[i] = s.observations[i].time;
      d.X(i, 0) = 1.0;
      d.X(i, 1) = s.observations[i].time;
    }
    out.push_back(std::move(d));
  }
  return out;
}

double mvn_logpdf(const Eigen::VectorXd& resid, const Eigen::MatrixXd& S) {
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) {
    Eigen::MatrixXd Sj = S;
    for (double extra = 1e-8; extra <= 1e-4 + 1e-18; extra *= 10.0) {
      Sj.diagonal().array() += extra;
      llt.compute(Sj);
      if (llt.info() == Eigen::Success) break;
    }
    if (llt.info() != Eigen::Success)
      throw NotPositiveDefinite("class covariance not positive definite");
  }
  const Eigen::MatrixXd L = llt.matrixL();
  const Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(resid);
  return -0.5 * z.squaredNorm() - L.diagonal().array().log().sum() -
         0.5 * static_cast<double>(resid.size()) * std::log(2.0 * M_PI);
}

/// Per-subject, per-class Gaussian log-densities at the given parameters.
Eigen::MatrixXd component_logliks(const std::vector<SubjectData>& subjects,
                                  const LcmmSpec& spec,
                                  const Eigen::MatrixXd& v, double w_var,
                                  double w_rate, double sigma_eps2) {
  const auto n = static_cast<Eigen::Index>(subjects.size());
  const int G = spec.n_classes;
  Eigen::MatrixXd ll(n, G);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::MatrixXd S = class_cov_matrix(subjects[i].t, spec.cov_kind,
                                               w_var, w_rate, sigma_eps2);
    for (int g = 0; g < G; ++g)
      ll(i, g) = mvn_logpdf(subjects[i].y - subjects[i].X * v.row(g).transpose(), S);
  }
  return ll;
}

double loglik_from_components(const Eigen::MatrixXd& comp,
                              const Eigen::VectorXd& pi) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < comp.rows(); ++i) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (Eigen::Index g = 0; g < comp.cols(); ++g)
      maxv = std::max(maxv, comp(i, g) + std::log(pi[g]));
    double acc = 0.0;
    for (Eigen::Index g = 0; g < comp.cols(); ++g)
      acc += std::exp(comp(i, g) + std::log(pi[g]) - maxv);
    total += maxv + std::log(acc);
  }
  return total;
}

/// Golden-section maximization of f over [lo, hi] (log-spaced search).
double golden_max(const std::function<double(double)>& f, double lo, double hi,
                  int iters = 45) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(lo), b = std::log(hi);
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = f(std::exp(x1)), f2 = f(std::exp(x2));
  for (int i = 0; i < iters; ++i) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = f(std::exp(x2));
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = f(std::exp(x1));
    }
  }
  return f1 > f2 ? std::exp(x1) : std::exp(x2);
}

int count_params(const LcmmSpec& spec) {
  // Class effects (2 per class) + mixture weights (G-1) + residual
  // variance + process parameters (AR: variance and rate, BM: variance).
  int p = 2 * spec.n_classes + (spec.n_classes - 1) + 1;
  if (spec.cov_kind == CovKind::AR) p += 2;
  if (spec.cov_kind == CovKind::BM) p += 1;
  return p;
}

struct Params {
  Eigen::MatrixXd v;
  Eigen::VectorXd pi;
  double w_var = 0.0;
  double w_rate = 1.0;
  double sigma_eps2 = 1.0;
};

/// Randomized k-means on per-subject OLS (intercept, slope) summaries.
std::vector<int> kmeans_init(const std::vector<SubjectData>& subjects, int G,
                             Rng& rng) {
  const std::size_t n = subjects.size();
  std::vector<Eigen::Vector2d> feats(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& d = subjects[i];
    if (d.y.size() < 2 || d.t[0] == d.t[d.t.size() - 1]) {
      feats[i] = {d.y.mean(), 0.0};
    } else {
      feats[i] = (d.X.transpose() * d.X)
                     .ldlt()
                     .solve(d.X.transpose() * d.y);
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<Eigen::Vector2d> centers;
  for (int g = 0; g < G; ++g) centers.push_back(feats[order[g % n]]);

  std::vector<int> labels(n, 0);
  for (int pass = 0; pass < 25; ++pass) {
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int g = 0; g < G; ++g) {
        const double d2 = (feats[i] - centers[g]).squaredNorm();
        if (d2 < best) {
          best = d2;
          labels[i] = g;
        }
      }
    }
    for (int g = 0; g < G; ++g) {
      Eigen::Vector2d sum = Eigen::Vector2d::Zero();
      int count = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (labels[i] == g) {
          sum += feats[i];
          ++count;
        }
      if (count > 0) centers[g] = sum / count;
      else centers[g] = feats[order[rng.index(n)]];
    }
  }
  return labels;
}

Params init_params(const std::vector<SubjectData>& subjects,
                   const LcmmSpec& spec, Rng& rng) {
  const int G = spec.n_classes;
  Params p;
  p.v.resize(G, 2);
  p.pi = Eigen::VectorXd::Constant(G, 1.0 / G);

  const std::vector<int> labels = kmeans_init(subjects, G, rng);
  double rss = 0.0;
  std::size_t n_obs = 0;
  for (int g = 0; g < G; ++g) {
    Eigen::Matrix2d XtX = Eigen::Matrix2d::Zero();
    Eigen::Vector2d Xty = Eigen::Vector2d::Zero();
    for (std::size_t i = 0; i < subjects.size(); ++i)
      if (labels[i] == g) {
        XtX += subjects[i].X.transpose() * subjects[i].X;
        Xty += subjects[i].X.transpose() * subjects[i].y;
      }
    XtX.diagonal().array() += 1e-9;
    p.v.row(g) = XtX.ldlt().solve(Xty).transpose();
  }
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    rss += (subjects[i].y - subjects[i].X * p.v.row(labels[i]).transpose())
               .squaredNorm();
    n_obs += subjects[i].y.size();
  }
  p.sigma_eps2 = std::max(rss / static_cast<double>(n_obs), 1e-4);
  if (spec.cov_kind != CovKind::NC) {
    // Split the residual variance between process and noise to start.
    p.w_var = 0.5 * p.sigma_eps2;
    p.sigma_eps2 *= 0.5;
    p.w_rate = 1.0;
  }
  return p;
}

struct EmRunResult {
  Params params;
  Eigen::MatrixXd posteriors;
  double loglik;
  std::vector<double> trace;
};

EmRunResult em_run(const std::vector<SubjectData>& subjects,
                   const LcmmSpec& spec, const EmSettings& settings,
                   Params params) {
  const int G = spec.n_classes;
  const auto n = static_cast<Eigen::Index>(subjects.size());
  std::size_t n_obs = 0;
  for (const auto& d : subjects) n_obs += d.y.size();

  EmRunResult res;
  double prev_ll = -std::numeric_limits<double>::infinity();
  Eigen::MatrixXd resp(n, G);

  for (int iter = 0; iter < settings.max_iters; ++iter) {
    // E-step.
    const Eigen::MatrixXd comp = component_logliks(
        subjects, spec, params.v, params.w_var, params.w_rate,
        params.sigma_eps2);
    const double ll = loglik_from_components(comp, params.pi);
    res.trace.push_back(ll);
    for (Eigen::Index i = 0; i < n; ++i) {
      double maxv = -std::numeric_limits<double>::infinity();
      for (int g = 0; g < G; ++g)
        maxv = std::max(maxv, comp(i, g) + std::log(params.pi[g]));
      double acc = 0.0;
      for (int g = 0; g < G; ++g) {
        resp(i, g) = std::exp(comp(i, g) + std::log(params.pi[g]) - maxv);
        acc += resp(i, g);
      }
      resp.row(i) /= acc;
    }
    const Eigen::VectorXd mass = resp.colwise().sum();
    for (int g = 0; g < G; ++g)
      if (mass[g] < 0.1)
        throw DegenerateFit("class " + std::to_string(g) +
                            " lost its posterior mass");

    if (std::abs(ll - prev_ll) < settings.tol) break;
    prev_ll = ll;

    // M-step: mixture weights.
    params.pi = mass / static_cast<double>(n);

    // Class effects by responsibility-weighted GLS at current covariance.
    for (int g = 0; g < G; ++g) {
      Eigen::Matrix2d XtSX = Eigen::Matrix2d::Zero();
      Eigen::Vector2d XtSy = Eigen::Vector2d::Zero();
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::MatrixXd S =
            class_cov_matrix(subjects[i].t, spec.cov_kind, params.w_var,
                             params.w_rate, params.sigma_eps2);
        Eigen::LLT<Eigen::MatrixXd> llt(S);
        const Eigen::MatrixXd SiX = llt.solve(subjects[i].X);
        XtSX += resp(i, g) * subjects[i].X.transpose() * SiX;
        XtSy += resp(i, g) * SiX.transpose() * subjects[i].y;
      }
      XtSX.diagonal().array() += 1e-12;
      params.v.row(g) = XtSX.ldlt().solve(XtSy).transpose();
    }

    // Covariance parameters.
    if (spec.cov_kind == CovKind::NC) {
      double rss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        for (int g = 0; g < G; ++g)
          rss += resp(i, g) *
                 (subjects[i].y - subjects[i].X * params.v.row(g).transpose())
                     .squaredNorm();
      params.sigma_eps2 = std::max(rss / static_cast<double>(n_obs), 1e-10);
    } else {
      auto expected_ll = [&](double w_var, double w_rate, double eps2) {
        const Eigen::MatrixXd c = component_logliks(subjects, spec, params.v,
                                                    w_var, w_rate, eps2);
        return (resp.array() * c.array()).sum();
      };
      const double q0 = expected_ll(params.w_var, params.w_rate,
                                    params.sigma_eps2);
      double best_wv = params.w_var, best_wr = params.w_rate,
             best_e2 = params.sigma_eps2, best_q = q0;
      for (int pass = 0; pass < 2; ++pass) {
        double cand = golden_max(
            [&](double x) { return expected_ll(x, best_wr, best_e2); }, 1e-6,
            100.0);
        if (double q = expected_ll(cand, best_wr, best_e2); q > best_q) {
          best_q = q;
          best_wv = cand;
        }
        if (spec.cov_kind == CovKind::AR) {
          cand = golden_max(
              [&](double x) { return expected_ll(best_wv, x, best_e2); }, 1e-3,
              20.0);
          if (double q = expected_ll(best_wv, cand, best_e2); q > best_q) {
            best_q = q;
            best_wr = cand;
          }
        }
        cand = golden_max(
            [&](double x) { return expected_ll(best_wv, best_wr, x); }, 1e-8,
            100.0);
        if (double q = expected_ll(best_wv, best_wr, cand); q > best_q) {
          best_q = q;
          best_e2 = cand;
        }
      }
      params.w_var = best_wv;
      params.w_rate = best_wr;
      params.sigma_eps2 = best_e2;
    }
  }

  const Eigen::MatrixXd comp = component_logliks(
      subjects, spec, params.v, params.w_var, params.w_rate, params.sigma_eps2);
  res.loglik = loglik_from_components(comp, params.pi);
  res.posteriors.resize(n, G);
  for (Eigen::Index i = 0; i < n; ++i) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (int g = 0; g < G; ++g)
      maxv = std::max(maxv, comp(i, g) + std::log(params.pi[g]));
    double acc = 0.0;
    for (int g = 0; g < G; ++g) {
      res.posteriors(i, g) = std::exp(comp(i, g) + std::log(params.pi[g]) - maxv);
      acc += res.posteriors(i, g);
    }
    res.posteriors.row(i) /= acc;
  }
  res.params = std::move(params);
  return res;
}

}  // namespace

double lcmm_loglik(const TrajectoryDataset& data, const LcmmSpec& spec,
                   const Eigen::MatrixXd& v, const Eigen::VectorXd& pi,
                   double w_var, double w_rate, double sigma_eps2) {
  spec.validate();
  data.validate();
  const auto subjects = pack(data);
  const Eigen::MatrixXd comp =
      component_logliks(subjects, spec, v, w_var, w_rate, sigma_eps2);
  return loglik_from_components(comp, pi);
}

LcmmFit em_fit(const TrajectoryDataset& data, const LcmmSpec& spec,
               const EmSettings& settings, Rng& rng) {
  spec.validate();
  data.validate();
  if (static_cast<int>(data.n_subjects()) < spec.n_classes)
    throw InvalidConfig("need at least one subject per class");
  if (!(settings.tol > 0.0)) throw InvalidConfig("tol must be > 0");

  const auto subjects = pack(data);
  bool any_ok = false;
  EmRunResult best;
  for (int start = 0; start < settings.n_starts; ++start) {
    try {
      Params init = init_params(subjects, spec, rng);
      EmRunResult run = em_run(subjects, spec, settings, std::move(init));
      if (!any_ok || run.loglik > best.loglik) best = std::move(run);
      any_ok = true;
    } catch (const DegenerateFit&) {
      // Restart with a fresh initialization.
    }
  }
  if (!any_ok)
    throw DegenerateFit("every EM start collapsed a class");

  LcmmFit fit;
  fit.spec = spec;
  fit.v = best.params.v;
  fit.pi = best.params.pi;
  fit.w_var = best.params.w_var;
  fit.w_rate = spec.cov_kind == CovKind::AR ? best.params.w_rate : 0.0;
  if (spec.cov_kind == CovKind::NC) fit.w_var = 0.0;
  fit.sigma_eps2 = best.params.sigma_eps2;
  fit.loglik = best.loglik;
  fit.n_params = count_params(spec);
  fit.posteriors = best.posteriors;
  fit.loglik_trace = best.trace;
  return fit;
}

double bic(const LcmmFit& fit, std::size_t n_subjects) {
  return -2.0 * fit.loglik +
         static_cast<double>(fit.n_params) *
             std::log(static_cast<double>(n_subjects));
}

ModelSelectionResult select_model(const TrajectoryDataset& data,
                                  const std::vector<LcmmSpec>& candidates,
                                  const EmSettings& settings, Rng& rng) {
  if (candidates.empty()) throw InvalidConfig("no candidate specs");
  ModelSelectionResult res;
  double best_bic = std::numeric_limits<double>::infinity();
  std::map<int, std::pair<double, LcmmSpec>> family_best;
  for (const auto& spec : candidates) {
    ModelSelectionEntry entry;
    entry.spec = spec;
    try {
      Rng fit_rng(rng.next_u64());
      LcmmFit fit = em_fit(data, spec, settings, fit_rng);
      entry.bic_value = bic(fit, data.n_subjects());
      if (entry.bic_value < best_bic) {
        best_bic = entry.bic_value;
        res.best = spec;
        res.best_fit = std::move(fit);
      }
      const int fam = static_cast<int>(spec.cov_kind);
      auto it = family_best.find(fam);
      if (it == family_best.end() || entry.bic_value < it->second.first)
        family_best[fam] = {entry.bic_value, spec};
    } catch (const Error&) {
      entry.failed = true;
      entry.bic_value = std::numeric_limits<double>::infinity();
    }
    res.table.push_back(entry);
  }
  if (!std::isfinite(best_bic))
    throw DegenerateFit("every candidate fit failed");
  for (const auto& [fam, pr] : family_best)
    res.best_per_family.emplace_back(static_cast<CovKind>(fam), pr.second);
  return res;
}

double lcmm_predict(const LcmmFit& fit,
                    const std::vector<Observation>& train_obs,
                    double query_time) {
  if (train_obs.empty()) throw InvalidConfig("need >= 1 training observation");
  const int G = fit.spec.n_classes;
  const auto n = static_cast<Eigen::Index>(train_obs.size());
  Eigen::VectorXd y(n), t(n);
  Eigen::MatrixXd X(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y[i] = train_obs[i].value;
    t[i] = train_obs[i].time;
    X(i, 0) = 1.0;
    X(i, 1) = train_obs[i].time;
  }
  const Eigen::MatrixXd S = class_cov_matrix(t, fit.spec.cov_kind, fit.w_var,
                                             fit.w_rate, fit.sigma_eps2);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("class covariance not positive definite");

  // Cross-covariance between the query time and the observed times; only
  // the w process correlates them (noise is independent).
  Eigen::VectorXd cross = Eigen::VectorXd::Zero(n);
  if (fit.spec.cov_kind == CovKind::AR) {
    for (Eigen::Index i = 0; i < n; ++i)
      cross[i] = fit.w_var * std::exp(-fit.w_rate * std::abs(query_time - t[i]));
  } else if (fit.spec.cov_kind == CovKind::BM) {
    for (Eigen::Index i = 0; i < n; ++i)
      cross[i] = fit.w_var * std::min(query_time, t[i]);
  }

  Eigen::VectorXd logw(G);
  for (int g = 0; g < G; ++g)
    logw[g] = std::log(fit.pi[g]) +
              mvn_logpdf(y - X * fit.v.row(g).transpose(), S);
  const double maxv = logw.maxCoeff();
  Eigen::VectorXd w = (logw.array() - maxv).exp();
  w /= w.sum();

  double pred = 0.0;
  for (int g = 0; g < G; ++g) {
    const double mean_q = fit.v(g, 0) + fit.v(g, 1) * query_time;
    const Eigen::VectorXd resid = y - X * fit.v.row(g).transpose();
    pred += w[g] * (mean_q + cross.dot(llt.solve(resid)));
  }
  return pred;
}

}  // namespace trajclust
