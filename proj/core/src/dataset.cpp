#include "trajclust/dataset.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "trajclust/rng.hpp"

namespace trajclust {

std::size_t TrajectoryDataset::n_observations() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += s.observations.size();
  return n;
}

const Subject* TrajectoryDataset::find(const std::string& id) const {
  for (const auto& s : subjects)
    if (s.id == id) return &s;
  return nullptr;
}

int TrajectoryDataset::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].id == id) return static_cast<int>(i);
  return -1;
}

void TrajectoryDataset::validate() const {
  if (subjects.empty()) throw InvalidConfig("dataset has no subjects");
  std::set<std::string> ids;
  for (const auto& s : subjects) {
    if (!ids.insert(s.id).second)
      throw InvalidConfig("duplicate subject id '" + s.id + "'");
    if (s.observations.empty())
      throw InvalidConfig("subject '" + s.id + "' has no observations");
    double prev = -1.0;
    for (const auto& o : s.observations) {
      if (!std::isfinite(o.time) || o.time < 0.0)
        throw InvalidConfig("subject '" + s.id + "' has an invalid time");
      if (!std::isfinite(o.value))
        throw InvalidConfig("subject '" + s.id + "' has a non-finite value");
      if (o.time <= prev) throw NonMonotoneTimes(s.id);
      prev = o.time;
    }
  }
}

void SimulationConfig::validate() const {
  if (n_subjects < 1) throw InvalidConfig("n_subjects must be >= 1");
  if (schedule.empty()) throw InvalidConfig("schedule is empty");
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (schedule[i] <= schedule[i - 1])
      throw InvalidConfig("schedule must be strictly increasing");
  if (n_clusters < 1) throw InvalidConfig("n_clusters must be >= 1");
  if (static_cast<int>(cluster_mean_polys.size()) != n_clusters ||
      static_cast<int>(cluster_weights.size()) != n_clusters)
    throw InvalidConfig(
        "n_clusters must equal the number of mean functions and weights");
  double total = 0.0;
  for (double w : cluster_weights) {
    if (w < 0.0) throw InvalidConfig("cluster weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw InvalidConfig("cluster weights must sum to 1");
  if (!(individual_noise_sd >= 0.0))
    throw InvalidConfig("individual_noise_sd must be >= 0");
  if (individual_wiggle.amplitude < 0.0 || individual_wiggle.lengthscale <= 0.0)
    throw InvalidConfig("invalid wiggle parameters");
  if (missing_rate < 0.0 || missing_rate >= 1.0)
    throw InvalidConfig("missing_rate must be in [0, 1)");
}

double polyval(const std::vector<double>& coeffs, double t) {
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * t + *it;
  return acc;
}

namespace {

Eigen::MatrixXd wiggle_cov(const std::vector<double>& times,
                           const WiggleParams& w) {
  const auto m = static_cast<Eigen::Index>(times.size());
  Eigen::MatrixXd K(m, m);
  const double var = w.amplitude * w.amplitude;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = times[i] - times[j];
      K(i, j) = var * std::exp(-d * d / (2.0 * w.lengthscale * w.lengthscale));
    }
  return K;
}

}  // namespace

SimulatedCohort simulate_cohort(const SimulationConfig& cfg) {
  cfg.validate();
  SimulatedCohort out;
  out.data.schedule_hint = cfg.schedule;

  const auto m = static_cast<Eigen::Index>(cfg.schedule.size());
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(m, m);
  if (cfg.individual_wiggle.amplitude > 0.0) {
    Eigen::MatrixXd K = wiggle_cov(cfg.schedule, cfg.individual_wiggle);
    K.diagonal().array() += 1e-12;  // factorization stability
    L = K.llt().matrixL();
  }

  for (int s = 0; s < cfg.n_subjects; ++s) {
    Rng rng(derive_seed(cfg.seed, "simulate/subject", static_cast<std::uint64_t>(s)));
    const int k = static_cast<int>(rng.categorical(cfg.cluster_weights));
    out.true_labels.push_back(k);

    Eigen::VectorXd z(m);
    for (Eigen::Index i = 0; i < m; ++i) z[i] = rng.normal();
    Eigen::VectorXd wiggle = L * z;

    std::vector<Observation> full(cfg.schedule.size());
    for (Eigen::Index i = 0; i < m; ++i) {
      const double t = cfg.schedule[i];
      full[i] = {t, polyval(cfg.cluster_mean_polys[k], t) + wiggle[i] +
                        cfg.individual_noise_sd * rng.normal()};
    }

    Subject subj;
    subj.id = "S" + std::to_string(s + 1);
    if (cfg.missing_rate > 0.0) {
      // Redraw the drop mask until at least one observation survives.
      while (subj.observations.empty()) {
        for (const auto& o : full)
          if (rng.uniform() >= cfg.missing_rate) subj.observations.push_back(o);
      }
    } else {
      subj.observations = full;
    }
    out.data.subjects.push_back(std::move(subj));
  }
  out.data.validate();
  return out;
}

double oracle_conditional_mean(const SimulationConfig& cfg, int cluster,
                               const std::vector<Observation>& train,
                               double query_time) {
  const auto& poly = cfg.cluster_mean_polys.at(cluster);
  const double prior_mean = polyval(poly, query_time);
  if (train.empty()) return prior_mean;

  const auto n = static_cast<Eigen::Index>(train.size());
  std::vector<double> times(train.size());
  Eigen::VectorXd resid(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    times[i] = train[i].time;
    resid[i] = train[i].value - polyval(poly, train[i].time);
  }
  Eigen::MatrixXd K = wiggle_cov(times, cfg.individual_wiggle);
  K.diagonal().array() +=
      cfg.individual_noise_sd * cfg.individual_noise_sd + 1e-12;

  const double var = cfg.individual_wiggle.amplitude * cfg.individual_wiggle.amplitude;
  const double ls = cfg.individual_wiggle.lengthscale;
  Eigen::VectorXd kstar(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = query_time - times[i];
    kstar[i] = var * std::exp(-d * d / (2.0 * ls * ls));
  }
  return prior_mean + kstar.dot(K.llt().solve(resid));
}

namespace {

// Acklam's rational approximation to the standard normal quantile,
// refined by one Halley step; absolute error well below 1e-12.
double inv_normal_cdf(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, x;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

}  // namespace

TrajectoryDataset zscore_per_timepoint(const TrajectoryDataset& raw,
                                       ZscoreMode mode) {
  raw.validate();

  // Column index: every observation time must sit on the shared grid.
  std::map<double, std::vector<std::pair<std::size_t, std::size_t>>> columns;
  for (std::size_t si = 0; si < raw.subjects.size(); ++si)
    for (std::size_t oi = 0; oi < raw.subjects[si].observations.size(); ++oi)
      columns[raw.subjects[si].observations[oi].time].emplace_back(si, oi);

  if (raw.schedule_hint) {
    std::set<double> grid(raw.schedule_hint->begin(), raw.schedule_hint->end());
    for (const auto& [t, _] : columns)
      if (!grid.count(t))
        throw DegenerateColumn("time " + format_double(t) +
                               " is not on the shared schedule");
  }

  TrajectoryDataset out = raw;
  for (const auto& [t, cells] : columns) {
    if (cells.size() < 2)
      throw DegenerateColumn("time " + format_double(t) +
                             " has fewer than 2 observations");
    std::vector<double> vals;
    vals.reserve(cells.size());
    for (auto [si, oi] : cells)
      vals.push_back(raw.subjects[si].observations[oi].value);

    if (mode == ZscoreMode::Standardize) {
      const double n = static_cast<double>(vals.size());
      const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / n;
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      const double sd = std::sqrt(ss / (n - 1.0));
      if (sd == 0.0)
        throw DegenerateColumn("time " + format_double(t) + " has zero variance");
      for (std::size_t i = 0; i < cells.size(); ++i) {
        auto [si, oi] = cells[i];
        out.subjects[si].observations[oi].value = (vals[i] - mean) / sd;
      }
    } else {
      // Rank-based inverse normal, mid-ranks for ties, Phi^-1((r - 0.5)/n).
      const std::size_t n = vals.size();
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(),
                [&](std::size_t i, std::size_t j) { return vals[i] < vals[j]; });
      if (vals[order.front()] == vals[order.back()])
        throw DegenerateColumn("time " + format_double(t) + " has zero variance");
      std::vector<double> ranks(n);
      std::size_t i = 0;
      while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && vals[order[j + 1]] == vals[order[i]]) ++j;
        const double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid;
        i = j + 1;
      }
      for (std::size_t k = 0; k < n; ++k) {
        auto [si, oi] = cells[k];
        out.subjects[si].observations[oi].value =
            inv_normal_cdf((ranks[k] - 0.5) / static_cast<double>(n));
      }
    }
  }
  return out;
}

std::string format_double(double x) {
  // Shortest representation that round-trips; %.17g always does.
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_number(const std::string& s, std::size_t line) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0')
    throw ParseError("non-numeric field '" + s + "'", line);
  return v;
}

}  // namespace

TrajectoryDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "subject_id,age_years,value")
    throw ParseError("expected header 'subject_id,age_years,value'", lineno);

  TrajectoryDataset data;
  std::map<std::string, std::size_t> index;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_row(line);
    if (fields.size() != 3) throw ParseError("expected 3 fields", lineno);
    const double t = parse_number(fields[1], lineno);
    const double v = parse_number(fields[2], lineno);
    auto it = index.find(fields[0]);
    if (it == index.end()) {
      index.emplace(fields[0], data.subjects.size());
      data.subjects.push_back({fields[0], {{t, v}}});
    } else {
      auto& obs = data.subjects[it->second].observations;
      if (t <= obs.back().time) throw NonMonotoneTimes(fields[0]);
      obs.push_back({t, v});
    }
  }
  data.validate();
  return data;
}

void save_csv(const TrajectoryDataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "subject_id,age_years,value\n";
  for (const auto& s : data.subjects)
    for (const auto& o : s.observations)
      out << s.id << ',' << format_double(o.time) << ','
          << format_double(o.value) << '\n';
}

void save_labels_csv(const TrajectoryDataset& data,
                     const std::vector<int>& labels, const std::string& path) {
  if (labels.size() != data.subjects.size())
    throw InvalidConfig("labels/subjects length mismatch");
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "subject_id,cluster\n";
  for (std::size_t i = 0; i < labels.size(); ++i)
    out << data.subjects[i].id << ',' << labels[i] << '\n';
}

std::vector<std::pair<std::string, int>> load_labels_csv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty file", 1);
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "subject_id,cluster")
    throw ParseError("expected header 'subject_id,cluster'", lineno);
  std::vector<std::pair<std::string, int>> labels;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_row(line);
    if (fields.size() != 2) throw ParseError("expected 2 fields", lineno);
    labels.emplace_back(fields[0],
                        static_cast<int>(parse_number(fields[1], lineno)));
  }
  return labels;
}

}  // namespace trajclust
