#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <set>
#include <sstream>

#include "trajclust/dataset.hpp"
#include "trajclust/dpgp.hpp"
#include "trajclust/eval.hpp"
#include "trajclust/lcmm.hpp"
#include "trajclust/models.hpp"

using json = nlohmann::ordered_json;
using namespace trajclust;

namespace {

std::vector<double> parse_number_list(const std::string& s, char sep = ',') {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (item.empty()) continue;
    out.push_back(std::stod(item));
  }
  return out;
}

// Cluster mean curves: clusters separated by ';', coefficients by ':'.
std::vector<std::vector<double>> parse_polys(const std::string& s) {
  std::vector<std::vector<double>> out;
  std::stringstream ss(s);
  std::string cluster;
  while (std::getline(ss, cluster, ';'))
    out.push_back(parse_number_list(cluster, ':'));
  return out;
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  json j;
  in >> j;
  return j;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

/// Every run echoes its fully resolved configuration next to its primary
/// output, so any result can be reproduced from the sidecar alone.
void write_sidecar(const json& resolved, const std::string& output_path) {
  write_json(resolved, output_path + ".config.json");
}

/// Fill variables from a JSON config file for flags not given on the
/// command line; explicit flags always win.
template <typename T>
void cfg_or(const CLI::App& cmd, const json& cfg, const std::string& flag,
            const std::string& key, T& var) {
  if (cmd.count(flag) == 0 && cfg.contains(key)) var = cfg.at(key).get<T>();
}

json summary_json(const SummaryStats& s) {
  return {{"mean", s.mean}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}};
}

json hyper_json(const DpgpHyperParams& h) {
  return {{"latent_variance", h.cov.latent.variance},
          {"latent_lengthscale", h.cov.latent.lengthscale},
          {"indiv_variance", h.cov.individual.variance},
          {"indiv_lengthscale", h.cov.individual.lengthscale},
          {"nugget", h.cov.nugget},
          {"alpha", h.alpha}};
}

DpgpHyperParams hyper_from_json(const json& j) {
  DpgpHyperParams h;
  h.cov.latent.variance = j.at("latent_variance").get<double>();
  h.cov.latent.lengthscale = j.at("latent_lengthscale").get<double>();
  h.cov.individual.variance = j.at("indiv_variance").get<double>();
  h.cov.individual.lengthscale = j.at("indiv_lengthscale").get<double>();
  h.cov.nugget = j.at("nugget").get<double>();
  if (j.contains("alpha")) h.alpha = j.at("alpha").get<double>();
  return h;
}

json lcmm_fit_json(const TrajectoryDataset& data, const LcmmFit& fit) {
  json j;
  j["spec"] = {{"classes", fit.spec.n_classes},
               {"cov", to_string(fit.spec.cov_kind)}};
  j["pi"] = std::vector<double>(fit.pi.data(), fit.pi.data() + fit.pi.size());
  json v = json::array();
  for (int g = 0; g < fit.spec.n_classes; ++g)
    v.push_back({{"intercept", fit.v(g, 0)}, {"slope", fit.v(g, 1)}});
  j["class_effects"] = v;
  j["w_var"] = fit.w_var;
  if (fit.spec.cov_kind == CovKind::AR) j["w_rate"] = fit.w_rate;
  j["sigma_eps2"] = fit.sigma_eps2;
  j["loglik"] = fit.loglik;
  j["n_params"] = fit.n_params;
  j["bic"] = bic(fit, data.n_subjects());
  json post = json::object();
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    std::vector<double> row(fit.spec.n_classes);
    for (int g = 0; g < fit.spec.n_classes; ++g)
      row[g] = fit.posteriors(static_cast<Eigen::Index>(i), g);
    post[data.subjects[i].id] = row;
  }
  j["posteriors"] = post;
  return j;
}

json trial_report_metrics_json(const TrialReport& rep, double fraction,
                               int trials, std::uint64_t seed) {
  json j;
  j["model"] = rep.model;
  j["holdout_fraction"] = fraction;
  j["trials"] = trials;
  j["seed"] = seed;
  j["n_failed"] = rep.n_failed;
  j["rmse"] = {{"values", rep.rmse_values},
               {"summary", summary_json(rep.rmse_summary)}};
  j["correlation"] = {{"values", rep.corr_values},
                      {"summary", summary_json(rep.corr_summary)}};
  return j;
}

struct EvalArgs {
  std::string model = "lcmm";
  int classes = 3;
  std::string cov = "nc";
  int n_starts = 10;
  double tol = 1e-6;
  int max_iters = 500;
  DpgpHyperParams hyper;
  int sweeps = 500, burnin = 100, thin = 5;
  std::string input, output = "report.json";
  double holdout = 0.3;
  int trials = 50;
  std::uint64_t seed = 0;
  int jobs = 1;
};

int run_eval(const EvalArgs& a) {
  auto data = load_csv(a.input);
  std::unique_ptr<Model> model;
  if (a.model == "lcmm") {
    LcmmSpec spec{a.classes, cov_kind_from_string(a.cov)};
    model = std::make_unique<LcmmModel>(spec,
                                        EmSettings{a.n_starts, a.tol, a.max_iters});
  } else if (a.model == "dpgp") {
    model = std::make_unique<DpgpModel>(
        a.hyper, DpgpFitSettings{a.sweeps, a.burnin, a.thin});
  } else {
    throw InvalidConfig("unknown model '" + a.model + "'");
  }

  TrialReport rep =
      run_trials(*model, data, a.holdout, a.trials, a.seed, a.jobs);
  write_json(trial_report_metrics_json(rep, a.holdout, a.trials, a.seed),
             a.output);

  // Timing lives in its own file so the metric JSON is byte-stable for a
  // fixed seed.
  json timing;
  timing["model"] = rep.model;
  timing["fit_seconds"] = rep.fit_seconds;
  double mean = 0.0;
  for (double s : rep.fit_seconds) mean += s;
  if (!rep.fit_seconds.empty()) mean /= rep.fit_seconds.size();
  timing["mean_fit_seconds"] = mean;
  write_json(timing, a.output + ".timing.json");
  std::cout << "wrote " << a.output << " and " << a.output << ".timing.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajclust: clustering and prediction for sparse longitudinal trajectories"};
  app.require_subcommand(1);

  auto positive_fraction = CLI::Validator(
      [](std::string& s) -> std::string {
        const double v = std::stod(s);
        if (v < 0.0 || v >= 1.0) return "must be in [0, 1)";
        return {};
      },
      "FRACTION");

  std::string config_path;
  json cfg = json::object();

  // ---- simulate -----------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic cohort");
  struct {
    int n = 95;
    std::string schedule = "1.5,2,4,5";
    int clusters = 3;
    std::string means, weights;
    double noise_sd = 0.25, wiggle_amp = 0.3, wiggle_ls = 2.0, missing = 0.0;
    std::uint64_t seed = 0;
    std::string output = "cohort.csv";
  } sa;
  sim->add_option("--n", sa.n, "Number of subjects");
  sim->add_option("--schedule", sa.schedule, "Ages in years, comma separated");
  sim->add_option("--clusters", sa.clusters, "Number of planted clusters");
  sim->add_option("--means", sa.means,
                  "Cluster mean polynomials, e.g. '-2:-0.2;0:0;2:0.2'");
  sim->add_option("--weights", sa.weights, "Cluster weights, comma separated");
  sim->add_option("--noise-sd", sa.noise_sd, "Observation noise sd");
  sim->add_option("--wiggle-amp", sa.wiggle_amp, "Individual deviation sd");
  sim->add_option("--wiggle-ls", sa.wiggle_ls, "Individual deviation lengthscale");
  sim->add_option("--missing-rate", sa.missing, "Per-observation drop rate")
      ->check(positive_fraction);
  sim->add_option("--seed", sa.seed, "Random seed");
  sim->add_option("-o,--output", sa.output, "Cohort CSV path");
  sim->add_option("--config", config_path, "JSON config file (flags win)");

  // ---- zscore -------------------------------------------------------------
  auto* zs = app.add_subcommand("zscore", "Standardize values per time point");
  struct {
    std::string input, output = "zscored.csv", mode = "standardize";
  } za;
  zs->add_option("--input,-i", za.input, "Cohort CSV")->required();
  zs->add_option("-o,--output", za.output, "Output CSV");
  zs->add_option("--mode", za.mode, "standardize | inverse-normal")
      ->check(CLI::IsMember({"standardize", "inverse-normal"}));
  zs->add_option("--config", config_path, "JSON config file (flags win)");

  // ---- fit-dpgp -----------------------------------------------------------
  auto* fd = app.add_subcommand("fit-dpgp", "Fit the DP mixture of GPs");
  struct {
    std::string input, output = "dpgp.json";
    DpgpHyperParams hyper;
    int sweeps = 500, burnin = 100, thin = 5;
    std::uint64_t seed = 0;
  } fda;
  fda.hyper.cov.latent = {4.0, 3.0};
  fda.hyper.cov.individual = {0.2, 2.0};
  fda.hyper.cov.nugget = 0.1;
  fd->add_option("--input,-i", fda.input, "Cohort CSV")->required();
  fd->add_option("-o,--output", fda.output, "Posterior summary JSON");
  fd->add_option("--latent-variance", fda.hyper.cov.latent.variance);
  fd->add_option("--latent-lengthscale", fda.hyper.cov.latent.lengthscale);
  fd->add_option("--indiv-variance", fda.hyper.cov.individual.variance);
  fd->add_option("--indiv-lengthscale", fda.hyper.cov.individual.lengthscale);
  fd->add_option("--nugget", fda.hyper.cov.nugget);
  fd->add_option("--alpha", fda.hyper.alpha, "CRP concentration");
  fd->add_option("--sweeps", fda.sweeps);
  fd->add_option("--burnin", fda.burnin);
  fd->add_option("--thin", fda.thin);
  fd->add_option("--seed", fda.seed);
  fd->add_option("--config", config_path, "JSON config file (flags win)");

  // ---- fit-lcmm -----------------------------------------------------------
  auto* fl = app.add_subcommand("fit-lcmm", "Fit a latent class mixed model");
  struct {
    std::string input, output = "lcmm.json", cov = "nc";
    int classes = 3, n_starts = 10, max_iters = 500;
    double tol = 1e-6;
    std::uint64_t seed = 0;
  } fla;
  fl->add_option("--input,-i", fla.input, "Cohort CSV")->required();
  fl->add_option("-o,--output", fla.output, "Fit summary JSON");
  fl->add_option("--classes", fla.classes, "Number of latent classes");
  fl->add_option("--cov", fla.cov, "nc | ar | bm");
  fl->add_option("--starts", fla.n_starts, "EM restarts");
  fl->add_option("--tol", fla.tol, "EM convergence tolerance");
  fl->add_option("--max-iters", fla.max_iters);
  fl->add_option("--seed", fla.seed);
  fl->add_option("--config", config_path, "JSON config file (flags win)");

  // ---- select-lcmm --------------------------------------------------------
  auto* sl = app.add_subcommand("select-lcmm",
                                "BIC model selection over covariance kinds and class counts");
  struct {
    std::string input, output = "selection.json", families = "nc,ar,bm";
    int max_classes = 4, n_starts = 10, max_iters = 500;
    double tol = 1e-6;
    std::uint64_t seed = 0;
  } sla;
  sl->add_option("--input,-i", sla.input, "Cohort CSV")->required();
  sl->add_option("-o,--output", sla.output, "Selection table JSON");
  sl->add_option("--families", sla.families, "Covariance kinds, comma separated");
  sl->add_option("--max-classes", sla.max_classes);
  sl->add_option("--starts", sla.n_starts);
  sl->add_option("--tol", sla.tol);
  sl->add_option("--max-iters", sla.max_iters);
  sl->add_option("--seed", sla.seed);
  sl->add_option("--config", config_path, "JSON config file (flags win)");

  // ---- eval ---------------------------------------------------------------
  auto* ev = app.add_subcommand("eval",
                                "Hold-out trials: fit, predict finals, score RMSE/correlation");
  EvalArgs ea;
  ea.hyper.cov.latent = {4.0, 3.0};
  ea.hyper.cov.individual = {0.2, 2.0};
  ea.hyper.cov.nugget = 0.1;
  ev->add_option("--model", ea.model, "lcmm | dpgp")
      ->check(CLI::IsMember({"lcmm", "dpgp"}));
  ev->add_option("--classes", ea.classes);
  ev->add_option("--cov", ea.cov, "nc | ar | bm");
  ev->add_option("--starts", ea.n_starts);
  ev->add_option("--tol", ea.tol);
  ev->add_option("--max-iters", ea.max_iters);
  ev->add_option("--latent-variance", ea.hyper.cov.latent.variance);
  ev->add_option("--latent-lengthscale", ea.hyper.cov.latent.lengthscale);
  ev->add_option("--indiv-variance", ea.hyper.cov.individual.variance);
  ev->add_option("--indiv-lengthscale", ea.hyper.cov.individual.lengthscale);
  ev->add_option("--nugget", ea.hyper.cov.nugget);
  ev->add_option("--alpha", ea.hyper.alpha);
  ev->add_option("--sweeps", ea.sweeps);
  ev->add_option("--burnin", ea.burnin);
  ev->add_option("--thin", ea.thin);
  ev->add_option("--input,-i", ea.input, "Cohort CSV")->required();
  ev->add_option("-o,--output", ea.output, "TrialReport JSON");
  ev->add_option("--holdout", ea.holdout, "Fraction of subjects to hold out")
      ->check(positive_fraction);
  ev->add_option("--trials", ea.trials);
  ev->add_option("--seed", ea.seed);
  ev->add_option("--jobs", ea.jobs, "Worker parallelism for trials");
  ev->add_option("--config", config_path, "JSON config file (flags win)");

  // ---- compare ------------------------------------------------------------
  auto* cp = app.add_subcommand("compare", "Tabulate several eval reports");
  struct {
    std::vector<std::string> inputs;
    std::string output = "comparison.json", figure = "figure_data.csv";
  } ca;
  cp->add_option("--input,-i", ca.inputs, "TrialReport JSON files")
      ->required()
      ->expected(-2);
  cp->add_option("-o,--output", ca.output, "Comparison table JSON");
  cp->add_option("--figure-csv", ca.figure, "Boxplot quantile CSV");

  // ---- grid-search --------------------------------------------------------
  auto* gs = app.add_subcommand("grid-search",
                                "Select DP-GP hyperparameters by held-out RMSE");
  struct {
    std::string input, grid, output = "grid.json";
    double holdout = 0.3;
    int trials = 3, sweeps = 150, burnin = 50, thin = 5, jobs = 1;
    std::uint64_t seed = 0;
  } ga;
  gs->add_option("--input,-i", ga.input, "Cohort CSV")->required();
  gs->add_option("--grid", ga.grid, "JSON array of hyperparameter objects")
      ->required();
  gs->add_option("-o,--output", ga.output, "Result JSON");
  gs->add_option("--holdout", ga.holdout)->check(positive_fraction);
  gs->add_option("--trials", ga.trials);
  gs->add_option("--sweeps", ga.sweeps);
  gs->add_option("--burnin", ga.burnin);
  gs->add_option("--thin", ga.thin);
  gs->add_option("--jobs", ga.jobs);
  gs->add_option("--seed", ga.seed);
  gs->add_option("--config", config_path, "JSON config file (flags win)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (!config_path.empty()) cfg = load_json(config_path);

    if (sim->parsed()) {
      cfg_or(*sim, cfg, "--n", "n", sa.n);
      cfg_or(*sim, cfg, "--schedule", "schedule", sa.schedule);
      cfg_or(*sim, cfg, "--clusters", "clusters", sa.clusters);
      cfg_or(*sim, cfg, "--means", "means", sa.means);
      cfg_or(*sim, cfg, "--weights", "weights", sa.weights);
      cfg_or(*sim, cfg, "--noise-sd", "noise_sd", sa.noise_sd);
      cfg_or(*sim, cfg, "--wiggle-amp", "wiggle_amp", sa.wiggle_amp);
      cfg_or(*sim, cfg, "--wiggle-ls", "wiggle_ls", sa.wiggle_ls);
      cfg_or(*sim, cfg, "--missing-rate", "missing_rate", sa.missing);
      cfg_or(*sim, cfg, "--seed", "seed", sa.seed);
      cfg_or(*sim, cfg, "-o", "output", sa.output);

      SimulationConfig sc;
      sc.n_subjects = sa.n;
      sc.schedule = parse_number_list(sa.schedule);
      sc.n_clusters = sa.clusters;
      if (!sa.means.empty()) sc.cluster_mean_polys = parse_polys(sa.means);
      if (!sa.weights.empty()) sc.cluster_weights = parse_number_list(sa.weights);
      if (sa.means.empty() && sa.clusters != 3)
        throw InvalidConfig("--means is required when --clusters != 3");
      if (sa.weights.empty())
        sc.cluster_weights.assign(sc.n_clusters, 1.0 / sc.n_clusters);
      sc.individual_noise_sd = sa.noise_sd;
      sc.individual_wiggle = {sa.wiggle_amp, sa.wiggle_ls};
      sc.missing_rate = sa.missing;
      sc.seed = sa.seed;

      auto cohort = simulate_cohort(sc);
      save_csv(cohort.data, sa.output);
      std::string labels_path = sa.output;
      if (labels_path.size() > 4 &&
          labels_path.substr(labels_path.size() - 4) == ".csv")
        labels_path = labels_path.substr(0, labels_path.size() - 4);
      labels_path += ".labels.csv";
      save_labels_csv(cohort.data, cohort.true_labels, labels_path);

      json resolved = {{"subcommand", "simulate"},
                       {"n", sa.n},
                       {"schedule", sa.schedule},
                       {"clusters", sa.clusters},
                       {"means", sa.means},
                       {"weights", sa.weights},
                       {"noise_sd", sa.noise_sd},
                       {"wiggle_amp", sa.wiggle_amp},
                       {"wiggle_ls", sa.wiggle_ls},
                       {"missing_rate", sa.missing},
                       {"seed", sa.seed},
                       {"output", sa.output}};
      write_sidecar(resolved, sa.output);
      std::cout << "wrote " << sa.output << " and " << labels_path << "\n";
    } else if (zs->parsed()) {
      cfg_or(*zs, cfg, "--input", "input", za.input);
      cfg_or(*zs, cfg, "-o", "output", za.output);
      cfg_or(*zs, cfg, "--mode", "mode", za.mode);
      auto data = load_csv(za.input);
      auto z = zscore_per_timepoint(data, za.mode == "standardize"
                                              ? ZscoreMode::Standardize
                                              : ZscoreMode::InverseNormal);
      save_csv(z, za.output);
      write_sidecar({{"subcommand", "zscore"},
                     {"input", za.input},
                     {"output", za.output},
                     {"mode", za.mode}},
                    za.output);
      std::cout << "wrote " << za.output << "\n";
    } else if (fd->parsed()) {
      cfg_or(*fd, cfg, "--latent-variance", "latent_variance",
             fda.hyper.cov.latent.variance);
      cfg_or(*fd, cfg, "--latent-lengthscale", "latent_lengthscale",
             fda.hyper.cov.latent.lengthscale);
      cfg_or(*fd, cfg, "--indiv-variance", "indiv_variance",
             fda.hyper.cov.individual.variance);
      cfg_or(*fd, cfg, "--indiv-lengthscale", "indiv_lengthscale",
             fda.hyper.cov.individual.lengthscale);
      cfg_or(*fd, cfg, "--nugget", "nugget", fda.hyper.cov.nugget);
      cfg_or(*fd, cfg, "--alpha", "alpha", fda.hyper.alpha);
      cfg_or(*fd, cfg, "--sweeps", "sweeps", fda.sweeps);
      cfg_or(*fd, cfg, "--burnin", "burnin", fda.burnin);
      cfg_or(*fd, cfg, "--thin", "thin", fda.thin);
      cfg_or(*fd, cfg, "--seed", "seed", fda.seed);

      auto data = load_csv(fda.input);
      Rng rng(derive_seed(fda.seed, "fit-dpgp"));
      auto post = fit_dpgp(data, fda.hyper,
                           {fda.sweeps, fda.burnin, fda.thin}, rng);

      json out;
      out["hyper"] = hyper_json(fda.hyper);
      out["n_samples"] = post.samples.size();
      out["joint_log_liks"] = post.joint_log_liks;
      json map_partition = json::object();
      const auto& map_sample = post.samples[post.map_index];
      for (std::size_t i = 0; i < data.subjects.size(); ++i)
        map_partition[data.subjects[i].id] = map_sample[i];
      out["map_index"] = post.map_index;
      out["map_joint_log_lik"] = post.joint_log_liks[post.map_index];
      out["map_partition"] = map_partition;
      std::vector<int> cluster_counts;
      for (const auto& sample : post.samples) {
        std::set<int> ids(sample.begin(), sample.end());
        cluster_counts.push_back(static_cast<int>(ids.size()));
      }
      out["samples_cluster_counts"] = cluster_counts;
      write_json(out, fda.output);

      json resolved = hyper_json(fda.hyper);
      resolved["subcommand"] = "fit-dpgp";
      resolved["input"] = fda.input;
      resolved["output"] = fda.output;
      resolved["sweeps"] = fda.sweeps;
      resolved["burnin"] = fda.burnin;
      resolved["thin"] = fda.thin;
      resolved["seed"] = fda.seed;
      write_sidecar(resolved, fda.output);
      std::cout << "wrote " << fda.output << "\n";
    } else if (fl->parsed()) {
      cfg_or(*fl, cfg, "--classes", "classes", fla.classes);
      cfg_or(*fl, cfg, "--cov", "cov", fla.cov);
      cfg_or(*fl, cfg, "--starts", "starts", fla.n_starts);
      cfg_or(*fl, cfg, "--tol", "tol", fla.tol);
      cfg_or(*fl, cfg, "--max-iters", "max_iters", fla.max_iters);
      cfg_or(*fl, cfg, "--seed", "seed", fla.seed);

      auto data = load_csv(fla.input);
      LcmmSpec spec{fla.classes, cov_kind_from_string(fla.cov)};
      Rng rng(derive_seed(fla.seed, "fit-lcmm"));
      auto fit = em_fit(data, spec,
                        {fla.n_starts, fla.tol, fla.max_iters}, rng);
      write_json(lcmm_fit_json(data, fit), fla.output);
      write_sidecar({{"subcommand", "fit-lcmm"},
                     {"input", fla.input},
                     {"output", fla.output},
                     {"classes", fla.classes},
                     {"cov", fla.cov},
                     {"starts", fla.n_starts},
                     {"tol", fla.tol},
                     {"max_iters", fla.max_iters},
                     {"seed", fla.seed}},
                    fla.output);
      std::cout << "wrote " << fla.output << "\n";
    } else if (sl->parsed()) {
      cfg_or(*sl, cfg, "--families", "families", sla.families);
      cfg_or(*sl, cfg, "--max-classes", "max_classes", sla.max_classes);
      cfg_or(*sl, cfg, "--starts", "starts", sla.n_starts);
      cfg_or(*sl, cfg, "--tol", "tol", sla.tol);
      cfg_or(*sl, cfg, "--max-iters", "max_iters", sla.max_iters);
      cfg_or(*sl, cfg, "--seed", "seed", sla.seed);

      auto data = load_csv(sla.input);
      std::vector<LcmmSpec> candidates;
      std::stringstream ss(sla.families);
      std::string fam;
      while (std::getline(ss, fam, ','))
        for (int g = 1; g <= sla.max_classes; ++g)
          candidates.push_back({g, cov_kind_from_string(fam)});
      Rng rng(derive_seed(sla.seed, "select-lcmm"));
      auto res = select_model(data, candidates,
                              {sla.n_starts, sla.tol, sla.max_iters}, rng);

      json out;
      json table = json::array();
      for (const auto& e : res.table)
        table.push_back({{"classes", e.spec.n_classes},
                         {"cov", to_string(e.spec.cov_kind)},
                         {"bic", e.failed ? json(nullptr) : json(e.bic_value)},
                         {"failed", e.failed}});
      out["table"] = table;
      json per_family = json::array();
      for (const auto& [kind, spec] : res.best_per_family)
        per_family.push_back(
            {{"cov", to_string(kind)}, {"classes", spec.n_classes}});
      out["best_per_family"] = per_family;
      out["best"] = {{"classes", res.best.n_classes},
                     {"cov", to_string(res.best.cov_kind)}};
      out["best_fit"] = lcmm_fit_json(data, res.best_fit);
      write_json(out, sla.output);
      write_sidecar({{"subcommand", "select-lcmm"},
                     {"input", sla.input},
                     {"output", sla.output},
                     {"families", sla.families},
                     {"max_classes", sla.max_classes},
                     {"starts", sla.n_starts},
                     {"tol", sla.tol},
                     {"max_iters", sla.max_iters},
                     {"seed", sla.seed}},
                    sla.output);
      std::cout << "wrote " << sla.output << "\n";
    } else if (ev->parsed()) {
      cfg_or(*ev, cfg, "--model", "model", ea.model);
      cfg_or(*ev, cfg, "--classes", "classes", ea.classes);
      cfg_or(*ev, cfg, "--cov", "cov", ea.cov);
      cfg_or(*ev, cfg, "--starts", "starts", ea.n_starts);
      cfg_or(*ev, cfg, "--tol", "tol", ea.tol);
      cfg_or(*ev, cfg, "--max-iters", "max_iters", ea.max_iters);
      cfg_or(*ev, cfg, "--latent-variance", "latent_variance",
             ea.hyper.cov.latent.variance);
      cfg_or(*ev, cfg, "--latent-lengthscale", "latent_lengthscale",
             ea.hyper.cov.latent.lengthscale);
      cfg_or(*ev, cfg, "--indiv-variance", "indiv_variance",
             ea.hyper.cov.individual.variance);
      cfg_or(*ev, cfg, "--indiv-lengthscale", "indiv_lengthscale",
             ea.hyper.cov.individual.lengthscale);
      cfg_or(*ev, cfg, "--nugget", "nugget", ea.hyper.cov.nugget);
      cfg_or(*ev, cfg, "--alpha", "alpha", ea.hyper.alpha);
      cfg_or(*ev, cfg, "--sweeps", "sweeps", ea.sweeps);
      cfg_or(*ev, cfg, "--burnin", "burnin", ea.burnin);
      cfg_or(*ev, cfg, "--thin", "thin", ea.thin);
      cfg_or(*ev, cfg, "--holdout", "holdout", ea.holdout);
      cfg_or(*ev, cfg, "--trials", "trials", ea.trials);
      cfg_or(*ev, cfg, "--seed", "seed", ea.seed);
      cfg_or(*ev, cfg, "--jobs", "jobs", ea.jobs);

      const int code = run_eval(ea);
      json resolved = {{"subcommand", "eval"},    {"model", ea.model},
                       {"input", ea.input},       {"output", ea.output},
                       {"holdout", ea.holdout},   {"trials", ea.trials},
                       {"seed", ea.seed},         {"jobs", ea.jobs}};
      if (ea.model == "lcmm") {
        resolved["classes"] = ea.classes;
        resolved["cov"] = ea.cov;
        resolved["starts"] = ea.n_starts;
        resolved["tol"] = ea.tol;
        resolved["max_iters"] = ea.max_iters;
      } else {
        const json hj = hyper_json(ea.hyper);
        for (const auto& [k, v] : hj.items()) resolved[k] = v;
        resolved["sweeps"] = ea.sweeps;
        resolved["burnin"] = ea.burnin;
        resolved["thin"] = ea.thin;
      }
      write_sidecar(resolved, ea.output);
      return code;
    } else if (cp->parsed()) {
      std::vector<TrialReport> reports;
      for (const auto& path : ca.inputs) {
        const json j = load_json(path);
        TrialReport rep;
        rep.model = j.at("model").get<std::string>();
        rep.rmse_values = j.at("rmse").at("values").get<std::vector<double>>();
        rep.corr_values =
            j.at("correlation").at("values").get<std::vector<double>>();
        rep.rmse_summary = summarize(rep.rmse_values);
        rep.corr_summary = summarize(rep.corr_values);
        std::ifstream timing_in(path + ".timing.json");
        if (timing_in) {
          json t;
          timing_in >> t;
          rep.fit_seconds = t.at("fit_seconds").get<std::vector<double>>();
        }
        reports.push_back(std::move(rep));
      }
      auto rows = compare_models(reports);
      json out = json::array();
      for (const auto& r : rows)
        out.push_back({{"model", r.model},
                       {"rmse", summary_json(r.rmse)},
                       {"correlation", summary_json(r.corr)},
                       {"mean_fit_seconds", r.mean_fit_seconds}});
      write_json(out, ca.output);
      write_figure_csv(rows, ca.figure);
      std::cout << "wrote " << ca.output << " and " << ca.figure << "\n";
    } else if (gs->parsed()) {
      cfg_or(*gs, cfg, "--holdout", "holdout", ga.holdout);
      cfg_or(*gs, cfg, "--trials", "trials", ga.trials);
      cfg_or(*gs, cfg, "--sweeps", "sweeps", ga.sweeps);
      cfg_or(*gs, cfg, "--burnin", "burnin", ga.burnin);
      cfg_or(*gs, cfg, "--thin", "thin", ga.thin);
      cfg_or(*gs, cfg, "--jobs", "jobs", ga.jobs);
      cfg_or(*gs, cfg, "--seed", "seed", ga.seed);

      auto data = load_csv(ga.input);
      const json grid_json = load_json(ga.grid);
      std::vector<DpgpHyperParams> grid;
      for (const auto& j : grid_json) grid.push_back(hyper_from_json(j));

      GridEvalConfig ec;
      ec.holdout_fraction = ga.holdout;
      ec.trials = ga.trials;
      ec.seed = ga.seed;
      ec.fit = {ga.sweeps, ga.burnin, ga.thin};
      ec.jobs = ga.jobs;
      auto res = grid_search(data, grid, ec);

      json out;
      json table = json::array();
      for (std::size_t g = 0; g < grid.size(); ++g) {
        json row = hyper_json(grid[g]);
        row["mean_rmse"] = std::isfinite(res.mean_rmse[g])
                               ? json(res.mean_rmse[g])
                               : json(nullptr);
        table.push_back(row);
      }
      out["table"] = table;
      out["best_index"] = res.best_index;
      out["best"] = hyper_json(res.best);
      write_json(out, ga.output);
      write_sidecar({{"subcommand", "grid-search"},
                     {"input", ga.input},
                     {"grid", ga.grid},
                     {"output", ga.output},
                     {"holdout", ga.holdout},
                     {"trials", ga.trials},
                     {"sweeps", ga.sweeps},
                     {"burnin", ga.burnin},
                     {"thin", ga.thin},
                     {"jobs", ga.jobs},
                     {"seed", ga.seed}},
                    ga.output);
      std::cout << "wrote " << ga.output << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
