#include "mlest/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "mlest/csv.hpp"
#include "mlest/data.hpp"
#include "mlest/errors.hpp"
#include "mlest/estimators.hpp"
#include "mlest/parallel.hpp"
#include "mlest/rng.hpp"
#include "mlest/stats.hpp"

namespace mlest::cli {

namespace {

constexpr const char* kVersion = "mlest 0.1.0";

using nlohmann::json;

// --- config parsing ---------------------------------------------------------

void check_keys(const json& j, const std::string& ctx, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return item.key() == a; });
    if (!known) throw ConfigError(ctx + ": unknown key '" + item.key() + "'");
  }
}

std::string where(const std::string& ctx, const char* key) {
  return ctx.empty() ? std::string(key) : ctx + "." + key;
}

void read(const json& j, const std::string& ctx, const char* key, int& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_integer()) throw ConfigError(where(ctx, key) + ": expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError(where(ctx, key) + ": out of range");
  }
  out = static_cast<int>(x);
}

void read(const json& j, const std::string& ctx, const char* key, std::uint64_t& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(where(ctx, key) + ": expected a non-negative integer");
  }
  out = v.get<std::uint64_t>();
}

void read(const json& j, const std::string& ctx, const char* key, double& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(where(ctx, key) + ": expected a number");
  out = v.get<double>();
}

void read(const json& j, const std::string& ctx, const char* key, bool& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(where(ctx, key) + ": expected true or false");
  out = v.get<bool>();
}

void read(const json& j, const std::string& ctx, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_string()) throw ConfigError(where(ctx, key) + ": expected a string");
  out = v.get<std::string>();
}

void read(const json& j, const std::string& ctx, const char* key, std::vector<double>& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array()) throw ConfigError(where(ctx, key) + ": expected an array of numbers");
  out.clear();
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(where(ctx, key) + ": expected an array of numbers");
    out.push_back(e.get<double>());
  }
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  return j.contains(key) ? j.at(key) : empty;
}

std::string solver_name(SolverMode m) {
  return m == SolverMode::closed_form ? "closed_form" : "gradient_descent";
}

const std::vector<std::string>& selection_tasks() {
  static const std::vector<std::string> names = {"select-features", "select-prior",
                                                 "select-rff"};
  return names;
}

bool contains(const std::vector<std::string>& names, const std::string& s) {
  return std::find(names.begin(), names.end(), s) != names.end();
}

}  // namespace

const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names = {"evidence",   "select-features", "select-prior",
                                                 "select-rff", "ensemble",        "ntk-compare",
                                                 "gen-data"};
  return names;
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j, "config",
             {"task", "seed", "k", "replicates", "output_dir", "jobs", "force", "mnist_dir",
              "estimators", "solver", "features", "prior", "rff", "ntk", "evidence", "ensemble"});
  ExperimentConfig c;
  read(j, "", "task", c.task);
  read(j, "", "seed", c.seed);
  read(j, "", "k", c.k);
  read(j, "", "replicates", c.replicates);
  read(j, "", "output_dir", c.output_dir);
  read(j, "", "jobs", c.jobs);
  read(j, "", "force", c.force);
  read(j, "", "mnist_dir", c.mnist_dir);

  if (j.contains("estimators")) {
    const json& e = j.at("estimators");
    if (!e.is_array()) throw ConfigError("estimators: expected an array of names");
    c.estimators.clear();
    for (const auto& name : e) {
      if (!name.is_string()) throw ConfigError("estimators: expected an array of names");
      try {
        c.estimators.push_back(parse_estimator_kind(name.get<std::string>()));
      } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("estimators: ") + ex.what());
      }
    }
  }

  const json& s = section(j, "solver");
  check_keys(s, "solver", {"mode", "step_size", "max_iters", "grad_tolerance", "enforce_step_bound"});
  std::string mode = solver_name(c.solver.mode);
  read(s, "solver", "mode", mode);
  if (mode == "closed_form") {
    c.solver.mode = SolverMode::closed_form;
  } else if (mode == "gradient_descent") {
    c.solver.mode = SolverMode::gradient_descent;
  } else {
    throw ConfigError("solver.mode: expected closed_form or gradient_descent");
  }
  read(s, "solver", "step_size", c.solver.step_size);
  read(s, "solver", "max_iters", c.solver.max_iters);
  read(s, "solver", "grad_tolerance", c.solver.grad_tolerance);
  read(s, "solver", "enforce_step_bound", c.solver.enforce_step_bound);

  const json& f = section(j, "features");
  check_keys(f, "features", {"n", "d_total", "k_informative", "sigma0", "sigma1", "d_min", "d_max",
                             "prior_variance", "noise_variance"});
  auto& fo = c.features.options;
  read(f, "features", "n", fo.data.n);
  read(f, "features", "d_total", fo.data.d_total);
  read(f, "features", "k_informative", fo.data.k_informative);
  read(f, "features", "sigma0", fo.data.sigma0);
  read(f, "features", "sigma1", fo.data.sigma1);
  read(f, "features", "d_min", fo.d_min);
  read(f, "features", "d_max", fo.d_max);
  read(f, "features", "prior_variance", fo.prior_variance);
  read(f, "features", "noise_variance", fo.noise_variance);

  const json& p = section(j, "prior");
  check_keys(p, "prior", {"n", "d", "true_sigma", "noise_variance", "grid"});
  read(p, "prior", "n", c.prior.n);
  read(p, "prior", "d", c.prior.d);
  read(p, "prior", "true_sigma", c.prior.true_sigma);
  read(p, "prior", "noise_variance", c.prior.noise_variance);
  read(p, "prior", "grid", c.prior.grid);

  const json& r = section(j, "rff");
  check_keys(r, "rff", {"frequencies", "num_features", "prior_variance", "noise_variance",
                        "negative", "positive", "max_points"});
  read(r, "rff", "frequencies", c.rff.options.frequencies);
  read(r, "rff", "num_features", c.rff.options.num_features);
  read(r, "rff", "prior_variance", c.rff.options.prior_variance);
  read(r, "rff", "noise_variance", c.rff.options.noise_variance);
  read(r, "rff", "negative", c.rff.negative);
  read(r, "rff", "positive", c.rff.positive);
  read(r, "rff", "max_points", c.rff.max_points);

  const json& n = section(j, "ntk");
  check_keys(n, "ntk", {"specs", "noise_variance", "max_points", "source"});
  if (n.contains("specs")) {
    const json& specs = n.at("specs");
    if (!specs.is_array()) throw ConfigError("ntk.specs: expected an array");
    c.ntk.specs.clear();
    for (const auto& sj : specs) {
      check_keys(sj, "ntk.specs[]", {"depth", "weight_variance", "bias_variance"});
      NtkSpec spec;
      read(sj, "ntk.specs[]", "depth", spec.depth);
      read(sj, "ntk.specs[]", "weight_variance", spec.weight_variance);
      read(sj, "ntk.specs[]", "bias_variance", spec.bias_variance);
      c.ntk.specs.push_back(spec);
    }
  }
  read(n, "ntk", "noise_variance", c.ntk.noise_variance);
  read(n, "ntk", "max_points", c.ntk.max_points);
  read(n, "ntk", "source", c.ntk.source);

  const json& e = section(j, "evidence");
  check_keys(e, "evidence", {"data_csv", "prior_variance", "noise_variance"});
  read(e, "evidence", "data_csv", c.evidence.data_csv);
  read(e, "evidence", "prior_variance", c.evidence.prior_variance);
  read(e, "evidence", "noise_variance", c.evidence.noise_variance);

  const json& en = section(j, "ensemble");
  check_keys(en, "ensemble", {"task", "draws", "modes"});
  read(en, "ensemble", "task", c.ensemble.task);
  read(en, "ensemble", "draws", c.ensemble.draws);
  if (en.contains("modes")) {
    const json& modes = en.at("modes");
    if (!modes.is_array()) throw ConfigError("ensemble.modes: expected an array");
    c.ensemble.modes.clear();
    for (const auto& m : modes) {
      if (!m.is_string()) throw ConfigError("ensemble.modes: expected an array of names");
      try {
        c.ensemble.modes.push_back(parse_sampling_mode(m.get<std::string>()));
      } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("ensemble.modes: ") + ex.what());
      }
    }
  }
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json est = json::array();
  for (auto k : c.estimators) est.push_back(std::string(to_string(k)));
  json specs = json::array();
  for (const auto& s : c.ntk.specs) {
    specs.push_back({{"depth", s.depth},
                     {"weight_variance", s.weight_variance},
                     {"bias_variance", s.bias_variance}});
  }
  json modes = json::array();
  for (auto m : c.ensemble.modes) modes.push_back(std::string(to_string(m)));
  const auto& fo = c.features.options;
  return {
      {"task", c.task},
      {"seed", c.seed},
      {"k", c.k},
      {"replicates", c.replicates},
      {"output_dir", c.output_dir},
      {"jobs", c.jobs},
      {"force", c.force},
      {"mnist_dir", c.mnist_dir},
      {"estimators", est},
      {"solver",
       {{"mode", solver_name(c.solver.mode)},
        {"step_size", c.solver.step_size},
        {"max_iters", c.solver.max_iters},
        {"grad_tolerance", c.solver.grad_tolerance},
        {"enforce_step_bound", c.solver.enforce_step_bound}}},
      {"features",
       {{"n", fo.data.n},
        {"d_total", fo.data.d_total},
        {"k_informative", fo.data.k_informative},
        {"sigma0", fo.data.sigma0},
        {"sigma1", fo.data.sigma1},
        {"d_min", fo.d_min},
        {"d_max", fo.d_max},
        {"prior_variance", fo.prior_variance},
        {"noise_variance", fo.noise_variance}}},
      {"prior",
       {{"n", c.prior.n},
        {"d", c.prior.d},
        {"true_sigma", c.prior.true_sigma},
        {"noise_variance", c.prior.noise_variance},
        {"grid", c.prior.grid}}},
      {"rff",
       {{"frequencies", c.rff.options.frequencies},
        {"num_features", c.rff.options.num_features},
        {"prior_variance", c.rff.options.prior_variance},
        {"noise_variance", c.rff.options.noise_variance},
        {"negative", c.rff.negative},
        {"positive", c.rff.positive},
        {"max_points", c.rff.max_points}}},
      {"ntk",
       {{"specs", specs},
        {"noise_variance", c.ntk.noise_variance},
        {"max_points", c.ntk.max_points},
        {"source", c.ntk.source}}},
      {"evidence",
       {{"data_csv", c.evidence.data_csv},
        {"prior_variance", c.evidence.prior_variance},
        {"noise_variance", c.evidence.noise_variance}}},
      {"ensemble", {{"task", c.ensemble.task}, {"draws", c.ensemble.draws}, {"modes", modes}}},
  };
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (!contains(task_names(), task)) fail("unknown task '" + task + "'");
  if (k < 1) fail("k must be >= 1");
  if (replicates < 1) fail("replicates must be >= 1");
  if (jobs < 1) fail("jobs must be >= 1");
  if (estimators.empty()) fail("estimators: need at least one");
  if (std::find(estimators.begin(), estimators.end(), EstimatorKind::l_hat_s) != estimators.end() &&
      k < 2) {
    fail("l_hat_s needs k >= 2");
  }
  try {
    solver.validate();
    features.options.data.validate();
    const auto& fo = features.options;
    if (fo.d_min < 1 || fo.d_max < fo.d_min || fo.d_max > fo.data.d_total) {
      fail("features: need 1 <= d_min <= d_max <= d_total");
    }
    if (!(fo.prior_variance > 0.0) || !(fo.noise_variance > 0.0)) {
      fail("features: variances must be positive");
    }
    if (prior.n < 1 || prior.d < 1 || !(prior.true_sigma > 0.0) || !(prior.noise_variance > 0.0)) {
      fail("prior: n, d, true_sigma and noise_variance must be positive");
    }
    if (prior.grid.empty()) fail("prior.grid: empty");
    for (double g : prior.grid) {
      if (!(g > 0.0)) fail("prior.grid: values must be positive");
    }
    if (rff.options.frequencies.empty()) fail("rff.frequencies: empty");
    for (double f : rff.options.frequencies) {
      if (!(f >= 0.0) || !std::isfinite(f)) fail("rff.frequencies: values must be >= 0");
    }
    if (rff.options.num_features < 1) fail("rff.num_features must be >= 1");
    if (!(rff.options.prior_variance > 0.0) || !(rff.options.noise_variance > 0.0)) {
      fail("rff: variances must be positive");
    }
    if (rff.max_points < 1) fail("rff.max_points must be >= 1");
    if (rff.negative == rff.positive) fail("rff: negative and positive labels must differ");
    if (ntk.specs.empty()) fail("ntk.specs: empty");
    for (const auto& s : ntk.specs) s.validate();
    if (!(ntk.noise_variance > 0.0)) fail("ntk.noise_variance must be positive");
    if (ntk.max_points < 1) fail("ntk.max_points must be >= 1");
    if (!contains({"auto", "mnist", "csv", "synthetic"}, ntk.source)) {
      fail("ntk.source: expected auto, mnist, csv or synthetic");
    }
    if (!(evidence.prior_variance > 0.0) || !(evidence.noise_variance > 0.0)) {
      fail("evidence: variances must be positive");
    }
    if (ensemble.draws < 1) fail("ensemble.draws must be >= 1");
    if (ensemble.modes.empty()) fail("ensemble.modes: empty");
    if (!contains(selection_tasks(), ensemble.task)) {
      fail("ensemble.task: expected select-features, select-prior or select-rff");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// --- rankings ---------------------------------------------------------------

RankingSummary compare_rankings(const ResultTable& table) {
  std::vector<std::string> models;
  std::vector<std::string> kinds;
  for (const auto& r : table.rows) {
    if (!contains(models, r.model_id)) models.push_back(r.model_id);
    if (!contains(kinds, r.estimator)) kinds.push_back(r.estimator);
  }
  if (models.size() < 2 || kinds.size() < 2) {
    throw std::invalid_argument("compare_rankings: need >= 2 models and >= 2 estimators");
  }
  auto column = [&](const std::string& kind) {
    std::vector<double> v;
    for (const auto& m : models) {
      auto it = std::find_if(table.rows.begin(), table.rows.end(), [&](const ResultRow& r) {
        return r.model_id == m && r.estimator == kind;
      });
      if (it == table.rows.end()) {
        throw std::invalid_argument("compare_rankings: missing row for " + m + "/" + kind);
      }
      v.push_back(it->mean);
    }
    return v;
  };

  RankingSummary s;
  s.reference = contains(kinds, "exact") ? "exact" : kinds.front();
  const auto ref = column(s.reference);
  s.reference_argmax = models[argmax_lowest(ref)];
  for (const auto& kind : kinds) {
    if (kind == s.reference) continue;
    const auto v = column(kind);
    EstimatorRanking e;
    e.estimator = kind;
    e.argmax_model = models[argmax_lowest(v)];
    e.spearman = spearman(v, ref);
    e.agrees = e.argmax_model == s.reference_argmax;
    s.estimators.push_back(e);
  }
  return s;
}

json to_json(const RankingSummary& s) {
  json est = json::array();
  for (const auto& e : s.estimators) {
    est.push_back({{"estimator", e.estimator},
                   {"argmax", e.argmax_model},
                   {"spearman", e.spearman},
                   {"agrees", e.agrees}});
  }
  return {{"reference", s.reference}, {"reference_argmax", s.reference_argmax}, {"estimators", est}};
}

// --- task execution -----------------------------------------------------------

namespace {

bool is_monte_carlo(EstimatorKind k) {
  return k == EstimatorKind::l_hat || k == EstimatorKind::l_hat_k || k == EstimatorKind::l_hat_s ||
         k == EstimatorKind::sotl;
}

void check_budget(double cost, const ExperimentConfig& cfg, std::ostream& log) {
  log << "estimated cost: " << std::setprecision(4) << cost << " scalar posterior solves\n";
  if (cost > kBudgetLimit && !cfg.force) {
    std::ostringstream msg;
    msg << "estimated cost " << cost << " exceeds the budget of " << kBudgetLimit
        << " scalar posterior solves; rerun with --force";
    throw ConfigError(msg.str());
  }
}

NumericError model_error(const std::string& id, const NumericError& e) {
  return NumericError("model " + id + ": " + e.what());
}

// Mean and standard error over trajectories of the per-trajectory SOTL value.
EvidenceReport sotl_over_trajectories(const TrajectoryRun& run, double noise_variance,
                                      Eigen::Index n) {
  const std::size_t k = run.losses.size();
  std::vector<double> values(k);
  std::vector<std::vector<double>> per(static_cast<std::size_t>(n), std::vector<double>(k));
  for (std::size_t j = 0; j < k; ++j) {
    const EvidenceReport r = sotl_report(run.losses[j], noise_variance, n);
    values[j] = r.value;
    for (Eigen::Index i = 0; i < n; ++i) per[i][j] = r.per_point[i];
  }
  std::vector<double> per_point(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) per_point[i] = pairwise_sum(per[i]) / static_cast<double>(k);
  const MeanStderr ms = mean_stderr(values);
  EvidenceReport out =
      make_report(EstimatorKind::sotl, std::move(per_point), static_cast<int>(k),
                  run.samples.master_seed, ms.stderr_of_mean);
  return out;
}

EvidenceReport monte_carlo_report(EstimatorKind kind, const TrajectoryRun& run,
                                  const Dataset& data, double nv) {
  switch (kind) {
    case EstimatorKind::l_hat: return l_hat(run.samples, data, nv);
    case EstimatorKind::l_hat_k: return l_hat_k(run.samples, data, nv);
    case EstimatorKind::l_hat_s: return l_hat_s(run.samples, data, nv);
    case EstimatorKind::sotl: return sotl_over_trajectories(run, nv, data.size());
    default: break;
  }
  throw std::logic_error("not a Monte Carlo estimator");
}

ResultRow aggregate(const std::string& id, EstimatorKind kind,
                    const std::vector<EvidenceReport>& reps, std::uint64_t seed) {
  ResultRow row{id, std::string(to_string(kind)), 0.0, 0.0, reps.front().k, seed};
  if (reps.size() == 1) {
    row.mean = reps.front().value;
    row.stderr_value = reps.front().std_error;
  } else {
    std::vector<double> v;
    for (const auto& r : reps) v.push_back(r.value);
    const MeanStderr ms = mean_stderr(v);
    row.mean = ms.mean;
    row.stderr_value = ms.stderr_of_mean;
  }
  return row;
}

ResultTable run_blr_models(const SelectionTask& task, const ExperimentConfig& cfg,
                           std::ostream& log) {
  const std::size_t m = task.models.size();
  const std::size_t reps = static_cast<std::size_t>(cfg.replicates);
  const Eigen::Index n = task.models.front().data.size();
  std::vector<EstimatorKind> closed, mc;
  for (auto kind : cfg.estimators) (is_monte_carlo(kind) ? mc : closed).push_back(kind);

  const double cost = static_cast<double>(m) * static_cast<double>(n) *
                      (mc.empty() ? 1.0 : static_cast<double>(cfg.k) * static_cast<double>(reps));
  check_budget(cost, cfg, log);

  // closed[model][kind], mc[model * reps + r][kind]
  std::vector<std::vector<EvidenceReport>> closed_out(m);
  std::vector<std::vector<EvidenceReport>> mc_out(m * reps);

  parallel_for(m, cfg.jobs, [&](std::size_t i) {
    const ModelCandidate& c = task.models[i];
    try {
      for (auto kind : closed) {
        EvidenceReport r = kind == EstimatorKind::exact ? exact_evidence_report(c.model, c.data)
                                                        : sequential_log_evidence(c.model, c.data);
        r.model_id = c.id;
        r.seed = cfg.seed;
        closed_out[i].push_back(std::move(r));
      }
    } catch (const NumericError& e) {
      throw model_error(c.id, e);
    }
  });

  if (!mc.empty()) {
    parallel_for(m * reps, cfg.jobs, [&](std::size_t cell) {
      const ModelCandidate& c = task.models[cell / reps];
      const std::uint64_t seed = split_seed(cfg.seed, cell % reps);
      try {
        const TrajectoryRun run = run_trajectories(c.model, c.data, cfg.k, cfg.solver, seed, 1);
        for (auto kind : mc) {
          EvidenceReport r = monte_carlo_report(kind, run, c.data, c.model.noise_variance);
          r.model_id = c.id;
          r.seed = seed;
          mc_out[cell].push_back(std::move(r));
        }
      } catch (const NumericError& e) {
        throw model_error(c.id, e);
      }
    });
  }

  ResultTable table;
  json models = json::array();
  for (std::size_t i = 0; i < m; ++i) {
    const ModelCandidate& c = task.models[i];
    bool degenerate = false;
    std::size_t ci = 0, mi = 0;
    for (auto kind : cfg.estimators) {
      if (is_monte_carlo(kind)) {
        std::vector<EvidenceReport> per_rep;
        for (std::size_t r = 0; r < reps; ++r) {
          per_rep.push_back(mc_out[i * reps + r][mi]);
          degenerate = degenerate || per_rep.back().degenerate;
        }
        table.rows.push_back(aggregate(c.id, kind, per_rep, cfg.seed));
        ++mi;
      } else {
        table.rows.push_back(aggregate(c.id, kind, {closed_out[i][ci]}, cfg.seed));
        ++ci;
      }
    }
    const std::vector<double>& contrib =
        !closed_out[i].empty() ? closed_out[i].front().per_point : mc_out[i * reps].front().per_point;
    table.per_point.emplace_back(c.id, contrib);
    models.push_back({{"model_id", c.id},
                      {"grid_value", c.grid_value},
                      {"dim", c.data.dim()},
                      {"prior_variance", c.model.prior_variance},
                      {"noise_variance", c.model.noise_variance},
                      {"degenerate", degenerate}});
  }
  table.extras["models"] = models;
  table.extras["n"] = n;
  table.metadata["estimated_cost"] = cost;
  if (m >= 2 && cfg.estimators.size() >= 2) {
    table.extras["rankings"] = to_json(compare_rankings(table));
  }
  return table;
}

std::filesystem::path find_idx_file(const std::filesystem::path& dir,
                                    std::initializer_list<const char*> names) {
  for (const char* name : names) {
    const auto p = dir / name;
    if (std::filesystem::exists(p)) return p;
  }
  throw ConfigError("no IDX file found in " + dir.string() + " (looked for " + *names.begin() +
                    " and alternatives)");
}

Dataset load_digits(const ExperimentConfig& cfg, int max_points, int negative, int positive) {
  if (cfg.mnist_dir.empty()) throw ConfigError(cfg.task + " needs --mnist-dir");
  const std::filesystem::path dir(cfg.mnist_dir);
  const auto images = find_idx_file(dir, {"train-images-idx3-ubyte", "train-images.idx3-ubyte",
                                          "digits-images-idx3-ubyte"});
  const auto labels = find_idx_file(dir, {"train-labels-idx1-ubyte", "train-labels.idx1-ubyte",
                                          "digits-labels-idx1-ubyte"});
  return binary_digit_dataset(load_mnist_idx(images, labels), negative, positive, max_points);
}

SelectionTask build_selection_task(const std::string& name, const ExperimentConfig& cfg) {
  if (name == "select-features") {
    FeatureTaskOptions opts = cfg.features.options;
    opts.data.seed = cfg.seed;
    return feature_selection_task(opts);
  }
  if (name == "select-prior") {
    PriorVarianceTaskOptions opts = cfg.prior;
    opts.seed = cfg.seed;
    return gen_prior_variance_task(opts);
  }
  RffTaskOptions opts = cfg.rff.options;
  opts.seed = cfg.seed;
  const Dataset base = load_digits(cfg, cfg.rff.max_points, cfg.rff.negative, cfg.rff.positive);
  return rff_selection_task(base, opts);
}

Dataset feature_dataset(const ExperimentConfig& cfg) {
  FeatureSelectionConfig fc = cfg.features.options.data;
  fc.seed = cfg.seed;
  return gen_feature_selection(fc);
}

ResultTable run_evidence(const ExperimentConfig& cfg, std::ostream& log) {
  const Dataset data = cfg.evidence.data_csv.empty() ? feature_dataset(cfg)
                                                     : read_dataset_csv(cfg.evidence.data_csv);
  SelectionTask task{"evidence", {}};
  task.models.push_back({"blr", 0.0,
                         BlrModel::zero_mean(data.dim(), cfg.evidence.prior_variance,
                                             cfg.evidence.noise_variance),
                         data});
  return run_blr_models(task, cfg, log);
}

ResultTable run_ensemble(const ExperimentConfig& cfg, std::ostream& log) {
  const SelectionTask task = build_selection_task(cfg.ensemble.task, cfg);
  const std::size_t m = task.models.size();
  const std::size_t reps = static_cast<std::size_t>(cfg.replicates);
  const double cost = static_cast<double>(m) * static_cast<double>(task.targets().size()) *
                      cfg.ensemble.draws * static_cast<double>(cfg.ensemble.modes.size()) *
                      static_cast<double>(reps);
  check_budget(cost, cfg, log);

  ConsistencyOptions opts;
  opts.draws = cfg.ensemble.draws;
  opts.jobs = cfg.jobs;
  opts.modes = cfg.ensemble.modes;
  std::vector<ConsistencyReport> out;
  for (std::size_t r = 0; r < reps; ++r) {
    out.push_back(selection_consistency(task.models, split_seed(cfg.seed, r), opts));
  }

  ResultTable table;
  table.metadata["estimated_cost"] = cost;
  const ConsistencyReport& first = out.front();
  for (std::size_t i = 0; i < m; ++i) {
    const std::string& id = task.models[i].id;
    table.rows.push_back({id, "exact", first.exact_evidence[i], 0.0, 0, cfg.seed});
    table.rows.push_back({id, "expected_loglik", first.expected_loglik[i], 0.0, 0, cfg.seed});
    for (std::size_t k = 0; k < cfg.ensemble.modes.size(); ++k) {
      std::vector<double> w;
      for (const auto& rep : out) w.push_back(rep.modes[k].weights.weights(i));
      const MeanStderr ms = mean_stderr(w);
      table.rows.push_back({id, "weight_" + std::string(to_string(cfg.ensemble.modes[k])), ms.mean,
                            ms.stderr_of_mean, cfg.ensemble.draws, cfg.seed});
    }
    table.per_point.emplace_back(id, exact_evidence_report(task.models[i].model,
                                                           task.models[i].data).per_point);
  }
  json reports = json::array();
  json agreement = json::object();
  for (std::size_t k = 0; k < cfg.ensemble.modes.size(); ++k) {
    int agree = 0;
    for (const auto& rep : out) agree += rep.modes[k].agrees_with_evidence ? 1 : 0;
    agreement[std::string(to_string(cfg.ensemble.modes[k]))] = agree;
  }
  for (const auto& rep : out) reports.push_back(to_json(rep));
  table.extras["selection_task"] = cfg.ensemble.task;
  table.extras["consistency"] = reports;
  table.extras["replicates_agreeing_with_evidence"] = agreement;
  table.extras["rankings"] = to_json(compare_rankings(table));
  return table;
}

ResultTable run_ntk_compare(const ExperimentConfig& cfg, std::ostream& log) {
  std::string source = cfg.ntk.source;
  if (source == "auto") {
    source = !cfg.mnist_dir.empty() ? "mnist" : !cfg.evidence.data_csv.empty() ? "csv"
                                                                                : "synthetic";
  }
  Dataset data;
  if (source == "mnist") {
    data = load_digits(cfg, cfg.ntk.max_points, cfg.rff.negative, cfg.rff.positive);
  } else if (source == "csv") {
    if (cfg.evidence.data_csv.empty()) throw ConfigError("ntk.source csv needs evidence.data_csv");
    data = read_dataset_csv(cfg.evidence.data_csv);
  } else {
    data = feature_dataset(cfg);
  }
  const Eigen::Index n = std::min<Eigen::Index>(data.size(), cfg.ntk.max_points);
  const Eigen::MatrixXd x = data.features().topRows(n);
  const Eigen::VectorXd y = data.targets().head(n);
  const std::size_t reps = static_cast<std::size_t>(cfg.replicates);
  const double nv = cfg.ntk.noise_variance;
  const double cost = static_cast<double>(cfg.ntk.specs.size()) * static_cast<double>(n) *
                      (static_cast<double>(cfg.k) * static_cast<double>(reps) +
                       static_cast<double>(n) * static_cast<double>(n));
  check_budget(cost, cfg, log);

  ResultTable table;
  table.metadata["estimated_cost"] = cost;
  json specs = json::array();
  for (const auto& spec : cfg.ntk.specs) {
    const std::string id = spec.label();
    try {
      KernelMatrix k = ntk_gram(spec, x, cfg.jobs);
      const double exact = gp_log_evidence(k, y, nv);
      const EvidenceReport seq = gp_sequential_evidence(k, y, nv);
      const EvidenceReport bound = gp_expected_loglik_bound(k, y, nv);
      std::vector<EvidenceReport> mc(reps);
      parallel_for(reps, cfg.jobs, [&](std::size_t r) {
        mc[r] = mc_l_estimate_gp(k, y, nv, cfg.k, split_seed(cfg.seed, r));
      });
      table.rows.push_back({id, "exact", exact, 0.0, 0, cfg.seed});
      table.rows.push_back({id, "sequential", seq.value, 0.0, 0, cfg.seed});
      table.rows.push_back({id, "expected_loglik", bound.value, 0.0, 0, cfg.seed});
      table.rows.push_back(aggregate(id, EstimatorKind::l_hat, mc, cfg.seed));
      table.per_point.emplace_back(id, seq.per_point);

      // Trend of the one-step-ahead terms: mean of the last quarter minus
      // mean of the first quarter.
      const std::size_t q = std::max<std::size_t>(1, seq.per_point.size() / 4);
      const std::span<const double> all(seq.per_point);
      const double head = pairwise_sum(all.first(q)) / static_cast<double>(q);
      const double tail = pairwise_sum(all.last(q)) / static_cast<double>(q);
      specs.push_back({{"model_id", id},
                       {"depth", spec.depth},
                       {"weight_variance", spec.weight_variance},
                       {"bias_variance", spec.bias_variance},
                       {"jitter", k.jitter_applied},
                       {"delta_trend", tail - head}});
    } catch (const NumericError& e) {
      throw model_error(id, e);
    }
  }
  table.extras["source"] = source;
  table.extras["n"] = n;
  table.extras["noise_variance"] = nv;
  table.extras["specs"] = specs;
  if (cfg.ntk.specs.size() >= 2) table.extras["rankings"] = to_json(compare_rankings(table));
  return table;
}

ResultTable run_gen_data(const ExperimentConfig& cfg, std::ostream& log) {
  check_budget(0.0, cfg, log);
  const Dataset data = feature_dataset(cfg);
  std::ostringstream csv;
  write_dataset_csv(csv, data);
  ResultTable table;
  table.attachments.emplace_back("data.csv", csv.str());
  table.extras["rows"] = data.size();
  table.extras["features"] = data.dim();
  return table;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace

ResultTable run(const ExperimentConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ResultTable table;
  try {
    if (cfg.task == "gen-data") {
      table = run_gen_data(cfg, log);
    } else if (cfg.task == "evidence") {
      table = run_evidence(cfg, log);
    } else if (cfg.task == "ensemble") {
      table = run_ensemble(cfg, log);
    } else if (cfg.task == "ntk-compare") {
      table = run_ntk_compare(cfg, log);
    } else {
      table = run_blr_models(build_selection_task(cfg.task, cfg), cfg, log);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(e.what());
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  table.metadata["config"] = config_to_json(cfg);
  table.metadata["version"] = kVersion;
  table.metadata["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                            std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION);
  table.metadata["wall_time_seconds"] = wall;
  table.metadata["timestamp"] = utc_timestamp();
  return table;
}

std::string results_csv(const ResultTable& table) {
  std::ostringstream out;
  out << "model_id,estimator,mean,stderr,k,seed\n";
  for (const auto& r : table.rows) {
    if (!std::isfinite(r.mean) || !std::isfinite(r.stderr_value)) {
      throw NumericError("model " + r.model_id + ": non-finite " + r.estimator + " result");
    }
    out << r.model_id << ',' << r.estimator << ',' << format_double(r.mean) << ','
        << format_double(r.stderr_value) << ',' << r.k << ',' << r.seed << '\n';
  }
  return out.str();
}

void write_results(const ResultTable& table, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const std::string csv = results_csv(table);
  fs::create_directories(dir);
  auto write_file = [](const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
  };
  write_file(dir / "results.csv", csv);

  json rows = json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"model_id", r.model_id},
                    {"estimator", r.estimator},
                    {"mean", r.mean},
                    {"stderr", r.stderr_value},
                    {"k", r.k},
                    {"seed", r.seed}});
  }
  const json doc = {{"metadata", table.metadata}, {"rows", rows}, {"results", table.extras}};
  write_file(dir / "results.json", doc.dump(2) + "\n");

  if (!table.per_point.empty()) {
    fs::create_directories(dir / "per_point");
    for (const auto& [id, values] : table.per_point) {
      std::ostringstream out;
      out << "i,contribution\n";
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
          throw NumericError("model " + id + ": non-finite contribution at prefix " +
                             std::to_string(i + 1));
        }
        out << i + 1 << ',' << format_double(values[i]) << '\n';
      }
      write_file(dir / "per_point" / (id + ".csv"), out.str());
    }
  }
  for (const auto& [name, content] : table.attachments) write_file(dir / name, content);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Marginal likelihood estimation experiments", "mlest"};
  std::string task_pos, task_flag, config_path, out_dir, mnist_dir;
  std::uint64_t seed = 0;
  int k = 0, replicates = 0, jobs = 0;
  bool force = false, print_config = false;
  app.add_option("command", task_pos, "Task to run")->check(CLI::IsMember(task_names()));
  app.add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
  auto* o_task = app.add_option("--task", task_flag, "Task (overrides the config)")
                     ->check(CLI::IsMember(task_names()));
  auto* o_seed = app.add_option("--seed", seed, "Master seed");
  auto* o_k = app.add_option("--k", k, "Samples per estimate");
  auto* o_rep = app.add_option("--replicates", replicates, "Independent replicates");
  auto* o_out = app.add_option("--out", out_dir, "Output directory");
  auto* o_jobs = app.add_option("--jobs", jobs, "Worker threads");
  auto* o_mnist = app.add_option("--mnist-dir", mnist_dir, "Directory holding IDX digit files");
  app.add_flag("--force", force, "Run even above the cost budget");
  app.add_flag("--print-config", print_config, "Print the resolved config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (!task_pos.empty()) cfg.task = task_pos;
    if (o_task->count() > 0) cfg.task = task_flag;
    if (o_seed->count() > 0) cfg.seed = seed;
    if (o_k->count() > 0) cfg.k = k;
    if (o_rep->count() > 0) cfg.replicates = replicates;
    if (o_out->count() > 0) cfg.output_dir = out_dir;
    if (o_jobs->count() > 0) cfg.jobs = jobs;
    if (o_mnist->count() > 0) cfg.mnist_dir = mnist_dir;
    if (force) cfg.force = true;
    cfg.validate();

    if (print_config) {
      out << config_to_json(cfg).dump(2) << '\n';
      return kExitOk;
    }
    const ResultTable table = run(cfg, err);
    write_results(table, cfg.output_dir);
    out << cfg.task << ": " << table.rows.size() << " rows written to " << cfg.output_dir << '\n';
    if (table.extras.contains("rankings")) {
      const json& r = table.extras.at("rankings");
      out << "reference " << r.at("reference").get<std::string>() << " argmax "
          << r.at("reference_argmax").get<std::string>() << '\n';
      for (const auto& e : r.at("estimators")) {
        out << "  " << e.at("estimator").get<std::string>() << " argmax "
            << e.at("argmax").get<std::string>() << " spearman "
            << format_double(e.at("spearman").get<double>())
            << (e.at("agrees").get<bool>() ? " (agrees)" : " (differs)") << '\n';
      }
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace mlest::cli
