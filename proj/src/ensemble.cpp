#include "mlest/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mlest/errors.hpp"
#include "mlest/parallel.hpp"
#include "mlest/sto.hpp"
#include "mlest/stats.hpp"

namespace mlest {

std::string_view to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::concurrent: return "concurrent";
    case SamplingMode::posterior: return "posterior";
    case SamplingMode::prior: return "prior";
  }
  return "unknown";
}

SamplingMode parse_sampling_mode(std::string_view name) {
  if (name == "concurrent") return SamplingMode::concurrent;
  if (name == "posterior") return SamplingMode::posterior;
  if (name == "prior") return SamplingMode::prior;
  throw std::invalid_argument("unknown sampling mode: " + std::string(name));
}

PredictiveTable predictive_table(std::span<const ModelCandidate> models, SamplingMode mode) {
  if (models.empty()) throw std::invalid_argument("predictive_table: empty model list");
  const Eigen::Index n = models.front().data.size();
  const Eigen::Index m = static_cast<Eigen::Index>(models.size());
  PredictiveTable table{Eigen::MatrixXd(n, m), Eigen::MatrixXd(n, m), mode};

  for (Eigen::Index j = 0; j < m; ++j) {
    const ModelCandidate& c = models[j];
    if (c.data.size() != n) {
      throw std::invalid_argument("predictive_table: models disagree on dataset size");
    }
    c.model.validate();
    const double nv = c.model.noise_variance;
    if (mode == SamplingMode::concurrent) {
      SequentialConditioner cond(c.model);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd x = c.data.row(i);
        const Gaussian1D p = cond.predictive(x);
        table.mean(i, j) = p.mean;
        table.variance(i, j) = p.variance;
        cond.add(x, c.data.targets()(i));
      }
    } else {
      const Eigen::Index prefix = mode == SamplingMode::posterior ? n : 0;
      const PosteriorState state = condition(c.model, c.data, prefix);
      for (Eigen::Index i = 0; i < n; ++i) {
        const Gaussian1D p = predictive(state, c.data.row(i), nv);
        table.mean(i, j) = p.mean;
        table.variance(i, j) = p.variance;
      }
    }
  }
  return table;
}

DesignMatrix draw_design(const PredictiveTable& table, Rng& rng, std::uint64_t seed) {
  std::normal_distribution<double> normal(0.0, 1.0);
  DesignMatrix d{Eigen::MatrixXd(table.mean.rows(), table.mean.cols()), table.mode, seed};
  for (Eigen::Index j = 0; j < d.phi.cols(); ++j) {
    for (Eigen::Index i = 0; i < d.phi.rows(); ++i) {
      d.phi(i, j) = table.mean(i, j) + std::sqrt(table.variance(i, j)) * normal(rng);
    }
  }
  return d;
}

DesignMatrix build_design(std::span<const ModelCandidate> models, SamplingMode mode, Rng& rng,
                          std::uint64_t seed) {
  if (models.size() < 2) throw std::invalid_argument("build_design: need at least 2 models");
  return draw_design(predictive_table(models, mode), rng, seed);
}

DesignMatrix build_design(std::span<const BlrModel> models, const Dataset& data,
                          SamplingMode mode, Rng& rng, std::uint64_t seed) {
  std::vector<ModelCandidate> candidates;
  candidates.reserve(models.size());
  for (std::size_t j = 0; j < models.size(); ++j) {
    candidates.push_back({"m" + std::to_string(j), 0.0, models[j], data});
  }
  return build_design(candidates, mode, rng, seed);
}

int WeightReport::argmax() const {
  std::vector<double> w(weights.data(), weights.data() + weights.size());
  return static_cast<int>(argmax_lowest(w));
}

std::vector<int> rank_by_magnitude(const Eigen::VectorXd& weights) {
  std::vector<int> order(static_cast<std::size_t>(weights.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(weights(a)) > std::abs(weights(b));
  });
  return order;
}

nlohmann::json to_json(const WeightReport& report) {
  nlohmann::json flags = nlohmann::json::object();
  for (const auto& [name, ok] : report.agreement) flags[name] = ok;
  return {{"weights", std::vector<double>(report.weights.data(),
                                          report.weights.data() + report.weights.size())},
          {"ranking", report.ranking},
          {"sampling_mode", std::string(to_string(report.mode))},
          {"S", report.draws_averaged},
          {"seed", report.seed},
          {"agreement", flags}};
}

namespace {

Eigen::VectorXd gradient_descent_solve(const Eigen::MatrixXd& g, const Eigen::VectorXd& b) {
  const double lmax = largest_eigenvalue_estimate(g);
  if (!(lmax > 0.0)) throw NumericError("ensemble weights: Gram has no positive eigenvalue");
  const double step = 1.0 / lmax;
  const double tol = 1e-12 * std::max(1.0, b.norm());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(b.size());
  for (int it = 0; it < 1000000; ++it) {
    const Eigen::VectorXd grad = g * w - b;
    if (grad.norm() <= tol) return w;
    w -= step * grad;
  }
  throw NumericError("ensemble weights: gradient descent did not converge");
}

}  // namespace

Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs,
                                       WeightSolver solver) {
  if (gram.rows() != gram.cols() || gram.rows() != rhs.size()) {
    throw std::invalid_argument("solve_normal_equations: dimension mismatch");
  }
  Eigen::MatrixXd g = gram;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) {
    const double scale = std::max(1.0, g.trace() / static_cast<double>(g.rows()));
    g.diagonal().array() += 1e-10 * scale;
    llt.compute(g);
    if (llt.info() != Eigen::Success) {
      throw NumericError("ensemble weights: averaged Gram singular after ridge fallback");
    }
  }
  if (solver == WeightSolver::gradient_descent) return gradient_descent_solve(g, rhs);
  return llt.solve(rhs);
}

WeightReport least_squares_weights(const DesignMatrix& design, const Eigen::VectorXd& y,
                                   WeightSolver solver) {
  if (design.phi.rows() != y.size()) {
    throw std::invalid_argument("least_squares_weights: design/target size mismatch");
  }
  WeightReport r;
  r.weights = solve_normal_equations(design.phi.transpose() * design.phi,
                                     design.phi.transpose() * y, solver);
  r.draws_averaged = 1;
  r.ranking = rank_by_magnitude(r.weights);
  r.mode = design.mode;
  r.seed = design.seed;
  return r;
}

namespace {

struct AveragedStats {
  Eigen::MatrixXd gram;
  Eigen::VectorXd rhs;
};

// Elementwise pairwise mean over draws, so the result does not depend on
// which thread produced which draw.
AveragedStats average_stats(const PredictiveTable& table, const Eigen::VectorXd& y, int draws,
                            std::uint64_t seed, int jobs) {
  const Eigen::Index m = table.mean.cols();
  std::vector<Eigen::MatrixXd> grams(static_cast<std::size_t>(draws));
  std::vector<Eigen::VectorXd> rhss(static_cast<std::size_t>(draws));
  parallel_for(static_cast<std::size_t>(draws), jobs, [&](std::size_t s) {
    Rng rng = make_rng(seed, s);
    const DesignMatrix d = draw_design(table, rng, seed);
    grams[s] = d.phi.transpose() * d.phi;
    rhss[s] = d.phi.transpose() * y;
  });
  AveragedStats out{Eigen::MatrixXd(m, m), Eigen::VectorXd(m)};
  std::vector<double> buf(static_cast<std::size_t>(draws));
  const double inv = 1.0 / static_cast<double>(draws);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = a; b < m; ++b) {
      for (int s = 0; s < draws; ++s) buf[s] = grams[s](a, b);
      out.gram(a, b) = out.gram(b, a) = pairwise_sum(buf) * inv;
    }
    for (int s = 0; s < draws; ++s) buf[s] = rhss[s](a);
    out.rhs(a) = pairwise_sum(buf) * inv;
  }
  return out;
}

}  // namespace

WeightReport least_squares_weights(const PredictiveTable& table, const Eigen::VectorXd& y,
                                   int draws, std::uint64_t seed, int jobs,
                                   WeightSolver solver) {
  if (draws < 1) throw std::invalid_argument("least_squares_weights: draws must be >= 1");
  if (table.mean.rows() != y.size()) {
    throw std::invalid_argument("least_squares_weights: table/target size mismatch");
  }
  const AveragedStats st = average_stats(table, y, draws, seed, jobs);
  WeightReport r;
  r.weights = solve_normal_equations(st.gram, st.rhs, solver);
  r.draws_averaged = draws;
  r.ranking = rank_by_magnitude(r.weights);
  r.mode = table.mode;
  r.seed = seed;
  return r;
}

LemmaInstance synth_lemma_instance(double alpha, std::span<const double> sigmas, int n,
                                   Rng& rng) {
  const int m = static_cast<int>(sigmas.size());
  if (m < 1) throw std::invalid_argument("synth_lemma_instance: need at least one sigma");
  if (m > n - 1) {
    throw std::invalid_argument("synth_lemma_instance: " + std::to_string(m) +
                                " columns need n >= " + std::to_string(m + 1));
  }
  for (double s : sigmas) {
    if (!(s > 0.0)) throw std::invalid_argument("synth_lemma_instance: sigmas must be > 0");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(n, m + 1);
  for (Eigen::Index c = 0; c < g.cols(); ++c) {
    for (Eigen::Index r = 0; r < n; ++r) g(r, c) = normal(rng);
  }
  const Eigen::MatrixXd q =
      Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(n, m + 1);

  const double root_n = std::sqrt(static_cast<double>(n));
  LemmaInstance inst;
  inst.y = root_n * q.col(0);
  inst.design.phi.resize(n, m);
  for (int j = 0; j < m; ++j) {
    inst.design.phi.col(j) = alpha * inst.y + sigmas[j] * root_n * q.col(j + 1);
  }
  inst.design.mode = SamplingMode::concurrent;
  return inst;
}

Eigen::VectorXd lemma_closed_form_weights(double alpha, std::span<const double> sigmas) {
  Eigen::VectorXd prec(static_cast<Eigen::Index>(sigmas.size()));
  for (std::size_t j = 0; j < sigmas.size(); ++j) prec(j) = 1.0 / (sigmas[j] * sigmas[j]);
  return alpha * prec / (1.0 + alpha * alpha * prec.sum());
}

const ModeOutcome& ConsistencyReport::outcome(SamplingMode mode) const {
  for (const auto& o : modes) {
    if (o.weights.mode == mode) return o;
  }
  throw std::out_of_range("consistency report has no mode " + std::string(to_string(mode)));
}

ConsistencyReport selection_consistency(std::span<const ModelCandidate> models,
                                        std::uint64_t seed, const ConsistencyOptions& opts) {
  if (models.size() < 2) throw std::invalid_argument("selection_consistency: need >= 2 models");
  ConsistencyReport rep;
  rep.seed = seed;
  for (const auto& c : models) {
    rep.model_ids.push_back(c.id);
    rep.exact_evidence.push_back(exact_log_evidence(c.model, c.data));
    rep.expected_loglik.push_back(expected_log_likelihood_bound(c.model, c.data).value);
  }
  rep.evidence_argmax = static_cast<int>(argmax_lowest(rep.exact_evidence));
  rep.bound_argmax = static_cast<int>(argmax_lowest(rep.expected_loglik));

  const Eigen::VectorXd& y = models.front().data.targets();
  const double yy = y.squaredNorm();
  for (std::size_t k = 0; k < opts.modes.size(); ++k) {
    const SamplingMode mode = opts.modes[k];
    const PredictiveTable table = predictive_table(models, mode);
    const std::uint64_t mode_seed = split_seed(seed, k);
    const AveragedStats st = average_stats(table, y, opts.draws, mode_seed, opts.jobs);

    ModeOutcome o;
    o.weights.weights = solve_normal_equations(st.gram, st.rhs);
    o.weights.draws_averaged = opts.draws;
    o.weights.ranking = rank_by_magnitude(o.weights.weights);
    o.weights.mode = mode;
    o.weights.seed = mode_seed;
    const int w_arg = o.weights.argmax();
    o.agrees_with_evidence = w_arg == rep.evidence_argmax;
    o.agrees_with_bound = w_arg == rep.bound_argmax;
    o.weights.agreement = {{"exact_evidence", o.agrees_with_evidence},
                           {"expected_loglik", o.agrees_with_bound}};

    const double mean_abs = st.rhs.cwiseAbs().mean();
    o.signal_spread = mean_abs > 0.0 ? (st.rhs.maxCoeff() - st.rhs.minCoeff()) / mean_abs : 0.0;
    const Eigen::MatrixXd resid = st.gram - st.rhs * st.rhs.transpose() / yy;
    double worst = 0.0;
    for (Eigen::Index a = 0; a < resid.rows(); ++a) {
      for (Eigen::Index b = a + 1; b < resid.cols(); ++b) {
        const double denom = std::sqrt(std::max(resid(a, a), 0.0) * std::max(resid(b, b), 0.0));
        if (denom > 0.0) worst = std::max(worst, std::abs(resid(a, b)) / denom);
      }
    }
    o.max_residual_correlation = worst;
    rep.modes.push_back(std::move(o));
  }
  return rep;
}

nlohmann::json to_json(const ConsistencyReport& report) {
  nlohmann::json modes = nlohmann::json::array();
  for (const auto& o : report.modes) {
    nlohmann::json j = to_json(o.weights);
    j["argmax"] = o.weights.argmax();
    j["signal_spread"] = o.signal_spread;
    j["max_residual_correlation"] = o.max_residual_correlation;
    modes.push_back(std::move(j));
  }
  return {{"model_ids", report.model_ids},
          {"exact_evidence", report.exact_evidence},
          {"expected_loglik", report.expected_loglik},
          {"evidence_argmax", report.evidence_argmax},
          {"expected_loglik_argmax", report.bound_argmax},
          {"seed", report.seed},
          {"modes", modes}};
}

}  // namespace mlest
