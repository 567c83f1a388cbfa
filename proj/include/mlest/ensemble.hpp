#pragma once

// Linear combinations of model predictions. Column j of a design matrix
// holds sampled predictions of model j; least-squares weights over those
// columns rank the models.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mlest/blr.hpp"
#include "mlest/data.hpp"
#include "mlest/rng.hpp"

namespace mlest {

enum class SamplingMode { concurrent, posterior, prior };

std::string_view to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(std::string_view name);

/// Per-point predictive moments for each model, n x m. Concurrent mode uses
/// the posterior given D_<i, posterior mode the full-data posterior, prior
/// mode no conditioning. Variances include observation noise.
struct PredictiveTable {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd variance;
  SamplingMode mode = SamplingMode::concurrent;
};

PredictiveTable predictive_table(std::span<const ModelCandidate> models, SamplingMode mode);

struct DesignMatrix {
  Eigen::MatrixXd phi;  // n x m
  SamplingMode mode = SamplingMode::concurrent;
  std::uint64_t seed = 0;
};

DesignMatrix draw_design(const PredictiveTable& table, Rng& rng, std::uint64_t seed = 0);
DesignMatrix build_design(std::span<const ModelCandidate> models, SamplingMode mode, Rng& rng,
                          std::uint64_t seed = 0);
/// All models share one dataset.
DesignMatrix build_design(std::span<const BlrModel> models, const Dataset& data,
                          SamplingMode mode, Rng& rng, std::uint64_t seed = 0);

enum class WeightSolver { direct, gradient_descent };

struct WeightReport {
  Eigen::VectorXd weights;
  int draws_averaged = 0;
  std::vector<int> ranking;  // by |w| descending, ties by lowest index
  SamplingMode mode = SamplingMode::concurrent;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, bool>> agreement;

  int argmax() const;  // signed weights, lowest index on ties
};

nlohmann::json to_json(const WeightReport& report);

/// Models ordered by |w| descending; equal magnitudes keep index order.
std::vector<int> rank_by_magnitude(const Eigen::VectorXd& weights);

/// Solves G w = b; on a failed factorization retries with G + 1e-10 I
/// (scaled by mean diagonal), then throws NumericError.
Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& gram, const Eigen::VectorXd& rhs,
                                       WeightSolver solver = WeightSolver::direct);

/// Weights for a fixed design (S = 1).
WeightReport least_squares_weights(const DesignMatrix& design, const Eigen::VectorXd& y,
                                   WeightSolver solver = WeightSolver::direct);

/// Averages Phi^T Phi and Phi^T y over `draws` independent rebuilds of the
/// design; rebuild s uses make_rng(seed, s).
WeightReport least_squares_weights(const PredictiveTable& table, const Eigen::VectorXd& y,
                                   int draws, std::uint64_t seed, int jobs = 1,
                                   WeightSolver solver = WeightSolver::direct);

struct LemmaInstance {
  DesignMatrix design;
  Eigen::VectorXd y;
};

/// Phi[:, j] = alpha y + eps_j with y, eps_1..eps_m mutually orthogonal,
/// ||y||^2 = n and ||eps_j||^2 = sigma_j^2 n. Requires m <= n - 1.
LemmaInstance synth_lemma_instance(double alpha, std::span<const double> sigmas, int n, Rng& rng);

/// Exact minimizer on such an instance:
/// w_i = alpha sigma_i^-2 / (1 + alpha^2 sum_j sigma_j^-2).
Eigen::VectorXd lemma_closed_form_weights(double alpha, std::span<const double> sigmas);

struct ConsistencyOptions {
  int draws = 200;
  int jobs = 1;
  std::vector<SamplingMode> modes = {SamplingMode::concurrent, SamplingMode::posterior,
                                     SamplingMode::prior};
};

struct ModeOutcome {
  WeightReport weights;
  bool agrees_with_evidence = false;
  bool agrees_with_bound = false;
  // Measured preconditions for weight/evidence agreement, from the averaged
  // statistics: relative spread of E<phi_j, y> across models, and the largest
  // absolute correlation between the parts of two columns orthogonal to y.
  double signal_spread = 0.0;
  double max_residual_correlation = 0.0;
};

struct ConsistencyReport {
  std::vector<std::string> model_ids;
  std::vector<double> exact_evidence;
  std::vector<double> expected_loglik;  // closed-form L(D) per model
  int evidence_argmax = 0;
  int bound_argmax = 0;
  std::vector<ModeOutcome> modes;
  std::uint64_t seed = 0;

  const ModeOutcome& outcome(SamplingMode mode) const;
};

ConsistencyReport selection_consistency(std::span<const ModelCandidate> models,
                                        std::uint64_t seed,
                                        const ConsistencyOptions& opts = {});

nlohmann::json to_json(const ConsistencyReport& report);

}  // namespace mlest
