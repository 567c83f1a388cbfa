#pragma once

// Experiment runner behind the `mlest` command line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlest/ensemble.hpp"
#include "mlest/ntk.hpp"
#include "mlest/report.hpp"
#include "mlest/sto.hpp"

namespace mlest::cli {

/// Bad config or flags; exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

inline constexpr double kBudgetLimit = 1e8;

struct FeatureSettings {
  FeatureTaskOptions options;
};

struct RffSettings {
  RffTaskOptions options;
  int negative = 0;
  int positive = 1;
  int max_points = 200;
};

struct NtkSettings {
  std::vector<NtkSpec> specs = {NtkSpec{1, 2.0, 0.1}, NtkSpec{2, 2.0, 0.1}};
  double noise_variance = 0.1;
  int max_points = 100;
  std::string source = "auto";  // auto | mnist | csv | synthetic
};

struct EvidenceSettings {
  std::string data_csv;  // empty: feature-selection data at its full dimension
  double prior_variance = 1.0;
  double noise_variance = 1.0;
};

struct EnsembleSettings {
  std::string task = "select-features";  // which selection family to combine
  int draws = 200;
  std::vector<SamplingMode> modes = {SamplingMode::concurrent, SamplingMode::posterior,
                                     SamplingMode::prior};
};

struct ExperimentConfig {
  std::string task = "select-features";
  std::uint64_t seed = 0;
  int k = 20;
  int replicates = 1;
  std::string output_dir = "results";
  int jobs = 1;
  bool force = false;
  std::string mnist_dir;
  std::vector<EstimatorKind> estimators = {EstimatorKind::exact, EstimatorKind::l_hat,
                                           EstimatorKind::l_hat_k, EstimatorKind::l_hat_s};
  GdConfig solver;

  FeatureSettings features;
  PriorVarianceTaskOptions prior;
  RffSettings rff;
  NtkSettings ntk;
  EvidenceSettings evidence;
  EnsembleSettings ensemble;

  /// Throws ConfigError.
  void validate() const;
};

const std::vector<std::string>& task_names();

/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

struct ResultRow {
  std::string model_id;
  std::string estimator;
  double mean = 0.0;
  double stderr_value = 0.0;
  int k = 0;
  std::uint64_t seed = 0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  nlohmann::json metadata = nlohmann::json::object();
  nlohmann::json extras = nlohmann::json::object();
  // model_id -> per-point contributions written to per_point/<model_id>.csv
  std::vector<std::pair<std::string, std::vector<double>>> per_point;
  // extra files (name, content) written next to results.csv, e.g. data.csv
  std::vector<std::pair<std::string, std::string>> attachments;
};

struct EstimatorRanking {
  std::string estimator;
  std::string argmax_model;
  double spearman = 0.0;
  bool agrees = false;
};

struct RankingSummary {
  std::string reference;  // "exact" when present
  std::string reference_argmax;
  std::vector<EstimatorRanking> estimators;
};

/// Per-estimator argmax and Spearman correlation against the reference
/// estimator over models. Needs >= 2 models and >= 2 estimator kinds.
RankingSummary compare_rankings(const ResultTable& table);
nlohmann::json to_json(const RankingSummary& summary);

/// Executes the task and returns the table (no files written). Refuses with
/// ConfigError when the estimated number of scalar posterior solves exceeds
/// kBudgetLimit and cfg.force is unset.
ResultTable run(const ExperimentConfig& cfg, std::ostream& log);

/// results.csv, results.json, per_point/<model_id>.csv.
void write_results(const ResultTable& table, const std::filesystem::path& dir);
std::string results_csv(const ResultTable& table);

/// Full command line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mlest::cli
