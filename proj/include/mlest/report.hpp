#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mlest {

enum class EstimatorKind { exact, sequential, l_hat, l_hat_k, l_hat_s, sotl };

std::string_view to_string(EstimatorKind kind);
/// Throws std::invalid_argument on unknown names.
EstimatorKind parse_estimator_kind(std::string_view name);

/// Output of every evidence computation. `value` is the sum of `per_point`;
/// `std_error` is the Monte Carlo standard error of `value` (0 for the
/// closed-form kinds).
struct EvidenceReport {
  EstimatorKind kind = EstimatorKind::exact;
  double value = 0.0;
  std::vector<double> per_point;
  int k = 0;
  std::uint64_t seed = 0;
  std::string model_id;
  double std_error = 0.0;
  /// Set by l_hat_s when a predictive sample variance hit the floor.
  bool degenerate = false;
};

/// Builds a report whose value is the pairwise sum of the contributions.
EvidenceReport make_report(EstimatorKind kind, std::vector<double> per_point, int k,
                           std::uint64_t seed, double std_error = 0.0);

nlohmann::json to_json(const EvidenceReport& report);
EvidenceReport report_from_json(const nlohmann::json& j);

}  // namespace mlest
