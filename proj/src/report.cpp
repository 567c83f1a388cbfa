#include "mlest/report.hpp"

#include <array>
#include <stdexcept>
#include <utility>

#include "mlest/stats.hpp"

namespace mlest {

namespace {

constexpr std::array<std::pair<EstimatorKind, std::string_view>, 6> kNames{{
    {EstimatorKind::exact, "exact"},
    {EstimatorKind::sequential, "sequential"},
    {EstimatorKind::l_hat, "l_hat"},
    {EstimatorKind::l_hat_k, "l_hat_k"},
    {EstimatorKind::l_hat_s, "l_hat_s"},
    {EstimatorKind::sotl, "sotl"},
}};

}  // namespace

std::string_view to_string(EstimatorKind kind) {
  for (const auto& [k, name] : kNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

EstimatorKind parse_estimator_kind(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw std::invalid_argument("unknown estimator kind: " + std::string(name));
}

EvidenceReport make_report(EstimatorKind kind, std::vector<double> per_point, int k,
                           std::uint64_t seed, double std_error) {
  EvidenceReport r;
  r.kind = kind;
  r.value = pairwise_sum(per_point);
  r.per_point = std::move(per_point);
  r.k = k;
  r.seed = seed;
  r.std_error = std_error;
  return r;
}

nlohmann::json to_json(const EvidenceReport& report) {
  return nlohmann::json{
      {"kind", to_string(report.kind)},
      {"value", report.value},
      {"per_point", report.per_point},
      {"k", report.k},
      {"seed", report.seed},
      {"model_id", report.model_id},
      {"stderr", report.std_error},
      {"degenerate", report.degenerate},
  };
}

EvidenceReport report_from_json(const nlohmann::json& j) {
  EvidenceReport r;
  r.kind = parse_estimator_kind(j.at("kind").get<std::string>());
  r.value = j.at("value").get<double>();
  r.per_point = j.at("per_point").get<std::vector<double>>();
  r.k = j.at("k").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.model_id = j.value("model_id", std::string{});
  r.std_error = j.value("stderr", 0.0);
  r.degenerate = j.value("degenerate", false);
  return r;
}

}  // namespace mlest
