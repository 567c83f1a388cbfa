#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "mlest/blr.hpp"
#include "mlest/ntk.hpp"
#include "mlest/sto.hpp"

namespace mlest {

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double v);

/// Dataset CSV: header `x1,...,xd,y`, one row per point in prequential order.
void write_dataset_csv(std::ostream& out, const Dataset& data);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);

/// Throws std::runtime_error with the offending line number on malformed input.
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::filesystem::path& path);

/// Long format `i,j,coordinate,value`, all indices 1-based.
void write_trajectories_csv(std::ostream& out, const TrajectorySamples& samples);
/// {"master_seed", "seeds", "converged", "theta"} with theta[i][j] a vector.
nlohmann::json trajectories_to_json(const TrajectorySamples& samples);

/// Gram matrix, one row per line, no header.
void write_kernel_csv(std::ostream& out, const KernelMatrix& k);

}  // namespace mlest
