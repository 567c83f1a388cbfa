#include "mlest/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>
#include <vector>

namespace mlest {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc{}) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << 'x' << (j + 1) << ',';
  out << "y\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << format_double(data.features()(i, j)) << ',';
    out << format_double(data.targets()[i]) << '\n';
  }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_dataset_csv(out, data);
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_cell(const std::string& cell, std::size_t line_no) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  while (first < last && (*first == ' ' || *first == '+')) ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\r')) --last;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw std::runtime_error("dataset csv line " + std::to_string(line_no) + ": bad number '" +
                             cell + "'");
  }
  return v;
}

}  // namespace

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 2 || header.back() != "y") {
    throw std::runtime_error("dataset csv: header must be x1,...,xd,y");
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "x" + std::to_string(j + 1)) {
      throw std::runtime_error("dataset csv: unexpected header column '" + header[j] + "'");
    }
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != d + 1) {
      throw std::runtime_error("dataset csv line " + std::to_string(line_no) + ": expected " +
                               std::to_string(d + 1) + " columns");
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_cell(c, line_no));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("dataset csv: no data rows");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    y[static_cast<Eigen::Index>(i)] = rows[i][d];
  }
  return Dataset(std::move(x), std::move(y));
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_dataset_csv(in);
}

void write_trajectories_csv(std::ostream& out, const TrajectorySamples& samples) {
  out << "i,j,coordinate,value\n";
  for (Eigen::Index i = 0; i < samples.n(); ++i) {
    const Eigen::MatrixXd& t = samples.theta[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      for (Eigen::Index c = 0; c < t.rows(); ++c) {
        out << i + 1 << ',' << j + 1 << ',' << c + 1 << ',' << format_double(t(c, j)) << '\n';
      }
    }
  }
}

nlohmann::json trajectories_to_json(const TrajectorySamples& samples) {
  nlohmann::json theta = nlohmann::json::array();
  for (const auto& t : samples.theta) {
    nlohmann::json prefix = nlohmann::json::array();
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      prefix.push_back(std::vector<double>(t.col(j).data(), t.col(j).data() + t.rows()));
    }
    theta.push_back(std::move(prefix));
  }
  nlohmann::json converged = nlohmann::json::array();
  for (const auto& row : samples.converged) converged.push_back(row);
  return {{"master_seed", samples.master_seed},
          {"seeds", samples.seeds},
          {"converged", converged},
          {"theta", theta}};
}

void write_kernel_csv(std::ostream& out, const KernelMatrix& k) {
  for (Eigen::Index r = 0; r < k.gram.rows(); ++r) {
    for (Eigen::Index c = 0; c < k.gram.cols(); ++c) {
      if (c > 0) out << ',';
      out << format_double(k.gram(r, c));
    }
    out << '\n';
  }
}

}  // namespace mlest
