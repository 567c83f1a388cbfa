#pragma once

// Gradient inner products of one randomly initialized finite-width ReLU
// network, in the same parameterization as mlest/ntk.hpp:
//   Theta_m(x, x') = sum over layers l of
//       (s_w^2 / fan_in_l) <delta_l, delta_l'> <a_(l-1), a_(l-1)'> + s_b^2 <delta_l, delta_l'>
// where delta_l is the backpropagated derivative of f w.r.t. the layer-l
// pre-activation. Supports depth 1 and 2. The width x width matrix of a
// depth-2 network is generated in row blocks and never stored.

#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mlest/ntk.hpp"
#include "mlest/rng.hpp"

namespace mlest::testing {

inline Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = z(rng);
  }
  return m;
}

/// inputs: d x P (one input per column). Returns the P x P matrix Theta_m.
inline Eigen::MatrixXd finite_width_ntk(const NtkSpec& spec, const Eigen::MatrixXd& inputs,
                                        int width, std::uint64_t seed) {
  if (spec.depth < 1 || spec.depth > 2) throw std::invalid_argument("depth 1 or 2 only");
  const double sw = std::sqrt(spec.weight_variance);
  const double sb = std::sqrt(spec.bias_variance);
  const double d = static_cast<double>(inputs.rows());
  const double m = static_cast<double>(width);
  Rng rng(seed);

  const Eigen::MatrixXd w1 = normal_matrix(rng, width, inputs.rows());
  const Eigen::VectorXd b1 = normal_matrix(rng, width, 1);
  Eigen::MatrixXd h1 = (sw / std::sqrt(d)) * (w1 * inputs);
  h1.colwise() += sb * b1;
  const Eigen::MatrixXd a1 = h1.cwiseMax(0.0);
  const Eigen::MatrixXd mask1 = (h1.array() > 0.0).cast<double>().matrix();
  const Eigen::MatrixXd gx = inputs.transpose() * inputs;
  const Eigen::MatrixXd ga1 = a1.transpose() * a1;

  Eigen::MatrixXd theta;
  if (spec.depth == 1) {
    const Eigen::VectorXd w2 = normal_matrix(rng, width, 1);
    const Eigen::MatrixXd delta1 = mask1.array().colwise() * ((sw / std::sqrt(m)) * w2).array();
    const Eigen::MatrixXd gd1 = delta1.transpose() * delta1;
    theta = (spec.weight_variance / m) * ga1;
    theta.array() += spec.bias_variance;
    theta += (spec.weight_variance / d) * gd1.cwiseProduct(gx) + spec.bias_variance * gd1;
    return theta;
  }

  const Eigen::VectorXd w3 = normal_matrix(rng, width, 1);
  const Eigen::VectorXd b2 = normal_matrix(rng, width, 1);
  const Eigen::Index p = inputs.cols();
  Eigen::MatrixXd ga2 = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd gd2 = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd back = Eigen::MatrixXd::Zero(width, p);  // W2^T delta2
  const Eigen::Index block = 256;
  for (Eigen::Index r0 = 0; r0 < width; r0 += block) {
    const Eigen::Index rows = std::min<Eigen::Index>(block, width - r0);
    const Eigen::MatrixXd wb = normal_matrix(rng, rows, width);
    Eigen::MatrixXd h2 = (sw / std::sqrt(m)) * (wb * a1);
    h2.colwise() += sb * b2.segment(r0, rows);
    const Eigen::MatrixXd a2 = h2.cwiseMax(0.0);
    const Eigen::MatrixXd delta2 = (h2.array() > 0.0).cast<double>().colwise() *
                                   ((sw / std::sqrt(m)) * w3.segment(r0, rows)).array();
    ga2 += a2.transpose() * a2;
    gd2 += delta2.transpose() * delta2;
    back += wb.transpose() * delta2;
  }
  const Eigen::MatrixXd delta1 = mask1.cwiseProduct((sw / std::sqrt(m)) * back);
  const Eigen::MatrixXd gd1 = delta1.transpose() * delta1;
  theta = (spec.weight_variance / m) * ga2;
  theta.array() += spec.bias_variance;
  theta += (spec.weight_variance / m) * gd2.cwiseProduct(ga1) + spec.bias_variance * gd2;
  theta += (spec.weight_variance / d) * gd1.cwiseProduct(gx) + spec.bias_variance * gd1;
  return theta;
}

}  // namespace mlest::testing
