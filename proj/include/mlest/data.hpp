#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlest/blr.hpp"

namespace mlest {

// ---------------------------------------------------------------------------
// Synthetic feature-dimension data: y ~ U[0, 1]; the first k features are
// N(y, sigma0^2), the remaining d - k are N(0, sigma1^2). sigma0/sigma1 are
// standard deviations.

struct FeatureSelectionConfig {
  int n = 30;
  int d_total = 30;
  int k_informative = 15;  // clamped to d_total
  double sigma0 = 1.0;
  double sigma1 = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

Dataset gen_feature_selection(const FeatureSelectionConfig& cfg);

/// First k coordinates of x. Throws std::out_of_range unless 1 <= k <= x.size().
Eigen::VectorXd prefix_feature_map(const Eigen::VectorXd& x, int k);
Dataset prefix_features(const Dataset& data, int k);

// ---------------------------------------------------------------------------
// Random Fourier features for the RBF kernel exp(-f^2 ||x - x'||^2 / 2):
// omega ~ N(0, f^2 I), b ~ U[0, 2 pi), phi(x) = sqrt(2/m) cos(omega^T x + b).
// `frequency` is the inverse lengthscale. omega is drawn as f * z with z
// standard normal, so one seed shares z across a frequency grid.

struct RffConfig {
  int num_features = 100;
  double frequency = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

Eigen::MatrixXd rff_embed(const Eigen::MatrixXd& inputs, const RffConfig& cfg);

// ---------------------------------------------------------------------------
// IDX (MNIST container) files: big-endian u32 magic, u32 dimension sizes,
// then unsigned bytes. Images use magic 2051 (0x00000803) with three
// dimensions, labels magic 2049 (0x00000801) with one.

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

class IdxFormatError : public std::runtime_error {
 public:
  explicit IdxFormatError(const std::string& what) : std::runtime_error(what) {}
};

struct MnistData {
  Eigen::MatrixXd images;  // count x (rows*cols), pixels scaled to [0, 1]
  std::vector<std::uint8_t> labels;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
};

MnistData load_mnist_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);

void write_idx_images(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t cols,
                      const std::vector<std::uint8_t>& pixels);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// Keeps images labelled `negative` or `positive`, with targets 0.0 / 1.0.
/// `max_points` > 0 truncates after filtering, preserving file order.
Dataset binary_digit_dataset(const MnistData& data, int negative = 0, int positive = 1,
                             int max_points = 0);

// ---------------------------------------------------------------------------
// Model families for the selection experiments. Each candidate carries its
// own (already feature-mapped) dataset; targets are shared.

struct ModelCandidate {
  std::string id;
  double grid_value = 0.0;  // feature count, prior variance, or frequency
  BlrModel model;
  Dataset data;
};

struct SelectionTask {
  std::string name;
  std::vector<ModelCandidate> models;

  const Eigen::VectorXd& targets() const { return models.front().data.targets(); }
};

struct FeatureTaskOptions {
  FeatureSelectionConfig data;
  int d_min = 5;
  int d_max = 30;
  double prior_variance = 0.001;
  double noise_variance = 0.5;
};

SelectionTask feature_selection_task(const FeatureTaskOptions& opts);

struct PriorVarianceTaskOptions {
  int n = 40;
  int d = 8;
  double true_sigma = 1.0;       // weights ~ N(0, true_sigma^2 I)
  double noise_variance = 0.1;   // target noise, also the models' sN^2
  std::vector<double> grid = {0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0};
  std::uint64_t seed = 0;
};

SelectionTask gen_prior_variance_task(const PriorVarianceTaskOptions& opts);

struct RffTaskOptions {
  std::vector<double> frequencies = {0.05, 0.1, 0.2, 0.4, 0.8, 1.6};
  int num_features = 100;
  double prior_variance = 1.0;
  double noise_variance = 0.1;
  std::uint64_t seed = 0;
};

/// Inputs and 0/1 targets come from `base` (e.g. binary_digit_dataset).
SelectionTask rff_selection_task(const Dataset& base, const RffTaskOptions& opts);

}  // namespace mlest
