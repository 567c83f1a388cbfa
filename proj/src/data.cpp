#include "mlest/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "mlest/csv.hpp"
#include "mlest/rng.hpp"

namespace mlest {

void FeatureSelectionConfig::validate() const {
  if (n < 1) throw std::invalid_argument("feature selection: n must be >= 1");
  if (d_total < 1) throw std::invalid_argument("feature selection: d_total must be >= 1");
  if (k_informative < 0) throw std::invalid_argument("feature selection: k_informative < 0");
  if (!(sigma0 >= 0.0) || !(sigma1 >= 0.0) || !std::isfinite(sigma0) || !std::isfinite(sigma1)) {
    throw std::invalid_argument("feature selection: sigmas must be finite and >= 0");
  }
}

Dataset gen_feature_selection(const FeatureSelectionConfig& cfg) {
  cfg.validate();
  const int k = std::min(cfg.k_informative, cfg.d_total);
  Rng rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::MatrixXd x(cfg.n, cfg.d_total);
  Eigen::VectorXd y(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    y(i) = unif(rng);
    for (int j = 0; j < cfg.d_total; ++j) {
      const double z = normal(rng);
      x(i, j) = j < k ? y(i) + cfg.sigma0 * z : cfg.sigma1 * z;
    }
  }
  return Dataset(std::move(x), std::move(y));
}

Eigen::VectorXd prefix_feature_map(const Eigen::VectorXd& x, int k) {
  if (k < 1 || k > x.size()) {
    throw std::out_of_range("prefix_feature_map: k=" + std::to_string(k) +
                            " outside [1, " + std::to_string(x.size()) + "]");
  }
  return x.head(k);
}

Dataset prefix_features(const Dataset& data, int k) {
  if (k < 1 || k > data.dim()) {
    throw std::out_of_range("prefix_features: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(data.dim()) + "]");
  }
  return data.with_features(data.features().leftCols(k));
}

void RffConfig::validate() const {
  if (num_features < 1) throw std::invalid_argument("rff: num_features must be >= 1");
  if (!(frequency >= 0.0) || !std::isfinite(frequency)) {
    throw std::invalid_argument("rff: frequency must be finite and >= 0");
  }
}

Eigen::MatrixXd rff_embed(const Eigen::MatrixXd& inputs, const RffConfig& cfg) {
  cfg.validate();
  const Eigen::Index m = cfg.num_features;
  const Eigen::Index d = inputs.cols();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);

  Eigen::MatrixXd omega(d, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index c = 0; c < d; ++c) omega(c, j) = cfg.frequency * normal(rng);
  }
  Eigen::RowVectorXd b(m);
  for (Eigen::Index j = 0; j < m; ++j) b(j) = phase(rng);

  Eigen::MatrixXd proj = inputs * omega;
  proj.rowwise() += b;
  return std::sqrt(2.0 / static_cast<double>(m)) * proj.array().cos().matrix();
}

// --- IDX -------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxFormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (buf.size() < offset + 4) throw IdxFormatError(path.string() + ": truncated header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes.data(), 4);
}

void check_length(const std::vector<std::uint8_t>& buf, std::size_t header, std::uint64_t payload,
                  const std::filesystem::path& path) {
  const std::uint64_t expected = header + payload;
  if (buf.size() != expected) {
    std::ostringstream msg;
    msg << path.string() << ": declared size " << expected << " bytes, file has " << buf.size();
    throw IdxFormatError(msg.str());
  }
}

}  // namespace

MnistData load_mnist_idx(const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path) {
  const auto img = read_all(images_path);
  const auto lab = read_all(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != kIdxImagesMagic) {
    throw IdxFormatError(images_path.string() + ": bad magic " + std::to_string(img_magic));
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelsMagic) {
    throw IdxFormatError(labels_path.string() + ": bad magic " + std::to_string(lab_magic));
  }

  const std::uint32_t count = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::uint32_t label_count = read_be32(lab, 4, labels_path);
  const std::uint64_t pixels = std::uint64_t{rows} * cols;
  check_length(img, 16, std::uint64_t{count} * pixels, images_path);
  check_length(lab, 8, label_count, labels_path);
  if (count != label_count) {
    throw IdxFormatError("image count " + std::to_string(count) + " != label count " +
                         std::to_string(label_count));
  }

  MnistData out;
  out.rows = rows;
  out.cols = cols;
  out.images.resize(count, static_cast<Eigen::Index>(pixels));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* src = img.data() + 16 + std::size_t{i} * pixels;
    for (std::uint64_t p = 0; p < pixels; ++p) {
      out.images(i, static_cast<Eigen::Index>(p)) = src[p] / 255.0;
    }
  }
  out.labels.assign(lab.begin() + 8, lab.end());
  return out;
}

void write_idx_images(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t cols,
                      const std::vector<std::uint8_t>& pixels) {
  const std::uint64_t per = std::uint64_t{rows} * cols;
  if (per == 0 || pixels.size() % per != 0) {
    throw std::invalid_argument("write_idx_images: pixel buffer not a multiple of rows*cols");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxFormatError("cannot write " + path.string());
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(pixels.size() / per));
  put_be32(out, rows);
  put_be32(out, cols);
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxFormatError("cannot write " + path.string());
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

Dataset binary_digit_dataset(const MnistData& data, int negative, int positive, int max_points) {
  std::vector<Eigen::Index> keep;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const int label = data.labels[i];
    if (label == negative || label == positive) keep.push_back(static_cast<Eigen::Index>(i));
    if (max_points > 0 && static_cast<int>(keep.size()) == max_points) break;
  }
  if (keep.empty()) throw std::invalid_argument("binary_digit_dataset: no matching labels");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(keep.size()), data.images.cols());
  Eigen::VectorXd y(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    x.row(r) = data.images.row(keep[r]);
    y(r) = data.labels[keep[r]] == positive ? 1.0 : 0.0;
  }
  return Dataset(std::move(x), std::move(y));
}

// --- selection tasks ----------------------------------------------------------

namespace {

std::string padded(int v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, width - s.size(), '0');
  return s;
}

}  // namespace

SelectionTask feature_selection_task(const FeatureTaskOptions& opts) {
  if (opts.d_min < 1 || opts.d_max < opts.d_min || opts.d_max > opts.data.d_total) {
    throw std::invalid_argument("feature_selection_task: bad dimension range");
  }
  const Dataset full = gen_feature_selection(opts.data);
  SelectionTask task{"select-features", {}};
  for (int d = opts.d_min; d <= opts.d_max; ++d) {
    const std::string id = "prefix_d" + padded(d, 2);
    task.models.push_back({id, static_cast<double>(d),
                           BlrModel::zero_mean(d, opts.prior_variance, opts.noise_variance,
                                               "prefix-" + std::to_string(d)),
                           prefix_features(full, d)});
  }
  return task;
}

SelectionTask gen_prior_variance_task(const PriorVarianceTaskOptions& opts) {
  if (opts.n < 1 || opts.d < 1 || !(opts.true_sigma > 0.0) || !(opts.noise_variance > 0.0)) {
    throw std::invalid_argument("prior variance task: parameters must be positive");
  }
  if (opts.grid.empty()) throw std::invalid_argument("prior variance task: empty grid");
  Rng rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd w(opts.d);
  for (int j = 0; j < opts.d; ++j) w(j) = opts.true_sigma * normal(rng);
  Eigen::MatrixXd x(opts.n, opts.d);
  for (int i = 0; i < opts.n; ++i) {
    for (int j = 0; j < opts.d; ++j) x(i, j) = normal(rng);
  }
  Eigen::VectorXd y = x * w;
  const double noise_sd = std::sqrt(opts.noise_variance);
  for (int i = 0; i < opts.n; ++i) y(i) += noise_sd * normal(rng);

  const Dataset data(std::move(x), std::move(y));
  SelectionTask task{"select-prior", {}};
  for (std::size_t g = 0; g < opts.grid.size(); ++g) {
    const double pv = opts.grid[g];
    if (!(pv > 0.0)) throw std::invalid_argument("prior variance task: grid values must be > 0");
    task.models.push_back({"prior_var_" + format_double(pv), pv,
                           BlrModel::zero_mean(opts.d, pv, opts.noise_variance), data});
  }
  return task;
}

SelectionTask rff_selection_task(const Dataset& base, const RffTaskOptions& opts) {
  if (opts.frequencies.empty()) throw std::invalid_argument("rff task: empty frequency grid");
  SelectionTask task{"select-rff", {}};
  for (double f : opts.frequencies) {
    const RffConfig cfg{opts.num_features, f, opts.seed};
    task.models.push_back({"rff_freq_" + format_double(f), f,
                           BlrModel::zero_mean(opts.num_features, opts.prior_variance,
                                               opts.noise_variance,
                                               "rff-" + format_double(f)),
                           base.with_features(rff_embed(base.features(), cfg))});
  }
  return task;
}

}  // namespace mlest
