#include "nimf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "json.hpp"

namespace nimf {

void Dataset::validate() const {
  if (features.rows() < 1) throw std::invalid_argument("Dataset: no samples");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw std::invalid_argument("Dataset: label count does not match sample count");
  }
  if (num_classes < 1) throw std::invalid_argument("Dataset: num_classes must be >= 1");
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::invalid_argument("Dataset: label out of range");
  }
  if (!features.allFinite()) throw std::invalid_argument("Dataset: non-finite features");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= labels.size()) throw std::out_of_range("Dataset::subset: index out of range");
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(indices[r]));
    out.labels.push_back(labels[indices[r]]);
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

// --- IDX -----------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> buf, std::size_t offset, const char* what) {
  if (offset + 4 > buf.size()) throw DataFormatError(std::string("IDX ") + what + ": truncated header");
  return (static_cast<std::uint32_t>(buf[offset]) << 24) | (static_cast<std::uint32_t>(buf[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(buf[offset + 2]) << 8) | static_cast<std::uint32_t>(buf[offset + 3]);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataFormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  const std::uint32_t img_magic = read_be32(images, 0, "images");
  if (img_magic != 0x00000803) throw DataFormatError("IDX images: bad magic number");
  const std::uint32_t lbl_magic = read_be32(labels, 0, "labels");
  if (lbl_magic != 0x00000801) throw DataFormatError("IDX labels: bad magic number");

  const std::uint32_t n = read_be32(images, 4, "images");
  const std::uint32_t rows = read_be32(images, 8, "images");
  const std::uint32_t cols = read_be32(images, 12, "images");
  const std::uint32_t n_labels = read_be32(labels, 4, "labels");
  if (n != n_labels) throw DataFormatError("IDX: image count does not match label count");
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  if (images.size() != 16 + static_cast<std::size_t>(n) * pixels) {
    throw DataFormatError("IDX images: payload size does not match header");
  }
  if (labels.size() != 8 + static_cast<std::size_t>(n)) {
    throw DataFormatError("IDX labels: payload size does not match header");
  }

  Dataset ds;
  ds.features.resize(n, static_cast<Eigen::Index>(pixels));
  ds.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p) {
      ds.features(i, static_cast<Eigen::Index>(p)) = images[16 + i * pixels + p] / 255.0;
    }
    ds.labels[i] = labels[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  return ds;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  return parse_idx(read_file(images), read_file(labels));
}

Dataset synthetic_blobs(int num_classes, int dim, int per_class, double spread, std::uint64_t seed) {
  if (num_classes < 1 || dim < 1 || per_class < 1 || spread < 0.0) {
    throw std::invalid_argument("synthetic_blobs: invalid parameters");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix centres(num_classes, dim);
  for (Eigen::Index c = 0; c < centres.rows(); ++c)
    for (Eigen::Index k = 0; k < centres.cols(); ++k) centres(c, k) = gauss(rng);

  const std::size_t n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(per_class);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  Dataset ds;
  ds.num_classes = num_classes;
  ds.features.resize(static_cast<Eigen::Index>(n), dim);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i / static_cast<std::size_t>(per_class));
    const auto row = static_cast<Eigen::Index>(order[i]);
    for (Eigen::Index k = 0; k < dim; ++k) ds.features(row, k) = centres(c, k) + spread * gauss(rng);
    ds.labels[order[i]] = c;
  }
  return ds;
}

// --- Splits --------------------------------------------------------------------

std::vector<double> dirichlet_alphas(double alpha_min, double min_max_ratio, int n_models) {
  if (!(min_max_ratio > 0.0 && min_max_ratio <= 1.0)) {
    throw std::invalid_argument("dirichlet_split: min_max_ratio must be in (0, 1]");
  }
  if (!(alpha_min > 0.0)) throw std::invalid_argument("dirichlet_split: alpha_min must be > 0");
  if (n_models < 1) throw std::invalid_argument("dirichlet_split: n_models must be >= 1");
  const double alpha_max = alpha_min / min_max_ratio;
  std::vector<double> alphas(static_cast<std::size_t>(n_models));
  for (int k = 0; k < n_models; ++k) {
    alphas[static_cast<std::size_t>(k)] =
        n_models == 1 ? alpha_min : alpha_min + (alpha_max - alpha_min) * k / (n_models - 1);
  }
  return alphas;
}

namespace {

std::vector<std::size_t> largest_remainder(const std::vector<double>& proportions, std::size_t total) {
  const std::size_t n = proportions.size();
  std::vector<std::size_t> counts(n);
  std::vector<double> frac(n);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double exact = proportions[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    frac[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % n]];
  return counts;
}

int class_count_of(std::span<const int> labels) {
  int c = 0;
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("split: negative label");
    c = std::max(c, y + 1);
  }
  return c;
}

}  // namespace

SplitPlan dirichlet_split(std::span<const int> labels, int n_models, double alpha_min, double min_max_ratio,
                          std::uint64_t seed) {
  SplitPlan plan;
  plan.regime = SplitRegime::dirichlet;
  plan.seed = seed;
  plan.alphas = dirichlet_alphas(alpha_min, min_max_ratio, n_models);
  plan.parameters = {{"n_models", n_models}, {"alpha_min", alpha_min}, {"min_max_ratio", min_max_ratio}};
  plan.indices.assign(static_cast<std::size_t>(n_models), {});

  const int num_classes = class_count_of(labels);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  std::mt19937_64 rng(seed);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    std::vector<double> alphas = plan.alphas;
    std::shuffle(alphas.begin(), alphas.end(), rng);
    std::vector<double> p(alphas.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < alphas.size(); ++k) {
      std::gamma_distribution<double> g(alphas[k], 1.0);
      p[k] = g(rng);
      sum += p[k];
    }
    for (double& v : p) v = sum > 0.0 ? v / sum : 1.0 / static_cast<double>(p.size());
    const auto counts = largest_remainder(p, members.size());
    std::size_t offset = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      auto& dst = plan.indices[k];
      dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(offset),
                 members.begin() + static_cast<std::ptrdiff_t>(offset + counts[k]));
      offset += counts[k];
    }
  }
  for (auto& idx : plan.indices) std::sort(idx.begin(), idx.end());
  return plan;
}

SplitPlan sharded_split(std::span<const int> labels, int num_classes, int n_models, std::uint64_t seed) {
  if (n_models < 1) throw std::invalid_argument("sharded_split: n_models must be >= 1");
  if (n_models > num_classes) {
    throw std::invalid_argument("sharded_split: n_models (" + std::to_string(n_models) + ") exceeds class count (" +
                                std::to_string(num_classes) + ")");
  }
  SplitPlan plan;
  plan.regime = SplitRegime::sharded;
  plan.seed = seed;
  plan.parameters = {{"n_models", n_models}, {"num_classes", num_classes}};

  std::vector<int> classes(static_cast<std::size_t>(num_classes));
  std::iota(classes.begin(), classes.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(classes.begin(), classes.end(), rng);

  plan.class_sets.assign(static_cast<std::size_t>(n_models), {});
  const int base = num_classes / n_models;
  const int extra = num_classes % n_models;
  std::size_t pos = 0;
  std::vector<int> owner(static_cast<std::size_t>(num_classes), -1);
  for (int k = 0; k < n_models; ++k) {
    const int size = base + (k < extra ? 1 : 0);
    for (int i = 0; i < size; ++i, ++pos) {
      plan.class_sets[static_cast<std::size_t>(k)].push_back(classes[pos]);
      owner[static_cast<std::size_t>(classes[pos])] = k;
    }
    std::sort(plan.class_sets[static_cast<std::size_t>(k)].begin(), plan.class_sets[static_cast<std::size_t>(k)].end());
  }

  plan.indices.assign(static_cast<std::size_t>(n_models), {});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) throw std::invalid_argument("sharded_split: label out of range");
    plan.indices[static_cast<std::size_t>(owner[static_cast<std::size_t>(y)])].push_back(i);
  }
  return plan;
}

void check_split(const SplitPlan& plan, std::size_t n, bool must_cover) {
  std::vector<char> seen(n, 0);
  std::size_t total = 0;
  for (std::size_t k = 0; k < plan.indices.size(); ++k) {
    for (std::size_t i : plan.indices[k]) {
      if (i >= n) throw std::logic_error("split: index out of range in model " + std::to_string(k));
      if (seen[i]) throw std::logic_error("split: index " + std::to_string(i) + " assigned twice");
      seen[i] = 1;
      ++total;
    }
  }
  if (must_cover && total != n) throw std::logic_error("split: plan does not cover every index");
}

std::string split_to_json(const SplitPlan& plan) {
  nlohmann::json j;
  j["regime"] = plan.regime == SplitRegime::dirichlet ? "dirichlet" : "sharded";
  j["seed"] = plan.seed;
  j["parameters"] = plan.parameters;
  if (!plan.alphas.empty()) j["alphas"] = plan.alphas;
  if (!plan.class_sets.empty()) j["class_sets"] = plan.class_sets;
  j["indices"] = plan.indices;
  return j.dump(2);
}

SplitPlan split_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    SplitPlan plan;
    const std::string regime = j.at("regime").get<std::string>();
    if (regime == "dirichlet") {
      plan.regime = SplitRegime::dirichlet;
    } else if (regime == "sharded") {
      plan.regime = SplitRegime::sharded;
    } else {
      throw std::invalid_argument("unknown split regime '" + regime + "'");
    }
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.parameters = j.at("parameters").get<std::map<std::string, double>>();
    if (j.contains("alphas")) plan.alphas = j["alphas"].get<std::vector<double>>();
    if (j.contains("class_sets")) plan.class_sets = j["class_sets"].get<std::vector<std::vector<int>>>();
    plan.indices = j.at("indices").get<std::vector<std::vector<std::size_t>>>();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError(std::string("split plan JSON: ") + e.what());
  }
}

}  // namespace nimf
