#include "nimf/network.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

namespace nimf {

const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::identity:
      return "identity";
  }
  return "unknown";
}

// --- Model -------------------------------------------------------------------

Model::Model(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("Model: at least one layer is required");
  if (!is_affine(layers_.back())) throw std::invalid_argument("Model: final layer must be affine");

  Eigen::Index width = -1;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (const auto* a = std::get_if<AffineLayer>(&layers_[i])) {
      if (a->bias.size() != a->out_dim()) {
        throw std::invalid_argument("Model: layer " + std::to_string(i) + " bias length " +
                                    std::to_string(a->bias.size()) + " != out " + std::to_string(a->out_dim()));
      }
      if (a->out_dim() == 0 || a->in_dim() == 0) {
        throw std::invalid_argument("Model: layer " + std::to_string(i) + " has an empty weight matrix");
      }
      if (width >= 0 && a->in_dim() != width) {
        throw std::invalid_argument("Model: layer " + std::to_string(i) + " expects input width " +
                                    std::to_string(a->in_dim()) + " but receives " + std::to_string(width));
      }
      if (!a->weight.allFinite() || !a->bias.allFinite()) {
        throw std::invalid_argument("Model: layer " + std::to_string(i) + " has non-finite parameters");
      }
      if (width < 0) input_dim_ = a->in_dim();
      width = a->out_dim();
    }
  }
  output_dim_ = width;
}

Eigen::Index Model::layer_width(std::size_t index) const {
  if (index >= layers_.size()) throw std::out_of_range("Model::layer_width: index out of range");
  for (std::size_t i = index + 1; i-- > 0;) {
    if (const auto* a = std::get_if<AffineLayer>(&layers_[i])) return a->out_dim();
  }
  return input_dim_;
}

const AffineLayer& Model::affine(std::size_t index) const {
  const auto* a = std::get_if<AffineLayer>(&layers_.at(index));
  if (a == nullptr) throw std::invalid_argument("Model::affine: layer " + std::to_string(index) + " is not affine");
  return *a;
}

AffineParams Model::affine_params(std::size_t index) {
  auto* a = std::get_if<AffineLayer>(&layers_.at(index));
  if (a == nullptr) {
    throw std::invalid_argument("Model::affine_params: layer " + std::to_string(index) + " is not affine");
  }
  return {Eigen::Map<Matrix>(a->weight.data(), a->weight.rows(), a->weight.cols()),
          Eigen::Map<Vector>(a->bias.data(), a->bias.size())};
}

std::vector<std::size_t> Model::affine_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (is_affine(layers_[i])) out.push_back(i);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i : affine_indices()) {
    const auto& a = affine(i);
    n += static_cast<std::size_t>(a.weight.size() + a.bias.size());
  }
  return n;
}

bool same_architecture(const Model& a, const Model& b) {
  if (a.layer_count() != b.layer_count()) return false;
  for (std::size_t i = 0; i < a.layer_count(); ++i) {
    const Layer& la = a.layers()[i];
    const Layer& lb = b.layers()[i];
    if (la.index() != lb.index()) return false;
    if (const auto* aa = std::get_if<AffineLayer>(&la)) {
      const auto& ab = std::get<AffineLayer>(lb);
      if (aa->out_dim() != ab.out_dim() || aa->in_dim() != ab.in_dim()) return false;
    } else if (std::get<ActivationLayer>(la).fn != std::get<ActivationLayer>(lb).fn) {
      return false;
    }
  }
  return true;
}

// --- Partition ---------------------------------------------------------------

std::pair<std::size_t, std::size_t> Partition::level_range(std::size_t level) const {
  if (level >= boundaries.size()) throw std::out_of_range("Partition::level_range: level out of range");
  const std::size_t first = level == 0 ? 0 : boundaries[level - 1] + 1;
  return {first, boundaries[level] + 1};
}

void validate_partition(const Model& m, const Partition& p) {
  if (p.boundaries.empty()) throw std::invalid_argument("Partition: no boundaries");
  for (std::size_t i = 0; i < p.boundaries.size(); ++i) {
    if (p.boundaries[i] >= m.layer_count()) {
      throw std::invalid_argument("Partition: boundary " + std::to_string(p.boundaries[i]) + " out of range");
    }
    if (i > 0 && p.boundaries[i] <= p.boundaries[i - 1]) {
      throw std::invalid_argument("Partition: boundaries must be strictly increasing");
    }
  }
  if (p.boundaries.back() != m.layer_count() - 1) {
    throw std::invalid_argument("Partition: last boundary must be the final layer");
  }
}

Partition preactivation_partition(const Model& m) { return Partition{m.affine_indices()}; }

Partition postactivation_partition(const Model& m) {
  Partition p;
  const auto& layers = m.layers();
  for (std::size_t i : m.affine_indices()) {
    std::size_t b = i;
    while (b + 1 < layers.size() && !is_affine(layers[b + 1])) ++b;
    if (i == m.layer_count() - 1 || b == m.layer_count() - 1) b = i;
    p.boundaries.push_back(b);
  }
  p.boundaries.back() = m.layer_count() - 1;
  return p;
}

bool is_preactivation_partition(const Model& m, const Partition& p) {
  for (std::size_t b : p.boundaries) {
    if (b >= m.layer_count() || !is_affine(m.layers()[b])) return false;
  }
  return true;
}

// --- Forward -----------------------------------------------------------------

Matrix apply_layer(const Layer& layer, const Matrix& input) {
  if (const auto* a = std::get_if<AffineLayer>(&layer)) {
    if (input.cols() != a->in_dim()) {
      throw std::invalid_argument("affine layer expects " + std::to_string(a->in_dim()) + " inputs, got " +
                                  std::to_string(input.cols()));
    }
    Matrix out = input * a->weight.transpose();
    out.rowwise() += a->bias.transpose();
    return out;
  }
  switch (std::get<ActivationLayer>(layer).fn) {
    case Activation::relu:
      return input.cwiseMax(0.0);
    case Activation::identity:
      return input;
  }
  throw std::invalid_argument("unknown activation");
}

std::vector<Matrix> forward_trace(std::span<const Layer> layers, const Matrix& x) {
  std::vector<Matrix> outs;
  outs.reserve(layers.size());
  const Matrix* current = &x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    try {
      outs.push_back(apply_layer(layers[i], *current));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("layer " + std::to_string(i) + ": " + e.what());
    }
    current = &outs.back();
  }
  return outs;
}

Matrix forward(const Model& model, const Matrix& x) {
  Matrix current = x;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    try {
      current = apply_layer(model.layers()[i], current);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("layer " + std::to_string(i) + ": " + e.what());
    }
  }
  return current;
}

ActivationBundle forward_collect(const Model& model, const Matrix& x, const Partition& partition, int model_id) {
  validate_partition(model, partition);
  require_finite(x, "forward_collect input");
  const auto trace = forward_trace(model.layers(), x);
  ActivationBundle bundle;
  bundle.model_id = model_id;
  bundle.levels.reserve(partition.level_count());
  for (std::size_t b : partition.boundaries) bundle.levels.push_back(trace[b]);
  return bundle;
}

// --- Backward ----------------------------------------------------------------

Gradients backward_layers(std::span<const Layer> layers, const Matrix& x, const Matrix& upstream) {
  const auto trace = forward_trace(layers, x);
  if (trace.empty()) throw std::invalid_argument("backward: no layers");
  const Matrix& out = trace.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw std::invalid_argument("backward: upstream " + shape_string(upstream) + " does not match output " +
                                shape_string(out));
  }

  Gradients g;
  g.params.resize(layers.size());
  g.layer_outputs.resize(layers.size());
  Matrix grad = upstream;
  for (std::size_t i = layers.size(); i-- > 0;) {
    g.layer_outputs[i] = grad;
    const Matrix& in = i == 0 ? x : trace[i - 1];
    if (const auto* a = std::get_if<AffineLayer>(&layers[i])) {
      g.params[i] = AffineGrad{grad.transpose() * in, grad.colwise().sum().transpose()};
      grad = grad * a->weight;
    } else if (std::get<ActivationLayer>(layers[i]).fn == Activation::relu) {
      grad = grad.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
    }
  }
  g.input = std::move(grad);
  return g;
}

Gradients backward(const Model& model, const Matrix& x, const Matrix& upstream) {
  if (x.cols() != model.input_dim()) {
    throw std::invalid_argument("backward: input width " + std::to_string(x.cols()) + " != model input " +
                                std::to_string(model.input_dim()));
  }
  return backward_layers(model.layers(), x, upstream);
}

// --- Construction helpers ----------------------------------------------------

Model make_mlp(Eigen::Index input_dim, std::span<const Eigen::Index> hidden, Eigen::Index output_dim,
               std::uint64_t seed, Activation activation) {
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  Eigen::Index in = input_dim;
  auto add_affine = [&](Eigen::Index out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    AffineLayer a{Matrix(out, in), Vector(out)};
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) a.weight(r, c) = u(rng);
    for (Eigen::Index r = 0; r < out; ++r) a.bias(r) = u(rng);
    layers.emplace_back(std::move(a));
    in = out;
  };
  for (Eigen::Index h : hidden) {
    add_affine(h);
    layers.emplace_back(ActivationLayer{activation});
  }
  add_affine(output_dim);
  return Model(std::move(layers));
}

Model interpolate(const Model& a, const Model& b, double lambda) {
  if (!same_architecture(a, b)) throw std::invalid_argument("interpolate: architecture mismatch");
  std::vector<Layer> layers = a.layers();
  for (std::size_t i : a.affine_indices()) {
    auto& la = std::get<AffineLayer>(layers[i]);
    const auto& lb = b.affine(i);
    la.weight = (1.0 - lambda) * la.weight + lambda * lb.weight;
    la.bias = (1.0 - lambda) * la.bias + lambda * lb.bias;
  }
  return Model(std::move(layers));
}

// --- Serialization -----------------------------------------------------------

namespace {

constexpr std::uint8_t kMagic[4] = {'N', 'I', 'M', 'F'};

class Writer {
 public:
  void bytes(const std::uint8_t* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint64_t le(std::size_t n, const char* what) {
    if (pos_ + n > in_.size()) {
      throw ModelFormatError(ModelFormatError::Kind::truncated,
                             std::string("model file truncated while reading ") + what + " at byte " +
                                 std::to_string(pos_));
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(le(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  double f64(const char* what) { return std::bit_cast<double>(le(8, what)); }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Model& model, const Partition& partition) {
  validate_partition(model, partition);
  if (model.layer_count() > 0xFFFF) throw std::invalid_argument("serialize: too many layers");
  Writer w;
  w.bytes(kMagic, 4);
  w.u16(kModelFormatVersion);
  w.u16(static_cast<std::uint16_t>(model.layer_count()));
  for (const Layer& layer : model.layers()) {
    if (const auto* a = std::get_if<AffineLayer>(&layer)) {
      w.u8(0);
      w.u32(static_cast<std::uint32_t>(a->out_dim()));
      w.u32(static_cast<std::uint32_t>(a->in_dim()));
      for (Eigen::Index r = 0; r < a->out_dim(); ++r)
        for (Eigen::Index c = 0; c < a->in_dim(); ++c) w.f64(a->weight(r, c));
      for (Eigen::Index r = 0; r < a->out_dim(); ++r) w.f64(a->bias(r));
    } else {
      w.u8(1);
      w.u8(static_cast<std::uint8_t>(std::get<ActivationLayer>(layer).fn));
    }
  }
  w.u16(static_cast<std::uint16_t>(partition.boundaries.size()));
  for (std::size_t b : partition.boundaries) w.u16(static_cast<std::uint16_t>(b));
  return w.take();
}

StoredModel deserialize(std::span<const std::uint8_t> bytes) {
  using Kind = ModelFormatError::Kind;
  if (bytes.size() < 4) throw ModelFormatError(Kind::truncated, "model file truncated before magic bytes");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ModelFormatError(Kind::bad_magic, "bad magic: not a NIMF file");
  Reader r(bytes.subspan(4));
  const std::uint16_t version = r.u16("version");
  if (version != kModelFormatVersion) {
    throw ModelFormatError(Kind::version_mismatch, "unsupported NIMF version " + std::to_string(version));
  }
  const std::uint16_t count = r.u16("layer count");
  std::vector<Layer> layers;
  layers.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    const std::uint8_t kind = r.u8("layer kind");
    if (kind == 0) {
      const std::uint32_t out = r.u32("affine out");
      const std::uint32_t in = r.u32("affine in");
      const std::size_t needed = (static_cast<std::size_t>(out) * in + out) * 8;
      if (needed > r.remaining()) {
        throw ModelFormatError(Kind::truncated, "model file truncated inside affine layer " + std::to_string(i));
      }
      AffineLayer a{Matrix(out, in), Vector(out)};
      for (std::uint32_t row = 0; row < out; ++row)
        for (std::uint32_t col = 0; col < in; ++col) a.weight(row, col) = r.f64("weight");
      for (std::uint32_t row = 0; row < out; ++row) a.bias(row) = r.f64("bias");
      layers.emplace_back(std::move(a));
    } else if (kind == 1) {
      const std::uint8_t tag = r.u8("activation tag");
      if (tag > 1) throw ModelFormatError(Kind::malformed, "unknown activation tag " + std::to_string(tag));
      layers.emplace_back(ActivationLayer{static_cast<Activation>(tag)});
    } else {
      throw ModelFormatError(Kind::malformed, "unknown layer kind " + std::to_string(kind));
    }
  }
  Partition partition;
  const std::uint16_t nb = r.u16("partition count");
  for (std::uint16_t i = 0; i < nb; ++i) partition.boundaries.push_back(r.u16("partition boundary"));
  if (r.remaining() != 0) {
    throw ModelFormatError(Kind::malformed, "trailing bytes after partition at offset " + std::to_string(r.position() + 4));
  }
  try {
    Model model(std::move(layers));
    validate_partition(model, partition);
    return StoredModel{std::move(model), std::move(partition)};
  } catch (const std::invalid_argument& e) {
    throw ModelFormatError(Kind::malformed, std::string("invalid model: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const Model& model, const Partition& partition) {
  const auto bytes = serialize(model, partition);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

StoredModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace nimf
