#include "healnet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "graph.hpp"
#include "healnet/error.hpp"
#include "healnet/ops.hpp"

namespace healnet::nn {

using detail::BackwardFn;
using detail::impl_of;
using detail::TensorImpl;

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void zero_grads(ParameterList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

ParameterSnapshot snapshot(const ParameterList& params) {
  ParameterSnapshot out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void restore(ParameterList& params, const ParameterSnapshot& values) {
  if (values.size() != params.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_data();
    if (dst.size() != values[i].size()) throw ShapeError("restore: size mismatch for " + params[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Dense: return "dense";
    case LayerKind::Pool: return "pool";
    case LayerKind::Activation: return "activation";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::DenseBlock: return "dense_block";
    case LayerKind::GlobalPool: return "global_pool";
  }
  return "unknown";
}

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = (static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0) * limit;
  return Tensor(std::move(shape), std::move(values), true);
}

}  // namespace

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding, std::mt19937_64& rng)
    : name_(std::move(name)),
      weight_(he_uniform({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
      bias_(Shape{out_channels}, true),
      stride_(stride),
      padding_(padding) {}

Tensor Conv2d::forward(const Tensor& x) const { return ops::conv2d(x, weight_, bias_, {stride_, padding_}); }

void Conv2d::collect(ParameterList& out) const {
  out.push_back({name_ + ".weight", weight_});
  out.push_back({name_ + ".bias", bias_});
}

Dense::Dense(std::string name, std::size_t in_features, std::size_t out_features, std::mt19937_64& rng)
    : name_(std::move(name)),
      weight_(he_uniform({in_features, out_features}, in_features, rng)),
      bias_(Shape{out_features}, true) {}

Tensor Dense::forward(const Tensor& x) const { return ops::add(ops::matmul(x, weight_), bias_); }

void Dense::collect(ParameterList& out) const {
  out.push_back({name_ + ".weight", weight_});
  out.push_back({name_ + ".bias", bias_});
}

DenseBlock::DenseBlock(std::string name, std::size_t in_channels, std::size_t layers, std::size_t growth,
                       std::mt19937_64& rng)
    : out_channels_(in_channels + layers * growth) {
  for (std::size_t i = 0; i < layers; ++i) {
    layers_.emplace_back(name + ".layer" + std::to_string(i), in_channels + i * growth, growth, 3, 1, 1, rng);
  }
}

Tensor DenseBlock::forward(const Tensor& x) const {
  Tensor features = x;
  for (const auto& layer : layers_) {
    const Tensor parts[] = {features, ops::relu(layer.forward(features))};
    features = ops::concat(parts, 1);
  }
  return features;
}

void DenseBlock::collect(ParameterList& out) const {
  for (const auto& layer : layers_) layer.collect(out);
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> EncoderConfig::to_meta() const {
  return {{"encoder.input_side", std::to_string(input_side)},
          {"encoder.input_channels", std::to_string(input_channels)},
          {"encoder.stem_channels", std::to_string(stem_channels)},
          {"encoder.dense_blocks", std::to_string(dense_blocks)},
          {"encoder.layers_per_block", std::to_string(layers_per_block)},
          {"encoder.growth_rate", std::to_string(growth_rate)}};
}

EncoderConfig EncoderConfig::from_meta(const std::map<std::string, std::string>& meta) {
  EncoderConfig c;
  auto read = [&](const char* key, std::size_t& field) {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError(std::string("checkpoint metadata lacks ") + key);
    field = std::stoul(it->second);
  };
  read("encoder.input_side", c.input_side);
  read("encoder.input_channels", c.input_channels);
  read("encoder.stem_channels", c.stem_channels);
  read("encoder.dense_blocks", c.dense_blocks);
  read("encoder.layers_per_block", c.layers_per_block);
  read("encoder.growth_rate", c.growth_rate);
  return c;
}

Encoder Encoder::build(const EncoderConfig& config, std::uint64_t seed) {
  if (config.input_channels == 0 || config.stem_channels == 0 || config.dense_blocks == 0 ||
      config.layers_per_block == 0 || config.growth_rate == 0) {
    throw ConfigError("encoder: channel, block, layer and growth counts must be positive");
  }
  Encoder enc;
  enc.config_ = config;
  std::mt19937_64 rng(seed);

  auto require_side = [](std::ptrdiff_t side, const std::string& layer) {
    if (side <= 0) {
      throw ConfigError("encoder: layer '" + layer + "' yields non-positive spatial extent " + std::to_string(side));
    }
    return static_cast<std::size_t>(side);
  };

  auto side = static_cast<std::ptrdiff_t>(config.input_side);
  side = side >= 3 ? (side + 2 - 3) / 2 + 1 : 0;
  std::size_t s = require_side(side, "stem.conv");
  enc.stem_.emplace_back("stem", config.input_channels, config.stem_channels, 3, 2, 1, rng);
  enc.specs_.push_back({LayerKind::Conv, "stem", config.input_channels, config.stem_channels, 3, 2, 1, 0, 0, 0.0, s});
  enc.specs_.push_back({LayerKind::Activation, "stem.relu", config.stem_channels, config.stem_channels, 0, 0, 0, 0, 0, 0.0, s});
  s = require_side(static_cast<std::ptrdiff_t>(s / 2), "stem.pool");
  enc.specs_.push_back({LayerKind::Pool, "stem.pool", config.stem_channels, config.stem_channels, 2, 2, 0, 0, 0, 0.0, s});

  std::size_t channels = config.stem_channels;
  for (std::size_t b = 0; b < config.dense_blocks; ++b) {
    const std::string name = "block" + std::to_string(b);
    enc.blocks_.emplace_back(name, channels, config.layers_per_block, config.growth_rate, rng);
    const std::size_t out = enc.blocks_.back().out_channels();
    enc.specs_.push_back({LayerKind::DenseBlock, name, channels, out, 3, 1, 1, config.layers_per_block,
                          config.growth_rate, 0.0, s});
    channels = out;
    if (b + 1 < config.dense_blocks) {
      const std::string tname = "transition" + std::to_string(b);
      const std::size_t reduced = std::max<std::size_t>(1, channels / 2);
      enc.transitions_.emplace_back(tname, channels, reduced, 1, 1, 0, rng);
      enc.specs_.push_back({LayerKind::Conv, tname, channels, reduced, 1, 1, 0, 0, 0, 0.0, s});
      s = require_side(static_cast<std::ptrdiff_t>(s / 2), tname + ".pool");
      enc.specs_.push_back({LayerKind::Pool, tname + ".pool", reduced, reduced, 2, 2, 0, 0, 0, 0.0, s});
      channels = reduced;
    }
  }
  enc.specs_.push_back({LayerKind::GlobalPool, "global_pool", channels, channels, 0, 0, 0, 0, 0, 0.0, 1});
  enc.projection_.emplace_back("projection", channels, kEmbeddingDim, rng);
  enc.specs_.push_back({LayerKind::Dense, "projection", channels, kEmbeddingDim, 0, 0, 0, 0, 0, 0.0, 1});
  return enc;
}

Tensor Encoder::forward(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.input_channels || images.dim(2) != config_.input_side ||
      images.dim(3) != config_.input_side) {
    throw ShapeError("encoder: expected input [N, " + std::to_string(config_.input_channels) + ", " +
                     std::to_string(config_.input_side) + ", " + std::to_string(config_.input_side) + "], got " +
                     shape_string(images.shape()));
  }
  Tensor x = ops::max_pool2d(ops::relu(stem_.front().forward(images)), 2, 2);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    x = blocks_[b].forward(x);
    if (b < transitions_.size()) x = ops::max_pool2d(ops::relu(transitions_[b].forward(x)), 2, 2);
  }
  return projection_.front().forward(ops::global_avg_pool(x));
}

Encoder Encoder::clone() const {
  Encoder copy = build(config_, 0);
  auto dst = copy.parameters();
  restore(dst, snapshot(parameters()));
  return copy;
}

ParameterList Encoder::parameters() const {
  ParameterList out;
  for (const auto& c : stem_) c.collect(out);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    blocks_[b].collect(out);
    if (b < transitions_.size()) transitions_[b].collect(out);
  }
  for (const auto& d : projection_) d.collect(out);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Dense make_head_layer(std::size_t in, std::size_t out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Dense("fc", in, out, rng);
}

Dense clone_dense(const Dense& src, std::size_t in, std::size_t out) {
  Dense copy = make_head_layer(in, out, 0);
  ParameterList from, to;
  src.collect(from);
  copy.collect(to);
  restore(to, snapshot(from));
  return copy;
}

void require_embedding(std::string_view op, const Tensor& e) {
  if (e.rank() != 2 || e.dim(1) != kEmbeddingDim) {
    throw ShapeError(std::string(op) + ": expected embeddings [N, 16], got " + shape_string(e.shape()));
  }
}

}  // namespace

PretextHead::PretextHead(std::uint64_t seed, double dropout_rate)
    : fc_(make_head_layer(2 * kEmbeddingDim, 1, seed)), dropout_rate_(dropout_rate) {}

Tensor PretextHead::logits(const Tensor& emb_a, const Tensor& emb_b, bool train, std::mt19937_64& rng) const {
  require_embedding("pretext_head", emb_a);
  require_embedding("pretext_head", emb_b);
  if (emb_a.dim(0) != emb_b.dim(0)) {
    throw ShapeError("pretext_head: batch mismatch " + shape_string(emb_a.shape()) + " vs " + shape_string(emb_b.shape()));
  }
  const Tensor parts[] = {emb_a, emb_b};
  return fc_.forward(ops::dropout(ops::concat(parts, 1), dropout_rate_, train, rng));
}

Tensor PretextHead::forward(const Tensor& emb_a, const Tensor& emb_b, bool train, std::mt19937_64& rng) const {
  return ops::sigmoid(logits(emb_a, emb_b, train, rng));
}

ParameterList PretextHead::parameters() const {
  ParameterList out;
  fc_.collect(out);
  return out;
}

PretextHead PretextHead::clone() const {
  PretextHead copy(0, dropout_rate_);
  copy.fc_ = clone_dense(fc_, 2 * kEmbeddingDim, 1);
  return copy;
}

StageHead::StageHead(std::uint64_t seed, double dropout_rate)
    : fc_(make_head_layer(kEmbeddingDim, kStageCount, seed)), dropout_rate_(dropout_rate) {}

Tensor StageHead::logits(const Tensor& embedding, bool train, std::mt19937_64& rng) const {
  require_embedding("stage_head", embedding);
  return fc_.forward(ops::dropout(embedding, dropout_rate_, train, rng));
}

Tensor StageHead::forward(const Tensor& embedding, bool train, std::mt19937_64& rng) const {
  return ops::softmax(logits(embedding, train, rng));
}

ParameterList StageHead::parameters() const {
  ParameterList out;
  fc_.collect(out);
  return out;
}

StageHead StageHead::clone() const {
  StageHead copy(0, dropout_rate_);
  copy.fc_ = clone_dense(fc_, kEmbeddingDim, kStageCount);
  return copy;
}

// ---------------------------------------------------------------------------

namespace {

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

}  // namespace

Tensor bce_loss(const Tensor& probs, std::span<const int> labels) {
  detail::require_finite("bce_loss", probs);
  if (probs.numel() != labels.size()) {
    throw ShapeError("bce_loss: " + std::to_string(probs.numel()) + " probabilities for " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValueError("bce_loss: label " + std::to_string(y) + " outside {0,1}");
  }
  const auto p = probs.data();
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double q = clamp_probability(p[i]);
    total -= labels[i] == 1 ? std::log(q) : std::log(1.0 - q);
  }
  std::vector<int> y(labels.begin(), labels.end());
  auto ip = impl_of(probs);
  return detail::make_result("bce_loss", {1}, {total / n}, {probs}, [&]() -> BackwardFn {
    return [ip, y, n](const TensorImpl& o) {
      if (!ip->requires_grad) return;
      auto& g = ip->ensure_grad();
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double raw = ip->data[i];
        if (raw < kProbabilityClamp || raw > 1.0 - kProbabilityClamp) continue;
        g[i] += o.grad[0] * (y[i] == 1 ? -1.0 / raw : 1.0 / (1.0 - raw)) / n;
      }
    };
  });
}

Tensor cce_loss(const Tensor& probs, std::span<const int> labels) {
  detail::require_finite("cce_loss", probs);
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError("cce_loss: probabilities " + shape_string(probs.shape()) + " for " + std::to_string(labels.size()) +
                     " labels");
  }
  const std::size_t k = probs.dim(1);
  const auto p = probs.data();
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw ValueError("cce_loss: label " + std::to_string(labels[r]) + " outside [0, " + std::to_string(k) + ")");
    }
    double row = 0.0;
    for (std::size_t c = 0; c < k; ++c) row += p[r * k + c];
    if (std::abs(row - 1.0) > 1e-3) throw ValueError("cce_loss: row " + std::to_string(r) + " does not sum to 1");
  }
  const double n = static_cast<double>(labels.size());
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) total -= std::log(clamp_probability(p[r * k + labels[r]]));
  std::vector<int> y(labels.begin(), labels.end());
  auto ip = impl_of(probs);
  return detail::make_result("cce_loss", {1}, {total / n}, {probs}, [&]() -> BackwardFn {
    return [ip, y, n, k](const TensorImpl& o) {
      if (!ip->requires_grad) return;
      auto& g = ip->ensure_grad();
      for (std::size_t r = 0; r < y.size(); ++r) {
        const std::size_t at = r * k + static_cast<std::size_t>(y[r]);
        const double raw = ip->data[at];
        if (raw < kProbabilityClamp || raw > 1.0 - kProbabilityClamp) continue;
        g[at] += -o.grad[0] / (raw * n);
      }
    };
  });
}

// ---------------------------------------------------------------------------

AdamState::AdamState(const ParameterList& params, AdamConfig config) : config_(config) {
  if (!(config.learning_rate > 0.0)) throw ConfigError("adam: learning rate must be positive");
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void adam_step(ParameterList& params, AdamState& state) {
  if (params.size() != state.m_.size()) throw ShapeError("adam_step: parameter list does not match optimizer state");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.numel() != state.m_[i].size()) {
      throw ShapeError("adam_step: moment buffer mismatch for " + params[i].name);
    }
    for (double g : params[i].tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + params[i].name);
    }
  }
  const auto& c = state.config_;
  state.t_ += 1;
  const double t = static_cast<double>(state.t_);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto grad = params[i].tensor.grad();
    auto w = params[i].tensor.mutable_data();
    auto& m = state.m_[i];
    auto& v = state.v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      w[j] -= c.learning_rate * (m[j] / correction1) / (std::sqrt(v[j] / correction2) + c.epsilon);
    }
  }
}

}  // namespace healnet::nn
