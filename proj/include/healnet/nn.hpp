#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "healnet/tensor.hpp"

namespace healnet::nn {

inline constexpr std::size_t kEmbeddingDim = 16;
inline constexpr std::size_t kStageCount = 4;
inline constexpr double kProbabilityClamp = 1e-7;

struct NamedParameter {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedParameter>;

std::size_t parameter_count(const ParameterList& params);
void zero_grads(ParameterList& params);

/// Deep copy of parameter values, used to retain the best epoch's weights.
using ParameterSnapshot = std::vector<std::vector<double>>;
ParameterSnapshot snapshot(const ParameterList& params);
void restore(ParameterList& params, const ParameterSnapshot& values);

// ---------------------------------------------------------------------------
// Layers

enum class LayerKind { Conv, Dense, Pool, Activation, Dropout, DenseBlock, GlobalPool };

std::string_view to_string(LayerKind kind);

/// Static description of one encoder stage. Unused fields stay zero.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::string name;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 0;
  std::size_t padding = 0;
  std::size_t layers = 0;
  std::size_t growth = 0;
  double rate = 0.0;
  std::size_t out_side = 0;  // spatial extent after this stage
};

class Conv2d {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void collect(ParameterList& out) const;
  std::size_t out_channels() const { return weight_.dim(0); }

 private:
  std::string name_;
  Tensor weight_;
  Tensor bias_;
  std::size_t stride_;
  std::size_t padding_;
};

class Dense {
 public:
  Dense(std::string name, std::size_t in_features, std::size_t out_features, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void collect(ParameterList& out) const;
  std::size_t in_features() const { return weight_.dim(0); }

 private:
  std::string name_;
  Tensor weight_;  // [in, out]
  Tensor bias_;
};

/// Densely connected block: layer i sees the channel concatenation of the
/// block input and the outputs of layers 0..i-1, and contributes `growth`
/// channels. Output channels = in + layers * growth.
class DenseBlock {
 public:
  DenseBlock(std::string name, std::size_t in_channels, std::size_t layers, std::size_t growth, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) const;
  void collect(ParameterList& out) const;
  std::size_t out_channels() const { return out_channels_; }

 private:
  std::vector<Conv2d> layers_;
  std::size_t out_channels_;
};

// ---------------------------------------------------------------------------
// Encoder

struct EncoderConfig {
  std::size_t input_side = 64;
  std::size_t input_channels = 3;
  std::size_t stem_channels = 8;
  std::size_t dense_blocks = 2;
  std::size_t layers_per_block = 3;
  std::size_t growth_rate = 8;

  std::map<std::string, std::string> to_meta() const;
  static EncoderConfig from_meta(const std::map<std::string, std::string>& meta);
  bool operator==(const EncoderConfig&) const = default;
};

/// Miniature densely connected image encoder:
///   stem conv3x3/s2 + ReLU + maxpool2
///   dense block, then (1x1 conv halving channels + ReLU + maxpool2) between blocks
///   global average pool, dense -> 16
///
/// Move-only: copies would silently share parameter storage. Use `clone()`.
class Encoder {
 public:
  static Encoder build(const EncoderConfig& config, std::uint64_t seed);

  Encoder(Encoder&&) noexcept = default;
  Encoder& operator=(Encoder&&) noexcept = default;
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;

  /// [N, C, S, S] -> [N, 16]
  Tensor forward(const Tensor& images) const;
  Encoder clone() const;

  ParameterList parameters() const;
  const std::vector<LayerSpec>& layers() const { return specs_; }
  const EncoderConfig& config() const { return config_; }

 private:
  Encoder() = default;

  EncoderConfig config_;
  std::vector<LayerSpec> specs_;
  std::vector<Conv2d> stem_;
  std::vector<DenseBlock> blocks_;
  std::vector<Conv2d> transitions_;
  std::vector<Dense> projection_;
};

// ---------------------------------------------------------------------------
// Heads

/// concat(a, b) -> dropout -> dense(32 -> 1) -> sigmoid. Output [N, 1].
class PretextHead {
 public:
  PretextHead(std::uint64_t seed, double dropout_rate = 0.3);

  Tensor forward(const Tensor& emb_a, const Tensor& emb_b, bool train, std::mt19937_64& rng) const;
  /// Pre-sigmoid activation.
  Tensor logits(const Tensor& emb_a, const Tensor& emb_b, bool train, std::mt19937_64& rng) const;
  ParameterList parameters() const;
  PretextHead clone() const;

 private:
  Dense fc_;
  double dropout_rate_;
};

/// dropout -> dense(16 -> 4) -> softmax. Output [N, 4].
class StageHead {
 public:
  StageHead(std::uint64_t seed, double dropout_rate = 0.3);

  Tensor forward(const Tensor& embedding, bool train, std::mt19937_64& rng) const;
  Tensor logits(const Tensor& embedding, bool train, std::mt19937_64& rng) const;
  ParameterList parameters() const;
  StageHead clone() const;

 private:
  Dense fc_;
  double dropout_rate_;
};

// ---------------------------------------------------------------------------
// Losses. Probabilities are clamped to [1e-7, 1 - 1e-7]; gradients vanish
// where the clamp is active.

/// Mean binary cross-entropy. `probs` has one element per label.
Tensor bce_loss(const Tensor& probs, std::span<const int> labels);
/// Mean categorical cross-entropy over rows of `probs` [N, K].
Tensor cce_loss(const Tensor& probs, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState(const ParameterList& params, AdamConfig config = {});

  std::uint64_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }
  std::span<const double> first_moment(std::size_t i) const { return m_.at(i); }
  std::span<const double> second_moment(std::size_t i) const { return v_.at(i); }

 private:
  friend void adam_step(ParameterList& params, AdamState& state);

  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t t_ = 0;
};

/// Bias-corrected Adam update in place. Parameters without a gradient are
/// treated as having a zero gradient.
void adam_step(ParameterList& params, AdamState& state);

// ---------------------------------------------------------------------------
// Checkpoints: text header followed by little-endian float32 payload.
//
//   HEALNET-CHECKPOINT 1
//   meta <key> <value>            (zero or more)
//   param <name> <rank> <d0> .. <offset>   (offset in bytes into payload)
//   end
//   <payload>

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<CheckpointEntry> entries;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint entries whose name starts with `prefix` into `params`
/// (matched by full name). Throws listing missing, extra and mis-shaped names.
void load_parameters(const Checkpoint& checkpoint, ParameterList& params, std::string_view prefix = "");

}  // namespace healnet::nn
