#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "healnet/dataset.hpp"
#include "healnet/nn.hpp"

// Siamese temporal-order model and embedding extraction.
namespace healnet::pretext {

/// Stacks images into an [N, 3, S, S] tensor (no gradient).
Tensor to_batch(std::span<const Image* const> images);

struct PretextConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 25;
  double learning_rate = 1e-3;
  double dropout = 0.3;
  bool augment = true;
  std::uint64_t seed = 0;
  nn::EncoderConfig encoder;
};

/// One encoder evaluated for both members of a pair, followed by the pair head.
class PretextModel {
 public:
  PretextModel(const nn::EncoderConfig& encoder, std::uint64_t seed, double dropout = 0.3);

  /// Probabilities [N, 1] that (a, b) is in forward temporal order. Both
  /// batches pass through the encoder together as one [2N, ...] batch.
  Tensor forward(const Tensor& a, const Tensor& b, bool train, std::mt19937_64& rng) const;

  const nn::Encoder& encoder() const { return encoder_; }
  nn::Encoder& encoder() { return encoder_; }
  const nn::PretextHead& head() const { return head_; }

  /// "encoder.*" followed by "head.*".
  nn::ParameterList parameters() const;

  void save(const std::filesystem::path& path) const;
  static PretextModel load(const std::filesystem::path& path);

 private:
  nn::Encoder encoder_;
  nn::PretextHead head_;
};

/// Rebuilds an encoder from a checkpoint's "encoder.*" entries and metadata.
nn::Encoder load_encoder(const nn::Checkpoint& checkpoint);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct History {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
};

/// Column text: epoch train_loss train_acc val_loss val_acc
void write_history(const std::filesystem::path& path, const History& history);
History read_history(const std::filesystem::path& path);

struct PretextResult {
  PretextModel model;
  History history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mean-BCE training over shuffled batches of `train`. Keeps the weights of
/// the epoch with the best validation accuracy (earliest on ties); with no
/// validation pairs the final weights are kept.
PretextResult train_pretext(const std::vector<data::ImagePair>& train, const std::vector<data::ImagePair>& val,
                            const PretextConfig& config, const EpochCallback& on_epoch = {});

struct PairEvaluation {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t count = 0;
  std::size_t correct = 0;
};

/// Eval mode. A pair is correct when (p > 0.5) == (label is positive).
PairEvaluation eval_pretext(const PretextModel& model, const std::vector<data::ImagePair>& pairs);

// ---------------------------------------------------------------------------

struct EmbeddingRecord {
  data::ImageKey key;
  std::array<double, nn::kEmbeddingDim> values{};
};

struct EmbeddingSet {
  std::vector<EmbeddingRecord> records;

  std::size_t size() const { return records.size(); }
  const EmbeddingRecord& find(const data::ImageKey& key) const;
};

/// Embeds a batch of images in eval mode, rows in input order.
Tensor embed_images(const nn::Encoder& encoder, std::span<const Image* const> images);

/// One record per image, in series order then day order. Eval mode, no
/// augmentation.
EmbeddingSet embed_all(const nn::Encoder& encoder, const std::vector<data::WoundSeries>& series);

/// Column text: wound_id day e0 .. e15
void write_embeddings(const std::filesystem::path& path, const EmbeddingSet& set);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

}  // namespace healnet::pretext
