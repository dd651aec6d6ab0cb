#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <vector>

#include "healnet/dataset.hpp"
#include "healnet/nn.hpp"
#include "healnet/pretext.hpp"
#include "healnet/stagedisc.hpp"

// Four-way heal-stage classifier: fine-tuned from the pretext encoder or
// trained from scratch as a baseline, plus evaluation and label agreement.
namespace healnet::downstream {

enum class LabelSource { Pseudo, Human };
std::string_view to_string(LabelSource source);

struct LabelTable {
  LabelSource source = LabelSource::Pseudo;
  std::map<data::ImageKey, int> stages;

  /// Throws DataError naming the key when absent.
  int at(const data::ImageKey& key) const;
  std::size_t size() const { return stages.size(); }
};

LabelTable from_pseudo_labels(const std::vector<stagedisc::PseudoLabel>& labels);

/// Column text: wound_id day stage. A four-column pseudo-label file
/// (wound_id day cluster stage) is accepted as well.
LabelTable read_label_table(const std::filesystem::path& path, LabelSource source);
void write_label_table(const std::filesystem::path& path, const LabelTable& table);

/// Replaces each label, with probability `rate`, by one of the other three
/// stages drawn uniformly. Keys are visited in order, so the result depends
/// only on (table, rate, seed).
LabelTable corrupt_labels(const LabelTable& table, double rate, std::uint64_t seed);

struct StageConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 25;
  double learning_rate = 1e-3;
  double dropout = 0.3;
  std::size_t steps_per_epoch = 0;  // 0: one step per training wound
  bool freeze_encoder = false;
  bool augment = true;
  std::uint64_t seed = 0;
};

class StageClassifier {
 public:
  StageClassifier(nn::Encoder encoder, nn::StageHead head);

  /// Encoder from the pretext checkpoint, fresh stage head.
  static StageClassifier from_pretext(const nn::Checkpoint& pretext, std::uint64_t seed, double dropout = 0.3);
  /// Freshly initialised encoder and head.
  static StageClassifier fresh(const nn::EncoderConfig& encoder, std::uint64_t seed, double dropout = 0.3);

  /// Probabilities [N, 4].
  Tensor forward(const Tensor& images, bool train, std::mt19937_64& rng) const;

  const nn::Encoder& encoder() const { return encoder_; }
  const nn::StageHead& head() const { return head_; }

  /// "encoder.*" followed by "head.*".
  nn::ParameterList parameters() const;

  void save(const std::filesystem::path& path) const;
  static StageClassifier load(const std::filesystem::path& path);

 private:
  nn::Encoder encoder_;
  nn::StageHead head_;
};

struct StageResult {
  StageClassifier model;
  pretext::History history;
};

/// Fine-tunes on single (augmented) training images with categorical
/// cross-entropy and keeps the weights of the best validation epoch.
/// Every image of every split part must have a label.
StageResult finetune(const nn::Checkpoint& pretext, const std::vector<data::WoundSeries>& series,
                     const LabelTable& labels, const data::SplitSpec& split, const StageConfig& config,
                     const pretext::EpochCallback& on_epoch = {});

/// Same training contract from a freshly initialised encoder.
StageResult train_baseline(const nn::EncoderConfig& encoder, const std::vector<data::WoundSeries>& series,
                           const LabelTable& labels, const data::SplitSpec& split, const StageConfig& config,
                           const pretext::EpochCallback& on_epoch = {});

using Confusion = std::array<std::array<std::size_t, 4>, 4>;  // [true][predicted]

struct StageEvaluation {
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double loss = 0.0;
  Confusion confusion{};
};

/// Eval mode, no augmentation.
StageEvaluation eval_stage(const StageClassifier& model, const std::vector<data::WoundSeries>& series,
                           const LabelTable& labels, const data::SplitSpec& split, data::SplitPart part);

/// Scores explicit predictions; used by eval_stage.
StageEvaluation score_predictions(const std::vector<int>& truth, const std::vector<int>& predicted);

struct AgreementResult {
  std::array<std::size_t, 3> matches{};  // indexed by SplitPart
  std::array<std::size_t, 3> counts{};
  std::size_t total_matches = 0;
  std::size_t total = 0;

  double fraction(data::SplitPart part) const;
  double overall() const;
};

/// Top-1 agreement per split part and overall. Both tables must have the
/// same keys.
AgreementResult agreement(const LabelTable& a, const LabelTable& b, const data::SplitSpec& split);

}  // namespace healnet::downstream
