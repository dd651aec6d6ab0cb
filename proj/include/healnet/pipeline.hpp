#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "healnet/dataset.hpp"
#include "healnet/downstream.hpp"
#include "healnet/nn.hpp"
#include "healnet/pretext.hpp"
#include "healnet/stagedisc.hpp"
#include "healnet/synth.hpp"

// Subcommand orchestration over a run directory.
namespace healnet::pipeline {

// Fixed artifact names inside the output directory.
namespace artifact {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kGroundTruth = "ground_truth.txt";
inline constexpr const char* kHumanProxy = "human_labels.txt";
inline constexpr const char* kSplit = "split.txt";
inline constexpr const char* kPairs = "pairs.txt";
inline constexpr const char* kPretextCheckpoint = "pretext.ckpt";
inline constexpr const char* kPretextHistory = "pretext_history.txt";
inline constexpr const char* kEmbeddings = "embeddings.txt";
inline constexpr const char* kCentroids = "centroids.txt";
inline constexpr const char* kProjection = "projection.txt";
inline constexpr const char* kClusterStats = "cluster_stats.txt";
inline constexpr const char* kStageMapping = "stage_mapping.txt";
inline constexpr const char* kPseudoLabels = "pseudo_labels.txt";
inline constexpr const char* kStageCheckpoint = "stage.ckpt";
inline constexpr const char* kFinetuneHistory = "finetune_history.txt";
inline constexpr const char* kBaselineCheckpoint = "baseline.ckpt";
inline constexpr const char* kBaselineHistory = "baseline_history.txt";
inline constexpr const char* kMetrics = "metrics.txt";
inline constexpr const char* kConfusion = "confusion.txt";
inline constexpr const char* kAgreement = "agreement.txt";
inline constexpr const char* kReportDir = "report";
}  // namespace artifact

/// Every tunable of a run. Defaults mirror the module defaults.
struct RunConfig {
  std::filesystem::path out = "healnet-run";
  std::filesystem::path data_root;  // empty: same as `out`
  std::uint64_t seed = 0;

  synth::SynthConfig synth;  // synth.seed is taken from `seed`
  double synth_label_noise = 0.15;

  data::LoadOptions load;
  std::size_t split_val = 1;
  std::size_t split_test = 1;

  nn::EncoderConfig encoder;  // input_side follows load.image_side
  pretext::PretextConfig pretext;
  stagedisc::KMeansOptions cluster;
  downstream::StageConfig stage;

  std::filesystem::path human_labels;  // empty: no human table

  std::filesystem::path dataset_root() const { return data_root.empty() ? out : data_root; }

  /// Every key with its effective value.
  std::map<std::string, std::string> to_map() const;
  /// Applies one `key = value` setting; unknown keys and bad values throw
  /// ConfigError.
  void set(std::string_view key, std::string_view value);
  static RunConfig from_map(const std::map<std::string, std::string>& values);

  bool operator==(const RunConfig& other) const { return to_map() == other.to_map(); }
};

/// All recognised configuration keys, in file order.
const std::vector<std::string>& config_keys();

/// Flat `key = value` file; `#` starts a comment. Errors name the line.
void apply_config_file(RunConfig& config, const std::filesystem::path& path);
void write_config_file(const std::filesystem::path& path, const RunConfig& config);

struct Summary {
  std::string subcommand;
  RunConfig config;
  double wall_time_seconds = 0.0;
  std::map<std::string, double> metrics;
};

void write_summary(const std::filesystem::path& path, const Summary& summary);
Summary read_summary(const std::filesystem::path& path);
std::filesystem::path summary_path(const RunConfig& config, std::string_view subcommand);

const std::vector<std::string>& subcommands();

/// Runs one subcommand, writes its artifacts and summary, and returns the
/// summary. Progress lines go to `log` when given.
Summary run(std::string_view subcommand, const RunConfig& config, std::ostream* log = nullptr);

}  // namespace healnet::pipeline
