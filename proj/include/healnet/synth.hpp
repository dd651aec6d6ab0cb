#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "healnet/dataset.hpp"
#include "healnet/image.hpp"

// Procedural wound sequences with a known four-stage chronology.
namespace healnet::synth {

struct SynthConfig {
  std::size_t wounds_per_cohort = 8;
  std::size_t days = 16;
  std::size_t image_side = 64;
  double aged_rate = 0.7;  // healing speed of aged wounds relative to young
  double noise = 0.03;     // std-dev of additive pixel noise
  double jitter = 0.5;     // per-wound uniform jitter of transition days (+/-)
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ground truth for one wound. transitions[i] is the first day of stage i+1.
struct WoundTruth {
  std::string wound_id;
  data::Cohort cohort = data::Cohort::Young;
  std::array<double, 3> transitions{};
  std::vector<int> stages;      // indexed by day
  std::vector<double> radius;   // disk radius in pixels, indexed by day
};

struct SynthGroundTruth {
  std::vector<WoundTruth> wounds;

  int stage_of(const data::ImageKey& key) const;
  std::map<data::ImageKey, int> stage_table() const;
};

/// Young transitions scale with series length; aged ones are divided by
/// aged_rate. No jitter or clamping.
std::array<double, 3> base_transitions(data::Cohort cohort, const SynthConfig& config);

/// Jittered, clamped transitions so every stage covers at least one day.
WoundTruth draw_wound(const SynthConfig& config, data::Cohort cohort, std::size_t index);

Image render(const SynthConfig& config, const WoundTruth& wound, int day);

/// In-memory series (not quantised, not cropped), ordered by wound_id.
std::vector<data::WoundSeries> generate_series(const SynthConfig& config, SynthGroundTruth* truth = nullptr);

/// Writes <out>/manifest.json, <out>/images/*.png and <out>/ground_truth.txt.
SynthGroundTruth generate(const SynthConfig& config, const std::filesystem::path& out_dir);

/// Column text: wound_id day true_stage transition_days(t1,t2,t3) radius cohort
void write_ground_truth(const std::filesystem::path& path, const SynthGroundTruth& truth);
SynthGroundTruth read_ground_truth(const std::filesystem::path& path);

}  // namespace healnet::synth
