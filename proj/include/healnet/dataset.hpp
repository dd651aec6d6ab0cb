#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "healnet/image.hpp"

namespace healnet::data {

enum class Cohort { Young, Aged };

std::string_view to_string(Cohort cohort);
Cohort parse_cohort(std::string_view text);

struct WoundImage {
  std::string wound_id;
  Cohort cohort = Cohort::Young;
  int day = 0;
  Image pixels;
};

using ImageHandle = std::shared_ptr<const WoundImage>;

/// One wound observed on consecutive days starting at 0; images[d].day == d.
struct WoundSeries {
  std::string wound_id;
  Cohort cohort = Cohort::Young;
  std::vector<ImageHandle> images;

  std::size_t days() const { return images.size(); }
};

/// (wound_id, day) identifies an image across every artifact.
struct ImageKey {
  std::string wound_id;
  int day = 0;
  auto operator<=>(const ImageKey&) const = default;
};

inline ImageKey key_of(const WoundImage& img) { return {img.wound_id, img.day}; }

enum class PairLabel { Negative = 0, Positive = 1 };

/// Same-wound, different-day pair; positive iff a precedes b in time.
struct ImagePair {
  ImageHandle a;
  ImageHandle b;
  PairLabel label = PairLabel::Negative;
};

// ---------------------------------------------------------------------------
// On-disk layout: <root>/manifest.json, a JSON array of
//   {"wound_id": str, "cohort": "young"|"aged", "day": int, "file": relative path}
// Images are 8-bit RGB PNG.

struct ManifestRecord {
  std::string wound_id;
  Cohort cohort = Cohort::Young;
  int day = 0;
  std::string file;
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& manifest, const std::vector<ManifestRecord>& records);

struct LoadOptions {
  std::size_t image_side = 64;
  double radius_fraction = 0.45;
};

/// Reads, squares, resizes and circularly crops every image. A root without
/// a manifest (or with an empty one) yields no series. Series are ordered by
/// wound_id.
std::vector<WoundSeries> load_dataset(const std::filesystem::path& root, const LoadOptions& options = {});

/// Zeroes every pixel whose center lies outside the centered disk of radius
/// radius_fraction * side. Non-square inputs are center-cropped first.
Image circular_crop(const Image& image, double radius_fraction);

/// Each applied with probability 0.5: horizontal flip, vertical flip,
/// rotation by 90/180/270 degrees, brightness scale in [0.9, 1.1] (clamped).
Image augment(const Image& image, std::uint64_t seed);

/// Which transforms `augment` would apply for `seed`.
struct AugmentPlan {
  bool hflip = false;
  bool vflip = false;
  int quarter_turns = 0;
  double brightness = 1.0;
  bool identity() const { return !hflip && !vflip && quarter_turns == 0 && brightness == 1.0; }
};
AugmentPlan augment_plan(std::uint64_t seed);

/// Every ordered pair of distinct days per wound. Series with fewer than two
/// days are skipped and reported through `warnings` when given.
std::vector<ImagePair> generate_pairs(const std::vector<WoundSeries>& series,
                                      std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------

enum class SplitPart { Train, Validation, Test };
std::string_view to_string(SplitPart part);

struct SplitSpec {
  std::set<std::string> train;
  std::set<std::string> validation;
  std::set<std::string> test;

  SplitPart part_of(const std::string& wound_id) const;
  const std::set<std::string>& wounds(SplitPart part) const;
  bool operator==(const SplitSpec&) const = default;
};

/// Per cohort, holds out n_val wounds for validation and n_test for test;
/// the rest train. Deterministic in `seed`.
SplitSpec make_split(const std::vector<WoundSeries>& series, std::size_t n_val_per_cohort,
                     std::size_t n_test_per_cohort, std::uint64_t seed);

std::vector<ImagePair> pairs_in(const std::vector<ImagePair>& pairs, const SplitSpec& split, SplitPart part);
std::vector<ImageHandle> images_in(const std::vector<WoundSeries>& series, const SplitSpec& split, SplitPart part);

/// Column text: wound_id day_a day_b label(1 positive / 0 negative) split
void write_pairs(const std::filesystem::path& path, const std::vector<ImagePair>& pairs, const SplitSpec& split);
/// Column text: wound_id cohort split
void write_split(const std::filesystem::path& path, const SplitSpec& split, const std::vector<WoundSeries>& series);
SplitSpec read_split(const std::filesystem::path& path);

}  // namespace healnet::data
