#include "healnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "healnet/error.hpp"
#include "healnet/random.hpp"

namespace healnet::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Cohort cohort) { return cohort == Cohort::Young ? "young" : "aged"; }

Cohort parse_cohort(std::string_view text) {
  if (text == "young") return Cohort::Young;
  if (text == "aged") return Cohort::Aged;
  throw DataError("unknown cohort '" + std::string(text) + "' (expected young|aged)");
}

std::string_view to_string(SplitPart part) {
  switch (part) {
    case SplitPart::Train: return "train";
    case SplitPart::Validation: return "validation";
    case SplitPart::Test: return "test";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------

std::vector<ManifestRecord> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_array()) throw DataError("manifest " + manifest.string() + " must be a JSON array");
  std::vector<ManifestRecord> records;
  for (const auto& item : doc) {
    try {
      ManifestRecord r;
      r.wound_id = item.at("wound_id").get<std::string>();
      r.cohort = parse_cohort(item.at("cohort").get<std::string>());
      r.day = item.at("day").get<int>();
      r.file = item.at("file").get<std::string>();
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("manifest record " + item.dump() + " is malformed: " + e.what());
    }
  }
  return records;
}

void write_manifest(const fs::path& manifest, const std::vector<ManifestRecord>& records) {
  json doc = json::array();
  for (const auto& r : records) {
    doc.push_back({{"wound_id", r.wound_id}, {"cohort", std::string(to_string(r.cohort))}, {"day", r.day}, {"file", r.file}});
  }
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + manifest.string());
  out << doc.dump(1) << '\n';
}

std::vector<WoundSeries> load_dataset(const fs::path& root, const LoadOptions& options) {
  const fs::path manifest = root / "manifest.json";
  if (!fs::exists(manifest)) return {};
  if (!(options.radius_fraction > 0.0 && options.radius_fraction <= 0.5)) {
    throw ConfigError("radius_fraction must lie in (0, 0.5]");
  }

  std::map<std::string, std::vector<ManifestRecord>> by_wound;
  for (auto& r : read_manifest(manifest)) by_wound[r.wound_id].push_back(std::move(r));

  std::vector<WoundSeries> out;
  for (auto& [wound_id, records] : by_wound) {
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.day < b.day; });
    WoundSeries series;
    series.wound_id = wound_id;
    series.cohort = records.front().cohort;
    int expected = 0;
    for (const auto& r : records) {
      if (r.cohort != series.cohort) {
        throw DataError("wound " + wound_id + " day " + std::to_string(r.day) + ": cohort disagrees with earlier days");
      }
      if (r.day < expected) throw DataError("wound " + wound_id + " day " + std::to_string(r.day) + ": duplicate day");
      if (r.day > expected) throw DataError("wound " + wound_id + " day " + std::to_string(expected) + ": missing day");
      const fs::path file = root / r.file;
      Image pixels;
      try {
        pixels = read_png(file);
      } catch (const IoError& e) {
        throw DataError("wound " + wound_id + " day " + std::to_string(r.day) + ": " + e.what());
      }
      pixels = circular_crop(resize(center_square(pixels), options.image_side, options.image_side),
                             options.radius_fraction);
      series.images.push_back(std::make_shared<const WoundImage>(WoundImage{wound_id, series.cohort, r.day, std::move(pixels)}));
      ++expected;
    }
    out.push_back(std::move(series));
  }
  return out;
}

// ---------------------------------------------------------------------------

Image circular_crop(const Image& image, double radius_fraction) {
  if (!(radius_fraction > 0.0 && radius_fraction <= 0.5)) {
    throw ValueError("circular_crop: radius_fraction must lie in (0, 0.5]");
  }
  Image out = image.height == image.width ? image : center_square(image);
  const double side = static_cast<double>(out.width);
  const double center = side / 2.0;
  const double r2 = (radius_fraction * side) * (radius_fraction * side);
  for (std::size_t y = 0; y < out.height; ++y) {
    const double dy = y + 0.5 - center;
    for (std::size_t x = 0; x < out.width; ++x) {
      const double dx = x + 0.5 - center;
      if (dx * dx + dy * dy > r2) {
        for (std::size_t c = 0; c < Image::kChannels; ++c) out.at(c, y, x) = 0.0;
      }
    }
  }
  return out;
}

AugmentPlan augment_plan(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AugmentPlan plan;
  plan.hflip = uniform01(rng) < 0.5;
  plan.vflip = uniform01(rng) < 0.5;
  const bool rotate = uniform01(rng) < 0.5;
  const auto turns = static_cast<int>(1 + uniform_index(rng, 3));
  const bool jitter = uniform01(rng) < 0.5;
  const double factor = uniform(rng, 0.9, 1.1);
  plan.quarter_turns = rotate ? turns : 0;
  plan.brightness = jitter ? factor : 1.0;
  return plan;
}

namespace {

Image rotate_quarter(const Image& in) {
  // 90 degrees counter-clockwise: out(y, x) = in(x, W-1-y)
  Image out(in.width, in.height);
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) out.at(c, y, x) = in.at(c, x, in.width - 1 - y);
    }
  }
  return out;
}

}  // namespace

Image augment(const Image& image, std::uint64_t seed) {
  const AugmentPlan plan = augment_plan(seed);
  Image out = image;
  if (plan.hflip) {
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
      for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width / 2; ++x) std::swap(out.at(c, y, x), out.at(c, y, out.width - 1 - x));
      }
    }
  }
  if (plan.vflip) {
    for (std::size_t c = 0; c < Image::kChannels; ++c) {
      for (std::size_t y = 0; y < out.height / 2; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) std::swap(out.at(c, y, x), out.at(c, out.height - 1 - y, x));
      }
    }
  }
  for (int t = 0; t < plan.quarter_turns; ++t) out = rotate_quarter(out);
  if (plan.brightness != 1.0) {
    for (auto& v : out.pixels) v = std::clamp(v * plan.brightness, 0.0, 1.0);
  }
  return out;
}

std::vector<ImagePair> generate_pairs(const std::vector<WoundSeries>& series, std::vector<std::string>* warnings) {
  std::vector<ImagePair> pairs;
  for (const auto& s : series) {
    if (s.days() < 2) {
      if (warnings) warnings->push_back("wound " + s.wound_id + " has fewer than two days; no pairs generated");
      continue;
    }
    for (std::size_t a = 0; a < s.days(); ++a) {
      for (std::size_t b = 0; b < s.days(); ++b) {
        if (a == b) continue;
        pairs.push_back({s.images[a], s.images[b], a < b ? PairLabel::Positive : PairLabel::Negative});
      }
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------

SplitPart SplitSpec::part_of(const std::string& wound_id) const {
  if (train.count(wound_id)) return SplitPart::Train;
  if (validation.count(wound_id)) return SplitPart::Validation;
  if (test.count(wound_id)) return SplitPart::Test;
  throw DataError("wound " + wound_id + " is not part of the split");
}

const std::set<std::string>& SplitSpec::wounds(SplitPart part) const {
  switch (part) {
    case SplitPart::Train: return train;
    case SplitPart::Validation: return validation;
    case SplitPart::Test: return test;
  }
  return train;
}

SplitSpec make_split(const std::vector<WoundSeries>& series, std::size_t n_val_per_cohort,
                     std::size_t n_test_per_cohort, std::uint64_t seed) {
  std::map<Cohort, std::vector<std::string>> by_cohort;
  for (const auto& s : series) by_cohort[s.cohort].push_back(s.wound_id);

  SplitSpec split;
  std::mt19937_64 rng(seed);
  for (auto& [cohort, ids] : by_cohort) {
    std::sort(ids.begin(), ids.end());
    if (ids.size() < n_val_per_cohort + n_test_per_cohort) {
      throw DataError("cohort " + std::string(to_string(cohort)) + " has " + std::to_string(ids.size()) +
                      " wounds; need at least " + std::to_string(n_val_per_cohort + n_test_per_cohort) +
                      " for validation and test");
    }
    shuffle(std::span<std::string>(ids), rng);
    std::size_t i = 0;
    for (; i < n_val_per_cohort; ++i) split.validation.insert(ids[i]);
    for (; i < n_val_per_cohort + n_test_per_cohort; ++i) split.test.insert(ids[i]);
    for (; i < ids.size(); ++i) split.train.insert(ids[i]);
  }
  if (split.train.empty()) throw DataError("split leaves no training wounds");
  return split;
}

std::vector<ImagePair> pairs_in(const std::vector<ImagePair>& pairs, const SplitSpec& split, SplitPart part) {
  const auto& ids = split.wounds(part);
  std::vector<ImagePair> out;
  for (const auto& p : pairs) {
    if (ids.count(p.a->wound_id)) out.push_back(p);
  }
  return out;
}

std::vector<ImageHandle> images_in(const std::vector<WoundSeries>& series, const SplitSpec& split, SplitPart part) {
  const auto& ids = split.wounds(part);
  std::vector<ImageHandle> out;
  for (const auto& s : series) {
    if (!ids.count(s.wound_id)) continue;
    out.insert(out.end(), s.images.begin(), s.images.end());
  }
  return out;
}

void write_pairs(const fs::path& path, const std::vector<ImagePair>& pairs, const SplitSpec& split) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# wound_id day_a day_b label split\n";
  for (const auto& p : pairs) {
    out << p.a->wound_id << ' ' << p.a->day << ' ' << p.b->day << ' ' << static_cast<int>(p.label) << ' '
        << to_string(split.part_of(p.a->wound_id)) << '\n';
  }
}

void write_split(const fs::path& path, const SplitSpec& split, const std::vector<WoundSeries>& series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# wound_id cohort split\n";
  for (const auto& s : series) {
    out << s.wound_id << ' ' << to_string(s.cohort) << ' ' << to_string(split.part_of(s.wound_id)) << '\n';
  }
}

SplitSpec read_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  SplitSpec split;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id, cohort, part;
    if (!(ls >> id >> cohort >> part)) throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    if (part == "train") {
      split.train.insert(id);
    } else if (part == "validation") {
      split.validation.insert(id);
    } else if (part == "test") {
      split.test.insert(id);
    } else {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": unknown split '" + part + "'");
    }
  }
  return split;
}

}  // namespace healnet::data
