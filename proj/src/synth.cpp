#include "healnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "healnet/error.hpp"
#include "healnet/random.hpp"

namespace healnet::synth {

namespace fs = std::filesystem;
using data::Cohort;

namespace {

// First days of inflammation, proliferation and maturation for a 16-day
// young series.
constexpr std::array<double, 3> kYoungTransitions16 = {1.5, 5.0, 9.5};

struct Rgb {
  double r, g, b;
};

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

std::string wound_name(Cohort cohort, std::size_t index) {
  std::ostringstream os;
  os << data::to_string(cohort) << '_' << std::setw(2) << std::setfill('0') << index;
  return os.str();
}

// Fractional healing coordinate in [0, 4): stage index plus progress through it.
double stage_coordinate(const WoundTruth& w, double day, double days) {
  const std::array<double, 5> bounds = {0.0, w.transitions[0], w.transitions[1], w.transitions[2], days};
  for (int s = 3; s >= 0; --s) {
    if (day >= bounds[s]) return s + std::clamp((day - bounds[s]) / (bounds[s + 1] - bounds[s]), 0.0, 0.999);
  }
  return 0.0;
}

}  // namespace

void SynthConfig::validate() const {
  if (wounds_per_cohort == 0) throw ConfigError("synth: wounds_per_cohort must be positive");
  if (days < 4) throw ConfigError("synth: days must be at least 4");
  if (image_side < 16) throw ConfigError("synth: image_side must be at least 16");
  if (!(aged_rate > 0.0 && aged_rate <= 1.0)) throw ConfigError("synth: aged_rate must lie in (0, 1]");
  if (!(noise >= 0.0)) throw ConfigError("synth: noise must be non-negative");
  if (!(jitter >= 0.0)) throw ConfigError("synth: jitter must be non-negative");
}

int SynthGroundTruth::stage_of(const data::ImageKey& key) const {
  for (const auto& w : wounds) {
    if (w.wound_id == key.wound_id) {
      if (key.day < 0 || static_cast<std::size_t>(key.day) >= w.stages.size()) break;
      return w.stages[static_cast<std::size_t>(key.day)];
    }
  }
  throw DataError("no ground truth for wound " + key.wound_id + " day " + std::to_string(key.day));
}

std::map<data::ImageKey, int> SynthGroundTruth::stage_table() const {
  std::map<data::ImageKey, int> out;
  for (const auto& w : wounds) {
    for (std::size_t d = 0; d < w.stages.size(); ++d) out[{w.wound_id, static_cast<int>(d)}] = w.stages[d];
  }
  return out;
}

std::array<double, 3> base_transitions(Cohort cohort, const SynthConfig& config) {
  const double scale = static_cast<double>(config.days) / 16.0;
  const double rate = cohort == Cohort::Aged ? config.aged_rate : 1.0;
  std::array<double, 3> t{};
  for (std::size_t i = 0; i < 3; ++i) t[i] = kYoungTransitions16[i] * scale / rate;
  return t;
}

WoundTruth draw_wound(const SynthConfig& config, Cohort cohort, std::size_t index) {
  config.validate();
  std::mt19937_64 rng(derive_seed(config.seed, cohort == Cohort::Aged ? 1 : 0, index, 0x7472616e73ULL));
  WoundTruth w;
  w.wound_id = wound_name(cohort, index);
  w.cohort = cohort;
  const auto base = base_transitions(cohort, config);
  const int last = static_cast<int>(config.days) - 1;

  // Integer first-days, forced strictly increasing within [1, last].
  std::array<int, 3> first{};
  for (std::size_t i = 0; i < 3; ++i) {
    w.transitions[i] = base[i] + uniform(rng, -config.jitter, config.jitter);
    first[i] = static_cast<int>(std::ceil(w.transitions[i]));
  }
  first[0] = std::max(first[0], 1);
  for (std::size_t i = 1; i < 3; ++i) first[i] = std::max(first[i], first[i - 1] + 1);
  first[2] = std::min(first[2], last);
  for (int i = 1; i >= 0; --i) first[i] = std::min(first[i], first[i + 1] - 1);
  for (std::size_t i = 0; i < 3; ++i) {
    if (static_cast<int>(std::ceil(w.transitions[i])) != first[i]) w.transitions[i] = first[i];
  }

  const double max_radius = 0.36 * static_cast<double>(config.image_side);
  const double days = static_cast<double>(config.days);
  for (int d = 0; d <= last; ++d) {
    int stage = 0;
    for (std::size_t i = 0; i < 3; ++i) stage += d >= first[i] ? 1 : 0;
    w.stages.push_back(stage);
    const double progress = stage_coordinate(w, d, days) / 4.0;
    w.radius.push_back(max_radius * (1.0 - 0.7 * progress));
  }
  return w;
}

Image render(const SynthConfig& config, const WoundTruth& wound, int day) {
  const std::size_t side = config.image_side;
  const auto d = static_cast<std::size_t>(day);
  if (day < 0 || d >= wound.stages.size()) throw ValueError("render: day out of range");
  const int stage = wound.stages[d];
  const double r = wound.radius[d];
  const double center = static_cast<double>(side) / 2.0;
  const double px = static_cast<double>(side) / 64.0;  // one pixel at the reference size

  std::mt19937_64 tint_rng(derive_seed(config.seed, fnv1a(wound.wound_id), 0x736b696eULL));
  const Rgb skin{0.80 + uniform(tint_rng, -0.03, 0.03), 0.62 + uniform(tint_rng, -0.03, 0.03),
                 0.52 + uniform(tint_rng, -0.03, 0.03)};
  std::mt19937_64 rng(derive_seed(config.seed, fnv1a(wound.wound_id), d, 0x706978ULL));

  Image img(side, side);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double dx = x + 0.5 - center, dy = y + 0.5 - center;
      const double rho = std::sqrt(dx * dx + dy * dy);
      Rgb c = skin;
      switch (stage) {
        case 0: {  // fresh wound: bright red bed, sharp dark edge
          const Rgb bed{0.86, 0.22, 0.22};
          const Rgb edge{0.22, 0.05, 0.05};
          if (rho < r) c = bed;
          if (rho >= r - 1.5 * px && rho < r + 1.5 * px) c = edge;
          break;
        }
        case 1: {  // swollen soft ring, wet specular highlight
          const Rgb bed{0.74, 0.30, 0.30};
          const Rgb swelling{0.92, 0.48, 0.46};
          const double ring = std::exp(-std::pow((rho - r) / (0.22 * r), 2.0));
          c = mix(rho < r ? bed : skin, swelling, ring);
          const double hx = dx + 0.3 * r, hy = dy + 0.3 * r;
          const double shine = 0.65 * std::exp(-(hx * hx + hy * hy) / (2.0 * std::pow(0.22 * r, 2.0)));
          if (rho < r) c = mix(c, Rgb{1.0, 1.0, 1.0}, shine);
          break;
        }
        case 2: {  // dry matte scab with rough texture
          const Rgb scab{0.50, 0.36, 0.28};
          const double inside = 1.0 - smoothstep(r - 1.0 * px, r + 1.0 * px, rho);
          const double grain = ((x / std::max<std::size_t>(1, side / 32) + y / std::max<std::size_t>(1, side / 32)) % 2 == 0 ? 0.09 : -0.09) +
                               uniform(rng, -0.06, 0.06);
          const Rgb textured{scab.r + grain, scab.g + grain, scab.b + grain};
          c = mix(skin, textured, inside);
          break;
        }
        default: {  // closed: faint, slightly darker skin patch
          const Rgb healed{skin.r * 0.9, skin.g * 0.86, skin.b * 0.86};
          const double inside = 1.0 - smoothstep(r - 2.0 * px, r + 2.0 * px, rho);
          c = mix(skin, healed, inside);
          break;
        }
      }
      img.at(0, y, x) = c.r;
      img.at(1, y, x) = c.g;
      img.at(2, y, x) = c.b;
    }
  }
  if (config.noise > 0.0) {
    for (auto& v : img.pixels) v += config.noise * normal(rng);
  }
  for (auto& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return img;
}

std::vector<data::WoundSeries> generate_series(const SynthConfig& config, SynthGroundTruth* truth) {
  config.validate();
  std::vector<WoundTruth> wounds;
  for (Cohort cohort : {Cohort::Aged, Cohort::Young}) {
    for (std::size_t i = 0; i < config.wounds_per_cohort; ++i) wounds.push_back(draw_wound(config, cohort, i));
  }
  std::sort(wounds.begin(), wounds.end(), [](const auto& a, const auto& b) { return a.wound_id < b.wound_id; });

  std::vector<data::WoundSeries> series;
  for (const auto& w : wounds) {
    data::WoundSeries s;
    s.wound_id = w.wound_id;
    s.cohort = w.cohort;
    for (std::size_t d = 0; d < config.days; ++d) {
      s.images.push_back(std::make_shared<const data::WoundImage>(
          data::WoundImage{w.wound_id, w.cohort, static_cast<int>(d), render(config, w, static_cast<int>(d))}));
    }
    series.push_back(std::move(s));
  }
  if (truth) truth->wounds = std::move(wounds);
  return series;
}

SynthGroundTruth generate(const SynthConfig& config, const fs::path& out_dir) {
  SynthGroundTruth truth;
  const auto series = generate_series(config, &truth);
  fs::create_directories(out_dir / "images");
  std::vector<data::ManifestRecord> manifest;
  for (const auto& s : series) {
    for (const auto& img : s.images) {
      const std::string file = "images/" + s.wound_id + "_d" + (img->day < 10 ? "0" : "") + std::to_string(img->day) + ".png";
      write_png(out_dir / file, img->pixels);
      manifest.push_back({s.wound_id, s.cohort, img->day, file});
    }
  }
  data::write_manifest(out_dir / "manifest.json", manifest);
  write_ground_truth(out_dir / "ground_truth.txt", truth);
  return truth;
}

void write_ground_truth(const fs::path& path, const SynthGroundTruth& truth) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# wound_id day true_stage transition_days radius cohort\n" << std::setprecision(17);
  for (const auto& w : truth.wounds) {
    for (std::size_t d = 0; d < w.stages.size(); ++d) {
      out << w.wound_id << ' ' << d << ' ' << w.stages[d] << ' ' << w.transitions[0] << ',' << w.transitions[1] << ','
          << w.transitions[2] << ' ' << w.radius[d] << ' ' << data::to_string(w.cohort) << '\n';
    }
  }
}

SynthGroundTruth read_ground_truth(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  SynthGroundTruth truth;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id, transitions, cohort;
    std::size_t day = 0;
    int stage = 0;
    double radius = 0.0;
    if (!(ls >> id >> day >> stage >> transitions >> radius >> cohort)) throw DataError(path.string() + ": malformed row '" + line + "'");
    if (truth.wounds.empty() || truth.wounds.back().wound_id != id) {
      WoundTruth w;
      w.wound_id = id;
      w.cohort = data::parse_cohort(cohort);
      std::replace(transitions.begin(), transitions.end(), ',', ' ');
      std::istringstream ts(transitions);
      ts >> w.transitions[0] >> w.transitions[1] >> w.transitions[2];
      truth.wounds.push_back(std::move(w));
    }
    auto& w = truth.wounds.back();
    if (day != w.stages.size()) throw DataError(path.string() + ": days of " + id + " are not contiguous");
    w.stages.push_back(stage);
    w.radius.push_back(radius);
  }
  return truth;
}

}  // namespace healnet::synth
