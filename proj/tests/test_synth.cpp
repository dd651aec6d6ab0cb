#include <gtest/gtest.h>

#include <set>

#include "fixtures.hpp"
#include "healnet/error.hpp"
#include "healnet/synth.hpp"

using namespace healnet;
using namespace healnet::synth;
using healnet::testing::slurp;
using healnet::testing::TempDir;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.wounds_per_cohort = 3;
  c.image_side = 32;
  return c;
}

}  // namespace

TEST(Synth, StagesStartAtZeroAndNeverDecrease) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig c;
    c.seed = seed;
    for (auto cohort : {data::Cohort::Young, data::Cohort::Aged}) {
      for (std::size_t i = 0; i < c.wounds_per_cohort; ++i) {
        const auto w = draw_wound(c, cohort, i);
        ASSERT_EQ(w.stages.size(), c.days);
        EXPECT_EQ(w.stages[0], 0) << w.wound_id;
        std::set<int> present(w.stages.begin(), w.stages.end());
        EXPECT_EQ(present, (std::set<int>{0, 1, 2, 3})) << w.wound_id;
        for (std::size_t d = 1; d < c.days; ++d) EXPECT_GE(w.stages[d], w.stages[d - 1]) << w.wound_id;
        for (std::size_t d = 1; d < c.days; ++d) EXPECT_LE(w.radius[d], w.radius[d - 1]) << w.wound_id;
      }
    }
  }
}

TEST(Synth, ShortSeriesStillCoverAllStages) {
  SynthConfig c;
  c.days = 4;
  c.jitter = 2.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const auto w = draw_wound(c, data::Cohort::Aged, i);
    EXPECT_EQ(w.stages, (std::vector<int>{0, 1, 2, 3}));
  }
}

TEST(Synth, AgedTransitionsAreYoungOverRate) {
  for (double rate : {0.5, 0.7, 1.0}) {
    for (std::size_t days : {8u, 16u, 24u}) {
      SynthConfig c;
      c.aged_rate = rate;
      c.days = days;
      const auto young = base_transitions(data::Cohort::Young, c);
      const auto aged = base_transitions(data::Cohort::Aged, c);
      // Oracle: young transitions at days 1.5, 5.0, 9.5 of a 16-day series.
      const double scale = static_cast<double>(days) / 16.0;
      const double expected_young[] = {1.5 * scale, 5.0 * scale, 9.5 * scale};
      for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(young[i], expected_young[i], 1e-12);
        EXPECT_NEAR(aged[i], expected_young[i] / rate, 1e-12);
        EXPECT_GE(aged[i], young[i]);
      }
    }
  }
}

TEST(Synth, JitteredTransitionsStayNearBase) {
  SynthConfig c;
  const auto base = base_transitions(data::Cohort::Young, c);
  for (std::size_t i = 0; i < c.wounds_per_cohort; ++i) {
    const auto w = draw_wound(c, data::Cohort::Young, i);
    for (int t = 0; t < 3; ++t) EXPECT_LE(std::abs(w.transitions[t] - base[t]), c.jitter + 1.0);
  }
}

TEST(Synth, GenerateIsByteIdentical) {
  TempDir a, b;
  const auto c = small_config();
  generate(c, a.path());
  generate(c, b.path());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    EXPECT_EQ(slurp(entry.path()), slurp(b.path() / rel)) << rel;
  }
  SynthConfig other = c;
  other.seed = 1;
  TempDir d;
  generate(other, d.path());
  EXPECT_NE(slurp(a / "ground_truth.txt"), slurp(d / "ground_truth.txt"));
}

TEST(Synth, GeneratedTreeLoadsAndMatchesTruth) {
  TempDir dir;
  const auto c = small_config();
  const auto truth = generate(c, dir.path());
  const auto series = data::load_dataset(dir.path(), {.image_side = 32});
  ASSERT_EQ(series.size(), 6u);
  for (const auto& s : series) EXPECT_EQ(s.days(), c.days);
  const auto back = read_ground_truth(dir / "ground_truth.txt");
  EXPECT_EQ(back.stage_table(), truth.stage_table());
  ASSERT_EQ(back.wounds.size(), truth.wounds.size());
  for (std::size_t i = 0; i < back.wounds.size(); ++i) {
    EXPECT_EQ(back.wounds[i].cohort, truth.wounds[i].cohort);
    EXPECT_EQ(back.wounds[i].wound_id, truth.wounds[i].wound_id);
  }
  EXPECT_THROW(truth.stage_of({"nobody", 0}), DataError);
}

TEST(Synth, ConfigValidation) {
  auto bad = [](auto mutate) {
    SynthConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](SynthConfig& c) { c.days = 3; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SynthConfig& c) { c.aged_rate = 0.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SynthConfig& c) { c.aged_rate = 1.5; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SynthConfig& c) { c.noise = -0.1; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SynthConfig& c) { c.wounds_per_cohort = 0; }).validate(), ConfigError);
  EXPECT_NO_THROW(SynthConfig{}.validate());
  TempDir dir;
  EXPECT_THROW(generate(bad([](SynthConfig& c) { c.days = 2; }), dir.path()), ConfigError);
}

TEST(Synth, PixelsInRange) {
  auto c = small_config();
  c.noise = 0.2;
  for (const auto& s : generate_series(c)) {
    for (const auto& img : s.images) {
      for (double v : img->pixels.pixels) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

// Nearest-centroid on 8x8 downsampled pixels: centroids from the first half
// of the wounds per cohort, scored on the rest.
TEST(SynthSeparability, NearestCentroidOnRawPixels) {
  SynthConfig c;
  c.noise = 0.0;
  SynthGroundTruth truth;
  const auto series = generate_series(c, &truth);
  const auto table = truth.stage_table();
  const std::size_t dim = 3 * 8 * 8;
  auto features = [&](const data::WoundImage& img) { return resize(img.pixels, 8, 8).pixels; };

  std::vector<std::vector<double>> centroid(4, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> count(4, 0);
  std::vector<const data::WoundSeries*> held_out;
  std::map<data::Cohort, std::size_t> seen;
  for (const auto& s : series) {
    if (seen[s.cohort]++ >= c.wounds_per_cohort / 2) {
      held_out.push_back(&s);
      continue;
    }
    for (const auto& img : s.images) {
      const int stage = table.at(data::key_of(*img));
      const auto f = features(*img);
      for (std::size_t j = 0; j < dim; ++j) centroid[stage][j] += f[j];
      ++count[stage];
    }
  }
  for (int k = 0; k < 4; ++k) {
    ASSERT_GT(count[k], 0u);
    for (auto& v : centroid[k]) v /= static_cast<double>(count[k]);
  }
  std::size_t correct = 0, total = 0;
  for (const auto* s : held_out) {
    for (const auto& img : s->images) {
      const auto f = features(*img);
      int best = 0;
      double best_d = 1e300;
      for (int k = 0; k < 4; ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < dim; ++j) d += (f[j] - centroid[k][j]) * (f[j] - centroid[k][j]);
        if (d < best_d) best_d = d, best = k;
      }
      correct += best == table.at(data::key_of(*img));
      ++total;
    }
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(total), 0.60);
}

// Day order predicted from the true radius: the earlier image has the larger wound.
TEST(SynthSeparability, RadiusOracleOrdersDays) {
  SynthConfig c;
  SynthGroundTruth truth;
  generate_series(c, &truth);
  std::size_t correct = 0, total = 0;
  for (const auto& w : truth.wounds) {
    for (std::size_t a = 0; a < c.days; ++a) {
      for (std::size_t b = 0; b < c.days; ++b) {
        if (a == b) continue;
        const bool predicted_forward = w.radius[a] > w.radius[b];
        correct += predicted_forward == (a < b);
        ++total;
      }
    }
  }
  EXPECT_EQ(total, 3840u);
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(total), 0.95);
}
