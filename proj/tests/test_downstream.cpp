#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "healnet/downstream.hpp"
#include "healnet/error.hpp"
#include "healnet/random.hpp"
#include "healnet/synth.hpp"

using namespace healnet;
using namespace healnet::downstream;
using data::SplitPart;
using healnet::testing::slurp;
using healnet::testing::TempDir;

namespace {

nn::EncoderConfig tiny_encoder() {
  nn::EncoderConfig c;
  c.input_side = 16;
  c.stem_channels = 4;
  c.dense_blocks = 1;
  c.layers_per_block = 2;
  c.growth_rate = 4;
  return c;
}

struct Fixture {
  std::vector<data::WoundSeries> series;
  synth::SynthGroundTruth truth;
  data::SplitSpec split;
  LabelTable labels;
};

Fixture make_fixture(std::size_t per_cohort, std::size_t days, std::size_t side = 16) {
  Fixture f;
  synth::SynthConfig c;
  c.wounds_per_cohort = per_cohort;
  c.days = days;
  c.image_side = side;
  f.series = synth::generate_series(c, &f.truth);
  if (per_cohort >= 3) {
    f.split = data::make_split(f.series, 1, 1, 0);
  } else {
    for (const auto& s : f.series) f.split.train.insert(s.wound_id);
  }
  f.labels.stages = f.truth.stage_table();
  return f;
}

// Labels cycling through the four stages: exactly balanced.
LabelTable balanced_labels(const std::vector<data::WoundSeries>& series) {
  LabelTable t;
  for (const auto& s : series) {
    for (const auto& img : s.images) t.stages[data::key_of(*img)] = img->day % 4;
  }
  return t;
}

nn::Checkpoint pretext_checkpoint(const TempDir& dir, std::uint64_t seed = 0) {
  pretext::PretextModel(tiny_encoder(), seed).save(dir / "pretext.ckpt");
  return nn::read_checkpoint(dir / "pretext.ckpt");
}

std::vector<const Image*> all_pixels(const std::vector<data::WoundSeries>& series) {
  std::vector<const Image*> out;
  for (const auto& s : series) {
    for (const auto& img : s.images) out.push_back(&img->pixels);
  }
  return out;
}

LabelTable table(std::initializer_list<std::pair<data::ImageKey, int>> rows) {
  LabelTable t;
  for (const auto& [k, v] : rows) t.stages[k] = v;
  return t;
}

}  // namespace

TEST(Finetune, OverfitsOneBatch) {
  TempDir dir;
  auto f = make_fixture(3, 8, 64);
  ASSERT_EQ(data::images_in(f.series, f.split, SplitPart::Train).size(), 16u);
  // No validation images: the final weights are kept.
  f.split.test.insert(f.split.validation.begin(), f.split.validation.end());
  f.split.validation.clear();
  StageConfig cfg;
  cfg.epochs = 200;
  cfg.steps_per_epoch = 1;
  cfg.augment = false;
  pretext::PretextModel({}, 0).save(dir / "default.ckpt");
  const auto r = finetune(nn::read_checkpoint(dir / "default.ckpt"), f.series, f.labels, f.split, cfg);
  EXPECT_EQ(r.history.epochs.size(), 200u);
  EXPECT_DOUBLE_EQ(eval_stage(r.model, f.series, f.labels, f.split, SplitPart::Train).accuracy, 1.0);
}

TEST(Finetune, UntrainedNearChanceOnBalancedLabels) {
  const auto f = make_fixture(8, 16, 64);
  const auto labels = balanced_labels(f.series);
  data::SplitSpec everything;
  for (const auto& s : f.series) everything.test.insert(s.wound_id);
  const auto ev = eval_stage(StageClassifier::fresh({}, 0), f.series, labels, everything, SplitPart::Test);
  ASSERT_EQ(ev.count, 256u);
  // Three binomial standard deviations at p = 0.25, n = 256.
  EXPECT_NEAR(ev.accuracy, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / 256.0));
}

TEST(Finetune, RetaskingPreservesEmbeddings) {
  TempDir dir;
  const auto f = make_fixture(1, 4);
  const auto ckpt = pretext_checkpoint(dir, 5);
  const auto pre = pretext::PretextModel::load(dir / "pretext.ckpt");
  const auto cls = StageClassifier::from_pretext(ckpt, 9);
  const auto images = all_pixels(f.series);
  const Tensor a = pretext::embed_images(pre.encoder(), images);
  const Tensor b = pretext::embed_images(cls.encoder(), images);
  ASSERT_EQ(a.numel(), b.numel());
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.at(i), b.at(i));
}

TEST(Finetune, BaselineHasSameArchitecture) {
  TempDir dir;
  const auto fine = StageClassifier::from_pretext(pretext_checkpoint(dir), 0);
  const auto base = StageClassifier::fresh(tiny_encoder(), 0);
  const auto pf = fine.parameters(), pb = base.parameters();
  EXPECT_EQ(nn::parameter_count(pf), nn::parameter_count(pb));
  ASSERT_EQ(pf.size(), pb.size());
  for (std::size_t i = 0; i < pf.size(); ++i) {
    EXPECT_EQ(pf[i].name, pb[i].name);
    EXPECT_EQ(pf[i].tensor.shape(), pb[i].tensor.shape());
  }
  // Default architecture: encoder plus a 16 x 4 head.
  EXPECT_EQ(nn::parameter_count(StageClassifier::fresh({}, 0).parameters()), 10096u + 16u * 4u + 4u);
}

TEST(Finetune, BaselineDiffersOnlyInInitialisation) {
  TempDir dir;
  const auto f = make_fixture(3, 4);
  StageConfig cfg;
  cfg.epochs = 1;
  const auto ckpt = pretext_checkpoint(dir);
  const auto fine = finetune(ckpt, f.series, f.labels, f.split, cfg);
  const auto base = train_baseline(tiny_encoder(), f.series, f.labels, f.split, cfg);
  EXPECT_EQ(fine.history.epochs.size(), base.history.epochs.size());
  // A baseline started from the pretext weights is the fine-tuned model.
  const auto refit = finetune(ckpt, f.series, f.labels, f.split, cfg);
  EXPECT_EQ(nn::snapshot(fine.model.parameters()), nn::snapshot(refit.model.parameters()));
  EXPECT_NE(nn::snapshot(fine.model.parameters()), nn::snapshot(base.model.parameters()));
}

TEST(Finetune, DeterministicHistory) {
  TempDir dir;
  const auto f = make_fixture(3, 4);
  StageConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 4;
  const auto ckpt = pretext_checkpoint(dir);
  const auto a = finetune(ckpt, f.series, f.labels, f.split, cfg);
  const auto b = finetune(ckpt, f.series, f.labels, f.split, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.history.epochs[i].train_loss, b.history.epochs[i].train_loss);
    EXPECT_EQ(a.history.epochs[i].val_accuracy, b.history.epochs[i].val_accuracy);
  }
  EXPECT_EQ(a.history.best_epoch, b.history.best_epoch);
}

TEST(Finetune, StepsDefaultToTrainingWoundCount) {
  TempDir dir;
  const auto f = make_fixture(3, 4);
  StageConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  const auto r = finetune(pretext_checkpoint(dir), f.series, f.labels, f.split, cfg);
  // Two training wounds: two single-image steps, so accuracy is a multiple of 1/2.
  const double acc = r.history.epochs[0].train_accuracy;
  EXPECT_DOUBLE_EQ(acc * 2.0, std::round(acc * 2.0));
}

TEST(Finetune, FrozenEncoderUnchanged) {
  TempDir dir;
  const auto f = make_fixture(3, 4);
  StageConfig cfg;
  cfg.epochs = 2;
  cfg.freeze_encoder = true;
  const auto ckpt = pretext_checkpoint(dir);
  const auto r = finetune(ckpt, f.series, f.labels, f.split, cfg);
  EXPECT_EQ(nn::snapshot(r.model.encoder().parameters()), nn::snapshot(pretext::load_encoder(ckpt).parameters()));
  cfg.freeze_encoder = false;
  const auto g = finetune(ckpt, f.series, f.labels, f.split, cfg);
  EXPECT_NE(nn::snapshot(g.model.encoder().parameters()), nn::snapshot(pretext::load_encoder(ckpt).parameters()));
}

TEST(Finetune, MissingLabelNamesKey) {
  TempDir dir;
  auto f = make_fixture(3, 4);
  const auto test_wound = *f.split.test.begin();
  f.labels.stages.erase({test_wound, 2});
  try {
    finetune(pretext_checkpoint(dir), f.series, f.labels, f.split, {});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("(" + test_wound + ", 2)"), std::string::npos) << e.what();
  }
}

TEST(Finetune, SaveLoadRoundTrip) {
  TempDir dir;
  const auto model = StageClassifier::fresh(tiny_encoder(), 3);
  model.save(dir / "s.ckpt");
  const auto back = StageClassifier::load(dir / "s.ckpt");
  const auto a = nn::snapshot(model.parameters()), b = nn::snapshot(back.parameters());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) EXPECT_EQ(b[i][j], static_cast<double>(static_cast<float>(a[i][j])));
  }
}

// ---------------------------------------------------------------------------

TEST(Scoring, PerfectPredictionsGiveIdentityConfusion) {
  const std::vector<int> y = {0, 1, 2, 3, 3, 2};
  const auto ev = score_predictions(y, y);
  EXPECT_DOUBLE_EQ(ev.accuracy, 1.0);
  for (int t = 0; t < 4; ++t) {
    for (int p = 0; p < 4; ++p) {
      const auto expected = t == p ? static_cast<std::size_t>(std::count(y.begin(), y.end(), t)) : 0u;
      EXPECT_EQ(ev.confusion[t][p], expected);
    }
  }
}

TEST(Scoring, ConstantPredictorOnBalancedLabels) {
  const std::vector<int> y = {0, 1, 2, 3, 0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(score_predictions(y, std::vector<int>(8, 2)).accuracy, 0.25);
}

TEST(Scoring, AccuracyIsTraceOverCount) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> t(50), p(50);
    for (auto& v : t) v = static_cast<int>(uniform_index(rng, 4));
    for (auto& v : p) v = static_cast<int>(uniform_index(rng, 4));
    const auto ev = score_predictions(t, p);
    std::size_t trace = 0, sum = 0;
    for (int i = 0; i < 4; ++i) {
      trace += ev.confusion[i][i];
      for (int j = 0; j < 4; ++j) sum += ev.confusion[i][j];
    }
    EXPECT_EQ(sum, 50u);
    EXPECT_EQ(ev.correct, trace);
    EXPECT_DOUBLE_EQ(ev.accuracy, static_cast<double>(trace) / 50.0);
  }
}

TEST(Scoring, EmptyPartFails) {
  const auto f = make_fixture(1, 4);
  data::SplitSpec split;
  for (const auto& s : f.series) split.train.insert(s.wound_id);
  EXPECT_THROW(eval_stage(StageClassifier::fresh(tiny_encoder(), 0), f.series, f.labels, split, SplitPart::Test),
               ValueError);
  EXPECT_THROW(score_predictions({}, {}), ValueError);
}

TEST(Scoring, EvalStageMatchesExplicitPredictions) {
  const auto f = make_fixture(3, 4);
  const auto model = StageClassifier::fresh(tiny_encoder(), 2);
  const auto ev = eval_stage(model, f.series, f.labels, f.split, SplitPart::Validation);
  std::vector<int> truth, pred;
  std::mt19937_64 rng(0);
  for (const auto& img : data::images_in(f.series, f.split, SplitPart::Validation)) {
    const Image* one[] = {&img->pixels};
    const Tensor p = model.forward(pretext::to_batch(one), false, rng);
    pred.push_back(static_cast<int>(std::max_element(p.data().begin(), p.data().end()) - p.data().begin()));
    truth.push_back(f.labels.at(data::key_of(*img)));
  }
  const auto direct = score_predictions(truth, pred);
  EXPECT_EQ(ev.confusion, direct.confusion);
  EXPECT_EQ(ev.count, 8u);
}

// ---------------------------------------------------------------------------

TEST(Agreement, IdenticalTablesAgreeFully) {
  const auto f = make_fixture(3, 4);
  const auto r = agreement(f.labels, f.labels, f.split);
  for (auto part : {SplitPart::Train, SplitPart::Validation, SplitPart::Test}) EXPECT_DOUBLE_EQ(r.fraction(part), 1.0);
  EXPECT_DOUBLE_EQ(r.overall(), 1.0);
}

TEST(Agreement, ThreeOfFour) {
  data::SplitSpec split;
  split.train = {"a"};
  const auto a = table({{{"a", 0}, 0}, {{"a", 1}, 1}, {{"a", 2}, 2}, {{"a", 3}, 3}});
  const auto b = table({{{"a", 0}, 0}, {{"a", 1}, 1}, {{"a", 2}, 2}, {{"a", 3}, 0}});
  const auto r = agreement(a, b, split);
  EXPECT_DOUBLE_EQ(r.overall(), 0.75);
  EXPECT_DOUBLE_EQ(r.fraction(SplitPart::Train), 0.75);
  EXPECT_TRUE(std::isnan(r.fraction(SplitPart::Test)));
}

TEST(Agreement, OverallIsPooledRecount) {
  const auto f = make_fixture(4, 8);
  const auto noisy = corrupt_labels(f.labels, 0.3, 2);
  const auto r = agreement(f.labels, noisy, f.split);
  std::size_t matches = 0, sum_matches = 0, sum_counts = 0;
  for (const auto& [key, stage] : f.labels.stages) matches += noisy.at(key) == stage;
  for (std::size_t p = 0; p < 3; ++p) {
    sum_matches += r.matches[p];
    sum_counts += r.counts[p];
  }
  EXPECT_EQ(r.total_matches, matches);
  EXPECT_EQ(sum_counts, f.labels.size());
  EXPECT_DOUBLE_EQ(r.overall(), static_cast<double>(sum_matches) / static_cast<double>(sum_counts));
}

TEST(Agreement, KeyMismatchListsDifference) {
  data::SplitSpec split;
  split.train = {"a"};
  const auto a = table({{{"a", 0}, 0}, {{"a", 1}, 1}});
  const auto b = table({{{"a", 0}, 0}, {{"a", 2}, 1}});
  try {
    agreement(a, b, split);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("only in first: (a, 1)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("only in second: (a, 2)"), std::string::npos) << msg;
  }
}

// ---------------------------------------------------------------------------

TEST(Labels, CorruptionRateAndDeterminism) {
  const auto f = make_fixture(8, 16);
  EXPECT_EQ(corrupt_labels(f.labels, 0.0, 1).stages, f.labels.stages);
  const auto all = corrupt_labels(f.labels, 1.0, 1);
  for (const auto& [key, stage] : f.labels.stages) EXPECT_NE(all.at(key), stage);
  const auto some = corrupt_labels(f.labels, 0.15, 3);
  EXPECT_EQ(some.stages, corrupt_labels(f.labels, 0.15, 3).stages);
  EXPECT_EQ(some.source, LabelSource::Human);
  std::size_t changed = 0;
  for (const auto& [key, stage] : f.labels.stages) changed += some.at(key) != stage;
  // Binomial(256, 0.15): mean 38.4, sd 5.7.
  EXPECT_NEAR(static_cast<double>(changed), 38.4, 4.0 * 5.7);
  EXPECT_THROW(corrupt_labels(f.labels, 1.5, 0), ValueError);
}

TEST(Labels, TableRoundTrip) {
  TempDir dir;
  const auto f = make_fixture(1, 4);
  write_label_table(dir / "l.txt", f.labels);
  const auto back = read_label_table(dir / "l.txt", LabelSource::Human);
  EXPECT_EQ(back.stages, f.labels.stages);
  EXPECT_EQ(back.source, LabelSource::Human);
}

TEST(Labels, AcceptsPseudoLabelFile) {
  TempDir dir;
  stagedisc::write_pseudo_labels(dir / "p.txt", {{{"w", 0}, 2, 0}, {{"w", 1}, 0, 3}});
  const auto t = read_label_table(dir / "p.txt", LabelSource::Pseudo);
  EXPECT_EQ(t.at({"w", 1}), 3);
  EXPECT_EQ(from_pseudo_labels({{{"w", 1}, 0, 3}}).at({"w", 1}), 3);
}

TEST(Labels, RejectsBadRows) {
  TempDir dir;
  std::ofstream(dir / "bad.txt") << "w 0 7\n";
  EXPECT_THROW(read_label_table(dir / "bad.txt", LabelSource::Human), DataError);
  std::ofstream(dir / "dup.txt") << "w 0 1\nw 0 2\n";
  EXPECT_THROW(read_label_table(dir / "dup.txt", LabelSource::Human), DataError);
  const LabelTable empty;
  EXPECT_THROW(empty.at({"w", 0}), DataError);
}
