#include "healnet/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "healnet/error.hpp"
#include "healnet/random.hpp"
#include "text_io.hpp"

namespace healnet::downstream {

namespace fs = std::filesystem;
using data::ImageKey;
using data::SplitPart;

std::string_view to_string(LabelSource source) { return source == LabelSource::Pseudo ? "pseudo" : "human"; }

namespace {

std::string key_string(const ImageKey& key) { return "(" + key.wound_id + ", " + std::to_string(key.day) + ")"; }

void require_stage(int stage, const std::string& where) {
  if (stage < 0 || stage >= static_cast<int>(nn::kStageCount)) {
    throw DataError(where + ": stage " + std::to_string(stage) + " outside 0..3");
  }
}

nn::ParameterList with_prefix(nn::ParameterList params, const std::string& prefix) {
  for (auto& p : params) p.name = prefix + p.name;
  return params;
}

}  // namespace

int LabelTable::at(const ImageKey& key) const {
  auto it = stages.find(key);
  if (it == stages.end()) throw DataError("no " + std::string(to_string(source)) + " label for " + key_string(key));
  return it->second;
}

LabelTable from_pseudo_labels(const std::vector<stagedisc::PseudoLabel>& labels) {
  LabelTable t;
  t.source = LabelSource::Pseudo;
  for (const auto& l : labels) {
    require_stage(l.stage, "pseudo labels");
    if (!t.stages.emplace(l.key, l.stage).second) throw DataError("duplicate pseudo label for " + key_string(l.key));
  }
  return t;
}

LabelTable read_label_table(const fs::path& path, LabelSource source) {
  LabelTable t;
  t.source = source;
  for (const auto& line : detail::read_lines(path)) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(f);
    if (fields.size() != 3 && fields.size() != 4) throw DataError(path.string() + ": malformed line '" + line + "'");
    ImageKey key;
    int stage = 0;
    try {
      key = {fields[0], std::stoi(fields[1])};
      stage = std::stoi(fields.back());
    } catch (const std::exception&) {
      throw DataError(path.string() + ": malformed line '" + line + "'");
    }
    require_stage(stage, path.string());
    if (!t.stages.emplace(key, stage).second) throw DataError(path.string() + ": duplicate key " + key_string(key));
  }
  return t;
}

void write_label_table(const fs::path& path, const LabelTable& table) {
  auto out = detail::open_output(path);
  out << "# wound_id day stage\n";
  for (const auto& [key, stage] : table.stages) out << key.wound_id << ' ' << key.day << ' ' << stage << '\n';
}

LabelTable corrupt_labels(const LabelTable& table, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ValueError("corrupt_labels: rate must lie in [0, 1]");
  LabelTable out;
  out.source = LabelSource::Human;
  std::mt19937_64 rng(seed);
  for (const auto& [key, stage] : table.stages) {
    int s = stage;
    const double u = uniform01(rng);
    const auto shift = static_cast<int>(uniform_index(rng, nn::kStageCount - 1)) + 1;
    if (u < rate) s = (stage + shift) % static_cast<int>(nn::kStageCount);
    out.stages.emplace(key, s);
  }
  return out;
}

// ---------------------------------------------------------------------------

StageClassifier::StageClassifier(nn::Encoder encoder, nn::StageHead head)
    : encoder_(std::move(encoder)), head_(std::move(head)) {}

StageClassifier StageClassifier::from_pretext(const nn::Checkpoint& pretext, std::uint64_t seed, double dropout) {
  return StageClassifier(pretext::load_encoder(pretext), nn::StageHead(derive_seed(seed, 11), dropout));
}

StageClassifier StageClassifier::fresh(const nn::EncoderConfig& encoder, std::uint64_t seed, double dropout) {
  return StageClassifier(nn::Encoder::build(encoder, derive_seed(seed, 12)), nn::StageHead(derive_seed(seed, 11), dropout));
}

Tensor StageClassifier::forward(const Tensor& images, bool train, std::mt19937_64& rng) const {
  return head_.forward(encoder_.forward(images), train, rng);
}

nn::ParameterList StageClassifier::parameters() const {
  auto out = with_prefix(encoder_.parameters(), "encoder.");
  auto head = with_prefix(head_.parameters(), "head.");
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

void StageClassifier::save(const fs::path& path) const {
  nn::save_checkpoint(path, parameters(), encoder_.config().to_meta());
}

StageClassifier StageClassifier::load(const fs::path& path) {
  const auto ckpt = nn::read_checkpoint(path);
  auto model = fresh(nn::EncoderConfig::from_meta(ckpt.meta), 0);
  auto params = model.parameters();
  nn::load_parameters(ckpt, params);
  return model;
}

// ---------------------------------------------------------------------------

namespace {

void require_coverage(const std::vector<data::WoundSeries>& series, const LabelTable& labels,
                      const data::SplitSpec& split) {
  for (auto part : {SplitPart::Train, SplitPart::Validation, SplitPart::Test}) {
    for (const auto& img : data::images_in(series, split, part)) labels.at(data::key_of(*img));
  }
}

StageEvaluation evaluate_images(const StageClassifier& model, const std::vector<data::ImageHandle>& images,
                                const LabelTable& labels) {
  if (images.empty()) throw ValueError("eval_stage: no images in the requested split part");
  std::vector<const Image*> ptrs;
  std::vector<int> truth;
  for (const auto& img : images) {
    ptrs.push_back(&img->pixels);
    truth.push_back(labels.at(data::key_of(*img)));
  }
  NoGradGuard no_grad;
  std::mt19937_64 unused(0);
  const Tensor emb = pretext::embed_images(model.encoder(), ptrs);
  const Tensor probs = model.head().forward(emb, false, unused);
  std::vector<int> predicted(truth.size());
  const auto pd = probs.data();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto row = pd.subspan(i * nn::kStageCount, nn::kStageCount);
    predicted[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  auto ev = score_predictions(truth, predicted);
  ev.loss = nn::cce_loss(probs, truth).item();
  return ev;
}

StageResult train_stage(StageClassifier initial, const std::vector<data::WoundSeries>& series, const LabelTable& labels,
                        const data::SplitSpec& split, const StageConfig& config,
                        const pretext::EpochCallback& on_epoch) {
  if (config.batch_size == 0) throw ConfigError("stage training: batch_size must be positive");
  if (config.epochs == 0) throw ConfigError("stage training: epochs must be positive");
  require_coverage(series, labels, split);
  const auto train_images = data::images_in(series, split, SplitPart::Train);
  const auto val_images = data::images_in(series, split, SplitPart::Validation);
  if (train_images.empty()) throw ValueError("stage training: no training images");
  const std::size_t steps = config.steps_per_epoch > 0 ? config.steps_per_epoch : split.train.size();

  StageResult result{std::move(initial), {}};
  StageClassifier& model = result.model;
  auto all_params = model.parameters();
  nn::ParameterList trainable;
  for (const auto& p : all_params) {
    if (!config.freeze_encoder || p.name.starts_with("head.")) trainable.push_back(p);
  }
  nn::AdamState adam(trainable, {.learning_rate = config.learning_rate});
  std::mt19937_64 order_rng(derive_seed(config.seed, 13));
  std::mt19937_64 dropout_rng(derive_seed(config.seed, 14));

  // Cyclic stream over shuffled training images.
  std::vector<std::size_t> order(train_images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  auto next_index = [&]() {
    if (cursor == order.size()) {
      shuffle(std::span<std::size_t>(order), order_rng);
      cursor = 0;
    }
    return order[cursor++];
  };

  nn::ParameterSnapshot best;
  double best_accuracy = -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Image> images;
      std::vector<int> y;
      for (std::size_t i = 0; i < config.batch_size; ++i) {
        const auto& img = train_images[next_index()];
        y.push_back(labels.at(data::key_of(*img)));
        images.push_back(config.augment ? data::augment(img->pixels, derive_seed(config.seed, 15, epoch, step * config.batch_size + i))
                                        : img->pixels);
      }
      std::vector<const Image*> ptrs;
      for (const auto& im : images) ptrs.push_back(&im);
      const Tensor batch = pretext::to_batch(ptrs);
      Tensor probs, loss;
      try {
        if (config.freeze_encoder) {
          Tensor emb;
          {
            NoGradGuard no_grad;
            emb = model.encoder().forward(batch);
          }
          probs = model.head().forward(emb, true, dropout_rng);
        } else {
          probs = model.forward(batch, true, dropout_rng);
        }
        loss = nn::cce_loss(probs, y);
        if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
        nn::zero_grads(all_params);
        backward(loss);
        nn::adam_step(trainable, adam);
      } catch (const NumericError& e) {
        throw NumericError("stage training: epoch " + std::to_string(epoch) + " batch " + std::to_string(step) + ": " +
                           e.what());
      }
      loss_sum += loss.item() * static_cast<double>(y.size());
      seen += y.size();
      const auto pd = probs.data();
      for (std::size_t i = 0; i < y.size(); ++i) {
        const auto row = pd.subspan(i * nn::kStageCount, nn::kStageCount);
        correct += (std::max_element(row.begin(), row.end()) - row.begin()) == y[i] ? 1 : 0;
      }
    }

    pretext::EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(seen);
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    if (val_images.empty()) {
      record.val_loss = record.val_accuracy = std::nan("");
      result.history.best_epoch = epoch;
    } else {
      const auto ev = evaluate_images(model, val_images, labels);
      record.val_loss = ev.loss;
      record.val_accuracy = ev.accuracy;
      if (ev.accuracy > best_accuracy) {
        best_accuracy = ev.accuracy;
        best = nn::snapshot(all_params);
        result.history.best_epoch = epoch;
      }
    }
    result.history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  nn::zero_grads(all_params);
  if (!best.empty()) nn::restore(all_params, best);
  return result;
}

}  // namespace

StageResult finetune(const nn::Checkpoint& pretext, const std::vector<data::WoundSeries>& series,
                     const LabelTable& labels, const data::SplitSpec& split, const StageConfig& config,
                     const pretext::EpochCallback& on_epoch) {
  return train_stage(StageClassifier::from_pretext(pretext, config.seed, config.dropout), series, labels, split, config,
                     on_epoch);
}

StageResult train_baseline(const nn::EncoderConfig& encoder, const std::vector<data::WoundSeries>& series,
                           const LabelTable& labels, const data::SplitSpec& split, const StageConfig& config,
                           const pretext::EpochCallback& on_epoch) {
  return train_stage(StageClassifier::fresh(encoder, config.seed, config.dropout), series, labels, split, config,
                     on_epoch);
}

StageEvaluation score_predictions(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("score_predictions: length mismatch");
  if (truth.empty()) throw ValueError("score_predictions: nothing to score");
  StageEvaluation ev;
  ev.count = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require_stage(truth[i], "score_predictions");
    require_stage(predicted[i], "score_predictions");
    ++ev.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    ev.correct += truth[i] == predicted[i] ? 1 : 0;
  }
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.count);
  return ev;
}

StageEvaluation eval_stage(const StageClassifier& model, const std::vector<data::WoundSeries>& series,
                           const LabelTable& labels, const data::SplitSpec& split, SplitPart part) {
  return evaluate_images(model, data::images_in(series, split, part), labels);
}

// ---------------------------------------------------------------------------

double AgreementResult::fraction(SplitPart part) const {
  const auto i = static_cast<std::size_t>(part);
  return counts[i] == 0 ? std::nan("") : static_cast<double>(matches[i]) / static_cast<double>(counts[i]);
}

double AgreementResult::overall() const {
  return total == 0 ? std::nan("") : static_cast<double>(total_matches) / static_cast<double>(total);
}

AgreementResult agreement(const LabelTable& a, const LabelTable& b, const data::SplitSpec& split) {
  std::vector<std::string> only_a, only_b;
  for (const auto& [key, _] : a.stages) {
    if (!b.stages.count(key)) only_a.push_back(key_string(key));
  }
  for (const auto& [key, _] : b.stages) {
    if (!a.stages.count(key)) only_b.push_back(key_string(key));
  }
  if (!only_a.empty() || !only_b.empty()) {
    std::ostringstream msg;
    msg << "agreement: label tables cover different images;";
    auto list = [&](const char* label, const std::vector<std::string>& keys) {
      if (keys.empty()) return;
      msg << ' ' << label << ':';
      for (const auto& k : keys) msg << ' ' << k;
      msg << ';';
    };
    list("only in first", only_a);
    list("only in second", only_b);
    throw DataError(msg.str());
  }
  AgreementResult r;
  for (const auto& [key, stage] : a.stages) {
    const auto part = static_cast<std::size_t>(split.part_of(key.wound_id));
    const bool same = stage == b.stages.at(key);
    r.matches[part] += same ? 1 : 0;
    ++r.counts[part];
    r.total_matches += same ? 1 : 0;
    ++r.total;
  }
  return r;
}

}  // namespace healnet::downstream
