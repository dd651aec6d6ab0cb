#include "healnet/pretext.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "healnet/error.hpp"
#include "healnet/ops.hpp"
#include "healnet/random.hpp"
#include "text_io.hpp"

namespace healnet::pretext {

namespace fs = std::filesystem;
using data::ImagePair;
using data::PairLabel;

Tensor to_batch(std::span<const Image* const> images) {
  if (images.empty()) throw ValueError("to_batch: no images");
  const std::size_t h = images.front()->height, w = images.front()->width;
  const std::size_t per = 3 * h * w;
  std::vector<double> values(images.size() * per);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->height != h || images[i]->width != w) throw ShapeError("to_batch: images differ in size");
    std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), values.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor({images.size(), 3, h, w}, std::move(values));
}

namespace {

nn::ParameterList with_prefix(nn::ParameterList params, const std::string& prefix) {
  for (auto& p : params) p.name = prefix + p.name;
  return params;
}

}  // namespace

PretextModel::PretextModel(const nn::EncoderConfig& encoder, std::uint64_t seed, double dropout)
    : encoder_(nn::Encoder::build(encoder, derive_seed(seed, 1))), head_(derive_seed(seed, 2), dropout) {}

Tensor PretextModel::forward(const Tensor& a, const Tensor& b, bool train, std::mt19937_64& rng) const {
  if (a.shape() != b.shape()) {
    throw ShapeError("pretext: branch batches differ (" + shape_string(a.shape()) + " vs " + shape_string(b.shape()) + ")");
  }
  const std::size_t n = a.dim(0);
  const Tensor both[] = {a, b};
  const Tensor emb = encoder_.forward(ops::concat(both, 0));
  return head_.forward(ops::slice(emb, 0, 0, n), ops::slice(emb, 0, n, 2 * n), train, rng);
}

nn::ParameterList PretextModel::parameters() const {
  auto out = with_prefix(encoder_.parameters(), "encoder.");
  auto head = with_prefix(head_.parameters(), "head.");
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

void PretextModel::save(const fs::path& path) const {
  nn::save_checkpoint(path, parameters(), encoder_.config().to_meta());
}

PretextModel PretextModel::load(const fs::path& path) {
  const auto ckpt = nn::read_checkpoint(path);
  PretextModel model(nn::EncoderConfig::from_meta(ckpt.meta), 0);
  auto params = model.parameters();
  nn::load_parameters(ckpt, params);
  return model;
}

nn::Encoder load_encoder(const nn::Checkpoint& checkpoint) {
  auto encoder = nn::Encoder::build(nn::EncoderConfig::from_meta(checkpoint.meta), 0);
  auto params = with_prefix(encoder.parameters(), "encoder.");
  nn::load_parameters(checkpoint, params, "encoder.");
  return encoder;
}

// ---------------------------------------------------------------------------

void write_history(const fs::path& path, const History& history) {
  std::ofstream out = detail::open_output(path);
  out << "# epoch train_loss train_acc val_loss val_acc\n";
  for (const auto& e : history.epochs) {
    out << e.epoch << ' ' << detail::fmt(e.train_loss) << ' ' << detail::fmt(e.train_accuracy) << ' '
        << detail::fmt(e.val_loss) << ' ' << detail::fmt(e.val_accuracy) << '\n';
  }
  out << "# best_epoch " << history.best_epoch << '\n';
}

History read_history(const fs::path& path) {
  History h;
  for (const auto& line : detail::read_lines(path)) {
    if (line.starts_with("# best_epoch ")) {
      h.best_epoch = std::stoul(line.substr(13));
      continue;
    }
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ls(line);
    EpochRecord e;
    if (!(ls >> e.epoch)) throw DataError(path.string() + ": malformed history line '" + line + "'");
    e.train_loss = detail::parse_double(ls, path);
    e.train_accuracy = detail::parse_double(ls, path);
    e.val_loss = detail::parse_double(ls, path);
    e.val_accuracy = detail::parse_double(ls, path);
    h.epochs.push_back(e);
  }
  return h;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> labels_of(std::span<const ImagePair* const> pairs) {
  std::vector<int> y;
  y.reserve(pairs.size());
  for (const auto* p : pairs) y.push_back(p->label == PairLabel::Positive ? 1 : 0);
  return y;
}

std::size_t count_correct(std::span<const double> probs, std::span<const int> labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += (probs[i] > 0.5) == (labels[i] == 1) ? 1 : 0;
  return correct;
}

}  // namespace

PretextResult train_pretext(const std::vector<ImagePair>& train, const std::vector<ImagePair>& val,
                            const PretextConfig& config, const EpochCallback& on_epoch) {
  if (train.empty()) throw ValueError("train_pretext: no training pairs");
  if (config.batch_size == 0) throw ConfigError("train_pretext: batch_size must be positive");
  if (config.epochs == 0) throw ConfigError("train_pretext: epochs must be positive");

  PretextResult result{PretextModel(config.encoder, config.seed, config.dropout), {}};
  PretextModel& model = result.model;
  auto params = model.parameters();
  nn::AdamState adam(params, {.learning_rate = config.learning_rate});
  std::mt19937_64 order_rng(derive_seed(config.seed, 3));
  std::mt19937_64 dropout_rng(derive_seed(config.seed, 4));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  nn::ParameterSnapshot best;
  double best_accuracy = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), order_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const ImagePair*> batch;
      std::vector<Image> a_images, b_images;
      for (std::size_t i = start; i < end; ++i) {
        const ImagePair& p = train[order[i]];
        batch.push_back(&p);
        if (config.augment) {
          a_images.push_back(data::augment(p.a->pixels, derive_seed(config.seed, 5, epoch, 2 * i)));
          b_images.push_back(data::augment(p.b->pixels, derive_seed(config.seed, 5, epoch, 2 * i + 1)));
        } else {
          a_images.push_back(p.a->pixels);
          b_images.push_back(p.b->pixels);
        }
      }
      std::vector<const Image*> a_ptrs, b_ptrs;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        a_ptrs.push_back(&a_images[i]);
        b_ptrs.push_back(&b_images[i]);
      }
      const auto labels = labels_of(batch);
      Tensor probs, loss;
      try {
        probs = model.forward(to_batch(a_ptrs), to_batch(b_ptrs), true, dropout_rng);
        loss = nn::bce_loss(probs, labels);
        if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
        nn::zero_grads(params);
        backward(loss);
        nn::adam_step(params, adam);
      } catch (const NumericError& e) {
        throw NumericError("train_pretext: epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) +
                           ": " + e.what());
      }
      loss_sum += loss.item() * static_cast<double>(batch.size());
      correct += count_correct(probs.data(), labels);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train.size());
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (val.empty()) {
      record.val_loss = record.val_accuracy = std::numeric_limits<double>::quiet_NaN();
      result.history.best_epoch = epoch;
    } else {
      const auto ev = eval_pretext(model, val);
      record.val_loss = ev.loss;
      record.val_accuracy = ev.accuracy;
      if (ev.accuracy > best_accuracy) {
        best_accuracy = ev.accuracy;
        best = nn::snapshot(params);
        result.history.best_epoch = epoch;
      }
    }
    result.history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  nn::zero_grads(params);
  if (!best.empty()) nn::restore(params, best);
  return result;
}

PairEvaluation eval_pretext(const PretextModel& model, const std::vector<ImagePair>& pairs) {
  if (pairs.empty()) throw ValueError("eval_pretext: no pairs");
  NoGradGuard no_grad;

  // Each distinct image is embedded once; pairs only differ through the head.
  std::map<data::ImageKey, std::size_t> row_of;
  std::vector<const Image*> unique;
  for (const auto& p : pairs) {
    for (const auto* img : {p.a.get(), p.b.get()}) {
      if (row_of.emplace(data::key_of(*img), unique.size()).second) unique.push_back(&img->pixels);
    }
  }
  const Tensor emb = embed_images(model.encoder(), unique);
  std::vector<double> a_rows, b_rows;
  a_rows.reserve(pairs.size() * nn::kEmbeddingDim);
  b_rows.reserve(pairs.size() * nn::kEmbeddingDim);
  const auto ed = emb.data();
  for (const auto& p : pairs) {
    const std::size_t ra = row_of.at(data::key_of(*p.a)), rb = row_of.at(data::key_of(*p.b));
    a_rows.insert(a_rows.end(), ed.begin() + static_cast<std::ptrdiff_t>(ra * nn::kEmbeddingDim),
                  ed.begin() + static_cast<std::ptrdiff_t>((ra + 1) * nn::kEmbeddingDim));
    b_rows.insert(b_rows.end(), ed.begin() + static_cast<std::ptrdiff_t>(rb * nn::kEmbeddingDim),
                  ed.begin() + static_cast<std::ptrdiff_t>((rb + 1) * nn::kEmbeddingDim));
  }
  std::mt19937_64 unused(0);
  const Tensor probs = model.head().forward(Tensor({pairs.size(), nn::kEmbeddingDim}, std::move(a_rows)),
                                            Tensor({pairs.size(), nn::kEmbeddingDim}, std::move(b_rows)), false,
                                            unused);
  std::vector<const ImagePair*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  const auto labels = labels_of(ptrs);

  PairEvaluation ev;
  ev.count = pairs.size();
  ev.correct = count_correct(probs.data(), labels);
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.count);
  ev.loss = nn::bce_loss(probs, labels).item();
  return ev;
}

// ---------------------------------------------------------------------------

const EmbeddingRecord& EmbeddingSet::find(const data::ImageKey& key) const {
  for (const auto& r : records) {
    if (r.key == key) return r;
  }
  throw DataError("no embedding for wound " + key.wound_id + " day " + std::to_string(key.day));
}

Tensor embed_images(const nn::Encoder& encoder, std::span<const Image* const> images) {
  constexpr std::size_t kChunk = 32;
  NoGradGuard no_grad;
  std::vector<double> values;
  values.reserve(images.size() * nn::kEmbeddingDim);
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    const Tensor emb = encoder.forward(to_batch(chunk));
    values.insert(values.end(), emb.data().begin(), emb.data().end());
  }
  return Tensor({images.size(), nn::kEmbeddingDim}, std::move(values));
}

EmbeddingSet embed_all(const nn::Encoder& encoder, const std::vector<data::WoundSeries>& series) {
  std::vector<const Image*> images;
  EmbeddingSet set;
  for (const auto& s : series) {
    for (const auto& img : s.images) {
      images.push_back(&img->pixels);
      set.records.push_back({data::key_of(*img), {}});
    }
  }
  if (images.empty()) return set;
  const Tensor emb = embed_images(encoder, images);
  const auto ed = emb.data();
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    std::copy_n(ed.begin() + static_cast<std::ptrdiff_t>(i * nn::kEmbeddingDim), nn::kEmbeddingDim,
                set.records[i].values.begin());
  }
  return set;
}

void write_embeddings(const fs::path& path, const EmbeddingSet& set) {
  std::ofstream out = detail::open_output(path);
  out << "# wound_id day";
  for (std::size_t j = 0; j < nn::kEmbeddingDim; ++j) out << " e" << j;
  out << '\n';
  for (const auto& r : set.records) {
    out << r.key.wound_id << ' ' << r.key.day;
    for (double v : r.values) out << ' ' << detail::fmt_exact(v);
    out << '\n';
  }
}

EmbeddingSet read_embeddings(const fs::path& path) {
  EmbeddingSet set;
  for (const auto& line : detail::read_lines(path)) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ls(line);
    EmbeddingRecord r;
    if (!(ls >> r.key.wound_id >> r.key.day)) throw DataError(path.string() + ": malformed line '" + line + "'");
    for (auto& v : r.values) {
      v = detail::parse_double(ls, path);
      if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite embedding for " + r.key.wound_id);
    }
    set.records.push_back(std::move(r));
  }
  return set;
}

}  // namespace healnet::pretext
