#include "healnet/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "healnet/error.hpp"
#include "healnet/random.hpp"
#include "json.hpp"
#include "text_io.hpp"

namespace healnet::pipeline {

namespace fs = std::filesystem;
using data::SplitPart;

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("config field " + std::string(key) + ": expected " + std::string(expected) + ", got '" +
                    std::string(value) + "'");
}

template <typename T>
T parse_value(std::string_view key, std::string_view text);

template <>
std::uint64_t parse_value<std::uint64_t>(std::string_view key, std::string_view text) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) bad_value(key, text, "an unsigned integer");
  return v;
}

template <>
double parse_value<double>(std::string_view key, std::string_view text) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0' || !std::isfinite(v)) bad_value(key, text, "a finite number");
  return v;
}

template <>
bool parse_value<bool>(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  bad_value(key, text, "true or false");
}

template <>
fs::path parse_value<fs::path>(std::string_view, std::string_view text) {
  return fs::path(std::string(text));
}

std::string format_value(std::uint64_t v) { return std::to_string(v); }
std::string format_value(double v) { return detail::fmt_exact(v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const fs::path& v) { return v.string(); }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename Access>
Field make_field(std::string key, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
  return {key, [access](const RunConfig& c) { return format_value(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, std::string_view v) { access(c) = parse_value<T>(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      make_field("seed", [](RunConfig& c) -> auto& { return c.seed; }),
      make_field("out", [](RunConfig& c) -> auto& { return c.out; }),
      make_field("data_root", [](RunConfig& c) -> auto& { return c.data_root; }),
      make_field("synth.wounds_per_cohort", [](RunConfig& c) -> auto& { return c.synth.wounds_per_cohort; }),
      make_field("synth.days", [](RunConfig& c) -> auto& { return c.synth.days; }),
      make_field("synth.image_side", [](RunConfig& c) -> auto& { return c.synth.image_side; }),
      make_field("synth.aged_rate", [](RunConfig& c) -> auto& { return c.synth.aged_rate; }),
      make_field("synth.noise", [](RunConfig& c) -> auto& { return c.synth.noise; }),
      make_field("synth.jitter", [](RunConfig& c) -> auto& { return c.synth.jitter; }),
      make_field("synth.label_noise", [](RunConfig& c) -> auto& { return c.synth_label_noise; }),
      make_field("data.image_side", [](RunConfig& c) -> auto& { return c.load.image_side; }),
      make_field("data.radius_fraction", [](RunConfig& c) -> auto& { return c.load.radius_fraction; }),
      make_field("split.n_val", [](RunConfig& c) -> auto& { return c.split_val; }),
      make_field("split.n_test", [](RunConfig& c) -> auto& { return c.split_test; }),
      make_field("encoder.stem_channels", [](RunConfig& c) -> auto& { return c.encoder.stem_channels; }),
      make_field("encoder.dense_blocks", [](RunConfig& c) -> auto& { return c.encoder.dense_blocks; }),
      make_field("encoder.layers_per_block", [](RunConfig& c) -> auto& { return c.encoder.layers_per_block; }),
      make_field("encoder.growth_rate", [](RunConfig& c) -> auto& { return c.encoder.growth_rate; }),
      make_field("pretext.batch_size", [](RunConfig& c) -> auto& { return c.pretext.batch_size; }),
      make_field("pretext.epochs", [](RunConfig& c) -> auto& { return c.pretext.epochs; }),
      make_field("pretext.learning_rate", [](RunConfig& c) -> auto& { return c.pretext.learning_rate; }),
      make_field("pretext.dropout", [](RunConfig& c) -> auto& { return c.pretext.dropout; }),
      make_field("pretext.augment", [](RunConfig& c) -> auto& { return c.pretext.augment; }),
      make_field("cluster.k", [](RunConfig& c) -> auto& { return c.cluster.k; }),
      make_field("cluster.restarts", [](RunConfig& c) -> auto& { return c.cluster.restarts; }),
      make_field("cluster.max_iter", [](RunConfig& c) -> auto& { return c.cluster.max_iter; }),
      make_field("cluster.tol", [](RunConfig& c) -> auto& { return c.cluster.tol; }),
      make_field("finetune.batch_size", [](RunConfig& c) -> auto& { return c.stage.batch_size; }),
      make_field("finetune.epochs", [](RunConfig& c) -> auto& { return c.stage.epochs; }),
      make_field("finetune.learning_rate", [](RunConfig& c) -> auto& { return c.stage.learning_rate; }),
      make_field("finetune.dropout", [](RunConfig& c) -> auto& { return c.stage.dropout; }),
      make_field("finetune.steps_per_epoch", [](RunConfig& c) -> auto& { return c.stage.steps_per_epoch; }),
      make_field("finetune.freeze_encoder", [](RunConfig& c) -> auto& { return c.stage.freeze_encoder; }),
      make_field("finetune.augment", [](RunConfig& c) -> auto& { return c.stage.augment; }),
      make_field("labels.human", [](RunConfig& c) -> auto& { return c.human_labels; }),
  };
  return all;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.key] = f.get(*this);
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config field '" + std::string(key) + "'");
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& values) {
  RunConfig c;
  for (const auto& [k, v] : values) c.set(k, v);
  return c;
}

void apply_config_file(RunConfig& config, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + body + "'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      config.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void write_config_file(const fs::path& path, const RunConfig& config) {
  auto out = detail::open_output(path);
  const auto values = config.to_map();
  for (const auto& key : config_keys()) out << key << " = " << values.at(key) << '\n';
}

// ---------------------------------------------------------------------------
// Summaries

void write_summary(const fs::path& path, const Summary& summary) {
  nlohmann::ordered_json j;
  j["subcommand"] = summary.subcommand;
  j["seed"] = summary.config.seed;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  const auto values = summary.config.to_map();
  for (const auto& key : config_keys()) cfg[key] = values.at(key);
  j["config"] = cfg;
  j["wall_time_seconds"] = summary.wall_time_seconds;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  for (const auto& [k, v] : summary.metrics) metrics[k] = v;
  j["metrics"] = metrics;
  auto out = detail::open_output(path);
  out << j.dump(2) << '\n';
}

Summary read_summary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  Summary s;
  s.subcommand = j.at("subcommand").get<std::string>();
  std::map<std::string, std::string> values;
  for (const auto& [k, v] : j.at("config").items()) values[k] = v.get<std::string>();
  s.config = RunConfig::from_map(values);
  s.wall_time_seconds = j.at("wall_time_seconds").get<double>();
  for (const auto& [k, v] : j.at("metrics").items()) s.metrics[k] = v.get<double>();
  return s;
}

fs::path summary_path(const RunConfig& config, std::string_view subcommand) {
  return config.out / ("summary_" + std::string(subcommand) + ".json");
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = {"synth",    "pairs",   "train-pretext", "embed",
                                                 "cluster",  "pseudo-label", "finetune", "baseline",
                                                 "evaluate", "agreement",    "report"};
  return names;
}

// ---------------------------------------------------------------------------
// Subcommands

namespace {

struct Context {
  RunConfig config;
  std::ostream* log;
  Summary summary;

  fs::path out(const char* name) const { return config.out / name; }
  fs::path data(const char* name) const { return config.dataset_root() / name; }

  void note(const std::string& line) const {
    if (log) *log << "[" << summary.subcommand << "] " << line << std::endl;
  }
};

void require(const fs::path& path, std::string_view subcommand, std::string_view producer) {
  if (!fs::exists(path)) {
    throw MissingArtifact(std::string(subcommand) + ": missing " + path.filename().string() + " in " +
                          path.parent_path().string() + "; run `" + std::string(producer) + "` first");
  }
}

std::vector<data::WoundSeries> load_series(const Context& ctx) {
  require(ctx.data(artifact::kManifest), ctx.summary.subcommand, "synth");
  auto series = data::load_dataset(ctx.config.dataset_root(), ctx.config.load);
  if (series.empty()) throw DataError(ctx.summary.subcommand + ": dataset at " + ctx.config.dataset_root().string() + " is empty");
  return series;
}

std::map<data::ImageKey, data::ImageHandle> index_images(const std::vector<data::WoundSeries>& series) {
  std::map<data::ImageKey, data::ImageHandle> out;
  for (const auto& s : series) {
    for (const auto& img : s.images) out[data::key_of(*img)] = img;
  }
  return out;
}

struct SplitPairs {
  std::vector<data::ImagePair> train, validation, test;
};

// pairs.txt resolved against the loaded images.
SplitPairs read_pairs(const fs::path& path, const std::vector<data::WoundSeries>& series, const data::SplitSpec& split) {
  const auto images = index_images(series);
  SplitPairs out;
  for (const auto& line : detail::read_lines(path)) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ls(line);
    std::string wound, part;
    int day_a = 0, day_b = 0, label = 0;
    if (!(ls >> wound >> day_a >> day_b >> label >> part)) throw DataError(path.string() + ": malformed line '" + line + "'");
    auto a = images.find({wound, day_a}), b = images.find({wound, day_b});
    if (a == images.end() || b == images.end()) {
      throw DataError(path.string() + ": pair references unknown image of wound " + wound);
    }
    if ((label == 1) != (day_a < day_b) || day_a == day_b) throw DataError(path.string() + ": inconsistent pair '" + line + "'");
    const data::ImagePair p{a->second, b->second, label == 1 ? data::PairLabel::Positive : data::PairLabel::Negative};
    switch (split.part_of(wound)) {
      case SplitPart::Train: out.train.push_back(p); break;
      case SplitPart::Validation: out.validation.push_back(p); break;
      case SplitPart::Test: out.test.push_back(p); break;
    }
  }
  return out;
}

std::vector<stagedisc::ImageMeta> image_meta(const Context& ctx, const pretext::EmbeddingSet& emb) {
  require(ctx.data(artifact::kManifest), ctx.summary.subcommand, "synth");
  std::map<std::string, data::Cohort> cohort;
  for (const auto& r : data::read_manifest(ctx.data(artifact::kManifest))) cohort[r.wound_id] = r.cohort;
  std::vector<stagedisc::ImageMeta> meta;
  for (const auto& r : emb.records) {
    auto it = cohort.find(r.key.wound_id);
    if (it == cohort.end()) throw DataError("wound " + r.key.wound_id + " is not in the manifest");
    meta.push_back({r.key, it->second});
  }
  return meta;
}

stagedisc::Points points_of(const pretext::EmbeddingSet& emb) {
  stagedisc::Points pts;
  for (const auto& r : emb.records) pts.emplace_back(r.values.begin(), r.values.end());
  return pts;
}

std::vector<bool> train_mask(const std::vector<stagedisc::ImageMeta>& meta, const data::SplitSpec& split) {
  std::vector<bool> mask;
  for (const auto& m : meta) mask.push_back(split.part_of(m.key.wound_id) == SplitPart::Train);
  return mask;
}

data::SplitSpec load_split(const Context& ctx) {
  require(ctx.out(artifact::kSplit), ctx.summary.subcommand, "pairs");
  return data::read_split(ctx.out(artifact::kSplit));
}

downstream::LabelTable load_human(const Context& ctx) {
  if (ctx.config.human_labels.empty()) {
    throw ConfigError(ctx.summary.subcommand + ": no human label table configured (set labels.human)");
  }
  if (!fs::exists(ctx.config.human_labels)) {
    throw MissingArtifact(ctx.summary.subcommand + ": human label table " + ctx.config.human_labels.string() +
                          " does not exist");
  }
  return downstream::read_label_table(ctx.config.human_labels, downstream::LabelSource::Human);
}

pretext::EpochCallback epoch_logger(const Context& ctx) {
  return [&ctx](const pretext::EpochRecord& e) {
    std::ostringstream os;
    os << "epoch " << e.epoch << " train_loss " << detail::fmt(e.train_loss) << " train_acc "
       << detail::fmt(e.train_accuracy) << " val_loss " << detail::fmt(e.val_loss) << " val_acc "
       << detail::fmt(e.val_accuracy);
    ctx.note(os.str());
  };
}

constexpr std::array<SplitPart, 3> kParts = {SplitPart::Train, SplitPart::Validation, SplitPart::Test};

// ---------------------------------------------------------------------------

void do_synth(Context& ctx) {
  const fs::path root = ctx.config.dataset_root();
  fs::create_directories(root);
  const auto truth = synth::generate(ctx.config.synth, root);
  downstream::LabelTable exact;
  exact.source = downstream::LabelSource::Human;
  exact.stages = truth.stage_table();
  const auto proxy = downstream::corrupt_labels(exact, ctx.config.synth_label_noise, derive_seed(ctx.config.seed, 0x68756d616eULL));
  downstream::write_label_table(root / artifact::kHumanProxy, proxy);
  std::size_t changed = 0;
  for (const auto& [k, s] : exact.stages) changed += proxy.stages.at(k) != s ? 1 : 0;
  ctx.summary.metrics["wounds"] = static_cast<double>(truth.wounds.size());
  ctx.summary.metrics["images"] = static_cast<double>(exact.size());
  ctx.summary.metrics["human_proxy_noisy_labels"] = static_cast<double>(changed);
  ctx.note("wrote " + std::to_string(exact.size()) + " images to " + root.string());
}

void do_pairs(Context& ctx) {
  const auto series = load_series(ctx);
  std::vector<std::string> warnings;
  const auto pairs = data::generate_pairs(series, &warnings);
  for (const auto& w : warnings) ctx.note("warning: " + w);
  const auto split = data::make_split(series, ctx.config.split_val, ctx.config.split_test, ctx.config.seed);
  data::write_split(ctx.out(artifact::kSplit), split, series);
  data::write_pairs(ctx.out(artifact::kPairs), pairs, split);

  std::size_t positive = 0;
  for (const auto& p : pairs) positive += p.label == data::PairLabel::Positive ? 1 : 0;
  auto& m = ctx.summary.metrics;
  m["pairs"] = static_cast<double>(pairs.size());
  m["pairs_positive"] = static_cast<double>(positive);
  m["pairs_negative"] = static_cast<double>(pairs.size() - positive);
  m["train_pairs"] = static_cast<double>(data::pairs_in(pairs, split, SplitPart::Train).size());
  m["validation_pairs"] = static_cast<double>(data::pairs_in(pairs, split, SplitPart::Validation).size());
  m["test_pairs"] = static_cast<double>(data::pairs_in(pairs, split, SplitPart::Test).size());
  m["train_images"] = static_cast<double>(data::images_in(series, split, SplitPart::Train).size());
  m["validation_images"] = static_cast<double>(data::images_in(series, split, SplitPart::Validation).size());
  m["test_images"] = static_cast<double>(data::images_in(series, split, SplitPart::Test).size());
}

void do_train_pretext(Context& ctx) {
  require(ctx.out(artifact::kPairs), ctx.summary.subcommand, "pairs");
  const auto split = load_split(ctx);
  const auto series = load_series(ctx);
  const auto pairs = read_pairs(ctx.out(artifact::kPairs), series, split);
  ctx.note(std::to_string(pairs.train.size()) + " training pairs, " + std::to_string(pairs.validation.size()) +
           " validation pairs");

  auto cfg = ctx.config.pretext;
  cfg.seed = ctx.config.seed;
  cfg.encoder = ctx.config.encoder;
  const auto result = pretext::train_pretext(pairs.train, pairs.validation, cfg, epoch_logger(ctx));
  result.model.save(ctx.out(artifact::kPretextCheckpoint));
  pretext::write_history(ctx.out(artifact::kPretextHistory), result.history);

  // Score the checkpointed (float32) weights, as every later stage sees them.
  const auto saved = pretext::PretextModel::load(ctx.out(artifact::kPretextCheckpoint));
  auto& m = ctx.summary.metrics;
  m["train_pairs"] = static_cast<double>(pairs.train.size());
  m["validation_pairs"] = static_cast<double>(pairs.validation.size());
  m["best_epoch"] = static_cast<double>(result.history.best_epoch);
  m["parameters"] = static_cast<double>(nn::parameter_count(saved.parameters()));
  if (!pairs.validation.empty()) m["validation_accuracy"] = pretext::eval_pretext(saved, pairs.validation).accuracy;
  if (!pairs.test.empty()) m["test_accuracy"] = pretext::eval_pretext(saved, pairs.test).accuracy;
}

void do_embed(Context& ctx) {
  require(ctx.out(artifact::kPretextCheckpoint), ctx.summary.subcommand, "train-pretext");
  const auto series = load_series(ctx);
  const auto encoder = pretext::load_encoder(nn::read_checkpoint(ctx.out(artifact::kPretextCheckpoint)));
  const auto emb = pretext::embed_all(encoder, series);
  pretext::write_embeddings(ctx.out(artifact::kEmbeddings), emb);
  ctx.summary.metrics["embeddings"] = static_cast<double>(emb.size());
}

void do_cluster(Context& ctx) {
  require(ctx.out(artifact::kEmbeddings), ctx.summary.subcommand, "embed");
  const auto split = load_split(ctx);
  const auto emb = pretext::read_embeddings(ctx.out(artifact::kEmbeddings));
  const auto meta = image_meta(ctx, emb);
  const auto pts = points_of(emb);

  auto opts = ctx.config.cluster;
  opts.seed = ctx.config.seed;
  const auto model = stagedisc::kmeans(pts, opts);
  const auto projection = stagedisc::pca_2d(pts);
  const auto stats = stagedisc::cluster_stats(model.k, model.assignments, meta, train_mask(meta, split));
  for (const auto& n : stats.notices) ctx.note("notice: " + n);

  stagedisc::write_centroids(ctx.out(artifact::kCentroids), model.centroids);
  stagedisc::write_projection(ctx.out(artifact::kProjection), projection, meta, model.assignments);
  stagedisc::write_cluster_stats(ctx.out(artifact::kClusterStats), stats);

  auto& m = ctx.summary.metrics;
  m["k"] = static_cast<double>(model.k);
  m["inertia"] = model.inertia;
  m["iterations"] = static_cast<double>(model.iterations);
  m["restart"] = static_cast<double>(model.restart);
  m["pca_variance_fraction_1"] = projection.variance_fraction[0];
  m["pca_variance_fraction_2"] = projection.variance_fraction[1];
}

struct PseudoLabelResult {
  std::vector<stagedisc::PseudoLabel> labels;
  std::vector<int> assignments;
  std::vector<stagedisc::ImageMeta> meta;
};

PseudoLabelResult compute_pseudo_labels(const Context& ctx, stagedisc::StageMapping* mapping_out = nullptr) {
  require(ctx.out(artifact::kCentroids), ctx.summary.subcommand, "cluster");
  require(ctx.out(artifact::kEmbeddings), ctx.summary.subcommand, "embed");
  const auto split = load_split(ctx);
  const auto emb = pretext::read_embeddings(ctx.out(artifact::kEmbeddings));
  const auto centroids = stagedisc::read_centroids(ctx.out(artifact::kCentroids));
  PseudoLabelResult r;
  r.meta = image_meta(ctx, emb);
  r.assignments = stagedisc::assign(points_of(emb), centroids);
  const auto stats = stagedisc::cluster_stats(centroids.size(), r.assignments, r.meta, train_mask(r.meta, split));
  const auto mapping = stagedisc::map_clusters_to_stages(stats);
  r.labels = stagedisc::export_pseudo_labels(mapping, r.assignments, r.meta);
  if (mapping_out) *mapping_out = mapping;
  return r;
}

// Purity and stage agreement against synthetic ground truth, when present.
void truth_metrics(const Context& ctx, const PseudoLabelResult& r, std::map<std::string, double>& m) {
  if (!fs::exists(ctx.data(artifact::kGroundTruth))) return;
  const auto truth = synth::read_ground_truth(ctx.data(artifact::kGroundTruth));
  std::vector<int> true_stage;
  std::size_t agree = 0;
  for (const auto& l : r.labels) {
    true_stage.push_back(truth.stage_of(l.key));
    agree += true_stage.back() == l.stage ? 1 : 0;
  }
  m["cluster_purity"] = stagedisc::cluster_purity(r.assignments, true_stage);
  m["pseudo_label_truth_agreement"] = static_cast<double>(agree) / static_cast<double>(r.labels.size());
}

void do_pseudo_label(Context& ctx) {
  stagedisc::StageMapping mapping;
  const auto r = compute_pseudo_labels(ctx, &mapping);
  stagedisc::write_stage_mapping(ctx.out(artifact::kStageMapping), mapping);
  stagedisc::write_pseudo_labels(ctx.out(artifact::kPseudoLabels), r.labels);
  ctx.summary.metrics["pseudo_labels"] = static_cast<double>(r.labels.size());
  std::array<std::size_t, 4> per_stage{};
  for (const auto& l : r.labels) ++per_stage[static_cast<std::size_t>(l.stage)];
  for (std::size_t s = 0; s < 4; ++s) ctx.summary.metrics["stage_" + std::to_string(s) + "_count"] = static_cast<double>(per_stage[s]);
  truth_metrics(ctx, r, ctx.summary.metrics);
}

downstream::LabelTable load_pseudo(const Context& ctx) {
  require(ctx.out(artifact::kPseudoLabels), ctx.summary.subcommand, "pseudo-label");
  return downstream::read_label_table(ctx.out(artifact::kPseudoLabels), downstream::LabelSource::Pseudo);
}

downstream::StageConfig stage_config(const Context& ctx) {
  auto cfg = ctx.config.stage;
  cfg.seed = ctx.config.seed;
  return cfg;
}

void do_finetune(Context& ctx) {
  require(ctx.out(artifact::kPretextCheckpoint), ctx.summary.subcommand, "train-pretext");
  const auto labels = load_pseudo(ctx);
  const auto split = load_split(ctx);
  const auto series = load_series(ctx);
  const auto result = downstream::finetune(nn::read_checkpoint(ctx.out(artifact::kPretextCheckpoint)), series, labels,
                                           split, stage_config(ctx), epoch_logger(ctx));
  result.model.save(ctx.out(artifact::kStageCheckpoint));
  pretext::write_history(ctx.out(artifact::kFinetuneHistory), result.history);
  const auto saved = downstream::StageClassifier::load(ctx.out(artifact::kStageCheckpoint));
  ctx.summary.metrics["best_epoch"] = static_cast<double>(result.history.best_epoch);
  ctx.summary.metrics["test_accuracy"] = downstream::eval_stage(saved, series, labels, split, SplitPart::Test).accuracy;
}

void do_baseline(Context& ctx) {
  const auto labels = load_human(ctx);
  const auto split = load_split(ctx);
  const auto series = load_series(ctx);
  auto enc = ctx.config.encoder;
  enc.input_side = ctx.config.load.image_side;
  const auto result = downstream::train_baseline(enc, series, labels, split, stage_config(ctx), epoch_logger(ctx));
  result.model.save(ctx.out(artifact::kBaselineCheckpoint));
  pretext::write_history(ctx.out(artifact::kBaselineHistory), result.history);
  const auto saved = downstream::StageClassifier::load(ctx.out(artifact::kBaselineCheckpoint));
  ctx.summary.metrics["best_epoch"] = static_cast<double>(result.history.best_epoch);
  ctx.summary.metrics["test_accuracy"] = downstream::eval_stage(saved, series, labels, split, SplitPart::Test).accuracy;
}

void write_agreement(const fs::path& path, const downstream::AgreementResult& a) {
  auto out = detail::open_output(path);
  out << "# split matches count fraction\n";
  for (auto part : kParts) {
    const auto i = static_cast<std::size_t>(part);
    out << data::to_string(part) << ' ' << a.matches[i] << ' ' << a.counts[i] << ' ' << detail::fmt(a.fraction(part)) << '\n';
  }
  out << "overall " << a.total_matches << ' ' << a.total << ' ' << detail::fmt(a.overall()) << '\n';
}

void do_agreement(Context& ctx) {
  const auto pseudo = load_pseudo(ctx);
  const auto human = load_human(ctx);
  const auto split = load_split(ctx);
  const auto a = downstream::agreement(human, pseudo, split);
  write_agreement(ctx.out(artifact::kAgreement), a);
  for (auto part : kParts) ctx.summary.metrics[std::string(data::to_string(part))] = a.fraction(part);
  ctx.summary.metrics["overall"] = a.overall();
}

void do_evaluate(Context& ctx) {
  require(ctx.out(artifact::kStageCheckpoint), ctx.summary.subcommand, "finetune");
  require(ctx.out(artifact::kPretextCheckpoint), ctx.summary.subcommand, "train-pretext");
  require(ctx.out(artifact::kPairs), ctx.summary.subcommand, "pairs");
  const auto pseudo = load_pseudo(ctx);
  const auto split = load_split(ctx);
  const auto series = load_series(ctx);

  std::vector<std::pair<std::string, std::string>> lines;
  auto put = [&](const std::string& key, double v) {
    lines.emplace_back(key, detail::fmt(v));
    ctx.summary.metrics[key] = v;
  };
  std::ostringstream confusion;
  confusion << "# model split true predicted_0 predicted_1 predicted_2 predicted_3\n";
  auto stage_block = [&](const std::string& name, const downstream::StageClassifier& model,
                         const downstream::LabelTable& labels) {
    for (auto part : kParts) {
      if (split.wounds(part).empty()) continue;
      const std::string p(data::to_string(part));
      const auto ev = downstream::eval_stage(model, series, labels, split, part);
      put(name + ".accuracy." + p, ev.accuracy);
      for (std::size_t t = 0; t < 4; ++t) {
        std::ostringstream row;
        confusion << name << ' ' << p << ' ' << t;
        for (std::size_t q = 0; q < 4; ++q) {
          row << (q ? " " : "") << ev.confusion[t][q];
          confusion << ' ' << ev.confusion[t][q];
        }
        confusion << '\n';
        lines.emplace_back(name + ".confusion." + p + ".true" + std::to_string(t), row.str());
      }
    }
  };

  const auto pretext_model = pretext::PretextModel::load(ctx.out(artifact::kPretextCheckpoint));
  const auto pairs = read_pairs(ctx.out(artifact::kPairs), series, split);
  const std::array<const std::vector<data::ImagePair>*, 3> pair_parts = {&pairs.train, &pairs.validation, &pairs.test};
  for (auto part : kParts) {
    const auto* pp = pair_parts[static_cast<std::size_t>(part)];
    if (pp->empty()) continue;
    put("pretext.accuracy." + std::string(data::to_string(part)), pretext::eval_pretext(pretext_model, *pp).accuracy);
  }

  if (fs::exists(ctx.data(artifact::kGroundTruth)) && fs::exists(ctx.out(artifact::kCentroids))) {
    const auto r = compute_pseudo_labels(ctx);
    std::map<std::string, double> tm;
    truth_metrics(ctx, r, tm);
    for (const auto& [k, v] : tm) put("cluster." + k, v);
  }

  stage_block("stage", downstream::StageClassifier::load(ctx.out(artifact::kStageCheckpoint)), pseudo);

  if (!ctx.config.human_labels.empty()) {
    const auto human = load_human(ctx);
    if (fs::exists(ctx.out(artifact::kBaselineCheckpoint))) {
      stage_block("baseline", downstream::StageClassifier::load(ctx.out(artifact::kBaselineCheckpoint)), human);
    }
    const auto a = downstream::agreement(human, pseudo, split);
    write_agreement(ctx.out(artifact::kAgreement), a);
    for (auto part : kParts) {
      if (a.counts[static_cast<std::size_t>(part)] > 0) put("agreement." + std::string(data::to_string(part)), a.fraction(part));
    }
    put("agreement.overall", a.overall());
  }

  auto out = detail::open_output(ctx.out(artifact::kMetrics));
  out << "# key value\n";
  for (const auto& [k, v] : lines) out << k << ' ' << v << '\n';
  auto cout = detail::open_output(ctx.out(artifact::kConfusion));
  cout << confusion.str();
}

void do_report(Context& ctx) {
  require(ctx.out(artifact::kMetrics), ctx.summary.subcommand, "evaluate");
  const fs::path dir = ctx.out(artifact::kReportDir);
  fs::create_directories(dir);
  const char* candidates[] = {artifact::kMetrics,         artifact::kPretextHistory, artifact::kFinetuneHistory,
                              artifact::kBaselineHistory, artifact::kProjection,     artifact::kClusterStats,
                              artifact::kStageMapping,    artifact::kConfusion,      artifact::kAgreement,
                              artifact::kPseudoLabels,    artifact::kCentroids};
  auto index = detail::open_output(dir / "index.txt");
  index << "# file\n";
  std::size_t copied = 0;
  for (const char* name : candidates) {
    if (!fs::exists(ctx.out(name))) continue;
    fs::copy_file(ctx.out(name), dir / name, fs::copy_options::overwrite_existing);
    index << name << '\n';
    ++copied;
  }
  ctx.summary.metrics["files"] = static_cast<double>(copied);
}

}  // namespace

Summary run(std::string_view subcommand, const RunConfig& config, std::ostream* log) {
  using Handler = void (*)(Context&);
  static const std::map<std::string, Handler, std::less<>> handlers = {
      {"synth", do_synth},       {"pairs", do_pairs},       {"train-pretext", do_train_pretext},
      {"embed", do_embed},       {"cluster", do_cluster},   {"pseudo-label", do_pseudo_label},
      {"finetune", do_finetune}, {"baseline", do_baseline}, {"evaluate", do_evaluate},
      {"agreement", do_agreement}, {"report", do_report}};
  auto it = handlers.find(subcommand);
  if (it == handlers.end()) throw ConfigError("unknown subcommand '" + std::string(subcommand) + "'");

  Context ctx{config, log, {}};
  ctx.summary.subcommand = std::string(subcommand);
  ctx.summary.config = config;
  ctx.config.synth.seed = config.seed;
  ctx.config.encoder.input_side = config.load.image_side;
  fs::create_directories(ctx.config.out);

  const auto start = std::chrono::steady_clock::now();
  it->second(ctx);
  ctx.summary.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_summary(summary_path(config, subcommand), ctx.summary);
  return ctx.summary;
}

}  // namespace healnet::pipeline
