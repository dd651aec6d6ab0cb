// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance <work_dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "healnet/dataset.hpp"
#include "healnet/downstream.hpp"
#include "healnet/error.hpp"
#include "healnet/gradcheck.hpp"
#include "healnet/pipeline.hpp"
#include "healnet/runtime.hpp"
#include "healnet/stagedisc.hpp"

namespace fs = std::filesystem;
using namespace healnet;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances.
constexpr double kC1MaxSeconds = 5.0;
constexpr double kC2MaxRelError = 1e-4;
constexpr std::uint64_t kC2Seeds = 20;
constexpr double kC2MaxSeconds = 120.0;
constexpr double kC3InertiaRelTol = 1e-9;
constexpr double kC3PcaTol = 1e-6;
constexpr double kC4QuartileTol = 1e-12;
constexpr double kC5PretextMin = 0.90;
constexpr double kC5PurityMin = 0.80;
constexpr double kC5StageMin = 0.85;
constexpr double kC5MaxSeconds = 30.0 * 60.0;
constexpr std::uint64_t kC7Seeds = 5;
constexpr double kC8Tol = 1e-12;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::map<int, bool> g_results;

void report(int id, const std::string& title, const Outcome& o, const std::string& measured) {
  g_results[id] = o.pass;
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " -- " << measured;
  if (!o.pass) std::cout << " [" << o.detail << "]";
  std::cout << std::endl;
}

template <typename F>
void guarded(int id, const std::string& title, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    Outcome o;
    o.require(false, std::string("exception: ") + e.what());
    report(id, title, o, "aborted");
  }
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t0 = Clock::now();
  const auto series = healnet::testing::mock_series(8, 16);
  const auto pairs = data::generate_pairs(series);
  const auto positive = std::count_if(pairs.begin(), pairs.end(),
                                      [](const auto& p) { return p.label == data::PairLabel::Positive; });
  const auto split = data::make_split(series, 1, 1, 0);
  const std::size_t tr = data::pairs_in(pairs, split, data::SplitPart::Train).size();
  const std::size_t va = data::pairs_in(pairs, split, data::SplitPart::Validation).size();
  const std::size_t te = data::pairs_in(pairs, split, data::SplitPart::Test).size();
  const std::size_t itr = data::images_in(series, split, data::SplitPart::Train).size();
  const std::size_t iva = data::images_in(series, split, data::SplitPart::Validation).size();
  const std::size_t ite = data::images_in(series, split, data::SplitPart::Test).size();
  const double secs = seconds_since(t0);
  Outcome o;
  o.require(pairs.size() == 3840, "pairs != 3840");
  o.require(positive == 1920 && pairs.size() - positive == 1920, "not 1920/1920");
  o.require(tr == 2880 && va == 480 && te == 480, "pair split != 2880/480/480");
  o.require(itr == 192 && iva == 32 && ite == 32, "image split != 192/32/32");
  o.require(tr * 4 == pairs.size() * 3, "train share != 75%");
  o.require(secs < kC1MaxSeconds, "runtime >= 5 s");
  std::ostringstream m;
  m << pairs.size() << " pairs (" << positive << "/" << pairs.size() - positive << "), split " << tr << "/" << va << "/"
    << te << " pairs, " << itr << "/" << iva << "/" << ite << " images, " << fmt(secs) << " s";
  report(1, "pair and split arithmetic", o, m.str());
}

void criterion2() {
  const auto t0 = Clock::now();
  Outcome o;
  double worst = 0.0;
  std::string worst_kind;
  std::size_t checks = 0;
  for (const auto& kind : grad_check_kinds()) {
    for (std::uint64_t seed = 0; seed < kC2Seeds; ++seed) {
      const auto r = grad_check_kind(kind, seed);
      ++checks;
      if (r.max_relative_error > worst) worst = r.max_relative_error, worst_kind = kind;
      if (!(r.max_relative_error < kC2MaxRelError)) {
        o.require(false, kind + " seed " + std::to_string(seed) + " rel err " + fmt(r.max_relative_error));
      }
    }
  }
  const double secs = seconds_since(t0);
  o.require(secs < kC2MaxSeconds, "runtime >= 120 s");
  report(2, "finite-difference gradient suite", o,
         std::to_string(grad_check_kinds().size()) + " kinds x " + std::to_string(kC2Seeds) + " seeds, worst " +
             fmt(worst) + " (" + worst_kind + "), " + fmt(secs) + " s");
}

// Minimum within-cluster sum of squares over all partitions into exactly k
// non-empty parts, enumerated as restricted growth strings.
double brute_force_inertia(const stagedisc::Points& pts, int k) {
  const std::size_t n = pts.size();
  std::vector<int> label(n, 0);
  double best = std::numeric_limits<double>::infinity();
  auto cost = [&] {
    double total = 0.0;
    for (int c = 0; c < k; ++c) {
      std::vector<double> mean(pts[0].size(), 0.0);
      double count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != c) continue;
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += pts[i][j];
        ++count;
      }
      for (auto& v : mean) v /= count;
      for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != c) continue;
        for (std::size_t j = 0; j < mean.size(); ++j) total += (pts[i][j] - mean[j]) * (pts[i][j] - mean[j]);
      }
    }
    return total;
  };
  auto recurse = [&](auto&& self, std::size_t i, int used) -> void {
    if (i == n) {
      if (used == k) best = std::min(best, cost());
      return;
    }
    if (static_cast<int>(n - i) < k - used) return;
    for (int c = 0; c <= std::min(used, k - 1); ++c) {
      label[i] = c;
      self(self, i + 1, std::max(used, c + 1));
    }
  };
  recurse(recurse, 0, 0);
  return best;
}

// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t r = 0; r < n; ++r) {
          const double arp = a[r][p], arq = a[r][q];
          a[r][p] = c * arp - s * arq;
          a[r][q] = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double apr = a[p][r], aqr = a[q][r];
          a[p][r] = c * apr - s * aqr;
          a[q][r] = s * apr + c * aqr;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a[i][i];
  std::sort(eig.rbegin(), eig.rend());
  return eig;
}

void criterion3() {
  Outcome o;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 0.3);
  const double centers[4][2] = {{0, 0}, {10, 0}, {0, 10}, {10, 10}};
  stagedisc::Points blobs;
  for (const auto& c : centers) {
    for (int i = 0; i < 3; ++i) blobs.push_back({c[0] + g(rng), c[1] + g(rng)});
  }
  const double best = brute_force_inertia(blobs, 4);
  const auto model = stagedisc::kmeans(blobs, {.k = 4, .seed = 0, .restarts = 10});
  const double rel = std::abs(model.inertia - best) / best;
  o.require(rel <= kC3InertiaRelTol, "kmeans inertia " + fmt(model.inertia) + " vs brute force " + fmt(best));

  std::mt19937_64 prng(13);
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t n = 50, d = 16;
  stagedisc::Points pts(n, stagedisc::Point(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) pts[i][j] = unit(prng) * (1.0 + 0.2 * static_cast<double>(j));
  }
  std::vector<double> mean(d, 0.0);
  for (const auto& p : pts) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += p[j] / static_cast<double>(n);
  }
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& p : pts) {
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov[a][b] += (p[a] - mean[a]) * (p[b] - mean[b]) / static_cast<double>(n - 1);
    }
  }
  const auto eig = jacobi_eigenvalues(cov);
  const double total = std::accumulate(eig.begin(), eig.end(), 0.0);
  const auto proj = stagedisc::pca_2d(pts);
  const double e0 = std::abs(proj.variance_fraction[0] - eig[0] / total);
  const double e1 = std::abs(proj.variance_fraction[1] - eig[1] / total);
  o.require(e0 <= kC3PcaTol && e1 <= kC3PcaTol, "PCA fractions differ from Jacobi oracle");
  report(3, "clustering and PCA oracles", o,
         "inertia " + fmt(model.inertia) + " vs optimum " + fmt(best) + " (rel " + fmt(rel) + "), PCA fractions " +
             fmt(proj.variance_fraction[0]) + "/" + fmt(proj.variance_fraction[1]) + " max err " +
             fmt(std::max(e0, e1)));
}

void criterion4() {
  Outcome o;
  struct Fixture {
    std::vector<double> values;
    double q1, median, q3;
  };
  // Hand-interpolated: position p*(n-1) in the sorted values.
  const std::vector<Fixture> fixtures = {
      {{1, 2, 3, 4, 5}, 2.0, 3.0, 4.0},
      {{0, 0, 0, 1}, 0.0, 0.0, 0.25},
      {{0, 1}, 0.25, 0.5, 0.75},
      {{7}, 7.0, 7.0, 7.0},
      {{3, 1, 4, 1, 5, 9, 2, 6}, 1.75, 3.5, 5.25},
      {{12, 13}, 12.25, 12.5, 12.75},
  };
  double worst = 0.0;
  for (const auto& f : fixtures) {
    const auto q = stagedisc::quartiles(f.values);
    worst = std::max({worst, std::abs(q.q1 - f.q1), std::abs(q.median - f.median), std::abs(q.q3 - f.q3)});
  }
  o.require(worst <= kC4QuartileTol, "quartile mismatch " + fmt(worst));

  // Clusters 2, 0, 3, 1 hold days with pooled medians 0, 3, 7, 12.5.
  const std::vector<std::pair<int, std::vector<int>>> cluster_days = {
      {2, {0, 0, 1}}, {0, {2, 3, 4}}, {3, {6, 7, 9}}, {1, {12, 13}}};
  std::vector<stagedisc::ImageMeta> meta;
  std::vector<int> assignments;
  int wound = 0;
  for (const auto& [cluster, days] : cluster_days) {
    for (int day : days) {
      meta.push_back({{"w" + std::to_string(wound++), day}, wound % 2 ? data::Cohort::Young : data::Cohort::Aged});
      assignments.push_back(cluster);
    }
  }
  const auto stats = stagedisc::cluster_stats(4, assignments, meta);
  std::vector<double> medians(4);
  for (int c = 0; c < 4; ++c) medians[c] = stats.find("pooled", c)->median;
  o.require(medians == std::vector<double>{3, 12.5, 0, 7}, "pooled medians not {0, 3, 7, 12.5}");
  const auto mapping = stagedisc::map_clusters_to_stages(stats);
  o.require(mapping.stage_of_cluster == std::vector<int>{1, 3, 0, 2}, "mapping not chronological");
  std::ostringstream m;
  m << fixtures.size() << " quartile fixtures, max err " << fmt(worst) << "; clusters->stages";
  for (int s : mapping.stage_of_cluster) m << ' ' << stagedisc::to_string(static_cast<stagedisc::Stage>(s));
  report(4, "quartiles and stage mapping", o, m.str());
}

// ---------------------------------------------------------------------------

const std::vector<std::string> kPipeline = {"synth",    "pairs",    "train-pretext", "embed",     "cluster", "pseudo-label",
                                            "finetune", "baseline", "evaluate",      "agreement", "report"};

pipeline::RunConfig run_config(const fs::path& out, std::uint64_t seed, const fs::path& data_root) {
  pipeline::RunConfig c;
  c.out = out;
  c.seed = seed;
  c.data_root = data_root;
  c.human_labels = (data_root.empty() ? out : data_root) / pipeline::artifact::kHumanProxy;
  return c;
}

// Runs every stage (synth only when the run owns its data); returns the
// evaluate metrics and the wall time.
std::pair<std::map<std::string, double>, double> run_pipeline(const pipeline::RunConfig& config) {
  fs::remove_all(config.out);
  const auto t0 = Clock::now();
  std::map<std::string, double> metrics;
  for (const auto& sub : kPipeline) {
    if (sub == "synth" && !config.data_root.empty()) continue;
    const auto ts = Clock::now();
    const auto s = pipeline::run(sub, config);
    std::cerr << "  [" << config.out.filename().string() << "] " << sub << " " << fmt(seconds_since(ts)) << " s"
              << std::endl;
    if (sub == "evaluate") metrics = s.metrics;
  }
  return {metrics, seconds_since(t0)};
}

double at_or_nan(const std::map<std::string, double>& m, const std::string& key) {
  const auto it = m.find(key);
  return it == m.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
}

struct SeedRun {
  double stage_vs_pseudo = 0.0;
  double stage_vs_human = 0.0;
  double baseline_vs_human = 0.0;
};

SeedRun score_seed(const pipeline::RunConfig& config, const std::map<std::string, double>& metrics) {
  SeedRun r;
  r.stage_vs_pseudo = at_or_nan(metrics, "stage.accuracy.test");
  r.baseline_vs_human = at_or_nan(metrics, "baseline.accuracy.test");
  const auto series = data::load_dataset(config.dataset_root(), config.load);
  const auto split = data::read_split(config.out / pipeline::artifact::kSplit);
  const auto human = downstream::read_label_table(config.human_labels, downstream::LabelSource::Human);
  const auto model = downstream::StageClassifier::load(config.out / pipeline::artifact::kStageCheckpoint);
  r.stage_vs_human = downstream::eval_stage(model, series, human, split, data::SplitPart::Test).accuracy;
  return r;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void criteria5to7(const fs::path& work) {
  const fs::path first = work / "seed0";
  const auto config0 = run_config(first, 0, {});
  std::map<std::string, double> m0;
  double secs0 = 0.0;
  bool ran0 = false;

  guarded(5, "end-to-end on synthetic data", [&] {
    std::tie(m0, secs0) = run_pipeline(config0);
    ran0 = true;
    const double pre = at_or_nan(m0, "pretext.accuracy.test");
    const double purity = at_or_nan(m0, "cluster.cluster_purity");
    const double stage = at_or_nan(m0, "stage.accuracy.test");
    Outcome o;
    o.require(pre >= kC5PretextMin, "pretext test accuracy < 0.90");
    o.require(purity >= kC5PurityMin, "cluster purity < 0.8");
    o.require(stage >= kC5StageMin, "stage test accuracy vs pseudo-labels < 0.85");
    o.require(secs0 < kC5MaxSeconds, "runtime >= 30 min");
    report(5, "end-to-end on synthetic data", o,
           "pretext " + fmt(pre) + ", purity " + fmt(purity) + ", stage " + fmt(stage) + ", " + fmt(secs0) + " s");
  });

  guarded(6, "pipeline determinism", [&] {
    Outcome o;
    o.require(ran0, "criterion 5 run unavailable");
    if (ran0) {
      const auto config_b = run_config(work / "seed0_repeat", 0, {});
      run_pipeline(config_b);
      const auto a = healnet::testing::slurp(first / pipeline::artifact::kMetrics);
      const auto b = healnet::testing::slurp(config_b.out / pipeline::artifact::kMetrics);
      o.require(!a.empty(), "empty metrics file");
      o.require(a == b, "metrics files differ");
      report(6, "pipeline determinism", o, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different"));
    } else {
      report(6, "pipeline determinism", o, "not run");
    }
  });

  guarded(7, "direction vs baseline", [&] {
    Outcome o;
    o.require(ran0, "criterion 5 run unavailable");
    if (!ran0) {
      report(7, "direction vs baseline", o, "not run");
      return;
    }
    std::vector<SeedRun> runs = {score_seed(config0, m0)};
    for (std::uint64_t seed = 1; seed < kC7Seeds; ++seed) {
      const auto config = run_config(work / ("seed" + std::to_string(seed)), seed, first);
      const auto [m, secs] = run_pipeline(config);
      runs.push_back(score_seed(config, m));
    }
    std::vector<double> fine, fine_human, base;
    std::ostringstream per_seed;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      fine.push_back(runs[i].stage_vs_pseudo);
      fine_human.push_back(runs[i].stage_vs_human);
      base.push_back(runs[i].baseline_vs_human);
      per_seed << (i ? ", " : "") << fmt(runs[i].stage_vs_pseudo) << "/" << fmt(runs[i].baseline_vs_human);
    }
    const double mf = median(fine), mb = median(base), mfh = median(fine_human);
    o.require(mf >= mb, "median fine-tuned " + fmt(mf) + " < median baseline " + fmt(mb));
    report(7, "direction vs baseline", o,
           "median fine-tuned (vs pseudo-labels) " + fmt(mf) + " >= median baseline (vs human proxy) " + fmt(mb) +
               "; per seed " + per_seed.str() + "; info: median fine-tuned vs human proxy " + fmt(mfh));
  });
}

// ---------------------------------------------------------------------------

void criterion8() {
  Outcome o;
  auto table = [](std::initializer_list<std::pair<data::ImageKey, int>> rows) {
    downstream::LabelTable t;
    for (const auto& [k, v] : rows) t.stages[k] = v;
    return t;
  };
  data::SplitSpec one;
  one.train = {"a"};
  const auto a = table({{{"a", 0}, 0}, {{"a", 1}, 1}, {{"a", 2}, 2}, {{"a", 3}, 3}});
  const auto b = table({{{"a", 0}, 0}, {{"a", 1}, 1}, {{"a", 2}, 2}, {{"a", 3}, 0}});
  const auto r1 = downstream::agreement(a, b, one);
  o.require(r1.overall() == 0.75, "3/4 fixture gave " + fmt(r1.overall()));
  o.require(r1.fraction(data::SplitPart::Train) == 0.75, "3/4 train fraction");

  // Train 5/8, validation 1/2, test 2/3: overall 8/13.
  data::SplitSpec three;
  three.train = {"t1", "t2"};
  three.validation = {"v"};
  three.test = {"s"};
  downstream::LabelTable x, y;
  auto add = [&](const std::string& w, int day, int lx, int ly) {
    x.stages[{w, day}] = lx;
    y.stages[{w, day}] = ly;
  };
  const int train_agree[8] = {1, 1, 0, 1, 0, 1, 0, 1};
  for (int i = 0; i < 8; ++i) add(i < 4 ? "t1" : "t2", i % 4, i % 4, train_agree[i] ? i % 4 : (i + 1) % 4);
  add("v", 0, 2, 2);
  add("v", 1, 2, 3);
  add("s", 0, 1, 1);
  add("s", 1, 3, 3);
  add("s", 2, 0, 1);
  const auto r = downstream::agreement(x, y, three);
  const double ft = r.fraction(data::SplitPart::Train), fv = r.fraction(data::SplitPart::Validation),
               fs_ = r.fraction(data::SplitPart::Test);
  o.require(std::abs(ft - 5.0 / 8.0) <= kC8Tol, "train fraction " + fmt(ft));
  o.require(std::abs(fv - 1.0 / 2.0) <= kC8Tol, "validation fraction " + fmt(fv));
  o.require(std::abs(fs_ - 2.0 / 3.0) <= kC8Tol, "test fraction " + fmt(fs_));
  o.require(std::abs(r.overall() - 8.0 / 13.0) <= kC8Tol, "overall " + fmt(r.overall()));
  const double weighted = (8.0 * ft + 2.0 * fv + 3.0 * fs_) / 13.0;
  o.require(std::abs(weighted - r.overall()) <= kC8Tol, "weighted-average identity");
  report(8, "agreement fractions", o,
         "3/4 -> " + fmt(r1.overall()) + "; per split " + fmt(ft) + "/" + fmt(fv) + "/" + fmt(fs_) + ", overall " +
             fmt(r.overall()) + " = weighted " + fmt(weighted));
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "healnet_acceptance";
  fs::create_directories(work);
  const bool fast = std::getenv("HEALNET_ACCEPTANCE_SKIP_PIPELINE") != nullptr;

  guarded(1, "pair and split arithmetic", criterion1);
  guarded(2, "finite-difference gradient suite", criterion2);
  guarded(3, "clustering and PCA oracles", criterion3);
  guarded(4, "quartiles and stage mapping", criterion4);
  if (!fast) criteria5to7(work);
  guarded(8, "agreement fractions", criterion8);

  std::size_t failed = 0;
  for (const auto& [id, ok] : g_results) failed += ok ? 0 : 1;
  std::cout << (failed == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL") << " (" << g_results.size() - failed << "/"
            << g_results.size() << " criteria)" << std::endl;
  return failed == 0 && g_results.size() == (fast ? 5u : 8u) ? 0 : 1;
}
