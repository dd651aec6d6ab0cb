#include "healnet/stagedisc.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "healnet/error.hpp"
#include "healnet/random.hpp"
#include "text_io.hpp"

namespace healnet::stagedisc {

namespace fs = std::filesystem;

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Hemostasis: return "hemostasis";
    case Stage::Inflammation: return "inflammation";
    case Stage::Proliferation: return "proliferation";
    case Stage::Maturation: return "maturation";
  }
  return "unknown";
}

namespace {

double squared_distance(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

void require_points(std::string_view op, const Points& points) {
  if (points.empty()) return;
  const std::size_t d = points.front().size();
  for (const auto& p : points) {
    if (p.size() != d) throw ShapeError(std::string(op) + ": points differ in dimension");
    for (double v : p) {
      if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite coordinate");
    }
  }
}

Points plus_plus_init(const Points& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.size();
  Points centroids;
  centroids.push_back(points[uniform_index(rng, n)]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points[i], centroids[0]);
  while (centroids.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        if (target < d2[i]) {
          pick = i;
          break;
        }
        target -= d2[i];
        pick = i;
      }
    } else {
      pick = uniform_index(rng, n);  // every point coincides with a centroid
    }
    centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points[i], centroids.back()));
  }
  return centroids;
}

}  // namespace

int nearest_centroid(const Point& point, const Points& centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(point, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<int> assign(const Points& points, const Points& centroids) {
  std::vector<int> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = nearest_centroid(points[i], centroids);
  return out;
}

double inertia(const Points& points, const Points& centroids, const std::vector<int>& assignments) {
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    s += squared_distance(points[i], centroids[static_cast<std::size_t>(assignments[i])]);
  }
  return s;
}

ClusterModel kmeans_single(const Points& points, std::size_t k, std::uint64_t seed, std::size_t max_iter, double tol) {
  if (k == 0) throw ValueError("kmeans: k must be positive");
  if (points.size() < k) {
    throw ValueError("kmeans: " + std::to_string(points.size()) + " points for k = " + std::to_string(k));
  }
  require_points("kmeans", points);
  const std::size_t n = points.size(), d = points.front().size();
  std::mt19937_64 rng(seed);

  ClusterModel model;
  model.k = k;
  model.centroids = plus_plus_init(points, k, rng);
  for (std::size_t it = 0; it < max_iter; ++it) {
    model.assignments = assign(points, model.centroids);
    model.inertia_trace.push_back(inertia(points, model.centroids, model.assignments));

    Points next(k, Point(d, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(model.assignments[i]);
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) next[c][j] += points[i][j];
    }
    std::set<std::size_t> reseeded;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        for (auto& v : next[c]) v /= static_cast<double>(counts[c]);
        continue;
      }
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (reseeded.count(i)) continue;
        const double dist = squared_distance(points[i], model.centroids[static_cast<std::size_t>(model.assignments[i])]);
        if (dist > far_d) {
          far_d = dist;
          far = i;
        }
      }
      reseeded.insert(far);
      next[c] = points[far];
    }

    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) shift = std::max(shift, std::sqrt(squared_distance(next[c], model.centroids[c])));
    model.centroids = std::move(next);
    model.iterations = it + 1;
    if (shift < tol) break;
  }
  model.assignments = assign(points, model.centroids);
  model.inertia = inertia(points, model.centroids, model.assignments);
  model.inertia_trace.push_back(model.inertia);
  return model;
}

ClusterModel kmeans(const Points& points, const KMeansOptions& options) {
  const std::size_t restarts = std::max<std::size_t>(1, options.restarts);
  ClusterModel best;
  for (std::size_t r = 0; r < restarts; ++r) {
    auto model = kmeans_single(points, options.k, derive_seed(options.seed, r), options.max_iter, options.tol);
    model.restart = r;
    if (r == 0 || model.inertia < best.inertia) best = std::move(model);
  }
  return best;
}

Projection pca_2d(const Points& points) {
  if (points.size() < 2) throw ValueError("pca_2d: need at least 2 points, got " + std::to_string(points.size()));
  require_points("pca_2d", points);
  const std::size_t n = points.size(), d = points.front().size();
  if (d < 2) throw ShapeError("pca_2d: need at least 2 dimensions");

  Projection out;
  out.mean.assign(d, 0.0);
  for (const auto& p : points) {
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += p[j];
  }
  for (auto& m : out.mean) m /= static_cast<double>(n);

  Eigen::MatrixXd centered(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centered(i, j) = points[i][j] - out.mean[j];
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  const Eigen::MatrixXd& v = svd.matrixV();
  const double total = sv.squaredNorm();

  for (std::size_t c = 0; c < 2; ++c) {
    Point comp(d, 0.0);
    if (c < static_cast<std::size_t>(v.cols())) {
      Eigen::Index arg = 0;
      v.col(static_cast<Eigen::Index>(c)).cwiseAbs().maxCoeff(&arg);
      const double sign = v(arg, static_cast<Eigen::Index>(c)) < 0.0 ? -1.0 : 1.0;
      for (std::size_t j = 0; j < d; ++j) comp[j] = sign * v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
    }
    out.components[c] = std::move(comp);
    const double s = c < static_cast<std::size_t>(sv.size()) ? sv(static_cast<Eigen::Index>(c)) : 0.0;
    out.variance_fraction[c] = total > 0.0 ? s * s / total : 0.0;
  }
  out.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (points[i][j] - out.mean[j]) * out.components[c][j];
      out.points[i][c] = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ValueError("quantile: no values");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (values[lo + 1] - values[lo]) * frac;
}

Quartiles quartiles(const std::vector<double>& values) {
  if (values.empty()) throw ValueError("quartiles: no values");
  Quartiles q;
  q.count = values.size();
  q.q1 = quantile(values, 0.25);
  q.median = quantile(values, 0.5);
  q.q3 = quantile(values, 0.75);
  q.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return q;
}

std::optional<Quartiles> ClusterStats::find(std::string_view group, int cluster) const {
  for (const auto& r : rows) {
    if (r.group == group && r.cluster == cluster) return r.stats;
  }
  return std::nullopt;
}

ClusterStats cluster_stats(std::size_t k, const std::vector<int>& assignments, const std::vector<ImageMeta>& meta,
                           const std::vector<bool>& include) {
  if (assignments.size() != meta.size()) {
    throw ShapeError("cluster_stats: " + std::to_string(assignments.size()) + " assignments for " +
                     std::to_string(meta.size()) + " records");
  }
  if (!include.empty() && include.size() != meta.size()) throw ShapeError("cluster_stats: include mask size mismatch");

  const std::array<std::string, 3> groups = {"young", "aged", "pooled"};
  std::vector<std::array<std::vector<double>, 3>> days(k);
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (!include.empty() && !include[i]) continue;
    const int c = assignments[i];
    if (c < 0 || static_cast<std::size_t>(c) >= k) throw ValueError("cluster_stats: assignment out of range");
    const double day = meta[i].key.day;
    days[static_cast<std::size_t>(c)][meta[i].cohort == data::Cohort::Young ? 0 : 1].push_back(day);
    days[static_cast<std::size_t>(c)][2].push_back(day);
  }

  ClusterStats out;
  out.k = k;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t c = 0; c < k; ++c) {
      const auto& v = days[c][g];
      if (v.empty()) {
        out.notices.push_back("no " + groups[g] + " images in cluster " + std::to_string(c));
        continue;
      }
      out.rows.push_back({groups[g], static_cast<int>(c), quartiles(v)});
    }
  }
  return out;
}

StageMapping map_clusters_to_stages(const ClusterStats& stats) {
  if (stats.k != kStageCount) {
    throw ValueError("map_clusters_to_stages: stage names are defined for k = 4, got k = " + std::to_string(stats.k));
  }
  struct Key {
    bool missing;
    double median, mean;
    int cluster;
  };
  std::vector<Key> keys;
  for (int c = 0; c < static_cast<int>(stats.k); ++c) {
    const auto q = stats.find("pooled", c);
    keys.push_back({!q.has_value(), q ? q->median : 0.0, q ? q->mean : 0.0, c});
  }
  std::sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
    return std::tie(a.missing, a.median, a.mean, a.cluster) < std::tie(b.missing, b.median, b.mean, b.cluster);
  });
  StageMapping m;
  m.stage_of_cluster.assign(stats.k, 0);
  for (std::size_t s = 0; s < keys.size(); ++s) m.stage_of_cluster[static_cast<std::size_t>(keys[s].cluster)] = static_cast<int>(s);
  return m;
}

std::vector<PseudoLabel> export_pseudo_labels(const StageMapping& mapping, const std::vector<int>& assignments,
                                              const std::vector<ImageMeta>& meta) {
  if (assignments.size() != meta.size()) throw ShapeError("export_pseudo_labels: assignments and records differ in length");
  std::vector<PseudoLabel> out;
  out.reserve(meta.size());
  for (std::size_t i = 0; i < meta.size(); ++i) {
    const int c = assignments[i];
    if (c < 0 || static_cast<std::size_t>(c) >= mapping.stage_of_cluster.size()) {
      throw ValueError("export_pseudo_labels: cluster " + std::to_string(c) + " has no stage");
    }
    out.push_back({meta[i].key, c, mapping.stage_of_cluster[static_cast<std::size_t>(c)]});
  }
  return out;
}

double cluster_purity(const std::vector<int>& assignments, const std::vector<int>& truth) {
  if (assignments.size() != truth.size() || assignments.empty()) throw ValueError("cluster_purity: size mismatch or empty");
  std::map<int, std::map<int, std::size_t>> votes;
  for (std::size_t i = 0; i < truth.size(); ++i) ++votes[assignments[i]][truth[i]];
  std::size_t matched = 0;
  for (const auto& [cluster, counts] : votes) {
    std::size_t best = 0;
    for (const auto& [stage, n] : counts) best = std::max(best, n);
    matched += best;
  }
  return static_cast<double>(matched) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------

void write_centroids(const fs::path& path, const Points& centroids) {
  auto out = detail::open_output(path);
  out << "# cluster";
  if (!centroids.empty()) {
    for (std::size_t j = 0; j < centroids.front().size(); ++j) out << " c" << j;
  }
  out << '\n';
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    out << c;
    for (double v : centroids[c]) out << ' ' << detail::fmt_exact(v);
    out << '\n';
  }
}

Points read_centroids(const fs::path& path) {
  Points out;
  for (const auto& line : detail::read_lines(path)) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ls(line);
    std::size_t index = 0;
    if (!(ls >> index) || index != out.size()) throw DataError(path.string() + ": centroids out of order");
    Point p;
    for (std::string tok; ls >> tok;) {
      std::istringstream ts(tok);
      p.push_back(detail::parse_double(ts, path));
    }
    if (!out.empty() && p.size() != out.front().size()) throw DataError(path.string() + ": ragged centroid rows");
    out.push_back(std::move(p));
  }
  return out;
}

void write_projection(const fs::path& path, const Projection& projection, const std::vector<ImageMeta>& meta,
                      const std::vector<int>& assignments) {
  auto out = detail::open_output(path);
  out << "# variance_fraction " << detail::fmt_exact(projection.variance_fraction[0]) << ' '
      << detail::fmt_exact(projection.variance_fraction[1]) << '\n';
  out << "# wound_id day x y cluster\n";
  for (std::size_t i = 0; i < meta.size(); ++i) {
    out << meta[i].key.wound_id << ' ' << meta[i].key.day << ' ' << detail::fmt_exact(projection.points[i][0]) << ' '
        << detail::fmt_exact(projection.points[i][1]) << ' ' << assignments[i] << '\n';
  }
}

void write_cluster_stats(const fs::path& path, const ClusterStats& stats) {
  auto out = detail::open_output(path);
  out << "# cohort cluster n q1 median q3 mean\n";
  for (const auto& r : stats.rows) {
    out << r.group << ' ' << r.cluster << ' ' << r.stats.count << ' ' << detail::fmt(r.stats.q1) << ' '
        << detail::fmt(r.stats.median) << ' ' << detail::fmt(r.stats.q3) << ' ' << detail::fmt(r.stats.mean) << '\n';
  }
  for (const auto& n : stats.notices) out << "# notice: " << n << '\n';
}

void write_pseudo_labels(const fs::path& path, const std::vector<PseudoLabel>& labels) {
  auto out = detail::open_output(path);
  out << "# wound_id day cluster stage\n";
  for (const auto& l : labels) out << l.key.wound_id << ' ' << l.key.day << ' ' << l.cluster << ' ' << l.stage << '\n';
}

std::vector<PseudoLabel> read_pseudo_labels(const fs::path& path) {
  std::vector<PseudoLabel> out;
  for (const auto& line : detail::read_lines(path)) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ls(line);
    PseudoLabel l;
    if (!(ls >> l.key.wound_id >> l.key.day >> l.cluster >> l.stage)) {
      throw DataError(path.string() + ": malformed line '" + line + "'");
    }
    out.push_back(std::move(l));
  }
  return out;
}

void write_stage_mapping(const fs::path& path, const StageMapping& mapping) {
  auto out = detail::open_output(path);
  out << "# cluster stage name\n";
  for (std::size_t c = 0; c < mapping.stage_of_cluster.size(); ++c) {
    const int s = mapping.stage_of_cluster[c];
    out << c << ' ' << s << ' ' << to_string(static_cast<Stage>(s)) << '\n';
  }
}

}  // namespace healnet::stagedisc
