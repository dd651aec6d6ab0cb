#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "healnet/dataset.hpp"

// Heal-stage discovery: k-means over embeddings, wound-age statistics per
// cluster, chronological cluster-to-stage mapping and pseudo-label export.
namespace healnet::stagedisc {

using Point = std::vector<double>;
using Points = std::vector<Point>;

enum class Stage { Hemostasis = 0, Inflammation = 1, Proliferation = 2, Maturation = 3 };
inline constexpr std::size_t kStageCount = 4;
std::string_view to_string(Stage stage);

struct KMeansOptions {
  std::size_t k = 4;
  std::uint64_t seed = 0;
  std::size_t max_iter = 300;
  double tol = 1e-6;
  std::size_t restarts = 10;
};

struct ClusterModel {
  std::size_t k = 0;
  Points centroids;
  std::vector<int> assignments;
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // after each assignment step
  std::size_t iterations = 0;
  std::size_t restart = 0;  // index of the winning restart
};

/// Index of the nearest centroid, lowest index on ties.
int nearest_centroid(const Point& point, const Points& centroids);
std::vector<int> assign(const Points& points, const Points& centroids);
double inertia(const Points& points, const Points& centroids, const std::vector<int>& assignments);

/// One Lloyd run from k-means++ seeding. An empty cluster is reseeded at the
/// point farthest from its assigned centroid.
ClusterModel kmeans_single(const Points& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 300,
                           double tol = 1e-6);

/// Best of `restarts` single runs by inertia (earliest restart on ties).
ClusterModel kmeans(const Points& points, const KMeansOptions& options = {});

struct Projection {
  std::vector<std::array<double, 2>> points;
  std::array<double, 2> variance_fraction{};
  std::array<Point, 2> components;
  Point mean;
};

/// Top-2 principal directions of the centered data via SVD. Each component
/// is signed so that its largest-magnitude entry is positive.
Projection pca_2d(const Points& points);

// ---------------------------------------------------------------------------

struct Quartiles {
  std::size_t count = 0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double mean = 0.0;
};

/// Linear interpolation between order statistics at position p * (n - 1).
double quantile(std::vector<double> values, double p);
Quartiles quartiles(const std::vector<double>& values);

/// Cohort and day of one clustered image.
struct ImageMeta {
  data::ImageKey key;
  data::Cohort cohort = data::Cohort::Young;
};

struct StatsRow {
  std::string group;  // "young", "aged" or "pooled"
  int cluster = 0;
  Quartiles stats;
};

struct ClusterStats {
  std::size_t k = 0;
  std::vector<StatsRow> rows;
  std::vector<std::string> notices;  // empty (group, cluster) cells

  std::optional<Quartiles> find(std::string_view group, int cluster) const;
};

/// Wound-day statistics per cohort and cluster, plus pooled over cohorts.
/// Only records with include[i] set contribute (all when `include` is empty).
ClusterStats cluster_stats(std::size_t k, const std::vector<int>& assignments, const std::vector<ImageMeta>& meta,
                           const std::vector<bool>& include = {});

/// stage_of_cluster[c] is the stage of cluster c.
struct StageMapping {
  std::vector<int> stage_of_cluster;
};

/// Orders clusters by pooled median day, then pooled mean, then index, and
/// names them hemostasis .. maturation. Clusters without pooled statistics
/// sort last. Requires k == 4.
StageMapping map_clusters_to_stages(const ClusterStats& stats);

struct PseudoLabel {
  data::ImageKey key;
  int cluster = 0;
  int stage = 0;
};

std::vector<PseudoLabel> export_pseudo_labels(const StageMapping& mapping, const std::vector<int>& assignments,
                                              const std::vector<ImageMeta>& meta);

/// Fraction of points whose cluster's majority true stage equals their own
/// (majority ties resolve to the lowest stage).
double cluster_purity(const std::vector<int>& assignments, const std::vector<int>& truth);

// ---------------------------------------------------------------------------
// Column-text artifacts.

/// cluster c0 .. c{d-1}
void write_centroids(const std::filesystem::path& path, const Points& centroids);
Points read_centroids(const std::filesystem::path& path);
/// wound_id day x y cluster, plus variance fractions in the header.
void write_projection(const std::filesystem::path& path, const Projection& projection,
                      const std::vector<ImageMeta>& meta, const std::vector<int>& assignments);
/// cohort cluster n q1 median q3 mean
void write_cluster_stats(const std::filesystem::path& path, const ClusterStats& stats);
/// wound_id day cluster stage
void write_pseudo_labels(const std::filesystem::path& path, const std::vector<PseudoLabel>& labels);
std::vector<PseudoLabel> read_pseudo_labels(const std::filesystem::path& path);
/// cluster stage stage_name
void write_stage_mapping(const std::filesystem::path& path, const StageMapping& mapping);

}  // namespace healnet::stagedisc
