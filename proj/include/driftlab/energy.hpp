#pragma once

// Normalized energy distance between sample sets and the cluster-weighted
// drift degree built on top of it.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "driftlab/core.hpp"

namespace driftlab::energy {

/// A = mean cross distance, B and C = mean within distances (self-pairs
/// included), distance = (2A - B - C) / 2A.
struct EnergyResult {
  double distance = 0.0;
  double between_mean = 0.0;
  double within_x_mean = 0.0;
  double within_y_mean = 0.0;
};

/// Blocked evaluation of the energy statistic. Symmetric in its arguments.
/// Throws PreconditionError on empty input or mismatched dimensions.
EnergyResult energy_distance(const RowMatrix& x, const RowMatrix& y);

/// Turns the three pairwise sums into a normalized distance. Identical point
/// masses (A == 0) give 0.
double normalized_distance(double between_mean, double within_x_mean, double within_y_mean);

/// Sum of Euclidean distances over all ordered pairs of rows (i != j).
double within_pair_sum(const RowMatrix& x);
/// Sum of Euclidean distances between every row of x and every row of y.
double cross_pair_sum(const RowMatrix& x, const RowMatrix& y);

/// Points together with their mixture-component label.
struct ClusteredSamples {
  RowMatrix points;
  std::vector<ComponentId> labels;

  std::size_t size() const { return labels.size(); }
};

/// Overall drift plus the per-cluster breakdown it was summed from.
struct DriftBody {
  double overall = 0.0;
  std::map<ComponentId, ClusterDrift> per_cluster;
};

struct DriftOptions {
  /// Per-cluster sample cap; larger sides are uniformly subsampled.
  std::size_t subsample_cap = 2000;
  std::uint64_t seed = 0x5eed;
};

/// Cluster-weighted drift degree. Returns nullopt for an empty window.
/// Clusters whose training side is empty contribute distance 1.
std::optional<DriftBody> drift_degree(const ClusteredSamples& window,
                                      const ClusteredSamples& training,
                                      const DriftOptions& options = {});

/// Per-feature drift: each feature column projected to 1-D and run through
/// drift_degree with the joint clustering labels.
std::map<std::string, double> drift_per_feature(const ClusteredSamples& window,
                                                const ClusteredSamples& training,
                                                std::span<const std::string> feature_names,
                                                const DriftOptions& options = {});

/// Maintains the pairwise sums behind drift_degree under single-sample
/// insertions and removals, so each window step costs O(cluster size).
///
/// Results are exact (no subsampling) and agree with drift_degree up to
/// floating-point accumulation; call recompute() to clear accumulated error.
class IncrementalDrift {
 public:
  explicit IncrementalDrift(std::size_t dim = 0) : dim_(dim) {}

  /// Replaces the reference set and clears the window.
  void reset(const ClusteredSamples& training);

  void add(SampleId id, std::span<const double> x, ComponentId label);
  void remove(SampleId id);
  void relabel(SampleId id, ComponentId label);
  bool contains(SampleId id) const { return where_.contains(id); }

  std::size_t window_size() const { return where_.size(); }
  std::optional<DriftBody> current() const;

  /// Rebuilds every sum from stored points.
  void recompute();

 private:
  struct Cluster {
    std::vector<double> training;  // flat, dim_ per point
    std::vector<double> window;
    std::vector<SampleId> window_ids;
    double training_within = 0.0;
    double window_within = 0.0;
    double cross = 0.0;

    std::size_t training_count(std::size_t dim) const { return training.size() / dim; }
    std::size_t window_count() const { return window_ids.size(); }
  };

  std::size_t dim_;
  std::map<ComponentId, Cluster> clusters_;
  std::unordered_map<SampleId, std::pair<ComponentId, std::size_t>> where_;
};

}  // namespace driftlab::energy
