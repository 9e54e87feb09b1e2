#pragma once

// Incremental Gaussian mixture: offline EM fit with BIC model selection,
// online hard assignment with streaming moment updates, buffered creation of
// new components, and analyst-driven merges.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "driftlab/core.hpp"

namespace driftlab::gmm {

/// One mixture component. Mean and covariance are the exact (maximum
/// likelihood) moments of member_ids; the regularized covariance used for
/// densities is derived from them.
class GaussianComponent {
 public:
  GaussianComponent() = default;
  GaussianComponent(ComponentId id, Eigen::VectorXd mean, Eigen::MatrixXd covariance,
                    std::vector<SampleId> members, Tick created_tick, double floor);

  ComponentId id() const { return id_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Raw moment covariance (divides by member count).
  const Eigen::MatrixXd& raw_covariance() const { return covariance_; }
  /// Covariance with floor * I added when its smallest eigenvalue is below floor.
  const Eigen::MatrixXd& covariance() const { return regularized_; }
  const std::vector<SampleId>& member_ids() const { return members_; }
  std::size_t member_count() const { return members_.size(); }
  Tick created_tick() const { return created_tick_; }

  double mahalanobis_squared(std::span<const double> x) const;
  double log_density(std::span<const double> x) const;
  /// Differential entropy of the regularized Gaussian.
  double entropy() const;

  /// Streaming single-sample update of mean and covariance.
  void absorb(SampleId id, std::span<const double> x);

  /// Pooled moments of several components; members concatenated.
  static GaussianComponent pooled(ComponentId id, std::span<const GaussianComponent* const> parts,
                                  double floor);

  void set_floor(double floor);

 private:
  void refresh();

  ComponentId id_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  std::vector<SampleId> members_;
  Tick created_tick_ = 0;
  double floor_ = 0.0;

  Eigen::MatrixXd regularized_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  double log_det_ = 0.0;
};

struct Assignment {
  ComponentId component = 0;
  bool firm = true;
  bool operator==(const Assignment&) const = default;
};

/// Sample that fell outside every component's confidence region; it keeps a
/// provisional component until enough such samples justify a new fit.
struct PendingSample {
  SampleId id = 0;
  std::vector<double> point;
  ComponentId provisional = 0;
};

struct FitOptions {
  int k_min = 1;
  int k_max = 10;
  int restarts = 5;
  int max_iterations = 300;
  double relative_tolerance = 1e-6;
  std::uint64_t seed = 42;
  /// Covariance eigenvalue floor. Derived from the data when unset.
  std::optional<double> floor;
};

/// Mixture parameters from one EM run.
struct EmFit {
  Eigen::VectorXd weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  double log_likelihood = 0.0;
  int iterations = 0;
  std::vector<int> hard_labels;
};

/// Full-covariance EM with k-means++ initialization; best of `restarts` runs.
/// Returns nullopt when every restart collapses.
std::optional<EmFit> fit_em(const RowMatrix& x, int k, const FitOptions& options, double floor);

/// Free parameters of a k-component full-covariance mixture in d dimensions.
double parameter_count(int k, int d);
double bic(double log_likelihood, int k, int d, std::size_t n);

/// 1e-6 times the mean per-feature variance (1e-6 for constant data).
double regularization_floor(const RowMatrix& x);

class GmmState;

/// Emitted when the pending buffer is fitted into new components.
struct NewComponentsCreated {
  std::vector<ComponentId> component_ids;
  std::vector<std::pair<SampleId, ComponentId>> reassigned;
};

struct AssignmentOutcome {
  ComponentId component = 0;
  bool firm = true;
  std::optional<NewComponentsCreated> created;
};

/// Result of a merge: surviving id and every sample whose assignment changed.
struct MergeOutcome {
  ComponentId merged_id = 0;
  std::vector<std::pair<SampleId, Assignment>> changed;
};

struct GmmConfig {
  double assign_confidence = 0.95;
  /// Explicit pending-buffer threshold; "auto" (half the average component
  /// size) when unset.
  std::optional<std::size_t> buffer_threshold;
  /// k range used when fitting the pending buffer.
  int buffer_k_max = 3;
};

class GmmState {
 public:
  GmmState() = default;
  GmmState(std::vector<GaussianComponent> components, GmmConfig config, double floor,
           std::size_t dim);

  const std::vector<GaussianComponent>& components() const { return components_; }
  const GaussianComponent& component(ComponentId id) const;
  bool has_component(ComponentId id) const;
  const std::vector<PendingSample>& pending() const { return pending_; }
  const GmmConfig& config() const { return config_; }
  double floor() const { return floor_; }
  std::size_t dim() const { return dim_; }
  ComponentId next_component_id() const { return next_id_; }
  const std::map<ComponentId, ComponentId>& aliases() const { return aliases_; }

  /// Mahalanobis-squared cut-off for the configured confidence.
  double region_threshold() const { return chi2_threshold_; }
  std::size_t buffer_threshold() const;

  std::optional<Assignment> assignment(SampleId id) const;
  std::size_t assigned_count() const { return assignments_.size(); }

  /// Resolves ids of merged-away components to their survivor.
  ComponentId resolve(ComponentId id) const;

  /// Component with the highest density at x, restricted to those whose
  /// confidence region contains x when `inside_only` is set.
  std::optional<ComponentId> best_component(std::span<const double> x, bool inside_only) const;

  AssignmentOutcome online_assign(SampleId id, std::span<const double> x, Tick tick);
  MergeOutcome merge_components(std::span<const ComponentId> ids);

  /// Restores a state exactly as serialized (no refits).
  static GmmState restore(std::vector<GaussianComponent> components,
                          std::vector<PendingSample> pending,
                          std::map<ComponentId, ComponentId> aliases, GmmConfig config,
                          double floor, std::size_t dim, ComponentId next_id);

 private:
  friend GmmState offline_fit(const RowMatrix&, std::span<const SampleId>, const FitOptions&,
                              const GmmConfig&, Tick);
  void rebuild_index();
  std::size_t index_of(ComponentId id) const;
  NewComponentsCreated flush_pending(Tick tick);
  void configure_threshold();

  std::vector<GaussianComponent> components_;
  std::vector<PendingSample> pending_;
  std::map<ComponentId, ComponentId> aliases_;
  GmmConfig config_;
  double floor_ = 1e-6;
  std::size_t dim_ = 0;
  ComponentId next_id_ = 0;
  double chi2_threshold_ = 0.0;
  std::unordered_map<SampleId, Assignment> assignments_;
};

/// Fits mixtures for every k in [k_min, k_max] and keeps the lowest-BIC one.
/// Components hold the hard (argmax responsibility) assignments and their
/// exact moments; components without members are dropped.
GmmState offline_fit(const RowMatrix& x, std::span<const SampleId> ids,
                     const FitOptions& options, const GmmConfig& config = {}, Tick tick = 0);

/// BIC for each k tried by offline_fit, keyed by k (infinite when EM failed).
std::map<int, double> bic_scan(const RowMatrix& x, const FitOptions& options);

}  // namespace driftlab::gmm
