#pragma once

// A stream session: training set, sliding window, mixture state, drift
// series, latest projection, learners and ensemble. Sessions are values;
// the service mutates copies and publishes them as immutable snapshots.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "driftlab/core.hpp"
#include "driftlab/density.hpp"
#include "driftlab/energy.hpp"
#include "driftlab/ensemble.hpp"
#include "driftlab/gmm.hpp"
#include "driftlab/projection.hpp"

namespace driftlab {

struct DensityConfig {
  int rows = 40;
  int cols = 40;
  double padding = 0.05;
  bool smoothed = true;
};

struct EnsembleConfig {
  double beta = 0.5;
  double prune_threshold = 0.01;
  Tick update_period = 1;
  ensemble::TrainOptions train;
};

struct SessionConfig {
  Tick window_length = 10;
  double drift_alert_threshold = 0.15;
  double gmm_assign_confidence = 0.95;
  /// Explicit pending-buffer size; "auto" when unset.
  std::optional<std::size_t> new_component_buffer_threshold;
  int k_min = 1;
  int k_max = 10;
  std::uint64_t fit_seed = 42;
  /// Rows with tick <= training_until form the training set; all rows when
  /// unset.
  std::optional<Tick> training_until;
  std::size_t drift_subsample_cap = 2000;
  /// Most training samples placed in a projection (blue-noise subsampled).
  std::size_t projection_training_cap = 1000;
  projection::ProjectionConfig projection;
  EnsembleConfig ensemble;
  DensityConfig density;

  void validate() const;
};

/// One row of a stream batch.
struct StreamRow {
  std::vector<double> features;
  Tick tick = 0;
  std::optional<SampleId> id;
  std::optional<int> label;
};

/// Latest projection plus what it was computed from.
struct ProjectionState {
  projection::ProjectionSolution solution;
  /// data_version of the session the solve started from.
  std::uint64_t basis = 0;
  std::vector<SampleId> anchor_ids;
  /// Component ids at the time the anchors were chosen.
  std::set<ComponentId> anchor_structure;
};

/// Identifies a batch of samples for density diffs: a window by end tick,
/// a named set of interest, or the training set.
struct BatchRef {
  enum class Kind { Window, Named, Training } kind = Kind::Window;
  Tick end_tick = 0;
  std::string name;

  /// "window:<tick>", "training", or a set name.
  static BatchRef parse(std::string_view text);
};

struct SampleSet {
  std::vector<SampleId> ids;
  Tick created_tick = 0;
};

class StreamSession {
 public:
  StreamSession() = default;

  /// Fits the mixture on the training rows; remaining rows are streamed in
  /// tick order.
  static StreamSession create(Dataset dataset, SessionConfig config);

  // ---- state
  const Dataset& dataset() const { return dataset_; }
  const SessionConfig& config() const { return config_; }
  const std::vector<SampleId>& training_ids() const { return training_ids_; }
  std::size_t first_stream_index() const { return first_stream_index_; }
  const SlidingWindow& window() const { return window_; }
  const gmm::GmmState& gmm() const { return gmm_; }
  const std::vector<DriftPoint>& drift_series() const { return drift_series_; }
  const std::optional<ProjectionState>& projection() const { return projection_; }
  const ensemble::LearnerSet& learners() const { return learners_; }
  const ensemble::EnsembleModel& ensemble() const { return ensemble_; }
  const std::optional<ensemble::EnsembleModel>& previous_ensemble() const { return previous_ensemble_; }
  const std::map<std::string, SampleSet>& samples_of_interest() const { return samples_of_interest_; }
  std::uint64_t revision() const { return revision_; }
  std::uint64_t data_version() const { return data_version_; }
  bool projection_stale() const { return !projection_ || projection_->basis != data_version_; }

  void set_revision(std::uint64_t r) { revision_ = r; }

  // ---- stream
  /// Appends rows grouped by tick; every tick batch runs the online mixture
  /// step, slides the window and appends one DriftPoint (skipped when the
  /// window is empty). Ticks must exceed the window end (ConflictError).
  /// Returns the drift points appended.
  std::vector<DriftPoint> advance(const std::vector<StreamRow>& rows);
  /// Slides the window to `tick` without new rows.
  void advance_to(Tick tick);

  /// Stream sample ids with tick in (end - length, end].
  std::vector<SampleId> window_ids(Tick end_tick) const;
  /// Training side labels under the current mixture.
  energy::ClusteredSamples clustered(std::span<const SampleId> ids) const;

  // ---- mixture
  gmm::MergeOutcome merge_components(std::span<const ComponentId> ids);

  // ---- projection
  /// Problem for the current state, warm-started from the last solution.
  projection::ProjectionProblem projection_problem(std::vector<SampleId>* anchor_ids = nullptr) const;
  /// Installs a finished solve computed from a session at `basis`.
  void install_projection(projection::ProjectionSolution solution, std::uint64_t basis,
                          std::vector<SampleId> anchor_ids, std::set<ComponentId> anchor_structure);

  // ---- density
  std::vector<SampleId> resolve_batch(const BatchRef& ref) const;
  /// Default: latest window vs the window one length earlier.
  density::DensityDiff density_diff(const std::optional<BatchRef>& newer,
                                    const std::optional<BatchRef>& older) const;

  // ---- learners and ensemble
  const ensemble::BaseLearner& train_learner(std::span<const SampleId> ids,
                                             const std::optional<ensemble::TrainOptions>& options);
  /// Replaces the ensemble members; weights default to uniform.
  void set_ensemble(std::span<const ensemble::LearnerId> ids, std::optional<std::vector<double>> weights);
  /// DWM update on labeled samples; keeps the previous model for comparison.
  void update_ensemble(std::span<const SampleId> ids);
  ensemble::PerformanceReport performance(std::span<const SampleId> ids, bool compare_previous,
                                          std::size_t bins = 10) const;
  std::map<ensemble::LearnerId, double> model_distribution(std::span<const SampleId> ids) const;

  // ---- samples of interest
  void mark_samples(const std::string& name, std::span<const SampleId> ids);

  // ---- persistence
  std::string to_json() const;
  static StreamSession from_json(std::string_view text);
  static constexpr std::string_view kSchemaTag = "driftlab.session/1";

 private:
  void require_known(std::span<const SampleId> ids) const;
  std::vector<int> labels_of(std::span<const SampleId> ids) const;
  void emit_drift_point(Tick tick);
  RowMatrix training_matrix() const;

  Dataset dataset_;
  SessionConfig config_;
  std::vector<SampleId> training_ids_;
  std::size_t first_stream_index_ = 0;
  SlidingWindow window_;
  gmm::GmmState gmm_;
  std::vector<DriftPoint> drift_series_;
  std::optional<ProjectionState> projection_;
  ensemble::LearnerSet learners_;
  ensemble::EnsembleModel ensemble_;
  std::optional<ensemble::EnsembleModel> previous_ensemble_;
  std::map<std::string, SampleSet> samples_of_interest_;
  std::uint64_t revision_ = 0;
  std::uint64_t data_version_ = 0;
};

}  // namespace driftlab
