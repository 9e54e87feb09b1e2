#pragma once

// Synthetic drifting Gaussian streams and the detected / late / missed /
// false evaluation harness.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "driftlab/core.hpp"
#include "driftlab/energy.hpp"
#include "driftlab/gmm.hpp"

namespace driftlab::bench {

enum class DriftKind { MeanShift, VarianceShift };

std::string_view to_string(DriftKind kind);
DriftKind drift_kind_from_string(std::string_view text);

struct SyntheticSpec {
  std::size_t total_points = 495'000;
  std::size_t n_drifts = 99;
  DriftKind kind = DriftKind::MeanShift;
  std::size_t dimension = 2;
  Eigen::VectorXd base_mean = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd base_covariance = Eigen::MatrixXd::Identity(2, 2);
  /// Mean shift: step length in units of the base standard deviation.
  /// Variance shift: the scale is multiplied or divided by (1 + magnitude).
  double magnitude = 2.0;
  /// Bound on the cumulative variance-shift scale factor, as a power of
  /// (1 + magnitude) in either direction.
  int max_scale_steps = 2;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticStream {
  Dataset dataset;
  std::vector<Tick> drift_ticks;
};

/// One point per tick starting at tick 0. Drift j (1-based) starts at tick
/// floor(j * total / (n_drifts + 1)).
SyntheticStream generate(const SyntheticSpec& spec);

std::vector<Tick> drift_schedule(std::size_t total_points, std::size_t n_drifts);

enum class Category { Detected, Late, Missed };

std::string_view to_string(Category c);

struct DriftRecord {
  Tick true_tick = 0;
  std::optional<Tick> report_tick;
  Category category = Category::Missed;
  std::size_t run = 0;
};

struct EvalReport {
  double detected = 0.0;
  double late = 0.0;
  double missed = 0.0;
  double false_alarms = 0.0;
  std::size_t runs = 1;
  std::vector<DriftRecord> records;
  /// Wall-clock seconds per run (empty for a bare categorization).
  std::vector<double> run_seconds;
};

/// Drift j owns reports in [t_j, t_{j+1}); the first one decides detected
/// (delta < w) or late, later ones are false alarms, and an empty interval is
/// a miss. Reports before the first drift are false alarms.
EvalReport categorize(const std::vector<Tick>& reports, const std::vector<Tick>& truth, Tick w);

/// Arithmetic mean of counts; records are concatenated.
EvalReport average(const std::vector<EvalReport>& reports);

struct DetectorConfig {
  std::size_t window = 500;
  /// Reference set size collected at start and after every alert. Defaults
  /// to the window length.
  std::optional<std::size_t> training_size;
  /// Alerts need at least this many window samples. Defaults to the window.
  std::optional<std::size_t> min_window_fill;
  double alert_threshold = 0.15;
  /// Ticks after an alert during which crossings are ignored. Defaults to
  /// the window length.
  std::optional<Tick> refractory;
  bool rebaseline = true;
  int k_max = 3;
  double assign_confidence = 0.95;
  std::optional<std::size_t> buffer_threshold;
  std::uint64_t seed = 42;
  /// Full recompute of the incremental sums every this many ticks.
  std::size_t recompute_every = 10'000;

  void validate() const;
  std::size_t effective_training_size() const { return training_size.value_or(window); }
  std::size_t effective_min_fill() const { return min_window_fill.value_or(window); }
  Tick effective_refractory() const { return refractory.value_or(static_cast<Tick>(window)); }
};

/// Energy + mixture drift detector over a one-point-per-tick stream.
class StreamDetector {
 public:
  explicit StreamDetector(DetectorConfig config);

  /// Feeds one sample; returns true when it raises an alert.
  bool push(SampleId id, std::span<const double> x, Tick tick);

  const std::vector<Tick>& alerts() const { return alerts_; }
  /// Latest overall drift (nullopt while collecting a baseline).
  std::optional<double> last_drift() const { return last_; }
  std::size_t baselines() const { return baselines_; }

 private:
  void fit_baseline(Tick tick);

  DetectorConfig config_;
  std::vector<SampleId> baseline_ids_;
  std::vector<double> baseline_rows_;
  std::size_t dim_ = 0;
  bool collecting_ = true;
  gmm::GmmState gmm_;
  energy::IncrementalDrift drift_;
  std::vector<std::pair<SampleId, Tick>> window_;  // FIFO as a ring via head_
  std::size_t head_ = 0;
  std::optional<double> last_;
  std::optional<Tick> last_alert_;
  std::vector<Tick> alerts_;
  std::size_t baselines_ = 0;
  std::size_t since_recompute_ = 0;
};

/// Runs a detector over a whole stream and returns its alert ticks.
std::vector<Tick> detect(const Dataset& stream, const DetectorConfig& config);

/// Run r uses seed spec.seed + r for generation and config.seed + r for the
/// detector; the result averages the per-run categorizations with w equal
/// to the detector window.
EvalReport run_benchmark(const SyntheticSpec& spec, const DetectorConfig& config, std::size_t runs);

// JSON forms used by the CLI.
SyntheticSpec parse_spec(std::string_view json_text);
std::string spec_to_json(const SyntheticSpec& spec);
DetectorConfig parse_detector(std::string_view json_text);
std::string detector_to_json(const DetectorConfig& config);
std::string report_to_json(const EvalReport& report, bool include_records = true);

}  // namespace driftlab::bench
