#pragma once

// Base learners trained on analyst-selected subsets, combined by a
// dynamically weighted majority vote.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "driftlab/core.hpp"
#include "driftlab/gmm.hpp"

namespace driftlab::ensemble {

using LearnerId = std::int64_t;

struct TrainOptions {
  double l2_penalty = 1e-3;
  int epochs = 500;
  double step = 0.1;
  /// Step at epoch e is step / (1 + step_decay * e).
  double step_decay = 0.01;
};

/// Multinomial logistic regression over standardized features. A model
/// trained on one class is a constant predictor.
class LogisticModel {
 public:
  LogisticModel() = default;

  static LogisticModel fit(const RowMatrix& x, std::span<const int> labels, const TrainOptions& options);
  static LogisticModel restore(std::vector<int> classes, Eigen::MatrixXd weights, Eigen::VectorXd bias,
                               Eigen::VectorXd feature_mean, Eigen::VectorXd feature_scale);

  /// Probability per entry of classes().
  Eigen::VectorXd probabilities(std::span<const double> x) const;
  /// (class, confidence) with ties broken toward the smallest class.
  std::pair<int, double> predict(std::span<const double> x) const;

  const std::vector<int>& classes() const { return classes_; }
  bool constant() const { return classes_.size() == 1; }
  const Eigen::MatrixXd& weights() const { return weights_; }
  const Eigen::VectorXd& bias() const { return bias_; }
  const Eigen::VectorXd& feature_mean() const { return mean_; }
  const Eigen::VectorXd& feature_scale() const { return scale_; }

 private:
  std::vector<int> classes_;
  Eigen::MatrixXd weights_;  // classes x d, standardized space
  Eigen::VectorXd bias_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd scale_;
};

struct BaseLearner {
  LearnerId id = 0;
  std::vector<SampleId> training_ids;
  std::map<ComponentId, double> component_histogram;
  LogisticModel model;
  Tick created_tick = 0;
  /// Set when the training subset held a single class.
  std::optional<std::string> warning;
};

/// Trains a learner on labeled dataset samples; the component histogram is
/// taken from the mixture assignments of those samples.
BaseLearner train_learner(const Dataset& dataset, const gmm::GmmState& gmm,
                          std::span<const SampleId> ids, const TrainOptions& options, LearnerId id,
                          Tick tick);

/// Fraction of ids per (resolved) mixture component.
std::map<ComponentId, double> component_histogram(const gmm::GmmState& gmm,
                                                  std::span<const SampleId> ids);

struct Member {
  LearnerId learner = 0;
  double weight = 0.0;
  bool operator==(const Member&) const = default;
};

struct EnsembleModel {
  std::vector<Member> members;
  double beta = 0.5;
  double prune_threshold = 0.01;
  Tick update_period = 1;
  std::optional<Tick> last_update;

  double total_weight() const;
  void normalize();
  bool contains(LearnerId id) const;
};

struct Vote {
  LearnerId learner = 0;
  int predicted = 0;
  double confidence = 0.0;
};

struct Prediction {
  int predicted = 0;
  double confidence = 0.0;
  std::vector<Vote> votes;
};

class LearnerSet {
 public:
  void add(BaseLearner learner);
  const BaseLearner& get(LearnerId id) const;
  bool contains(LearnerId id) const { return by_id_.contains(id); }
  const std::map<LearnerId, BaseLearner>& all() const { return by_id_; }
  LearnerId next_id() const { return next_id_; }

 private:
  std::map<LearnerId, BaseLearner> by_id_;
  LearnerId next_id_ = 0;
};

/// Weighted soft vote: argmax_c sum_j w_j p_j(c) / sum_j w_j.
Prediction predict(const EnsembleModel& ensemble, const LearnerSet& learners, std::span<const double> x);

/// Multiplies the weight of every member that errs on a sample by beta,
/// renormalizes after the batch and prunes members under prune_threshold
/// (never the last one). Throws ConflictError when called again within
/// update_period ticks.
EnsembleModel dwm_update(const EnsembleModel& ensemble, const LearnerSet& learners, const RowMatrix& x,
                         std::span<const int> labels, Tick tick);

/// Weights before renormalization after applying the per-sample decay, in
/// member order. Exposed for exact checks of the decay arithmetic.
std::vector<double> decayed_weights(const EnsembleModel& ensemble, const LearnerSet& learners,
                                    const RowMatrix& x, std::span<const int> labels);

/// Per-learner share of the ensemble weight that agrees with the ensemble's
/// prediction, summed over samples and normalized.
std::map<LearnerId, double> model_distribution(const EnsembleModel& ensemble, const LearnerSet& learners,
                                               const RowMatrix& x);

struct BinCounts {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
};

struct ClassSummary {
  int label = 0;
  std::size_t support = 0;
  std::vector<BinCounts> bins;
};

struct PerformanceSummary {
  std::vector<ClassSummary> classes;
  double accuracy = 0.0;
  std::size_t sample_count = 0;
};

/// Current summary with an optional summary of the model before the last
/// adaptation, for side-by-side comparison.
struct PerformanceReport {
  PerformanceSummary current;
  std::optional<PerformanceSummary> previous;
};

/// Confidence bins are [i/b, (i+1)/b) with the last one closed at 1.
std::size_t confidence_bin(double confidence, std::size_t bins);

PerformanceSummary performance_summary(const EnsembleModel& ensemble, const LearnerSet& learners,
                                       const RowMatrix& x, std::span<const int> labels,
                                       std::size_t bins = 10);

}  // namespace driftlab::ensemble
