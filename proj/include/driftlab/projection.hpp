#pragma once

// Mixture-aware constrained t-SNE.
//
// The objective combines three KL terms:
//   lambda * KL(P || Q)        all samples, shrunken within-component distances
//   phi    * KL(P_c || Q_c)    original samples vs. component centers
//   rest   * KL(P_s || Q_s)    original samples vs. fixed position anchors
// The center and anchor targets live at their previous 2-D positions, so the
// last two terms pull a re-solve toward the previous layout.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "driftlab/core.hpp"
#include "driftlab/gmm.hpp"

namespace driftlab::projection {

struct ProjectionConfig {
  double alpha = 0.8;
  double beta = 0.5;
  double epsilon = 1e-3;
  double lambda = 0.6;
  double phi = 0.2;
  std::size_t anchor_cap = 500;
  double perplexity = 30.0;
  int max_iterations = 500;
  double learning_rate = 200.0;
  double momentum = 0.8;
  double exaggeration = 4.0;
  int exaggeration_iterations = 50;
  std::uint64_t seed = 7;

  /// Throws PreconditionError when a field is out of range.
  void validate() const;
};

struct CenterConstraint {
  ComponentId component = 0;
  Eigen::VectorXd high_center;
  Eigen::Vector2d previous_low;
  double weight = 1.0;
};

struct Anchor {
  std::size_t row = 0;  // index into the original samples
  Eigen::Vector2d previous_low;
};

/// Input to one solve. Rows [0, original_count) are samples that were
/// projected before; the rest are new.
struct ProjectionProblem {
  RowMatrix high_dim;
  std::vector<SampleId> ids;
  std::vector<ComponentId> labels;
  std::size_t original_count = 0;
  std::map<ComponentId, double> shrink;
  std::vector<CenterConstraint> centers;
  std::vector<Anchor> anchors;
  /// original_count x 2; absent on the first solve.
  std::optional<RowMatrix> previous_coords;

  std::size_t size() const { return static_cast<std::size_t>(high_dim.rows()); }
  bool has_history() const { return previous_coords.has_value(); }
};

struct ProjectionSolution {
  RowMatrix coords;  // N x 2
  std::vector<SampleId> ids;
  std::vector<ComponentId> labels;
  std::vector<double> objective_trace;
  /// Iteration at which early exaggeration stopped (0 when it was not used).
  int exaggeration_end = 0;
  Tick tick = 0;
};

/// Component entropy, floored at epsilon.
double floored_entropy(const gmm::GaussianComponent& component, double epsilon);

/// alpha_k = alpha * (1 - beta * H_k / max H).
std::map<ComponentId, double> shrink_factors(std::span<const gmm::GaussianComponent> components,
                                             double alpha, double beta, double epsilon);

/// Shrinks the Euclidean distance by alpha_k when both samples share component k.
double constrained_distance(std::span<const double> xi, std::span<const double> xj,
                            ComponentId label_i, ComponentId label_j,
                            const std::map<ComponentId, double>& shrink);

/// Capacity-constrained farthest-point sampling: each pick claims its
/// ceil(n / count) nearest unclaimed points, and the next pick is the
/// unclaimed point farthest from all picks. Deterministic.
std::vector<std::size_t> blue_noise_sample(const RowMatrix& x, std::size_t count);

/// Affinity matrices derived from a problem; fixed during optimization.
struct PreparedProblem {
  Eigen::MatrixXd p;        // N x N joint, symmetric, sums to 1
  Eigen::MatrixXd p_center; // n x K, sums to 1 (empty when inactive)
  Eigen::MatrixXd center_low;  // K x 2
  Eigen::MatrixXd p_anchor;    // n x A, sums to 1 (empty when inactive)
  Eigen::MatrixXd anchor_low;  // A x 2
  std::size_t original_count = 0;
  double weight_p = 1.0;
  double weight_center = 0.0;
  double weight_anchor = 0.0;
  // Sum p log p of each distribution, so objectives are true KL values.
  double entropy_p = 0.0;
  double entropy_center = 0.0;
  double entropy_anchor = 0.0;
};

struct ObjectiveParts {
  double kl_p = 0.0;
  double kl_center = 0.0;
  double kl_anchor = 0.0;
  double total = 0.0;
};

PreparedProblem prepare(const ProjectionProblem& problem, const ProjectionConfig& config);

/// Weighted objective at coords; fills grad (N x 2) when non-null. With
/// exaggeration > 1 the P attraction is scaled (the early-exaggeration
/// surrogate); total then refers to that surrogate.
ObjectiveParts evaluate(const PreparedProblem& prepared, const RowMatrix& coords, RowMatrix* grad,
                        double exaggeration = 1.0);

/// Perplexity-calibrated conditional distribution over `squared_distances`
/// (entries with negative value are excluded). Returns the row.
Eigen::VectorXd calibrate_row(const Eigen::VectorXd& squared_distances, double perplexity);

ProjectionSolution solve(const ProjectionProblem& problem, const ProjectionConfig& config);

/// Initial coordinates used by solve (warm start or seeded random).
RowMatrix initial_coords(const ProjectionProblem& problem, const ProjectionConfig& config);

}  // namespace driftlab::projection
