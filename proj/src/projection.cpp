#include "driftlab/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace driftlab::projection {

void ProjectionConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw PreconditionError("alpha must lie in (0, 1]");
  if (!(beta >= 0.0 && beta < 1.0)) throw PreconditionError("beta must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw PreconditionError("epsilon must be positive");
  if (!(lambda >= 0.0 && phi >= 0.0 && lambda + phi <= 1.0 + 1e-12)) {
    throw PreconditionError("lambda, phi must be non-negative with lambda + phi <= 1");
  }
  if (anchor_cap == 0) throw PreconditionError("anchor_cap must be positive");
  if (!(perplexity > 0.0)) throw PreconditionError("perplexity must be positive");
  if (max_iterations < 1) throw PreconditionError("max_iterations must be positive");
  if (!(learning_rate > 0.0)) throw PreconditionError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw PreconditionError("momentum must lie in [0, 1)");
  if (!(exaggeration >= 1.0)) throw PreconditionError("exaggeration must be >= 1");
}

double floored_entropy(const gmm::GaussianComponent& component, double epsilon) {
  return std::max(component.entropy(), epsilon);
}

std::map<ComponentId, double> shrink_factors(std::span<const gmm::GaussianComponent> components,
                                             double alpha, double beta, double epsilon) {
  std::map<ComponentId, double> out;
  if (components.empty()) return out;
  double max_h = 0.0;
  for (const auto& c : components) max_h = std::max(max_h, floored_entropy(c, epsilon));
  for (const auto& c : components) {
    out[c.id()] = alpha * (1.0 - beta * floored_entropy(c, epsilon) / max_h);
  }
  return out;
}

double constrained_distance(std::span<const double> xi, std::span<const double> xj,
                            ComponentId label_i, ComponentId label_j,
                            const std::map<ComponentId, double>& shrink) {
  double s = 0.0;
  for (std::size_t k = 0; k < xi.size(); ++k) {
    const double t = xi[k] - xj[k];
    s += t * t;
  }
  const double d = std::sqrt(s);
  if (label_i == label_j) {
    auto it = shrink.find(label_i);
    if (it != shrink.end()) return it->second * d;
  }
  return d;
}

std::vector<std::size_t> blue_noise_sample(const RowMatrix& x, std::size_t count) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<std::size_t> picks;
  if (count >= n) {
    picks.resize(n);
    std::iota(picks.begin(), picks.end(), 0);
    return picks;
  }
  if (count == 0) return picks;

  const std::size_t capacity = (n + count - 1) / count;
  std::vector<bool> claimed(n, false), picked(n, false);
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());

  const Eigen::RowVectorXd centroid = x.colwise().mean();
  std::size_t next = 0;
  {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (x.row(static_cast<Eigen::Index>(i)) - centroid).squaredNorm();
      if (d < best) {
        best = d;
        next = i;
      }
    }
  }

  std::vector<std::pair<double, std::size_t>> candidates;
  while (picks.size() < count) {
    picks.push_back(next);
    picked[next] = true;
    const auto row = x.row(static_cast<Eigen::Index>(next));

    candidates.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (x.row(static_cast<Eigen::Index>(i)) - row).squaredNorm();
      min_dist[i] = std::min(min_dist[i], d);
      if (!claimed[i]) candidates.emplace_back(d, i);
    }
    const std::size_t take = std::min(capacity, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                      candidates.end());
    for (std::size_t t = 0; t < take; ++t) claimed[candidates[t].second] = true;
    claimed[next] = true;

    // Farthest unclaimed point; once everything is claimed, farthest unpicked.
    double best = -1.0;
    bool any_unclaimed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (!claimed[i] && (!any_unclaimed || min_dist[i] > best)) {
        best = min_dist[i];
        next = i;
        any_unclaimed = true;
      }
    }
    if (!any_unclaimed) {
      best = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!picked[i] && min_dist[i] > best) {
          best = min_dist[i];
          next = i;
        }
      }
    }
  }
  std::sort(picks.begin(), picks.end());
  return picks;
}

Eigen::VectorXd calibrate_row(const Eigen::VectorXd& squared_distances, double perplexity) {
  const Eigen::Index n = squared_distances.size();
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Index> valid;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (squared_distances[j] >= 0.0) valid.push_back(j);
  }
  if (valid.empty()) return p;
  if (valid.size() == 1) {
    p[valid.front()] = 1.0;
    return p;
  }
  const double target = std::log(std::clamp(perplexity, 1.0, static_cast<double>(valid.size())));
  double min_d = std::numeric_limits<double>::infinity();
  for (auto j : valid) min_d = std::min(min_d, squared_distances[j]);

  double precision = 1.0;
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 200; ++iter) {
    double sum = 0.0;
    double weighted = 0.0;
    for (auto j : valid) {
      // Shift by the minimum distance for numerical range; cancels in the ratio.
      const double e = std::exp(-precision * (squared_distances[j] - min_d));
      p[j] = e;
      sum += e;
      weighted += e * (squared_distances[j] - min_d);
    }
    const double entropy = std::log(sum) + precision * weighted / sum;
    for (auto j : valid) p[j] /= sum;
    const double diff = entropy - target;
    if (std::abs(diff) < 1e-5) break;
    if (diff > 0.0) {
      lo = precision;
      precision = std::isinf(hi) ? precision * 2.0 : 0.5 * (precision + hi);
    } else {
      hi = precision;
      precision = 0.5 * (precision + lo);
    }
  }
  return p;
}

namespace {

double sum_p_log_p(const Eigen::MatrixXd& p) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double v = p.data()[i];
    if (v > 0.0) s += v * std::log(v);
  }
  return s;
}

// KL term between a fixed n x K target and Student-t similarities to fixed
// 2-D points; accumulates weight * gradient into grad rows [0, n).
double fixed_target_term(const Eigen::MatrixXd& p, const Eigen::MatrixXd& targets,
                         double entropy, const RowMatrix& coords, RowMatrix* grad, double weight) {
  const Eigen::Index n = p.rows();
  const Eigen::Index k = p.cols();
  double z = 0.0;
  double cross = 0.0;
  Eigen::MatrixXd u(n, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double yx = coords(i, 0);
    const double yy = coords(i, 1);
    for (Eigen::Index c = 0; c < k; ++c) {
      const double dx = yx - targets(c, 0);
      const double dy = yy - targets(c, 1);
      const double v = 1.0 / (1.0 + dx * dx + dy * dy);
      u(i, c) = v;
      z += v;
      if (p(i, c) > 0.0) cross += p(i, c) * std::log(v);
    }
  }
  if (grad) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double gx = 0.0;
      double gy = 0.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        const double v = u(i, c);
        const double f = (p(i, c) - v / z) * v;
        gx += f * (coords(i, 0) - targets(c, 0));
        gy += f * (coords(i, 1) - targets(c, 1));
      }
      (*grad)(i, 0) += weight * 2.0 * gx;
      (*grad)(i, 1) += weight * 2.0 * gy;
    }
  }
  return entropy - cross + std::log(z);
}

}  // namespace

PreparedProblem prepare(const ProjectionProblem& problem, const ProjectionConfig& config) {
  config.validate();
  const auto n_total = static_cast<Eigen::Index>(problem.size());
  if (n_total < 2) throw PreconditionError("projection needs at least two samples");
  if (problem.labels.size() != problem.size()) {
    throw PreconditionError("projection: one component label per sample required");
  }
  if (problem.original_count > problem.size()) {
    throw PreconditionError("projection: original_count exceeds sample count");
  }
  if (problem.previous_coords &&
      static_cast<std::size_t>(problem.previous_coords->rows()) != problem.original_count) {
    throw PreconditionError("projection: previous_coords must have one row per original sample");
  }

  PreparedProblem out;
  out.original_count = problem.original_count;
  const RowMatrix& x = problem.high_dim;
  const auto row_span = [&](Eigen::Index i) {
    return std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols()));
  };

  // Joint affinity over all samples using shrunken distances.
  Eigen::MatrixXd conditional(n_total, n_total);
  Eigen::VectorXd d2(n_total);
  for (Eigen::Index i = 0; i < n_total; ++i) {
    for (Eigen::Index j = 0; j < n_total; ++j) {
      if (i == j) {
        d2[j] = -1.0;
        continue;
      }
      const double d = constrained_distance(row_span(i), row_span(j),
                                            problem.labels[static_cast<std::size_t>(i)],
                                            problem.labels[static_cast<std::size_t>(j)], problem.shrink);
      d2[j] = d * d;
    }
    conditional.row(i) = calibrate_row(d2, config.perplexity).transpose();
  }
  out.p = (conditional + conditional.transpose()) / (2.0 * static_cast<double>(n_total));
  out.entropy_p = sum_p_log_p(out.p);

  if (!problem.has_history()) {
    out.weight_p = 1.0;
    return out;
  }
  out.weight_p = config.lambda;
  out.weight_center = config.phi;
  out.weight_anchor = std::max(0.0, 1.0 - config.lambda - config.phi);

  const auto n = static_cast<Eigen::Index>(problem.original_count);
  if (!problem.centers.empty() && n > 0) {
    const auto k = static_cast<Eigen::Index>(problem.centers.size());
    out.p_center.resize(n, k);
    out.center_low.resize(k, 2);
    const double perplexity_c = std::min(config.perplexity, std::max(1.0, 0.5 * static_cast<double>(k + 1)));
    Eigen::VectorXd dc(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < k; ++c) {
        const auto& center = problem.centers[static_cast<std::size_t>(c)];
        std::span<const double> cs(center.high_center.data(), static_cast<std::size_t>(center.high_center.size()));
        const double d = constrained_distance(row_span(i), cs,
                                              problem.labels[static_cast<std::size_t>(i)],
                                              center.component, problem.shrink);
        dc[c] = d * d;
      }
      Eigen::VectorXd row = calibrate_row(dc, perplexity_c);
      for (Eigen::Index c = 0; c < k; ++c) row[c] *= problem.centers[static_cast<std::size_t>(c)].weight;
      out.p_center.row(i) = row.transpose();
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      out.center_low.row(c) = problem.centers[static_cast<std::size_t>(c)].previous_low.transpose();
    }
    const double total = out.p_center.sum();
    if (total > 0.0) out.p_center /= total;
    out.entropy_center = sum_p_log_p(out.p_center);
  }

  if (!problem.anchors.empty() && n > 0) {
    const auto a = static_cast<Eigen::Index>(problem.anchors.size());
    out.p_anchor = Eigen::MatrixXd::Zero(n, a);
    out.anchor_low.resize(a, 2);
    for (Eigen::Index c = 0; c < a; ++c) {
      const auto& anchor = problem.anchors[static_cast<std::size_t>(c)];
      if (anchor.row >= problem.original_count) {
        throw PreconditionError("projection: anchor refers to a non-original sample");
      }
      out.p_anchor(static_cast<Eigen::Index>(anchor.row), c) = 1.0 / static_cast<double>(a);
      out.anchor_low.row(c) = anchor.previous_low.transpose();
    }
    out.entropy_anchor = sum_p_log_p(out.p_anchor);
  }
  return out;
}

ObjectiveParts evaluate(const PreparedProblem& prepared, const RowMatrix& coords, RowMatrix* grad,
                        double exaggeration) {
  const Eigen::Index n_total = coords.rows();
  if (grad) grad->setZero(n_total, 2);
  ObjectiveParts parts;

  // Main term, row by row over the upper triangle. P is symmetric, so its
  // column i holds row i contiguously.
  {
    const Eigen::VectorXd cx = coords.col(0);
    const Eigen::VectorXd cy = coords.col(1);
    Eigen::VectorXd ax = Eigen::VectorXd::Zero(n_total);
    Eigen::VectorXd ay = Eigen::VectorXd::Zero(n_total);
    Eigen::VectorXd rx = Eigen::VectorXd::Zero(n_total);
    Eigen::VectorXd ry = Eigen::VectorXd::Zero(n_total);
    Eigen::ArrayXd dx(n_total);
    Eigen::ArrayXd dy(n_total);
    Eigen::ArrayXd u(n_total);
    double z = 0.0;
    double cross = 0.0;
    for (Eigen::Index i = 0; i + 1 < n_total; ++i) {
      const Eigen::Index m = n_total - i - 1;
      auto dxs = dx.head(m);
      auto dys = dy.head(m);
      auto us = u.head(m);
      dxs = cx[i] - cx.tail(m).array();
      dys = cy[i] - cy.tail(m).array();
      us = 1.0 / (1.0 + dxs.square() + dys.square());
      const auto pij = prepared.p.col(i).tail(m).array();
      z += 2.0 * us.sum();
      cross += 2.0 * (pij * us.log()).sum();
      if (grad) {
        const Eigen::ArrayXd a = pij * us;
        const Eigen::ArrayXd r = us.square();
        ax[i] += (a * dxs).sum();
        ay[i] += (a * dys).sum();
        rx[i] += (r * dxs).sum();
        ry[i] += (r * dys).sum();
        ax.tail(m).array() -= a * dxs;
        ay.tail(m).array() -= a * dys;
        rx.tail(m).array() -= r * dxs;
        ry.tail(m).array() -= r * dys;
      }
    }
    parts.kl_p = prepared.entropy_p - cross + std::log(z);
    const double surrogate = exaggeration * (prepared.entropy_p - cross) + std::log(z);
    parts.total += prepared.weight_p * surrogate;
    if (grad) {
      const double s = prepared.weight_p * 4.0;
      grad->col(0) += s * (exaggeration * ax - rx / z);
      grad->col(1) += s * (exaggeration * ay - ry / z);
    }
  }

  const Eigen::Index n = static_cast<Eigen::Index>(prepared.original_count);
  if (prepared.weight_center > 0.0 && prepared.p_center.size() > 0) {
    RowMatrix top = coords.topRows(n);
    RowMatrix g = RowMatrix::Zero(n, 2);
    parts.kl_center = fixed_target_term(prepared.p_center, prepared.center_low, prepared.entropy_center,
                                        top, grad ? &g : nullptr, prepared.weight_center);
    if (grad) grad->topRows(n) += g;
    parts.total += prepared.weight_center * parts.kl_center;
  }
  if (prepared.weight_anchor > 0.0 && prepared.p_anchor.size() > 0) {
    RowMatrix top = coords.topRows(n);
    RowMatrix g = RowMatrix::Zero(n, 2);
    parts.kl_anchor = fixed_target_term(prepared.p_anchor, prepared.anchor_low, prepared.entropy_anchor,
                                        top, grad ? &g : nullptr, prepared.weight_anchor);
    if (grad) grad->topRows(n) += g;
    parts.total += prepared.weight_anchor * parts.kl_anchor;
  }
  return parts;
}

RowMatrix initial_coords(const ProjectionProblem& problem, const ProjectionConfig& config) {
  const auto n_total = static_cast<Eigen::Index>(problem.size());
  RowMatrix y(n_total, 2);
  std::mt19937_64 rng(config.seed);

  if (!problem.has_history()) {
    std::normal_distribution<double> noise(0.0, 1e-4);
    for (Eigen::Index i = 0; i < n_total; ++i) {
      y(i, 0) = noise(rng);
      y(i, 1) = noise(rng);
    }
    return y;
  }

  const RowMatrix& prev = *problem.previous_coords;
  const auto n = static_cast<Eigen::Index>(problem.original_count);
  y.topRows(n) = prev;
  Eigen::RowVector2d fallback = n > 0 ? Eigen::RowVector2d(prev.colwise().mean()) : Eigen::RowVector2d::Zero();
  double scale = 1.0;
  if (n > 1) {
    const Eigen::RowVector2d extent = prev.colwise().maxCoeff() - prev.colwise().minCoeff();
    scale = std::max(extent.norm(), 1e-6);
  }
  std::normal_distribution<double> jitter(0.0, 1e-3 * scale);
  for (Eigen::Index i = n; i < n_total; ++i) {
    Eigen::RowVector2d base = fallback;
    for (const auto& c : problem.centers) {
      if (c.component == problem.labels[static_cast<std::size_t>(i)]) {
        base = c.previous_low.transpose();
        break;
      }
    }
    y(i, 0) = base[0] + jitter(rng);
    y(i, 1) = base[1] + jitter(rng);
  }
  return y;
}

namespace {

bool all_finite(const RowMatrix& m) { return m.allFinite(); }

// Unexaggerated weighted objective from the parts of any evaluation.
double true_total(const PreparedProblem& prepared, const ObjectiveParts& parts) {
  double total = prepared.weight_p * parts.kl_p;
  if (prepared.weight_center > 0.0 && prepared.p_center.size() > 0) total += prepared.weight_center * parts.kl_center;
  if (prepared.weight_anchor > 0.0 && prepared.p_anchor.size() > 0) total += prepared.weight_anchor * parts.kl_anchor;
  return total;
}

}  // namespace

ProjectionSolution solve(const ProjectionProblem& problem, const ProjectionConfig& config) {
  const PreparedProblem prepared = prepare(problem, config);
  RowMatrix y = initial_coords(problem, config);
  const Eigen::Index n_total = y.rows();

  const int exaggeration_iters =
      problem.has_history() ? 0 : std::min(config.exaggeration_iterations, config.max_iterations);

  ProjectionSolution solution;
  solution.ids = problem.ids;
  solution.labels = problem.labels;
  solution.exaggeration_end = exaggeration_iters;

  RowMatrix velocity = RowMatrix::Zero(n_total, 2);
  RowMatrix grad(n_total, 2);
  RowMatrix candidate(n_total, 2);
  RowMatrix candidate_grad(n_total, 2);
  int quiet_iterations = 0;

  // Objective and gradient at y under the current exaggeration factor; an
  // accepted candidate carries its gradient into the next iteration.
  ObjectiveParts current;
  double current_factor = 0.0;

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    const bool exaggerating = iter < exaggeration_iters;
    const double factor = exaggerating ? config.exaggeration : 1.0;
    if (iter == exaggeration_iters && iter > 0) velocity.setZero();

    if (factor != current_factor) {
      current = evaluate(prepared, y, &grad, factor);
      current_factor = factor;
    }
    if (!all_finite(grad) || !std::isfinite(current.total)) {
      throw Error("projection: non-finite objective or gradient");
    }

    // Momentum step with backtracking; falls back to plain gradient descent
    // when the momentum direction does not decrease the objective.
    RowMatrix direction = config.momentum * velocity - config.learning_rate * grad;
    bool accepted = false;
    ObjectiveParts next = current;
    for (int mode = 0; mode < 2 && !accepted; ++mode) {
      if (mode == 1) direction = -config.learning_rate * grad;
      double step = 1.0;
      for (int halving = 0; halving <= 20; ++halving) {
        candidate = y + step * direction;
        if (all_finite(candidate)) {
          const ObjectiveParts trial = evaluate(prepared, candidate, &candidate_grad, factor);
          if (std::isfinite(trial.total) && trial.total <= current.total) {
            accepted = true;
            next = trial;
            velocity = step * direction;
            break;
          }
        }
        step *= 0.5;
      }
    }

    const double previous_total = current.total;
    if (accepted) {
      y.swap(candidate);
      grad.swap(candidate_grad);
      current = next;
    } else {
      velocity.setZero();
    }

    solution.objective_trace.push_back(true_total(prepared, current));

    if (!exaggerating) {
      const double change = previous_total - current.total;
      if (!accepted || change <= 1e-9 * std::max(1.0, std::abs(previous_total))) {
        if (++quiet_iterations >= 10) break;
      } else {
        quiet_iterations = 0;
      }
    }
  }

  solution.coords = std::move(y);
  return solution;
}

}  // namespace driftlab::projection
