#pragma once

// Shared synthetic fixtures for unit and acceptance tests.

#include <cmath>
#include <random>

#include "driftlab/ensemble.hpp"
#include "driftlab/gmm.hpp"
#include "driftlab/session.hpp"

namespace fixture {

using namespace driftlab;

/// Labeled 2-D stream whose class boundary rotates by `rotation` radians at
/// sample index `t_star`: before, label = [x . u0 > 0]; after, [x . u1 > 0].
struct AbruptDrift {
  Dataset data{{"x1", "x2"}};
  std::size_t t_star = 0;
};

inline AbruptDrift abrupt_drift(std::size_t total, std::size_t t_star, double rotation, std::uint64_t seed) {
  AbruptDrift out;
  out.t_star = t_star;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < total; ++i) {
    const double x = u(rng);
    const double y = u(rng);
    const double angle = i < t_star ? 0.0 : rotation;
    const int label = (x * std::cos(angle) + y * std::sin(angle)) > 0.0 ? 1 : 0;
    out.data.append(std::vector<double>{x, y}, static_cast<Tick>(i), static_cast<SampleId>(i), label);
  }
  return out;
}

inline std::vector<SampleId> id_range(std::size_t begin, std::size_t end) {
  std::vector<SampleId> ids;
  for (std::size_t i = begin; i < end; ++i) ids.push_back(static_cast<SampleId>(i));
  return ids;
}

inline gmm::GmmState fit_mixture(const Dataset& d, std::span<const SampleId> ids, int k_max = 3) {
  gmm::FitOptions o;
  o.k_max = k_max;
  return gmm::offline_fit(d.gather(ids), ids, o);
}

inline std::vector<int> labels_of(const Dataset& d, std::span<const SampleId> ids) {
  std::vector<int> out;
  for (SampleId id : ids) out.push_back(*d.label(d.index_of(id)));
  return out;
}

inline double accuracy(const ensemble::EnsembleModel& e, const ensemble::LearnerSet& learners, const Dataset& d,
                       std::span<const SampleId> ids) {
  std::size_t correct = 0;
  for (SampleId id : ids) {
    const std::size_t i = d.index_of(id);
    if (ensemble::predict(e, learners, d.row(i)).predicted == *d.label(i)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

/// Frozen pre-drift model vs the ensemble after adding a post-drift learner
/// and one DWM update. Returns {frozen accuracy, adapted accuracy} on held
/// out post-drift samples.
inline std::pair<double, double> dwm_adaptation(std::uint64_t seed) {
  const AbruptDrift s = abrupt_drift(3000, 1500, M_PI / 2.0, seed);
  const auto pre = id_range(0, 1500);
  const auto post_train = id_range(1500, 1800);
  const auto post_update = id_range(1800, 2000);
  const auto post_test = id_range(2000, 3000);
  const gmm::GmmState mixture = fit_mixture(s.data, pre);

  ensemble::LearnerSet learners;
  learners.add(ensemble::train_learner(s.data, mixture, pre, {}, 0, 1500));
  ensemble::EnsembleModel frozen;
  frozen.members = {{0, 1.0}};

  learners.add(ensemble::train_learner(s.data, mixture, post_train, {}, 1, 1800));
  ensemble::EnsembleModel adapted = frozen;
  adapted.members.push_back({1, 1.0});
  adapted.normalize();
  const auto labels = labels_of(s.data, post_update);
  adapted = ensemble::dwm_update(adapted, learners, s.data.gather(post_update), labels, 2000);

  return {accuracy(frozen, learners, s.data, post_test), accuracy(adapted, learners, s.data, post_test)};
}

/// Two labeled blobs at tick 0 (training) followed by `stream_ticks` ticks of
/// two points each; the second blob moves right by `shift` after tick
/// `shift_at`. Label is the blob index.
inline StreamSession labeled_session(int per_blob, Tick stream_ticks, Tick shift_at, double shift,
                                     std::uint64_t seed, SessionConfig config = {}) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Dataset d({"f1", "f2"});
  SampleId id = 0;
  for (int i = 0; i < per_blob; ++i) {
    d.append(std::vector<double>{g(rng), g(rng)}, 0, id++, 0);
    d.append(std::vector<double>{8.0 + g(rng), g(rng)}, 0, id++, 1);
  }
  config.k_max = 3;
  config.projection.max_iterations = 150;
  config.projection_training_cap = 150;
  StreamSession s = StreamSession::create(std::move(d), config);
  std::vector<StreamRow> rows;
  for (Tick t = 1; t <= stream_ticks; ++t) {
    const double dx = t > shift_at ? shift : 0.0;
    rows.push_back({{g(rng), g(rng)}, t, std::nullopt, 0});
    rows.push_back({{8.0 + dx + g(rng), g(rng)}, t, std::nullopt, 1});
  }
  s.advance(rows);
  return s;
}

/// Runs a projection solve on the session and installs it.
inline void project(StreamSession& s) {
  std::vector<SampleId> anchors;
  auto problem = s.projection_problem(&anchors);
  auto solution = projection::solve(problem, s.config().projection);
  solution.tick = s.window().end_tick;
  std::set<ComponentId> structure;
  for (const auto& c : s.gmm().components()) structure.insert(c.id());
  s.install_projection(std::move(solution), s.data_version(), std::move(anchors), std::move(structure));
}

}  // namespace fixture
