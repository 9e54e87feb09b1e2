#include "driftlab/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace driftlab::ensemble {

// ---------------------------------------------------------------------------
// LogisticModel

LogisticModel LogisticModel::fit(const RowMatrix& x, std::span<const int> labels,
                                 const TrainOptions& options) {
  if (x.rows() == 0) throw PreconditionError("cannot train on an empty subset");
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw PreconditionError("label count does not match sample count");
  }
  LogisticModel m;
  std::set<int> classes(labels.begin(), labels.end());
  m.classes_.assign(classes.begin(), classes.end());
  const Eigen::Index d = x.cols();
  const Eigen::Index c = static_cast<Eigen::Index>(m.classes_.size());
  const double n = static_cast<double>(x.rows());

  m.mean_ = x.colwise().mean().transpose();
  RowMatrix centered = x.rowwise() - m.mean_.transpose();
  m.scale_ = (centered.array().square().colwise().sum() / n).sqrt().transpose();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(m.scale_[j] > 1e-12)) m.scale_[j] = 1.0;
  }
  m.weights_ = Eigen::MatrixXd::Zero(c, d);
  m.bias_ = Eigen::VectorXd::Zero(c);
  if (c == 1) return m;

  RowMatrix z = centered.array().rowwise() / m.scale_.transpose().array();
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(x.rows(), c);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto pos = std::lower_bound(m.classes_.begin(), m.classes_.end(), labels[static_cast<std::size_t>(i)]);
    onehot(i, pos - m.classes_.begin()) = 1.0;
  }

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Eigen::MatrixXd logits = (z * m.weights_.transpose()).rowwise() + m.bias_.transpose();
    Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    Eigen::MatrixXd probs = (logits.colwise() - row_max).array().exp();
    probs.array().colwise() /= probs.rowwise().sum().array();
    Eigen::MatrixXd err = (probs - onehot) / n;
    Eigen::MatrixXd grad_w = err.transpose() * z + options.l2_penalty * m.weights_;
    Eigen::VectorXd grad_b = err.colwise().sum().transpose();
    const double step = options.step / (1.0 + options.step_decay * epoch);
    m.weights_ -= step * grad_w;
    m.bias_ -= step * grad_b;
  }
  return m;
}

LogisticModel LogisticModel::restore(std::vector<int> classes, Eigen::MatrixXd weights,
                                     Eigen::VectorXd bias, Eigen::VectorXd feature_mean,
                                     Eigen::VectorXd feature_scale) {
  LogisticModel m;
  m.classes_ = std::move(classes);
  m.weights_ = std::move(weights);
  m.bias_ = std::move(bias);
  m.mean_ = std::move(feature_mean);
  m.scale_ = std::move(feature_scale);
  return m;
}

Eigen::VectorXd LogisticModel::probabilities(std::span<const double> x) const {
  const auto c = static_cast<Eigen::Index>(classes_.size());
  if (c == 1) return Eigen::VectorXd::Ones(1);
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  Eigen::VectorXd z = (xv - mean_).cwiseQuotient(scale_);
  Eigen::VectorXd logits = weights_ * z + bias_;
  Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

std::pair<int, double> LogisticModel::predict(std::span<const double> x) const {
  Eigen::VectorXd p = probabilities(x);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return {classes_[static_cast<std::size_t>(best)], p[best]};
}

// ---------------------------------------------------------------------------
// Learners

std::map<ComponentId, double> component_histogram(const gmm::GmmState& gmm,
                                                  std::span<const SampleId> ids) {
  std::map<ComponentId, std::size_t> counts;
  std::size_t total = 0;
  for (SampleId id : ids) {
    auto a = gmm.assignment(id);
    if (!a) continue;
    ++counts[gmm.resolve(a->component)];
    ++total;
  }
  std::map<ComponentId, double> out;
  for (const auto& [c, n] : counts) out[c] = static_cast<double>(n) / static_cast<double>(total);
  return out;
}

BaseLearner train_learner(const Dataset& dataset, const gmm::GmmState& gmm,
                          std::span<const SampleId> ids, const TrainOptions& options, LearnerId id,
                          Tick tick) {
  if (ids.empty()) throw PreconditionError("train_learner: empty sample set");
  if (!dataset.has_labels()) throw PreconditionError("train_learner: dataset has no labels");
  std::vector<int> labels;
  labels.reserve(ids.size());
  for (SampleId sid : ids) {
    const auto idx = dataset.find(sid);
    if (!idx) throw NotFoundError("train_learner: unknown sample id " + std::to_string(sid));
    labels.push_back(*dataset.label(*idx));
  }
  BaseLearner learner;
  learner.id = id;
  learner.training_ids.assign(ids.begin(), ids.end());
  learner.created_tick = tick;
  learner.model = LogisticModel::fit(dataset.gather(ids), labels, options);
  if (learner.model.constant()) {
    learner.warning = "training subset holds a single class; using a constant predictor";
  }
  learner.component_histogram = component_histogram(gmm, ids);
  return learner;
}

void LearnerSet::add(BaseLearner learner) {
  if (by_id_.contains(learner.id)) throw PreconditionError("duplicate learner id");
  next_id_ = std::max(next_id_, learner.id + 1);
  by_id_.emplace(learner.id, std::move(learner));
}

const BaseLearner& LearnerSet::get(LearnerId id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw NotFoundError("unknown learner id " + std::to_string(id));
  return it->second;
}

// ---------------------------------------------------------------------------
// Ensemble

double EnsembleModel::total_weight() const {
  double s = 0.0;
  for (const auto& m : members) s += m.weight;
  return s;
}

void EnsembleModel::normalize() {
  const double total = total_weight();
  if (total <= 0.0) {
    for (auto& m : members) m.weight = 1.0 / static_cast<double>(members.size());
    return;
  }
  for (auto& m : members) m.weight /= total;
}

bool EnsembleModel::contains(LearnerId id) const {
  return std::any_of(members.begin(), members.end(), [&](const Member& m) { return m.learner == id; });
}

Prediction predict(const EnsembleModel& ensemble, const LearnerSet& learners, std::span<const double> x) {
  const double total = ensemble.total_weight();
  if (ensemble.members.empty() || !(total > 0.0)) {
    throw PreconditionError("predict: ensemble has no weighted members");
  }
  Prediction out;
  std::map<int, double> scores;
  for (const auto& m : ensemble.members) {
    const auto& model = learners.get(m.learner).model;
    Eigen::VectorXd p = model.probabilities(x);
    for (std::size_t c = 0; c < model.classes().size(); ++c) {
      scores[model.classes()[c]] += m.weight * p[static_cast<Eigen::Index>(c)];
    }
    auto [cls, conf] = model.predict(x);
    out.votes.push_back({m.learner, cls, conf});
  }
  double best = -1.0;
  for (const auto& [cls, score] : scores) {
    if (score > best) {  // map order gives the smallest class on ties
      best = score;
      out.predicted = cls;
    }
  }
  out.confidence = best / total;
  return out;
}

namespace {

// Log domain so that long batches do not underflow.
std::vector<double> decayed_log_weights(const EnsembleModel& ensemble, const LearnerSet& learners,
                                        const RowMatrix& x, std::span<const int> labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw PreconditionError("label count does not match sample count");
  }
  std::vector<double> log_w;
  for (const auto& m : ensemble.members) {
    log_w.push_back(m.weight > 0.0 ? std::log(m.weight) : -std::numeric_limits<double>::infinity());
  }
  const double log_beta = std::log(ensemble.beta);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::span<const double> row(x.row(i).data(), static_cast<std::size_t>(x.cols()));
    for (std::size_t j = 0; j < ensemble.members.size(); ++j) {
      const auto predicted = learners.get(ensemble.members[j].learner).model.predict(row).first;
      if (predicted != labels[static_cast<std::size_t>(i)]) log_w[j] += log_beta;
    }
  }
  return log_w;
}

}  // namespace

std::vector<double> decayed_weights(const EnsembleModel& ensemble, const LearnerSet& learners,
                                    const RowMatrix& x, std::span<const int> labels) {
  std::vector<double> out;
  for (double lw : decayed_log_weights(ensemble, learners, x, labels)) out.push_back(std::exp(lw));
  return out;
}

EnsembleModel dwm_update(const EnsembleModel& ensemble, const LearnerSet& learners, const RowMatrix& x,
                         std::span<const int> labels, Tick tick) {
  if (ensemble.members.empty()) throw PreconditionError("dwm_update: empty ensemble");
  if (ensemble.last_update && tick - *ensemble.last_update < ensemble.update_period) {
    throw ConflictError("dwm_update: called again within the update period");
  }
  const std::vector<double> log_w = decayed_log_weights(ensemble, learners, x, labels);

  EnsembleModel out = ensemble;
  out.last_update = tick;
  const double top = *std::max_element(log_w.begin(), log_w.end());
  for (std::size_t j = 0; j < out.members.size(); ++j) {
    out.members[j].weight = std::isfinite(top) ? std::exp(log_w[j] - top) : 1.0;
  }
  out.normalize();

  std::vector<Member> kept;
  for (const auto& m : out.members) {
    if (m.weight >= out.prune_threshold) kept.push_back(m);
  }
  if (kept.empty()) {
    kept.push_back(*std::max_element(out.members.begin(), out.members.end(),
                                     [](const Member& a, const Member& b) { return a.weight < b.weight; }));
  }
  out.members = std::move(kept);
  out.normalize();
  return out;
}

std::map<LearnerId, double> model_distribution(const EnsembleModel& ensemble, const LearnerSet& learners,
                                               const RowMatrix& x) {
  if (x.rows() == 0) throw PreconditionError("model_distribution: empty sample set");
  if (ensemble.members.empty()) throw PreconditionError("model_distribution: empty ensemble");
  std::map<LearnerId, double> out;
  for (const auto& m : ensemble.members) out[m.learner] = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::span<const double> row(x.row(i).data(), static_cast<std::size_t>(x.cols()));
    const Prediction p = predict(ensemble, learners, row);
    for (std::size_t j = 0; j < ensemble.members.size(); ++j) {
      if (p.votes[j].predicted == p.predicted) out[ensemble.members[j].learner] += ensemble.members[j].weight;
    }
  }
  double total = 0.0;
  for (const auto& [id, v] : out) total += v;
  if (total > 0.0) {
    for (auto& [id, v] : out) v /= total;
  }
  return out;
}

std::size_t confidence_bin(double confidence, std::size_t bins) {
  if (bins == 0) throw PreconditionError("confidence_bin: need at least one bin");
  const double scaled = std::clamp(confidence, 0.0, 1.0) * static_cast<double>(bins);
  return std::min(bins - 1, static_cast<std::size_t>(scaled));
}

PerformanceSummary performance_summary(const EnsembleModel& ensemble, const LearnerSet& learners,
                                       const RowMatrix& x, std::span<const int> labels,
                                       std::size_t bins) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw PreconditionError("performance_summary: label count does not match sample count");
  }
  std::vector<Prediction> preds;
  std::set<int> classes(labels.begin(), labels.end());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::span<const double> row(x.row(i).data(), static_cast<std::size_t>(x.cols()));
    preds.push_back(predict(ensemble, learners, row));
    classes.insert(preds.back().predicted);
  }

  PerformanceSummary s;
  s.sample_count = labels.size();
  std::map<int, std::size_t> slot;
  for (int c : classes) {
    ClassSummary cs;
    cs.label = c;
    for (std::size_t b = 0; b < bins; ++b) {
      cs.bins.push_back({static_cast<double>(b) / static_cast<double>(bins),
                         static_cast<double>(b + 1) / static_cast<double>(bins), 0, 0, 0});
    }
    slot[c] = s.classes.size();
    s.classes.push_back(std::move(cs));
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int truth = labels[i];
    const auto& p = preds[i];
    const std::size_t b = confidence_bin(p.confidence, bins);
    ++s.classes[slot[truth]].support;
    if (p.predicted == truth) {
      ++correct;
      ++s.classes[slot[truth]].bins[b].true_positive;
    } else {
      ++s.classes[slot[p.predicted]].bins[b].false_positive;
      ++s.classes[slot[truth]].bins[b].false_negative;
    }
  }
  s.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
  return s;
}

}  // namespace driftlab::ensemble
