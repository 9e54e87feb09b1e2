#include "driftlab/codec.hpp"

#include <set>

namespace driftlab::codec {
namespace {

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd to_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd to_mat(const json& j, Eigen::Index cols_if_empty = 0) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return Eigen::MatrixXd(0, cols_if_empty);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw SchemaError("ragged matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

template <typename K, typename V>
json keyed(const std::map<K, V>& m) {
  json out = json::object();
  for (const auto& [k, v] : m) out[std::to_string(k)] = v;
  return out;
}

ComponentId key_id(const std::string& key) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(key, &used);
    if (used != key.size()) throw SchemaError("bad id key '" + key + "'");
    return v;
  } catch (const std::logic_error&) {
    throw SchemaError("bad id key '" + key + "'");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* what) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw SchemaError(std::string("unknown ") + what + " field '" + key + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset and drift

json encode(const Dataset& d) {
  json rows = json::array();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto r = d.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"feature_names", d.feature_names()},
          {"ticks", d.ticks()},
          {"ids", d.ids()},
          {"labels", d.labels() ? json(*d.labels()) : json(nullptr)},
          {"rows", rows}};
}

Dataset decode_dataset(const json& j) {
  Dataset d(field<std::vector<std::string>>(j, "feature_names"));
  const auto ticks = field<std::vector<Tick>>(j, "ticks");
  const auto ids = field<std::vector<SampleId>>(j, "ids");
  const auto rows = field<std::vector<std::vector<double>>>(j, "rows");
  std::optional<std::vector<int>> labels;
  optional_field(j, "labels", labels);
  if (ticks.size() != ids.size() || rows.size() != ids.size() || (labels && labels->size() != ids.size())) {
    throw SchemaError("dataset arrays differ in length");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    d.append(rows[i], ticks[i], ids[i], labels ? std::optional<int>((*labels)[i]) : std::nullopt);
  }
  return d;
}

json encode(const DriftPoint& p) {
  json clusters = json::object();
  for (const auto& [id, c] : p.per_cluster) {
    clusters[std::to_string(id)] = {{"weight_fraction", c.weight_fraction}, {"distance", c.distance}};
  }
  return {{"tick", p.tick}, {"overall", p.overall}, {"per_feature", p.per_feature}, {"per_cluster", clusters}};
}

DriftPoint decode_drift_point(const json& j) {
  DriftPoint p;
  p.tick = field<Tick>(j, "tick");
  p.overall = field<double>(j, "overall");
  p.per_feature = field<std::map<std::string, double>>(j, "per_feature");
  for (const auto& [key, c] : member(j, "per_cluster").items()) {
    p.per_cluster[key_id(key)] = {field<double>(c, "weight_fraction"), field<double>(c, "distance")};
  }
  return p;
}

// ---------------------------------------------------------------------------
// Mixture

json encode(const gmm::GaussianComponent& c) {
  return {{"id", c.id()},
          {"mean", vec(c.mean())},
          {"covariance", mat(c.raw_covariance())},
          {"members", c.member_ids()},
          {"member_count", c.member_count()},
          {"created_tick", c.created_tick()}};
}

json encode(const gmm::GmmState& s) {
  json comps = json::array();
  for (const auto& c : s.components()) comps.push_back(encode(c));
  json pending = json::array();
  for (const auto& p : s.pending()) {
    pending.push_back({{"id", p.id}, {"point", p.point}, {"provisional", p.provisional}});
  }
  json config = {{"assign_confidence", s.config().assign_confidence},
                 {"buffer_threshold", s.config().buffer_threshold ? json(*s.config().buffer_threshold)
                                                                   : json(nullptr)},
                 {"buffer_k_max", s.config().buffer_k_max}};
  return {{"components", comps}, {"pending", pending},     {"aliases", keyed(s.aliases())},
          {"config", config},    {"floor", s.floor()},     {"dim", s.dim()},
          {"next_component_id", s.next_component_id()}};
}

gmm::GmmState decode_gmm(const json& j) {
  const double floor = field<double>(j, "floor");
  const auto dim = field<std::size_t>(j, "dim");
  std::vector<gmm::GaussianComponent> comps;
  for (const auto& c : field<json>(j, "components")) {
    comps.emplace_back(field<ComponentId>(c, "id"), to_vec(field<json>(c, "mean")),
                       to_mat(field<json>(c, "covariance")), field<std::vector<SampleId>>(c, "members"),
                       field<Tick>(c, "created_tick"), floor);
  }
  std::vector<gmm::PendingSample> pending;
  for (const auto& p : field<json>(j, "pending")) {
    pending.push_back({field<SampleId>(p, "id"), field<std::vector<double>>(p, "point"),
                       field<ComponentId>(p, "provisional")});
  }
  std::map<ComponentId, ComponentId> aliases;
  for (const auto& [key, v] : member(j, "aliases").items()) aliases[key_id(key)] = v.get<ComponentId>();
  const json& cj = field<json>(j, "config");
  gmm::GmmConfig config;
  config.assign_confidence = field<double>(cj, "assign_confidence");
  optional_field(cj, "buffer_threshold", config.buffer_threshold);
  config.buffer_k_max = field<int>(cj, "buffer_k_max");
  return gmm::GmmState::restore(std::move(comps), std::move(pending), std::move(aliases), config, floor,
                                dim, field<ComponentId>(j, "next_component_id"));
}

// ---------------------------------------------------------------------------
// Projection and density

json encode(const projection::ProjectionSolution& s) {
  json points = json::array();
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    points.push_back(json::array({s.ids[i], s.coords(r, 0), s.coords(r, 1), s.labels[i]}));
  }
  return {{"points", points},
          {"objective_trace", s.objective_trace},
          {"exaggeration_end", s.exaggeration_end},
          {"tick", s.tick}};
}

projection::ProjectionSolution decode_projection(const json& j) {
  projection::ProjectionSolution s;
  const json& points = field<json>(j, "points");
  s.coords.resize(static_cast<Eigen::Index>(points.size()), 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const json& p = points[i];
    if (!p.is_array() || p.size() != 4) throw SchemaError("projection point must be [id, x, y, component]");
    s.ids.push_back(p[0].get<SampleId>());
    s.coords(static_cast<Eigen::Index>(i), 0) = p[1].get<double>();
    s.coords(static_cast<Eigen::Index>(i), 1) = p[2].get<double>();
    s.labels.push_back(p[3].get<ComponentId>());
  }
  s.objective_trace = field<std::vector<double>>(j, "objective_trace");
  s.exaggeration_end = field<int>(j, "exaggeration_end");
  s.tick = field<Tick>(j, "tick");
  return s;
}

json encode(const projection::ProjectionConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"epsilon", c.epsilon},
          {"lambda", c.lambda},
          {"phi", c.phi},
          {"anchor_cap", c.anchor_cap},
          {"perplexity", c.perplexity},
          {"max_iterations", c.max_iterations},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"exaggeration", c.exaggeration},
          {"exaggeration_iterations", c.exaggeration_iterations},
          {"seed", c.seed}};
}

projection::ProjectionConfig decode_projection_config(const json& j, projection::ProjectionConfig c) {
  reject_unknown(j,
                 {"alpha", "beta", "epsilon", "lambda", "phi", "anchor_cap", "perplexity", "max_iterations",
                  "learning_rate", "momentum", "exaggeration", "exaggeration_iterations", "seed"},
                 "projection");
  optional_field(j, "alpha", c.alpha);
  optional_field(j, "beta", c.beta);
  optional_field(j, "epsilon", c.epsilon);
  optional_field(j, "lambda", c.lambda);
  optional_field(j, "phi", c.phi);
  optional_field(j, "anchor_cap", c.anchor_cap);
  optional_field(j, "perplexity", c.perplexity);
  optional_field(j, "max_iterations", c.max_iterations);
  optional_field(j, "learning_rate", c.learning_rate);
  optional_field(j, "momentum", c.momentum);
  optional_field(j, "exaggeration", c.exaggeration);
  optional_field(j, "exaggeration_iterations", c.exaggeration_iterations);
  optional_field(j, "seed", c.seed);
  return c;
}

json encode(const density::DensityDiff& d) {
  return {{"resolution", {d.rows, d.cols}},
          {"extent", {{"min_x", d.extent.min_x}, {"min_y", d.extent.min_y},
                      {"max_x", d.extent.max_x}, {"max_y", d.extent.max_y}}},
          {"values", mat(d.values)},
          {"metadata", {{"smoothed", d.smoothed}, {"newer_count", d.newer_count}, {"older_count", d.older_count}}}};
}

// ---------------------------------------------------------------------------
// Learners and ensemble

json encode(const ensemble::BaseLearner& l) {
  const auto& m = l.model;
  return {{"id", l.id},
          {"training_ids", l.training_ids},
          {"training_size", l.training_ids.size()},
          {"component_histogram", keyed(l.component_histogram)},
          {"created_tick", l.created_tick},
          {"warning", l.warning ? json(*l.warning) : json(nullptr)},
          {"model",
           {{"classes", m.classes()},
            {"weights", mat(m.weights())},
            {"bias", vec(m.bias())},
            {"feature_mean", vec(m.feature_mean())},
            {"feature_scale", vec(m.feature_scale())}}}};
}

ensemble::BaseLearner decode_learner(const json& j) {
  ensemble::BaseLearner l;
  l.id = field<ensemble::LearnerId>(j, "id");
  l.training_ids = field<std::vector<SampleId>>(j, "training_ids");
  for (const auto& [key, v] : member(j, "component_histogram").items()) {
    l.component_histogram[key_id(key)] = v.get<double>();
  }
  l.created_tick = field<Tick>(j, "created_tick");
  optional_field(j, "warning", l.warning);
  const json& m = field<json>(j, "model");
  const Eigen::VectorXd mean = to_vec(field<json>(m, "feature_mean"));
  l.model = ensemble::LogisticModel::restore(field<std::vector<int>>(m, "classes"),
                                             to_mat(field<json>(m, "weights"), mean.size()),
                                             to_vec(field<json>(m, "bias")), mean,
                                             to_vec(field<json>(m, "feature_scale")));
  return l;
}

json encode(const ensemble::EnsembleModel& e) {
  json members = json::array();
  for (const auto& m : e.members) members.push_back({{"learner", m.learner}, {"weight", m.weight}});
  return {{"members", members},
          {"beta", e.beta},
          {"prune_threshold", e.prune_threshold},
          {"update_period", e.update_period},
          {"last_update", e.last_update ? json(*e.last_update) : json(nullptr)}};
}

ensemble::EnsembleModel decode_ensemble(const json& j) {
  ensemble::EnsembleModel e;
  for (const auto& m : field<json>(j, "members")) {
    e.members.push_back({field<ensemble::LearnerId>(m, "learner"), field<double>(m, "weight")});
  }
  e.beta = field<double>(j, "beta");
  e.prune_threshold = field<double>(j, "prune_threshold");
  e.update_period = field<Tick>(j, "update_period");
  optional_field(j, "last_update", e.last_update);
  return e;
}

json encode(const ensemble::PerformanceSummary& s) {
  json classes = json::array();
  for (const auto& c : s.classes) {
    json bins = json::array();
    for (const auto& b : c.bins) {
      bins.push_back({{"lower", b.lower},
                      {"upper", b.upper},
                      {"true_positive", b.true_positive},
                      {"false_positive", b.false_positive},
                      {"false_negative", b.false_negative}});
    }
    classes.push_back({{"label", c.label}, {"support", c.support}, {"bins", bins}});
  }
  return {{"classes", classes}, {"accuracy", s.accuracy}, {"sample_count", s.sample_count}};
}

json encode(const ensemble::TrainOptions& o) {
  return {{"l2_penalty", o.l2_penalty}, {"epochs", o.epochs}, {"step", o.step}, {"step_decay", o.step_decay}};
}

ensemble::TrainOptions decode_train_options(const json& j, ensemble::TrainOptions o) {
  reject_unknown(j, {"l2_penalty", "epochs", "step", "step_decay"}, "hyperparameter");
  optional_field(j, "l2_penalty", o.l2_penalty);
  optional_field(j, "epochs", o.epochs);
  optional_field(j, "step", o.step);
  optional_field(j, "step_decay", o.step_decay);
  if (o.epochs < 0 || !(o.step > 0.0) || o.l2_penalty < 0.0 || o.step_decay < 0.0) {
    throw PreconditionError("invalid learner hyperparameters");
  }
  return o;
}

// ---------------------------------------------------------------------------
// Session config

json encode(const SessionConfig& c) {
  return {{"window_length", c.window_length},
          {"drift_alert_threshold", c.drift_alert_threshold},
          {"gmm_assign_confidence", c.gmm_assign_confidence},
          {"new_component_buffer_threshold",
           c.new_component_buffer_threshold ? json(*c.new_component_buffer_threshold) : json("auto")},
          {"k_min", c.k_min},
          {"k_max", c.k_max},
          {"fit_seed", c.fit_seed},
          {"training_until", c.training_until ? json(*c.training_until) : json(nullptr)},
          {"drift_subsample_cap", c.drift_subsample_cap},
          {"projection_training_cap", c.projection_training_cap},
          {"projection", encode(c.projection)},
          {"ensemble",
           {{"beta", c.ensemble.beta},
            {"prune_threshold", c.ensemble.prune_threshold},
            {"update_period", c.ensemble.update_period},
            {"train", encode(c.ensemble.train)}}},
          {"density",
           {{"rows", c.density.rows},
            {"cols", c.density.cols},
            {"padding", c.density.padding},
            {"smoothed", c.density.smoothed}}}};
}

SessionConfig decode_config(const json& j) {
  if (!j.is_object()) throw SchemaError("config must be a JSON object");
  reject_unknown(j,
                 {"window_length", "drift_alert_threshold", "gmm_assign_confidence",
                  "new_component_buffer_threshold", "k", "k_min", "k_max", "fit_seed", "training_until",
                  "drift_subsample_cap", "projection_training_cap", "projection", "ensemble", "density"},
                 "config");
  SessionConfig c;
  optional_field(j, "window_length", c.window_length);
  optional_field(j, "drift_alert_threshold", c.drift_alert_threshold);
  optional_field(j, "gmm_assign_confidence", c.gmm_assign_confidence);
  if (auto it = j.find("new_component_buffer_threshold"); it != j.end() && !it->is_null()) {
    if (it->is_string()) {
      if (it->get<std::string>() != "auto") throw SchemaError("new_component_buffer_threshold: expected \"auto\" or an integer");
    } else {
      c.new_component_buffer_threshold = field<std::size_t>(j, "new_component_buffer_threshold");
    }
  }
  optional_field(j, "k_min", c.k_min);
  optional_field(j, "k_max", c.k_max);
  if (j.contains("k")) {
    c.k_min = c.k_max = field<int>(j, "k");
  }
  optional_field(j, "fit_seed", c.fit_seed);
  optional_field(j, "training_until", c.training_until);
  optional_field(j, "drift_subsample_cap", c.drift_subsample_cap);
  optional_field(j, "projection_training_cap", c.projection_training_cap);
  if (j.contains("projection")) c.projection = decode_projection_config(j.at("projection"), c.projection);
  if (j.contains("ensemble")) {
    const json& e = j.at("ensemble");
    reject_unknown(e, {"beta", "prune_threshold", "update_period", "train"}, "ensemble");
    optional_field(e, "beta", c.ensemble.beta);
    optional_field(e, "prune_threshold", c.ensemble.prune_threshold);
    optional_field(e, "update_period", c.ensemble.update_period);
    if (e.contains("train")) c.ensemble.train = decode_train_options(e.at("train"), c.ensemble.train);
  }
  if (j.contains("density")) {
    const json& d = j.at("density");
    reject_unknown(d, {"rows", "cols", "padding", "smoothed"}, "density");
    optional_field(d, "rows", c.density.rows);
    optional_field(d, "cols", c.density.cols);
    optional_field(d, "padding", c.density.padding);
    optional_field(d, "smoothed", c.density.smoothed);
  }
  c.validate();
  return c;
}

}  // namespace driftlab::codec
