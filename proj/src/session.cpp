#include "driftlab/session.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "driftlab/codec.hpp"

namespace driftlab {

void SessionConfig::validate() const {
  if (window_length < 1) throw PreconditionError("window_length must be at least 1");
  if (!(drift_alert_threshold >= 0.0)) throw PreconditionError("drift_alert_threshold must be non-negative");
  if (!(gmm_assign_confidence > 0.0 && gmm_assign_confidence < 1.0)) {
    throw PreconditionError("gmm_assign_confidence must lie in (0, 1)");
  }
  if (new_component_buffer_threshold && *new_component_buffer_threshold == 0) {
    throw PreconditionError("new_component_buffer_threshold must be positive");
  }
  if (k_min < 1 || k_max < k_min) throw PreconditionError("need 1 <= k_min <= k_max");
  if (drift_subsample_cap < 2) throw PreconditionError("drift_subsample_cap must be at least 2");
  if (projection_training_cap < 1) throw PreconditionError("projection_training_cap must be positive");
  projection.validate();
  if (!(ensemble.beta > 0.0 && ensemble.beta < 1.0)) throw PreconditionError("ensemble beta must lie in (0, 1)");
  if (ensemble.prune_threshold < 0.0 || ensemble.prune_threshold >= 1.0) {
    throw PreconditionError("prune_threshold must lie in [0, 1)");
  }
  if (ensemble.update_period < 1) throw PreconditionError("update_period must be at least 1");
  if (density.rows < 2 || density.cols < 2) throw PreconditionError("density resolution must be at least 2x2");
  if (density.padding < 0.0) throw PreconditionError("density padding must be non-negative");
}

BatchRef BatchRef::parse(std::string_view text) {
  BatchRef ref;
  if (text == "training") {
    ref.kind = Kind::Training;
    return ref;
  }
  constexpr std::string_view prefix = "window:";
  if (text.starts_with(prefix)) {
    const std::string num(text.substr(prefix.size()));
    try {
      std::size_t used = 0;
      ref.end_tick = std::stoll(num, &used);
      if (used != num.size()) throw std::invalid_argument(num);
    } catch (const std::logic_error&) {
      throw PreconditionError("bad window reference '" + std::string(text) + "'");
    }
    ref.kind = Kind::Window;
    return ref;
  }
  if (text.empty()) throw PreconditionError("empty batch reference");
  ref.kind = Kind::Named;
  ref.name = std::string(text);
  return ref;
}

// ---------------------------------------------------------------------------
// Creation and streaming

StreamSession StreamSession::create(Dataset dataset, SessionConfig config) {
  config.validate();
  std::size_t split = dataset.size();
  if (config.training_until) {
    const auto& ticks = dataset.ticks();
    split = static_cast<std::size_t>(std::upper_bound(ticks.begin(), ticks.end(), *config.training_until) -
                                     ticks.begin());
  }
  if (split == 0) throw PreconditionError("no training rows");

  StreamSession s;
  s.config_ = config;
  s.dataset_ = Dataset(dataset.feature_names());
  for (std::size_t i = 0; i < split; ++i) {
    s.dataset_.append(dataset.row(i), dataset.tick(i), dataset.id(i), dataset.label(i));
    s.training_ids_.push_back(dataset.id(i));
  }
  s.first_stream_index_ = split;

  const RowMatrix x = s.training_matrix();
  gmm::FitOptions fit;
  fit.k_min = config.k_min;
  fit.k_max = std::min<int>(config.k_max, static_cast<int>(split));
  if (fit.k_min > fit.k_max) {
    throw PreconditionError("training set has fewer rows than the requested component count");
  }
  fit.seed = config.fit_seed;
  gmm::GmmConfig gc;
  gc.assign_confidence = config.gmm_assign_confidence;
  gc.buffer_threshold = config.new_component_buffer_threshold;
  s.gmm_ = gmm::offline_fit(x, s.training_ids_, fit, gc, s.dataset_.max_tick());

  s.window_ = SlidingWindow{config.window_length, s.dataset_.max_tick(), {}};
  s.ensemble_.beta = config.ensemble.beta;
  s.ensemble_.prune_threshold = config.ensemble.prune_threshold;
  s.ensemble_.update_period = config.ensemble.update_period;

  std::vector<StreamRow> rest;
  for (std::size_t i = split; i < dataset.size(); ++i) {
    const auto r = dataset.row(i);
    rest.push_back({std::vector<double>(r.begin(), r.end()), dataset.tick(i), dataset.id(i), dataset.label(i)});
  }
  s.advance(rest);
  return s;
}

RowMatrix StreamSession::training_matrix() const {
  return dataset_.gather_indices([&] {
    std::vector<std::size_t> idx(first_stream_index_);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }());
}

std::vector<DriftPoint> StreamSession::advance(const std::vector<StreamRow>& rows) {
  std::vector<DriftPoint> emitted;
  if (rows.empty()) return emitted;
  Tick prev = window_.end_tick;
  bool first = true;
  for (const auto& r : rows) {
    if (first ? r.tick <= prev : r.tick < prev) {
      throw ConflictError("row tick " + std::to_string(r.tick) + " is out of order (stream is at tick " +
                          std::to_string(prev) + ")");
    }
    if (r.features.size() != dataset_.dim()) {
      throw PreconditionError("row has " + std::to_string(r.features.size()) + " features, expected " +
                              std::to_string(dataset_.dim()));
    }
    prev = r.tick;
    first = false;
  }

  std::size_t i = 0;
  while (i < rows.size()) {
    const Tick tick = rows[i].tick;
    for (; i < rows.size() && rows[i].tick == tick; ++i) {
      const auto& r = rows[i];
      const SampleId id = r.id.value_or(dataset_.next_id());
      dataset_.append(r.features, tick, id, r.label);
      gmm_.online_assign(id, r.features, tick);
    }
    window_.slide_to(tick, dataset_, first_stream_index_);
    emit_drift_point(tick);
    if (!drift_series_.empty() && drift_series_.back().tick == tick) emitted.push_back(drift_series_.back());
  }
  ++data_version_;
  return emitted;
}

void StreamSession::advance_to(Tick tick) {
  if (tick < window_.end_tick) throw ConflictError("cannot move the window backwards");
  window_.slide_to(tick, dataset_, first_stream_index_);
  ++data_version_;
}

std::vector<SampleId> StreamSession::window_ids(Tick end_tick) const {
  SlidingWindow w{config_.window_length, end_tick, {}};
  w.slide_to(end_tick, dataset_, first_stream_index_);
  return w.member_ids;
}

energy::ClusteredSamples StreamSession::clustered(std::span<const SampleId> ids) const {
  energy::ClusteredSamples out{dataset_.gather(ids), {}};
  out.labels.reserve(ids.size());
  for (SampleId id : ids) {
    const auto a = gmm_.assignment(id);
    if (!a) throw NotFoundError("sample " + std::to_string(id) + " has no component");
    out.labels.push_back(gmm_.resolve(a->component));
  }
  return out;
}

void StreamSession::emit_drift_point(Tick tick) {
  if (window_.member_ids.empty()) return;
  const auto window = clustered(window_.member_ids);
  const auto training = clustered(training_ids_);
  energy::DriftOptions opts;
  opts.subsample_cap = config_.drift_subsample_cap;
  opts.seed = static_cast<std::uint64_t>(tick);
  const auto body = energy::drift_degree(window, training, opts);
  if (!body) return;
  DriftPoint p;
  p.tick = tick;
  p.overall = body->overall;
  p.per_cluster = body->per_cluster;
  p.per_feature = energy::drift_per_feature(window, training, dataset_.feature_names(), opts);
  drift_series_.push_back(std::move(p));
}

// ---------------------------------------------------------------------------
// Mixture

gmm::MergeOutcome StreamSession::merge_components(std::span<const ComponentId> ids) {
  auto out = gmm_.merge_components(ids);
  ++data_version_;
  return out;
}

// ---------------------------------------------------------------------------
// Projection

projection::ProjectionProblem StreamSession::projection_problem(std::vector<SampleId>* anchor_ids) const {
  // Current members: a stable blue-noise subset of the training set plus the
  // stream samples of the latest two windows.
  std::vector<SampleId> members;
  if (training_ids_.size() > config_.projection_training_cap) {
    const RowMatrix x = training_matrix();
    for (std::size_t idx : projection::blue_noise_sample(x, config_.projection_training_cap)) {
      members.push_back(training_ids_[idx]);
    }
  } else {
    members = training_ids_;
  }
  {
    SlidingWindow recent{2 * config_.window_length, window_.end_tick, {}};
    recent.slide_to(window_.end_tick, dataset_, first_stream_index_);
    members.insert(members.end(), recent.member_ids.begin(), recent.member_ids.end());
  }

  projection::ProjectionProblem problem;
  std::vector<SampleId> ordered;
  std::vector<Eigen::Index> previous_rows;
  if (projection_) {
    const auto& prev = projection_->solution;
    std::unordered_map<SampleId, Eigen::Index> prev_row;
    for (std::size_t i = 0; i < prev.ids.size(); ++i) prev_row[prev.ids[i]] = static_cast<Eigen::Index>(i);
    std::unordered_set<SampleId> current(members.begin(), members.end());
    for (SampleId id : prev.ids) {
      if (current.contains(id)) {
        ordered.push_back(id);
        previous_rows.push_back(prev_row.at(id));
      }
    }
    std::unordered_set<SampleId> seen(ordered.begin(), ordered.end());
    for (SampleId id : members) {
      if (!seen.contains(id)) ordered.push_back(id);
    }
  } else {
    ordered = members;
  }

  const auto cs = clustered(ordered);
  problem.high_dim = cs.points;
  problem.ids = ordered;
  problem.labels = cs.labels;
  problem.shrink = projection::shrink_factors(gmm_.components(), config_.projection.alpha,
                                              config_.projection.beta, config_.projection.epsilon);
  problem.original_count = previous_rows.size();
  if (anchor_ids) anchor_ids->clear();
  if (!projection_ || previous_rows.empty()) {
    problem.original_count = 0;
    return problem;
  }

  const auto& prev = projection_->solution;
  const std::size_t n = previous_rows.size();
  RowMatrix prev_coords(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) prev_coords.row(static_cast<Eigen::Index>(i)) = prev.coords.row(previous_rows[i]);
  problem.previous_coords = prev_coords;

  // Center constraints at each component's previous 2-D centroid.
  std::map<ComponentId, std::pair<Eigen::Vector2d, std::size_t>> centroid;
  for (std::size_t i = 0; i < n; ++i) {
    auto& [sum, count] = centroid.try_emplace(problem.labels[i], Eigen::Vector2d::Zero(), 0).first->second;
    sum += prev_coords.row(static_cast<Eigen::Index>(i)).transpose();
    ++count;
  }
  for (const auto& [cid, sc] : centroid) {
    const auto& comp = gmm_.component(cid);
    problem.centers.push_back({cid, comp.mean(), sc.first / static_cast<double>(sc.second),
                               std::sqrt(static_cast<double>(comp.member_count()))});
  }

  // Anchors persist while the component structure is unchanged.
  std::set<ComponentId> structure;
  for (const auto& c : gmm_.components()) structure.insert(c.id());
  std::vector<std::size_t> anchor_rows;
  if (n <= config_.projection.anchor_cap) {
    for (std::size_t i = 0; i < n; ++i) anchor_rows.push_back(i);
  } else {
    std::unordered_map<SampleId, std::size_t> row_of;
    for (std::size_t i = 0; i < n; ++i) row_of[ordered[i]] = i;
    if (projection_->anchor_structure == structure) {
      for (SampleId id : projection_->anchor_ids) {
        if (auto it = row_of.find(id); it != row_of.end()) anchor_rows.push_back(it->second);
      }
    }
    if (anchor_rows.empty()) {
      anchor_rows = projection::blue_noise_sample(problem.high_dim.topRows(static_cast<Eigen::Index>(n)),
                                                  config_.projection.anchor_cap);
    }
  }
  for (std::size_t r : anchor_rows) {
    problem.anchors.push_back({r, prev_coords.row(static_cast<Eigen::Index>(r)).transpose()});
    if (anchor_ids) anchor_ids->push_back(ordered[r]);
  }
  return problem;
}

void StreamSession::install_projection(projection::ProjectionSolution solution, std::uint64_t basis,
                                       std::vector<SampleId> anchor_ids,
                                       std::set<ComponentId> anchor_structure) {
  projection_ = ProjectionState{std::move(solution), basis, std::move(anchor_ids), std::move(anchor_structure)};
}

// ---------------------------------------------------------------------------
// Density

std::vector<SampleId> StreamSession::resolve_batch(const BatchRef& ref) const {
  switch (ref.kind) {
    case BatchRef::Kind::Training: return training_ids_;
    case BatchRef::Kind::Window: return window_ids(ref.end_tick);
    case BatchRef::Kind::Named: {
      auto it = samples_of_interest_.find(ref.name);
      if (it == samples_of_interest_.end()) throw NotFoundError("unknown sample set '" + ref.name + "'");
      return it->second.ids;
    }
  }
  return {};
}

density::DensityDiff StreamSession::density_diff(const std::optional<BatchRef>& newer,
                                                 const std::optional<BatchRef>& older) const {
  if (!projection_) throw NotFoundError("no projection has been computed");
  const BatchRef a = newer.value_or(BatchRef{BatchRef::Kind::Window, window_.end_tick, {}});
  const BatchRef b = older.value_or(
      BatchRef{BatchRef::Kind::Window, window_.end_tick - config_.window_length, {}});
  const auto ids_a = resolve_batch(a);
  const auto ids_b = resolve_batch(b);

  const auto& sol = projection_->solution;
  std::unordered_map<SampleId, Eigen::Index> row_of;
  for (std::size_t i = 0; i < sol.ids.size(); ++i) row_of[sol.ids[i]] = static_cast<Eigen::Index>(i);
  auto coords_of = [&](const std::vector<SampleId>& ids) {
    std::vector<Eigen::Index> rows;
    for (SampleId id : ids) {
      if (auto it = row_of.find(id); it != row_of.end()) rows.push_back(it->second);
    }
    RowMatrix out(static_cast<Eigen::Index>(rows.size()), 2);
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = sol.coords.row(rows[i]);
    return out;
  };
  const RowMatrix ca = coords_of(ids_a);
  const RowMatrix cb = coords_of(ids_b);
  const auto extent = density::union_extent(ca, cb, config_.density.padding);
  auto ga = density::rasterize(ca, extent, config_.density.rows, config_.density.cols);
  auto gb = density::rasterize(cb, extent, config_.density.rows, config_.density.cols);
  if (config_.density.smoothed) {
    ga = density::halo_smooth(ga);
    gb = density::halo_smooth(gb);
  }
  return density::density_diff(ga, gb);
}

// ---------------------------------------------------------------------------
// Learners and ensemble

void StreamSession::require_known(std::span<const SampleId> ids) const {
  for (SampleId id : ids) {
    if (!dataset_.contains(id)) throw NotFoundError("unknown sample id " + std::to_string(id));
  }
}

std::vector<int> StreamSession::labels_of(std::span<const SampleId> ids) const {
  if (!dataset_.has_labels()) throw PreconditionError("dataset has no labels");
  std::vector<int> out;
  out.reserve(ids.size());
  for (SampleId id : ids) out.push_back(*dataset_.label(dataset_.index_of(id)));
  return out;
}

const ensemble::BaseLearner& StreamSession::train_learner(std::span<const SampleId> ids,
                                                          const std::optional<ensemble::TrainOptions>& options) {
  if (ids.empty()) throw PreconditionError("learner needs at least one sample");
  require_known(ids);
  if (!dataset_.has_labels()) throw PreconditionError("dataset has no labels");
  const auto id = learners_.next_id();
  learners_.add(ensemble::train_learner(dataset_, gmm_, ids, options.value_or(config_.ensemble.train), id,
                                        window_.end_tick));
  return learners_.get(id);
}

void StreamSession::set_ensemble(std::span<const ensemble::LearnerId> ids,
                                 std::optional<std::vector<double>> weights) {
  if (ids.empty()) throw PreconditionError("ensemble needs at least one learner");
  std::set<ensemble::LearnerId> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw PreconditionError("duplicate learner in ensemble");
  for (auto id : ids) {
    if (!learners_.contains(id)) throw PreconditionError("unknown learner id " + std::to_string(id));
  }
  if (weights && weights->size() != ids.size()) throw PreconditionError("weights and learners differ in length");
  ensemble::EnsembleModel e;
  e.beta = config_.ensemble.beta;
  e.prune_threshold = config_.ensemble.prune_threshold;
  e.update_period = config_.ensemble.update_period;
  double total = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double w = weights ? (*weights)[i] : 1.0;
    if (!(w >= 0.0) || !std::isfinite(w)) throw PreconditionError("weights must be finite and non-negative");
    total += w;
    e.members.push_back({ids[i], w});
  }
  if (!(total > 0.0)) throw PreconditionError("weights must not all be zero");
  e.normalize();
  ensemble_ = std::move(e);
  previous_ensemble_.reset();
}

void StreamSession::update_ensemble(std::span<const SampleId> ids) {
  if (ids.empty()) throw PreconditionError("update needs at least one labeled sample");
  if (ensemble_.members.empty()) throw PreconditionError("ensemble has no members");
  require_known(ids);
  const auto labels = labels_of(ids);
  auto updated = ensemble::dwm_update(ensemble_, learners_, dataset_.gather(ids), labels, window_.end_tick);
  previous_ensemble_ = ensemble_;
  ensemble_ = std::move(updated);
}

ensemble::PerformanceReport StreamSession::performance(std::span<const SampleId> ids, bool compare_previous,
                                                       std::size_t bins) const {
  if (ids.empty()) throw PreconditionError("performance needs at least one labeled sample");
  if (ensemble_.members.empty()) throw PreconditionError("ensemble has no members");
  require_known(ids);
  const auto labels = labels_of(ids);
  const RowMatrix x = dataset_.gather(ids);
  ensemble::PerformanceReport report;
  report.current = ensemble::performance_summary(ensemble_, learners_, x, labels, bins);
  if (compare_previous && previous_ensemble_) {
    report.previous = ensemble::performance_summary(*previous_ensemble_, learners_, x, labels, bins);
  }
  return report;
}

std::map<ensemble::LearnerId, double> StreamSession::model_distribution(std::span<const SampleId> ids) const {
  if (ids.empty()) throw PreconditionError("model distribution needs at least one sample");
  require_known(ids);
  return ensemble::model_distribution(ensemble_, learners_, dataset_.gather(ids));
}

void StreamSession::mark_samples(const std::string& name, std::span<const SampleId> ids) {
  if (name.empty() || name == "training" || name.starts_with("window:")) {
    throw PreconditionError("invalid sample set name '" + name + "'");
  }
  if (ids.empty()) throw PreconditionError("sample set must not be empty");
  require_known(ids);
  samples_of_interest_[name] = SampleSet{std::vector<SampleId>(ids.begin(), ids.end()), window_.end_tick};
}

// ---------------------------------------------------------------------------
// Persistence

std::string StreamSession::to_json() const {
  using codec::json;
  json drift = json::array();
  for (const auto& p : drift_series_) drift.push_back(codec::encode(p));
  json learners = json::array();
  for (const auto& [id, l] : learners_.all()) learners.push_back(codec::encode(l));
  json sets = json::object();
  for (const auto& [name, set] : samples_of_interest_) {
    sets[name] = {{"ids", set.ids}, {"created_tick", set.created_tick}};
  }
  json proj = nullptr;
  if (projection_) {
    proj = {{"solution", codec::encode(projection_->solution)},
            {"basis", projection_->basis},
            {"anchor_ids", projection_->anchor_ids},
            {"anchor_structure", projection_->anchor_structure}};
  }
  json j{{"schema", std::string(kSchemaTag)},
         {"config", codec::encode(config_)},
         {"dataset", codec::encode(dataset_)},
         {"training_ids", training_ids_},
         {"first_stream_index", first_stream_index_},
         {"window", {{"length", window_.length}, {"end_tick", window_.end_tick}}},
         {"gmm", codec::encode(gmm_)},
         {"drift_series", drift},
         {"projection", proj},
         {"learners", learners},
         {"ensemble", codec::encode(ensemble_)},
         {"previous_ensemble", previous_ensemble_ ? codec::encode(*previous_ensemble_) : json(nullptr)},
         {"samples_of_interest", sets},
         {"revision", revision_},
         {"data_version", data_version_}};
  return j.dump();
}

StreamSession StreamSession::from_json(std::string_view text) {
  using codec::field;
  using codec::member;
  using codec::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("session document: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema") || j.at("schema") != kSchemaTag) {
    throw SchemaError("session document lacks schema tag " + std::string(kSchemaTag));
  }
  StreamSession s;
  s.config_ = codec::decode_config(field<json>(j, "config"));
  s.dataset_ = codec::decode_dataset(field<json>(j, "dataset"));
  s.training_ids_ = field<std::vector<SampleId>>(j, "training_ids");
  s.first_stream_index_ = field<std::size_t>(j, "first_stream_index");
  if (s.first_stream_index_ != s.training_ids_.size() || s.first_stream_index_ > s.dataset_.size()) {
    throw SchemaError("training prefix does not match the dataset");
  }
  const json& w = field<json>(j, "window");
  s.window_.length = field<Tick>(w, "length");
  s.window_.slide_to(field<Tick>(w, "end_tick"), s.dataset_, s.first_stream_index_);
  s.gmm_ = codec::decode_gmm(field<json>(j, "gmm"));
  for (const auto& p : field<json>(j, "drift_series")) s.drift_series_.push_back(codec::decode_drift_point(p));
  if (const json& p = field<json>(j, "projection"); !p.is_null()) {
    ProjectionState ps;
    ps.solution = codec::decode_projection(field<json>(p, "solution"));
    ps.basis = field<std::uint64_t>(p, "basis");
    ps.anchor_ids = field<std::vector<SampleId>>(p, "anchor_ids");
    ps.anchor_structure = field<std::set<ComponentId>>(p, "anchor_structure");
    s.projection_ = std::move(ps);
  }
  for (const auto& l : field<json>(j, "learners")) s.learners_.add(codec::decode_learner(l));
  s.ensemble_ = codec::decode_ensemble(field<json>(j, "ensemble"));
  if (const json& p = field<json>(j, "previous_ensemble"); !p.is_null()) {
    s.previous_ensemble_ = codec::decode_ensemble(p);
  }
  for (const auto& [name, set] : member(j, "samples_of_interest").items()) {
    s.samples_of_interest_[name] = SampleSet{field<std::vector<SampleId>>(set, "ids"), field<Tick>(set, "created_tick")};
  }
  s.revision_ = field<std::uint64_t>(j, "revision");
  s.data_version_ = field<std::uint64_t>(j, "data_version");
  return s;
}

}  // namespace driftlab
