#include "driftlab/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <initializer_list>
#include <random>

#include <nlohmann/json.hpp>

namespace driftlab::bench {

using nlohmann::json;

std::string_view to_string(DriftKind kind) {
  return kind == DriftKind::MeanShift ? "mean-shift" : "variance-shift";
}

DriftKind drift_kind_from_string(std::string_view text) {
  if (text == "mean-shift" || text == "mean" || text == "D1") return DriftKind::MeanShift;
  if (text == "variance-shift" || text == "variance" || text == "D2") return DriftKind::VarianceShift;
  throw SchemaError("unknown drift kind '" + std::string(text) + "'");
}

std::string_view to_string(Category c) {
  switch (c) {
    case Category::Detected: return "detected";
    case Category::Late: return "late";
    case Category::Missed: return "missed";
  }
  return "missed";
}

// ---------------------------------------------------------------------------
// Generator

void SyntheticSpec::validate() const {
  if (dimension == 0) throw PreconditionError("dimension must be positive");
  if (static_cast<std::size_t>(base_mean.size()) != dimension ||
      static_cast<std::size_t>(base_covariance.rows()) != dimension ||
      static_cast<std::size_t>(base_covariance.cols()) != dimension) {
    throw PreconditionError("base mean/covariance do not match the dimension");
  }
  if (!(magnitude > 0.0)) throw PreconditionError("magnitude must be positive");
  if (total_points < n_drifts + 1) throw PreconditionError("too few points for the drift count");
  if (max_scale_steps < 1) throw PreconditionError("max_scale_steps must be at least 1");
  Eigen::LLT<Eigen::MatrixXd> llt(base_covariance);
  if (llt.info() != Eigen::Success) throw PreconditionError("base covariance must be positive definite");
}

std::vector<Tick> drift_schedule(std::size_t total_points, std::size_t n_drifts) {
  std::vector<Tick> ticks;
  for (std::size_t j = 1; j <= n_drifts; ++j) {
    ticks.push_back(static_cast<Tick>(j * total_points / (n_drifts + 1)));
  }
  return ticks;
}

SyntheticStream generate(const SyntheticSpec& spec) {
  spec.validate();
  const auto d = static_cast<Eigen::Index>(spec.dimension);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(spec.base_covariance).matrixL();
  const double base_sigma = std::sqrt(spec.base_covariance.diagonal().mean());

  std::vector<std::string> names;
  for (Eigen::Index j = 0; j < d; ++j) names.push_back("x" + std::to_string(j + 1));
  SyntheticStream out{Dataset(names), drift_schedule(spec.total_points, spec.n_drifts)};

  Eigen::VectorXd mean = spec.base_mean;
  int scale_steps = 0;  // scale = (1 + magnitude)^scale_steps
  std::size_t next_drift = 0;
  Eigen::VectorXd z(d);
  std::vector<double> row(static_cast<std::size_t>(d));

  for (std::size_t i = 0; i < spec.total_points; ++i) {
    const auto tick = static_cast<Tick>(i);
    if (next_drift < out.drift_ticks.size() && out.drift_ticks[next_drift] == tick) {
      ++next_drift;
      if (spec.kind == DriftKind::MeanShift) {
        Eigen::VectorXd dir(d);
        do {
          for (Eigen::Index j = 0; j < d; ++j) dir[j] = normal(rng);
        } while (dir.norm() < 1e-12);
        mean += spec.magnitude * base_sigma * dir.normalized();
      } else {
        const bool up = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
        int step = up ? 1 : -1;
        if (std::abs(scale_steps + step) > spec.max_scale_steps) step = -step;
        scale_steps += step;
      }
    }
    const double scale = std::pow(1.0 + spec.magnitude, scale_steps);
    for (Eigen::Index j = 0; j < d; ++j) z[j] = normal(rng);
    Eigen::VectorXd x = mean + scale * (chol * z);
    std::copy(x.data(), x.data() + d, row.begin());
    out.dataset.append(row, tick, static_cast<SampleId>(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Categorization

EvalReport categorize(const std::vector<Tick>& reports, const std::vector<Tick>& truth, Tick w) {
  if (!std::is_sorted(reports.begin(), reports.end()) || !std::is_sorted(truth.begin(), truth.end())) {
    throw PreconditionError("categorize: tick lists must be sorted");
  }
  if (w <= 0) throw PreconditionError("categorize: w must be positive");
  EvalReport out;
  auto r = reports.begin();
  while (r != reports.end() && (truth.empty() || *r < truth.front())) {
    out.false_alarms += 1;
    ++r;
  }
  for (std::size_t j = 0; j < truth.size(); ++j) {
    const Tick t = truth[j];
    const bool last = j + 1 == truth.size();
    DriftRecord rec;
    rec.true_tick = t;
    bool first = true;
    while (r != reports.end() && (last || *r < truth[j + 1])) {
      if (first) {
        rec.report_tick = *r;
        rec.category = (*r - t < w) ? Category::Detected : Category::Late;
        first = false;
      } else {
        out.false_alarms += 1;
      }
      ++r;
    }
    switch (rec.category) {
      case Category::Detected: out.detected += 1; break;
      case Category::Late: out.late += 1; break;
      case Category::Missed: out.missed += 1; break;
    }
    out.records.push_back(rec);
  }
  return out;
}

EvalReport average(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw PreconditionError("average: no reports");
  EvalReport out;
  out.runs = reports.size();
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    out.detected += r.detected / n;
    out.late += r.late / n;
    out.missed += r.missed / n;
    out.false_alarms += r.false_alarms / n;
    out.records.insert(out.records.end(), r.records.begin(), r.records.end());
    out.run_seconds.insert(out.run_seconds.end(), r.run_seconds.begin(), r.run_seconds.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detector

void DetectorConfig::validate() const {
  if (window == 0) throw PreconditionError("detector window must be positive");
  if (effective_training_size() < static_cast<std::size_t>(std::max(k_max, 1))) {
    throw PreconditionError("training size must be at least k_max");
  }
  if (k_max < 1) throw PreconditionError("k_max must be at least 1");
  if (!(assign_confidence > 0.0 && assign_confidence < 1.0)) {
    throw PreconditionError("assign_confidence must lie in (0, 1)");
  }
  if (effective_min_fill() == 0) throw PreconditionError("min_window_fill must be positive");
}

StreamDetector::StreamDetector(DetectorConfig config) : config_(std::move(config)) {
  config_.validate();
}

void StreamDetector::fit_baseline(Tick tick) {
  const std::size_t n = baseline_ids_.size();
  RowMatrix x = Eigen::Map<const RowMatrix>(baseline_rows_.data(), static_cast<Eigen::Index>(n),
                                            static_cast<Eigen::Index>(dim_));
  gmm::FitOptions fit;
  fit.k_max = config_.k_max;
  fit.seed = config_.seed + baselines_;
  gmm::GmmConfig gc;
  gc.assign_confidence = config_.assign_confidence;
  gc.buffer_threshold = config_.buffer_threshold;
  gmm_ = gmm::offline_fit(x, baseline_ids_, fit, gc, tick);

  energy::ClusteredSamples training{x, {}};
  training.labels.reserve(n);
  for (SampleId id : baseline_ids_) training.labels.push_back(gmm_.assignment(id)->component);
  drift_ = energy::IncrementalDrift(dim_);
  drift_.reset(training);

  window_.clear();
  head_ = 0;
  baseline_ids_.clear();
  baseline_rows_.clear();
  collecting_ = false;
  last_.reset();
  since_recompute_ = 0;
  ++baselines_;
}

bool StreamDetector::push(SampleId id, std::span<const double> x, Tick tick) {
  if (dim_ == 0) dim_ = x.size();
  if (x.size() != dim_) throw PreconditionError("detector: dimension changed mid-stream");

  if (collecting_) {
    baseline_ids_.push_back(id);
    baseline_rows_.insert(baseline_rows_.end(), x.begin(), x.end());
    if (baseline_ids_.size() >= config_.effective_training_size()) fit_baseline(tick);
    return false;
  }

  const auto outcome = gmm_.online_assign(id, x, tick);
  if (outcome.created) {
    for (const auto& [sid, cid] : outcome.created->reassigned) {
      if (drift_.contains(sid)) drift_.relabel(sid, cid);
    }
  }
  drift_.add(id, x, outcome.component);
  window_.emplace_back(id, tick);

  const Tick cutoff = tick - static_cast<Tick>(config_.window);
  while (head_ < window_.size() && window_[head_].second <= cutoff) {
    drift_.remove(window_[head_].first);
    ++head_;
  }
  if (head_ > 4096 && head_ * 2 > window_.size()) {
    window_.erase(window_.begin(), window_.begin() + static_cast<std::ptrdiff_t>(head_));
    head_ = 0;
  }
  if (++since_recompute_ >= config_.recompute_every) {
    drift_.recompute();
    since_recompute_ = 0;
  }

  if (drift_.window_size() < config_.effective_min_fill()) return false;
  const auto body = drift_.current();
  if (!body) return false;
  const double previous = last_.value_or(-1.0);
  last_ = body->overall;

  const bool crossed = previous < config_.alert_threshold && body->overall >= config_.alert_threshold;
  const bool refractory = last_alert_ && tick - *last_alert_ < config_.effective_refractory();
  if (!crossed || refractory) return false;

  alerts_.push_back(tick);
  last_alert_ = tick;
  if (config_.rebaseline) collecting_ = true;
  return true;
}

std::vector<Tick> detect(const Dataset& stream, const DetectorConfig& config) {
  StreamDetector det(config);
  for (std::size_t i = 0; i < stream.size(); ++i) det.push(stream.id(i), stream.row(i), stream.tick(i));
  return det.alerts();
}

EvalReport run_benchmark(const SyntheticSpec& spec, const DetectorConfig& config, std::size_t runs) {
  if (runs == 0) throw PreconditionError("run_benchmark: runs must be at least 1");
  std::vector<EvalReport> per_run;
  for (std::size_t r = 0; r < runs; ++r) {
    const auto start = std::chrono::steady_clock::now();
    SyntheticSpec s = spec;
    s.seed = spec.seed + r;
    DetectorConfig c = config;
    c.seed = config.seed + r;
    const SyntheticStream stream = generate(s);
    const auto alerts = detect(stream.dataset, c);
    EvalReport rep = categorize(alerts, stream.drift_ticks, static_cast<Tick>(c.window));
    for (auto& rec : rep.records) rec.run = r;
    rep.run_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    per_run.push_back(std::move(rep));
  }
  return average(per_run);
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json parse_object(std::string_view text, const char* what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string(what) + ": " + e.what());
  }
  if (!j.is_object()) throw SchemaError(std::string(what) + ": expected a JSON object");
  return j;
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const char* what) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw SchemaError(std::string(what) + ": unknown field '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
void read(const json& j, const char* key, std::optional<T>& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  T v{};
  read(j, key, v);
  out = v;
}

}  // namespace

SyntheticSpec parse_spec(std::string_view json_text) {
  const json j = parse_object(json_text, "synthetic spec");
  reject_unknown(j,
                 {"total_points", "n_drifts", "drift_kind", "dimension", "base_mean", "base_covariance",
                  "magnitude", "max_scale_steps", "seed"},
                 "synthetic spec");
  SyntheticSpec s;
  read(j, "total_points", s.total_points);
  read(j, "n_drifts", s.n_drifts);
  std::string kind;
  read(j, "drift_kind", kind);
  if (!kind.empty()) s.kind = drift_kind_from_string(kind);
  read(j, "dimension", s.dimension);
  s.base_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.dimension));
  s.base_covariance = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(s.dimension),
                                                static_cast<Eigen::Index>(s.dimension));
  if (j.contains("base_mean")) {
    const auto v = j.at("base_mean").get<std::vector<double>>();
    s.base_mean = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  if (j.contains("base_covariance")) {
    const auto rows = j.at("base_covariance").get<std::vector<std::vector<double>>>();
    s.base_covariance.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.size()) throw SchemaError("base_covariance must be square");
      for (std::size_t c = 0; c < rows.size(); ++c) {
        s.base_covariance(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    }
  }
  read(j, "magnitude", s.magnitude);
  read(j, "max_scale_steps", s.max_scale_steps);
  read(j, "seed", s.seed);
  s.validate();
  return s;
}

std::string spec_to_json(const SyntheticSpec& s) {
  json cov = json::array();
  for (Eigen::Index r = 0; r < s.base_covariance.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < s.base_covariance.cols(); ++c) row.push_back(s.base_covariance(r, c));
    cov.push_back(row);
  }
  json j{{"total_points", s.total_points},
         {"n_drifts", s.n_drifts},
         {"drift_kind", std::string(to_string(s.kind))},
         {"dimension", s.dimension},
         {"base_mean", std::vector<double>(s.base_mean.data(), s.base_mean.data() + s.base_mean.size())},
         {"base_covariance", cov},
         {"magnitude", s.magnitude},
         {"max_scale_steps", s.max_scale_steps},
         {"seed", s.seed}};
  return j.dump(2);
}

DetectorConfig parse_detector(std::string_view json_text) {
  const json j = parse_object(json_text, "detector config");
  reject_unknown(j,
                 {"window", "training_size", "min_window_fill", "alert_threshold", "refractory", "rebaseline",
                  "k_max", "assign_confidence", "buffer_threshold", "seed", "recompute_every"},
                 "detector config");
  DetectorConfig c;
  read(j, "window", c.window);
  read(j, "training_size", c.training_size);
  read(j, "min_window_fill", c.min_window_fill);
  read(j, "alert_threshold", c.alert_threshold);
  read(j, "refractory", c.refractory);
  read(j, "rebaseline", c.rebaseline);
  read(j, "k_max", c.k_max);
  read(j, "assign_confidence", c.assign_confidence);
  read(j, "buffer_threshold", c.buffer_threshold);
  read(j, "seed", c.seed);
  read(j, "recompute_every", c.recompute_every);
  c.validate();
  return c;
}

std::string detector_to_json(const DetectorConfig& c) {
  json j{{"window", c.window},
         {"alert_threshold", c.alert_threshold},
         {"rebaseline", c.rebaseline},
         {"k_max", c.k_max},
         {"assign_confidence", c.assign_confidence},
         {"seed", c.seed},
         {"recompute_every", c.recompute_every}};
  if (c.training_size) j["training_size"] = *c.training_size;
  if (c.min_window_fill) j["min_window_fill"] = *c.min_window_fill;
  if (c.refractory) j["refractory"] = *c.refractory;
  if (c.buffer_threshold) j["buffer_threshold"] = *c.buffer_threshold;
  return j.dump(2);
}

std::string report_to_json(const EvalReport& r, bool include_records) {
  json j{{"Detected", r.detected},
         {"Late", r.late},
         {"Missed", r.missed},
         {"False", r.false_alarms},
         {"runs", r.runs},
         {"run_seconds", r.run_seconds}};
  if (include_records) {
    json recs = json::array();
    for (const auto& rec : r.records) {
      recs.push_back({{"run", rec.run},
                      {"true_tick", rec.true_tick},
                      {"report_tick", rec.report_tick ? json(*rec.report_tick) : json(nullptr)},
                      {"category", std::string(to_string(rec.category))}});
    }
    j["records"] = recs;
  }
  return j.dump(2);
}

}  // namespace driftlab::bench
