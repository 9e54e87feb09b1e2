#include "driftlab/service.hpp"

#include <atomic>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "driftlab/codec.hpp"
#include "driftlab/session.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <httplib.h>

namespace driftlab::service {

using codec::json;

struct Service::Entry {
  std::mutex write_mutex;  // single writer per session
  mutable std::mutex snapshot_mutex;
  std::shared_ptr<const StreamSession> current;

  std::mutex job_mutex;
  std::thread job;
  std::atomic<bool> job_running{false};
  std::optional<std::string> job_error;

  explicit Entry(StreamSession s) : current(std::make_shared<const StreamSession>(std::move(s))) {}
  ~Entry() {
    if (!job.joinable()) return;
    // The job holds a reference; when it drops the last one it runs here.
    if (job.get_id() == std::this_thread::get_id()) {
      job.detach();
    } else {
      job.join();
    }
  }

  std::shared_ptr<const StreamSession> snapshot() const {
    std::lock_guard lock(snapshot_mutex);
    return current;
  }
  void publish(StreamSession s) {
    auto next = std::make_shared<const StreamSession>(std::move(s));
    std::lock_guard lock(snapshot_mutex);
    current = std::move(next);
  }
  void join_job() {
    std::lock_guard lock(job_mutex);
    if (job.joinable()) job.join();
  }
};

namespace {

// ---------------------------------------------------------------------------
// Responses and errors

struct HttpError : Error {
  int status;
  std::string code;
  json detail;
  HttpError(int s, std::string c, const std::string& message, json d = nullptr)
      : Error(message), status(s), code(std::move(c)), detail(std::move(d)) {}
};

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                json detail = nullptr) {
  send(res, status, json{{"code", code}, {"message", message}, {"detail", std::move(detail)}});
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guard(Handler inner) {
  return [inner = std::move(inner)](const httplib::Request& req, httplib::Response& res) {
    try {
      inner(req, res);
    } catch (const HttpError& e) {
      send_error(res, e.status, e.code, e.what(), e.detail);
    } catch (const ParseError& e) {
      send_error(res, 400, "parse_error", e.what(), json{{"row", e.row()}, {"column", e.column()}});
    } catch (const SchemaError& e) {
      send_error(res, 400, "schema_error", e.what());
    } catch (const PreconditionError& e) {
      send_error(res, 400, "invalid_request", e.what());
    } catch (const NotFoundError& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, "conflict", e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, "schema_error", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw HttpError(400, "parse_error", std::string("request body is not valid JSON: ") + e.what());
  }
}

bool is_csv(const httplib::Request& req) {
  const auto type = req.get_header_value("Content-Type");
  return type.find("text/csv") != std::string::npos || type.find("text/plain") != std::string::npos;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

std::vector<SampleId> ids_param(const httplib::Request& req, const char* name) {
  std::vector<SampleId> out;
  for (const auto& part : split_commas(req.get_param_value(name))) {
    try {
      out.push_back(std::stoll(part));
    } catch (const std::logic_error&) {
      throw PreconditionError(std::string("bad id '") + part + "' in " + name);
    }
  }
  return out;
}

std::string new_session_id() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  std::ostringstream ss;
  ss << std::hex << rng();
  return ss.str();
}

bool valid_session_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; });
}

// ---------------------------------------------------------------------------
// Input decoding

CsvSchema default_schema(std::string_view csv) {
  CsvSchema schema;
  const auto newline = csv.find('\n');
  const auto header = parse_csv_records(csv.substr(0, newline == std::string_view::npos ? csv.size() : newline));
  if (header.empty()) return schema;
  for (const auto& col : header.front()) {
    if (col == "label") schema.label_column = "label";
    if (col == "id") schema.id_column = "id";
  }
  return schema;
}

CsvSchema schema_from_json(const json& j, std::string_view csv) {
  CsvSchema schema = default_schema(csv);
  if (j.is_null()) return schema;
  codec::optional_field(j, "timestamp_column", schema.timestamp_column);
  if (j.contains("label_column")) schema.label_column = j.at("label_column").is_null() ? std::nullopt : std::optional<std::string>(j.at("label_column").get<std::string>());
  if (j.contains("id_column")) schema.id_column = j.at("id_column").is_null() ? std::nullopt : std::optional<std::string>(j.at("id_column").get<std::string>());
  codec::optional_field(j, "ignored_columns", schema.ignored_columns);
  return schema;
}

std::vector<StreamRow> rows_from_json(const json& body, const Dataset& dataset) {
  if (!body.contains("rows") || !body.at("rows").is_array()) throw SchemaError("body needs a 'rows' array");
  std::vector<StreamRow> rows;
  std::size_t index = 0;
  for (const auto& r : body.at("rows")) {
    ++index;
    StreamRow row;
    row.tick = codec::field<Tick>(r, "t");
    const json& f = codec::field<json>(r, "features");
    if (f.is_array()) {
      row.features = f.get<std::vector<double>>();
    } else if (f.is_object()) {
      for (const auto& name : dataset.feature_names()) {
        if (!f.contains(name)) throw ParseError("missing feature", index, name);
        row.features.push_back(f.at(name).get<double>());
      }
    } else {
      throw SchemaError("'features' must be an array or an object");
    }
    for (std::size_t c = 0; c < row.features.size(); ++c) {
      if (!std::isfinite(row.features[c])) {
        throw ParseError("non-finite value", index,
                         c < dataset.feature_names().size() ? dataset.feature_names()[c] : "?");
      }
    }
    if (r.contains("id") && !r.at("id").is_null()) row.id = r.at("id").get<SampleId>();
    if (r.contains("label") && !r.at("label").is_null()) row.label = r.at("label").get<int>();
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<StreamRow> rows_from_csv(const std::string& text, const Dataset& dataset) {
  CsvSchema schema = default_schema(text);
  const Dataset parsed = ingest_csv(text, schema);
  std::vector<std::size_t> order;
  for (const auto& name : dataset.feature_names()) {
    auto it = std::find(parsed.feature_names().begin(), parsed.feature_names().end(), name);
    if (it == parsed.feature_names().end()) throw SchemaError("CSV lacks feature column '" + name + "'");
    order.push_back(static_cast<std::size_t>(it - parsed.feature_names().begin()));
  }
  if (parsed.dim() != dataset.dim()) throw SchemaError("CSV has extra feature columns");
  std::vector<StreamRow> rows;
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    StreamRow row;
    const auto r = parsed.row(i);
    for (std::size_t c : order) row.features.push_back(r[c]);
    row.tick = parsed.tick(i);
    if (schema.id_column) row.id = parsed.id(i);
    row.label = parsed.label(i);
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Sample ids named by a body: explicit "sample_ids", or a "batch" reference
/// (window:<tick>, training, set name). Defaults to the current window.
std::vector<SampleId> batch_ids(const StreamSession& s, const json& body) {
  if (body.contains("sample_ids")) return codec::field<std::vector<SampleId>>(body, "sample_ids");
  if (body.contains("batch")) return s.resolve_batch(BatchRef::parse(codec::field<std::string>(body, "batch")));
  return s.window().member_ids;
}

// ---------------------------------------------------------------------------
// Views

json session_summary(const std::string& id, const StreamSession& s) {
  return {{"id", id},
          {"revision", s.revision()},
          {"feature_names", s.dataset().feature_names()},
          {"has_labels", s.dataset().has_labels()},
          {"sample_count", s.dataset().size()},
          {"training_count", s.training_ids().size()},
          {"window", {{"length", s.window().length}, {"end_tick", s.window().end_tick},
                      {"size", s.window().member_ids.size()}}},
          {"component_count", s.gmm().components().size()},
          {"drift_points", s.drift_series().size()},
          {"projection_stale", s.projection_stale()},
          {"learner_count", s.learners().all().size()},
          {"config", codec::encode(s.config())}};
}

json components_view(const StreamSession& s) {
  json comps = json::array();
  std::size_t total = 0;
  for (const auto& c : s.gmm().components()) total += c.member_count();
  for (const auto& c : s.gmm().components()) {
    json j = codec::encode(c);
    j.erase("members");
    j["weight"] = total ? static_cast<double>(c.member_count()) / static_cast<double>(total) : 0.0;
    comps.push_back(std::move(j));
  }
  json aliases = json::object();
  for (const auto& [from, to] : s.gmm().aliases()) aliases[std::to_string(from)] = to;
  return {{"components", comps},
          {"pending", s.gmm().pending().size()},
          {"buffer_threshold", s.gmm().buffer_threshold()},
          {"aliases", aliases}};
}

json drift_view(const StreamSession& s, const std::vector<std::string>& features) {
  for (const auto& f : features) {
    const auto& names = s.dataset().feature_names();
    if (std::find(names.begin(), names.end(), f) == names.end()) {
      throw PreconditionError("unknown feature '" + f + "'");
    }
  }
  json points = json::array();
  json alerts = json::array();
  double previous = -1.0;
  const double threshold = s.config().drift_alert_threshold;
  for (const auto& p : s.drift_series()) {
    json per_feature = json::object();
    for (const auto& f : features) per_feature[f] = p.per_feature.at(f);
    json clusters = codec::encode(p).at("per_cluster");
    points.push_back({{"tick", p.tick}, {"overall", p.overall}, {"per_feature", per_feature}, {"per_cluster", clusters}});
    if (previous < threshold && p.overall >= threshold) alerts.push_back(p.tick);
    previous = p.overall;
  }
  return {{"points", points}, {"features", features}, {"alert_threshold", threshold}, {"alerts", alerts}};
}

json performance_view(const ensemble::PerformanceReport& r) {
  return {{"current", codec::encode(r.current)},
          {"previous", r.previous ? codec::encode(*r.previous) : json(nullptr)}};
}

json sets_view(const StreamSession& s) {
  json sets = json::array();
  for (const auto& [name, set] : s.samples_of_interest()) {
    json dist = nullptr;
    if (!s.ensemble().members.empty()) {
      dist = json::object();
      for (const auto& [lid, v] : s.model_distribution(set.ids)) dist[std::to_string(lid)] = v;
    }
    sets.push_back({{"name", name}, {"ids", set.ids}, {"created_tick", set.created_tick}, {"model_distribution", dist}});
  }
  return sets;
}

void write_atomically(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp);
    out << text;
    if (!out) throw Error("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("no saved session at " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Service

Service::Service(ServiceOptions options) : options_(std::move(options)) {
  std::filesystem::create_directories(options_.data_dir);
}

Service::~Service() { drain(); }

void Service::drain() {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::shared_lock lock(sessions_mutex_);
    for (const auto& [id, e] : sessions_) entries.push_back(e);
  }
  for (auto& e : entries) e->join_job();
}

std::size_t Service::session_count() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

std::shared_ptr<Service::Entry> Service::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

std::string Service::add(std::shared_ptr<Entry> entry, std::optional<std::string> id) {
  std::unique_lock lock(sessions_mutex_);
  std::string key = id.value_or(new_session_id());
  while (!id && sessions_.contains(key)) key = new_session_id();
  sessions_[key] = std::move(entry);
  return key;
}

namespace {

/// Runs `fn` on a copy of the session and publishes it with the revision
/// bumped by one. Honors If-Match for optimistic concurrency.
template <typename Fn>
json mutate(Service::Entry& entry, const httplib::Request& req, Fn&& fn) {
  std::lock_guard lock(entry.write_mutex);
  const auto current = entry.snapshot();
  if (req.has_header("If-Match")) {
    std::string expected = req.get_header_value("If-Match");
    expected.erase(std::remove(expected.begin(), expected.end(), '"'), expected.end());
    if (expected != std::to_string(current->revision())) {
      throw HttpError(409, "stale_revision", "session is at revision " + std::to_string(current->revision()),
                      json{{"revision", current->revision()}, {"expected", expected}});
    }
  }
  StreamSession next = *current;
  json out = fn(next);
  next.set_revision(current->revision() + 1);
  out["revision"] = next.revision();
  entry.publish(std::move(next));
  return out;
}

void start_projection(const std::shared_ptr<Service::Entry>& entry) {
  std::lock_guard lock(entry->job_mutex);
  if (entry->job_running) return;
  if (entry->job.joinable()) entry->job.join();
  entry->job_running = true;
  entry->job_error.reset();
  entry->job = std::thread([entry] {
    try {
      const auto snap = entry->snapshot();
      std::vector<SampleId> anchors;
      auto problem = snap->projection_problem(&anchors);
      auto solution = projection::solve(problem, snap->config().projection);
      solution.tick = snap->window().end_tick;
      std::set<ComponentId> structure;
      for (const auto& c : snap->gmm().components()) structure.insert(c.id());
      std::lock_guard wl(entry->write_mutex);
      StreamSession next = *entry->snapshot();
      next.install_projection(std::move(solution), snap->data_version(), std::move(anchors), std::move(structure));
      next.set_revision(next.revision() + 1);
      entry->publish(std::move(next));
    } catch (const std::exception& e) {
      entry->job_error = e.what();
    }
    entry->job_running = false;
  });
}

}  // namespace

void Service::register_routes(httplib::Server& server) {
  const std::string sid = R"(/v1/sessions/([A-Za-z0-9_-]+))";

  server.Get("/v1/health", guard([](const httplib::Request&, httplib::Response& res) {
    send(res, 200, json{{"status", "ok"}});
  }));

  server.Get("/v1/spec", guard([](const httplib::Request&, httplib::Response& res) {
    res.set_content(openapi_document(), "application/json");
  }));

  // ---- sessions
  server.Post("/v1/sessions", guard([this](const httplib::Request& req, httplib::Response& res) {
    std::string csv;
    CsvSchema schema;
    SessionConfig config;
    if (is_csv(req)) {
      csv = req.body;
      schema = default_schema(csv);
    } else {
      const json body = parse_body(req);
      csv = codec::field<std::string>(body, "csv");
      schema = schema_from_json(body.value("schema", json(nullptr)), csv);
      if (body.contains("config")) config = codec::decode_config(body.at("config"));
    }
    if (csv.find_first_not_of(" \t\r\n") == std::string::npos) throw PreconditionError("empty CSV");
    Dataset data = ingest_csv(csv, schema);
    if (data.empty()) throw PreconditionError("CSV has no data rows");
    auto session = StreamSession::create(std::move(data), config);
    const std::string id = add(std::make_shared<Entry>(std::move(session)));
    send(res, 201, session_summary(id, *find(id)->snapshot()));
  }));

  server.Get("/v1/sessions", guard([this](const httplib::Request&, httplib::Response& res) {
    json ids = json::array();
    std::shared_lock lock(sessions_mutex_);
    for (const auto& [id, e] : sessions_) ids.push_back({{"id", id}, {"revision", e->snapshot()->revision()}});
    send(res, 200, json{{"sessions", ids}});
  }));

  server.Post("/v1/sessions/import", guard([this](const httplib::Request& req, httplib::Response& res) {
    auto session = StreamSession::from_json(req.body);
    const std::string id = add(std::make_shared<Entry>(std::move(session)));
    send(res, 201, session_summary(id, *find(id)->snapshot()));
  }));

  server.Get(sid, guard([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    send(res, 200, session_summary(id, *find(id)->snapshot()));
  }));

  server.Delete(sid, guard([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    auto entry = find(id);
    entry->join_job();
    std::unique_lock lock(sessions_mutex_);
    sessions_.erase(id);
    send(res, 200, json{{"deleted", id}});
  }));

  server.Get(sid + "/export", guard([this](const httplib::Request& req, httplib::Response& res) {
    res.set_content(find(req.matches[1])->snapshot()->to_json(), "application/json");
  }));

  server.Post(sid + "/save", guard([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto snap = find(id)->snapshot();
    const auto path = options_.data_dir / (id + ".json");
    write_atomically(path, snap->to_json());
    send(res, 200, json{{"id", id}, {"path", path.string()}, {"revision", snap->revision()}});
  }));

  server.Post(sid + "/load", guard([this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!valid_session_id(id)) throw PreconditionError("invalid session id");
    auto loaded = StreamSession::from_json(read_file(options_.data_dir / (id + ".json")));
    std::shared_ptr<Entry> existing;
    {
      std::shared_lock lock(sessions_mutex_);
      if (auto it = sessions_.find(id); it != sessions_.end()) existing = it->second;
    }
    if (existing) {
      existing->join_job();
      std::lock_guard lock(existing->write_mutex);
      // Keep revisions monotone across a reload.
      loaded.set_revision(std::max(loaded.revision(), existing->snapshot()->revision() + 1));
      existing->publish(std::move(loaded));
    } else {
      add(std::make_shared<Entry>(std::move(loaded)), id);
    }
    send(res, 200, session_summary(id, *find(id)->snapshot()));
  }));

  // ---- stream and drift
  server.Post(sid + "/stream", guard([this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    const json out = mutate(*entry, req, [&](StreamSession& s) {
      const auto rows = is_csv(req) ? rows_from_csv(req.body, s.dataset()) : rows_from_json(parse_body(req), s.dataset());
      json points = json::array();
      for (const auto& p : s.advance(rows)) points.push_back(codec::encode(p));
      return json{{"drift_points", points}, {"end_tick", s.window().end_tick}};
    });
    send(res, 200, out);
  }));

  server.Get(sid + "/drift", guard([this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = find(req.matches[1])->snapshot();
    json body = drift_view(*snap, split_commas(req.get_param_value("features")));
    body["revision"] = snap->revision();
    send(res, 200, body);
  }));

  server.Get(sid + "/samples", guard([this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = find(req.matches[1])->snapshot();
    const auto& d = snap->dataset();
    std::vector<std::size_t> rows;
    if (req.has_param("ids")) {
      for (SampleId id : ids_param(req, "ids")) rows.push_back(d.index_of(id));
    } else {
      const Tick from = req.has_param("from") ? std::stoll(req.get_param_value("from")) : std::numeric_limits<Tick>::min();
      const Tick to = req.has_param("to") ? std::stoll(req.get_param_value("to")) : std::numeric_limits<Tick>::max();
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.tick(i) >= from && d.tick(i) <= to) rows.push_back(i);
      }
    }
    json samples = json::array();
    for (std::size_t i : rows) {
      const auto r = d.row(i);
      const auto a = snap->gmm().assignment(d.id(i));
      samples.push_back({{"id", d.id(i)},
                         {"tick", d.tick(i)},
                         {"features", std::vector<double>(r.begin(), r.end())},
                         {"label", d.label(i) ? json(*d.label(i)) : json(nullptr)},
                         {"component", a ? json(snap->gmm().resolve(a->component)) : json(nullptr)},
                         {"firm", a ? json(a->firm) : json(nullptr)}});
    }
    send(res, 200, json{{"samples", samples}, {"revision", snap->revision()}});
  }));

  // ---- mixture
  server.Get(sid + "/components", guard([this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = find(req.matches[1])->snapshot();
    json body = components_view(*snap);
    body["revision"] = snap->revision();
    send(res, 200, body);
  }));

  server.Post(sid + "/components/merge", guard([this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    const json body = parse_body(req);
    const auto ids = codec::field<std::vector<ComponentId>>(body, "ids");
    const json out = mutate(*entry, req, [&](StreamSession& s) {
      const auto outcome = s.merge_components(ids);
      return json{{"merged_id", outcome.merged_id}, {"changed_samples", outcome.changed.size()}};
    });
    send(res, 200, out);
  }));

  // ---- projection and density
  server.Get(sid + "/projection", guard([this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    const auto snap = entry->snapshot();
    if (!snap->projection()) throw NotFoundError("no projection has been computed");
    json body = codec::encode(snap->projection()->solution);
    body["stale"] = snap->projection_stale();
    body["job_running"] = entry->job_running.load();
    body["revision"] = snap->revision();
    send(res, 200, body);
  }));

  server.Post(sid + "/projection/refresh", guard([this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    start_projection(entry);
    const bool wait = req.get_param_value("wait") == "true" || req.get_param_value("wait") == "1";
    if (!wait) {
      send(res, 202, json{{"status", "running"}, {"revision", entry->snapshot()->revision()}});
      return;
    }
    entry->join_job();
    if (entry->job_error) throw HttpError(500, "projection_failed", *entry->job_error);
    const auto snap = entry->snapshot();
    send(res, 200, json{{"status", "done"}, {"revision", snap->revision()}, {"tick", snap->projection()->solution.tick}});
  }));

  server.Get(sid + "/density-diff", guard([this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = find(req.matches[1])->snapshot();
    std::optional<BatchRef> newer;
    std::optional<BatchRef> older;
    if (req.has_param("newer")) newer = BatchRef::parse(req.get_param_value("newer"));
    if (req.has_param("older")) older = BatchRef::parse(req.get_param_value("older"));
    json body = codec::encode(snap->density_diff(newer, older));
    body["revision"] = snap->revision();
    send(res, 200, body);
  }));

  // ---- learners and ensemble
  server.Post(sid + "/learners", guard([this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    const json body = parse_body(req);
    const auto ids = codec::field<std::vector<SampleId>>(body, "sample_ids");
    std::optional<ensemble::TrainOptions> options;
    if (body.contains("hyperparams")) {
      options = codec::decode_train_options(body.at("hyperparams"), entry->snapshot()->config().ensemble.train);
    }
    const json out = mutate(*entry, req, [&](StreamSession& s) {
      const auto& l = s.train_learner(ids, options);
      return json{{"learner_id", l.id},
                  {"warning", l.warning ? json(*l.warning) : json(nullptr)},
                  {"component_histogram", codec::encode(l).at("component_histogram")}};
    });
    send(res, 201, out);
  }));

  server.Get(sid + "/learners", guard([this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = find(req.matches[1])->snapshot();
    json list = json::array();
    for (const auto& [id, l] : snap->learners().all()) {
      json j = codec::encode(l);
      j.erase("model");
      double weight = 0.0;
      for (const auto& m : snap->ensemble().members) {
        if (m.learner == id) weight = m.weight;
      }
      j["ensemble_weight"] = weight;
      list.push_back(std::move(j));
    }
    send(res, 200, json{{"learners", list}, {"revision", snap->revision()}});
  }));

  server.Get(sid + "/ensemble", guard([this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = find(req.matches[1])->snapshot();
    json body = codec::encode(snap->ensemble());
    body["revision"] = snap->revision();
    send(res, 200, body);
  }));

  server.Put(sid + "/ensemble", guard([this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    const json body = parse_body(req);
    const auto ids = codec::field<std::vector<ensemble::LearnerId>>(body, "learners");
    std::optional<std::vector<double>> weights;
    codec::optional_field(body, "weights", weights);
    const json out = mutate(*entry, req, [&](StreamSession& s) {
      s.set_ensemble(ids, weights);
      return json{{"ensemble", codec::encode(s.ensemble())}};
    });
    send(res, 200, out);
  }));

  server.Post(sid + "/ensemble/update", guard([this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    const json body = parse_body(req);
    const json out = mutate(*entry, req, [&](StreamSession& s) {
      s.update_ensemble(batch_ids(s, body));
      return json{{"ensemble", codec::encode(s.ensemble())}};
    });
    send(res, 200, out);
  }));

  server.Get(sid + "/performance", guard([this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = find(req.matches[1])->snapshot();
    json selector = json::object();
    if (req.has_param("ids")) selector["sample_ids"] = ids_param(req, "ids");
    if (req.has_param("batch")) selector["batch"] = req.get_param_value("batch");
    std::size_t bins = 10;
    if (req.has_param("bins")) bins = static_cast<std::size_t>(std::stoul(req.get_param_value("bins")));
    const bool compare = req.get_param_value("compare") == "prev";
    json body = performance_view(snap->performance(batch_ids(*snap, selector), compare, bins));
    body["revision"] = snap->revision();
    send(res, 200, body);
  }));

  // ---- samples of interest
  server.Post(sid + "/samples-of-interest", guard([this](const httplib::Request& req, httplib::Response& res) {
    auto entry = find(req.matches[1]);
    const json body = parse_body(req);
    const auto name = codec::field<std::string>(body, "name");
    const auto ids = codec::field<std::vector<SampleId>>(body, "ids");
    const json out = mutate(*entry, req, [&](StreamSession& s) {
      s.mark_samples(name, ids);
      return json{{"name", name}};
    });
    send(res, 201, out);
  }));

  server.Get(sid + "/samples-of-interest", guard([this](const httplib::Request& req, httplib::Response& res) {
    const auto snap = find(req.matches[1])->snapshot();
    send(res, 200, json{{"sets", sets_view(*snap)}, {"revision", snap->revision()}});
  }));

  if (options_.static_dir) server.set_mount_point("/", options_.static_dir->string());
}

// ---------------------------------------------------------------------------
// OpenAPI

std::string openapi_document() {
  auto op = [](const char* summary, std::initializer_list<int> codes) {
    json responses = json::object();
    for (int c : codes) {
      responses[std::to_string(c)] = {
          {"description", c < 300 ? "OK" : "Error"},
          {"content", {{"application/json", {{"schema", {{"$ref", c < 300 ? "#/components/schemas/Any"
                                                                           : "#/components/schemas/Error"}}}}}}}};
    }
    return json{{"summary", summary}, {"responses", responses}};
  };
  json paths = {
      {"/v1/health", {{"get", op("Liveness probe", {200})}}},
      {"/v1/spec", {{"get", op("This document", {200})}}},
      {"/v1/sessions",
       {{"get", op("List sessions", {200})},
        {"post", op("Create a session from CSV (text/csv body, or JSON {csv, schema, config}); fits the mixture on training rows", {201, 400})}}},
      {"/v1/sessions/import", {{"post", op("Create a session from an exported session document", {201, 400})}}},
      {"/v1/sessions/{id}", {{"get", op("Session summary", {200, 404})}, {"delete", op("Drop a session", {200, 404})}}},
      {"/v1/sessions/{id}/export", {{"get", op("Full session document", {200, 404})}}},
      {"/v1/sessions/{id}/save", {{"post", op("Write the session document to the data directory", {200, 404})}}},
      {"/v1/sessions/{id}/load", {{"post", op("Load the session document from the data directory", {200, 400, 404})}}},
      {"/v1/sessions/{id}/stream", {{"post", op("Append rows (JSON {rows:[{t, features, id?, label?}]} or text/csv); one drift point per tick", {200, 400, 404, 409})}}},
      {"/v1/sessions/{id}/drift", {{"get", op("Drift series; ?features=f1,f2 adds per-feature lines", {200, 400, 404})}}},
      {"/v1/sessions/{id}/samples", {{"get", op("Sample details by ?ids= or tick range ?from=&to=", {200, 404})}}},
      {"/v1/sessions/{id}/components", {{"get", op("Mixture components", {200, 404})}}},
      {"/v1/sessions/{id}/components/merge", {{"post", op("Merge components {ids:[...]}", {200, 400, 404, 409})}}},
      {"/v1/sessions/{id}/projection", {{"get", op("Latest projection with staleness flag", {200, 404})}}},
      {"/v1/sessions/{id}/projection/refresh", {{"post", op("Start a projection solve; ?wait=true blocks until done", {200, 202, 404})}}},
      {"/v1/sessions/{id}/density-diff", {{"get", op("Signed density grid; ?newer=&older= take window:<tick>, training or a set name", {200, 400, 404})}}},
      {"/v1/sessions/{id}/learners",
       {{"get", op("Base learners with component histograms", {200, 404})},
        {"post", op("Train a learner {sample_ids, hyperparams?}", {201, 400, 404, 409})}}},
      {"/v1/sessions/{id}/ensemble",
       {{"get", op("Ensemble members and weights", {200, 404})},
        {"put", op("Set members {learners, weights?}; weights default to uniform", {200, 400, 404, 409})}}},
      {"/v1/sessions/{id}/ensemble/update", {{"post", op("Weighted-majority update on a labeled batch {batch | sample_ids}", {200, 400, 404, 409})}}},
      {"/v1/sessions/{id}/performance", {{"get", op("Per-class confidence-bin statistics; ?compare=prev adds the model before the last update", {200, 400, 404})}}},
      {"/v1/sessions/{id}/samples-of-interest",
       {{"get", op("Named sample sets with model distribution", {200, 404})},
        {"post", op("Create a named set {name, ids}", {201, 400, 404, 409})}}}};
  json doc = {{"openapi", "3.0.3"},
              {"info", {{"title", "driftlab"}, {"version", "1.0.0"}}},
              {"paths", paths},
              {"components",
               {{"schemas",
                 {{"Any", {{"type", "object"}}},
                  {"Error",
                   {{"type", "object"},
                    {"required", {"code", "message", "detail"}},
                    {"properties",
                     {{"code", {{"type", "string"}}}, {"message", {{"type", "string"}}}, {"detail", json::object()}}}}}}}}},
              {"x-concurrency",
               "Mutating requests accept If-Match: <revision>; a stale revision returns 409. Every mutation bumps the revision by one."}};
  return doc.dump(2);
}

}  // namespace driftlab::service
