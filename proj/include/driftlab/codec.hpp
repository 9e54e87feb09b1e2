#pragma once

// JSON encodings shared by session persistence and the HTTP service.
// Doubles are written in shortest round-trip form, so decode(encode(x))
// reproduces x exactly.

#include <nlohmann/json.hpp>

#include "driftlab/core.hpp"
#include "driftlab/density.hpp"
#include "driftlab/ensemble.hpp"
#include "driftlab/gmm.hpp"
#include "driftlab/projection.hpp"
#include "driftlab/session.hpp"

namespace driftlab::codec {

using nlohmann::json;

json encode(const Dataset& dataset);
Dataset decode_dataset(const json& j);

json encode(const DriftPoint& point);
DriftPoint decode_drift_point(const json& j);

json encode(const gmm::GaussianComponent& component);
json encode(const gmm::GmmState& state);
gmm::GmmState decode_gmm(const json& j);

/// {"points": [[id, x, y, component], ...], "objective_trace", "tick", ...}
json encode(const projection::ProjectionSolution& solution);
projection::ProjectionSolution decode_projection(const json& j);

json encode(const projection::ProjectionConfig& config);
projection::ProjectionConfig decode_projection_config(const json& j,
                                                      projection::ProjectionConfig base = {});

json encode(const density::DensityDiff& diff);

json encode(const ensemble::BaseLearner& learner);
ensemble::BaseLearner decode_learner(const json& j);
json encode(const ensemble::EnsembleModel& model);
ensemble::EnsembleModel decode_ensemble(const json& j);
json encode(const ensemble::PerformanceSummary& summary);
json encode(const ensemble::TrainOptions& options);
ensemble::TrainOptions decode_train_options(const json& j, ensemble::TrainOptions base = {});

json encode(const SessionConfig& config);
/// Missing fields keep their defaults; unknown fields are rejected.
SessionConfig decode_config(const json& j);

/// Wraps nlohmann type errors as SchemaError naming the field.
template <typename T>
T field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("field '") + key + "': " + e.what());
  }
}

/// Reference to a required member; safe to iterate with items().
inline const json& member(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(std::string("missing field '") + key + "'");
  return *it;
}

template <typename T>
void optional_field(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  out = field<T>(j, key);
}

template <typename T>
void optional_field(const json& j, const char* key, std::optional<T>& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (it->is_null()) {
    out.reset();
    return;
  }
  out = field<T>(j, key);
}

}  // namespace driftlab::codec
