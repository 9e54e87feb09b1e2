#pragma once

// Shared domain types: datasets, sliding windows, drift points, error types
// and CSV ingestion.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace driftlab {

using SampleId = std::int64_t;
using Tick = std::int64_t;
using ComponentId = std::int64_t;

/// Row-major matrix; one row per sample.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input; carries the 1-based data row and column name when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t row, std::string column);
  std::size_t row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Ordering or revision conflicts (out-of-order ticks, stale writes).
class ConflictError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Dataset

/// Samples with features, ticks, optional labels and stable ids.
///
/// Rows are stored contiguously (row-major) so that subsets can be gathered
/// into a RowMatrix cheaply.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<std::string> feature_names);

  const std::vector<std::string>& feature_names() const { return feature_names_; }
  std::size_t dim() const { return feature_names_.size(); }
  std::size_t size() const { return ticks_.size(); }
  bool empty() const { return ticks_.empty(); }
  bool has_labels() const { return labels_.has_value(); }

  std::span<const double> row(std::size_t index) const;
  Tick tick(std::size_t index) const { return ticks_[index]; }
  SampleId id(std::size_t index) const { return ids_[index]; }
  std::optional<int> label(std::size_t index) const;

  const std::vector<Tick>& ticks() const { return ticks_; }
  const std::vector<SampleId>& ids() const { return ids_; }
  const std::vector<double>& values() const { return values_; }
  const std::optional<std::vector<int>>& labels() const { return labels_; }

  bool contains(SampleId id) const { return index_.contains(id); }
  /// Throws NotFoundError for unknown ids.
  std::size_t index_of(SampleId id) const;
  std::optional<std::size_t> find(SampleId id) const;

  /// Appends one sample. Validates dimension, finiteness, tick order, id
  /// uniqueness and label presence consistency.
  void append(std::span<const double> features, Tick tick, SampleId id,
              std::optional<int> label = std::nullopt);

  /// Gathers the rows of the given ids (in order) into a matrix.
  RowMatrix gather(std::span<const SampleId> ids) const;
  RowMatrix gather_indices(std::span<const std::size_t> indices) const;

  Tick max_tick() const { return ticks_.empty() ? 0 : ticks_.back(); }
  SampleId next_id() const { return next_id_; }

  bool operator==(const Dataset& other) const;

 private:
  std::vector<std::string> feature_names_;
  std::vector<double> values_;
  std::vector<Tick> ticks_;
  std::vector<SampleId> ids_;
  std::optional<std::vector<int>> labels_;
  std::unordered_map<SampleId, std::size_t> index_;
  SampleId next_id_ = 0;
};

// ---------------------------------------------------------------------------
// Sliding window

/// Samples with tick in the half-open range (end_tick - length, end_tick].
struct SlidingWindow {
  Tick length = 1;
  Tick end_tick = 0;
  std::vector<SampleId> member_ids;

  Tick start_exclusive() const { return end_tick - length; }
  bool covers(Tick tick) const { return tick > start_exclusive() && tick <= end_tick; }

  /// Moves end_tick and recomputes member_ids from dataset rows at index
  /// >= first_stream_index (training rows form a prefix and never enter).
  void slide_to(Tick new_end, const Dataset& dataset, std::size_t first_stream_index);
};

// ---------------------------------------------------------------------------
// Drift points

struct ClusterDrift {
  double weight_fraction = 0.0;
  double distance = 0.0;
  bool operator==(const ClusterDrift&) const = default;
};

/// Drift degree for one tick: overall, per feature, and per cluster.
struct DriftPoint {
  Tick tick = 0;
  double overall = 0.0;
  std::map<std::string, double> per_feature;
  std::map<ComponentId, ClusterDrift> per_cluster;

  /// Weighted sum over per_cluster, for consistency checks.
  double recomputed_overall() const;
  bool operator==(const DriftPoint&) const = default;
};

// ---------------------------------------------------------------------------
// CSV

/// Column roles for CSV ingestion. Columns not named here are features.
struct CsvSchema {
  std::string timestamp_column = "t";
  std::optional<std::string> label_column;
  std::optional<std::string> id_column;
  /// Columns to drop entirely.
  std::vector<std::string> ignored_columns;
  /// Converts timestamp cells to ticks; integer parsing when empty. Calendar
  /// formats plug in here.
  std::function<Tick(std::string_view)> timestamp_parser;
};

/// Splits RFC-4180 text into records. Handles quoted fields, doubled quotes,
/// embedded newlines and CRLF line endings.
std::vector<std::vector<std::string>> parse_csv_records(std::string_view text);

/// Parses a CSV document into a Dataset sorted (stably) by timestamp.
///
/// Without an id column, ids are assigned 0..n-1 in sorted order.
Dataset ingest_csv(std::string_view text, const CsvSchema& schema);

/// Writes a dataset as CSV with columns id, t, [label], features...; doubles
/// are printed with round-trip precision. `ingest_csv` with
/// `serialization_schema()` reproduces the dataset exactly.
std::string to_csv(const Dataset& dataset);
CsvSchema serialization_schema(const Dataset& dataset);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace driftlab
