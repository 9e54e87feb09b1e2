#include "driftlab/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

namespace driftlab {

ParseError::ParseError(const std::string& message, std::size_t row, std::string column)
    : Error(message), row_(row), column_(std::move(column)) {}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<std::string> feature_names)
    : feature_names_(std::move(feature_names)) {}

std::span<const double> Dataset::row(std::size_t index) const {
  return {values_.data() + index * dim(), dim()};
}

std::optional<int> Dataset::label(std::size_t index) const {
  if (!labels_) return std::nullopt;
  return (*labels_)[index];
}

std::size_t Dataset::index_of(SampleId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw NotFoundError("unknown sample id " + std::to_string(id));
  return it->second;
}

std::optional<std::size_t> Dataset::find(SampleId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Dataset::append(std::span<const double> features, Tick tick, SampleId id,
                     std::optional<int> label) {
  if (features.size() != dim()) {
    throw PreconditionError("feature vector has dimension " + std::to_string(features.size()) +
                            ", expected " + std::to_string(dim()));
  }
  for (double v : features) {
    if (!std::isfinite(v)) {
      throw PreconditionError("non-finite feature value at row " + std::to_string(size()));
    }
  }
  if (!ticks_.empty() && tick < ticks_.back()) {
    throw ConflictError("tick " + std::to_string(tick) + " precedes last tick " +
                        std::to_string(ticks_.back()));
  }
  if (index_.contains(id)) throw PreconditionError("duplicate sample id " + std::to_string(id));
  if (ticks_.empty() && label) labels_.emplace();
  if (labels_.has_value() != label.has_value()) {
    throw PreconditionError("label presence must be consistent across rows");
  }

  values_.insert(values_.end(), features.begin(), features.end());
  ticks_.push_back(tick);
  ids_.push_back(id);
  if (label) labels_->push_back(*label);
  index_.emplace(id, ticks_.size() - 1);
  next_id_ = std::max(next_id_, id + 1);
}

RowMatrix Dataset::gather(std::span<const SampleId> ids) const {
  RowMatrix out(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(dim()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto r = row(index_of(ids[i]));
    std::copy(r.begin(), r.end(), out.row(static_cast<Eigen::Index>(i)).data());
  }
  return out;
}

RowMatrix Dataset::gather_indices(std::span<const std::size_t> indices) const {
  RowMatrix out(static_cast<Eigen::Index>(indices.size()), static_cast<Eigen::Index>(dim()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto r = row(indices[i]);
    std::copy(r.begin(), r.end(), out.row(static_cast<Eigen::Index>(i)).data());
  }
  return out;
}

bool Dataset::operator==(const Dataset& other) const {
  return feature_names_ == other.feature_names_ && values_ == other.values_ &&
         ticks_ == other.ticks_ && ids_ == other.ids_ && labels_ == other.labels_;
}

// ---------------------------------------------------------------------------
// Window

void SlidingWindow::slide_to(Tick new_end, const Dataset& dataset,
                             std::size_t first_stream_index) {
  end_tick = new_end;
  member_ids.clear();
  const auto& ticks = dataset.ticks();
  auto begin = ticks.begin() + static_cast<std::ptrdiff_t>(first_stream_index);
  auto lo = std::upper_bound(begin, ticks.end(), start_exclusive());
  auto hi = std::upper_bound(lo, ticks.end(), end_tick);
  for (auto it = lo; it != hi; ++it) {
    member_ids.push_back(dataset.id(static_cast<std::size_t>(it - ticks.begin())));
  }
}

double DriftPoint::recomputed_overall() const {
  double sum = 0.0;
  for (const auto& [id, c] : per_cluster) sum += c.weight_fraction * c.distance;
  return sum;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<std::vector<std::string>> parse_csv_records(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  bool any_content = false;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    // Skip blank lines.
    if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
    record.clear();
    any_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !field.empty()) {
          throw ParseError("unexpected quote inside unquoted field", records.size(), "");
        }
        in_quotes = true;
        field_started = true;
        any_content = true;
        break;
      case ',':
        end_field();
        any_content = true;
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        end_record();
        break;
      case '\n':
        end_record();
        break;
      default:
        field.push_back(c);
        field_started = true;
        any_content = true;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", records.size(), "");
  if (any_content || !field.empty()) end_record();
  return records;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

}  // namespace

Dataset ingest_csv(std::string_view text, const CsvSchema& schema) {
  auto records = parse_csv_records(text);
  if (records.empty()) throw SchemaError("CSV has no header row");
  const auto& header = records.front();

  auto column_index = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (trim(header[i]) == name) return i;
    }
    return std::nullopt;
  };

  auto ts_col = column_index(schema.timestamp_column);
  if (!ts_col) throw SchemaError("missing timestamp column '" + schema.timestamp_column + "'");
  std::optional<std::size_t> label_col;
  if (schema.label_column) {
    label_col = column_index(*schema.label_column);
    if (!label_col) throw SchemaError("missing label column '" + *schema.label_column + "'");
  }
  std::optional<std::size_t> id_col;
  if (schema.id_column) {
    id_col = column_index(*schema.id_column);
    if (!id_col) throw SchemaError("missing id column '" + *schema.id_column + "'");
  }

  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i == *ts_col || (label_col && i == *label_col) || (id_col && i == *id_col)) continue;
    std::string name(trim(header[i]));
    if (std::find(schema.ignored_columns.begin(), schema.ignored_columns.end(), name) !=
        schema.ignored_columns.end()) {
      continue;
    }
    feature_cols.push_back(i);
    feature_names.push_back(std::move(name));
  }
  if (feature_names.empty()) throw SchemaError("CSV has no feature columns");

  struct Parsed {
    std::vector<double> features;
    Tick tick;
    std::optional<SampleId> id;
    std::optional<int> label;
  };
  std::vector<Parsed> rows;
  rows.reserve(records.size() - 1);

  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.size() != header.size()) {
      throw ParseError("row " + std::to_string(r) + " has " + std::to_string(rec.size()) +
                           " fields, expected " + std::to_string(header.size()),
                       r, "");
    }
    Parsed p;
    if (schema.timestamp_parser) {
      try {
        p.tick = schema.timestamp_parser(rec[*ts_col]);
      } catch (const std::exception& e) {
        throw ParseError("row " + std::to_string(r) + ", column " + schema.timestamp_column +
                             ": " + e.what(),
                         r, schema.timestamp_column);
      }
    } else {
      auto t = parse_number<Tick>(rec[*ts_col]);
      if (!t) {
        throw ParseError("row " + std::to_string(r) + ", column " + schema.timestamp_column +
                             ": invalid timestamp '" + rec[*ts_col] + "'",
                         r, schema.timestamp_column);
      }
      p.tick = *t;
    }
    if (label_col) {
      auto l = parse_number<int>(rec[*label_col]);
      if (!l) {
        throw ParseError("row " + std::to_string(r) + ", column " + *schema.label_column +
                             ": invalid label '" + rec[*label_col] + "'",
                         r, *schema.label_column);
      }
      p.label = *l;
    }
    if (id_col) {
      auto id = parse_number<SampleId>(rec[*id_col]);
      if (!id) {
        throw ParseError("row " + std::to_string(r) + ", column " + *schema.id_column +
                             ": invalid id '" + rec[*id_col] + "'",
                         r, *schema.id_column);
      }
      p.id = *id;
    }
    p.features.reserve(feature_cols.size());
    for (std::size_t f = 0; f < feature_cols.size(); ++f) {
      const auto& cell = rec[feature_cols[f]];
      auto v = parse_number<double>(cell);
      if (!v) {
        throw ParseError("row " + std::to_string(r) + ", column " + feature_names[f] +
                             ": non-numeric value '" + cell + "'",
                         r, feature_names[f]);
      }
      if (!std::isfinite(*v)) {
        throw ParseError("row " + std::to_string(r) + ", column " + feature_names[f] +
                             ": non-finite value",
                         r, feature_names[f]);
      }
      p.features.push_back(*v);
    }
    rows.push_back(std::move(p));
  }

  std::stable_sort(rows.begin(), rows.end(),
                   [](const Parsed& a, const Parsed& b) { return a.tick < b.tick; });

  Dataset out(std::move(feature_names));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& p = rows[i];
    SampleId id = p.id ? *p.id : static_cast<SampleId>(i);
    try {
      out.append(p.features, p.tick, id, p.label);
    } catch (const PreconditionError& e) {
      throw ParseError(e.what(), i + 1, schema.id_column.value_or(""));
    }
  }
  return out;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

namespace {

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

CsvSchema serialization_schema(const Dataset& dataset) {
  CsvSchema schema;
  schema.timestamp_column = "t";
  schema.id_column = "id";
  if (dataset.has_labels()) schema.label_column = "label";
  return schema;
}

std::string to_csv(const Dataset& dataset) {
  std::ostringstream out;
  out << "id,t";
  if (dataset.has_labels()) out << ",label";
  for (const auto& name : dataset.feature_names()) out << ',' << quote_if_needed(name);
  out << '\n';
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out << dataset.id(i) << ',' << dataset.tick(i);
    if (dataset.has_labels()) out << ',' << *dataset.label(i);
    for (double v : dataset.row(i)) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

}  // namespace driftlab
