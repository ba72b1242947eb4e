#pragma once

// Event-sequence data model: schema, CSV loading, vocabulary, synthetic
// lifestreams.
//
// Loading yields RawSequence values that still carry the raw categorical
// tokens. A Vocabulary built over a training set turns them into
// EventSequence values whose categoricals are dense indices (0 = unknown)
// and whose numericals are transformed but not yet normalized.
//
// Two attributes are derived from the timestamp for every dataset and
// appended after the declared fields: a weekday categorical (cardinality 8,
// 1 = Monday) and log1p of the seconds since the previous event.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace lifestream {

struct CategoricalField {
  std::string name;
  // 0 means "infer from data". Otherwise the vocabulary keeps at most
  // cardinality - 1 tokens (most frequent first).
  std::int64_t cardinality = 0;
};

struct NumericalField {
  std::string name;
  bool log1p = false;
};

struct Schema {
  std::string id_field;
  std::string time_field;
  std::optional<std::string> label_field;
  std::vector<CategoricalField> categorical;
  std::vector<NumericalField> numerical;

  // Throws SchemaError on duplicate/empty names or an empty field set.
  void validate() const;

  static Schema from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

Schema load_schema(const std::filesystem::path& path);
void save_schema(const Schema& schema, const std::filesystem::path& path);

inline constexpr const char* kWeekdayField = "__weekday";
inline constexpr const char* kDeltaField = "__log_dt";
inline constexpr std::int64_t kWeekdayCardinality = 8;

struct RawEvent {
  std::int64_t time = 0;
  std::vector<std::string> tokens;  // one per schema categorical field
  std::vector<double> values;       // one per schema numerical field
};

struct RawSequence {
  std::string person_id;
  std::vector<RawEvent> events;
  std::optional<int> label;
};

// Indexed event: categoricals include the derived weekday as the last
// entry, numericals include the derived log-delta as the last entry.
struct Event {
  std::int64_t time = 0;
  std::vector<std::int32_t> categoricals;
  std::vector<double> numericals;
};

struct EventSequence {
  std::string person_id;
  std::vector<Event> events;
  std::optional<int> label;
};

// Parses "2019-06-21T16:40:00", "2019-06-21 16:40:00", "2019-06-21", an
// optional trailing 'Z', or a plain integer of epoch seconds.
std::optional<std::int64_t> parse_time(const std::string& text);

// 1 = Monday ... 7 = Sunday.
int weekday_index(std::int64_t epoch_seconds);

// One RFC 4180 record per call; returns false at end of input.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}
  bool next(std::vector<std::string>& fields);
  // 1-based line number where the last returned record started.
  std::size_t record_line() const { return record_line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 1;
  std::size_t record_line_ = 0;
};

std::string csv_escape(const std::string& field);

// Groups rows by id, sorts each person's events by time (stable), keeps
// persons in order of first appearance. A header without data rows is a
// DatasetError unless allow_empty is set.
std::vector<RawSequence> load_dataset(const std::filesystem::path& path, const Schema& schema,
                                      bool allow_empty = false);
std::vector<RawSequence> read_dataset(std::istream& in, const Schema& schema, bool allow_empty = false);
void write_dataset(std::ostream& out, const std::vector<RawSequence>& data, const Schema& schema);
void save_dataset(const std::filesystem::path& path, const std::vector<RawSequence>& data, const Schema& schema);

class Vocabulary {
 public:
  struct Stats {
    double mean = 0.0;
    double var = 0.0;
  };

  Vocabulary() = default;

  // Number of categorical inputs to the encoder (schema fields + weekday).
  std::size_t categorical_count() const { return cardinalities_.size(); }
  std::size_t numerical_count() const { return stats_.size(); }
  const std::vector<std::string>& categorical_names() const { return cat_names_; }
  const std::vector<std::string>& numerical_names() const { return num_names_; }
  std::int64_t cardinality(std::size_t field) const { return cardinalities_.at(field); }
  const Stats& stats(std::size_t field) const { return stats_.at(field); }

  // 0 for tokens never seen while building.
  std::int32_t index_of(std::size_t field, const std::string& token) const;

  // `previous_time` is the time of the event preceding seq.events[0], if
  // any; it feeds the first log-delta.
  EventSequence apply(const RawSequence& seq, std::optional<std::int64_t> previous_time = std::nullopt) const;
  std::vector<EventSequence> apply(const std::vector<RawSequence>& data) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend Vocabulary build_vocabulary(const std::vector<RawSequence>& dataset, const Schema& schema);

 private:
  std::vector<std::string> cat_names_;
  std::vector<std::string> num_names_;
  std::vector<bool> log1p_;  // per declared numerical field
  std::vector<std::map<std::string, std::int32_t>> token_index_;  // declared fields only
  std::vector<std::int64_t> cardinalities_;
  std::vector<Stats> stats_;
};

Vocabulary build_vocabulary(const std::vector<RawSequence>& dataset, const Schema& schema);

// Sign-preserving log1p used for numerical fields flagged log1p.
double signed_log1p(double x);

// FNV-1a 64 over a canonical JSON dump of schema + vocabulary.
std::string vocabulary_digest(const Schema& schema, const Vocabulary& vocab);

struct SynthConfig {
  std::int64_t n_persons = 200;
  std::int64_t n_classes = 4;
  std::int64_t min_events = 40;
  std::int64_t max_events = 120;
  std::int64_t n_categories = 24;
  double class_signal_strength = 0.8;
  std::uint64_t seed = 7;

  void validate() const;
};

// Schema of the synthetic data: client_id, event_time, label, categorical
// "mcc", numerical "amount" (log1p).
Schema synthetic_schema();

std::vector<RawSequence> generate_synthetic(const SynthConfig& config);

}  // namespace lifestream
