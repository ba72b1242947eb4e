#include "lifestream/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "lifestream/errors.hpp"

namespace lifestream {

// ---------------------------------------------------------------------------
// Schema

void Schema::validate() const {
  if (id_field.empty()) throw SchemaError("schema: id field name is empty");
  if (time_field.empty()) throw SchemaError("schema: time field name is empty");
  if (categorical.empty() && numerical.empty()) {
    throw SchemaError("schema: at least one categorical or numerical field is required");
  }
  std::set<std::string> seen{id_field};
  auto claim = [&](const std::string& name) {
    if (name.empty()) throw SchemaError("schema: empty field name");
    if (!seen.insert(name).second) throw SchemaError("schema: duplicate field name \"" + name + "\"");
  };
  claim(time_field);
  if (label_field) claim(*label_field);
  for (const auto& f : categorical) {
    claim(f.name);
    if (f.cardinality < 0 || f.cardinality == 1) {
      throw SchemaError("schema: cardinality of \"" + f.name + "\" must be >= 2 (or 0 to infer)");
    }
  }
  for (const auto& f : numerical) claim(f.name);
}

Schema Schema::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("schema: expected a JSON object");
  static const std::set<std::string> known{"id", "time", "label", "categorical", "numerical"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw SchemaError("schema: unknown key \"" + key + "\"");
  }
  Schema s;
  try {
    s.id_field = j.at("id").get<std::string>();
    s.time_field = j.at("time").get<std::string>();
    if (j.contains("label") && !j.at("label").is_null()) s.label_field = j.at("label").get<std::string>();
    for (const auto& c : j.value("categorical", nlohmann::json::array())) {
      if (c.is_string()) {
        s.categorical.push_back({c.get<std::string>(), 0});
      } else {
        s.categorical.push_back({c.at("name").get<std::string>(), c.value("cardinality", std::int64_t{0})});
      }
    }
    for (const auto& n : j.value("numerical", nlohmann::json::array())) {
      if (n.is_string()) {
        s.numerical.push_back({n.get<std::string>(), false});
      } else {
        s.numerical.push_back({n.at("name").get<std::string>(), n.value("log1p", false)});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("schema: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json Schema::to_json() const {
  nlohmann::json j;
  j["id"] = id_field;
  j["time"] = time_field;
  if (label_field) j["label"] = *label_field;
  j["categorical"] = nlohmann::json::array();
  for (const auto& c : categorical) {
    if (c.cardinality > 0) {
      j["categorical"].push_back({{"name", c.name}, {"cardinality", c.cardinality}});
    } else {
      j["categorical"].push_back(c.name);
    }
  }
  j["numerical"] = nlohmann::json::array();
  for (const auto& n : numerical) j["numerical"].push_back({{"name", n.name}, {"log1p", n.log1p}});
  return j;
}

Schema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("schema file " + path.string() + ": " + e.what());
  }
  return Schema::from_json(j);
}

void save_schema(const Schema& schema, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write schema file " + path.string());
  out << schema.to_json().dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Time

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool parse_fixed(const std::string& s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  const char* b = s.data() + pos;
  auto [p, ec] = std::from_chars(b, b + len, out);
  return ec == std::errc() && p == b + len;
}

}  // namespace

std::optional<std::int64_t> parse_time(const std::string& text) {
  std::string s = text;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  if (s.empty()) return std::nullopt;
  std::int64_t epoch = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), epoch);
  if (ec == std::errc() && p == s.data() + s.size()) return epoch;

  if (s.back() == 'Z') s.pop_back();
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!parse_fixed(s, 0, 4, y) || !parse_fixed(s, 5, 2, mo) || !parse_fixed(s, 8, 2, d)) return std::nullopt;
  if (s.size() > 10) {
    if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || s[13] != ':') return std::nullopt;
    if (!parse_fixed(s, 11, 2, h) || !parse_fixed(s, 14, 2, mi)) return std::nullopt;
    if (s.size() > 16) {
      if (s[16] != ':' || s.size() != 19 || !parse_fixed(s, 17, 2, sec)) return std::nullopt;
    }
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || sec > 60) return std::nullopt;
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 + h * 3600 + mi * 60 + sec;
}

int weekday_index(std::int64_t epoch_seconds) {
  std::int64_t days = epoch_seconds / 86400;
  if (epoch_seconds % 86400 < 0) --days;
  // 1970-01-01 was a Thursday (index 4).
  const std::int64_t w = ((days + 3) % 7 + 7) % 7;
  return static_cast<int>(w) + 1;
}

// ---------------------------------------------------------------------------
// CSV

bool CsvReader::next(std::vector<std::string>& fields) {
  fields.clear();
  int c = in_.peek();
  if (c == std::char_traits<char>::eof()) return false;
  record_line_ = line_;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  while (true) {
    c = in_.get();
    if (c == std::char_traits<char>::eof()) {
      if (quoted) throw RowError(record_line_, "unterminated quoted field");
      fields.push_back(std::move(field));
      return true;
    }
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line_;
        field.push_back(ch);
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (ch == '\r') {
      if (in_.peek() == '\n') continue;
      ++line_;
      fields.push_back(std::move(field));
      return true;
    } else if (ch == '\n') {
      ++line_;
      fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(ch);
      field_started = true;
    }
  }
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

namespace {

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

bool is_blank(const std::vector<std::string>& row) { return row.size() == 1 && row[0].empty(); }

}  // namespace

std::vector<RawSequence> read_dataset(std::istream& in, const Schema& schema, bool allow_empty) {
  schema.validate();
  CsvReader reader(in);
  std::vector<std::string> header;
  if (!reader.next(header) || is_blank(header)) throw DatasetError("dataset is empty (no header row)");
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column.emplace(header[i], i);
  auto find = [&](const std::string& name) {
    auto it = column.find(name);
    if (it == column.end()) throw SchemaError("dataset is missing declared column \"" + name + "\"");
    return it->second;
  };
  const std::size_t id_col = find(schema.id_field);
  const std::size_t time_col = find(schema.time_field);
  std::optional<std::size_t> label_col;
  if (schema.label_field) label_col = find(*schema.label_field);
  std::vector<std::size_t> cat_cols, num_cols;
  for (const auto& f : schema.categorical) cat_cols.push_back(find(f.name));
  for (const auto& f : schema.numerical) num_cols.push_back(find(f.name));

  std::vector<RawSequence> out;
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::string> row;
  std::size_t rows = 0;
  while (reader.next(row)) {
    if (is_blank(row)) continue;
    const std::size_t line = reader.record_line();
    if (row.size() != header.size()) {
      throw RowError(line, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(row.size()));
    }
    RawEvent ev;
    auto t = parse_time(row[time_col]);
    if (!t) throw RowError(line, "unparseable time \"" + row[time_col] + "\" in column " + schema.time_field);
    ev.time = *t;
    for (std::size_t c : cat_cols) ev.tokens.push_back(row[c]);
    for (std::size_t k = 0; k < num_cols.size(); ++k) {
      auto v = parse_double(row[num_cols[k]]);
      if (!v) {
        throw RowError(line, "unparseable number \"" + row[num_cols[k]] + "\" in column " + schema.numerical[k].name);
      }
      ev.values.push_back(*v);
    }
    std::optional<int> label;
    if (label_col && !row[*label_col].empty()) {
      int lv = 0;
      const std::string& ls = row[*label_col];
      auto [p, ec] = std::from_chars(ls.data(), ls.data() + ls.size(), lv);
      if (ec != std::errc() || p != ls.data() + ls.size() || lv < 0) {
        throw RowError(line, "label \"" + ls + "\" is not a non-negative integer");
      }
      label = lv;
    }
    const std::string& pid = row[id_col];
    auto [it, inserted] = slot.emplace(pid, out.size());
    if (inserted) out.push_back(RawSequence{pid, {}, label});
    RawSequence& seq = out[it->second];
    if (label != seq.label) throw RowError(line, "conflicting labels for person \"" + pid + "\"");
    seq.events.push_back(std::move(ev));
    ++rows;
  }
  if (rows == 0 && !allow_empty) throw DatasetError("dataset has a header but no data rows");
  for (auto& seq : out) {
    std::stable_sort(seq.events.begin(), seq.events.end(),
                     [](const RawEvent& a, const RawEvent& b) { return a.time < b.time; });
  }
  return out;
}

std::vector<RawSequence> load_dataset(const std::filesystem::path& path, const Schema& schema, bool allow_empty) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  return read_dataset(in, schema, allow_empty);
}

void write_dataset(std::ostream& out, const std::vector<RawSequence>& data, const Schema& schema) {
  out << csv_escape(schema.id_field) << ',' << csv_escape(schema.time_field);
  if (schema.label_field) out << ',' << csv_escape(*schema.label_field);
  for (const auto& f : schema.categorical) out << ',' << csv_escape(f.name);
  for (const auto& f : schema.numerical) out << ',' << csv_escape(f.name);
  out << '\n';
  for (const auto& seq : data) {
    for (const auto& ev : seq.events) {
      out << csv_escape(seq.person_id) << ',' << ev.time;
      if (schema.label_field) {
        out << ',';
        if (seq.label) out << *seq.label;
      }
      for (const auto& tok : ev.tokens) out << ',' << csv_escape(tok);
      for (double v : ev.values) out << ',' << format_double(v);
      out << '\n';
    }
  }
}

void save_dataset(const std::filesystem::path& path, const std::vector<RawSequence>& data, const Schema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset " + path.string());
  write_dataset(out, data, schema);
  if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Vocabulary

double signed_log1p(double x) { return x < 0 ? -std::log1p(-x) : std::log1p(x); }

std::int32_t Vocabulary::index_of(std::size_t field, const std::string& token) const {
  if (field >= token_index_.size()) return 0;
  const auto& m = token_index_[field];
  auto it = m.find(token);
  return it == m.end() ? 0 : it->second;
}

EventSequence Vocabulary::apply(const RawSequence& seq, std::optional<std::int64_t> previous_time) const {
  EventSequence out{seq.person_id, {}, seq.label};
  out.events.reserve(seq.events.size());
  const std::size_t declared_cat = token_index_.size();
  const std::size_t declared_num = log1p_.size();
  std::optional<std::int64_t> prev = previous_time;
  for (const RawEvent& raw : seq.events) {
    if (raw.tokens.size() != declared_cat || raw.values.size() != declared_num) {
      throw SchemaError("event of person \"" + seq.person_id + "\" does not match the vocabulary's field layout");
    }
    Event ev;
    ev.time = raw.time;
    ev.categoricals.reserve(declared_cat + 1);
    for (std::size_t f = 0; f < declared_cat; ++f) ev.categoricals.push_back(index_of(f, raw.tokens[f]));
    ev.categoricals.push_back(static_cast<std::int32_t>(weekday_index(raw.time)));
    ev.numericals.reserve(declared_num + 1);
    for (std::size_t f = 0; f < declared_num; ++f) {
      ev.numericals.push_back(log1p_[f] ? signed_log1p(raw.values[f]) : raw.values[f]);
    }
    const double dt = prev ? static_cast<double>(std::max<std::int64_t>(0, raw.time - *prev)) : 0.0;
    ev.numericals.push_back(std::log1p(dt));
    prev = raw.time;
    out.events.push_back(std::move(ev));
  }
  return out;
}

std::vector<EventSequence> Vocabulary::apply(const std::vector<RawSequence>& data) const {
  std::vector<EventSequence> out;
  out.reserve(data.size());
  for (const auto& seq : data) out.push_back(apply(seq));
  return out;
}

Vocabulary build_vocabulary(const std::vector<RawSequence>& dataset, const Schema& schema) {
  if (dataset.empty()) throw DatasetError("build_vocabulary: dataset is empty");
  Vocabulary v;
  const std::size_t nc = schema.categorical.size();
  const std::size_t nn = schema.numerical.size();

  struct Count {
    std::size_t n = 0;
    std::size_t first = 0;
  };
  std::vector<std::unordered_map<std::string, Count>> counts(nc);
  std::size_t order = 0;
  for (const auto& seq : dataset) {
    for (const auto& ev : seq.events) {
      for (std::size_t f = 0; f < nc && f < ev.tokens.size(); ++f) {
        auto [it, inserted] = counts[f].try_emplace(ev.tokens[f], Count{0, order});
        ++it->second.n;
      }
      ++order;
    }
  }
  for (std::size_t f = 0; f < nc; ++f) {
    std::vector<std::pair<std::string, Count>> toks(counts[f].begin(), counts[f].end());
    std::sort(toks.begin(), toks.end(), [](const auto& a, const auto& b) {
      if (a.second.n != b.second.n) return a.second.n > b.second.n;
      return a.second.first < b.second.first;
    });
    const std::int64_t cap = schema.categorical[f].cardinality;
    if (cap > 0 && static_cast<std::int64_t>(toks.size()) > cap - 1) toks.resize(static_cast<std::size_t>(cap - 1));
    std::map<std::string, std::int32_t> index;
    for (std::size_t i = 0; i < toks.size(); ++i) index.emplace(toks[i].first, static_cast<std::int32_t>(i + 1));
    v.cat_names_.push_back(schema.categorical[f].name);
    v.cardinalities_.push_back(cap > 0 ? cap : static_cast<std::int64_t>(toks.size()) + 1);
    v.token_index_.push_back(std::move(index));
  }
  v.cat_names_.push_back(kWeekdayField);
  v.cardinalities_.push_back(kWeekdayCardinality);

  for (const auto& f : schema.numerical) {
    v.num_names_.push_back(f.name);
    v.log1p_.push_back(f.log1p);
  }
  v.num_names_.push_back(kDeltaField);

  // Welford over the transformed values, including the derived delta.
  std::vector<double> mean(nn + 1, 0.0), m2(nn + 1, 0.0);
  std::size_t n = 0;
  for (const auto& raw : dataset) {
    const EventSequence seq = v.apply(raw);
    for (const auto& ev : seq.events) {
      ++n;
      for (std::size_t f = 0; f <= nn; ++f) {
        const double x = ev.numericals[f];
        const double d = x - mean[f];
        mean[f] += d / static_cast<double>(n);
        m2[f] += d * (x - mean[f]);
      }
    }
  }
  for (std::size_t f = 0; f <= nn; ++f) {
    v.stats_.push_back({mean[f], n > 0 ? std::max(0.0, m2[f] / static_cast<double>(n)) : 0.0});
  }
  return v;
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json j;
  j["categorical"] = nlohmann::json::array();
  for (std::size_t f = 0; f < cat_names_.size(); ++f) {
    nlohmann::json c{{"name", cat_names_[f]}, {"cardinality", cardinalities_[f]}};
    if (f < token_index_.size()) {
      std::vector<std::string> tokens(token_index_[f].size());
      for (const auto& [tok, idx] : token_index_[f]) tokens[static_cast<std::size_t>(idx - 1)] = tok;
      c["tokens"] = tokens;
    }
    j["categorical"].push_back(std::move(c));
  }
  j["numerical"] = nlohmann::json::array();
  for (std::size_t f = 0; f < num_names_.size(); ++f) {
    nlohmann::json n{{"name", num_names_[f]}, {"mean", stats_[f].mean}, {"var", stats_[f].var}};
    if (f < log1p_.size()) n["log1p"] = static_cast<bool>(log1p_[f]);
    j["numerical"].push_back(std::move(n));
  }
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  try {
    for (const auto& c : j.at("categorical")) {
      v.cat_names_.push_back(c.at("name").get<std::string>());
      v.cardinalities_.push_back(c.at("cardinality").get<std::int64_t>());
      if (c.contains("tokens")) {
        std::map<std::string, std::int32_t> index;
        const auto tokens = c.at("tokens").get<std::vector<std::string>>();
        for (std::size_t i = 0; i < tokens.size(); ++i) index.emplace(tokens[i], static_cast<std::int32_t>(i + 1));
        v.token_index_.push_back(std::move(index));
      }
    }
    for (const auto& n : j.at("numerical")) {
      v.num_names_.push_back(n.at("name").get<std::string>());
      v.stats_.push_back({n.at("mean").get<double>(), n.at("var").get<double>()});
      if (n.contains("log1p")) v.log1p_.push_back(n.at("log1p").get<bool>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("vocabulary: ") + e.what());
  }
  return v;
}

std::string vocabulary_digest(const Schema& schema, const Vocabulary& vocab) {
  const std::string text = nlohmann::json{{"schema", schema.to_json()}, {"vocabulary", vocab.to_json()}}.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Synthetic lifestreams

void SynthConfig::validate() const {
  if (n_persons < 1) throw ConfigError("synth: n_persons must be >= 1");
  if (n_classes < 2) throw ConfigError("synth: n_classes must be >= 2");
  if (min_events < 1 || min_events > max_events) throw ConfigError("synth: need 1 <= min_events <= max_events");
  if (n_categories < 2) throw ConfigError("synth: n_categories must be >= 2");
  if (!(class_signal_strength >= 0.0 && class_signal_strength <= 1.0)) {
    throw ConfigError("synth: class_signal_strength must be in [0, 1]");
  }
}

Schema synthetic_schema() {
  Schema s;
  s.id_field = "client_id";
  s.time_field = "event_time";
  s.label_field = "label";
  s.categorical = {{"mcc", 0}};
  s.numerical = {{"amount", true}};
  return s;
}

namespace {

std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t k, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(k);
  double total = 0;
  for (auto& x : p) total += (x = gamma(rng) + 1e-12);
  for (auto& x : p) x /= total;
  return p;
}

}  // namespace

std::vector<RawSequence> generate_synthetic(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const auto n_cat = static_cast<std::size_t>(config.n_categories);
  const auto n_cls = static_cast<std::size_t>(config.n_classes);
  const double s = config.class_signal_strength;

  const std::vector<double> base = dirichlet(rng, n_cat, 1.0);
  std::vector<std::vector<double>> class_dist(n_cls);
  std::vector<double> class_amount(n_cls);
  for (std::size_t c = 0; c < n_cls; ++c) {
    const std::vector<double> own = dirichlet(rng, n_cat, 0.3);
    class_dist[c].resize(n_cat);
    for (std::size_t i = 0; i < n_cat; ++i) class_dist[c][i] = (1.0 - s) * base[i] + s * own[i];
    class_amount[c] = s * (static_cast<double>(c) - 0.5 * static_cast<double>(n_cls - 1)) * 0.5;
  }

  std::uniform_int_distribution<std::int64_t> length(config.min_events, config.max_events);
  std::uniform_int_distribution<std::int64_t> start_offset(0, 30 * 86400);
  std::gamma_distribution<double> person_noise(4.0, 0.25);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr std::int64_t kStart = 1546300800;  // 2019-01-01T00:00:00Z

  std::vector<RawSequence> out;
  out.reserve(static_cast<std::size_t>(config.n_persons));
  for (std::int64_t p = 0; p < config.n_persons; ++p) {
    const auto cls = static_cast<std::size_t>(p % config.n_classes);
    // Each person perturbs its class distribution, so sub-sequences of one
    // person resemble each other more than those of a classmate.
    std::vector<double> w(n_cat);
    for (std::size_t i = 0; i < n_cat; ++i) w[i] = class_dist[cls][i] * person_noise(rng);
    std::discrete_distribution<std::size_t> category(w.begin(), w.end());
    const double amount_mu = 3.5 + class_amount[cls] + 0.3 * normal(rng);
    const double gap_mean = 86400.0 * std::exp(0.5 * normal(rng));
    std::exponential_distribution<double> gap(1.0 / gap_mean);

    char id[32];
    std::snprintf(id, sizeof(id), "p%05lld", static_cast<long long>(p));
    RawSequence seq{id, {}, static_cast<int>(cls)};
    const std::int64_t n = length(rng);
    std::int64_t t = kStart + start_offset(rng);
    for (std::int64_t e = 0; e < n; ++e) {
      t += static_cast<std::int64_t>(gap(rng));
      const std::size_t c = category(rng);
      const double amount = std::round(std::exp(amount_mu + 0.8 * normal(rng)) * 100.0) / 100.0;
      char tok[32];
      std::snprintf(tok, sizeof(tok), "mcc_%03zu", c);
      seq.events.push_back(RawEvent{t, {tok}, {amount}});
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace lifestream
