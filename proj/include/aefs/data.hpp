#pragma once

// Raw-record ingestion, quantization of field tokens into dense per-field
// category IDs, dataset splitting, and a planted-signal synthetic generator.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "aefs/errors.hpp"
#include "aefs/numerics.hpp"
#include "aefs/random.hpp"

namespace aefs {

enum class FieldKind { categorical, numerical };

struct FieldSchema {
  std::string name;
  FieldKind kind = FieldKind::categorical;
  std::size_t index = 0;
};

class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<FieldSchema> fields) : fields_(std::move(fields)) {
    for (std::size_t i = 0; i < fields_.size(); ++i) {
      if (fields_[i].index != i) throw DataError("Schema: field indices must be contiguous from 0");
    }
  }

  std::size_t size() const noexcept { return fields_.size(); }
  const FieldSchema& operator[](std::size_t i) const { return fields_[i]; }
  const std::vector<FieldSchema>& fields() const noexcept { return fields_; }

  static Schema all_categorical(std::size_t n, const std::string& prefix = "f") {
    std::vector<FieldSchema> fields;
    for (std::size_t i = 0; i < n; ++i) fields.push_back({prefix + std::to_string(i), FieldKind::categorical, i});
    return Schema(std::move(fields));
  }

  // One "name,categorical|numerical" line per field; '#' starts a comment.
  static Schema parse(std::istream& in) {
    std::vector<FieldSchema> fields;
    std::string line;
    while (std::getline(in, line)) {
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw ParseError("schema: expected 'name,kind' in '" + line + "'");
      std::string name = trim(line.substr(0, comma));
      const std::string kind = trim(line.substr(comma + 1));
      FieldKind k;
      if (kind == "categorical") {
        k = FieldKind::categorical;
      } else if (kind == "numerical") {
        k = FieldKind::numerical;
      } else {
        throw ParseError("schema: unknown field kind '" + kind + "'");
      }
      fields.push_back({std::move(name), k, fields.size()});
    }
    if (fields.empty()) throw ParseError("schema: no fields");
    return Schema(std::move(fields));
  }

  void write(std::ostream& out) const {
    for (const auto& f : fields_) {
      out << f.name << ',' << (f.kind == FieldKind::categorical ? "categorical" : "numerical") << '\n';
    }
  }

  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
  }

 private:
  std::vector<FieldSchema> fields_;
};

struct RawRecord {
  int label = 0;
  std::vector<std::string> tokens;

  friend bool operator==(const RawRecord&, const RawRecord&) = default;
};

// One quantized sample: a category ID per field plus the binary label.
struct Instance {
  std::uint8_t label = 0;
  std::vector<std::uint32_t> x;

  friend bool operator==(const Instance&, const Instance&) = default;
};

// ---------------------------------------------------------------------------
// Numeric discretization

inline constexpr std::string_view kMissingToken = "<missing>";
inline constexpr std::string_view kOovToken = "<oov>";

// floor((ln x)^2) for x > 2, else 1.
inline std::int64_t discretize_numeric(double x) {
  if (std::isnan(x)) throw ParseError("discretize_numeric: NaN");
  if (x > 2.0) {
    const double l = std::log(x);
    return static_cast<std::int64_t>(std::floor(l * l));
  }
  return 1;
}

inline std::optional<double> parse_number(std::string_view raw) {
  const std::string t = Schema::trim(raw);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || std::isnan(v)) {
    throw ParseError("numeric field: cannot parse '" + t + "'");
  }
  return v;
}

// Vocabulary token for a numerical field value; empty means missing.
inline std::string numeric_token(std::string_view raw) {
  const auto v = parse_number(raw);
  if (!v) return std::string(kMissingToken);
  return std::to_string(discretize_numeric(*v));
}

inline std::string field_token(const FieldSchema& field, std::string_view raw) {
  if (field.kind == FieldKind::numerical) return numeric_token(raw);
  if (raw.empty()) return std::string(kMissingToken);
  return std::string(raw);
}

// ---------------------------------------------------------------------------
// Vocabulary

// Per-field token -> ID maps. ID 0 is the field's OOV bucket; kept tokens get
// 1.. in order of first occurrence.
class Vocabulary {
 public:
  static constexpr std::uint32_t kOovId = 0;

  Vocabulary() = default;
  Vocabulary(std::vector<std::vector<std::string>> tokens, std::size_t min_freq)
      : tokens_(std::move(tokens)), min_freq_(min_freq) {
    ids_.resize(tokens_.size());
    for (std::size_t f = 0; f < tokens_.size(); ++f) {
      if (tokens_[f].empty() || tokens_[f][0] != kOovToken) {
        throw DataError("Vocabulary: field " + std::to_string(f) + " lacks the OOV entry");
      }
      for (std::uint32_t id = 1; id < tokens_[f].size(); ++id) ids_[f].emplace(tokens_[f][id], id);
    }
  }

  std::size_t n_fields() const noexcept { return tokens_.size(); }
  std::size_t min_freq() const noexcept { return min_freq_; }
  std::uint32_t oov_id(std::size_t /*field*/) const noexcept { return kOovId; }
  std::size_t vocab_size(std::size_t field) const { return tokens_.at(field).size(); }
  const std::vector<std::string>& tokens(std::size_t field) const { return tokens_.at(field); }

  std::vector<std::size_t> vocab_sizes() const {
    std::vector<std::size_t> out;
    for (const auto& t : tokens_) out.push_back(t.size());
    return out;
  }

  std::uint32_t lookup(std::size_t field, const std::string& token) const {
    const auto& m = ids_.at(field);
    const auto it = m.find(token);
    return it == m.end() ? kOovId : it->second;
  }

  // "field<TAB>id<TAB>token" per line.
  void write(std::ostream& out) const {
    for (std::size_t f = 0; f < tokens_.size(); ++f) {
      for (std::size_t id = 0; id < tokens_[f].size(); ++id) out << f << '\t' << id << '\t' << tokens_[f][id] << '\n';
    }
  }

  // "name<TAB>size" per field.
  void write_sizes(std::ostream& out, const Schema& schema) const {
    for (std::size_t f = 0; f < tokens_.size(); ++f) out << schema[f].name << '\t' << tokens_[f].size() << '\n';
  }

 private:
  std::vector<std::unordered_map<std::string, std::uint32_t>> ids_;
  std::vector<std::vector<std::string>> tokens_;
  std::size_t min_freq_ = 1;
};

// Mergeable token counts. Positions are global record indices so partial
// counters built over disjoint shards merge to the sequential result.
class VocabCounter {
 public:
  explicit VocabCounter(const Schema& schema) : schema_(&schema), counts_(schema.size()) {}

  void add(const RawRecord& record, std::uint64_t position) {
    if (record.tokens.size() != schema_->size()) {
      throw DataError("VocabCounter: record has " + std::to_string(record.tokens.size()) +
                      " tokens, schema has " + std::to_string(schema_->size()));
    }
    for (std::size_t f = 0; f < record.tokens.size(); ++f) {
      auto [it, inserted] = counts_[f].try_emplace(field_token((*schema_)[f], record.tokens[f]), Entry{0, position});
      it->second.count += 1;
      it->second.first = std::min(it->second.first, position);
    }
  }

  void merge(const VocabCounter& other) {
    for (std::size_t f = 0; f < counts_.size(); ++f) {
      for (const auto& [token, e] : other.counts_[f]) {
        auto [it, inserted] = counts_[f].try_emplace(token, e);
        if (!inserted) {
          it->second.count += e.count;
          it->second.first = std::min(it->second.first, e.first);
        }
      }
    }
  }

  Vocabulary finalize(std::size_t min_freq) const {
    std::vector<std::vector<std::string>> tokens(counts_.size());
    for (std::size_t f = 0; f < counts_.size(); ++f) {
      std::vector<std::pair<std::uint64_t, const std::string*>> kept;
      for (const auto& [token, e] : counts_[f]) {
        if (e.count >= min_freq) kept.emplace_back(e.first, &token);
      }
      std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : *a.second < *b.second;
      });
      tokens[f].emplace_back(kOovToken);
      for (const auto& k : kept) tokens[f].push_back(*k.second);
    }
    return Vocabulary(std::move(tokens), min_freq);
  }

 private:
  struct Entry {
    std::uint64_t count = 0;
    std::uint64_t first = 0;
  };
  const Schema* schema_;
  std::vector<std::unordered_map<std::string, Entry>> counts_;
};

// Tokens seen at least min_freq times get their own ID.
inline Vocabulary build_vocab(std::span<const RawRecord> records, const Schema& schema, std::size_t min_freq) {
  if (records.empty()) throw DataError("build_vocab: no records");
  VocabCounter counter(schema);
  for (std::size_t i = 0; i < records.size(); ++i) counter.add(records[i], i);
  return counter.finalize(min_freq);
}

inline Instance quantize(const RawRecord& record, const Schema& schema, const Vocabulary& vocab) {
  if (record.tokens.size() != schema.size() || vocab.n_fields() != schema.size()) {
    throw DataError("quantize: record has " + std::to_string(record.tokens.size()) + " tokens, schema " +
                    std::to_string(schema.size()) + ", vocabulary " + std::to_string(vocab.n_fields()));
  }
  Instance inst;
  inst.label = static_cast<std::uint8_t>(record.label);
  inst.x.resize(schema.size());
  for (std::size_t f = 0; f < schema.size(); ++f) {
    inst.x[f] = vocab.lookup(f, field_token(schema[f], record.tokens[f]));
  }
  return inst;
}

inline std::vector<Instance> quantize_all(std::span<const RawRecord> records, const Schema& schema,
                                          const Vocabulary& vocab) {
  std::vector<Instance> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(quantize(r, schema, vocab));
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

template <class T>
struct DatasetSplit {
  std::vector<T> train;
  std::vector<T> val;
  std::vector<T> test;
};

// Random 8:1:1 split: floor(0.8 n) train, the rest halved (val gets the floor).
template <class T>
DatasetSplit<T> split_dataset(std::vector<T> items, std::uint64_t seed) {
  const std::size_t n = items.size();
  if (n < 10) throw DataError("split_dataset: need at least 10 instances, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = (n - n_train) / 2;
  DatasetSplit<T> split;
  split.train.reserve(n_train);
  split.val.reserve(n_val);
  split.test.reserve(n - n_train - n_val);
  for (std::size_t i = 0; i < n; ++i) {
    T& item = items[order[i]];
    if (i < n_train) {
      split.train.push_back(std::move(item));
    } else if (i < n_train + n_val) {
      split.val.push_back(std::move(item));
    } else {
      split.test.push_back(std::move(item));
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// File formats

inline int parse_label(std::string_view raw) {
  const std::string t = Schema::trim(raw);
  if (t == "0") return 0;
  if (t == "1") return 1;
  throw DataError("label must be 0 or 1, got '" + t + "'");
}

inline std::vector<std::string_view> split_line(std::string_view line, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(line.substr(start));
      break;
    }
    parts.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return parts;
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

// Criteo layout: label, 13 numerical (I1..I13), 26 categorical (C1..C26).
inline Schema criteo_schema() {
  std::vector<FieldSchema> fields;
  for (int i = 1; i <= 13; ++i) fields.push_back({"I" + std::to_string(i), FieldKind::numerical, fields.size()});
  for (int i = 1; i <= 26; ++i) fields.push_back({"C" + std::to_string(i), FieldKind::categorical, fields.size()});
  return Schema(std::move(fields));
}

inline std::vector<RawRecord> read_criteo(std::istream& in) {
  std::vector<RawRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view sv = strip_cr(line);
    if (sv.empty()) continue;
    const auto parts = split_line(sv, '\t');
    if (parts.size() != 40) {
      throw DataError("criteo line " + std::to_string(line_no) + ": expected 40 columns, got " +
                      std::to_string(parts.size()));
    }
    RawRecord r;
    r.label = parse_label(parts[0]);
    for (std::size_t i = 1; i < parts.size(); ++i) r.tokens.emplace_back(parts[i]);
    records.push_back(std::move(r));
  }
  return records;
}

// Generic CSV: header "label,<field names in schema order>", no quoting.
inline std::vector<RawRecord> read_csv(std::istream& in, const Schema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("csv: missing header row");
  const auto header = split_line(strip_cr(line), ',');
  if (header.size() != schema.size() + 1 || Schema::trim(header[0]) != "label") {
    throw DataError("csv: header must be 'label' followed by the " + std::to_string(schema.size()) + " schema fields");
  }
  for (std::size_t f = 0; f < schema.size(); ++f) {
    if (Schema::trim(header[f + 1]) != schema[f].name) {
      throw DataError("csv: header column '" + std::string(header[f + 1]) + "' does not match schema field '" +
                      schema[f].name + "'");
    }
  }
  std::vector<RawRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view sv = strip_cr(line);
    if (sv.empty()) continue;
    const auto parts = split_line(sv, ',');
    if (parts.size() != schema.size() + 1) {
      throw DataError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(schema.size() + 1) +
                      " columns, got " + std::to_string(parts.size()));
    }
    RawRecord r;
    r.label = parse_label(parts[0]);
    for (std::size_t i = 1; i < parts.size(); ++i) r.tokens.emplace_back(parts[i]);
    records.push_back(std::move(r));
  }
  return records;
}

inline void write_csv(std::ostream& out, const Schema& schema, std::span<const RawRecord> records) {
  out << "label";
  for (const auto& f : schema.fields()) out << ',' << f.name;
  out << '\n';
  for (const auto& r : records) {
    out << r.label;
    for (const auto& t : r.tokens) out << ',' << t;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic planted-signal data

struct SyntheticSpec {
  std::size_t n_fields = 16;
  std::size_t n_informative = 8;
  std::vector<std::size_t> vocab_sizes;  // empty: every field gets default_vocab
  std::size_t default_vocab = 50;
  std::size_t n_records = 200000;
  std::uint64_t teacher_seed = 2024;
  // Standard deviation of the teacher logit, split evenly over the
  // informative fields.
  double teacher_scale = 2.0;

  std::size_t vocab_size(std::size_t field) const {
    return vocab_sizes.empty() ? default_vocab : vocab_sizes.at(field);
  }

  void validate() const {
    if (n_fields == 0) throw ConfigError("synthetic: n_fields must be positive");
    if (n_informative > n_fields) throw ConfigError("synthetic: n_informative exceeds n_fields");
    if (!vocab_sizes.empty() && vocab_sizes.size() != n_fields) {
      throw ConfigError("synthetic: vocab_sizes must list one size per field");
    }
    for (std::size_t f = 0; f < n_fields; ++f) {
      if (vocab_size(f) < 2) throw ConfigError("synthetic: vocab sizes must be at least 2");
    }
    if (n_records == 0) throw ConfigError("synthetic: n_records must be positive");
  }
};

// Linear logit over one-hot encodings of the informative fields only.
struct SyntheticTeacher {
  std::vector<std::size_t> informative;        // sorted field indices
  std::vector<std::vector<double>> weights;    // per field; empty for noise fields
  double bias = 0.0;

  double logit(std::span<const std::uint32_t> categories) const {
    double z = bias;
    for (const std::size_t f : informative) z += weights[f][categories[f]];
    return z;
  }
};

struct SyntheticData {
  Schema schema;
  std::vector<RawRecord> records;
  SyntheticTeacher teacher;
  std::vector<double> teacher_scores;  // sigmoid(teacher logit) per record
};

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData data;
  data.schema = Schema::all_categorical(spec.n_fields);

  Rng teacher_rng(derive_seed(spec.teacher_seed, 1));
  std::vector<std::size_t> fields(spec.n_fields);
  std::iota(fields.begin(), fields.end(), std::size_t{0});
  shuffle(std::span<std::size_t>(fields), teacher_rng);
  data.teacher.informative.assign(fields.begin(), fields.begin() + static_cast<std::ptrdiff_t>(spec.n_informative));
  std::sort(data.teacher.informative.begin(), data.teacher.informative.end());
  data.teacher.weights.resize(spec.n_fields);
  const double per_field =
      spec.n_informative == 0 ? 0.0 : spec.teacher_scale / std::sqrt(static_cast<double>(spec.n_informative));
  for (const std::size_t f : data.teacher.informative) {
    auto& w = data.teacher.weights[f];
    w.resize(spec.vocab_size(f));
    for (double& v : w) v = per_field * standard_normal(teacher_rng);
  }

  Rng sample_rng(derive_seed(spec.teacher_seed, 2));
  data.records.reserve(spec.n_records);
  data.teacher_scores.reserve(spec.n_records);
  std::vector<std::uint32_t> cats(spec.n_fields);
  for (std::size_t i = 0; i < spec.n_records; ++i) {
    RawRecord r;
    r.tokens.reserve(spec.n_fields);
    for (std::size_t f = 0; f < spec.n_fields; ++f) {
      cats[f] = static_cast<std::uint32_t>(uniform_index(sample_rng, spec.vocab_size(f)));
      r.tokens.push_back(std::to_string(cats[f]));
    }
    const double p = sigmoid(data.teacher.logit(cats));
    r.label = uniform01(sample_rng) < p ? 1 : 0;
    data.records.push_back(std::move(r));
    data.teacher_scores.push_back(p);
  }
  return data;
}

}  // namespace aefs
