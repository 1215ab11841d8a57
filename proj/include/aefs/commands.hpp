#pragma once

// Subcommand implementations behind the aefs tool. Each command writes its
// artifacts to disk and a short summary to `out`; errors surface as
// exceptions that exit_code_for() maps onto the documented exit codes.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aefs/checkpoint.hpp"
#include "aefs/config.hpp"
#include "aefs/data.hpp"
#include "aefs/embedding.hpp"
#include "aefs/errors.hpp"
#include "aefs/metrics.hpp"
#include "aefs/training.hpp"

namespace aefs {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitData = 2, kExitNumeric = 3 };

// Config problems -> 1, input data problems -> 2, numeric aborts and
// internal inconsistencies -> 3.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const UndefinedMetricError*>(&e)) {
    return kExitData;
  }
  return kExitNumeric;
}

// "37.5%", "43.75%", "0.0%": at most two decimals, at least one.
inline std::string format_percent(const Rational& r) {
  std::string s = (r * 100).to_decimal(2);
  while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  return s + "%";
}

// 64576384 -> "64.58M"
inline std::string format_millions(const Rational& r) { return (r / Rational(1000000)).to_decimal(2) + "M"; }

inline fs::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("AEFS_OUT_ROOT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

inline std::ifstream open_in(const fs::path& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(std::string("cannot read ") + what + " '" + path.string() + "'");
  return f;
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  Schema schema;
  Vocabulary vocab;
  std::vector<std::size_t> vocab_sizes;
  DatasetSplit<Instance> split;
  std::vector<std::size_t> informative;
};

// Split raw records, build the vocabulary from the training part only, then
// quantize every split.
inline PreparedData prepare_records(std::vector<RawRecord> records, Schema schema, std::uint64_t split_seed,
                                    std::size_t min_freq) {
  PreparedData d;
  d.schema = std::move(schema);
  DatasetSplit<RawRecord> raw = split_dataset(std::move(records), split_seed);
  d.vocab = build_vocab(raw.train, d.schema, min_freq);
  d.vocab_sizes = d.vocab.vocab_sizes();
  d.split.train = quantize_all(raw.train, d.schema, d.vocab);
  d.split.val = quantize_all(raw.val, d.schema, d.vocab);
  d.split.test = quantize_all(raw.test, d.schema, d.vocab);
  return d;
}

inline std::vector<std::size_t> read_informative(std::istream& in) {
  std::vector<std::size_t> out;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = Schema::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto v = parse_number(t);
    if (!v || *v < 0 || *v != std::floor(*v)) throw ParseError("informative: bad field index '" + t + "'");
    out.push_back(static_cast<std::size_t>(*v));
  }
  return out;
}

inline PreparedData prepare_data(const RunConfig& c) {
  if (c.data.empty()) throw ConfigError("no dataset: set 'data' in the config or pass --data");
  std::ifstream in = open_in(c.data, "dataset");
  std::vector<RawRecord> records;
  Schema schema;
  if (c.format == "criteo") {
    schema = criteo_schema();
    records = read_criteo(in);
  } else {
    if (c.schema.empty()) throw ConfigError("csv data needs a schema file ('schema' key or --schema)");
    std::ifstream sin = open_in(c.schema, "schema");
    schema = Schema::parse(sin);
    records = read_csv(in, schema);
  }
  PreparedData d = prepare_records(std::move(records), std::move(schema), c.train.split_seed, c.train.min_freq);
  if (!c.informative.empty()) {
    std::ifstream iin = open_in(c.informative, "informative-field list");
    d.informative = read_informative(iin);
    for (const auto f : d.informative) {
      if (f >= d.schema.size()) throw DataError("informative field " + std::to_string(f) + " out of range");
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Method variants used by compare: a base method optionally followed by
// ":" and '+'-joined variants, e.g. "adafs:soft", "aefs:no-align",
// "adafs:hard+pretrain2".

inline void apply_method_variant(RunConfig& c, std::string_view v) {
  const bool is_aefs = c.train.method == Method::aefs;
  const bool is_adafs = c.train.method == Method::adafs;
  auto require = [&](bool ok) {
    if (!ok) throw ConfigError("method variant '" + std::string(v) + "' does not apply to " + to_string(c.train.method));
  };
  if (v == "soft" || v == "hard") {
    require(is_adafs);
    c.train.mode = parse_selection_mode(v);
  } else if (v == "no-reweight") {
    require(is_aefs || is_adafs);
    c.train.enable_topk_reweight = false;
  } else if (v == "no-eal") {
    require(is_aefs);
    c.train.enable_eal = false;
  } else if (v == "no-pal") {
    require(is_aefs);
    c.train.enable_pal = false;
  } else if (v == "no-align") {
    require(is_aefs);
    c.train.enable_eal = c.train.enable_pal = false;
  } else if (v.starts_with("pretrain")) {
    require(is_aefs || is_adafs);
    c.train.pretrain_epochs = detail::parse_unsigned("pretrain", v.substr(8));
  } else {
    throw ConfigError("unknown method variant '" + std::string(v) + "'");
  }
}

inline void apply_method_spec(RunConfig& c, std::string_view spec) {
  const auto colon = spec.find(':');
  c.train.method = parse_method(spec.substr(0, colon));
  if (colon == std::string_view::npos) return;
  std::string_view rest = spec.substr(colon + 1);
  while (true) {
    const auto plus = rest.find('+');
    apply_method_variant(c, rest.substr(0, plus));
    if (plus == std::string_view::npos) break;
    rest.remove_prefix(plus + 1);
  }
}

// ---------------------------------------------------------------------------
// One training run

struct RunOutcome {
  std::unique_ptr<Model> model;
  TrainReport report;
  Evaluation test;
  ReportRow row;
};

inline RunOutcome run_experiment(const RunConfig& c, const PreparedData& data, TrainHooks hooks = {},
                                 std::ostream* selection_dump = nullptr, std::string method_label = {}) {
  c.validate();
  TrainResult tr = train(data.split.train, data.split.val, data.vocab_sizes, c.train, hooks);
  RunOutcome o;
  o.model = std::move(tr.model);
  o.report = std::move(tr.report);
  EvalOptions eo;
  eo.informative = data.informative;
  eo.selection_dump = selection_dump;
  o.test = evaluate(*o.model, data.split.test, eo);
  o.row.method = method_label.empty() ? to_string(c.train.method) : std::move(method_label);
  o.row.runs = 1;
  o.row.auc = o.test.metrics.auc;
  o.row.logloss = o.test.metrics.logloss;
  o.row.n = o.test.metrics.n;
  o.row.activated_params_avg = o.test.metrics.activated_params_avg;
  o.row.lookups_avg = o.test.metrics.lookups_avg;
  o.row.delta_pae = method_delta_pae(c.train, data.vocab_sizes.size());
  return o;
}

// ---------------------------------------------------------------------------
// Manifests

inline nlohmann::ordered_json make_manifest(const std::string& command, const RunConfig& c, const fs::path& out_dir) {
  nlohmann::ordered_json m;
  m["command"] = command;
  m["config_hash"] = config_hash(c);
  m["seed"] = c.train.seed;
  m["config"] = canonical_config(c);
  m["inputs"] = nlohmann::ordered_json::array();
  for (const auto& p : {c.data, c.schema, c.informative}) {
    if (!p.empty()) m["inputs"].push_back(p);
  }
  m["output_dir"] = out_dir.string();
  m["versions"] = {{"aefs", kVersion}, {"checkpoint", kCheckpointVersion}};
  m["started_at"] = utc_timestamp();
  m["finished_at"] = nullptr;
  m["status"] = "running";
  return m;
}

inline void write_manifest(const fs::path& dir, const nlohmann::ordered_json& m) {
  auto f = open_out(dir / "manifest.json");
  f << m.dump(2) << '\n';
}

// Run directories are append-only: an existing one is only replaced with
// force.
inline void claim_directory(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force) throw ConfigError("run directory " + dir.string() + " exists; use a new seed or --force");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

// ---------------------------------------------------------------------------
// Commands

struct SynthOptions {
  SyntheticSpec spec;
  std::string out = "synthetic";
};

inline int cmd_synth(const SynthOptions& o, std::ostream& out) {
  const SyntheticData d = generate_synthetic(o.spec);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "data.csv");
    write_csv(f, d.schema, d.records);
  }
  {
    auto f = open_out(dir / "schema.txt");
    d.schema.write(f);
  }
  {
    auto f = open_out(dir / "informative.txt");
    for (const auto i : d.teacher.informative) f << i << '\n';
  }
  std::vector<int> labels;
  labels.reserve(d.records.size());
  for (const auto& r : d.records) labels.push_back(r.label);
  std::string teacher_auc = "undefined";
  try {
    teacher_auc = fixed(auc(d.teacher_scores, labels), 6);
  } catch (const UndefinedMetricError&) {
  }
  {
    auto f = open_out(dir / "teacher_auc.txt");
    f << "teacher_auc=" << teacher_auc << '\n';
  }
  {
    auto f = open_out(dir / "aefs.conf");
    const fs::path abs = fs::absolute(dir);
    f << "data=" << (abs / "data.csv").string() << '\n'
      << "schema=" << (abs / "schema.txt").string() << '\n'
      << "informative=" << (abs / "informative.txt").string() << '\n'
      << "format=csv\n";
  }
  out << "wrote " << d.records.size() << " records, " << d.schema.size() << " fields, "
      << d.teacher.informative.size() << " informative to " << dir.string() << "\n"
      << "teacher_auc " << teacher_auc << '\n';
  return kExitOk;
}

struct PrepareOptions {
  RunConfig config;
  std::string out;
};

inline int cmd_prepare(const PrepareOptions& o, std::ostream& out) {
  o.config.validate();
  const PreparedData d = prepare_data(o.config);
  const fs::path dir = output_root(o.out) / ("prepare-" + config_hash(o.config));
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "vocab.tsv");
    d.vocab.write(f);
  }
  {
    auto f = open_out(dir / "vocab_sizes.tsv");
    d.vocab.write_sizes(f, d.schema);
  }
  {
    nlohmann::ordered_json j;
    j["train"] = d.split.train.size();
    j["val"] = d.split.val.size();
    j["test"] = d.split.test.size();
    j["fields"] = d.schema.size();
    j["total_ids"] = std::accumulate(d.vocab_sizes.begin(), d.vocab_sizes.end(), std::uint64_t{0});
    auto f = open_out(dir / "split.json");
    f << j.dump(2) << '\n';
  }
  out << "train/val/test " << d.split.train.size() << '/' << d.split.val.size() << '/' << d.split.test.size()
      << ", vocab written to " << dir.string() << '\n';
  return kExitOk;
}

struct TrainOptions {
  RunConfig config;
  std::string out;
  bool force = false;
  bool dump_selections = false;
  bool verbose = false;
};

inline int cmd_train(const TrainOptions& o, std::ostream& out) {
  const RunConfig& c = o.config;
  c.validate();
  const fs::path dir =
      output_root(o.out) / (to_string(c.train.method) + "-" + config_hash(c) + "-s" + std::to_string(c.train.seed));
  claim_directory(dir, o.force);
  auto manifest = make_manifest("train", c, dir);
  write_manifest(dir, manifest);
  try {
    const PreparedData data = prepare_data(c);
    std::optional<std::ofstream> dump;
    if (o.dump_selections) dump.emplace(open_out(dir / "selections.jsonl"));
    TrainHooks hooks;
    if (o.verbose) hooks.log = &out;
    RunOutcome run = run_experiment(c, data, hooks, dump ? &*dump : nullptr);
    {
      auto f = open_out(dir / "checkpoint.txt");
      save_checkpoint(f, *run.model);
    }
    {
      auto f = open_out(dir / "train_report.json");
      f << to_json(run.report).dump(2) << '\n';
    }
    {
      auto jf = open_out(dir / "metrics.jsonl");
      auto tf = open_out(dir / "metrics.txt");
      const std::vector<ReportRow> rows{run.row};
      emit_report(rows, jf, tf);
    }
    manifest["status"] = "complete";
    manifest["finished_at"] = utc_timestamp();
    write_manifest(dir, manifest);

    const std::size_t n = data.vocab_sizes.size();
    out << "run " << dir.string() << '\n'
        << "method " << to_string(c.train.method) << ", k=" << c.train.k(n) << " of " << n << " fields\n"
        << "test AUC " << fixed(run.row.auc, 4) << ", Logloss " << fixed(run.row.logloss, 4) << '\n'
        << "dPaE " << format_percent(run.row.delta_pae) << '\n'
        << "main lookups/instance " << fixed(run.test.main_lookups_per_instance, 2) << ", aux lookups/instance "
        << fixed(run.test.aux_lookups_per_instance, 2) << '\n';
    if (run.test.selection_precision) out << "selection precision " << fixed(*run.test.selection_precision, 4) << '\n';
  } catch (const std::exception& e) {
    manifest["status"] = std::string("failed: ") + e.what();
    manifest["finished_at"] = utc_timestamp();
    write_manifest(dir, manifest);
    throw;
  }
  return kExitOk;
}

struct CompareOptions {
  RunConfig config;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  std::string out;
  bool force = false;
  bool verbose = false;
};

inline int cmd_compare(const CompareOptions& o, std::ostream& out) {
  if (o.methods.size() < 2) throw ConfigError("compare needs at least 2 methods");
  if (o.seeds.size() < 2) throw ConfigError("compare needs at least 2 seeds");
  o.config.validate();
  std::string key = canonical_config(o.config);
  for (const auto& m : o.methods) key += "method:" + m + "\n";
  for (const auto s : o.seeds) key += "seed:" + std::to_string(s) + "\n";
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  const fs::path dir = output_root(o.out) / (std::string("compare-") + hash);
  claim_directory(dir, o.force);
  auto manifest = make_manifest("compare", o.config, dir);
  manifest["methods"] = o.methods;
  manifest["seeds"] = o.seeds;
  write_manifest(dir, manifest);

  const PreparedData data = prepare_data(o.config);
  std::map<std::string, std::vector<ReportRow>> cache;
  auto runs_file = open_out(dir / "runs.jsonl");
  for (const auto& m : o.methods) {
    if (cache.count(m)) continue;
    for (const auto seed : o.seeds) {
      RunConfig c = o.config;
      apply_method_spec(c, m);
      c.train.seed = seed;
      TrainHooks hooks;
      if (o.verbose) hooks.log = &out;
      RunOutcome run = run_experiment(c, data, hooks, nullptr, m);
      auto j = to_json(run.row);
      j["seed"] = seed;
      if (run.test.selection_precision) j["selection_precision"] = *run.test.selection_precision;
      if (run.test.pal_mean) j["pal_mean"] = *run.test.pal_mean;
      runs_file << j.dump() << '\n';
      out << m << " seed " << seed << ": AUC " << fixed(run.row.auc, 4) << '\n';
      cache[m].push_back(run.row);
    }
  }

  std::vector<ReportRow> rows;
  std::vector<std::vector<double>> samples;
  for (const auto& m : o.methods) {
    const auto& runs = cache.at(m);
    ReportRow mean = runs.front();
    mean.runs = runs.size();
    mean.auc = mean.logloss = mean.activated_params_avg = mean.lookups_avg = 0.0;
    std::vector<double> aucs;
    for (const auto& r : runs) {
      mean.auc += r.auc;
      mean.logloss += r.logloss;
      mean.activated_params_avg += r.activated_params_avg;
      mean.lookups_avg += r.lookups_avg;
      aucs.push_back(r.auc);
    }
    const double k = static_cast<double>(runs.size());
    mean.auc /= k;
    mean.logloss /= k;
    mean.activated_params_avg /= k;
    mean.lookups_avg /= k;
    rows.push_back(mean);
    samples.push_back(std::move(aucs));
  }
  {
    auto jf = open_out(dir / "report.jsonl");
    auto tf = open_out(dir / "table.txt");
    emit_report(rows, jf, tf);
  }
  {
    auto pf = open_out(dir / "pvalues.txt");
    write_pvalue_matrix(pf, o.methods, samples);
  }
  manifest["status"] = "complete";
  manifest["finished_at"] = utc_timestamp();
  write_manifest(dir, manifest);
  write_table(out, rows);
  out << '\n';
  write_pvalue_matrix(out, o.methods, samples);
  out << "report " << dir.string() << '\n';
  return kExitOk;
}

struct ParamsOptions {
  std::string vocab;             // "name<TAB>size" lines or one size per line
  std::uint64_t total_ids = 0;   // alternative to a vocab file
  std::size_t d1 = 32;
  std::size_t d2 = 4;
  Rational r{1, 2};
};

inline std::vector<std::uint64_t> read_vocab_sizes(std::istream& in) {
  std::vector<std::uint64_t> sizes;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = Schema::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto tab = t.find_last_of("\t ,");
    const std::string last = tab == std::string::npos ? t : Schema::trim(t.substr(tab + 1));
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(last.data(), last.data() + last.size(), v);
    if (ec != std::errc{} || ptr != last.data() + last.size()) throw ParseError("vocab sizes: bad line '" + t + "'");
    sizes.push_back(v);
  }
  if (sizes.empty()) throw DataError("vocab sizes: no fields");
  return sizes;
}

inline int cmd_params(const ParamsOptions& o, std::ostream& out) {
  std::uint64_t total = o.total_ids;
  std::optional<std::size_t> n_fields;
  if (!o.vocab.empty()) {
    std::ifstream in = open_in(o.vocab, "vocab sizes");
    const auto sizes = read_vocab_sizes(in);
    total = std::accumulate(sizes.begin(), sizes.end(), std::uint64_t{0});
    n_fields = sizes.size();
  }
  if (total == 0) throw DataError("params: missing vocab (pass --vocab or --total-ids)");
  if (o.r <= Rational(0) || o.r > Rational(1)) throw ConfigError("params: r must be in (0, 1]");
  Rational kept = o.r;
  if (n_fields) {
    TrainConfig t;
    t.r = o.r;
    kept = Rational(static_cast<std::int64_t>(t.k(*n_fields)), static_cast<std::int64_t>(*n_fields));
  }
  const Rational full(static_cast<std::int64_t>(full_param_count(total, o.d1)));
  const Rational aux(static_cast<std::int64_t>(full_param_count(total, o.d2)));
  const Rational dpae = delta_pae(static_cast<std::int64_t>(o.d1), static_cast<std::int64_t>(o.d2), kept);
  const Rational activated = full * kept + aux;
  if (n_fields) out << "fields               " << *n_fields << '\n';
  out << "feature ids          " << total << '\n'
      << "full params (d1=" << o.d1 << ")   " << full.to_string() << " (" << format_millions(full) << ")\n"
      << "aux params (d2=" << o.d2 << ")     " << aux.to_string() << " (" << format_millions(aux) << ")\n"
      << "expected activated   " << activated.to_decimal(0) << " (" << format_millions(activated) << ")\n"
      << "dPaE                 " << format_percent(dpae) << '\n'
      << "dEL                  " << format_percent(delta_el(kept)) << '\n';
  return kExitOk;
}

}  // namespace aefs
