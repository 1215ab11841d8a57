#pragma once

// Flat key=value run configuration. Keys mirror TrainConfig plus data paths;
// '#' starts a comment. Later assignments win, so CLI overrides are applied
// after the file.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "aefs/data.hpp"
#include "aefs/errors.hpp"
#include "aefs/training.hpp"

namespace aefs {

struct RunConfig {
  TrainConfig train;
  std::string data;                // dataset file
  std::string schema;              // schema file (csv format)
  std::string format = "csv";      // csv | criteo
  std::string informative;         // optional planted-field list, one index per line

  void validate() const {
    train.validate();
    if (format != "csv" && format != "criteo") throw ConfigError("format must be csv or criteo");
  }
};

namespace detail {

inline std::uint64_t parse_unsigned(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("config: '" + std::string(key) + "' expects a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

inline double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("config: '" + std::string(key) + "' expects a number, got '" + std::string(v) + "'");
  }
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: '" + std::string(key) + "' expects true or false, got '" + std::string(v) + "'");
}

inline std::string real_string(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline void apply_setting(RunConfig& c, std::string_view key, std::string_view value) {
  using namespace detail;
  TrainConfig& t = c.train;
  try {
    if (key == "method") t.method = parse_method(value);
    else if (key == "mode") t.mode = parse_selection_mode(value);
    else if (key == "batch_size") t.batch_size = parse_unsigned(key, value);
    else if (key == "r") t.r = Rational::parse(value);
    else if (key == "d1") t.d1 = parse_unsigned(key, value);
    else if (key == "d2") t.d2 = parse_unsigned(key, value);
    else if (key == "max_epochs") t.max_epochs = parse_unsigned(key, value);
    else if (key == "lr") t.lr = parse_real(key, value);
    else if (key == "seed") t.seed = parse_unsigned(key, value);
    else if (key == "split_seed") t.split_seed = parse_unsigned(key, value);
    else if (key == "pretrain_epochs") t.pretrain_epochs = parse_unsigned(key, value);
    else if (key == "enable_eal") t.enable_eal = parse_bool(key, value);
    else if (key == "enable_pal") t.enable_pal = parse_bool(key, value);
    else if (key == "enable_topk_reweight") t.enable_topk_reweight = parse_bool(key, value);
    else if (key == "backbone_main") t.backbone_main = parse_backbone(value);
    else if (key == "backbone_aux") t.backbone_aux = parse_backbone(value);
    else if (key == "n_cross_layers") t.n_cross_layers = parse_unsigned(key, value);
    else if (key == "min_freq") t.min_freq = parse_unsigned(key, value);
    else if (key == "hidden_dims") {
      t.hidden_dims.clear();
      std::string item;
      std::istringstream in{std::string(value)};
      while (std::getline(in, item, ',')) t.hidden_dims.push_back(parse_unsigned(key, Schema::trim(item)));
    } else if (key == "data") c.data = value;
    else if (key == "schema") c.schema = value;
    else if (key == "format") c.format = value;
    else if (key == "informative") c.informative = value;
    else throw ConfigError("config: unknown key '" + std::string(key) + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config: bad value for '" + std::string(key) + "': " + e.what());
  }
}

inline void parse_config(std::istream& in, RunConfig& c) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string trimmed = Schema::trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    apply_setting(c, Schema::trim(trimmed.substr(0, eq)), Schema::trim(trimmed.substr(eq + 1)));
  }
}

// Every setting except seed, one "key=value" per line in key order.
inline std::string canonical_config(const RunConfig& c) {
  const TrainConfig& t = c.train;
  std::string dims;
  for (std::size_t i = 0; i < t.hidden_dims.size(); ++i) dims += (i ? "," : "") + std::to_string(t.hidden_dims[i]);
  const std::map<std::string, std::string> kv{
      {"backbone_aux", to_string(t.backbone_aux)},
      {"backbone_main", to_string(t.backbone_main)},
      {"batch_size", std::to_string(t.batch_size)},
      {"d1", std::to_string(t.d1)},
      {"d2", std::to_string(t.d2)},
      {"data", c.data},
      {"enable_eal", t.enable_eal ? "true" : "false"},
      {"enable_pal", t.enable_pal ? "true" : "false"},
      {"enable_topk_reweight", t.enable_topk_reweight ? "true" : "false"},
      {"format", c.format},
      {"hidden_dims", dims},
      {"informative", c.informative},
      {"lr", detail::real_string(t.lr)},
      {"max_epochs", std::to_string(t.max_epochs)},
      {"method", to_string(t.method)},
      {"min_freq", std::to_string(t.min_freq)},
      {"mode", to_string(t.mode)},
      {"n_cross_layers", std::to_string(t.n_cross_layers)},
      {"pretrain_epochs", std::to_string(t.pretrain_epochs)},
      {"r", t.r.to_string()},
      {"schema", c.schema},
      {"split_seed", std::to_string(t.split_seed)},
  };
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical_config(c))));
  return buf;
}

}  // namespace aefs
