#pragma once

// Run configuration files and run manifests.
//
// A config file is a list of `key = value` lines; `#` starts a comment and
// blank lines are ignored. Keys are the TrainConfig fields (see
// config_keys()) plus a few path keys the CLI reads itself. Command-line
// flags override file values.

#include <istream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xtune/error.hpp"
#include "xtune/text_io.hpp"
#include "xtune/trainer.hpp"

namespace xtune {

struct ConfigEntry {
  std::string key, value;
  std::size_t line = 0;
};

inline std::vector<ConfigEntry> parse_config(std::istream& in, const std::string& source) {
  std::vector<ConfigEntry> out;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const std::string t(trim(line));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(source, lineno, "expected 'key = value'");
    ConfigEntry e{std::string(trim(std::string_view(t).substr(0, eq))), std::string(trim(std::string_view(t).substr(eq + 1))), lineno};
    if (e.key.empty()) throw ParseError(source, lineno, "empty key");
    if (auto it = seen.find(e.key); it != seen.end())
      throw ParseError(source, lineno, "key '" + e.key + "' already set on line " + std::to_string(it->second));
    seen[e.key] = lineno;
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<ConfigEntry> load_config(const std::string& path) {
  auto in = open_input(path);
  return parse_config(in, path);
}

namespace detail {

inline double config_number(const std::string& key, const std::string& v) {
  auto d = parse_double(v);
  if (!d) throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
  return *d;
}

inline std::size_t config_count(const std::string& key, const std::string& v) {
  const double d = config_number(key, v);
  if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d)))
    throw ValidationError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(d);
}

inline bool config_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config: '" + key + "' expects true/false, got '" + v + "'");
}

}  // namespace detail

// Returns false when `key` is not a training key.
inline bool apply_config_value(TrainConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  if (key == "task") c.task = parse_task(v);
  else if (key == "setting") c.setting = parse_setting(v);
  else if (key == "mode") c.mode = parse_mode(v);
  else if (key == "seed") c.seed = config_count(key, v);
  else if (key == "lambda1") c.lambda1 = config_number(key, v);
  else if (key == "lambda2") c.lambda2 = config_number(key, v);
  else if (key == "stage1_r1_weight") c.stage1_r1_weight = config_number(key, v);
  else if (key == "a_star") c.a_star = parse_strategy(v);
  else if (key == "a") c.a = parse_strategy(v);
  else if (key == "a_prime") c.a_prime = parse_strategy(v);
  else if (key == "lr") c.lr = config_number(key, v);
  else if (key == "batch_size") c.batch_size = config_count(key, v);
  else if (key == "epochs") c.epochs = config_count(key, v);
  else if (key == "warmup") c.warmup = config_number(key, v);
  else if (key == "noise_sigma") c.noise_sigma = config_number(key, v);
  else if (key == "word_ratio") c.word_ratio = config_number(key, v);
  else if (key == "ss_alpha") c.ss_alpha = config_number(key, v);
  else if (key == "warm_start") c.warm_start = config_bool(key, v);
  else if (key == "stopgrad") c.stopgrad = config_bool(key, v);
  else if (key == "span_positions") {
    if (v == "unchanged_words") c.span_positions = SpanPositions::unchanged_words;
    else if (v == "first_subwords") c.span_positions = SpanPositions::first_subwords;
    else throw ValidationError("config: span_positions is unchanged_words or first_subwords, got '" + v + "'");
  } else if (key == "dim") c.dim = config_count(key, v);
  else if (key == "max_len") c.max_len = config_count(key, v);
  else if (key == "pooling") c.pooling = parse_pooling(v);
  else return false;
  return true;
}

// Canonical `key = value` rendering, one line per key in config_keys() order.
inline std::vector<std::pair<std::string, std::string>> config_values(const TrainConfig& c) {
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  return {
      {"task", std::string(task_name(c.task))},
      {"setting", std::string(setting_name(c.setting))},
      {"mode", std::string(mode_name(c.mode))},
      {"seed", std::to_string(c.seed)},
      {"lambda1", format_double(c.lambda1)},
      {"lambda2", format_double(c.lambda2)},
      {"stage1_r1_weight", format_double(c.stage1_r1_weight)},
      {"a_star", std::string(strategy_name(c.a_star))},
      {"a", std::string(strategy_name(c.a))},
      {"a_prime", std::string(strategy_name(c.a_prime))},
      {"lr", format_double(c.lr)},
      {"batch_size", std::to_string(c.batch_size)},
      {"epochs", std::to_string(c.epochs)},
      {"warmup", format_double(c.warmup)},
      {"noise_sigma", format_double(c.noise_sigma)},
      {"word_ratio", format_double(c.word_ratio)},
      {"ss_alpha", format_double(c.ss_alpha)},
      {"warm_start", b(c.warm_start)},
      {"stopgrad", b(c.stopgrad)},
      {"span_positions", c.span_positions == SpanPositions::unchanged_words ? "unchanged_words" : "first_subwords"},
      {"dim", std::to_string(c.dim)},
      {"max_len", std::to_string(c.max_len)},
      {"pooling", std::string(pooling_name(c.pooling))},
  };
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& kv : config_values(TrainConfig{})) keys.push_back(kv.first);
  return keys;
}

inline std::string config_text(const TrainConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_values(c)) out += k + " = " + v + "\n";
  return out;
}

inline nlohmann::ordered_json config_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  for (const auto& [k, v] : config_values(c)) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------
// Manifest
//
// {
//   "format": "xtune-manifest 1",
//   "command": "train",
//   "seed": 1,
//   "config": { key: value, ... },          (config_values, as strings)
//   "inputs": { role: {"path", "sha256"} },
//   "items": {"stage1": n, "stage2": n},
//   "trace": [ {"stage","step","lr","task","r1","r2","total"}, ... ],
//   "warnings": [ ... ],
//   "metrics": { ... }                      (eval report, when test sets are given)
// }

struct InputDigest {
  std::string role, path, sha256;
};

inline nlohmann::ordered_json trace_json(const std::vector<StepLog>& trace) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : trace) {
    nlohmann::ordered_json e;
    e["stage"] = s.stage;
    e["step"] = s.step;
    e["lr"] = s.lr;
    e["task"] = s.task;
    e["r1"] = s.r1;
    e["r2"] = s.r2;
    e["total"] = s.total;
    arr.push_back(std::move(e));
  }
  return arr;
}

inline nlohmann::ordered_json run_manifest(const TrainConfig& cfg, const TrainResult& r,
                                           const std::vector<InputDigest>& inputs,
                                           const nlohmann::json* metrics = nullptr) {
  nlohmann::ordered_json j;
  j["format"] = "xtune-manifest 1";
  j["command"] = "train";
  j["seed"] = cfg.seed;
  j["config"] = config_json(cfg);
  j["inputs"] = nlohmann::ordered_json::object();
  for (const auto& d : inputs) j["inputs"][d.role] = {{"path", d.path}, {"sha256", d.sha256}};
  j["items"] = {{"stage1", r.stage1_items}, {"stage2", r.stage2_items}};
  j["trace"] = trace_json(r.trace);
  j["warnings"] = r.warnings;
  if (metrics) j["metrics"] = *metrics;
  return j;
}

}  // namespace xtune
