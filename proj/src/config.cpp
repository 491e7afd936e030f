// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#include "topksim/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "topksim/errors.hpp"

namespace topksim {

namespace {

struct Value {
  enum class Type { kInt, kFloat, kBool, kString, kList };
  Type type = Type::kInt;
  std::int64_t i = 0;
  double f = 0.0;
  bool b = false;
  std::string s;
  std::vector<Value> items;
  int line = 0;
};

const char* type_name(Value::Type t) {
  switch (t) {
    case Value::Type::kInt:
      return "integer";
    case Value::Type::kFloat:
      return "float";
    case Value::Type::kBool:
      return "bool";
    case Value::Type::kString:
      return "string";
    case Value::Type::kList:
      return "list";
  }
  return "?";
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' ||
                        s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

// Comments start at '#' outside a quoted string.
std::string_view strip_comment(std::string_view s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

[[noreturn]] void fail(const std::string& source, int line,
                       const std::string& what) {
  throw ConfigError(source + ":" + std::to_string(line) + ": " + what);
}

bool parse_int_token(std::string_view tok, std::int64_t& out) {
  if (tok.size() > 1 && tok.front() == '+') tok.remove_prefix(1);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

// strtod instead of from_chars so an overflowing literal still yields the
// signed infinity the finite check needs to produce a useful error.
bool parse_float_token(std::string_view tok, double& out) {
  const std::string text(tok);
  char* end = nullptr;
  const double value = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || end == text.c_str()) return false;
  out = value;
  return true;
}

Value parse_scalar(const std::string& source, int line, std::string_view tok,
                   const std::string& key) {
  Value v;
  v.line = line;
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
    v.type = Value::Type::kString;
    v.s = std::string(tok.substr(1, tok.size() - 2));
    return v;
  }
  if (tok == "true" || tok == "false") {
    v.type = Value::Type::kBool;
    v.b = (tok == "true");
    return v;
  }
  if (parse_int_token(tok, v.i)) {
    v.type = Value::Type::kInt;
    return v;
  }
  if (parse_float_token(tok, v.f)) {
    if (!std::isfinite(v.f)) {
      fail(source, line, key + ": non-finite numbers are not allowed");
    }
    v.type = Value::Type::kFloat;
    return v;
  }
  fail(source, line,
       key + ": cannot parse value '" + std::string(tok) + "'");
}

Value parse_value(const std::string& source, int line, std::string_view tok,
                  const std::string& key) {
  if (!tok.empty() && tok.front() == '[') {
    if (tok.back() != ']') {
      fail(source, line, key + ": unterminated list (lists are single-line)");
    }
    Value v;
    v.type = Value::Type::kList;
    v.line = line;
    std::string_view inner = trim(tok.substr(1, tok.size() - 2));
    if (inner.empty()) fail(source, line, key + ": empty list");
    while (!inner.empty()) {
      const std::size_t comma = inner.find(',');
      std::string_view item = trim(inner.substr(0, comma));
      if (item.empty()) fail(source, line, key + ": empty list element");
      if (item.front() == '[') {
        fail(source, line, key + ": nested lists are not supported");
      }
      v.items.push_back(parse_scalar(source, line, item, key));
      if (comma == std::string_view::npos) break;
      inner = trim(inner.substr(comma + 1));
      if (inner.empty()) {
        fail(source, line, key + ": trailing comma in list");
      }
    }
    return v;
  }
  return parse_scalar(source, line, tok, key);
}

// ------------------------------------------------------------ typed access
class KeyTable {
 public:
  KeyTable(std::string source) : source_(std::move(source)) {}

  void insert(const std::string& path, Value v) {
    if (values_.count(path) != 0) {
      fail(source_, v.line, "duplicate key '" + path + "'");
    }
    values_.emplace(path, std::move(v));
  }

  bool has(const std::string& path) const { return values_.count(path) != 0; }
  bool empty() const { return values_.empty(); }

  const Value* take(const std::string& path) {
    auto it = values_.find(path);
    if (it == values_.end()) return nullptr;
    consumed_.insert(path);
    return &it->second;
  }

  // Every stored key must have been consumed by a typed getter.
  void reject_unknown() const {
    for (const auto& [path, value] : values_) {
      if (consumed_.count(path) == 0) {
        fail(source_, value.line, "unknown key '" + path + "'");
      }
    }
  }

  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::map<std::string, Value> values_;
  std::set<std::string> consumed_;
};

std::int64_t want_int(const std::string& source, const std::string& path,
                      const Value& v) {
  if (v.type != Value::Type::kInt) {
    fail(source, v.line,
         path + ": expected integer, got " + type_name(v.type));
  }
  return v.i;
}

double want_float(const std::string& source, const std::string& path,
                  const Value& v) {
  if (v.type == Value::Type::kInt) return static_cast<double>(v.i);
  if (v.type != Value::Type::kFloat) {
    fail(source, v.line, path + ": expected number, got " + type_name(v.type));
  }
  return v.f;
}

struct Getter {
  KeyTable& table;

  void get_int(const std::string& path, std::int64_t& out,
               std::int64_t lo) const {
    const Value* v = table.take(path);
    if (v == nullptr) return;
    const std::int64_t raw = want_int(table.source(), path, *v);
    if (raw < lo) {
      fail(table.source(), v->line,
           path + ": must be >= " + std::to_string(lo));
    }
    out = raw;
  }

  template <typename T>
  void get_int_as(const std::string& path, T& out, std::int64_t lo) const {
    std::int64_t raw = static_cast<std::int64_t>(out);
    get_int(path, raw, lo);
    out = static_cast<T>(raw);
  }

  void get_u64(const std::string& path, std::uint64_t& out) const {
    const Value* v = table.take(path);
    if (v == nullptr) return;
    const std::int64_t raw = want_int(table.source(), path, *v);
    if (raw < 0) fail(table.source(), v->line, path + ": must be >= 0");
    out = static_cast<std::uint64_t>(raw);
  }

  void get_float(const std::string& path, double& out, double lo,
                 bool open_lo) const {
    const Value* v = table.take(path);
    if (v == nullptr) return;
    const double raw = want_float(table.source(), path, *v);
    if (open_lo ? !(raw > lo) : !(raw >= lo)) {
      fail(table.source(), v->line,
           path + ": must be " + (open_lo ? "> " : ">= ") +
               std::to_string(lo));
    }
    out = raw;
  }

  void get_bool(const std::string& path, bool& out) const {
    const Value* v = table.take(path);
    if (v == nullptr) return;
    if (v->type != Value::Type::kBool) {
      fail(table.source(), v->line,
           path + ": expected bool, got " + type_name(v->type));
    }
    out = v->b;
  }

  void get_string(const std::string& path, std::string& out) const {
    const Value* v = table.take(path);
    if (v == nullptr) return;
    if (v->type != Value::Type::kString) {
      fail(table.source(), v->line,
           path + ": expected string, got " + type_name(v->type));
    }
    out = v->s;
  }

  // Scalar-or-list keys (the sweep axes). A scalar becomes a single-element
  // axis. Duplicate entries would collide on output directories.
  template <typename T, typename Convert>
  void get_axis(const std::string& path, std::vector<T>& out,
                Convert convert) const {
    const Value* v = table.take(path);
    if (v == nullptr) return;
    std::vector<T> parsed;
    if (v->type == Value::Type::kList) {
      for (const Value& item : v->items) {
        parsed.push_back(convert(path, item));
      }
    } else {
      parsed.push_back(convert(path, *v));
    }
    for (std::size_t a = 0; a < parsed.size(); ++a) {
      for (std::size_t b = a + 1; b < parsed.size(); ++b) {
        if (parsed[a] == parsed[b]) {
          fail(table.source(), v->line, path + ": duplicate sweep value");
        }
      }
    }
    out = std::move(parsed);
  }
};

CompressorKind compressor_from_name(const std::string& source, int line,
                                    const std::string& path,
                                    const std::string& name) {
  if (name == "topk") return CompressorKind::kTopK;
  if (name == "randomk") return CompressorKind::kRandomK;
  if (name == "identity") return CompressorKind::kIdentity;
  fail(source, line,
       path + ": unknown compressor '" + name +
           "' (expected topk, randomk, identity)");
}

}  // namespace

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (const char ch : text) {
    hash ^= static_cast<unsigned char>(ch);
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string hash_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

ExperimentConfig parse_config(const std::string& text,
                              const std::string& source) {
  static const std::set<std::string> kSections{"problem", "run", "analysis",
                                               "output", "sweep"};
  KeyTable table(source);

  std::string section;
  std::istringstream stream(text);
  std::string raw_line;
  int line_no = 0;
  while (std::getline(stream, raw_line)) {
    ++line_no;
    const std::string_view line = trim(strip_comment(raw_line));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail(source, line_no, "malformed section header");
      const std::string name{trim(line.substr(1, line.size() - 2))};
      if (kSections.count(name) == 0) {
        fail(source, line_no, "unknown section '[" + name + "]'");
      }
      section = name;
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      fail(source, line_no, "expected 'key = value'");
    }
    const std::string key{trim(line.substr(0, eq))};
    if (key.empty()) fail(source, line_no, "missing key before '='");
    for (const char ch : key) {
      if (std::isalnum(static_cast<unsigned char>(ch)) == 0 && ch != '_') {
        fail(source, line_no, "invalid key '" + key + "'");
      }
    }
    if (section.empty()) {
      fail(source, line_no, "key '" + key + "' appears before any section");
    }
    const std::string path = section + "." + key;
    const std::string_view value_text = trim(line.substr(eq + 1));
    if (value_text.empty()) fail(source, line_no, path + ": missing value");
    table.insert(path, parse_value(source, line_no, value_text, path));
  }

  if (table.empty()) {
    throw ConfigError(source +
                      ": empty config; required keys: problem.kind, run.T");
  }

  ExperimentConfig config;
  config.raw_text = text;
  config.config_hash = hash_hex(fnv1a64(text));
  Getter get{table};

  // [problem]
  get.get_string("problem.kind", config.problem.kind);
  get.get_int_as("problem.m", config.problem.m, 1);
  get.get_int_as("problem.n", config.problem.n, 1);
  get.get_float("problem.noise_sigma", config.problem.noise_sigma, 0.0,
                false);
  get.get_float("problem.l2", config.problem.l2, 0.0, false);
  if (table.has("problem.data_seed")) {
    std::uint64_t seed = 0;
    get.get_u64("problem.data_seed", seed);
    config.problem.data_seed = seed;
  }
  get.get_string("problem.path", config.problem.path);
  get.get_int_as("problem.d", config.problem.net_d, 1);
  get.get_int_as("problem.hidden", config.problem.net_hidden, 1);

  // [run]
  get.get_axis("run.K", config.sweep_K,
               [&](const std::string& path, const Value& v) {
                 const std::int64_t raw = want_int(source, path, v);
                 if (raw < 0) fail(source, v.line, path + ": must be >= 0");
                 return static_cast<Index>(raw);
               });
  get.get_axis("run.P", config.sweep_P,
               [&](const std::string& path, const Value& v) {
                 const std::int64_t raw = want_int(source, path, v);
                 if (raw < 1) fail(source, v.line, path + ": must be >= 1");
                 return static_cast<int>(raw);
               });
  get.get_axis("run.alpha0", config.sweep_alpha0,
               [&](const std::string& path, const Value& v) {
                 const double raw = want_float(source, path, v);
                 if (!(raw > 0.0)) fail(source, v.line, path + ": must be > 0");
                 return raw;
               });
  get.get_axis("run.compressor", config.sweep_compressor,
               [&](const std::string& path, const Value& v) {
                 if (v.type != Value::Type::kString) {
                   fail(source, v.line,
                        path + ": expected string, got " + type_name(v.type));
                 }
                 return compressor_from_name(source, v.line, path, v.s);
               });
  get.get_int("run.T", config.run.T, 1);
  get.get_int_as("run.batch_size", config.run.batch_size, 1);
  get.get_u64("run.seed", config.run.seed);
  std::string schedule_name = "constant";
  get.get_string("run.schedule", schedule_name);
  if (schedule_name == "constant") {
    config.run.schedule.kind = LearningRateSchedule::Kind::kConstant;
  } else if (schedule_name == "power_law") {
    config.run.schedule.kind = LearningRateSchedule::Kind::kPowerLaw;
  } else {
    const Value* v = table.take("run.schedule");
    fail(source, v != nullptr ? v->line : 0,
         "run.schedule: unknown schedule '" + schedule_name +
             "' (expected constant, power_law)");
  }
  get.get_float("run.theta", config.run.schedule.theta, 0.0, true);
  std::string partition_name = "contiguous";
  get.get_string("run.partition", partition_name);
  if (partition_name == "contiguous") {
    config.run.partition = PartitionMode::kContiguous;
  } else if (partition_name == "shuffled") {
    config.run.partition = PartitionMode::kShuffled;
  } else {
    const Value* v = table.take("run.partition");
    fail(source, v != nullptr ? v->line : 0,
         "run.partition: unknown mode '" + partition_name +
             "' (expected contiguous, shuffled)");
  }
  get.get_bool("run.global_sampling", config.run.global_sampling);
  get.get_bool("run.record_xi", config.run.record_xi);
  get.get_bool("run.record_lemma_slack", config.run.record_lemma_slack);

  // [analysis]
  if (table.has("analysis.epsilon")) {
    double eps = 0.0;
    get.get_float("analysis.epsilon", eps, 0.0, true);
    config.analysis.epsilon = eps;
  }
  get.get_float("analysis.epsilon_rel", config.analysis.epsilon_rel, 0.0,
                true);
  {
    std::int64_t trials = config.analysis.second_moment_trials;
    get.get_int("analysis.second_moment_trials", trials, 1);
    config.analysis.second_moment_trials = static_cast<int>(trials);
  }
  get.get_int_as("analysis.second_moment_batch",
                 config.analysis.second_moment_batch, 0);
  get.get_int("analysis.pilot_steps", config.analysis.pilot_steps, 1);
  get.get_int("analysis.d_check_t_max", config.analysis.d_check_t_max, 10);
  get.get_axis("analysis.norm_curve_k", config.analysis.norm_curve_k,
               [&](const std::string& path, const Value& v) {
                 const std::int64_t raw = want_int(source, path, v);
                 if (raw < 1) fail(source, v.line, path + ": must be >= 1");
                 return static_cast<Index>(raw);
               });
  get.get_int("analysis.norm_curve_samples",
              config.analysis.norm_curve_samples, 1);
  get.get_axis("analysis.convergence_fractions",
               config.analysis.convergence_fractions,
               [&](const std::string& path, const Value& v) {
                 const double raw = want_float(source, path, v);
                 if (!(raw > 0.0) || raw > 1.0) {
                   fail(source, v.line, path + ": must be in (0, 1]");
                 }
                 return raw;
               });

  // [output]
  get.get_string("output.dir", config.output.dir);
  get.get_bool("output.write_jsonl", config.output.write_jsonl);
  get.get_bool("output.write_csv", config.output.write_csv);

  // [sweep]
  get.get_int("sweep.max_points", config.sweep_cap, 1);

  table.reject_unknown();

  // Required keys and cross-field checks.
  std::vector<std::string> missing;
  if (config.problem.kind.empty()) missing.push_back("problem.kind");
  if (!table.has("run.T")) missing.push_back("run.T");
  if (!missing.empty()) {
    std::string all;
    for (const std::string& key : missing) {
      if (!all.empty()) all += ", ";
      all += key;
    }
    throw ConfigError(source + ": missing required keys: " + all);
  }

  if (config.problem.kind != "synth_regression" &&
      config.problem.kind != "libsvm_logistic" &&
      config.problem.kind != "tanh_net") {
    throw ConfigError(
        source + ": problem.kind: unknown kind '" + config.problem.kind +
        "' (expected synth_regression, libsvm_logistic, tanh_net)");
  }
  if (config.problem.kind == "libsvm_logistic") {
    if (config.problem.path.empty()) {
      throw ConfigError(source +
                        ": problem.path is required for libsvm_logistic");
    }
    if (!std::filesystem::exists(config.problem.path)) {
      throw ConfigError(source + ": problem.path: file not found: " +
                        config.problem.path);
    }
  }
  if (config.output.dir.empty()) {
    throw ConfigError(source + ": output.dir: must not be empty");
  }

  // Fill single-point axes from the template defaults.
  if (config.sweep_K.empty()) config.sweep_K.push_back(config.run.K);
  if (config.sweep_P.empty()) config.sweep_P.push_back(config.run.P);
  if (config.sweep_alpha0.empty()) {
    config.sweep_alpha0.push_back(config.run.schedule.alpha0);
  }
  if (config.sweep_compressor.empty()) {
    config.sweep_compressor.push_back(config.run.compressor);
  }

  const std::int64_t points =
      static_cast<std::int64_t>(config.sweep_K.size()) *
      static_cast<std::int64_t>(config.sweep_P.size()) *
      static_cast<std::int64_t>(config.sweep_alpha0.size()) *
      static_cast<std::int64_t>(config.sweep_compressor.size());
  if (points > config.sweep_cap) {
    throw ConfigError(source + ": sweep has " + std::to_string(points) +
                      " points, cap is " + std::to_string(config.sweep_cap));
  }

  // Template fields mirror the first axis entries so a single-point config
  // reads the same everywhere.
  config.run.K = config.sweep_K.front();
  config.run.P = config.sweep_P.front();
  config.run.schedule.alpha0 = config.sweep_alpha0.front();
  config.run.compressor = config.sweep_compressor.front();
  config.run.schedule.validate();

  return config;
}

ExperimentConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open config file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.string());
}

std::vector<RunConfig> expand_sweep(const ExperimentConfig& config) {
  std::vector<RunConfig> points;
  for (const Index K : config.sweep_K) {
    for (const int P : config.sweep_P) {
      for (const double alpha0 : config.sweep_alpha0) {
        for (const CompressorKind compressor : config.sweep_compressor) {
          RunConfig run = config.run;
          run.K = K;
          run.P = P;
          run.schedule.alpha0 = alpha0;
          run.compressor = compressor;
          points.push_back(std::move(run));
        }
      }
    }
  }
  return points;
}

std::string run_label(const RunConfig& run) {
  char alpha[32];
  std::snprintf(alpha, sizeof(alpha), "%g", run.schedule.alpha0);
  return "K" + std::to_string(run.K) + "_P" + std::to_string(run.P) + "_a" +
         alpha + "_" + compressor_name(run.compressor);
}

}  // namespace topksim
