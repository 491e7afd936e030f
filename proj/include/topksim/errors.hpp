// Copyright 2026 The topksim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace topksim {

// Invalid argument to a library operation (bad K, negative sizes, non-finite
// input where finite is required, ...).
class InvalidParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file (config or data). Carries the source name and the
// 1-based line the problem was found on; line 0 means "whole file".
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string source, std::int64_t line, const std::string& what)
      : std::runtime_error(format(source, line, what)),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const { return source_; }
  std::int64_t line() const { return line_; }

 private:
  static std::string format(const std::string& source, std::int64_t line,
                            const std::string& what) {
    if (line > 0) {
      return source + ":" + std::to_string(line) + ": " + what;
    }
    return source + ": " + what;
  }

  std::string source_;
  std::int64_t line_;
};

// Semantically invalid experiment configuration (unknown key, missing
// required key, out-of-range value). Distinct from ParseError so the CLI can
// map both to the config-error exit code while tests can tell them apart.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace topksim
