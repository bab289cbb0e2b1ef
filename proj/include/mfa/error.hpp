// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mfa {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A required key is missing or has the wrong type.
class SchemaError : public Error {
 public:
  explicit SchemaError(std::string key, const std::string& detail = "missing required key")
      : Error("schema error: " + detail + " '" + key + "'"), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

/// Structured filename did not match `<int>_<camera>_<int>`.
class ParseError : public Error {
 public:
  ParseError(std::string segment, const std::string& what)
      : Error(what), segment_(std::move(segment)) {}
  const std::string& segment() const noexcept { return segment_; }

 private:
  std::string segment_;
};

/// Images without sidecars or sidecars without images.
class PairingError : public Error {
 public:
  explicit PairingError(std::vector<std::string> orphans)
      : Error(Describe(orphans)), orphans_(std::move(orphans)) {}
  const std::vector<std::string>& orphans() const noexcept { return orphans_; }

 private:
  static std::string Describe(const std::vector<std::string>& orphans) {
    std::string msg = "unpaired files:";
    for (const auto& o : orphans) msg += " " + o;
    return msg;
  }
  std::vector<std::string> orphans_;
};

/// Failure encoding a single batch item.
class EncodeError : public Error {
 public:
  EncodeError(std::size_t item, const std::string& what)
      : Error("item " + std::to_string(item) + ": " + what), item_(item) {}
  std::size_t item() const noexcept { return item_; }

 private:
  std::size_t item_;
};

}  // namespace mfa
