// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mfa/error.hpp"

namespace mfa {

enum class Circadian { kDay, kNight };
enum class FaceOrientation { kFront, kBack, kLeft, kRight };

/// Six categorical temperature descriptors, ordered coldest first.
enum class TemperatureBand { kFreezing, kCold, kChilly, kCool, kWarm, kHot };

inline constexpr std::array<TemperatureBand, 6> kAllBands = {
    TemperatureBand::kFreezing, TemperatureBand::kCold, TemperatureBand::kChilly,
    TemperatureBand::kCool,     TemperatureBand::kWarm, TemperatureBand::kHot};
inline constexpr std::array<FaceOrientation, 4> kAllOrientations = {
    FaceOrientation::kFront, FaceOrientation::kBack, FaceOrientation::kLeft, FaceOrientation::kRight};
inline constexpr std::array<Circadian, 2> kAllCircadian = {Circadian::kDay, Circadian::kNight};

constexpr std::string_view to_string(Circadian c) { return c == Circadian::kDay ? "day" : "night"; }

constexpr std::string_view to_string(FaceOrientation f) {
  switch (f) {
    case FaceOrientation::kFront: return "front";
    case FaceOrientation::kBack: return "back";
    case FaceOrientation::kLeft: return "left";
    case FaceOrientation::kRight: return "right";
  }
  return "front";
}

constexpr std::string_view to_string(TemperatureBand b) {
  switch (b) {
    case TemperatureBand::kFreezing: return "freezing";
    case TemperatureBand::kCold: return "cold";
    case TemperatureBand::kChilly: return "chilly";
    case TemperatureBand::kCool: return "cool";
    case TemperatureBand::kWarm: return "warm";
    case TemperatureBand::kHot: return "hot";
  }
  return "freezing";
}

inline std::optional<Circadian> parse_circadian(std::string_view s) {
  for (auto c : kAllCircadian)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

inline std::optional<FaceOrientation> parse_orientation(std::string_view s) {
  for (auto f : kAllOrientations)
    if (to_string(f) == s) return f;
  return std::nullopt;
}

inline std::optional<TemperatureBand> parse_band(std::string_view s) {
  for (auto b : kAllBands)
    if (to_string(b) == s) return b;
  return std::nullopt;
}

struct EnvironmentalMetadata {
  double temperature_celsius = 0.0;
  Circadian circadian = Circadian::kDay;
  FaceOrientation face_orientation = FaceOrientation::kFront;

  friend bool operator==(const EnvironmentalMetadata&, const EnvironmentalMetadata&) = default;
};

/// Accepted temperature range on ingest, inclusive.
struct TemperatureRange {
  double min_celsius = -30.0;
  double max_celsius = 50.0;
};

/// Five strictly increasing boundaries separating the six bands. A value
/// equal to a boundary belongs to the band above it.
class ThresholdTable {
 public:
  ThresholdTable() : ThresholdTable({0.0, 10.0, 15.0, 20.0, 28.0}) {}

  explicit ThresholdTable(std::array<double, 5> bounds) : bounds_(bounds) {
    for (std::size_t i = 0; i < bounds_.size(); ++i) {
      if (!std::isfinite(bounds_[i])) throw ConfigError("threshold table: non-finite boundary");
      if (i > 0 && !(bounds_[i] > bounds_[i - 1]))
        throw ConfigError("threshold table: boundaries must be strictly increasing");
    }
  }

  const std::array<double, 5>& bounds() const noexcept { return bounds_; }

  /// Half-open interval [lo, hi) covered by a band; outer bands are unbounded.
  std::pair<double, double> interval(TemperatureBand band) const {
    const auto i = static_cast<std::size_t>(band);
    const double lo = i == 0 ? -INFINITY : bounds_[i - 1];
    const double hi = i == 5 ? INFINITY : bounds_[i];
    return {lo, hi};
  }

 private:
  std::array<double, 5> bounds_;
};

inline TemperatureBand bucket_temperature(double celsius, const ThresholdTable& table = {}) {
  if (!std::isfinite(celsius)) throw InvalidInputError("temperature must be finite");
  std::size_t band = 0;
  for (double b : table.bounds()) {
    if (celsius >= b) ++band;
  }
  return kAllBands[band];
}

/// Text fed to the text encoder for one image. Never empty.
class PromptString {
 public:
  explicit PromptString(std::string text) : text_(std::move(text)) {
    if (text_.empty()) throw InvalidInputError("prompt must be non-empty");
  }
  const std::string& text() const noexcept { return text_; }
  friend bool operator==(const PromptString&, const PromptString&) = default;

 private:
  std::string text_;
};

/// Renders the fixed metadata caption. `identity` is opaque: a learnable
/// placeholder token or a literal ID string, depending on the baseline.
inline PromptString render_prompt(std::string_view species, std::string_view identity,
                                  TemperatureBand band, const EnvironmentalMetadata& meta) {
  if (species.empty()) throw InvalidInputError("species must be non-empty");
  if (identity.empty()) throw InvalidInputError("identity token must be non-empty");
  std::string s;
  s.reserve(128);
  s += "A photo of a ";
  s += species;
  s += ' ';
  s += identity;
  s += " in ";
  s += to_string(band);
  s += " temperature, with face direction ";
  s += to_string(meta.face_orientation);
  s += ", captured during the ";
  s += to_string(meta.circadian);
  s += '.';
  return PromptString(std::move(s));
}

inline PromptString render_prompt(std::string_view species, std::string_view identity,
                                  const EnvironmentalMetadata& meta, const ThresholdTable& table = {}) {
  return render_prompt(species, identity, bucket_temperature(meta.temperature_celsius, table), meta);
}

/// Parses one sidecar document. Unknown keys are reported through
/// `warnings` (when given) and otherwise ignored.
inline EnvironmentalMetadata parse_metadata_sidecar(std::string_view document,
                                                    const TemperatureRange& range = {},
                                                    std::vector<std::string>* warnings = nullptr) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("<document>", std::string("malformed JSON (") + e.what() + ")");
  }
  if (!j.is_object()) throw SchemaError("<document>", "expected an object for");

  static constexpr std::array<std::string_view, 3> kKeys = {"temperature_celsius", "circadian",
                                                            "face_orientation"};
  // Keys are checked in schema order, so an implausible temperature is
  // reported before any later missing key.
  EnvironmentalMetadata meta;
  if (!j.contains("temperature_celsius")) throw SchemaError("temperature_celsius");
  const auto& t = j["temperature_celsius"];
  if (!t.is_number()) throw SchemaError("temperature_celsius", "expected a number for");
  meta.temperature_celsius = t.get<double>();
  if (!std::isfinite(meta.temperature_celsius) || meta.temperature_celsius < range.min_celsius ||
      meta.temperature_celsius > range.max_celsius) {
    throw RangeError("temperature_celsius " + std::to_string(meta.temperature_celsius) +
                     " outside [" + std::to_string(range.min_celsius) + ", " +
                     std::to_string(range.max_celsius) + "]");
  }

  if (!j.contains("circadian")) throw SchemaError("circadian");
  const auto& c = j["circadian"];
  auto circ = c.is_string() ? parse_circadian(c.get<std::string>()) : std::nullopt;
  if (!circ) throw SchemaError("circadian", "expected \"day\" or \"night\" for");
  meta.circadian = *circ;

  if (!j.contains("face_orientation")) throw SchemaError("face_orientation");
  const auto& f = j["face_orientation"];
  auto face = f.is_string() ? parse_orientation(f.get<std::string>()) : std::nullopt;
  if (!face) throw SchemaError("face_orientation", "expected front|back|left|right for");
  meta.face_orientation = *face;

  if (warnings != nullptr) {
    for (const auto& [key, _] : j.items()) {
      bool known = false;
      for (auto k : kKeys) known = known || key == k;
      if (!known) warnings->push_back("ignored unknown sidecar key '" + key + "'");
    }
  }
  return meta;
}

inline std::string serialize_metadata_sidecar(const EnvironmentalMetadata& meta) {
  nlohmann::ordered_json j;
  j["temperature_celsius"] = meta.temperature_celsius;
  j["circadian"] = to_string(meta.circadian);
  j["face_orientation"] = to_string(meta.face_orientation);
  return j.dump() + "\n";
}

}  // namespace mfa
