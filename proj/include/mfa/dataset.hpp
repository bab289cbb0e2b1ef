// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>
#include <string>
#include <string_view>
#include <vector>

#include "mfa/error.hpp"
#include "mfa/io.hpp"
#include "mfa/metadata.hpp"

namespace mfa {

/// The six MetaWild species, as lowercase ASCII keys.
inline const std::vector<std::string>& metawild_species() {
  static const std::vector<std::string> kSpecies = {"deer", "hare", "penguin", "pukeko", "stoat", "wallaby"};
  return kSpecies;
}

inline std::string display_name(std::string_view species) {
  static const std::map<std::string, std::string, std::less<>> kNames = {
      {"deer", "Deer"},     {"hare", "Hare"},   {"penguin", "Penguin"},
      {"pukeko", "Pūkeko"}, {"stoat", "Stoat"}, {"wallaby", "Wallaby"}};
  auto it = kNames.find(species);
  return it != kNames.end() ? it->second : std::string(species);
}

struct ImageName {
  std::int64_t identity = 0;
  std::string camera_id;
  std::int64_t index = 0;

  friend bool operator==(const ImageName&, const ImageName&) = default;
};

namespace detail {
inline bool parse_nonneg(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && out >= 0;
}
}  // namespace detail

/// Parses `<identity>_<camera>_<index>`. The camera segment is everything
/// between the first and last underscore.
inline ImageName parse_image_name(std::string_view name) {
  const auto first = name.find('_');
  const auto last = name.rfind('_');
  if (first == std::string_view::npos || first == last) {
    throw ParseError(std::string(name), "image name '" + std::string(name) +
                                            "' needs the form <id>_<camera>_<count>");
  }
  const auto id_part = name.substr(0, first);
  const auto cam_part = name.substr(first + 1, last - first - 1);
  const auto idx_part = name.substr(last + 1);
  ImageName out;
  if (!detail::parse_nonneg(id_part, out.identity))
    throw ParseError(std::string(id_part), "identity segment '" + std::string(id_part) + "' is not an integer");
  if (!detail::parse_nonneg(idx_part, out.index))
    throw ParseError(std::string(idx_part), "index segment '" + std::string(idx_part) + "' is not an integer");
  if (cam_part.empty()) throw ParseError(std::string(cam_part), "empty camera segment");
  out.camera_id = std::string(cam_part);
  return out;
}

inline std::string format_image_name(const ImageName& n) {
  return std::to_string(n.identity) + "_" + n.camera_id + "_" + std::to_string(n.index);
}

struct ImageRecord {
  std::int64_t identity = 0;
  std::string camera_id;
  std::int64_t index = 0;
  fs::path image_path;
  fs::path sidecar_path;
  EnvironmentalMetadata metadata;
  std::string species;

  std::string name() const { return format_image_name({identity, camera_id, index}); }
};

/// Records of one species, in lexicographic filename order.
class DatasetManifest {
 public:
  DatasetManifest() = default;
  DatasetManifest(std::string species, std::vector<ImageRecord> records)
      : species_(std::move(species)), records_(std::move(records)) {
    std::set<std::tuple<std::int64_t, std::string, std::int64_t>> seen;
    std::set<std::int64_t> ids;
    for (const auto& r : records_) {
      if (!seen.emplace(r.identity, r.camera_id, r.index).second)
        throw InvalidInputError("duplicate record " + r.name());
      ids.insert(r.identity);
      by_name_.emplace(r.name(), by_name_.size());
    }
    identity_count_ = ids.size();
  }

  const std::string& species() const noexcept { return species_; }
  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t identity_count() const noexcept { return identity_count_; }

  /// Index of a record by its structured name.
  std::size_t find(std::string_view name) const {
    auto it = by_name_.find(std::string(name));
    if (it != by_name_.end()) return it->second;
    throw InvalidInputError("record '" + std::string(name) + "' not in manifest for " + species_);
  }

 private:
  std::string species_;
  std::vector<ImageRecord> records_;
  std::size_t identity_count_ = 0;
  std::unordered_map<std::string, std::size_t> by_name_;
};

inline bool is_image_extension(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".feat" || ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

struct LoadOptions {
  TemperatureRange range;
  std::vector<std::string>* warnings = nullptr;
};

/// Scans one species directory for image/sidecar pairs.
///
/// Sidecars are `<stem>.json` next to the image. JSON files whose stem is
/// not a structured image name (split files, configs) are ignored.
inline DatasetManifest load_manifest(const fs::path& root, std::string species, const LoadOptions& opts = {}) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::map<std::string, fs::path> images;
  std::map<std::string, fs::path> sidecars;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto& p = entry.path();
    const auto stem = p.stem().string();
    if (p.extension() == ".json") {
      try {
        parse_image_name(stem);
      } catch (const ParseError&) {
        continue;
      }
      sidecars.emplace(stem, p);
    } else if (is_image_extension(p)) {
      images.emplace(stem, p);
    }
  }

  std::vector<std::string> orphans;
  for (const auto& [stem, path] : images)
    if (!sidecars.contains(stem)) orphans.push_back(path.filename().string());
  for (const auto& [stem, path] : sidecars)
    if (!images.contains(stem)) orphans.push_back(path.filename().string());
  if (!orphans.empty()) throw PairingError(std::move(orphans));

  // Lexicographic by image filename.
  std::vector<fs::path> ordered;
  ordered.reserve(images.size());
  for (const auto& [_, path] : images) ordered.push_back(path);
  std::sort(ordered.begin(), ordered.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

  std::vector<ImageRecord> records;
  records.reserve(ordered.size());
  for (const auto& path : ordered) {
    const auto stem = path.stem().string();
    const auto parsed = parse_image_name(stem);
    ImageRecord r;
    r.identity = parsed.identity;
    r.camera_id = parsed.camera_id;
    r.index = parsed.index;
    r.image_path = path;
    r.sidecar_path = sidecars.at(stem);
    r.metadata = parse_metadata_sidecar(read_file(r.sidecar_path), opts.range, opts.warnings);
    r.species = species;
    records.push_back(std::move(r));
  }
  return DatasetManifest(std::move(species), std::move(records));
}

// Manifest file: tab-separated, one header line, one record per line.

inline constexpr std::string_view kManifestHeader =
    "image_path\tidentity\tcamera_id\tindex\tspecies\tsidecar_path";

inline std::string serialize_manifest(const DatasetManifest& m) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& r : m.records()) {
    out += r.image_path.generic_string() + '\t' + std::to_string(r.identity) + '\t' + r.camera_id + '\t' +
           std::to_string(r.index) + '\t' + r.species + '\t' + r.sidecar_path.generic_string() + '\n';
  }
  return out;
}

/// Reads a manifest file; sidecars are parsed from the listed paths.
inline DatasetManifest parse_manifest_file(std::string_view text, const LoadOptions& opts = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw SchemaError("<header>", "bad manifest");
  std::vector<ImageRecord> records;
  std::string species;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find('\t', start)) != std::string::npos; start = pos + 1)
      f.push_back(line.substr(start, pos - start));
    f.push_back(line.substr(start));
    if (f.size() != 6) throw SchemaError("<row>", "expected 6 fields in manifest");
    ImageRecord r;
    r.image_path = f[0];
    if (!detail::parse_nonneg(f[1], r.identity)) throw SchemaError("identity", "bad integer");
    r.camera_id = f[2];
    if (!detail::parse_nonneg(f[3], r.index)) throw SchemaError("index", "bad integer");
    r.species = f[4];
    r.sidecar_path = f[5];
    r.metadata = parse_metadata_sidecar(read_file(r.sidecar_path), opts.range, opts.warnings);
    if (species.empty()) species = r.species;
    if (r.species != species) throw InvalidInputError("manifest mixes species");
    records.push_back(std::move(r));
  }
  return DatasetManifest(std::move(species), std::move(records));
}

}  // namespace mfa
