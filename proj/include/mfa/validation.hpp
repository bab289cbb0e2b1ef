// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mfa/dataset.hpp"
#include "mfa/splits.hpp"

namespace mfa {

struct SplitCounts {
  std::size_t images = 0;
  std::size_t identities = 0;
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

/// Published per-split image and identity counts for one species.
struct ExpectedCounts {
  SplitCounts train, gallery, query, total;
};

/// Species key -> expected counts.
using ExpectedTable = std::map<std::string, ExpectedCounts>;

inline ExpectedTable parse_expected_table(std::string_view document) {
  const auto j = nlohmann::json::parse(document);
  ExpectedTable table;
  for (const auto& [species, row] : j.at("species").items()) {
    auto read = [&](const char* split) {
      if (!row.contains(split)) throw SchemaError(species + "." + split);
      return SplitCounts{row[split].at("images").get<std::size_t>(),
                         row[split].at("identities").get<std::size_t>()};
    };
    table[species] = {read("train"), read("gallery"), read("query"), read("total")};
  }
  return table;
}

struct ValidationRow {
  std::string species;
  std::string split;
  SplitCounts expected;
  SplitCounts actual;
  bool pass = false;
};

struct ValidationReport {
  std::vector<ValidationRow> rows;

  bool passed() const {
    if (rows.empty()) return false;
    for (const auto& r : rows)
      if (!r.pass) return false;
    return true;
  }

  std::string to_text() const {
    std::string out;
    for (const auto& r : rows) {
      out += (r.pass ? "PASS " : "FAIL ") + r.species + " " + r.split + ": images " +
             std::to_string(r.actual.images) + "/" + std::to_string(r.expected.images) + ", identities " +
             std::to_string(r.actual.identities) + "/" + std::to_string(r.expected.identities) + "\n";
    }
    return out;
  }

  nlohmann::ordered_json to_json() const {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      arr.push_back({{"species", r.species},
                     {"split", r.split},
                     {"expected_images", r.expected.images},
                     {"actual_images", r.actual.images},
                     {"expected_identities", r.expected.identities},
                     {"actual_identities", r.actual.identities},
                     {"pass", r.pass}});
    }
    return {{"passed", passed()}, {"rows", arr}};
  }
};

inline SplitCounts count_records(const DatasetManifest& m, const std::vector<std::size_t>& indices) {
  std::set<std::int64_t> ids;
  for (auto i : indices) ids.insert(m.records().at(i).identity);
  return {indices.size(), ids.size()};
}

inline SplitCounts count_records(const DatasetManifest& m) { return {m.size(), m.identity_count()}; }

/// Compares counts to the expected table. Discrepancies are report rows,
/// never errors. Without a split only the total row is checked.
inline ValidationReport validate_dataset(const DatasetManifest& manifest, const std::optional<SplitManifest>& split,
                                         const ExpectedTable& expected) {
  ValidationReport report;
  const auto it = expected.find(manifest.species());
  const ExpectedCounts want = it != expected.end() ? it->second : ExpectedCounts{};
  const bool known = it != expected.end();
  auto add = [&](const char* name, SplitCounts exp, SplitCounts act) {
    report.rows.push_back({manifest.species(), name, exp, act, known && exp == act});
  };
  if (split) {
    add("train", want.train, count_records(manifest, split->train));
    add("gallery", want.gallery, count_records(manifest, split->gallery));
    add("query", want.query, count_records(manifest, split->query));
  }
  add("total", want.total, count_records(manifest));
  return report;
}

/// A counts-only corpus description: for each species, the identities and
/// how many of their images fall in each split. Expanding it yields a
/// manifest plus split with no files on disk.
struct LayoutIdentity {
  std::int64_t identity = 0;
  std::string camera_id;
  std::size_t train = 0, gallery = 0, query = 0;
};

using CorpusLayout = std::map<std::string, std::vector<LayoutIdentity>>;

inline CorpusLayout parse_corpus_layout(std::string_view document) {
  const auto j = nlohmann::json::parse(document);
  CorpusLayout layout;
  for (const auto& [species, ids] : j.at("species").items()) {
    auto& out = layout[species];
    for (const auto& e : ids) {
      out.push_back({e.at("id").get<std::int64_t>(), e.at("camera").get<std::string>(),
                     e.value("train", std::size_t{0}), e.value("gallery", std::size_t{0}),
                     e.value("query", std::size_t{0})});
    }
  }
  return layout;
}

struct ExpandedSpecies {
  DatasetManifest manifest;
  SplitManifest split;
};

/// Builds records `<id>_<camera>_<k>` for k = 0.., assigning the first
/// `train` images to train, then gallery, then query. Metadata cycles
/// deterministically through the categorical values.
inline ExpandedSpecies expand_layout(const CorpusLayout& layout, const std::string& species) {
  const auto it = layout.find(species);
  if (it == layout.end()) throw InvalidInputError("species '" + species + "' not in layout");
  struct Pending {
    ImageRecord record;
    int role;
  };
  std::vector<Pending> pending;
  for (const auto& e : it->second) {
    const std::size_t n = e.train + e.gallery + e.query;
    for (std::size_t k = 0; k < n; ++k) {
      ImageRecord r;
      r.identity = e.identity;
      r.camera_id = e.camera_id;
      r.index = static_cast<std::int64_t>(k);
      r.species = species;
      r.image_path = r.name() + ".feat";
      r.sidecar_path = r.name() + ".json";
      r.metadata.temperature_celsius = -5.0 + static_cast<double>((k * 7) % 40);
      r.metadata.circadian = kAllCircadian[k % 2];
      r.metadata.face_orientation = kAllOrientations[(k / 2) % 4];
      const int role = k < e.train ? 0 : (k < e.train + e.gallery ? 1 : 2);
      pending.push_back({std::move(r), role});
    }
  }
  std::sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
    return a.record.image_path.string() < b.record.image_path.string();
  });
  std::vector<ImageRecord> records;
  ExpandedSpecies out;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    records.push_back(pending[i].record);
    auto& list = pending[i].role == 0 ? out.split.train : (pending[i].role == 1 ? out.split.gallery : out.split.query);
    list.push_back(i);
  }
  out.manifest = DatasetManifest(species, std::move(records));
  out.split.species = species;
  const double n = static_cast<double>(std::max<std::size_t>(pending.size(), 1));
  out.split.fractions = {static_cast<double>(out.split.train.size()) / n,
                         static_cast<double>(out.split.gallery.size()) / n,
                         static_cast<double>(out.split.query.size()) / n};
  return out;
}

}  // namespace mfa
