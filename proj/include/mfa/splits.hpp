// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mfa/dataset.hpp"
#include "mfa/error.hpp"
#include "mfa/random.hpp"

namespace mfa {

struct SplitFractions {
  double train = 0.60;
  double gallery = 0.25;
  double query = 0.15;

  void validate() const {
    for (double f : {train, gallery, query})
      if (!std::isfinite(f) || f < 0.0) throw ConfigError("split fractions must be finite and non-negative");
    if (std::abs(train + gallery + query - 1.0) > 1e-9)
      throw ConfigError("split fractions must sum to 1 (got " + std::to_string(train + gallery + query) + ")");
    if (gallery <= 0.0) throw ConfigError("gallery fraction must be positive");
  }
};

/// Partition of one species manifest into train / gallery / query.
/// Lists hold record indices into the source manifest, ascending.
struct SplitManifest {
  std::string species;
  SplitFractions fractions;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> gallery;
  std::vector<std::size_t> query;
};

struct SplitOptions {
  /// Reject eval-side identities with a single image instead of moving
  /// them to the train side.
  bool strict = false;
};

/// Identity-disjoint intra-species split.
///
/// Identities are shuffled and greedily assigned to the train side until its
/// image count is as close as possible to `fractions.train`; the rest form
/// the eval side, whose images are divided per identity between gallery and
/// query in the gallery:query ratio, with at least one of each.
inline SplitManifest make_intra_splits(const DatasetManifest& manifest, const SplitFractions& fractions = {},
                                       std::uint64_t seed = 0, const SplitOptions& opts = {}) {
  fractions.validate();
  if (manifest.empty()) throw InvalidInputError("cannot split an empty manifest");

  std::map<std::int64_t, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < manifest.size(); ++i) by_id[manifest.records()[i].identity].push_back(i);

  std::vector<std::int64_t> ids;
  for (const auto& [id, _] : by_id) ids.push_back(id);
  Rng rng = Rng::derived(seed, "split/identities/" + manifest.species());
  rng.shuffle(ids);

  const double target = fractions.train * static_cast<double>(manifest.size());
  std::vector<std::int64_t> train_ids;
  std::vector<std::int64_t> eval_ids;
  double train_count = 0.0;
  for (auto id : ids) {
    const double n = static_cast<double>(by_id[id].size());
    if (std::abs(train_count + n - target) < std::abs(train_count - target)) {
      train_ids.push_back(id);
      train_count += n;
    } else {
      eval_ids.push_back(id);
    }
  }
  if (eval_ids.empty()) {
    eval_ids.push_back(train_ids.back());
    train_ids.pop_back();
  }

  // Eval identities need one gallery and one query image.
  std::vector<std::int64_t> kept_eval;
  std::vector<std::int64_t> singletons;
  for (auto id : eval_ids) {
    if (by_id[id].size() >= 2) {
      kept_eval.push_back(id);
    } else {
      singletons.push_back(id);
    }
  }
  if (!singletons.empty() && opts.strict) {
    throw InvalidInputError("identity " + std::to_string(singletons.front()) +
                            " has a single image and cannot be split into gallery and query");
  }

  SplitManifest split;
  split.species = manifest.species();
  split.fractions = fractions;
  split.seed = seed;
  for (auto id : train_ids)
    for (auto i : by_id[id]) split.train.push_back(i);
  for (auto id : singletons) {
    // Without a train side the lone image can still serve as a gallery distractor.
    auto& dest = fractions.train > 0.0 ? split.train : split.gallery;
    for (auto i : by_id[id]) dest.push_back(i);
  }

  const double query_share = fractions.query / (fractions.gallery + fractions.query);
  for (auto id : kept_eval) {
    auto members = by_id[id];
    Rng member_rng = Rng::derived(seed, "split/members/" + manifest.species() + "/" + std::to_string(id));
    member_rng.shuffle(members);
    const auto n = static_cast<long>(members.size());
    long n_query = std::lround(static_cast<double>(n) * query_share);
    n_query = std::clamp(n_query, fractions.query > 0.0 ? 1L : 0L, n - 1);
    for (long k = 0; k < n; ++k) {
      (k < n_query ? split.query : split.gallery).push_back(members[static_cast<std::size_t>(k)]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.gallery.begin(), split.gallery.end());
  std::sort(split.query.begin(), split.query.end());
  return split;
}

/// Checks the partition and query-coverage invariants; throws on violation.
inline void check_split(const DatasetManifest& manifest, const SplitManifest& split) {
  std::vector<int> seen(manifest.size(), 0);
  for (const auto* list : {&split.train, &split.gallery, &split.query}) {
    for (auto i : *list) {
      if (i >= manifest.size()) throw InvalidInputError("split references record outside manifest");
      if (++seen[i] > 1) throw InvalidInputError("record " + manifest.records()[i].name() + " in two splits");
    }
  }
  std::set<std::int64_t> gallery_ids;
  for (auto i : split.gallery) gallery_ids.insert(manifest.records()[i].identity);
  for (auto i : split.query) {
    if (!gallery_ids.contains(manifest.records()[i].identity))
      throw InvalidInputError("query identity " + std::to_string(manifest.records()[i].identity) +
                              " has no gallery image");
  }
}

inline std::string serialize_split(const DatasetManifest& manifest, const SplitManifest& split) {
  nlohmann::ordered_json j;
  j["species"] = split.species;
  j["fractions"] = {split.fractions.train, split.fractions.gallery, split.fractions.query};
  j["seed"] = split.seed;
  for (auto [key, list] : {std::pair{"train", &split.train}, std::pair{"gallery", &split.gallery},
                           std::pair{"query", &split.query}}) {
    auto arr = nlohmann::ordered_json::array();
    for (auto i : *list) arr.push_back(manifest.records()[i].name());
    j[key] = std::move(arr);
  }
  return j.dump(2) + "\n";
}

/// Loads an externally provided or previously written split file and
/// resolves its record names against `manifest`.
inline SplitManifest parse_split(std::string_view document, const DatasetManifest& manifest) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("<document>", std::string("malformed split (") + e.what() + ")");
  }
  for (const char* key : {"fractions", "seed", "train", "gallery", "query"})
    if (!j.contains(key)) throw SchemaError(key);
  SplitManifest split;
  split.species = j.value("species", manifest.species());
  const auto& f = j["fractions"];
  if (!f.is_array() || f.size() != 3) throw SchemaError("fractions", "expected three numbers for");
  split.fractions = {f[0].get<double>(), f[1].get<double>(), f[2].get<double>()};
  split.seed = j["seed"].get<std::uint64_t>();
  for (auto [key, list] : {std::pair{"train", &split.train}, std::pair{"gallery", &split.gallery},
                           std::pair{"query", &split.query}}) {
    for (const auto& name : j[key]) list->push_back(manifest.find(name.get<std::string>()));
    std::sort(list->begin(), list->end());
  }
  check_split(manifest, split);
  return split;
}

/// Subset of a manifest keeping the given record indices, in order.
inline DatasetManifest subset(const DatasetManifest& manifest, const std::vector<std::size_t>& indices) {
  std::vector<ImageRecord> records;
  records.reserve(indices.size());
  for (auto i : indices) records.push_back(manifest.records().at(i));
  return DatasetManifest(manifest.species(), std::move(records));
}

/// Leave-one-domain-out split: train on every other species, evaluate on
/// the held-out target.
struct LodoSplit {
  std::string target_species;
  std::vector<DatasetManifest> train_manifests;
  DatasetManifest target_manifest;
  SplitManifest eval_split;
};

/// Each non-target species contributes the train side of its own intra
/// split; the target contributes only its gallery/query sides.
inline LodoSplit make_loo_splits(const std::vector<DatasetManifest>& manifests, const std::string& target,
                                 const SplitFractions& fractions = {}, std::uint64_t seed = 0,
                                 const SplitOptions& opts = {}) {
  const auto it = std::find_if(manifests.begin(), manifests.end(),
                               [&](const DatasetManifest& m) { return m.species() == target; });
  if (it == manifests.end()) throw InvalidInputError("unknown target species '" + target + "'");
  if (manifests.size() < 2) throw InvalidInputError("leave-one-domain-out needs at least two species");

  LodoSplit out;
  out.target_species = target;
  for (const auto& m : manifests) {
    auto split = make_intra_splits(m, fractions, seed, opts);
    if (m.species() == target) {
      out.target_manifest = m;
      split.train.clear();
      out.eval_split = std::move(split);
    } else {
      out.train_manifests.push_back(subset(m, split.train));
    }
  }
  return out;
}

}  // namespace mfa
