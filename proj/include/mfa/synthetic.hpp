// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mfa/dataset.hpp"
#include "mfa/io.hpp"
#include "mfa/random.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

struct SyntheticConfig {
  std::size_t identities = 20;
  std::size_t images_per_identity = 40;
  std::size_t feature_dim = 32;
  double metadata_identity_correlation = 0.9;
  double noise_scale = 1.0;
  std::uint64_t seed = 0;
  std::string species = "synthetic";
  std::size_t cameras = 4;

  void validate() const {
    if (identities < 1 || images_per_identity < 1 || feature_dim < 1 || cameras < 1)
      throw ConfigError("synthetic config: counts must be >= 1");
    if (!(metadata_identity_correlation >= 0.0 && metadata_identity_correlation <= 1.0))
      throw ConfigError("synthetic config: correlation must lie in [0, 1]");
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
      throw ConfigError("synthetic config: noise_scale must be >= 0");
    if (species.empty()) throw ConfigError("synthetic config: species must be non-empty");
  }
};

/// Raw per-record features, aligned with the manifest's record order.
using FeatureStore = std::vector<Vector>;

struct SyntheticDataset {
  DatasetManifest manifest;
  FeatureStore features;
};

namespace detail {

// Outer bands are open-ended; synthetic temperatures stay within this range.
inline std::pair<double, double> synthetic_band_range(TemperatureBand band, const ThresholdTable& table) {
  auto [lo, hi] = table.interval(band);
  if (!std::isfinite(lo)) lo = hi - 10.0;
  if (!std::isfinite(hi)) hi = lo + 7.0;
  return {lo, hi};
}

inline double sample_temperature(Rng& rng, TemperatureBand band, const ThresholdTable& table) {
  const auto [lo, hi] = synthetic_band_range(band, table);
  double t = std::floor(rng.uniform(lo, hi) * 10.0) / 10.0;
  return std::max(t, lo);
}

}  // namespace detail

/// Identity-structured synthetic corpus.
///
/// Every identity has a latent appearance vector and a preferred
/// (temperature band, orientation, circadian) profile. A record's raw
/// feature is appearance plus Gaussian noise. With probability equal to the
/// correlation its metadata is the identity's profile, otherwise each field
/// is drawn uniformly.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg, const ThresholdTable& table = {}) {
  cfg.validate();
  Rng appearance_rng = Rng::derived(cfg.seed, "synthetic/appearance");
  Rng profile_rng = Rng::derived(cfg.seed, "synthetic/profile");
  Rng image_rng = Rng::derived(cfg.seed, "synthetic/images");

  struct Profile {
    EnvironmentalMetadata meta;
  };
  const auto d = static_cast<Eigen::Index>(cfg.feature_dim);
  std::vector<Vector> appearance(cfg.identities, Vector(d));
  std::vector<Profile> profiles(cfg.identities);
  for (std::size_t id = 0; id < cfg.identities; ++id) {
    for (Eigen::Index k = 0; k < d; ++k) appearance[id](k) = appearance_rng.normal();
    const auto band = kAllBands[profile_rng.below(kAllBands.size())];
    profiles[id].meta.temperature_celsius = detail::sample_temperature(profile_rng, band, table);
    profiles[id].meta.face_orientation = kAllOrientations[profile_rng.below(kAllOrientations.size())];
    profiles[id].meta.circadian = kAllCircadian[profile_rng.below(kAllCircadian.size())];
  }

  std::vector<ImageRecord> records;
  FeatureStore features;
  records.reserve(cfg.identities * cfg.images_per_identity);
  for (std::size_t id = 0; id < cfg.identities; ++id) {
    for (std::size_t k = 0; k < cfg.images_per_identity; ++k) {
      ImageRecord r;
      r.identity = static_cast<std::int64_t>(id);
      r.camera_id = "CAM-" + std::to_string(image_rng.below(cfg.cameras));
      r.index = static_cast<std::int64_t>(k);
      r.species = cfg.species;
      if (image_rng.bernoulli(cfg.metadata_identity_correlation)) {
        r.metadata = profiles[id].meta;
      } else {
        const auto band = kAllBands[image_rng.below(kAllBands.size())];
        r.metadata.temperature_celsius = detail::sample_temperature(image_rng, band, table);
        r.metadata.face_orientation = kAllOrientations[image_rng.below(kAllOrientations.size())];
        r.metadata.circadian = kAllCircadian[image_rng.below(kAllCircadian.size())];
      }
      Vector f(d);
      for (Eigen::Index j = 0; j < d; ++j) f(j) = appearance[id](j) + cfg.noise_scale * image_rng.normal();
      r.image_path = r.name() + ".feat";
      r.sidecar_path = r.name() + ".json";
      records.push_back(std::move(r));
      features.push_back(std::move(f));
    }
  }

  // Manifest order is lexicographic by filename; permute features to match.
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return records[a].image_path.string() < records[b].image_path.string();
  });
  std::vector<ImageRecord> sorted_records;
  FeatureStore sorted_features;
  for (auto i : order) {
    sorted_records.push_back(records[i]);
    sorted_features.push_back(features[i]);
  }
  return {DatasetManifest(cfg.species, std::move(sorted_records)), std::move(sorted_features)};
}

// Feature container: "MFAF", u32 version, u32 dim, dim float32 values (LE).

inline std::string encode_feature_file(const Vector& f) {
  std::string out = "MFAF";
  append_u32_le(out, 1);
  append_u32_le(out, static_cast<std::uint32_t>(f.size()));
  for (Eigen::Index i = 0; i < f.size(); ++i) append_f32_le(out, f(i));
  return out;
}

inline Vector decode_feature_file(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "MFAF") throw InvalidInputError("not a feature file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (read_u32_le(p + 4) != 1) throw InvalidInputError("unsupported feature file version");
  const std::uint32_t dim = read_u32_le(p + 8);
  if (dim == 0 || bytes.size() != 12 + 4 * static_cast<std::size_t>(dim))
    throw InvalidInputError("feature file truncated or oversized");
  Vector f(dim);
  for (std::uint32_t i = 0; i < dim; ++i) {
    f(i) = read_f32_le(p + 12 + 4 * i);
    if (!std::isfinite(f(i))) throw InvalidInputError("feature file holds non-finite values");
  }
  return f;
}

/// Features for an existing manifest: one appearance vector per identity
/// plus per-image Gaussian noise, keyed by record name.
inline FeatureStore synthesize_features(const DatasetManifest& manifest, std::size_t dim, double noise,
                                        std::uint64_t seed) {
  if (dim < 1) throw ConfigError("feature dimension must be >= 1");
  std::map<std::int64_t, Vector> appearance;
  FeatureStore out;
  out.reserve(manifest.size());
  for (const auto& r : manifest.records()) {
    auto it = appearance.find(r.identity);
    if (it == appearance.end()) {
      Rng rng = Rng::derived(seed, manifest.species() + "/identity/" + std::to_string(r.identity));
      Vector a(static_cast<Eigen::Index>(dim));
      for (auto& v : a) v = rng.normal();
      it = appearance.emplace(r.identity, std::move(a)).first;
    }
    Rng rng = Rng::derived(seed, manifest.species() + "/image/" + r.name());
    Vector f = it->second;
    for (auto& v : f) v += noise * rng.normal();
    out.push_back(std::move(f));
  }
  return out;
}

/// Writes `<root>/<name>.feat` + `<root>/<name>.json` for every record and
/// returns the manifest rebased onto the written paths.
inline DatasetManifest write_dataset(const DatasetManifest& manifest, const FeatureStore& features,
                                     const fs::path& root) {
  if (features.size() != manifest.size()) throw InvalidInputError("feature store does not match manifest");
  fs::create_directories(root);
  std::vector<ImageRecord> records;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    ImageRecord r = manifest.records()[i];
    r.image_path = root / (r.name() + ".feat");
    r.sidecar_path = root / (r.name() + ".json");
    write_file_atomic(r.image_path, encode_feature_file(features[i]));
    write_file_atomic(r.sidecar_path, serialize_metadata_sidecar(r.metadata));
    records.push_back(std::move(r));
  }
  DatasetManifest out(manifest.species(), std::move(records));
  write_file_atomic(root / "manifest.tsv", serialize_manifest(out));
  return out;
}

}  // namespace mfa
