// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "mfa/dataset.hpp"
#include "mfa/synthetic.hpp"
#include "mfa/validation.hpp"
#include "test_util.hpp"

namespace mfa {
namespace {

using testing::scratch_dir;
using testing::source_path;

void write_pair(const fs::path& dir, const std::string& stem, double temp = 10.0) {
  write_file_atomic(dir / (stem + ".feat"), encode_feature_file(Vector::Ones(4)));
  write_file_atomic(dir / (stem + ".json"),
                    serialize_metadata_sidecar({temp, Circadian::kNight, FaceOrientation::kRight}));
}

TEST(ImageName, ParsesStructuredNames) {
  const auto n = parse_image_name("11_CT-GIG-03_27");
  EXPECT_EQ(n.identity, 11);
  EXPECT_EQ(n.camera_id, "CT-GIG-03");
  EXPECT_EQ(n.index, 27);
  EXPECT_EQ(format_image_name(n), "11_CT-GIG-03_27");
  EXPECT_EQ(parse_image_name("0_A_0"), (ImageName{0, "A", 0}));
  EXPECT_EQ(parse_image_name("3_cam_a_b_9").camera_id, "cam_a_b");
}

TEST(ImageName, RejectsMalformed) {
  for (const char* bad : {"deer_cam", "x_CT_1", "1_CT_y", "1__2", "-1_CT_2", "1_CT_", "", "12"}) {
    EXPECT_THROW(parse_image_name(bad), ParseError) << bad;
  }
}

TEST(ImageName, RandomRoundTrip) {
  Rng rng(5);
  const std::string alphabet = "ABCXYZ-_0123";
  for (int i = 0; i < 500; ++i) {
    ImageName n{static_cast<std::int64_t>(rng.below(100000)), "", static_cast<std::int64_t>(rng.below(1000))};
    const std::size_t len = 1 + rng.below(10);
    for (std::size_t k = 0; k < len; ++k) n.camera_id += alphabet[rng.below(alphabet.size())];
    EXPECT_EQ(parse_image_name(format_image_name(n)), n) << format_image_name(n);
  }
}

TEST(LoadManifest, ThreePairs) {
  const auto dir = scratch_dir("three_pairs");
  write_pair(dir, "2_CT-A-01_0");
  write_pair(dir, "1_CT-A-01_1");
  write_pair(dir, "1_CT-A-01_0");
  write_file_atomic(dir / "split.json", "{}");
  const auto m = load_manifest(dir, "deer");
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.identity_count(), 2u);
  EXPECT_EQ(m.records()[0].name(), "1_CT-A-01_0");
  EXPECT_EQ(m.records()[2].name(), "2_CT-A-01_0");
  EXPECT_EQ(m.records()[0].metadata.face_orientation, FaceOrientation::kRight);
  EXPECT_EQ(m.find("2_CT-A-01_0"), 2u);
}

TEST(LoadManifest, EmptyDirectory) {
  const auto m = load_manifest(scratch_dir("empty"), "hare");
  EXPECT_TRUE(m.empty());
  EXPECT_EQ(m.identity_count(), 0u);
}

TEST(LoadManifest, OrphanImageNamed) {
  const auto dir = scratch_dir("orphan");
  write_pair(dir, "1_A_0");
  write_file_atomic(dir / "1_A_1.jpg", "jpeg");
  try {
    load_manifest(dir, "deer");
    FAIL() << "expected a pairing error";
  } catch (const PairingError& e) {
    ASSERT_EQ(e.orphans().size(), 1u);
    EXPECT_EQ(e.orphans()[0], "1_A_1.jpg");
  }
}

TEST(LoadManifest, BadSidecarPropagates) {
  const auto dir = scratch_dir("bad_sidecar");
  write_pair(dir, "1_A_0", 99.0);
  EXPECT_THROW(load_manifest(dir, "deer"), RangeError);
}

TEST(ManifestFile, RoundTrip) {
  const auto dir = scratch_dir("manifest_file");
  SyntheticConfig cfg;
  cfg.identities = 3;
  cfg.images_per_identity = 4;
  const auto ds = generate_synthetic(cfg);
  const auto written = write_dataset(ds.manifest, ds.features, dir);
  const auto text = read_file(dir / "manifest.tsv");
  const auto back = parse_manifest_file(text);
  ASSERT_EQ(back.size(), written.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.records()[i].name(), written.records()[i].name());
    EXPECT_EQ(back.records()[i].metadata, written.records()[i].metadata);
  }
  EXPECT_EQ(serialize_manifest(back), text);
  const auto scanned = load_manifest(dir, "synthetic");
  EXPECT_EQ(serialize_manifest(scanned), text);
}

TEST(ManifestFile, RejectsDuplicates) {
  ImageRecord r;
  r.identity = 1;
  r.camera_id = "A";
  EXPECT_THROW(DatasetManifest("deer", {r, r}), InvalidInputError);
}

TEST(Synthetic, Deterministic) {
  SyntheticConfig cfg;
  cfg.seed = 3;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  EXPECT_EQ(serialize_manifest(a.manifest), serialize_manifest(b.manifest));
  for (std::size_t i = 0; i < a.features.size(); ++i) EXPECT_EQ(encode_feature_file(a.features[i]), encode_feature_file(b.features[i]));
  EXPECT_EQ(a.manifest.size(), 800u);
  EXPECT_EQ(a.manifest.identity_count(), 20u);
}

TEST(Synthetic, FullCorrelationFixesMetadataPerIdentity) {
  SyntheticConfig cfg;
  cfg.metadata_identity_correlation = 1.0;
  const auto ds = generate_synthetic(cfg);
  std::map<std::int64_t, std::tuple<TemperatureBand, FaceOrientation, Circadian>> profile;
  for (const auto& r : ds.manifest.records()) {
    const auto key = std::tuple{bucket_temperature(r.metadata.temperature_celsius), r.metadata.face_orientation,
                                r.metadata.circadian};
    const auto [it, fresh] = profile.emplace(r.identity, key);
    EXPECT_TRUE(fresh || it->second == key) << r.name();
  }
}

// Pearson chi-square against uniform; 99.9% critical values.
TEST(Synthetic, ZeroCorrelationIsUniform) {
  SyntheticConfig cfg;
  cfg.metadata_identity_correlation = 0.0;
  cfg.identities = 50;
  cfg.images_per_identity = 200;
  const auto ds = generate_synthetic(cfg);
  std::array<double, 6> bands{};
  std::array<double, 4> faces{};
  std::array<double, 2> circ{};
  std::map<std::pair<std::int64_t, int>, double> joint;
  for (const auto& r : ds.manifest.records()) {
    bands[static_cast<std::size_t>(bucket_temperature(r.metadata.temperature_celsius))] += 1;
    faces[static_cast<std::size_t>(r.metadata.face_orientation)] += 1;
    circ[static_cast<std::size_t>(r.metadata.circadian)] += 1;
    joint[{r.identity, static_cast<int>(r.metadata.face_orientation)}] += 1;
  }
  auto chi2 = [](const auto& counts) {
    double n = 0;
    for (double c : counts) n += c;
    const double e = n / static_cast<double>(counts.size());
    double s = 0;
    for (double c : counts) s += (c - e) * (c - e) / e;
    return s;
  };
  EXPECT_LT(chi2(bands), 20.52);  // dof 5
  EXPECT_LT(chi2(faces), 16.27);  // dof 3
  EXPECT_LT(chi2(circ), 10.83);   // dof 1
  // Independence of identity and orientation: 50 x 4 table, dof 147.
  double stat = 0;
  for (std::int64_t id = 0; id < 50; ++id)
    for (int f = 0; f < 4; ++f) {
      const double e = 200.0 * faces[static_cast<std::size_t>(f)] / 10000.0;
      const double o = joint.count({id, f}) ? joint[{id, f}] : 0.0;
      stat += (o - e) * (o - e) / e;
    }
  EXPECT_LT(stat, 204.0);
}

TEST(Synthetic, FeatureFileRejectsCorruption) {
  const auto bytes = encode_feature_file(Vector::LinSpaced(5, 0.0, 1.0));
  EXPECT_EQ(decode_feature_file(bytes), Vector::LinSpaced(5, 0.0, 1.0).cast<float>().cast<double>());
  EXPECT_THROW(decode_feature_file(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(decode_feature_file("JUNKJUNKJUNK"), Error);
}

class SpeciesCounts : public ::testing::Test {
 protected:
  void SetUp() override {
    layout_ = parse_corpus_layout(read_file(source_path("data/metawild_layout.json")));
    table_ = parse_expected_table(read_file(source_path("data/species_counts.json")));
  }
  CorpusLayout layout_;
  ExpectedTable table_;
};

TEST_F(SpeciesCounts, EverySpeciesReproducesEveryCell) {
  ASSERT_EQ(table_.size(), 6u);
  for (const auto& species : metawild_species()) {
    const auto ex = expand_layout(layout_, species);
    const auto report = validate_dataset(ex.manifest, ex.split, table_);
    EXPECT_TRUE(report.passed()) << report.to_text();
    EXPECT_EQ(report.rows.size(), 4u);
  }
  EXPECT_EQ(table_.at("stoat").total, (SplitCounts{6733, 253}));
  EXPECT_EQ(table_.at("deer").total, (SplitCounts{2433, 38}));
  EXPECT_EQ(table_.at("deer").train, (SplitCounts{1631, 21}));
  EXPECT_EQ(table_.at("deer").gallery, (SplitCounts{586, 17}));
  EXPECT_EQ(table_.at("deer").query, (SplitCounts{216, 17}));
}

TEST_F(SpeciesCounts, TamperedManifestFailsNamingTheSplit) {
  const auto ex = expand_layout(layout_, "deer");
  auto records = ex.manifest.records();
  const std::size_t drop = ex.split.query.front();
  records.erase(records.begin() + static_cast<std::ptrdiff_t>(drop));
  const DatasetManifest tampered("deer", records);
  SplitManifest split = ex.split;
  auto shift = [&](std::vector<std::size_t>& v) {
    std::vector<std::size_t> out;
    for (auto i : v)
      if (i != drop) out.push_back(i > drop ? i - 1 : i);
    v = out;
  };
  shift(split.train);
  shift(split.gallery);
  shift(split.query);
  const auto report = validate_dataset(tampered, split, table_);
  EXPECT_FALSE(report.passed());
  std::vector<std::string> failed;
  for (const auto& r : report.rows)
    if (!r.pass) failed.push_back(r.split);
  EXPECT_EQ(failed, (std::vector<std::string>{"query", "total"}));
}

TEST_F(SpeciesCounts, UnknownSpeciesFails) {
  const DatasetManifest m("cat", {});
  EXPECT_FALSE(validate_dataset(m, std::nullopt, table_).passed());
}

TEST(Species, DisplayNames) {
  EXPECT_EQ(metawild_species().size(), 6u);
  EXPECT_EQ(display_name("pukeko"), "Pūkeko");
  EXPECT_EQ(display_name("deer"), "Deer");
}

}  // namespace
}  // namespace mfa
