// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "mfa/splits.hpp"
#include "mfa/synthetic.hpp"
#include "mfa/validation.hpp"
#include "test_util.hpp"

namespace mfa {
namespace {

/// Random manifest: `ids` identities with 2..max_per images each.
DatasetManifest random_manifest(Rng& rng, std::size_t ids, std::size_t max_per, const std::string& species = "deer") {
  std::vector<ImageRecord> records;
  for (std::size_t id = 0; id < ids; ++id) {
    const std::size_t n = 2 + rng.below(max_per - 1);
    for (std::size_t k = 0; k < n; ++k) {
      ImageRecord r;
      r.identity = static_cast<std::int64_t>(id);
      r.camera_id = "C" + std::to_string(rng.below(3));
      r.index = static_cast<std::int64_t>(k);
      r.species = species;
      records.push_back(r);
    }
  }
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.name() < b.name(); });
  return DatasetManifest(species, std::move(records));
}

void expect_partition(const DatasetManifest& m, const SplitManifest& s) {
  std::vector<std::size_t> all;
  for (const auto* l : {&s.train, &s.gallery, &s.query}) all.insert(all.end(), l->begin(), l->end());
  std::sort(all.begin(), all.end());
  ASSERT_EQ(all.size(), m.size());
  for (std::size_t i = 0; i < all.size(); ++i) ASSERT_EQ(all[i], i);
  std::set<std::int64_t> train_ids, eval_ids, gallery_ids;
  for (auto i : s.train) train_ids.insert(m.records()[i].identity);
  for (auto i : s.gallery) {
    eval_ids.insert(m.records()[i].identity);
    gallery_ids.insert(m.records()[i].identity);
  }
  for (auto i : s.query) {
    eval_ids.insert(m.records()[i].identity);
    EXPECT_TRUE(gallery_ids.contains(m.records()[i].identity));
  }
  for (auto id : train_ids) EXPECT_FALSE(eval_ids.contains(id)) << "identity " << id << " on both sides";
  EXPECT_NO_THROW(check_split(m, s));
}

TEST(IntraSplit, HundredImagesTenIdentities) {
  std::vector<ImageRecord> records;
  for (int id = 0; id < 10; ++id)
    for (int k = 0; k < 10; ++k) {
      ImageRecord r;
      r.identity = id;
      r.camera_id = "A";
      r.index = k;
      records.push_back(r);
    }
  const DatasetManifest m("deer", records);
  const auto s = make_intra_splits(m, {}, 0);
  EXPECT_EQ(s.train.size() + s.gallery.size() + s.query.size(), 100u);
  expect_partition(m, s);
  EXPECT_EQ(s.train.size(), 60u);
  EXPECT_FALSE(s.query.empty());
}

TEST(IntraSplit, PartitionPropertyOverRandomManifests) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_manifest(rng, 2 + rng.below(30), 2 + rng.below(40));
    const auto s = make_intra_splits(m, {}, rng.next());
    expect_partition(m, s);
  }
}

TEST(IntraSplit, DeterministicPerSeed) {
  Rng rng(4);
  const auto m = random_manifest(rng, 25, 30);
  EXPECT_EQ(serialize_split(m, make_intra_splits(m, {}, 9)), serialize_split(m, make_intra_splits(m, {}, 9)));
  EXPECT_NE(serialize_split(m, make_intra_splits(m, {}, 9)), serialize_split(m, make_intra_splits(m, {}, 10)));
}

TEST(IntraSplit, RejectsBadFractions) {
  Rng rng(1);
  const auto m = random_manifest(rng, 5, 5);
  EXPECT_THROW(make_intra_splits(m, {0.5, 0.5, 0.1}, 0), ConfigError);
  EXPECT_THROW(make_intra_splits(m, {0.5, 0.0, 0.5}, 0), ConfigError);
  EXPECT_THROW(make_intra_splits(m, {-0.1, 0.6, 0.5}, 0), ConfigError);
  EXPECT_THROW(make_intra_splits(DatasetManifest("deer", {}), {}, 0), InvalidInputError);
}

TEST(IntraSplit, SingletonEvalIdentity) {
  std::vector<ImageRecord> records;
  for (int id = 0; id < 3; ++id) {
    ImageRecord r;
    r.identity = id;
    r.camera_id = "A";
    records.push_back(r);
  }
  const DatasetManifest m("deer", records);
  EXPECT_THROW(make_intra_splits(m, {}, 0, {true}), InvalidInputError);
  const auto s = make_intra_splits(m, {0.0, 0.85, 0.15}, 0);
  EXPECT_EQ(s.gallery.size(), 3u);
  EXPECT_TRUE(s.query.empty());
}

TEST(IntraSplit, DeerFixtureIsIdentityDisjoint) {
  const auto layout = parse_corpus_layout(read_file(testing::source_path("data/metawild_layout.json")));
  const auto ex = expand_layout(layout, "deer");
  const auto s = make_intra_splits(ex.manifest, {}, 0);
  expect_partition(ex.manifest, s);
  const double train_share = static_cast<double>(s.train.size()) / static_cast<double>(ex.manifest.size());
  EXPECT_NEAR(train_share, 0.60, 0.05);
}

TEST(SplitFile, RoundTripAndRejection) {
  Rng rng(8);
  const auto m = random_manifest(rng, 12, 10);
  const auto s = make_intra_splits(m, {}, 2);
  const auto text = serialize_split(m, s);
  const auto back = parse_split(text, m);
  EXPECT_EQ(back.train, s.train);
  EXPECT_EQ(back.gallery, s.gallery);
  EXPECT_EQ(back.query, s.query);
  EXPECT_EQ(serialize_split(m, back), text);

  auto j = nlohmann::json::parse(text);
  j["gallery"].push_back(j["train"][0]);
  EXPECT_THROW(parse_split(j.dump(), m), InvalidInputError);
  j = nlohmann::json::parse(text);
  j.erase("query");
  EXPECT_THROW(parse_split(j.dump(), m), SchemaError);
  j = nlohmann::json::parse(text);
  j["train"].push_back("999_NOPE_0");
  EXPECT_THROW(parse_split(j.dump(), m), InvalidInputError);
}

class Lodo : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(30);
    for (const auto& sp : metawild_species()) manifests_.push_back(random_manifest(rng, 8, 12, sp));
  }
  std::vector<DatasetManifest> manifests_;
};

TEST_F(Lodo, DeerTargetTrainsOnTheOtherFive) {
  const auto split = make_loo_splits(manifests_, "deer", {}, 0);
  std::vector<std::string> species;
  for (const auto& m : split.train_manifests) species.push_back(m.species());
  EXPECT_EQ(species, (std::vector<std::string>{"hare", "penguin", "pukeko", "stoat", "wallaby"}));
  EXPECT_TRUE(split.eval_split.train.empty());
  EXPECT_FALSE(split.eval_split.query.empty());
  EXPECT_NO_THROW(check_split(split.target_manifest, split.eval_split));
}

TEST_F(Lodo, TargetNeverInTraining) {
  for (const auto& target : metawild_species()) {
    const auto split = make_loo_splits(manifests_, target, {}, 3);
    for (const auto& m : split.train_manifests) {
      EXPECT_NE(m.species(), target);
      for (const auto& r : m.records()) EXPECT_NE(r.species, target);
    }
  }
}

TEST_F(Lodo, UnknownTarget) { EXPECT_THROW(make_loo_splits(manifests_, "cat"), InvalidInputError); }

}  // namespace
}  // namespace mfa
