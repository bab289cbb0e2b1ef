// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "mfa/metadata.hpp"
#include "test_util.hpp"

namespace mfa {
namespace {

TEST(BucketTemperature, DefaultTable) {
  EXPECT_EQ(bucket_temperature(-3.0), TemperatureBand::kFreezing);
  EXPECT_EQ(bucket_temperature(12.0), TemperatureBand::kChilly);
  EXPECT_EQ(bucket_temperature(0.0), TemperatureBand::kCold);
  EXPECT_EQ(bucket_temperature(9.999), TemperatureBand::kCold);
  EXPECT_EQ(bucket_temperature(15.0), TemperatureBand::kCool);
  EXPECT_EQ(bucket_temperature(20.0), TemperatureBand::kWarm);
  EXPECT_EQ(bucket_temperature(27.9), TemperatureBand::kWarm);
  EXPECT_EQ(bucket_temperature(28.0), TemperatureBand::kHot);
}

TEST(BucketTemperature, RejectsNonFinite) {
  EXPECT_THROW(bucket_temperature(std::nan("")), InvalidInputError);
  EXPECT_THROW(bucket_temperature(INFINITY), InvalidInputError);
}

TEST(BucketTemperature, MonotoneOnRandomPairs) {
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    double a = rng.uniform(-40.0, 60.0);
    double b = rng.uniform(-40.0, 60.0);
    if (a > b) std::swap(a, b);
    EXPECT_LE(static_cast<int>(bucket_temperature(a)), static_cast<int>(bucket_temperature(b))) << a << " " << b;
  }
}

TEST(ThresholdTable, CustomBoundsAndValidation) {
  const ThresholdTable t({-10.0, 0.0, 5.0, 10.0, 30.0});
  EXPECT_EQ(bucket_temperature(-3.0, t), TemperatureBand::kCold);
  EXPECT_EQ(bucket_temperature(29.0, t), TemperatureBand::kWarm);
  EXPECT_THROW(ThresholdTable({0.0, 0.0, 1.0, 2.0, 3.0}), ConfigError);
  EXPECT_THROW(ThresholdTable({0.0, 5.0, 1.0, 2.0, 3.0}), ConfigError);
}

TEST(RenderPrompt, Template) {
  EXPECT_EQ(render_prompt("deer", "X", TemperatureBand::kWarm, {20.0, Circadian::kDay, FaceOrientation::kFront}).text(),
            "A photo of a deer X in warm temperature, with face direction front, captured during the day.");
  EXPECT_EQ(
      render_prompt("stoat", "X", TemperatureBand::kFreezing, {-5.0, Circadian::kNight, FaceOrientation::kBack}).text(),
      "A photo of a stoat X in freezing temperature, with face direction back, captured during the night.");
}

TEST(RenderPrompt, RejectsEmptySlots) {
  const EnvironmentalMetadata m{10.0, Circadian::kDay, FaceOrientation::kLeft};
  EXPECT_THROW(render_prompt("", "X", TemperatureBand::kCool, m), InvalidInputError);
  EXPECT_THROW(render_prompt("deer", "", TemperatureBand::kCool, m), InvalidInputError);
  EXPECT_THROW(PromptString(""), InvalidInputError);
}

TEST(RenderPrompt, InjectiveOverSlotTuples) {
  std::set<std::string> seen;
  std::size_t n = 0;
  for (std::string species : {"deer", "hare", "stoat"})
    for (std::string id : {"X", "11", "12"})
      for (auto band : kAllBands)
        for (auto o : kAllOrientations)
          for (auto c : kAllCircadian) {
            seen.insert(render_prompt(species, id, band, {0.0, c, o}).text());
            ++n;
          }
  EXPECT_EQ(seen.size(), n);
}

TEST(Sidecar, ParsesFields) {
  const auto m = parse_metadata_sidecar(R"({"temperature_celsius": 18.0, "circadian": "day", "face_orientation": "left"})");
  EXPECT_EQ(m.temperature_celsius, 18.0);
  EXPECT_EQ(m.circadian, Circadian::kDay);
  EXPECT_EQ(m.face_orientation, FaceOrientation::kLeft);
}

TEST(Sidecar, MissingKeyNamesTheKey) {
  try {
    parse_metadata_sidecar(R"({"temperature_celsius": 18.0, "face_orientation": "left"})");
    FAIL() << "expected a schema error";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.key(), "circadian");
  }
}

TEST(Sidecar, OutOfRangeTemperature) {
  EXPECT_THROW(parse_metadata_sidecar(R"({"temperature_celsius": 99})"), RangeError);
  EXPECT_THROW(parse_metadata_sidecar(R"({"temperature_celsius": -31, "circadian": "day", "face_orientation": "left"})"),
               RangeError);
}

TEST(Sidecar, BadValuesAndSyntax) {
  EXPECT_THROW(parse_metadata_sidecar(R"({"temperature_celsius": 1, "circadian": "dusk", "face_orientation": "left"})"),
               SchemaError);
  EXPECT_THROW(parse_metadata_sidecar(R"({"temperature_celsius": "warm", "circadian": "day", "face_orientation": "up"})"),
               SchemaError);
  EXPECT_THROW(parse_metadata_sidecar("{not json"), SchemaError);
}

TEST(Sidecar, UnknownKeysWarn) {
  std::vector<std::string> warnings;
  parse_metadata_sidecar(R"({"temperature_celsius": 1, "circadian": "night", "face_orientation": "back", "camera": 3})",
                         {}, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("camera"), std::string::npos);
}

// Any accepted document renders, and serialization reparses to the same value.
TEST(Sidecar, RandomDocumentsRoundTripAndRender) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    EnvironmentalMetadata m;
    m.temperature_celsius = rng.uniform(-30.0, 50.0);
    m.circadian = kAllCircadian[rng.below(2)];
    m.face_orientation = kAllOrientations[rng.below(4)];
    const auto back = parse_metadata_sidecar(serialize_metadata_sidecar(m));
    EXPECT_EQ(back, m);
    EXPECT_NO_THROW(render_prompt("hare", "X", back));
  }
}

}  // namespace
}  // namespace mfa
