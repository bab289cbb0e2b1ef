// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstring>
#include <set>

#include "mfa/training.hpp"
#include "test_util.hpp"

namespace mfa {
namespace {

SyntheticDataset small_dataset(std::uint64_t seed = 0, double correlation = 0.9, std::size_t ids = 12,
                               std::size_t per_id = 10) {
  SyntheticConfig sc;
  sc.identities = ids;
  sc.images_per_identity = per_id;
  sc.metadata_identity_correlation = correlation;
  sc.seed = seed;
  return generate_synthetic(sc);
}

TrainingData small_data(std::uint64_t seed = 0, double correlation = 0.9) {
  const auto ds = small_dataset(seed, correlation);
  return make_intra_data(ds.manifest, ds.features, make_intra_splits(ds.manifest, {}, seed));
}

TrainConfig small_config(std::size_t epochs = 2) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.P = 2;
  cfg.K = 4;
  return cfg;
}

// ---- sampler

TEST(Sampler, PkBatchShape) {
  const auto ds = small_dataset();
  Rng rng(1);
  const auto batch = sample_pk_batch(ds.manifest, 2, 4, rng);
  ASSERT_EQ(batch.size(), 8u);
  std::map<std::int64_t, int> counts;
  std::set<std::string> names;
  for (const auto& r : batch) {
    ++counts[r.identity];
    names.insert(r.name());
  }
  EXPECT_EQ(counts.size(), 2u);
  for (const auto& [_, n] : counts) EXPECT_EQ(n, 4);
  EXPECT_EQ(names.size(), 8u);
}

TEST(Sampler, SameSeedSameBatches) {
  const auto ds = small_dataset();
  Rng a(7), b(7);
  for (int i = 0; i < 20; ++i) {
    const auto x = sample_pk_batch(ds.manifest, 3, 2, a);
    const auto y = sample_pk_batch(ds.manifest, 3, 2, b);
    ASSERT_EQ(x.size(), y.size());
    for (std::size_t k = 0; k < x.size(); ++k) EXPECT_EQ(x[k].name(), y[k].name());
  }
}

TEST(Sampler, TooFewIdentities) {
  const auto ds = small_dataset(0, 0.9, 10, 4);
  Rng rng(1);
  EXPECT_THROW(sample_pk_batch(ds.manifest, 20, 4, rng), InvalidInputError);
  EXPECT_THROW(sample_pk_batch(ds.manifest, 2, 5, rng), InvalidInputError);
  EXPECT_EQ(sample_pk_batch(ds.manifest, 2, 5, rng, true).size(), 10u);
}

TEST(Sampler, RandomLabelSetsRespectPk) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::int64_t> labels;
    const auto ids = 2 + rng.below(8);
    for (std::uint64_t i = 0; i < ids; ++i)
      for (std::uint64_t k = 0, n = 2 + rng.below(6); k < n; ++k) labels.push_back(static_cast<std::int64_t>(i));
    const auto idx = sample_pk_indices(labels, 2, 2, rng);
    ASSERT_EQ(idx.size(), 4u);
    EXPECT_EQ(labels[idx[0]], labels[idx[1]]);
    EXPECT_EQ(labels[idx[2]], labels[idx[3]]);
    EXPECT_NE(labels[idx[0]], labels[idx[2]]);
    EXPECT_NE(idx[0], idx[1]);
    EXPECT_NE(idx[2], idx[3]);
  }
}

// ---- model and steps

TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
  const auto data = small_data();
  TrainConfig cfg = small_config();
  cfg.model.encoder.d = 6;
  cfg.model.encoder.image_tokens = 2;
  cfg.model.encoder.text_tokens = 3;
  cfg.model.encoder.hash_buckets = 16;
  cfg.model.alpha = 0.5;
  cfg.loss.learnable_temperature = true;
  ReidModel model(cfg.model, data.num_classes, cfg.loss, 3);
  // move off the zero-initialized second expert layers
  Rng rng(4);
  model.tensors().mfa.text_expert.fc2_weight = testing::random_matrix(16, 6, rng, 0.3);
  model.tensors().mfa.image_expert.fc2_weight = testing::random_matrix(16, 6, rng, 0.3);
  model.tensors().mfa.gate.fc2_bias(0, 0) = 0.0;
  std::vector<const Sample*> batch;
  std::map<std::int64_t, int> taken;
  for (const auto& s : data.train)
    if (s.label < 2 && taken[s.label]++ < 4) batch.push_back(&s);
  ASSERT_EQ(batch.size(), 8u);

  ModelTensors grad = model.tensors().zeros_like();
  compute_batch(model, batch, cfg.loss, &grad, true);
  std::map<std::string, Matrix*> grads;
  grad.visit([&](const std::string& n, Matrix& m) { grads[n] = &m; });
  auto loss = [&] { return compute_batch(model, batch, cfg.loss, nullptr, true).report.total; };
  model.visit([&](const std::string& name, Matrix& p) {
    if (name == "encoder.text.projection") return;  // large and linear, checked in the encoder suite
    EXPECT_LT(testing::relative_error(*grads.at(name), testing::numeric_gradient(p, loss)), 1e-4) << name;
  });
}

TEST(Training, ZeroLearningRateLeavesTrainablesUnchanged) {
  const auto data = small_data();
  auto cfg = small_config();
  cfg.weight_decay = 0.0;
  ReidModel model(cfg.model, data.num_classes, cfg.loss, 0);
  const auto before = tensor_hash(model);
  AdamW opt;
  Rng rng(1);
  std::vector<std::int64_t> labels;
  for (const auto& s : data.train) labels.push_back(s.label);
  std::vector<const Sample*> batch;
  for (auto i : sample_pk_indices(labels, 2, 4, rng)) batch.push_back(&data.train[i]);
  train_step(model, opt, batch, cfg.loss, {0.0, 0.0, 0.0, EncoderMode::kFinetune});
  EXPECT_EQ(tensor_hash(model), before);
}

TEST(Training, LossDecreasesOnFixedBatch) {
  const auto data = small_data();
  auto cfg = small_config();
  ReidModel model(cfg.model, data.num_classes, cfg.loss, 0);
  AdamW opt;
  Rng rng(0);
  std::vector<std::int64_t> labels;
  for (const auto& s : data.train) labels.push_back(s.label);
  std::vector<const Sample*> batch;
  for (auto i : sample_pk_indices(labels, 2, 4, rng)) batch.push_back(&data.train[i]);
  const double first = compute_batch(model, batch, cfg.loss, nullptr, false).report.total;
  for (int s = 0; s < 50; ++s) train_step(model, opt, batch, cfg.loss, {1e-3, 1e-4, 5e-4, EncoderMode::kFrozen});
  EXPECT_LT(compute_batch(model, batch, cfg.loss, nullptr, false).report.total, first);
}

TEST(Training, FrozenEncoderKeepsProjectionsFinetuneMovesThem) {
  const auto data = small_data();
  for (auto mode : {EncoderMode::kFrozen, EncoderMode::kFinetune}) {
    auto cfg = small_config(2);
    cfg.encoder_mode = mode;
    std::optional<ReidModel> trained;
    run_training(cfg, data, {}, &trained);
    ReidModel fresh(cfg.model, data.num_classes, cfg.loss, cfg.seed);
    const bool same = tensor_hash(*trained, "encoder.") == tensor_hash(fresh, "encoder.");
    EXPECT_EQ(same, mode == EncoderMode::kFrozen);
    EXPECT_NE(tensor_hash(*trained, "mfa"), 0u);
    EXPECT_NE(tensor_hash(*trained, "image_expert."), tensor_hash(fresh, "image_expert."));
  }
}

TEST(Training, VisualOnlyTrainsOnlyImageExpertAndHead) {
  const auto data = small_data();
  auto cfg = small_config(1);
  cfg.model.use_metadata = false;
  std::optional<ReidModel> trained;
  run_training(cfg, data, {}, &trained);
  ReidModel fresh(cfg.model, data.num_classes, cfg.loss, cfg.seed);
  for (const char* frozen : {"encoder.", "text_expert.", "attention.", "gate.", "loss."})
    EXPECT_EQ(tensor_hash(*trained, frozen), tensor_hash(fresh, frozen)) << frozen;
  EXPECT_NE(tensor_hash(*trained, "id_head."), tensor_hash(fresh, "id_head."));
}

TEST(Training, ZeroEpochsWritesOnlyInitialCheckpoint) {
  const auto data = small_data();
  const auto dir = testing::scratch_dir("zero_epochs");
  const auto log = run_training(small_config(0), data, {dir});
  EXPECT_TRUE(log.epochs.empty());
  EXPECT_TRUE(fs::exists(dir / "checkpoint_epoch_000.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "checkpoint_epoch_001.ckpt"));
  EXPECT_EQ(read_file(dir / "train_log.jsonl"), "");
  EXPECT_EQ(log.final_checkpoint_hash, log.initial_checkpoint_hash);
  ASSERT_TRUE(log.final_eval.has_value());
}

TEST(Training, RunsAreDeterministic) {
  const auto data = small_data();
  const auto a = run_training(small_config(2), data);
  const auto b = run_training(small_config(2), data);
  ASSERT_EQ(a.epochs.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) EXPECT_EQ(a.epochs[e].checkpoint_hash, b.epochs[e].checkpoint_hash);
  EXPECT_EQ(a.final_eval->map, b.final_eval->map);
  auto other = small_config(2);
  other.seed = 1;
  EXPECT_NE(run_training(other, data).final_checkpoint_hash, a.final_checkpoint_hash);
}

TEST(Training, GateOpensWhenMetadataPredictsIdentity) {
  SyntheticConfig sc;
  sc.noise_scale = 3.0;
  const auto ds = generate_synthetic(sc);
  const auto data = make_intra_data(ds.manifest, ds.features, make_intra_splits(ds.manifest));
  auto cfg = small_config(20);
  cfg.P = 4;
  const auto log = run_training(cfg, data);
  EXPECT_GT(log.epochs.back().mean_gamma, log.initial_mean_gamma);
}

TEST(Training, GateOffMatchesVisualOnlyBitForBit) {
  const auto data = small_data();
  for (double alpha : {0.0, 0.2}) {
    auto off = small_config(3);
    off.model.alpha = alpha;
    off.model.gate_off = true;
    off.loss.weights.attention = 0.0;
    auto visual = off;
    visual.model.gate_off = false;
    visual.model.use_metadata = false;
    std::optional<ReidModel> m_off, m_vis;
    const auto l_off = run_training(off, data, {}, &m_off);
    const auto l_vis = run_training(visual, data, {}, &m_vis);
    const auto e_off = embed_eval(*m_off, data), e_vis = embed_eval(*m_vis, data);
    for (std::size_t i = 0; i < data.query.size(); ++i) {
      const Vector a = m_off->embed(data.query[i]), b = m_vis->embed(data.query[i]);
      ASSERT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())));
    }
    EXPECT_EQ(l_off.final_eval->map, l_vis.final_eval->map);
    EXPECT_EQ(l_off.final_eval->cmc, l_vis.final_eval->cmc);
  }
}

// ---- configuration and data assembly

TEST(Config, JsonRoundTrip) {
  TrainConfig c;
  c.P = 3;
  c.epochs = 7;
  c.encoder_mode = EncoderMode::kFinetune;
  c.loss.symmetric = true;
  c.loss.weights.attention = 0.25;
  c.model.alpha = 0.4;
  c.model.identity_token = "animal";
  c.model.encoder.pooling = Pooling::kFirstToken;
  c.metric = DistanceMetric::kEuclidean;
  const auto back = train_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(Config, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.K = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.model.encoder.kind = EncoderKind::kPretrainedVlm;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.model.alpha = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Data, IntraLabelsAreContiguousAndEvalIsUnlabeled) {
  const auto data = small_data();
  std::set<std::int64_t> labels;
  for (const auto& s : data.train) labels.insert(s.label);
  EXPECT_EQ(labels.size(), data.num_classes);
  EXPECT_EQ(*labels.begin(), 0);
  EXPECT_EQ(*labels.rbegin(), static_cast<std::int64_t>(data.num_classes) - 1);
  for (const auto& s : data.query) EXPECT_EQ(s.label, -1);
}

TEST(Data, LodoExcludesTargetAndUnionsLabels) {
  std::vector<DatasetManifest> manifests;
  std::map<std::string, FeatureStore> features;
  for (const char* sp : {"alpha", "beta", "gamma"}) {
    SyntheticConfig sc;
    sc.identities = 6;
    sc.images_per_identity = 6;
    sc.species = sp;
    auto ds = generate_synthetic(sc);
    features[sp] = ds.features;
    manifests.push_back(ds.manifest);
  }
  const auto lodo = make_loo_splits(manifests, "beta");
  const auto data = make_lodo_data(lodo, features, manifests);
  std::set<std::pair<std::string, std::int64_t>> classes;
  for (const auto& s : data.train) {
    EXPECT_NE(s.record.species, "beta");
    classes.insert({s.record.species, s.record.identity});
  }
  EXPECT_EQ(classes.size(), data.num_classes);
  for (const auto& s : data.query) EXPECT_EQ(s.record.species, "beta");
  EXPECT_EQ(data.protocol, Protocol::kLodo);
}

}  // namespace
}  // namespace mfa
