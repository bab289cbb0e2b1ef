// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mfa/adapter.hpp"
#include "mfa/checkpoint.hpp"
#include "mfa/dataset.hpp"
#include "mfa/encoders.hpp"
#include "mfa/evaluation.hpp"
#include "mfa/metadata.hpp"
#include "mfa/objectives.hpp"
#include "mfa/optimizer.hpp"
#include "mfa/splits.hpp"
#include "mfa/synthetic.hpp"

namespace mfa {

enum class EncoderMode { kFrozen, kFinetune };

struct ModelConfig {
  EncoderSpec encoder;
  std::size_t expert_hidden = 16;
  std::size_t attention_inner = 0;  // 0 -> d
  std::size_t gate_hidden = 0;      // 0 -> d
  double alpha = 0.2;
  /// false selects the visual-only pipeline: no text branch, no fusion.
  bool use_metadata = true;
  /// Forces the gate to exactly 0.
  bool gate_off = false;
  /// Content of the identity slot in every prompt.
  std::string identity_token = "X";
  ThresholdTable thresholds;

  AdapterDims dims() const {
    const auto d = static_cast<Eigen::Index>(encoder.d);
    return {d, static_cast<Eigen::Index>(expert_hidden),
            attention_inner == 0 ? d : static_cast<Eigen::Index>(attention_inner),
            gate_hidden == 0 ? d : static_cast<Eigen::Index>(gate_hidden)};
  }
};

struct TrainConfig {
  std::size_t P = 4;
  std::size_t K = 4;
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 0;  // 0 -> max(1, train images / (P*K))
  double lr = 3.5e-4;
  double encoder_lr_scale = 0.1;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  EncoderMode encoder_mode = EncoderMode::kFrozen;
  bool sample_with_replacement = false;
  bool cosine_decay = true;
  LossConfig loss;
  ModelConfig model;
  DistanceMetric metric = DistanceMetric::kCosine;
  std::size_t k_max = 20;
  bool exclude_same_camera = false;

  std::size_t batch_size() const { return P * K; }

  void validate() const {
    if (P < 1 || K < 1) throw ConfigError("P and K must be >= 1");
    if (loss.weights.triplet > 0.0 && loss.mining == TripletMining::kBatchHard && (P < 2 || K < 2))
      throw ConfigError("batch-hard triplet mining needs P >= 2 and K >= 2");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (model.encoder.kind != EncoderKind::kToy)
      throw ConfigError("the training harness differentiates through toy encoders only");
    if (!(model.alpha >= 0.0 && model.alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (model.identity_token.empty()) throw ConfigError("identity token must be non-empty");
    model.encoder.validate();
    loss.validate();
  }
};

// ------------------------------------------------------------------ config io

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["P"] = c.P;
  j["K"] = c.K;
  j["epochs"] = c.epochs;
  j["steps_per_epoch"] = c.steps_per_epoch;
  j["lr"] = c.lr;
  j["encoder_lr_scale"] = c.encoder_lr_scale;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["encoder_mode"] = c.encoder_mode == EncoderMode::kFrozen ? "frozen" : "finetune";
  j["sample_with_replacement"] = c.sample_with_replacement;
  j["cosine_decay"] = c.cosine_decay;
  j["metric"] = to_string(c.metric);
  j["k_max"] = c.k_max;
  j["exclude_same_camera"] = c.exclude_same_camera;
  j["loss"] = {{"temperature", c.loss.temperature},
               {"margin", c.loss.margin},
               {"weights", {{"identity", c.loss.weights.identity},
                            {"triplet", c.loss.weights.triplet},
                            {"attention", c.loss.weights.attention}}},
               {"label_smoothing", c.loss.label_smoothing},
               {"symmetric", c.loss.symmetric},
               {"learnable_temperature", c.loss.learnable_temperature},
               {"mining", c.loss.mining == TripletMining::kBatchHard ? "batch-hard" : "all"},
               {"similarity", c.loss.similarity == SimilarityKind::kCosine ? "cosine" : "dot"}};
  const auto& m = c.model;
  j["model"] = {{"d", m.encoder.d},
                {"image_tokens", m.encoder.image_tokens},
                {"text_tokens", m.encoder.text_tokens},
                {"raw_dim", m.encoder.raw_dim},
                {"hash_buckets", m.encoder.hash_buckets},
                {"encoder_seed", m.encoder.seed},
                {"pooling", to_string(m.encoder.pooling)},
                {"expert_hidden", m.expert_hidden},
                {"attention_inner", m.attention_inner},
                {"gate_hidden", m.gate_hidden},
                {"alpha", m.alpha},
                {"use_metadata", m.use_metadata},
                {"gate_off", m.gate_off},
                {"identity_token", m.identity_token},
                {"temperature_thresholds", m.thresholds.bounds()}};
  return j;
}

/// Reads a run config; absent keys keep their defaults.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const nlohmann::json& obj, const char* key, auto& dst) {
    if (obj.contains(key)) dst = obj.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get(j, "P", c.P);
  get(j, "K", c.K);
  get(j, "epochs", c.epochs);
  get(j, "steps_per_epoch", c.steps_per_epoch);
  get(j, "lr", c.lr);
  get(j, "encoder_lr_scale", c.encoder_lr_scale);
  get(j, "weight_decay", c.weight_decay);
  get(j, "seed", c.seed);
  if (j.contains("encoder_mode")) {
    const auto s = j["encoder_mode"].get<std::string>();
    if (s != "frozen" && s != "finetune") throw ConfigError("encoder_mode must be frozen|finetune");
    c.encoder_mode = s == "frozen" ? EncoderMode::kFrozen : EncoderMode::kFinetune;
  }
  get(j, "sample_with_replacement", c.sample_with_replacement);
  get(j, "cosine_decay", c.cosine_decay);
  if (j.contains("metric")) c.metric = parse_metric(j["metric"].get<std::string>());
  get(j, "k_max", c.k_max);
  get(j, "exclude_same_camera", c.exclude_same_camera);
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    get(l, "temperature", c.loss.temperature);
    get(l, "margin", c.loss.margin);
    if (l.contains("weights")) {
      get(l["weights"], "identity", c.loss.weights.identity);
      get(l["weights"], "triplet", c.loss.weights.triplet);
      get(l["weights"], "attention", c.loss.weights.attention);
    }
    get(l, "label_smoothing", c.loss.label_smoothing);
    get(l, "symmetric", c.loss.symmetric);
    get(l, "learnable_temperature", c.loss.learnable_temperature);
    if (l.contains("mining")) {
      const auto s = l["mining"].get<std::string>();
      if (s != "batch-hard" && s != "all") throw ConfigError("mining must be batch-hard|all");
      c.loss.mining = s == "all" ? TripletMining::kAll : TripletMining::kBatchHard;
    }
    if (l.contains("similarity")) {
      const auto s = l["similarity"].get<std::string>();
      if (s != "cosine" && s != "dot") throw ConfigError("similarity must be cosine|dot");
      c.loss.similarity = s == "dot" ? SimilarityKind::kDot : SimilarityKind::kCosine;
    }
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    get(m, "d", c.model.encoder.d);
    get(m, "image_tokens", c.model.encoder.image_tokens);
    get(m, "text_tokens", c.model.encoder.text_tokens);
    get(m, "raw_dim", c.model.encoder.raw_dim);
    get(m, "hash_buckets", c.model.encoder.hash_buckets);
    get(m, "encoder_seed", c.model.encoder.seed);
    if (m.contains("pooling")) c.model.encoder.pooling = parse_pooling(m["pooling"].get<std::string>());
    get(m, "expert_hidden", c.model.expert_hidden);
    get(m, "attention_inner", c.model.attention_inner);
    get(m, "gate_hidden", c.model.gate_hidden);
    get(m, "alpha", c.model.alpha);
    get(m, "use_metadata", c.model.use_metadata);
    get(m, "gate_off", c.model.gate_off);
    get(m, "identity_token", c.model.identity_token);
    if (m.contains("temperature_thresholds"))
      c.model.thresholds = ThresholdTable(m["temperature_thresholds"].get<std::array<double, 5>>());
  }
  return c;
}

// --------------------------------------------------------------------- model

/// One training or evaluation item: a record with its raw feature and its
/// class index in the training label space (-1 for eval items).
struct Sample {
  ImageRecord record;
  Vector feature;
  std::int64_t label = -1;
};

/// Every tensor of a run: adapter, identity head, loss temperature, and the
/// toy encoder projections.
struct ModelTensors {
  MfaParameters mfa;
  Matrix head_weight;      // d x C
  Matrix head_bias;        // 1 x C
  Matrix temperature;      // 1 x 1
  Matrix image_projection;
  Matrix text_projection;

  template <typename F>
  void visit(F&& f) {
    f("encoder.image.projection", image_projection);
    f("encoder.text.projection", text_projection);
    mfa.visit(f);
    f("id_head.weight", head_weight);
    f("id_head.bias", head_bias);
    f("loss.temperature", temperature);
  }

  ModelTensors zeros_like() const {
    ModelTensors z = *this;
    z.visit([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
  }
};

class ReidModel {
 public:
  ReidModel(const ModelConfig& config, std::size_t num_classes, const LossConfig& loss, std::uint64_t seed)
      : config_(config), image_encoder_(config.encoder), text_encoder_(config.encoder) {
    if (num_classes < 1) throw ConfigError("identity head needs at least one class");
    const auto dims = config_.dims();
    t_.mfa = MfaParameters::init(dims, config_.alpha, seed);
    Rng head_rng = Rng::derived(seed, "id_head");
    t_.head_weight = detail::gaussian(dims.d, static_cast<Eigen::Index>(num_classes), 0.01, head_rng);
    t_.head_bias = Matrix::Zero(1, static_cast<Eigen::Index>(num_classes));
    t_.temperature = Matrix::Constant(1, 1, loss.temperature);
    t_.image_projection = image_encoder_.projection();
    t_.text_projection = text_encoder_.projection();
  }

  const ModelConfig& config() const noexcept { return config_; }
  ModelTensors& tensors() noexcept { return t_; }
  const ModelTensors& tensors() const noexcept { return t_; }
  std::size_t num_classes() const { return static_cast<std::size_t>(t_.head_weight.cols()); }

  template <typename F>
  void visit(F&& f) {
    t_.visit(std::forward<F>(f));
  }

  PromptString prompt_for(const ImageRecord& r) const {
    return render_prompt(r.species, config_.identity_token, r.metadata, config_.thresholds);
  }

  /// Per-sample forward state, kept for the backward pass.
  struct Trace {
    Vector feature;
    Vector text_counts;
    ExpertCache image_expert, text_expert;
    FuseCache fuse;
    Matrix text_tokens;  // T' (post-expert)
    Eigen::Index image_rows = 0;
    Vector embedding;   // pooled fused tokens
    Vector text_pooled; // pooled T'
    double gamma = 0.0;
  };

  Trace forward(const Sample& s) const {
    Trace tr;
    tr.feature = s.feature;
    const Matrix x = image_tokens(s.feature);
    const Matrix img = apply_expert(x, t_.mfa.image_expert, &tr.image_expert);
    tr.image_rows = img.rows();
    const Pooling pooling = config_.encoder.pooling;
    if (!config_.use_metadata) {
      tr.embedding = pool(img, pooling);
      return tr;
    }
    tr.text_counts = text_encoder_.ngram_counts(prompt_for(s.record).text());
    const Matrix t = text_tokens(tr.text_counts);
    tr.text_tokens = apply_expert(t, t_.mfa.text_expert, &tr.text_expert);
    FuseOptions fo;
    if (config_.gate_off) fo.gate_override = 0.0;
    auto fused = fuse(img, tr.text_tokens, t_.mfa.attention, t_.mfa.gate, fo, &tr.fuse);
    tr.embedding = pool(fused.tokens, pooling);
    tr.text_pooled = pool(tr.text_tokens, pooling);
    tr.gamma = fused.gate_value;
    return tr;
  }

  /// Propagates dL/d(embedding) and dL/d(text_pooled) of one sample into
  /// `grad`. Encoder projections receive gradients only when `finetune`.
  void backward(const Trace& tr, const Vector& d_embedding, const Vector* d_text_pooled, ModelTensors& grad,
                bool finetune) const {
    const Pooling pooling = config_.encoder.pooling;
    auto spread = [&](const Vector& d_pooled, Eigen::Index rows) {
      Matrix d = Matrix::Zero(rows, d_pooled.size());
      if (pooling == Pooling::kMean) {
        d.rowwise() = (d_pooled / static_cast<double>(rows)).transpose();
      } else {
        d.row(0) = d_pooled.transpose();
      }
      return d;
    };
    const Matrix d_tokens = spread(d_embedding, tr.image_rows);
    Matrix d_img;
    if (!config_.use_metadata || tr.fuse.skipped) {
      d_img = d_tokens;
    } else {
      d_img = Matrix::Zero(d_tokens.rows(), d_tokens.cols());
      Matrix d_text = Matrix::Zero(tr.text_tokens.rows(), tr.text_tokens.cols());
      fuse_backward(t_.mfa.attention, t_.mfa.gate, tr.fuse, d_tokens, grad.mfa.attention, grad.mfa.gate, d_img, d_text);
      if (d_text_pooled != nullptr) d_text += spread(*d_text_pooled, tr.text_tokens.rows());
      const Matrix d_raw_text = expert_backward(t_.mfa.text_expert, tr.text_expert, d_text, grad.mfa.text_expert);
      if (finetune) grad.text_projection += text_encoder_.projection_grad(tr.text_counts, d_raw_text);
    }
    if (config_.use_metadata && tr.fuse.skipped && d_text_pooled != nullptr) {
      Matrix d_text = spread(*d_text_pooled, tr.text_tokens.rows());
      const Matrix d_raw_text = expert_backward(t_.mfa.text_expert, tr.text_expert, d_text, grad.mfa.text_expert);
      if (finetune) grad.text_projection += text_encoder_.projection_grad(tr.text_counts, d_raw_text);
    }
    const Matrix d_x = expert_backward(t_.mfa.image_expert, tr.image_expert, d_img, grad.mfa.image_expert);
    if (finetune) grad.image_projection += image_encoder_.projection_grad(tr.feature, d_x);
  }

  /// Retrieval embedding of one sample.
  Vector embed(const Sample& s) const { return forward(s).embedding; }

  /// Names of tensors the optimizer may touch in this configuration.
  bool trainable(const std::string& name, EncoderMode mode, const LossConfig& loss) const {
    if (name.rfind("encoder.", 0) == 0) {
      if (mode == EncoderMode::kFrozen) return false;
      return name == "encoder.image.projection" || config_.use_metadata;
    }
    if (name == "loss.temperature") return config_.use_metadata && loss.learnable_temperature;
    if (!config_.use_metadata) return name.rfind("image_expert.", 0) == 0 || name.rfind("id_head.", 0) == 0;
    return true;
  }

 private:
  Matrix image_tokens(const Vector& f) const {
    if (static_cast<std::size_t>(f.size()) != config_.encoder.raw_dim)
      throw ShapeError("feature width " + std::to_string(f.size()) + " != encoder raw_dim");
    const Vector flat = t_.image_projection * f;
    return Eigen::Map<const Matrix>(flat.data(), static_cast<Eigen::Index>(config_.encoder.image_tokens),
                                    static_cast<Eigen::Index>(config_.encoder.d));
  }

  Matrix text_tokens(const Vector& counts) const {
    const Vector flat = t_.text_projection * counts;
    return Eigen::Map<const Matrix>(flat.data(), static_cast<Eigen::Index>(config_.encoder.text_tokens),
                                    static_cast<Eigen::Index>(config_.encoder.d));
  }

  ModelConfig config_;
  ToyImageEncoder image_encoder_;
  ToyTextEncoder text_encoder_;
  ModelTensors t_;
};

inline std::uint64_t tensor_hash(ReidModel& model, std::string_view prefix = "") {
  std::uint64_t h = fnv1a64("");
  model.visit([&](const std::string& name, Matrix& m) {
    if (name.rfind(prefix, 0) != 0) return;
    h = fnv1a64(name, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double)), h);
  });
  return h;
}

// ------------------------------------------------------------------ sampler

/// P distinct identities x K images, drawn from `labels` (one per sample).
/// Identities with fewer than K images qualify only with replacement.
inline std::vector<std::size_t> sample_pk_indices(std::span<const std::int64_t> labels, std::size_t P, std::size_t K,
                                                  Rng& rng, bool with_replacement = false) {
  std::map<std::int64_t, std::vector<std::size_t>> by_id;
  for (std::size_t i = 0; i < labels.size(); ++i) by_id[labels[i]].push_back(i);
  std::vector<std::int64_t> eligible;
  for (const auto& [id, members] : by_id)
    if (members.size() >= K || with_replacement) eligible.push_back(id);
  if (eligible.size() < P) {
    throw InvalidInputError("P x K sampling needs " + std::to_string(P) + " identities with >= " + std::to_string(K) +
                            " images, found " + std::to_string(eligible.size()));
  }
  rng.shuffle(eligible);
  std::vector<std::size_t> batch;
  batch.reserve(P * K);
  for (std::size_t p = 0; p < P; ++p) {
    auto members = by_id[eligible[p]];
    if (members.size() >= K) {
      // Partial Fisher-Yates: first K positions become a uniform K-subset.
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t j = k + rng.below(members.size() - k);
        std::swap(members[k], members[j]);
        batch.push_back(members[k]);
      }
    } else {
      for (std::size_t k = 0; k < K; ++k) batch.push_back(members[rng.below(members.size())]);
    }
  }
  return batch;
}

inline std::vector<ImageRecord> sample_pk_batch(const DatasetManifest& manifest, std::size_t P, std::size_t K, Rng& rng,
                                                bool with_replacement = false) {
  std::vector<std::int64_t> labels;
  for (const auto& r : manifest.records()) labels.push_back(r.identity);
  std::vector<ImageRecord> out;
  for (auto i : sample_pk_indices(labels, P, K, rng, with_replacement)) out.push_back(manifest.records()[i]);
  return out;
}

// ---------------------------------------------------------------- train step

struct BatchResult {
  LossReport report;
  double mean_gamma = 0.0;
};

/// Forward and backward over one batch. Gradients are written into `grad`
/// when it is non-null.
inline BatchResult compute_batch(const ReidModel& model, std::span<const Sample* const> batch, const LossConfig& loss,
                                 ModelTensors* grad, bool finetune) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  if (b < 1) throw InvalidInputError("empty batch");
  const auto d = static_cast<Eigen::Index>(model.config().encoder.d);
  std::vector<ReidModel::Trace> traces;
  traces.reserve(batch.size());
  Matrix emb(b, d);
  Matrix text(b, d);
  std::vector<std::int64_t> labels;
  double gamma_sum = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Sample& s = *batch[static_cast<std::size_t>(i)];
    if (s.label < 0) throw InvalidInputError("training sample without a class label");
    traces.push_back(model.forward(s));
    emb.row(i) = traces.back().embedding.transpose();
    if (model.config().use_metadata) text.row(i) = traces.back().text_pooled.transpose();
    labels.push_back(s.label);
    gamma_sum += traces.back().gamma;
  }
  const auto& t = model.tensors();
  const bool want = grad != nullptr;
  BatchResult out;
  out.mean_gamma = model.config().use_metadata ? gamma_sum / static_cast<double>(b) : 0.0;

  Matrix d_emb = Matrix::Zero(b, d);
  Matrix d_text = Matrix::Zero(b, d);

  const Matrix logits = (emb * t.head_weight).rowwise() + t.head_bias.row(0);
  Matrix d_logits;
  out.report.identity = identity_loss(logits, labels, loss.label_smoothing, want ? &d_logits : nullptr);
  if (want && loss.weights.identity > 0.0) {
    d_logits *= loss.weights.identity;
    grad->head_weight.noalias() += emb.transpose() * d_logits;
    grad->head_bias += d_logits.colwise().sum();
    d_emb.noalias() += d_logits * t.head_weight.transpose();
  }

  if (loss.weights.triplet > 0.0 || !want) {
    Matrix d_tri;
    out.report.triplet = triplet_loss(emb, labels, loss.margin, loss.mining, want ? &d_tri : nullptr);
    if (want && loss.weights.triplet > 0.0) d_emb += loss.weights.triplet * d_tri;
  }

  double d_tau = 0.0;
  if (model.config().use_metadata) {
    const double tau = t.temperature(0, 0);
    AttentionLossGrad g;
    const bool attn_grad = want && loss.weights.attention > 0.0;
    out.report.attention =
        attention_loss(text, emb, loss.similarity, tau, loss.symmetric, attn_grad ? &g : nullptr);
    if (attn_grad) {
      d_emb += loss.weights.attention * g.d_image;
      d_text += loss.weights.attention * g.d_text;
      d_tau = loss.weights.attention * g.d_temperature;
    }
  }
  out.report.total = total_loss(out.report, loss.weights);
  if (!std::isfinite(out.report.total)) {
    throw NumericError("non-finite loss: id=" + std::to_string(out.report.identity) +
                       " tri=" + std::to_string(out.report.triplet) + " attn=" + std::to_string(out.report.attention) +
                       " mean_gamma=" + std::to_string(out.mean_gamma));
  }
  if (!want) return out;

  grad->temperature(0, 0) += d_tau;
  const bool text_grads = model.config().use_metadata && loss.weights.attention > 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Vector de = d_emb.row(i).transpose();
    const Vector dt = d_text.row(i).transpose();
    model.backward(traces[static_cast<std::size_t>(i)], de, text_grads ? &dt : nullptr, *grad, finetune);
  }
  return out;
}

struct StepOptions {
  double lr = 3.5e-4;
  double encoder_lr = 3.5e-5;
  double weight_decay = 5e-4;
  EncoderMode mode = EncoderMode::kFrozen;
};

/// One optimizer step on a batch; returns the pre-update losses.
inline BatchResult train_step(ReidModel& model, AdamW& opt, std::span<const Sample* const> batch,
                              const LossConfig& loss, const StepOptions& so) {
  for (const auto* s : batch)
    if (!s->feature.allFinite()) throw NumericError("non-finite input feature in " + s->record.name());
  ModelTensors grad = model.tensors().zeros_like();
  const auto result = compute_batch(model, batch, loss, &grad, so.mode == EncoderMode::kFinetune);
  opt.begin_step();
  std::map<std::string, const Matrix*> grads;
  grad.visit([&](const std::string& name, Matrix& g) { grads[name] = &g; });
  model.visit([&](const std::string& name, Matrix& p) {
    if (!model.trainable(name, so.mode, loss)) return;
    const bool encoder = name.rfind("encoder.", 0) == 0;
    const bool decay = name.find("bias") == std::string::npos && name.find("gain") == std::string::npos &&
                       name != "loss.temperature";
    opt.update(name, p, *grads.at(name), encoder ? so.encoder_lr : so.lr, decay ? so.weight_decay : 0.0);
  });
  if (loss.learnable_temperature) {
    auto& tau = model.tensors().temperature(0, 0);
    tau = std::max(tau, 1e-3);
  }
  return result;
}

// ------------------------------------------------------------------ datasets

/// Samples for one run: a labeled train side and an unlabeled eval side.
struct TrainingData {
  std::vector<Sample> train;
  std::vector<Sample> gallery;
  std::vector<Sample> query;
  std::size_t num_classes = 0;
  Protocol protocol = Protocol::kIntra;
  std::string eval_species;
};

/// Reads each record's image file through the toy feature decoder.
inline FeatureStore load_features(const DatasetManifest& manifest) {
  FeatureStore out;
  out.reserve(manifest.size());
  for (const auto& r : manifest.records()) out.push_back(decode_feature_file(read_file(r.image_path)));
  return out;
}

namespace detail {
inline std::vector<Sample> collect(const DatasetManifest& m, const FeatureStore& f, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back({m.records().at(i), f.at(i), -1});
  return out;
}

/// Contiguous class indices over (species, identity), sorted.
inline std::size_t assign_labels(std::vector<Sample>& samples) {
  std::map<std::pair<std::string, std::int64_t>, std::int64_t> classes;
  for (const auto& s : samples) classes.emplace(std::pair{s.record.species, s.record.identity}, 0);
  std::int64_t next = 0;
  for (auto& [_, v] : classes) v = next++;
  for (auto& s : samples) s.label = classes.at({s.record.species, s.record.identity});
  return classes.size();
}
}  // namespace detail

inline TrainingData make_intra_data(const DatasetManifest& manifest, const FeatureStore& features,
                                    const SplitManifest& split) {
  if (features.size() != manifest.size()) throw InvalidInputError("feature store does not match manifest");
  check_split(manifest, split);
  TrainingData data;
  data.train = detail::collect(manifest, features, split.train);
  data.gallery = detail::collect(manifest, features, split.gallery);
  data.query = detail::collect(manifest, features, split.query);
  data.num_classes = detail::assign_labels(data.train);
  data.protocol = Protocol::kIntra;
  data.eval_species = manifest.species();
  return data;
}

/// `features` maps species to a store aligned with that species' manifest.
inline TrainingData make_lodo_data(const LodoSplit& lodo, const std::map<std::string, FeatureStore>& features,
                                   const std::vector<DatasetManifest>& full_manifests) {
  TrainingData data;
  for (const auto& train_manifest : lodo.train_manifests) {
    const auto& sp = train_manifest.species();
    const auto full = std::find_if(full_manifests.begin(), full_manifests.end(),
                                   [&](const DatasetManifest& m) { return m.species() == sp; });
    if (full == full_manifests.end()) throw InvalidInputError("no manifest for species " + sp);
    const auto& store = features.at(sp);
    for (const auto& r : train_manifest.records()) {
      if (r.species == lodo.target_species) throw InvalidInputError("target species leaked into training");
      data.train.push_back({r, store.at(full->find(r.name())), -1});
    }
  }
  const auto& tf = features.at(lodo.target_species);
  data.gallery = detail::collect(lodo.target_manifest, tf, lodo.eval_split.gallery);
  data.query = detail::collect(lodo.target_manifest, tf, lodo.eval_split.query);
  data.num_classes = detail::assign_labels(data.train);
  data.protocol = Protocol::kLodo;
  data.eval_species = lodo.target_species;
  return data;
}

// ---------------------------------------------------------------- run loop

struct EpochLog {
  std::size_t epoch = 0;
  LossReport mean_loss;
  double mean_gamma = 0.0;
  double lr = 0.0;
  std::string checkpoint_hash;
  std::string checkpoint_path;
};

struct RunLog {
  std::uint64_t seed = 0;
  double initial_mean_gamma = 0.0;
  std::string initial_checkpoint_hash;
  std::string initial_checkpoint_path;
  std::vector<EpochLog> epochs;
  std::optional<EvalReport> final_eval;
  std::string final_checkpoint_hash;
};

struct RetrievalEmbeddings {
  RetrievalSet query;
  RetrievalSet gallery;
  std::vector<std::string> query_names;
  std::vector<std::string> gallery_names;
};

/// Embeds the eval side, rounded through float32 so results computed here
/// equal those recomputed from an embedding dump.
inline RetrievalEmbeddings embed_eval(const ReidModel& model, const TrainingData& data) {
  RetrievalEmbeddings out;
  auto fill = [&](const std::vector<Sample>& samples, RetrievalSet& set, std::vector<std::string>& names) {
    for (const auto& s : samples) {
      set.vectors.push_back(round_to_float(model.embed(s)));
      set.ids.push_back(s.record.identity);
      set.cams.push_back(s.record.camera_id);
      names.push_back(s.record.name());
    }
  };
  fill(data.query, out.query, out.query_names);
  fill(data.gallery, out.gallery, out.gallery_names);
  return out;
}

inline EvalReport evaluate_embeddings(const RetrievalEmbeddings& e, const TrainConfig& cfg, Protocol protocol,
                                      unsigned threads = 1) {
  const auto dm = distance_matrix(e.query, e.gallery, cfg.metric, threads);
  return evaluate(dm, cfg.k_max, protocol, {cfg.exclude_same_camera});
}

inline std::vector<const Sample*> sample_pointers(const std::vector<Sample>& samples) {
  std::vector<const Sample*> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

/// Mean gate value over a sample set (0 for the visual-only pipeline).
inline double mean_gate(const ReidModel& model, const std::vector<Sample>& samples) {
  if (!model.config().use_metadata || samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : samples) sum += model.forward(s).gamma;
  return sum / static_cast<double>(samples.size());
}

inline nlohmann::ordered_json checkpoint_meta(const TrainConfig& cfg, std::size_t epoch) {
  nlohmann::ordered_json meta;
  const auto dims = cfg.model.dims();
  meta["dims"] = {{"d", dims.d},
                  {"expert_hidden", dims.expert_hidden},
                  {"attention_inner", dims.attention_inner},
                  {"gate_hidden", dims.gate_hidden},
                  {"image_tokens", cfg.model.encoder.image_tokens},
                  {"text_tokens", cfg.model.encoder.text_tokens}};
  meta["alpha"] = cfg.model.alpha;
  meta["seed"] = cfg.seed;
  meta["epoch"] = epoch;
  meta["use_metadata"] = cfg.model.use_metadata;
  meta["gate_off"] = cfg.model.gate_off;
  meta["library_version"] = "1.0.0";
  return meta;
}

struct RunOptions {
  std::optional<fs::path> out_dir;
  unsigned threads = 1;
};

/// Full training run. Emits a checkpoint before the first epoch and after
/// each epoch, then evaluates the final model on the eval side.
inline RunLog run_training(const TrainConfig& cfg, const TrainingData& data, const RunOptions& ro = {},
                           std::optional<ReidModel>* final_model = nullptr) {
  cfg.validate();
  if (data.train.empty()) throw InvalidInputError("no training samples");
  ReidModel model(cfg.model, data.num_classes, cfg.loss, cfg.seed);
  AdamW opt;
  Rng sampler = Rng::derived(cfg.seed, "sampler");
  RunLog log;
  log.seed = cfg.seed;
  log.initial_mean_gamma = mean_gate(model, data.train);

  std::string jsonl;
  auto emit_checkpoint = [&](std::size_t epoch, std::string& hash, std::string& path) {
    const auto bytes = encode_checkpoint(model, checkpoint_meta(cfg, epoch));
    hash = hex64(fnv1a64(bytes));
    if (ro.out_dir) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%03zu.ckpt", epoch);
      const auto p = *ro.out_dir / name;
      write_file_atomic(p, bytes);
      path = p.string();
    }
  };
  emit_checkpoint(0, log.initial_checkpoint_hash, log.initial_checkpoint_path);

  std::vector<std::int64_t> labels;
  for (const auto& s : data.train) labels.push_back(s.label);
  const std::size_t steps_per_epoch =
      cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : std::max<std::size_t>(1, data.train.size() / cfg.batch_size());
  const long total_steps = static_cast<long>(steps_per_epoch * cfg.epochs);
  long step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog el;
    el.epoch = epoch;
    double gamma_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const auto idx = sample_pk_indices(labels, cfg.P, cfg.K, sampler, cfg.sample_with_replacement);
      std::vector<const Sample*> batch;
      for (auto i : idx) batch.push_back(&data.train[i]);
      const double lr = cfg.cosine_decay ? cosine_lr(cfg.lr, step, total_steps) : cfg.lr;
      const auto r = train_step(model, opt, batch, cfg.loss,
                                {lr, lr * cfg.encoder_lr_scale, cfg.weight_decay, cfg.encoder_mode});
      el.mean_loss.attention += r.report.attention;
      el.mean_loss.identity += r.report.identity;
      el.mean_loss.triplet += r.report.triplet;
      el.mean_loss.total += r.report.total;
      gamma_sum += r.mean_gamma;
      el.lr = lr;
    }
    const double n = static_cast<double>(steps_per_epoch);
    el.mean_loss.attention /= n;
    el.mean_loss.identity /= n;
    el.mean_loss.triplet /= n;
    el.mean_loss.total /= n;
    el.mean_gamma = gamma_sum / n;
    emit_checkpoint(epoch, el.checkpoint_hash, el.checkpoint_path);
    nlohmann::ordered_json line = {{"epoch", epoch},
                                   {"loss", {{"total", el.mean_loss.total},
                                             {"identity", el.mean_loss.identity},
                                             {"triplet", el.mean_loss.triplet},
                                             {"attention", el.mean_loss.attention}}},
                                   {"mean_gamma", el.mean_gamma},
                                   {"lr", el.lr},
                                   {"checkpoint", el.checkpoint_hash}};
    jsonl += line.dump() + "\n";
    log.epochs.push_back(std::move(el));
  }
  log.final_checkpoint_hash = log.epochs.empty() ? log.initial_checkpoint_hash : log.epochs.back().checkpoint_hash;

  if (!data.query.empty() && !data.gallery.empty()) {
    const auto emb = embed_eval(model, data);
    log.final_eval = evaluate_embeddings(emb, cfg, data.protocol, ro.threads);
    if (ro.out_dir) {
      const std::size_t d = cfg.model.encoder.d;
      write_embedding_dump(*ro.out_dir / "query",
                           {d, cfg.model.encoder.pooling, data.eval_species, "query", emb.query_names, emb.query.vectors});
      write_embedding_dump(*ro.out_dir / "gallery", {d, cfg.model.encoder.pooling, data.eval_species, "gallery",
                                                     emb.gallery_names, emb.gallery.vectors});
      write_file_atomic(*ro.out_dir / "eval_report.json", log.final_eval->to_json().dump(2) + "\n");
    }
  }
  if (ro.out_dir) write_file_atomic(*ro.out_dir / "train_log.jsonl", jsonl);
  if (final_model != nullptr) final_model->emplace(std::move(model));
  return log;
}

}  // namespace mfa
