// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <cctype>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "mfa/error.hpp"
#include "mfa/io.hpp"
#include "mfa/metadata.hpp"
#include "mfa/random.hpp"
#include "mfa/synthetic.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

/// Token-level embedding plus its pooled vector.
struct TokenEmbedding {
  Matrix tokens;
  Vector pooled;
};
using ImageTokens = TokenEmbedding;
using TextTokens = TokenEmbedding;

enum class EncoderKind { kToy, kPretrainedVlm };

struct EncoderSpec {
  EncoderKind kind = EncoderKind::kToy;
  std::size_t d = 32;          // embedding width
  std::size_t image_tokens = 4;  // N
  std::size_t text_tokens = 4;   // M
  std::string weights_ref;     // pretrained weights locator, opaque here
  std::size_t raw_dim = 32;    // toy image input width
  std::size_t hash_buckets = 256;
  std::uint64_t seed = 0;
  Pooling pooling = Pooling::kMean;

  void validate() const {
    if (d < 1 || image_tokens < 1 || text_tokens < 1 || raw_dim < 1 || hash_buckets < 1)
      throw ConfigError("encoder spec: dimensions must be >= 1");
  }
};

class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  /// Encodes each item; throws EncodeError naming the first bad item.
  virtual std::vector<ImageTokens> encode(std::span<const std::string> images) const = 0;
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::vector<TextTokens> encode(std::span<const PromptString> prompts) const = 0;
};

/// Fixed random projection of a stored feature vector into N tokens.
/// Its projection is trainable when encoders are fine-tuned.
class ToyImageEncoder final : public ImageEncoder {
 public:
  explicit ToyImageEncoder(const EncoderSpec& spec) : spec_(spec) {
    spec_.validate();
    const auto rows = static_cast<Eigen::Index>(spec_.image_tokens * spec_.d);
    const auto cols = static_cast<Eigen::Index>(spec_.raw_dim);
    projection_.resize(rows, cols);
    Rng rng = Rng::derived(spec_.seed, "encoder/image");
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) projection_(r, c) = scale * rng.normal();
  }

  std::vector<ImageTokens> encode(std::span<const std::string> images) const override {
    std::vector<ImageTokens> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
      Vector f;
      try {
        f = decode_feature_file(images[i]);
      } catch (const Error& e) {
        throw EncodeError(i, e.what());
      }
      if (static_cast<std::size_t>(f.size()) != spec_.raw_dim)
        throw EncodeError(i, "feature width " + std::to_string(f.size()) + " != " + std::to_string(spec_.raw_dim));
      out.push_back(encode_feature(f));
    }
    return out;
  }

  ImageTokens encode_feature(const Vector& f) const {
    if (static_cast<std::size_t>(f.size()) != spec_.raw_dim) throw ShapeError("toy image encoder: bad feature width");
    const Vector flat = projection_ * f;
    Matrix tokens = Eigen::Map<const Matrix>(flat.data(), static_cast<Eigen::Index>(spec_.image_tokens),
                                             static_cast<Eigen::Index>(spec_.d));
    Vector pooled = pool(tokens, spec_.pooling);
    return {std::move(tokens), std::move(pooled)};
  }

  /// Gradient of the projection given dL/dtokens for input `f`.
  Matrix projection_grad(const Vector& f, const Matrix& d_tokens) const {
    const Eigen::Map<const Vector> flat(d_tokens.data(), d_tokens.size());
    return flat * f.transpose();
  }

  const EncoderSpec& spec() const noexcept { return spec_; }
  Matrix& projection() noexcept { return projection_; }
  const Matrix& projection() const noexcept { return projection_; }

 private:
  EncoderSpec spec_;
  Matrix projection_;  // (N*d) x raw_dim
};

/// Random projection of hashed unigram and bigram counts; each of the M
/// tokens uses its own projection.
class ToyTextEncoder final : public TextEncoder {
 public:
  explicit ToyTextEncoder(const EncoderSpec& spec) : spec_(spec) {
    spec_.validate();
    const auto rows = static_cast<Eigen::Index>(spec_.text_tokens * spec_.d);
    const auto cols = static_cast<Eigen::Index>(spec_.hash_buckets);
    projection_.resize(rows, cols);
    Rng rng = Rng::derived(spec_.seed, "encoder/text");
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) projection_(r, c) = rng.normal();
  }

  std::vector<TextTokens> encode(std::span<const PromptString> prompts) const override {
    std::vector<TextTokens> out;
    out.reserve(prompts.size());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      try {
        out.push_back(encode_counts(ngram_counts(prompts[i].text())));
      } catch (const InvalidInputError& e) {
        throw EncodeError(i, e.what());
      }
    }
    return out;
  }

  /// Unit-normalized hashed n-gram count vector of a prompt.
  Vector ngram_counts(std::string_view text) const {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isalnum(c) || ch == '-' || c >= 0x80) {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else if (!cur.empty()) {
        words.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    if (words.empty()) throw InvalidInputError("prompt has no tokens");

    Vector h = Vector::Zero(static_cast<Eigen::Index>(spec_.hash_buckets));
    auto bump = [&](std::string_view gram) { h(static_cast<Eigen::Index>(fnv1a64(gram) % spec_.hash_buckets)) += 1.0; };
    for (std::size_t i = 0; i < words.size(); ++i) {
      bump(words[i]);
      if (i + 1 < words.size()) bump(words[i] + " " + words[i + 1]);
    }
    return h / h.norm();
  }

  TextTokens encode_counts(const Vector& h) const {
    const Vector flat = projection_ * h;
    Matrix tokens = Eigen::Map<const Matrix>(flat.data(), static_cast<Eigen::Index>(spec_.text_tokens),
                                             static_cast<Eigen::Index>(spec_.d));
    Vector pooled = pool(tokens, spec_.pooling);
    return {std::move(tokens), std::move(pooled)};
  }

  Matrix projection_grad(const Vector& h, const Matrix& d_tokens) const {
    const Eigen::Map<const Vector> flat(d_tokens.data(), d_tokens.size());
    return flat * h.transpose();
  }

  const EncoderSpec& spec() const noexcept { return spec_; }
  Matrix& projection() noexcept { return projection_; }
  const Matrix& projection() const noexcept { return projection_; }

 private:
  EncoderSpec spec_;
  Matrix projection_;  // (M*d) x buckets
};

/// Backends for pretrained vision-language encoders register here; the
/// adapter never references a concrete encoder.
class EncoderRegistry {
 public:
  using ImageFactory = std::function<std::unique_ptr<ImageEncoder>(const EncoderSpec&)>;
  using TextFactory = std::function<std::unique_ptr<TextEncoder>(const EncoderSpec&)>;

  static EncoderRegistry& instance() {
    static EncoderRegistry r;
    return r;
  }

  void register_backend(std::string name, ImageFactory image, TextFactory text) {
    std::lock_guard lock(mu_);
    backends_[std::move(name)] = {std::move(image), std::move(text)};
  }

  std::unique_ptr<ImageEncoder> make_image(const EncoderSpec& spec) const {
    if (spec.kind == EncoderKind::kToy) return std::make_unique<ToyImageEncoder>(spec);
    return backend(spec).first(spec);
  }

  std::unique_ptr<TextEncoder> make_text(const EncoderSpec& spec) const {
    if (spec.kind == EncoderKind::kToy) return std::make_unique<ToyTextEncoder>(spec);
    return backend(spec).second(spec);
  }

 private:
  // weights_ref is "<backend>:<locator>"
  const std::pair<ImageFactory, TextFactory>& backend(const EncoderSpec& spec) const {
    std::lock_guard lock(mu_);
    const auto name = spec.weights_ref.substr(0, spec.weights_ref.find(':'));
    auto it = backends_.find(name);
    if (it == backends_.end())
      throw ConfigError("no pretrained encoder backend registered for '" + spec.weights_ref + "'");
    return it->second;
  }

  mutable std::mutex mu_;
  std::map<std::string, std::pair<ImageFactory, TextFactory>> backends_;
};

// Embedding dump: `<stem>.json` header plus `<stem>.bin`, row-major float32 LE,
// one pooled vector per record in split-manifest order.

struct EmbeddingDump {
  std::size_t d = 0;
  Pooling pooling = Pooling::kMean;
  std::string species;
  std::string split;
  std::vector<std::string> records;  // structured image names
  std::vector<Vector> vectors;
};

inline void write_embedding_dump(const fs::path& stem, const EmbeddingDump& dump) {
  if (dump.records.size() != dump.vectors.size()) throw InvalidInputError("dump: record/vector count mismatch");
  nlohmann::ordered_json j;
  j["d"] = dump.d;
  j["count"] = dump.vectors.size();
  j["pooling"] = to_string(dump.pooling);
  j["species"] = dump.species;
  j["split"] = dump.split;
  j["records"] = dump.records;
  std::string bin;
  bin.reserve(dump.vectors.size() * dump.d * 4);
  for (const auto& v : dump.vectors) {
    if (static_cast<std::size_t>(v.size()) != dump.d) throw ShapeError("dump: vector width mismatch");
    for (Eigen::Index i = 0; i < v.size(); ++i) append_f32_le(bin, v(i));
  }
  fs::path header = stem;
  header += ".json";
  fs::path blob = stem;
  blob += ".bin";
  write_file_atomic(blob, bin);
  write_file_atomic(header, j.dump(2) + "\n");
}

inline EmbeddingDump read_embedding_dump(const fs::path& stem) {
  fs::path header = stem;
  header += ".json";
  fs::path blob = stem;
  blob += ".bin";
  const auto j = nlohmann::json::parse(read_file(header));
  EmbeddingDump dump;
  dump.d = j.at("d").get<std::size_t>();
  const auto count = j.at("count").get<std::size_t>();
  dump.pooling = parse_pooling(j.at("pooling").get<std::string>());
  dump.species = j.at("species").get<std::string>();
  dump.split = j.at("split").get<std::string>();
  dump.records = j.at("records").get<std::vector<std::string>>();
  if (dump.records.size() != count) throw SchemaError("records", "count mismatch in");
  const auto bytes = read_file(blob);
  const auto m = read_matrix_f32(bytes, static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dump.d));
  for (Eigen::Index r = 0; r < m.rows(); ++r) dump.vectors.emplace_back(m.row(r).transpose());
  return dump;
}

}  // namespace mfa
