// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Meta-feature adapter: residual MLP experts on both branches, cross-attention
// from image tokens to metadata text tokens, and a scalar sigmoid gate that
// scales the attended metadata before it is added back to the image tokens.
#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "mfa/error.hpp"
#include "mfa/random.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

namespace detail {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline Matrix add_bias(Matrix m, const Matrix& bias) {
  m.rowwise() += bias.row(0);
  return m;
}

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
  return m;
}

/// rows x cols with orthonormal columns (rows >= cols) or rows (rows < cols).
inline Matrix orthogonal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const bool tall = rows >= cols;
  const Eigen::Index big = tall ? rows : cols;
  const Eigen::Index small = tall ? cols : rows;
  Eigen::MatrixXd g(big, small);
  for (Eigen::Index r = 0; r < big; ++r)
    for (Eigen::Index c = 0; c < small; ++c) g(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Fix column signs so the draw is unique given the Gaussian sample.
  const Eigen::MatrixXd rmat = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < small; ++c)
    if (rmat(c, c) < 0) q.col(c) *= -1.0;
  Matrix out = tall ? Matrix(q) : Matrix(q.transpose());
  return out;
}

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace detail

// ---------------------------------------------------------------- experts

/// Two affine layers with GELU between, blended with the input:
/// out = alpha * MLP(x) + (1 - alpha) * x, row-wise.
struct ExpertParams {
  Matrix fc1_weight;  // d x h
  Matrix fc1_bias;    // 1 x h
  Matrix fc2_weight;  // h x d
  Matrix fc2_bias;    // 1 x d
  double alpha = 0.2;

  Eigen::Index dim() const { return fc1_weight.rows(); }
  Eigen::Index hidden() const { return fc1_weight.cols(); }

  /// First layer Kaiming-normal, second layer zero, so MLP(x) = 0 at start.
  static ExpertParams init(Eigen::Index d, Eigen::Index h, double alpha, Rng& rng) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("expert residual ratio must lie in [0, 1]");
    ExpertParams p;
    p.fc1_weight = detail::gaussian(d, h, std::sqrt(2.0 / static_cast<double>(d)), rng);
    p.fc1_bias = Matrix::Zero(1, h);
    p.fc2_weight = Matrix::Zero(h, d);
    p.fc2_bias = Matrix::Zero(1, d);
    p.alpha = alpha;
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".fc1.weight", fc1_weight);
    f(prefix + ".fc1.bias", fc1_bias);
    f(prefix + ".fc2.weight", fc2_weight);
    f(prefix + ".fc2.bias", fc2_bias);
  }
};

struct ExpertCache {
  Matrix input;
  Matrix pre;   // K x h, before GELU
  Matrix act;   // K x h
  bool identity = false;
};

inline Matrix apply_expert(const Matrix& x, const ExpertParams& p, ExpertCache* cache = nullptr) {
  require_shape(x, -1, p.dim(), "expert input");
  if (p.alpha == 0.0) {
    if (cache != nullptr) *cache = {x, {}, {}, true};
    return x;
  }
  Matrix pre = detail::add_bias(x * p.fc1_weight, p.fc1_bias);
  Matrix act = pre.unaryExpr([](double v) { return detail::gelu(v); });
  Matrix mlp = detail::add_bias(act * p.fc2_weight, p.fc2_bias);
  Matrix out = p.alpha * mlp + (1.0 - p.alpha) * x;
  if (cache != nullptr) *cache = {x, std::move(pre), std::move(act), false};
  return out;
}

/// Accumulates parameter gradients into `grad`; returns dL/dx.
inline Matrix expert_backward(const ExpertParams& p, const ExpertCache& cache, const Matrix& d_out,
                              ExpertParams& grad) {
  if (cache.identity) return d_out;
  const Matrix d_mlp = p.alpha * d_out;
  grad.fc2_weight.noalias() += cache.act.transpose() * d_mlp;
  grad.fc2_bias += d_mlp.colwise().sum();
  Matrix d_act = d_mlp * p.fc2_weight.transpose();
  const Matrix d_pre = d_act.cwiseProduct(cache.pre.unaryExpr([](double v) { return detail::gelu_grad(v); }));
  grad.fc1_weight.noalias() += cache.input.transpose() * d_pre;
  grad.fc1_bias += d_pre.colwise().sum();
  return d_pre * p.fc1_weight.transpose() + (1.0 - p.alpha) * d_out;
}

// -------------------------------------------------------- cross-attention

/// Single-head scaled dot-product attention from image tokens (queries) to
/// text tokens (keys/values), with an output projection back to width d.
struct AttentionParams {
  Matrix query;   // d x da
  Matrix key;     // d x da
  Matrix value;   // d x da
  Matrix output;  // da x d

  Eigen::Index dim() const { return query.rows(); }
  Eigen::Index inner() const { return query.cols(); }

  static AttentionParams init(Eigen::Index d, Eigen::Index da, Rng& rng) {
    AttentionParams p;
    p.query = detail::orthogonal(d, da, rng);
    p.key = detail::orthogonal(d, da, rng);
    p.value = detail::orthogonal(d, da, rng);
    p.output = detail::orthogonal(da, d, rng);
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".query", query);
    f(prefix + ".key", key);
    f(prefix + ".value", value);
    f(prefix + ".output", output);
  }
};

struct AttentionResult {
  Matrix weights;   // N x M, rows sum to 1
  Matrix attended;  // N x d, (A V) W_O
};

struct AttentionCache {
  Matrix image, text, q, k, v, a, context;
};

inline AttentionResult cross_attend(const Matrix& image, const Matrix& text, const AttentionParams& p,
                                    AttentionCache* cache = nullptr) {
  require_shape(image, -1, p.dim(), "attention image tokens");
  require_shape(text, -1, p.dim(), "attention text tokens");
  require_shape(p.key, p.dim(), p.inner(), "W_K");
  require_shape(p.value, p.dim(), p.inner(), "W_V");
  require_shape(p.output, p.inner(), p.dim(), "W_O");
  if (image.rows() < 1 || text.rows() < 1) throw ShapeError("attention needs at least one token per side");

  Matrix q = image * p.query;
  Matrix k = text * p.key;
  Matrix v = text * p.value;
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.inner()));
  Matrix logits = (q * k.transpose()) * scale;
  detail::require_finite(logits, "attention logits");
  Matrix a(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    a.row(r) = (logits.row(r).array() - mx).exp().matrix();
    a.row(r) /= a.row(r).sum();
  }
  Matrix context = a * v;
  Matrix attended = context * p.output;
  detail::require_finite(attended, "attended values");
  if (cache != nullptr) *cache = {image, text, std::move(q), std::move(k), std::move(v), a, std::move(context)};
  return {std::move(a), std::move(attended)};
}

/// Accumulates parameter gradients and adds dL/dimage, dL/dtext into the
/// given buffers.
inline void attention_backward(const AttentionParams& p, const AttentionCache& c, const Matrix& d_attended,
                               AttentionParams& grad, Matrix& d_image, Matrix& d_text) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.inner()));
  grad.output.noalias() += c.context.transpose() * d_attended;
  const Matrix d_context = d_attended * p.output.transpose();
  const Matrix d_a = d_context * c.v.transpose();
  const Matrix d_v = c.a.transpose() * d_context;
  Matrix d_logits(c.a.rows(), c.a.cols());
  for (Eigen::Index r = 0; r < c.a.rows(); ++r) {
    const double dot = c.a.row(r).dot(d_a.row(r));
    d_logits.row(r) = c.a.row(r).cwiseProduct((d_a.row(r).array() - dot).matrix());
  }
  const Matrix d_q = d_logits * c.k * scale;
  const Matrix d_k = d_logits.transpose() * c.q * scale;
  grad.query.noalias() += c.image.transpose() * d_q;
  grad.key.noalias() += c.text.transpose() * d_k;
  grad.value.noalias() += c.text.transpose() * d_v;
  d_image.noalias() += d_q * p.query.transpose();
  d_text.noalias() += d_k * p.key.transpose() + d_v * p.value.transpose();
}

// ------------------------------------------------------------------- gate

/// Gate MLP over [mean(image tokens); mean(text tokens)]:
/// linear -> layer norm -> GELU -> linear -> sigmoid.
struct GateParams {
  Matrix fc1_weight;  // 2d x g
  Matrix fc1_bias;    // 1 x g
  Matrix norm_gain;   // 1 x g
  Matrix norm_bias;   // 1 x g
  Matrix fc2_weight;  // g x 1
  Matrix fc2_bias;    // 1 x 1
  double norm_eps = 1e-5;

  Eigen::Index dim() const { return fc1_weight.rows() / 2; }

  /// Output bias -2 starts the gate near 0.12.
  static GateParams init(Eigen::Index d, Eigen::Index g, Rng& rng, double initial_bias = -2.0) {
    GateParams p;
    p.fc1_weight = detail::gaussian(2 * d, g, 1.0 / std::sqrt(static_cast<double>(2 * d)), rng);
    p.fc1_bias = Matrix::Zero(1, g);
    p.norm_gain = Matrix::Ones(1, g);
    p.norm_bias = Matrix::Zero(1, g);
    p.fc2_weight = detail::gaussian(g, 1, 0.1 / std::sqrt(static_cast<double>(g)), rng);
    p.fc2_bias = Matrix::Constant(1, 1, initial_bias);
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".fc1.weight", fc1_weight);
    f(prefix + ".fc1.bias", fc1_bias);
    f(prefix + ".norm.gain", norm_gain);
    f(prefix + ".norm.bias", norm_bias);
    f(prefix + ".fc2.weight", fc2_weight);
    f(prefix + ".fc2.bias", fc2_bias);
  }
};

struct GateCache {
  Matrix input;  // 1 x 2d
  Matrix normed;
  Matrix pre_act;
  Matrix act;
  double inv_std = 0.0;
  double gamma = 0.0;
  Eigen::Index image_rows = 0, text_rows = 0;
};

inline double gate(const Matrix& image, const Matrix& text, const GateParams& p, GateCache* cache = nullptr) {
  const Eigen::Index d = p.dim();
  require_shape(image, -1, d, "gate image tokens");
  require_shape(text, -1, d, "gate text tokens");
  if (image.rows() < 1 || text.rows() < 1) throw ShapeError("gate needs at least one token per side");
  Matrix input(1, 2 * d);
  input.leftCols(d) = image.colwise().mean();
  input.rightCols(d) = text.colwise().mean();
  const Matrix hidden = input * p.fc1_weight + p.fc1_bias;
  const double mu = hidden.mean();
  const double var = (hidden.array() - mu).square().mean();
  const double inv_std = 1.0 / std::sqrt(var + p.norm_eps);
  Matrix normed = ((hidden.array() - mu) * inv_std).matrix();
  Matrix pre_act = normed.cwiseProduct(p.norm_gain) + p.norm_bias;
  Matrix act = pre_act.unaryExpr([](double v) { return detail::gelu(v); });
  const double z = (act * p.fc2_weight)(0, 0) + p.fc2_bias(0, 0);
  if (!std::isfinite(z)) throw NumericError("non-finite gate logit");
  const double gamma = detail::sigmoid(z);
  if (cache != nullptr)
    *cache = {input, std::move(normed), std::move(pre_act), std::move(act), inv_std, gamma, image.rows(), text.rows()};
  return gamma;
}

inline void gate_backward(const GateParams& p, const GateCache& c, double d_gamma, GateParams& grad,
                          Matrix& d_image, Matrix& d_text) {
  const Eigen::Index d = p.dim();
  const double dz = d_gamma * c.gamma * (1.0 - c.gamma);
  grad.fc2_weight.noalias() += c.act.transpose() * dz;
  grad.fc2_bias(0, 0) += dz;
  const Matrix d_act = dz * p.fc2_weight.transpose();
  const Matrix d_pre = d_act.cwiseProduct(c.pre_act.unaryExpr([](double v) { return detail::gelu_grad(v); }));
  grad.norm_gain += d_pre.cwiseProduct(c.normed);
  grad.norm_bias += d_pre;
  const Matrix d_norm = d_pre.cwiseProduct(p.norm_gain);
  const double mean_dn = d_norm.mean();
  const double mean_dn_n = d_norm.cwiseProduct(c.normed).mean();
  const Matrix d_hidden = (c.inv_std * (d_norm.array() - mean_dn - c.normed.array() * mean_dn_n)).matrix();
  grad.fc1_weight.noalias() += c.input.transpose() * d_hidden;
  grad.fc1_bias += d_hidden;
  const Matrix d_input = d_hidden * p.fc1_weight.transpose();
  d_image.rowwise() += d_input.leftCols(d).row(0) / static_cast<double>(c.image_rows);
  d_text.rowwise() += d_input.rightCols(d).row(0) / static_cast<double>(c.text_rows);
}

// ----------------------------------------------------------------- fusion

struct FusedEmbedding {
  Matrix tokens;  // N x d
  Vector pooled;
  double gate_value = 0.0;
};

struct FuseOptions {
  /// Replaces the learned gate value, e.g. 0 for the metadata-off ablation.
  std::optional<double> gate_override;
};

struct FuseCache {
  AttentionCache attention;
  GateCache gate;
  Matrix attended;
  double gamma = 0.0;
  bool gate_learned = true;
  bool skipped = false;  // gamma forced to exactly 0
};

/// tokens = gamma * attended + image; pooled is the token mean.
inline FusedEmbedding fuse(const Matrix& image, const Matrix& text, const AttentionParams& attn,
                           const GateParams& gp, const FuseOptions& opts = {}, FuseCache* cache = nullptr) {
  if (opts.gate_override && *opts.gate_override == 0.0) {
    require_shape(text, -1, image.cols(), "fusion text tokens");
    if (cache != nullptr) {
      *cache = {};
      cache->skipped = true;
      cache->gate_learned = false;
    }
    return {image, mean_rows(image), 0.0};
  }
  AttentionCache ac;
  GateCache gc;
  auto res = cross_attend(image, text, attn, cache != nullptr ? &ac : nullptr);
  double gamma;
  if (opts.gate_override) {
    gamma = *opts.gate_override;
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gate override must lie in [0, 1]");
  } else {
    gamma = gate(image, text, gp, cache != nullptr ? &gc : nullptr);
  }
  Matrix tokens = gamma * res.attended + image;
  Vector pooled = mean_rows(tokens);
  if (cache != nullptr) {
    cache->attention = std::move(ac);
    cache->gate = std::move(gc);
    cache->attended = std::move(res.attended);
    cache->gamma = gamma;
    cache->gate_learned = !opts.gate_override.has_value();
    cache->skipped = false;
  }
  return {std::move(tokens), std::move(pooled), gamma};
}

inline void fuse_backward(const AttentionParams& attn, const GateParams& gp, const FuseCache& c,
                          const Matrix& d_tokens, AttentionParams& attn_grad, GateParams& gate_grad, Matrix& d_image,
                          Matrix& d_text) {
  d_image += d_tokens;
  if (c.skipped) return;
  attention_backward(attn, c.attention, c.gamma * d_tokens, attn_grad, d_image, d_text);
  if (c.gate_learned) {
    const double d_gamma = d_tokens.cwiseProduct(c.attended).sum();
    gate_backward(gp, c.gate, d_gamma, gate_grad, d_image, d_text);
  }
}

// ------------------------------------------------------------ parameters

struct AdapterDims {
  Eigen::Index d = 32;
  Eigen::Index expert_hidden = 16;
  Eigen::Index attention_inner = 32;
  Eigen::Index gate_hidden = 32;
};

struct MfaParameters {
  ExpertParams text_expert;
  ExpertParams image_expert;
  AttentionParams attention;
  GateParams gate;

  static MfaParameters init(const AdapterDims& dims, double alpha, std::uint64_t seed) {
    MfaParameters p;
    Rng te = Rng::derived(seed, "mfa/text_expert");
    Rng ie = Rng::derived(seed, "mfa/image_expert");
    Rng at = Rng::derived(seed, "mfa/attention");
    Rng ga = Rng::derived(seed, "mfa/gate");
    p.text_expert = ExpertParams::init(dims.d, dims.expert_hidden, alpha, te);
    p.image_expert = ExpertParams::init(dims.d, dims.expert_hidden, alpha, ie);
    p.attention = AttentionParams::init(dims.d, dims.attention_inner, at);
    p.gate = GateParams::init(dims.d, dims.gate_hidden, ga);
    return p;
  }

  /// Stable tensor names; checkpoints key on these.
  template <typename F>
  void visit(F&& f) {
    text_expert.visit("text_expert", f);
    image_expert.visit("image_expert", f);
    attention.visit("attention", f);
    gate.visit("gate", f);
  }

  MfaParameters zeros_like() const {
    MfaParameters z = *this;
    z.visit([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
  }
};

}  // namespace mfa
