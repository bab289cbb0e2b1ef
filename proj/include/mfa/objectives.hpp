// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mfa/error.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

enum class SimilarityKind { kCosine, kDot };
enum class TripletMining { kBatchHard, kAll };

struct LossWeights {
  double identity = 1.0;
  double triplet = 1.0;
  double attention = 1.0;
};

struct LossConfig {
  double temperature = 0.07;
  double margin = 0.3;
  LossWeights weights;
  double label_smoothing = 0.1;
  bool symmetric = false;
  bool learnable_temperature = false;
  TripletMining mining = TripletMining::kBatchHard;
  SimilarityKind similarity = SimilarityKind::kCosine;

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("loss temperature must be > 0");
    if (!(margin >= 0.0)) throw ConfigError("triplet margin must be >= 0");
    for (double w : {weights.identity, weights.triplet, weights.attention})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
    if (weights.identity + weights.triplet + weights.attention <= 0.0)
      throw ConfigError("at least one loss weight must be positive");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
  }
};

struct LossReport {
  double attention = 0.0;
  double identity = 0.0;
  double triplet = 0.0;
  double total = 0.0;
};

inline double total_loss(const LossReport& parts, const LossWeights& w) {
  return w.identity * parts.identity + w.triplet * parts.triplet + w.attention * parts.attention;
}

// ------------------------------------------------------------ similarity

/// s(a_i, b_j) for all pairs of rows. Cosine rejects zero rows.
inline Matrix similarity_matrix(const Matrix& a, const Matrix& b, SimilarityKind kind) {
  if (a.cols() != b.cols()) throw ShapeError("similarity: width mismatch");
  if (kind == SimilarityKind::kDot) return a * b.transpose();
  const Vector na = a.rowwise().norm();
  const Vector nb = b.rowwise().norm();
  if ((na.array() == 0.0).any() || (nb.array() == 0.0).any())
    throw InvalidInputError("cosine similarity of a zero vector");
  return na.cwiseInverse().asDiagonal() * (a * b.transpose()) * nb.cwiseInverse().asDiagonal();
}

/// Back-propagates dL/dS through similarity_matrix.
inline void similarity_backward(const Matrix& a, const Matrix& b, const Matrix& s, const Matrix& d_s,
                                SimilarityKind kind, Matrix& d_a, Matrix& d_b) {
  if (kind == SimilarityKind::kDot) {
    d_a += d_s * b;
    d_b += d_s.transpose() * a;
    return;
  }
  const Vector na = a.rowwise().norm();
  const Vector nb = b.rowwise().norm();
  const Matrix ua = na.cwiseInverse().asDiagonal() * a;
  const Matrix ub = nb.cwiseInverse().asDiagonal() * b;
  // d s_ij / d a_i = (ub_j - s_ij ua_i) / |a_i|
  const Matrix gs = d_s.cwiseProduct(s);
  d_a += na.cwiseInverse().asDiagonal() * (d_s * ub - gs.rowwise().sum().asDiagonal() * ua);
  d_b += nb.cwiseInverse().asDiagonal() * (d_s.transpose() * ua - gs.colwise().sum().transpose().asDiagonal() * ub);
}

// ------------------------------------------------------ attention loss

struct AttentionLossGrad {
  Matrix d_text;
  Matrix d_image;
  double d_temperature = 0.0;
};

/// Row-wise InfoNCE on a similarity matrix: mean over i of
/// -log softmax_j(S_ij / tau)[i]. Returns dL/dS and dL/dtau when asked.
inline double contrastive_from_similarity(const Matrix& s, double tau, bool symmetric, Matrix* d_s = nullptr,
                                          double* d_tau = nullptr) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
  if (s.rows() != s.cols() || s.rows() < 1) throw ShapeError("contrastive loss needs a square B x B matrix");
  const Eigen::Index b = s.rows();
  auto directional = [&](const Matrix& logits_src, Matrix* grad) {
    const Matrix logits = logits_src / tau;
    double loss = 0.0;
    if (grad != nullptr) grad->setZero(b, b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const double mx = logits.row(i).maxCoeff();
      const RowVector e = (logits.row(i).array() - mx).exp().matrix();
      const double z = e.sum();
      loss += (mx + std::log(z)) - logits(i, i);
      if (grad != nullptr) {
        grad->row(i) = e / z;
        (*grad)(i, i) -= 1.0;
      }
    }
    if (grad != nullptr) *grad /= static_cast<double>(b);  // dL/dlogits
    return loss / static_cast<double>(b);
  };

  Matrix g1, g2;
  const bool want = d_s != nullptr || d_tau != nullptr;
  double loss = directional(s, want ? &g1 : nullptr);
  if (symmetric) {
    loss = 0.5 * (loss + directional(s.transpose(), want ? &g2 : nullptr));
    if (want) g1 = 0.5 * (g1 + g2.transpose());
  }
  if (d_s != nullptr) *d_s = g1 / tau;
  if (d_tau != nullptr) *d_tau = -(g1.cwiseProduct(s)).sum() / (tau * tau);
  return loss;
}

/// Contrastive loss between matched text and fused image embeddings; the
/// softmax for text i runs over all images j in the batch.
inline double attention_loss(const Matrix& text, const Matrix& image, SimilarityKind kind, double tau,
                             bool symmetric = false, AttentionLossGrad* grad = nullptr) {
  if (text.rows() != image.rows() || text.rows() < 1) throw ShapeError("attention loss: batch mismatch");
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
  const Matrix s = similarity_matrix(text, image, kind);
  Matrix d_s;
  double d_tau = 0.0;
  const double loss = contrastive_from_similarity(s, tau, symmetric, grad ? &d_s : nullptr, grad ? &d_tau : nullptr);
  if (grad != nullptr) {
    grad->d_text = Matrix::Zero(text.rows(), text.cols());
    grad->d_image = Matrix::Zero(image.rows(), image.cols());
    similarity_backward(text, image, s, d_s, kind, grad->d_text, grad->d_image);
    grad->d_temperature = d_tau;
  }
  return loss;
}

// ------------------------------------------------------- identity loss

/// Mean cross-entropy with label smoothing epsilon.
inline double identity_loss(const Matrix& logits, std::span<const std::int64_t> labels, double epsilon = 0.1,
                            Matrix* d_logits = nullptr) {
  const Eigen::Index b = logits.rows();
  const Eigen::Index c = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != b || b < 1) throw ShapeError("identity loss: label count mismatch");
  if (d_logits != nullptr) d_logits->setZero(b, c);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) throw InvalidInputError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    const double mx = logits.row(i).maxCoeff();
    const RowVector e = (logits.row(i).array() - mx).exp().matrix();
    const double lse = mx + std::log(e.sum());
    for (Eigen::Index k = 0; k < c; ++k) {
      const double q = (k == y ? 1.0 - epsilon : 0.0) + epsilon / static_cast<double>(c);
      loss -= q * (logits(i, k) - lse);
      if (d_logits != nullptr) (*d_logits)(i, k) = e(k) / e.sum() - q;
    }
  }
  if (d_logits != nullptr) *d_logits /= static_cast<double>(b);
  return loss / static_cast<double>(b);
}

// -------------------------------------------------------- triplet loss

inline Matrix euclidean_distances(const Matrix& e) {
  const Eigen::Index b = e.rows();
  Matrix d(b, b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) d(i, j) = (e.row(i) - e.row(j)).norm();
  return d;
}

/// Hinge triplet loss on Euclidean distances. Batch-hard uses each
/// anchor's farthest positive and nearest negative (first index on ties);
/// "all" averages the hinge over every valid (anchor, positive, negative).
inline double triplet_loss(const Matrix& emb, std::span<const std::int64_t> labels, double margin,
                           TripletMining mining = TripletMining::kBatchHard, Matrix* d_emb = nullptr) {
  const Eigen::Index b = emb.rows();
  if (static_cast<Eigen::Index>(labels.size()) != b || b < 1) throw ShapeError("triplet loss: label count mismatch");
  std::map<std::int64_t, int> counts;
  for (auto l : labels) ++counts[l];
  for (const auto& [id, n] : counts) {
    if (n < 2 && mining == TripletMining::kBatchHard)
      throw InvalidInputError("identity " + std::to_string(id) + " has a single sample; batch-hard mining needs two");
  }
  if (counts.size() < 2) throw InvalidInputError("triplet loss needs at least two identities");

  const Matrix dist = euclidean_distances(emb);
  if (d_emb != nullptr) d_emb->setZero(b, emb.cols());
  auto push = [&](Eigen::Index i, Eigen::Index j, double w) {
    if (d_emb == nullptr || dist(i, j) == 0.0) return;
    const RowVector g = (emb.row(i) - emb.row(j)) * (w / dist(i, j));
    d_emb->row(i) += g;
    d_emb->row(j) -= g;
  };
  auto lab = [&](Eigen::Index i) { return labels[static_cast<std::size_t>(i)]; };

  double loss = 0.0;
  if (mining == TripletMining::kBatchHard) {
    for (Eigen::Index a = 0; a < b; ++a) {
      Eigen::Index pos = -1, neg = -1;
      for (Eigen::Index j = 0; j < b; ++j) {
        if (j == a) continue;
        if (lab(j) == lab(a)) {
          if (pos < 0 || dist(a, j) > dist(a, pos)) pos = j;
        } else if (neg < 0 || dist(a, j) < dist(a, neg)) {
          neg = j;
        }
      }
      const double h = dist(a, pos) - dist(a, neg) + margin;
      if (h > 0.0) {
        loss += h;
        push(a, pos, 1.0 / static_cast<double>(b));
        push(a, neg, -1.0 / static_cast<double>(b));
      }
    }
    return loss / static_cast<double>(b);
  }

  std::size_t n_triplets = 0;
  for (Eigen::Index a = 0; a < b; ++a)
    for (Eigen::Index p = 0; p < b; ++p)
      if (p != a && lab(p) == lab(a))
        for (Eigen::Index n = 0; n < b; ++n)
          if (lab(n) != lab(a)) ++n_triplets;
  if (n_triplets == 0) return 0.0;
  const double w = 1.0 / static_cast<double>(n_triplets);
  for (Eigen::Index a = 0; a < b; ++a)
    for (Eigen::Index p = 0; p < b; ++p) {
      if (p == a || lab(p) != lab(a)) continue;
      for (Eigen::Index n = 0; n < b; ++n) {
        if (lab(n) == lab(a)) continue;
        const double h = dist(a, p) - dist(a, n) + margin;
        if (h > 0.0) {
          loss += h * w;
          push(a, p, w);
          push(a, n, -w);
        }
      }
    }
  return loss;
}

}  // namespace mfa
