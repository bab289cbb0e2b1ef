// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "mfa/error.hpp"
#include "mfa/random.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

struct TsneOptions {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  std::size_t exaggeration_iterations = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  std::uint64_t seed = 0;
};

namespace detail {

/// Row-conditional affinities with per-row bandwidth found by bisection on
/// the entropy, symmetrized and normalized to sum 1.
inline Matrix tsne_affinities(const Matrix& x, double perplexity) {
  const Eigen::Index n = x.rows();
  Matrix d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  const double target = std::log(perplexity);
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = INFINITY;
    for (int it = 0; it < 200; ++it) {
      double min_d = INFINITY;
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) min_d = std::min(min_d, d2(i, j));
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * (d2(i, j) - min_d));
        p(i, j) = w;
        sum += w;
        weighted += w * (d2(i, j) - min_d);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      p.row(i) /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
  }
  Matrix sym = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  return sym.cwiseMax(1e-12);
}

}  // namespace detail

/// Exact t-SNE to two dimensions. Deterministic for a given seed.
inline Matrix tsne(const Matrix& x, const TsneOptions& opts = {}) {
  const Eigen::Index n = x.rows();
  if (!(opts.perplexity > 0.0)) throw ConfigError("perplexity must be > 0");
  if (static_cast<double>(n) < 3.0 * opts.perplexity) {
    throw InvalidInputError("t-SNE needs at least 3 * perplexity points (" + std::to_string(n) + " given, perplexity " +
                            std::to_string(opts.perplexity) + ")");
  }
  if (!x.allFinite()) throw NumericError("t-SNE input is not finite");
  const Matrix p = detail::tsne_affinities(x, opts.perplexity);

  Rng rng = Rng::derived(opts.seed, "tsne/init");
  Matrix y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < 2; ++c) y(i, c) = 1e-4 * rng.normal();
  Matrix velocity = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix num(n, n);
  Matrix grad(n, 2);

  for (std::size_t it = 0; it < opts.iterations; ++it) {
    const double exag = it < opts.exaggeration_iterations ? opts.exaggeration : 1.0;
    const double momentum = it < opts.exaggeration_iterations ? 0.5 : 0.8;
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double v = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        num(i, j) = num(j, i) = v;
        z += 2.0 * v;
      }
    }
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / z, 1e-12);
        const double coeff = 4.0 * (exag * p(i, j) - q) * num(i, j);
        grad.row(i) += coeff * (y.row(i) - y.row(j));
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < 2; ++c) {
        const bool same_sign = (grad(i, c) > 0.0) == (velocity(i, c) > 0.0);
        gains(i, c) = same_sign ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
        velocity(i, c) = momentum * velocity(i, c) - opts.learning_rate * gains(i, c) * grad(i, c);
        y(i, c) += velocity(i, c);
      }
    }
    const RowVector centre = y.colwise().mean();
    y.rowwise() -= centre;
  }
  return y;
}

/// "x,y,identity" rows with a header line.
inline std::string tsne_csv(const Matrix& y, const std::vector<std::int64_t>& identities) {
  if (static_cast<std::size_t>(y.rows()) != identities.size()) throw InvalidInputError("t-SNE: label count mismatch");
  std::string out = "x,y,identity\n";
  char buf[96];
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%lld\n", y(i, 0), y(i, 1),
                  static_cast<long long>(identities[static_cast<std::size_t>(i)]));
    out += buf;
  }
  return out;
}

/// Mean silhouette coefficient under Euclidean distance.
inline double silhouette_score(const Matrix& y, const std::vector<std::int64_t>& labels) {
  const Eigen::Index n = y.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::map<std::int64_t, std::pair<double, std::size_t>> acc;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      auto& [sum, count] = acc[labels[static_cast<std::size_t>(j)]];
      sum += (y.row(i) - y.row(j)).norm();
      ++count;
    }
    const auto own = labels[static_cast<std::size_t>(i)];
    const double a = acc.count(own) ? acc[own].first / static_cast<double>(acc[own].second) : 0.0;
    double b = INFINITY;
    for (const auto& [label, sc] : acc)
      if (label != own) b = std::min(b, sc.first / static_cast<double>(sc.second));
    if (!acc.count(own) || std::isinf(b)) continue;
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace mfa
