// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mfa/error.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

enum class DistanceMetric { kCosine, kEuclidean };
enum class Protocol { kIntra, kLodo };

inline std::string_view to_string(DistanceMetric m) { return m == DistanceMetric::kCosine ? "cosine" : "euclidean"; }
inline DistanceMetric parse_metric(std::string_view s) {
  if (s == "cosine") return DistanceMetric::kCosine;
  if (s == "euclidean") return DistanceMetric::kEuclidean;
  throw ConfigError("unknown metric '" + std::string(s) + "'");
}
inline std::string_view to_string(Protocol p) { return p == Protocol::kIntra ? "intra" : "lodo"; }
inline Protocol parse_protocol(std::string_view s) {
  if (s == "intra") return Protocol::kIntra;
  if (s == "lodo") return Protocol::kLodo;
  throw ConfigError("unknown protocol '" + std::string(s) + "'");
}

/// Labeled embeddings on one side of a retrieval problem.
struct RetrievalSet {
  std::vector<Vector> vectors;
  std::vector<std::int64_t> ids;
  std::vector<std::string> cams;
};

struct DistanceMatrix {
  Matrix values;  // Q x G
  DistanceMetric metric = DistanceMetric::kCosine;
  std::vector<std::int64_t> query_ids, gallery_ids;
  std::vector<std::string> query_cams, gallery_cams;
};

/// Exact pairwise distances. Cosine distance is 1 - cos, clamped to [0, 2].
/// Rows are independent, so `threads` > 1 splits queries without changing
/// any value.
inline DistanceMatrix distance_matrix(const RetrievalSet& query, const RetrievalSet& gallery,
                                      DistanceMetric metric = DistanceMetric::kCosine, unsigned threads = 1) {
  const auto nq = static_cast<Eigen::Index>(query.vectors.size());
  const auto ng = static_cast<Eigen::Index>(gallery.vectors.size());
  if (query.ids.size() != query.vectors.size() || gallery.ids.size() != gallery.vectors.size())
    throw ShapeError("retrieval set: ids do not match vectors");
  const Eigen::Index d = nq > 0 ? query.vectors[0].size() : (ng > 0 ? gallery.vectors[0].size() : 0);
  for (const auto* set : {&query, &gallery})
    for (const auto& v : set->vectors) {
      if (v.size() != d) throw ShapeError("distance matrix: embedding width mismatch");
      if (!v.allFinite()) throw NumericError("distance matrix: non-finite embedding");
      if (metric == DistanceMetric::kCosine && v.norm() == 0.0)
        throw InvalidInputError("cosine distance of a zero vector");
    }

  auto normalized = [&](const std::vector<Vector>& vs) {
    std::vector<Vector> out;
    out.reserve(vs.size());
    for (const auto& v : vs) out.push_back(metric == DistanceMetric::kCosine ? Vector(v / v.norm()) : v);
    return out;
  };
  const auto qn = normalized(query.vectors);
  const auto gn = normalized(gallery.vectors);

  DistanceMatrix out;
  out.values.resize(nq, ng);
  out.metric = metric;
  auto rows = [&](Eigen::Index lo, Eigen::Index hi) {
    for (Eigen::Index i = lo; i < hi; ++i)
      for (Eigen::Index j = 0; j < ng; ++j) {
        const auto& a = qn[static_cast<std::size_t>(i)];
        const auto& b = gn[static_cast<std::size_t>(j)];
        out.values(i, j) = metric == DistanceMetric::kCosine ? std::clamp(1.0 - a.dot(b), 0.0, 2.0) : (a - b).norm();
      }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<Eigen::Index>(nq, 1))));
  if (threads == 1) {
    rows(0, nq);
  } else {
    std::vector<std::jthread> pool;
    const Eigen::Index chunk = (nq + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const Eigen::Index lo = t * chunk;
      const Eigen::Index hi = std::min(nq, lo + chunk);
      if (lo < hi) pool.emplace_back(rows, lo, hi);
    }
  }
  out.query_ids = query.ids;
  out.gallery_ids = gallery.ids;
  out.query_cams = query.cams;
  out.gallery_cams = gallery.cams;
  return out;
}

struct RankingOptions {
  /// Drop same-identity, same-camera gallery items from each query's list.
  bool exclude_same_camera = false;
};

namespace detail {

inline bool same_camera(const DistanceMatrix& dm, std::size_t q, std::size_t g) {
  return !dm.query_cams.empty() && !dm.gallery_cams.empty() && dm.query_cams[q] == dm.gallery_cams[g];
}

/// 1-based ranks of the relevant gallery items of query `q`, ascending,
/// under the order (distance, gallery index). Counts how many irrelevant
/// items precede each relevant one via binary search over the sorted
/// relevant keys, O(G log R) per query.
inline std::vector<std::size_t> relevant_ranks(const DistanceMatrix& dm, std::size_t q, const RankingOptions& opts) {
  const auto ng = static_cast<std::size_t>(dm.values.cols());
  using Key = std::pair<double, std::size_t>;
  std::vector<Key> relevant;
  for (std::size_t g = 0; g < ng; ++g) {
    if (dm.gallery_ids[g] != dm.query_ids[q]) continue;
    if (opts.exclude_same_camera && same_camera(dm, q, g)) continue;
    relevant.emplace_back(dm.values(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(g)), g);
  }
  std::sort(relevant.begin(), relevant.end());
  std::vector<std::size_t> ahead(relevant.size() + 1, 0);
  for (std::size_t g = 0; g < ng; ++g) {
    if (dm.gallery_ids[g] == dm.query_ids[q]) continue;
    const Key key{dm.values(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(g)), g};
    const auto pos = static_cast<std::size_t>(std::lower_bound(relevant.begin(), relevant.end(), key) - relevant.begin());
    ++ahead[pos];
  }
  std::vector<std::size_t> ranks(relevant.size());
  std::size_t irrelevant_before = 0;
  for (std::size_t k = 0; k < relevant.size(); ++k) {
    irrelevant_before += ahead[k];
    ranks[k] = k + 1 + irrelevant_before;
  }
  return ranks;
}

inline void check_query_coverage(const DistanceMatrix& dm) {
  const std::set<std::int64_t> gallery(dm.gallery_ids.begin(), dm.gallery_ids.end());
  for (auto id : dm.query_ids)
    if (!gallery.contains(id)) throw InvalidInputError("query identity " + std::to_string(id) + " absent from gallery");
  if (dm.query_ids.empty()) throw InvalidInputError("no queries to evaluate");
}

}  // namespace detail

/// Mean average precision in percent. Queries left without any relevant
/// item by camera exclusion are skipped.
inline double compute_map(const DistanceMatrix& dm, const RankingOptions& opts = {}) {
  detail::check_query_coverage(dm);
  double sum = 0.0;
  std::size_t valid = 0;
  for (std::size_t q = 0; q < dm.query_ids.size(); ++q) {
    const auto ranks = detail::relevant_ranks(dm, q, opts);
    if (ranks.empty()) continue;
    double ap = 0.0;
    for (std::size_t k = 0; k < ranks.size(); ++k)
      ap += static_cast<double>(k + 1) / static_cast<double>(ranks[k]);
    sum += ap / static_cast<double>(ranks.size());
    ++valid;
  }
  if (valid == 0) throw InvalidInputError("no query has a relevant gallery item");
  return 100.0 * sum / static_cast<double>(valid);
}

/// CMC[k-1] = percent of queries whose first correct match is within top-k.
inline std::vector<double> compute_cmc(const DistanceMatrix& dm, std::size_t k_max, const RankingOptions& opts = {}) {
  detail::check_query_coverage(dm);
  if (k_max < 1) throw InvalidInputError("k_max must be >= 1");
  std::vector<double> hits(k_max, 0.0);
  std::size_t valid = 0;
  for (std::size_t q = 0; q < dm.query_ids.size(); ++q) {
    const auto ranks = detail::relevant_ranks(dm, q, opts);
    if (ranks.empty()) continue;
    ++valid;
    for (std::size_t k = ranks.front(); k <= k_max; ++k) hits[k - 1] += 1.0;
  }
  if (valid == 0) throw InvalidInputError("no query has a relevant gallery item");
  for (auto& h : hits) h = 100.0 * h / static_cast<double>(valid);
  return hits;
}

struct ConfidenceInterval {
  double map_half_width = 0.0;
  std::vector<double> cmc_half_width;
};

struct EvalReport {
  double map = 0.0;
  std::vector<double> cmc;
  std::size_t n_queries = 0;
  Protocol protocol = Protocol::kIntra;
  std::optional<ConfidenceInterval> ci95;
  std::size_t runs = 1;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["protocol"] = to_string(protocol);
    j["runs"] = runs;
    j["n_queries"] = n_queries;
    j["mAP"] = map;
    j["cmc"] = cmc;
    if (ci95) {
      j["ci95"] = {{"mAP", ci95->map_half_width}, {"cmc", ci95->cmc_half_width}};
    }
    return j;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport r;
    r.protocol = parse_protocol(j.at("protocol").get<std::string>());
    r.runs = j.value("runs", std::size_t{1});
    r.n_queries = j.at("n_queries").get<std::size_t>();
    r.map = j.at("mAP").get<double>();
    r.cmc = j.at("cmc").get<std::vector<double>>();
    if (j.contains("ci95")) {
      r.ci95 = ConfidenceInterval{j["ci95"].at("mAP").get<double>(), j["ci95"].at("cmc").get<std::vector<double>>()};
    }
    return r;
  }
};

inline EvalReport evaluate(const DistanceMatrix& dm, std::size_t k_max = 20, Protocol protocol = Protocol::kIntra,
                           const RankingOptions& opts = {}) {
  EvalReport r;
  r.protocol = protocol;
  r.map = compute_map(dm, opts);
  r.cmc = compute_cmc(dm, std::min<std::size_t>(k_max, static_cast<std::size_t>(std::max<Eigen::Index>(dm.values.cols(), 1))), opts);
  r.n_queries = dm.query_ids.size();
  return r;
}

/// Two-sided Student-t quantile t_{1 - (1 - level)/2, dof}.
inline double student_t_quantile(double level, std::size_t dof) {
  boost::math::students_t dist(static_cast<double>(dof));
  return boost::math::quantile(dist, 1.0 - (1.0 - level) / 2.0);
}

/// Mean and sample standard deviation -> (mean, t * s / sqrt(n)).
inline std::pair<double, double> mean_ci95(const std::vector<double>& xs) {
  if (xs.size() < 2) throw InvalidInputError("a confidence interval needs at least two runs");
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double s = std::sqrt(ss / (n - 1.0));
  return {mean, student_t_quantile(0.95, xs.size() - 1) * s / std::sqrt(n)};
}

/// Aggregates independent seeded runs into a mean report with 95% Student-t
/// half-widths per metric.
inline EvalReport aggregate_runs(const std::vector<EvalReport>& reports) {
  if (reports.size() < 2) throw InvalidInputError("aggregate_runs needs at least two runs");
  for (const auto& r : reports) {
    if (r.protocol != reports.front().protocol) throw InvalidInputError("aggregate_runs: mixed protocols");
    if (r.cmc.size() != reports.front().cmc.size()) throw InvalidInputError("aggregate_runs: CMC length mismatch");
  }
  EvalReport out;
  out.protocol = reports.front().protocol;
  out.runs = reports.size();
  out.n_queries = reports.front().n_queries;
  ConfidenceInterval ci;
  std::vector<double> xs;
  for (const auto& r : reports) xs.push_back(r.map);
  std::tie(out.map, ci.map_half_width) = mean_ci95(xs);
  for (std::size_t k = 0; k < reports.front().cmc.size(); ++k) {
    xs.clear();
    for (const auto& r : reports) xs.push_back(r.cmc[k]);
    auto [m, hw] = mean_ci95(xs);
    out.cmc.push_back(m);
    ci.cmc_half_width.push_back(hw);
  }
  out.ci95 = std::move(ci);
  return out;
}

}  // namespace mfa
