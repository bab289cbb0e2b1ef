// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mfa/error.hpp"

namespace mfa {

// All numerics run in double precision; serialized tensors are float32.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, std::string_view what) {
  if ((rows >= 0 && m.rows() != rows) || (cols >= 0 && m.cols() != cols)) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  }
}

/// Mean over rows, as a column vector.
inline Vector mean_rows(const Matrix& m) { return m.colwise().mean().transpose(); }

enum class Pooling { kMean, kFirstToken };

inline std::string_view to_string(Pooling p) { return p == Pooling::kMean ? "mean" : "first"; }
inline Pooling parse_pooling(std::string_view s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "first") return Pooling::kFirstToken;
  throw ConfigError("unknown pooling '" + std::string(s) + "'");
}

/// Pooled vector of a token matrix: mean over rows or the first row.
inline Vector pool(const Matrix& tokens, Pooling p) {
  if (tokens.rows() < 1) throw ShapeError("pooling needs at least one token");
  return p == Pooling::kMean ? mean_rows(tokens) : Vector(tokens.row(0).transpose());
}

/// Round every entry through float32, the precision of every on-disk tensor.
inline Matrix round_to_float(const Matrix& m) {
  return m.cast<float>().cast<double>();
}
inline Vector round_to_float(const Vector& v) { return v.cast<float>().cast<double>(); }

// Little-endian float32 encoding.

inline void append_f32_le(std::string& out, double value) {
  const auto f = static_cast<float>(value);
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

inline void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t read_u32_le(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void append_matrix_f32(std::string& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) append_f32_le(out, m(r, c));
}

inline Matrix read_matrix_f32(std::string_view bytes, Eigen::Index rows, Eigen::Index cols) {
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * 4) {
    throw IoError("tensor blob size mismatch");
  }
  Matrix m(rows, cols);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_f32_le(p + 4 * (r * cols + c));
  return m;
}

/// 64-bit FNV-1a, used for reproducibility fingerprints.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace mfa
