// Copyright 2026 The MFA Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout:
//   "MFACKPT1" | u64 LE header length | header JSON | float32 LE blobs
// The header lists tensors by stable name with shape and byte offset.
#pragma once

#include <nlohmann/json.hpp>

#include <map>
#include <string>

#include "mfa/error.hpp"
#include "mfa/io.hpp"
#include "mfa/tensor.hpp"

namespace mfa {

inline constexpr std::string_view kCheckpointMagic = "MFACKPT1";
inline constexpr int kCheckpointVersion = 1;

/// Serializes every tensor reachable through `model.visit`, in visit order.
template <typename Model>
std::string encode_checkpoint(Model& model, nlohmann::ordered_json meta) {
  std::string blobs;
  auto tensors = nlohmann::ordered_json::array();
  model.visit([&](const std::string& name, Matrix& m) {
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", blobs.size()}});
    append_matrix_f32(blobs, m);
  });
  meta["format"] = "mfa-checkpoint";
  meta["version"] = kCheckpointVersion;
  meta["tensors"] = std::move(tensors);
  const std::string header = meta.dump();
  std::string out(kCheckpointMagic);
  append_u64_le(out, header.size());
  out += header;
  out += blobs;
  return out;
}

struct DecodedCheckpoint {
  nlohmann::json header;
  std::map<std::string, Matrix> tensors;
};

inline DecodedCheckpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 8) != kCheckpointMagic) throw IoError("not an MFA checkpoint");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto header_len = read_u64_le(p + 8);
  if (16 + header_len > bytes.size()) throw IoError("checkpoint header truncated");
  DecodedCheckpoint out;
  out.header = nlohmann::json::parse(bytes.substr(16, header_len));
  if (out.header.value("version", 0) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  const auto blobs = bytes.substr(16 + header_len);
  for (const auto& t : out.header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    const auto off = t.at("offset").get<std::size_t>();
    const auto len = static_cast<std::size_t>(rows * cols) * 4;
    if (off + len > blobs.size()) throw IoError("checkpoint blob truncated");
    out.tensors.emplace(t.at("name").get<std::string>(), read_matrix_f32(blobs.substr(off, len), rows, cols));
  }
  return out;
}

/// Copies tensors into `model` by name; every model tensor must be present
/// with a matching shape.
template <typename Model>
void load_checkpoint_into(Model& model, const DecodedCheckpoint& ckpt) {
  model.visit([&](const std::string& name, Matrix& m) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw IoError("checkpoint lacks tensor '" + name + "'");
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
      throw ShapeError("checkpoint tensor '" + name + "' has the wrong shape");
    m = it->second;
  });
}

}  // namespace mfa
