//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "farbench/bytes.hpp"
#include "farbench/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace farbench {

inline constexpr std::uint8_t kFmdlVersion = 1;

// FMDL layout (little-endian): "FMDL", version u8, layer_count u16, then per
// layer fan_in u32, fan_out u32, activation u8, weights (fan_out x fan_in
// binary16, row-major), bias (fan_out binary16); trailing CRC32.
inline std::vector<std::uint8_t> encode_model(const ToyNetwork& net) {
  net.validate();
  ByteWriter w;
  w.tag("FMDL");
  w.u8(kFmdlVersion);
  w.u16(static_cast<std::uint16_t>(net.layers.size()));
  for (const auto& layer : net.layers) {
    w.u32(layer.fan_in);
    w.u32(layer.fan_out);
    w.u8(static_cast<std::uint8_t>(layer.activation));
    for (Fp16 v : layer.weights) w.u16(v.bits);
    for (Fp16 v : layer.bias) w.u16(v.bits);
  }
  return std::move(w).finish_with_crc();
}

inline ToyNetwork decode_model(std::span<const std::uint8_t> bytes) {
  const auto payload = verify_crc_trailer(bytes, "FMDL");
  ByteReader r(payload);
  r.expect_tag("FMDL");
  if (r.u8() != kFmdlVersion) throw ValidationError(ValidationReason::version, "unsupported FMDL version");
  const std::uint16_t count = r.u16();
  if (count == 0) throw ValidationError(ValidationReason::shape, "model has no layers");
  ToyNetwork net;
  for (std::uint16_t i = 0; i < count; ++i) {
    LinearLayer layer;
    layer.fan_in = r.u32();
    layer.fan_out = r.u32();
    const std::uint8_t act = r.u8();
    if (act > static_cast<std::uint8_t>(Activation::gelu)) throw ValidationError(ValidationReason::index, "unknown activation code");
    layer.activation = static_cast<Activation>(act);
    const std::uint64_t n = std::uint64_t{layer.fan_in} * layer.fan_out;
    if (n * 2 > r.remaining()) throw ValidationError(ValidationReason::truncated, "weight matrix exceeds blob");
    layer.weights.resize(n);
    for (auto& v : layer.weights) v = Fp16(r.u16());
    layer.bias.resize(layer.fan_out);
    for (auto& v : layer.bias) v = Fp16(r.u16());
    net.layers.push_back(std::move(layer));
  }
  if (r.remaining() != 0) throw ValidationError(ValidationReason::shape, "trailing bytes after last layer");
  net.class_count = net.layers.back().fan_out;
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(ValidationReason::shape, e.what());
  }
  return net;
}

inline void save_model(const std::string& path, const ToyNetwork& net) { write_file(path, encode_model(net)); }
inline ToyNetwork load_model(const std::string& path) { return decode_model(read_file(path)); }

}  // namespace farbench
