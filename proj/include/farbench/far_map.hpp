//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "farbench/bytes.hpp"
#include "farbench/half.hpp"
#include "farbench/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace farbench {

inline constexpr double kFarBudgetFraction = 0.15;
inline constexpr std::uint32_t kTileLanes = 32;
inline constexpr std::uint8_t kFmapVersion = 1;
inline constexpr std::uint8_t kFshdVersion = 1;
inline constexpr std::uint16_t kNoLane = 0xFFFF;
inline constexpr std::size_t kFmapEntryBytes = 10;

enum class FarAction : std::uint8_t { skip = 0, rewire = 1 };

struct FarMapEntry {
  std::uint16_t row = 0;
  std::uint16_t lane = 0;
  FarAction action = FarAction::skip;
  std::uint16_t donor = kNoLane;
  std::uint8_t div = 0;
  std::uint16_t shadow_addr = kNoLane;

  static FarMapEntry skip_lane(std::uint16_t row, std::uint16_t lane) { return {row, lane, FarAction::skip, kNoLane, 0, kNoLane}; }
  static FarMapEntry rewire(std::uint16_t row, std::uint16_t lane, std::uint16_t donor, std::uint8_t div, std::uint16_t addr) {
    return {row, lane, FarAction::rewire, donor, div, addr};
  }

  friend bool operator==(const FarMapEntry&, const FarMapEntry&) = default;
};

/// Sparse per-row directives for one linear layer, sorted by (row, lane).
struct FarMap {
  std::uint16_t layer_id = 0;
  std::uint16_t fan_in = 0;
  std::uint16_t fan_out = 0;
  std::vector<FarMapEntry> entries;

  std::span<const FarMapEntry> row_slice(std::uint32_t row) const {
    auto lo = std::lower_bound(entries.begin(), entries.end(), row, [](const FarMapEntry& e, std::uint32_t r) { return e.row < r; });
    auto hi = std::upper_bound(lo, entries.end(), row, [](std::uint32_t r, const FarMapEntry& e) { return r < e.row; });
    return {lo, hi};
  }

  friend bool operator==(const FarMap&, const FarMap&) = default;
};

struct ShadowStore {
  std::vector<Fp16> values;

  friend bool operator==(const ShadowStore&, const ShadowStore&) = default;
};

/// DRAM-resident obfuscated layer plus the on-chip FaR state. `dram` holds W'
/// and the untouched bias.
struct HardenedLayer {
  LinearLayer dram;
  FarMap map;
  ShadowStore shadow;
  bool enabled = true;

  friend bool operator==(const HardenedLayer&, const HardenedLayer&) = default;
};

struct HardenedNetwork {
  std::vector<HardenedLayer> layers;
  std::uint32_t class_count = 0;

  /// The weights an attacker can read and flip.
  ToyNetwork dram_view() const {
    ToyNetwork net;
    net.class_count = class_count;
    for (const auto& l : layers) net.layers.push_back(l.dram);
    return net;
  }

  friend bool operator==(const HardenedNetwork&, const HardenedNetwork&) = default;
};

/// An unhardened wrapper: every layer deployed with an empty map.
inline HardenedNetwork wrap_baseline(const ToyNetwork& net) {
  net.validate();
  HardenedNetwork out;
  out.class_count = net.class_count;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    out.layers.push_back({l, FarMap{static_cast<std::uint16_t>(i), static_cast<std::uint16_t>(l.fan_in), static_cast<std::uint16_t>(l.fan_out), {}}, {}, false});
  }
  return out;
}

inline std::uint32_t row_budget(std::uint32_t fan_in, double fraction = kFarBudgetFraction) {
  // Guards products such as 0.15 * 60 that land just below an integer.
  return static_cast<std::uint32_t>(std::floor(fraction * fan_in + 1e-9));
}

/// Full structural check of a map against its shadow store. Throws
/// ValidationError naming the first violation.
inline void validate_far(const FarMap& map, const ShadowStore& shadow, double budget_fraction = kFarBudgetFraction) {
  auto fail = [](ValidationReason r, const std::string& msg) { throw ValidationError(r, msg); };
  const std::uint32_t budget = row_budget(map.fan_in, budget_fraction);
  std::vector<std::uint8_t> referenced(shadow.values.size(), 0);
  // (row, donor) -> lanes, div, addr
  struct Group {
    std::uint32_t count = 0;
    bool has_donor_lane = false;
    std::uint8_t div = 0;
    std::uint16_t addr = 0;
  };
  std::map<std::pair<std::uint16_t, std::uint16_t>, Group> groups;

  std::uint32_t row_count = 0;
  for (std::size_t i = 0; i < map.entries.size(); ++i) {
    const auto& e = map.entries[i];
    const std::string where = "entry " + std::to_string(i);
    if (e.row >= map.fan_out || e.lane >= map.fan_in) fail(ValidationReason::index, where + " row/lane out of range");
    if (i > 0) {
      const auto& p = map.entries[i - 1];
      if (std::tie(p.row, p.lane) == std::tie(e.row, e.lane)) fail(ValidationReason::duplicate, where + " repeats (row, lane)");
      if (std::tie(p.row, p.lane) > std::tie(e.row, e.lane)) fail(ValidationReason::order, where + " not sorted by (row, lane)");
    }
    row_count = i > 0 && map.entries[i - 1].row == e.row ? row_count + 1 : 1;
    if (row_count > budget) fail(ValidationReason::budget, "row " + std::to_string(e.row) + " exceeds " + std::to_string(budget) + " entries");

    if (e.action == FarAction::skip) {
      if (e.donor != kNoLane || e.div != 0 || e.shadow_addr != kNoLane) fail(ValidationReason::group, where + " SKIP carries a donor reference");
      continue;
    }
    if (e.action != FarAction::rewire) fail(ValidationReason::index, where + " unknown action code");
    if (e.donor >= map.fan_in) fail(ValidationReason::index, where + " donor out of range");
    if (e.shadow_addr >= shadow.values.size()) fail(ValidationReason::index, where + " shadow address out of range");
    if (e.div != 2 && e.div != 3) fail(ValidationReason::group, where + " division factor not 2 or 3");
    if (e.lane / kTileLanes != e.donor / kTileLanes) fail(ValidationReason::group, where + " victim and donor in different K-tiles");
    referenced[e.shadow_addr] = 1;
    auto [it, fresh] = groups.try_emplace({e.row, e.donor}, Group{0, false, e.div, e.shadow_addr});
    Group& g = it->second;
    if (!fresh && (g.div != e.div || g.addr != e.shadow_addr)) fail(ValidationReason::group, where + " disagrees with its group");
    ++g.count;
    g.has_donor_lane |= e.lane == e.donor;
  }
  for (const auto& [key, g] : groups) {
    if (g.count != g.div || !g.has_donor_lane) {
      fail(ValidationReason::group, "row " + std::to_string(key.first) + " donor " + std::to_string(key.second) + " group is incomplete");
    }
  }
  for (std::size_t a = 0; a < referenced.size(); ++a) {
    if (!referenced[a]) fail(ValidationReason::group, "shadow entry " + std::to_string(a) + " is never referenced");
  }
}

// FMAP: "FMAP", version u8, layer_id u16, fan_in u16, fan_out u16,
// entry_count u32, entries {row u16, lane u16, action u8, donor u16, div u8,
// shadow_addr u16}, CRC32.
inline std::vector<std::uint8_t> encode_fmap(const FarMap& map) {
  ByteWriter w;
  w.tag("FMAP");
  w.u8(kFmapVersion);
  w.u16(map.layer_id);
  w.u16(map.fan_in);
  w.u16(map.fan_out);
  w.u32(static_cast<std::uint32_t>(map.entries.size()));
  for (const auto& e : map.entries) {
    w.u16(e.row);
    w.u16(e.lane);
    w.u8(static_cast<std::uint8_t>(e.action));
    w.u16(e.donor);
    w.u8(e.div);
    w.u16(e.shadow_addr);
  }
  return std::move(w).finish_with_crc();
}

// FSHD: "FSHD", version u8, count u32, values, CRC32.
inline std::vector<std::uint8_t> encode_fshd(const ShadowStore& shadow) {
  ByteWriter w;
  w.tag("FSHD");
  w.u8(kFshdVersion);
  w.u32(static_cast<std::uint32_t>(shadow.values.size()));
  for (Fp16 v : shadow.values) w.u16(v.bits);
  return std::move(w).finish_with_crc();
}

/// Parses an FMAP blob without semantic checks beyond framing.
inline FarMap decode_fmap(std::span<const std::uint8_t> bytes) {
  ByteReader r(verify_crc_trailer(bytes, "FMAP"));
  r.expect_tag("FMAP");
  if (r.u8() != kFmapVersion) throw ValidationError(ValidationReason::version, "unsupported FMAP version");
  FarMap map;
  map.layer_id = r.u16();
  map.fan_in = r.u16();
  map.fan_out = r.u16();
  const std::uint32_t count = r.u32();
  if (std::uint64_t{count} * kFmapEntryBytes != r.remaining()) throw ValidationError(ValidationReason::truncated, "FMAP entry count does not match blob length");
  map.entries.resize(count);
  for (auto& e : map.entries) {
    e.row = r.u16();
    e.lane = r.u16();
    e.action = static_cast<FarAction>(r.u8());
    e.donor = r.u16();
    e.div = r.u8();
    e.shadow_addr = r.u16();
  }
  return map;
}

inline ShadowStore decode_fshd(std::span<const std::uint8_t> bytes) {
  ByteReader r(verify_crc_trailer(bytes, "FSHD"));
  r.expect_tag("FSHD");
  if (r.u8() != kFshdVersion) throw ValidationError(ValidationReason::version, "unsupported FSHD version");
  const std::uint32_t count = r.u32();
  if (std::uint64_t{count} * 2 != r.remaining()) throw ValidationError(ValidationReason::truncated, "FSHD count does not match blob length");
  ShadowStore s;
  s.values.resize(count);
  for (auto& v : s.values) v = Fp16(r.u16());
  return s;
}

struct FarBlobs {
  std::vector<std::uint8_t> fmap;
  std::vector<std::uint8_t> fshd;
};

inline FarBlobs emit_blobs(const HardenedLayer& h) { return {encode_fmap(h.map), encode_fshd(h.shadow)}; }

/// Decodes and fully validates both blobs.
inline std::pair<FarMap, ShadowStore> load_blobs(std::span<const std::uint8_t> fmap, std::span<const std::uint8_t> fshd,
                                                 double budget_fraction = kFarBudgetFraction) {
  auto map = decode_fmap(fmap);
  auto shadow = decode_fshd(fshd);
  validate_far(map, shadow, budget_fraction);
  return {std::move(map), std::move(shadow)};
}

inline std::size_t metadata_bytes(std::size_t entries, std::size_t shadow_values) {
  const std::size_t fmap = 4 + 1 + 2 + 2 + 2 + 4 + entries * kFmapEntryBytes + 4;
  const std::size_t fshd = 4 + 1 + 4 + shadow_values * 2 + 4;
  return fmap + fshd;
}

}  // namespace farbench
