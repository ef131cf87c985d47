//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "farbench/dpe.hpp"
#include "farbench/far_map.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace farbench {

struct SystemConfig {
  std::uint32_t pe_count = 2;
  double dma_bytes_per_cycle = 16.0;  // per PE
  std::uint32_t tile_buffer_depth = 2;
  DpeConfig dpe{};

  void validate() const {
    if (pe_count < 1) throw std::invalid_argument("pe_count must be at least 1");
    if (!(dma_bytes_per_cycle > 0)) throw std::invalid_argument("DMA bandwidth must be positive");
    if (tile_buffer_depth < 1) throw std::invalid_argument("tile_buffer_depth must be at least 1");
    dpe.validate();
  }
};

/// One GEMM: M activation rows against a K -> N linear layer.
struct LayerShape {
  std::string name;
  std::uint32_t m = 0;
  std::uint32_t k = 0;
  std::uint32_t n = 0;
};

struct ModelShape {
  std::string name;
  std::vector<LayerShape> layers;
};

/// Linear layers of the three evaluation ViTs: patch embedding, per block
/// Q/K/V and output projections plus a two-layer MLP, and the class head.
/// Attention score GEMMs are not FaR targets and are left out.
inline std::vector<ModelShape> vit_model_shapes() {
  struct Spec {
    const char* name;
    std::uint32_t image, channels, patch, classes, blocks;
  };
  const Spec specs[] = {{"MNIST", 28, 1, 7, 10, 1}, {"CIFAR-10", 32, 3, 8, 10, 3}, {"CIFAR-100", 32, 3, 8, 100, 6}};
  const std::uint32_t embed = 512, hidden = 256;
  std::vector<ModelShape> out;
  for (const auto& s : specs) {
    const std::uint32_t patches = (s.image / s.patch) * (s.image / s.patch);
    const std::uint32_t tokens = patches + 1;
    ModelShape m{s.name, {}};
    m.layers.push_back({"patch_embed", patches, s.patch * s.patch * s.channels, embed});
    for (std::uint32_t b = 0; b < s.blocks; ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      m.layers.push_back({p + "q", tokens, embed, embed});
      m.layers.push_back({p + "k", tokens, embed, embed});
      m.layers.push_back({p + "v", tokens, embed, embed});
      m.layers.push_back({p + "out", tokens, embed, embed});
      m.layers.push_back({p + "mlp1", tokens, embed, hidden});
      m.layers.push_back({p + "mlp2", tokens, hidden, embed});
    }
    m.layers.push_back({"head", 1, embed, s.classes});
    out.push_back(std::move(m));
  }
  return out;
}

/// Shape-level FaR density: every row carries floor(budget / div) full
/// groups.
struct FarSetting {
  bool enabled = false;
  double budget_fraction = kFarBudgetFraction;
  std::uint8_t div = 2;

  std::uint32_t entries_per_row(std::uint32_t k) const {
    if (!enabled) return 0;
    return row_budget(k, budget_fraction) / div * div;
  }
  std::uint32_t shadow_per_row(std::uint32_t k) const { return enabled ? row_budget(k, budget_fraction) / div : 0; }
};

/// Serialized FMAP + FSHD size for a shape, without shadow dedup.
inline std::size_t shape_metadata_bytes(const LayerShape& s, const FarSetting& far) {
  if (!far.enabled || far.entries_per_row(s.k) == 0) return 0;
  return metadata_bytes(std::size_t{s.n} * far.entries_per_row(s.k), std::size_t{s.n} * far.shadow_per_row(s.k));
}

struct TileWork {
  std::uint32_t m_tile = 0, n_tile = 0, k_tile = 0;
  std::uint32_t pe = 0;
  std::uint64_t compute_cycles = 0;
  std::uint64_t read_bytes = 0;      // activations + weights + metadata
  std::uint64_t metadata_bytes = 0;  // FaR share of read_bytes
  std::uint64_t read_start = 0, read_end = 0;
  std::uint64_t compute_start = 0, compute_end = 0;
};

struct LayerSchedule {
  LayerShape shape;
  FarSetting far;
  std::vector<TileWork> tiles;
  std::vector<std::uint64_t> pe_makespan;
  std::uint64_t compute_cycles = 0;  // sum over tiles
  std::uint64_t dma_cycles = 0;      // sum of read transfer cycles
  std::uint64_t write_bytes = 0;
  std::uint64_t write_cycles = 0;  // independent write channel
  std::uint64_t weight_bytes = 0;
  std::uint64_t metadata_bytes = 0;
  std::uint64_t makespan = 0;
};

inline std::uint64_t transfer_cycles(std::uint64_t bytes, double bytes_per_cycle) {
  if (std::isinf(bytes_per_cycle)) return 0;
  return static_cast<std::uint64_t>(std::ceil(static_cast<double>(bytes) / bytes_per_cycle));
}

/// Round-robin assignment of output tiles to PEs (all K-tiles of an output
/// tile stay on one PE). With two buffers the read of tile j+1 overlaps the
/// compute of tile j.
inline LayerSchedule schedule_layer(const LayerShape& shape, const FarSetting& far, const SystemConfig& cfg) {
  cfg.validate();
  LayerSchedule s;
  s.shape = shape;
  s.far = far;
  s.pe_makespan.assign(cfg.pe_count, 0);
  s.weight_bytes = std::uint64_t{shape.k} * shape.n * 2;
  if (shape.m == 0 || shape.k == 0 || shape.n == 0) return s;
  const std::uint32_t mt = (shape.m + 31) / 32, nt = (shape.n + 31) / 32, kt = (shape.k + 31) / 32;
  const std::uint64_t tile_bytes = kTileDim * kTileDim * 2;
  const std::uint64_t meta_row = far.entries_per_row(shape.k) * kFmapEntryBytes + far.shadow_per_row(shape.k) * 2;
  // A layer whose budget admits no group compiles to an empty map and is
  // deployed with FaR off.
  const bool far_on = far.enabled && far.entries_per_row(shape.k) > 0;

  std::vector<std::vector<std::size_t>> queue(cfg.pe_count);
  std::uint32_t out_tile = 0;
  for (std::uint32_t a = 0; a < mt; ++a) {
    for (std::uint32_t b = 0; b < nt; ++b, ++out_tile) {
      const std::uint32_t pe = out_tile % cfg.pe_count;
      const std::uint32_t rows = std::min<std::uint32_t>(32, shape.n - b * 32);
      for (std::uint32_t c = 0; c < kt; ++c) {
        TileWork t;
        t.m_tile = a, t.n_tile = b, t.k_tile = c, t.pe = pe;
        // Entries of a row name lanes of one K-tile, so an output tile's
        // metadata streams in alongside the K-tiles it serves.
        const std::uint64_t meta = rows * meta_row;
        t.metadata_bytes = meta / kt + (c < meta % kt ? 1 : 0);
        t.read_bytes = 2 * tile_bytes + t.metadata_bytes;
        const std::uint64_t mixed_rows = c == 0 && far_on ? rows : 0;
        t.compute_cycles = closed_form_cycles(1, far_on, mixed_rows, cfg.dpe) - (cfg.dpe.fill_per_tile ? 0 : cfg.dpe.pipeline_fill_cycles);
        queue[pe].push_back(s.tiles.size());
        s.tiles.push_back(t);
      }
      s.write_bytes += std::uint64_t{std::min<std::uint32_t>(32, shape.m - a * 32)} * rows * 2;
    }
  }

  // Each PE streams its own tiles through a private DMA channel into a ring
  // of tile_buffer_depth buffers.
  auto compute_end = [&](std::uint32_t pe, std::size_t j) { return s.tiles[queue[pe][j]].compute_end; };
  for (std::uint32_t pe = 0; pe < cfg.pe_count; ++pe) {
    std::uint64_t channel_free = 0;
    for (std::size_t j = 0; j < queue[pe].size(); ++j) {
      TileWork& t = s.tiles[queue[pe][j]];
      const std::uint64_t slot = j >= cfg.tile_buffer_depth ? compute_end(pe, j - cfg.tile_buffer_depth) : 0;
      t.read_start = std::max(channel_free, slot);
      t.read_end = t.read_start + transfer_cycles(t.read_bytes, cfg.dma_bytes_per_cycle);
      channel_free = t.read_end;
      t.compute_start = std::max(t.read_end, j > 0 ? compute_end(pe, j - 1) : 0);
      t.compute_end = t.compute_start + t.compute_cycles;
    }
  }
  for (std::uint32_t pe = 0; pe < cfg.pe_count; ++pe) {
    if (queue[pe].empty()) continue;
    s.pe_makespan[pe] = compute_end(pe, queue[pe].size() - 1) + (cfg.dpe.fill_per_tile ? 0 : cfg.dpe.pipeline_fill_cycles);
  }
  for (const auto& t : s.tiles) {
    s.compute_cycles += t.compute_cycles;
    s.dma_cycles += t.read_end - t.read_start;
    s.metadata_bytes += t.metadata_bytes;
  }
  s.write_cycles = transfer_cycles(s.write_bytes, cfg.dma_bytes_per_cycle);
  s.makespan = *std::max_element(s.pe_makespan.begin(), s.pe_makespan.end());
  return s;
}

inline nlohmann::ordered_json config_json(const SystemConfig& cfg) {
  return {{"pe_count", cfg.pe_count},
          {"dma_bytes_per_cycle", cfg.dma_bytes_per_cycle},
          {"tile_buffer_depth", cfg.tile_buffer_depth},
          {"lanes", cfg.dpe.lanes},
          {"pipeline_fill_cycles", cfg.dpe.pipeline_fill_cycles},
          {"adder_tree_levels", cfg.dpe.adder_tree_levels},
          {"overlap_select", cfg.dpe.overlap_select},
          {"dual_port_weights", cfg.dpe.dual_port_weights},
          {"fill_per_tile", cfg.dpe.fill_per_tile}};
}

inline double ratio(std::uint64_t a, std::uint64_t b) { return b == 0 ? 1.0 : static_cast<double>(a) / static_cast<double>(b); }

/// Baseline vs FaR timing for every layer of every model. Only linear-layer
/// GEMM time enters the end-to-end figure.
inline nlohmann::ordered_json model_latency_report(const std::vector<ModelShape>& models, const FarSetting& far, const SystemConfig& cfg) {
  FarSetting off = far;
  off.enabled = false;
  nlohmann::ordered_json report;
  report["config"] = config_json(cfg);
  report["config"]["far_enabled"] = far.enabled;
  report["config"]["budget_fraction"] = far.budget_fraction;
  report["config"]["div"] = far.div;
  report["per_layer"] = nlohmann::ordered_json::array();
  report["models"] = nlohmann::ordered_json::array();
  std::uint64_t all_base_compute = 0, all_far_compute = 0;
  for (const auto& model : models) {
    std::uint64_t base_span = 0, far_span = 0, base_compute = 0, far_compute = 0, weight_bytes = 0, meta_bytes = 0, read_bytes = 0;
    for (const auto& shape : model.layers) {
      const auto b = schedule_layer(shape, off, cfg);
      const auto f = schedule_layer(shape, far, cfg);
      base_span += b.makespan;
      far_span += f.makespan;
      base_compute += b.compute_cycles;
      far_compute += f.compute_cycles;
      weight_bytes += f.weight_bytes;
      meta_bytes += f.metadata_bytes;
      for (const auto& t : f.tiles) read_bytes += t.read_bytes;
      report["per_layer"].push_back({{"model", model.name},
                                     {"layer", shape.name},
                                     {"shape", {{"m", shape.m}, {"k", shape.k}, {"n", shape.n}}},
                                     {"tiles", f.tiles.size()},
                                     {"compute_cycles", f.compute_cycles},
                                     {"dma_cycles", f.dma_cycles},
                                     {"write_cycles", f.write_cycles},
                                     {"makespan", f.makespan},
                                     {"baseline_makespan", b.makespan},
                                     {"far_overhead_ratio", ratio(f.makespan, b.makespan)},
                                     {"matmul_overhead_ratio", ratio(f.compute_cycles, b.compute_cycles)},
                                     {"metadata_bytes", f.metadata_bytes},
                                     {"blob_bytes", shape_metadata_bytes(shape, far)},
                                     {"weight_bytes", f.weight_bytes}});
    }
    all_base_compute += base_compute;
    all_far_compute += far_compute;
    report["models"].push_back({{"model", model.name},
                                {"baseline_makespan", base_span},
                                {"far_makespan", far_span},
                                {"end_to_end_ratio", ratio(far_span, base_span)},
                                {"matmul_overhead_ratio", ratio(far_compute, base_compute)},
                                {"metadata_read_share", read_bytes == 0 ? 0.0 : static_cast<double>(meta_bytes) / static_cast<double>(read_bytes)},
                                {"metadata_to_weight_bytes", weight_bytes == 0 ? 0.0 : static_cast<double>(meta_bytes) / static_cast<double>(weight_bytes)}});
  }
  report["totals"] = {{"matmul_overhead_ratio", ratio(all_far_compute, all_base_compute)}};
  return report;
}

struct EnableDecision {
  bool enabled = false;
  std::string reason;  // empty when enabled
  std::string detail;
  HardenedLayer layer;  // deployable layer; FaR off on fallback
};

/// Validates blobs for `dram` and either enables FaR or falls back to the
/// baseline path. Never throws for bad blobs and never enables partially.
inline EnableDecision validate_and_enable(const LinearLayer& dram, std::span<const std::uint8_t> fmap, std::span<const std::uint8_t> fshd,
                                          double budget_fraction = kFarBudgetFraction) {
  EnableDecision d;
  d.layer.dram = dram;
  d.layer.enabled = false;
  d.layer.map = FarMap{0, static_cast<std::uint16_t>(dram.fan_in), static_cast<std::uint16_t>(dram.fan_out), {}};
  try {
    auto [map, shadow] = load_blobs(fmap, fshd, budget_fraction);
    if (map.fan_in != dram.fan_in || map.fan_out != dram.fan_out) {
      throw ValidationError(ValidationReason::shape, "FaRMap shape does not match the layer");
    }
    d.layer.map = std::move(map);
    d.layer.shadow = std::move(shadow);
    d.layer.enabled = true;
    d.enabled = true;
  } catch (const ValidationError& e) {
    d.reason = reason_name(e.reason());
    d.detail = e.what();
  }
  return d;
}

}  // namespace farbench
