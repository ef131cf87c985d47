//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "farbench/accel_system.hpp"
#include "farbench/far_compiler.hpp"
#include "farbench/far_reference.hpp"

#include <gtest/gtest.h>

#include <limits>
#include <random>

using namespace farbench;

namespace {

SystemConfig compute_bound(std::uint32_t pes) {
  SystemConfig cfg;
  cfg.pe_count = pes;
  cfg.dma_bytes_per_cycle = std::numeric_limits<double>::infinity();
  return cfg;
}

HardenedLayer small_hardened(std::mt19937_64& rng) {
  auto layer = LinearLayer::zeros(40, 6);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& w : layer.weights) w = fp16_from_real(u(rng));
  LayerGradients g;
  g.saliency.resize(240);
  for (auto& s : g.saliency) s = std::fabs(u(rng));
  g.mean_abs_activation.assign(40, 1.0);
  for (std::uint32_t k = 0; k < 40; k += 4) g.mean_abs_activation[k] = 0.0;
  FarOptions opt;
  opt.budget_fraction = 0.5;
  return compile_far(layer, rank_sensitivity(g, 40, 6), opt).layer;
}

}  // namespace

TEST(ScheduleLayer, SinglePeComputeBoundIsSumOfTiles) {
  SystemConfig cfg;
  cfg.pe_count = 1;
  const LayerShape shape{"l", 40, 96, 70};
  const auto s = schedule_layer(shape, {}, cfg);
  EXPECT_EQ(s.tiles.size(), 2u * 3u * 3u);
  std::uint64_t sum = 0;
  for (const auto& t : s.tiles) sum += t.compute_cycles;
  EXPECT_EQ(sum, s.tiles.size() * 1036);
  EXPECT_EQ(s.makespan, sum + transfer_cycles(s.tiles.front().read_bytes, cfg.dma_bytes_per_cycle));
}

TEST(ScheduleLayer, FourPesQuarterTheWork) {
  const LayerShape shape{"l", 64, 128, 256};  // 16 output tiles
  const auto one = schedule_layer(shape, {}, compute_bound(1));
  const auto four = schedule_layer(shape, {}, compute_bound(4));
  const std::uint64_t tile = 1036;
  EXPECT_LE(four.makespan, one.makespan / 4 + tile);
  EXPECT_GE(four.makespan + tile, one.makespan / 4);
}

TEST(ScheduleLayer, StarvedBandwidthGivesDmaBound) {
  SystemConfig cfg;
  cfg.pe_count = 1;
  cfg.dma_bytes_per_cycle = 2;  // 4096 cycles per tile read
  const LayerShape shape{"l", 32, 128, 64};
  const auto s = schedule_layer(shape, {}, cfg);
  std::uint64_t reads = 0;
  for (const auto& t : s.tiles) reads += transfer_cycles(t.read_bytes, cfg.dma_bytes_per_cycle);
  EXPECT_EQ(s.dma_cycles, reads);
  EXPECT_EQ(s.makespan, reads + s.tiles.back().compute_cycles);
}

TEST(ScheduleLayer, VisibleTimeIsMaxOfComputeAndTransfer) {
  SystemConfig cfg;
  cfg.pe_count = 1;
  const LayerShape shape{"l", 32, 256, 32};
  for (double bw : {1.0, 3.0, 3.95, 4.0, 8.0, 64.0}) {
    cfg.dma_bytes_per_cycle = bw;
    const auto s = schedule_layer(shape, {}, cfg);
    std::uint64_t expect = transfer_cycles(s.tiles[0].read_bytes, bw);
    for (std::size_t i = 0; i < s.tiles.size(); ++i) {
      const std::uint64_t next = i + 1 < s.tiles.size() ? transfer_cycles(s.tiles[i + 1].read_bytes, bw) : 0;
      expect += std::max(s.tiles[i].compute_cycles, next);
    }
    EXPECT_EQ(s.makespan, expect) << bw;
  }
}

TEST(ScheduleLayer, SingleBufferSerializesReadAndCompute) {
  SystemConfig cfg;
  cfg.pe_count = 1;
  cfg.tile_buffer_depth = 1;
  const LayerShape shape{"l", 32, 96, 32};
  const auto s = schedule_layer(shape, {}, cfg);
  std::uint64_t expect = 0;
  for (const auto& t : s.tiles) expect += transfer_cycles(t.read_bytes, cfg.dma_bytes_per_cycle) + t.compute_cycles;
  EXPECT_EQ(s.makespan, expect);
}

TEST(ScheduleLayer, KTilesOfAnOutputTileShareAPe) {
  const auto s = schedule_layer({"l", 70, 100, 100}, {}, compute_bound(3));
  for (const auto& t : s.tiles) EXPECT_EQ(t.pe, (t.m_tile * 4 + t.n_tile) % 3);
}

TEST(ScheduleLayer, DoublingPesNeverSlowsDown) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::uint32_t> dim(1, 300);
  for (int trial = 0; trial < 60; ++trial) {
    const LayerShape shape{"l", dim(rng), dim(rng), dim(rng)};
    FarSetting far;
    far.enabled = trial % 2 == 0;
    for (double bw : {4.0, 16.0, 64.0, std::numeric_limits<double>::infinity()}) {
      SystemConfig cfg;
      cfg.dma_bytes_per_cycle = bw;
      std::uint64_t prev = std::numeric_limits<std::uint64_t>::max();
      for (std::uint32_t pes : {1u, 2u, 4u, 8u, 16u}) {
        cfg.pe_count = pes;
        const auto s = schedule_layer(shape, far, cfg);
        EXPECT_LE(s.makespan, prev) << shape.m << "x" << shape.k << "x" << shape.n << " bw " << bw << " pes " << pes;
        prev = s.makespan;
      }
    }
  }
}

TEST(ScheduleLayer, UnboundedBandwidthHalvesWithinATile) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::uint32_t> dim(1, 300);
  for (int trial = 0; trial < 40; ++trial) {
    const LayerShape shape{"l", dim(rng), dim(rng), dim(rng)};
    for (std::uint32_t pes : {1u, 2u, 4u}) {
      const auto a = schedule_layer(shape, {}, compute_bound(pes));
      const auto b = schedule_layer(shape, {}, compute_bound(2 * pes));
      const std::uint64_t per_output_tile = ((shape.k + 31) / 32) * 1036;
      EXPECT_LE(b.makespan, a.makespan / 2 + per_output_tile);
    }
  }
}

TEST(ScheduleLayer, MetadataStreamsWithItsKTiles) {
  FarSetting far;
  far.enabled = true;
  const LayerShape shape{"l", 17, 512, 64};
  const auto s = schedule_layer(shape, far, {});
  // 76 entries and 38 shadow words per row.
  EXPECT_EQ(s.metadata_bytes, 64u * (76 * 10 + 38 * 2));
  for (const auto& t : s.tiles) {
    EXPECT_GE(t.metadata_bytes, 32u * 836 / 16);
    EXPECT_LE(t.metadata_bytes, 32u * 836 / 16 + 1);
  }
  EXPECT_EQ(schedule_layer(shape, {}, {}).metadata_bytes, 0u);
}

TEST(ModelLatency, ViTShapes) {
  const auto models = vit_model_shapes();
  ASSERT_EQ(models.size(), 3u);
  EXPECT_EQ(models[0].layers.size(), 8u);
  EXPECT_EQ(models[1].layers.size(), 20u);
  EXPECT_EQ(models[2].layers.size(), 38u);
  EXPECT_EQ(models[0].layers.front().k, 49u);
  EXPECT_EQ(models[1].layers.front().k, 192u);
  EXPECT_EQ(models[2].layers.back().n, 100u);
  EXPECT_EQ(models[1].layers[1].m, 17u);
}

TEST(ModelLatency, MatmulOverheadWithoutOverlap) {
  SystemConfig cfg;
  cfg.dpe.overlap_select = false;
  FarSetting far;
  far.enabled = true;
  const auto r = model_latency_report(vit_model_shapes(), far, cfg);
  for (const auto& m : r["models"]) EXPECT_NEAR(m["matmul_overhead_ratio"].get<double>(), 1068.0 / 1036.0, 1e-12);
  EXPECT_NEAR(r["totals"]["matmul_overhead_ratio"].get<double>(), 1.031, 5e-4);
}

TEST(ModelLatency, EndToEndWithOverlapWithinOnePercent) {
  FarSetting far;
  far.enabled = true;
  for (auto div : {2, 3}) {
    far.div = static_cast<std::uint8_t>(div);
    const auto r = model_latency_report(vit_model_shapes(), far, {});
    for (const auto& m : r["models"]) {
      EXPECT_LE(m["end_to_end_ratio"].get<double>(), 1.01) << m["model"];
      EXPECT_LE(m["matmul_overhead_ratio"].get<double>(), 1.03);
    }
  }
}

TEST(ModelLatency, ZeroFractionIsExactlyOne) {
  FarSetting far;
  far.enabled = true;
  far.budget_fraction = 0.0;
  for (bool overlap : {false, true}) {
    SystemConfig cfg;
    cfg.dpe.overlap_select = overlap;
    const auto r = model_latency_report(vit_model_shapes(), far, cfg);
    for (const auto& m : r["models"]) {
      EXPECT_EQ(m["end_to_end_ratio"].get<double>(), 1.0);
      EXPECT_EQ(m["matmul_overhead_ratio"].get<double>(), 1.0);
    }
    for (const auto& l : r["per_layer"]) EXPECT_EQ(l["far_overhead_ratio"].get<double>(), 1.0);
  }
}

TEST(ModelLatency, ReportIsDeterministicAndFollowsSchema) {
  FarSetting far;
  far.enabled = true;
  const auto a = model_latency_report(vit_model_shapes(), far, {}).dump(2);
  const auto b = model_latency_report(vit_model_shapes(), far, {}).dump(2);
  EXPECT_EQ(a, b);
  const auto r = nlohmann::json::parse(a);
  for (const char* key : {"config", "per_layer", "totals"}) EXPECT_TRUE(r.contains(key)) << key;
  for (const char* key : {"shape", "tiles", "compute_cycles", "dma_cycles", "makespan", "far_overhead_ratio"}) {
    EXPECT_TRUE(r["per_layer"][0].contains(key)) << key;
  }
}

TEST(ValidateAndEnable, ValidBlobsEnable) {
  std::mt19937_64 rng(1);
  const auto h = small_hardened(rng);
  ASSERT_FALSE(h.map.entries.empty());
  const auto blobs = emit_blobs(h);
  const auto d = validate_and_enable(h.dram, blobs.fmap, blobs.fshd, 0.5);
  EXPECT_TRUE(d.enabled);
  EXPECT_TRUE(d.layer.enabled);
  EXPECT_EQ(d.layer.map, h.map);
  EXPECT_EQ(d.reason, "");
}

TEST(ValidateAndEnable, CorruptedCrcFallsBack) {
  std::mt19937_64 rng(2);
  const auto h = small_hardened(rng);
  auto blobs = emit_blobs(h);
  blobs.fshd[blobs.fshd.size() - 1] ^= 1;
  const auto d = validate_and_enable(h.dram, blobs.fmap, blobs.fshd, 0.5);
  EXPECT_FALSE(d.enabled);
  EXPECT_EQ(d.reason, "crc");
  EXPECT_FALSE(d.layer.enabled);
  EXPECT_TRUE(d.layer.map.entries.empty());
}

TEST(ValidateAndEnable, IllegalDonorFallsBackToBaselineOutputs) {
  std::mt19937_64 rng(3);
  auto h = small_hardened(rng);
  h.map.entries.front().donor = 200;
  const auto blobs = emit_blobs(h);
  const auto d = validate_and_enable(h.dram, blobs.fmap, blobs.fshd, 0.5);
  EXPECT_FALSE(d.enabled);
  EXPECT_EQ(d.reason, "index");
  std::vector<Fp16> x(40);
  for (auto& v : x) v = fp16_from_real(std::uniform_real_distribution<double>(-1, 1)(rng));
  HardenedLayer plain{h.dram, {0, 40, 6, {}}, {}, false};
  EXPECT_EQ(far_linear_fp16(x, d.layer), far_linear_fp16(x, plain));
}

TEST(ValidateAndEnable, ShapeMismatchFallsBack) {
  std::mt19937_64 rng(4);
  const auto h = small_hardened(rng);
  const auto blobs = emit_blobs(h);
  const auto d = validate_and_enable(LinearLayer::zeros(40, 7), blobs.fmap, blobs.fshd, 0.5);
  EXPECT_FALSE(d.enabled);
  EXPECT_EQ(d.reason, "shape");
}

TEST(ValidateAndEnable, TruncatedBlobDoesNotThrow) {
  std::mt19937_64 rng(5);
  const auto h = small_hardened(rng);
  const auto blobs = emit_blobs(h);
  for (std::size_t n = 0; n < blobs.fmap.size(); n += 3) {
    const std::span<const std::uint8_t> cut(blobs.fmap.data(), n);
    EXPECT_NO_THROW({
      const auto d = validate_and_enable(h.dram, cut, blobs.fshd, 0.5);
      EXPECT_FALSE(d.enabled);
    });
  }
}
