//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "farbench/far_map.hpp"
#include "farbench/far_reference.hpp"
#include "farbench/half.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace farbench {

inline constexpr std::size_t kTileDim = 32;

/// Fixed 32x32 binary16 tile, zero-initialized. Partial tiles keep +0 in the
/// padding.
struct TileF16 {
  std::array<Fp16, kTileDim * kTileDim> cells{};

  Fp16 at(std::size_t row, std::size_t col) const { return cells[row * kTileDim + col]; }
  Fp16& at(std::size_t row, std::size_t col) { return cells[row * kTileDim + col]; }
  std::span<const Fp16, kTileDim> row(std::size_t r) const { return std::span<const Fp16, kTileDim>(cells.data() + r * kTileDim, kTileDim); }

  friend bool operator==(const TileF16&, const TileF16&) = default;
};

struct DpeConfig {
  std::uint32_t lanes = 32;
  std::uint32_t pipeline_fill_cycles = 12;
  std::uint32_t adder_tree_levels = 5;
  bool overlap_select = true;
  bool dual_port_weights = true;
  /// run_layer drains the pipeline between tiles when set; otherwise the fill
  /// is paid once per layer.
  bool fill_per_tile = true;
  Fp16Mode mode{};

  void validate() const {
    if (lanes != kTileDim) throw std::invalid_argument("the DPE models 32-lane tiles only");
    if ((1u << adder_tree_levels) != lanes) throw std::invalid_argument("adder_tree_levels must equal log2(lanes)");
    // Multiplier stage and output register on top of the tree.
    if (pipeline_fill_cycles < adder_tree_levels + 2) throw std::invalid_argument("pipeline fill shorter than the datapath depth");
  }
};

struct CycleReport {
  std::uint64_t total_cycles = 0;
  std::uint64_t dots_retired = 0;
  std::uint64_t select_synthesis_cycles = 0;   // every select vector built
  std::uint64_t visible_select_cycles = 0;     // selects that blocked issue
  std::uint64_t overlapped_select_cycles = 0;  // selects hidden under issue
  std::uint64_t stall_cycles = 0;
  std::uint64_t fill_cycles = 0;
  std::uint64_t tiles = 0;

  /// Dots per cycle while a row streams; 1.0 unless structural stalls occur.
  double steady_state_issue_rate() const {
    return dots_retired == 0 ? 1.0 : static_cast<double>(dots_retired) / static_cast<double>(dots_retired + stall_cycles);
  }

  CycleReport& operator+=(const CycleReport& o) {
    total_cycles += o.total_cycles;
    dots_retired += o.dots_retired;
    select_synthesis_cycles += o.select_synthesis_cycles;
    visible_select_cycles += o.visible_select_cycles;
    overlapped_select_cycles += o.overlapped_select_cycles;
    stall_cycles += o.stall_cycles;
    fill_cycles += o.fill_cycles;
    tiles += o.tiles;
    return *this;
  }
};

struct SelectEntry {
  WeightSource weight = WeightSource::base;
  std::uint16_t shadow_addr = 0;
  std::uint8_t activation = 0;  // tile-local lane

  friend bool operator==(const SelectEntry&, const SelectEntry&) = default;
};

struct SelectVector {
  std::array<SelectEntry, kTileDim> lanes{};

  bool mixes_base_and_shadow() const {
    bool base = false, shadow = false;
    for (const auto& e : lanes) {
      base |= e.weight == WeightSource::base;
      shadow |= e.weight == WeightSource::shadow;
    }
    return base && shadow;
  }

  friend bool operator==(const SelectVector&, const SelectVector&) = default;
};

/// Expands the entries of `row` (tile-local coordinates) into a dense select
/// vector. Lanes at or beyond `valid_lanes` are padding and read ZERO.
inline SelectVector synth_select_vector(std::uint32_t row, std::span<const FarMapEntry> slice,
                                        std::uint32_t valid_lanes = kTileDim) {
  SelectVector v;
  for (std::uint32_t l = 0; l < kTileDim; ++l) {
    v.lanes[l] = {l < valid_lanes ? WeightSource::base : WeightSource::zero, 0, static_cast<std::uint8_t>(l)};
  }
  std::array<bool, kTileDim> seen{};
  for (const auto& e : slice) {
    if (e.row != row) continue;
    if (e.lane >= kTileDim || (e.action == FarAction::rewire && e.donor >= kTileDim)) {
      throw ValidationError(ValidationReason::index, "select entry outside the tile");
    }
    if (seen[e.lane]) throw ValidationError(ValidationReason::duplicate, "lane " + std::to_string(e.lane) + " appears twice in a row slice");
    seen[e.lane] = true;
    if (e.action == FarAction::skip) {
      v.lanes[e.lane].weight = WeightSource::zero;
    } else {
      v.lanes[e.lane] = {WeightSource::shadow, e.shadow_addr, static_cast<std::uint8_t>(e.donor)};
    }
  }
  return v;
}

/// Operand redirect: a three-way choice that only moves words. Instantiated
/// in tests with a word type that has no arithmetic operators.
template <class Word>
const Word& redirect_weight(WeightSource source, const Word& base, const Word& shadow, const Word& zero) {
  switch (source) {
    case WeightSource::base: return base;
    case WeightSource::shadow: return shadow;
    case WeightSource::zero: return zero;
  }
  return zero;
}

template <class Word, std::size_t N>
const Word& redirect_activation(const std::array<Word, N>& column, std::uint8_t lane) {
  return column[lane];
}

/// One tile of work: a weight tile (rows = output neurons, cols = K lanes),
/// an activation tile (rows = samples, cols = K lanes) and the FaRMap entries
/// of this K-slice in tile-local coordinates.
struct TileJob {
  const TileF16* act = nullptr;
  const TileF16* wt = nullptr;
  std::span<const FarMapEntry> slice;
  const ShadowStore* shadow = nullptr;
  bool far_enabled = false;
  std::uint32_t valid_lanes = kTileDim;
};

namespace detail {

// Level-by-level reduction as wired in the adder tree.
inline Fp16 dpe_adder_tree(std::array<Fp16, kTileDim> stage, std::uint32_t levels, Fp16Mode mode) {
  std::size_t width = kTileDim;
  for (std::uint32_t level = 0; level < levels; ++level) {
    width /= 2;
    for (std::size_t i = 0; i < width; ++i) stage[i] = fp16_add(stage[2 * i], stage[2 * i + 1], mode);
  }
  return stage[0];
}

struct InFlight {
  std::uint64_t ready;
  std::size_t job;
  std::uint32_t row;
  std::uint32_t col;
  Fp16 value;
};

}  // namespace detail

/// Cycle-stepped DPE over a sequence of tiles. outputs[j] receives tile j's
/// results at (sample, output row).
inline CycleReport simulate_tiles(std::span<const TileJob> jobs, const DpeConfig& cfg, std::vector<TileF16>& outputs) {
  cfg.validate();
  outputs.assign(jobs.size(), TileF16{});
  CycleReport rep;
  rep.tiles = jobs.size();
  if (jobs.empty()) return rep;

  for (const auto& job : jobs) {
    if (!job.far_enabled) continue;
    for (const auto& e : job.slice) {
      if (e.action == FarAction::rewire && (job.shadow == nullptr || e.shadow_addr >= job.shadow->values.size())) {
        throw ValidationError(ValidationReason::index, "shadow address " + std::to_string(e.shadow_addr) + " outside the shadow store");
      }
    }
  }

  enum class Phase { select, stall, issue, drain, done };
  std::deque<detail::InFlight> pipe;
  std::uint64_t cycle = 0;
  std::size_t job = 0;
  std::uint32_t row = 0, col = 0;
  SelectVector current, next;
  bool next_ready = false;
  std::uint32_t stalls_left = 0;
  const Fp16 zero = kFp16Zero;

  auto default_vector = [&](const TileJob& j) { return synth_select_vector(kTileDim, {}, j.valid_lanes); };
  auto enter_row = [&]() -> Phase {
    const TileJob& j = jobs[job];
    if (!j.far_enabled) {
      current = default_vector(j);
      return Phase::issue;
    }
    if (next_ready) {
      current = next;
      next_ready = false;
      stalls_left = !cfg.dual_port_weights && current.mixes_base_and_shadow() ? 1 : 0;
      return stalls_left ? Phase::stall : Phase::issue;
    }
    return Phase::select;
  };
  Phase phase = enter_row();

  while (phase != Phase::done) {
    // Retire.
    while (!pipe.empty() && pipe.front().ready == cycle) {
      const auto& d = pipe.front();
      outputs[d.job].at(d.col, d.row) = d.value;
      ++rep.dots_retired;
      pipe.pop_front();
    }

    // Controller.
    const TileJob& j = jobs[job < jobs.size() ? job : jobs.size() - 1];
    switch (phase) {
      case Phase::select:
        current = synth_select_vector(row, j.slice, j.valid_lanes);
        ++rep.select_synthesis_cycles;
        ++rep.visible_select_cycles;
        stalls_left = !cfg.dual_port_weights && current.mixes_base_and_shadow() ? 1 : 0;
        phase = stalls_left ? Phase::stall : Phase::issue;
        break;
      case Phase::stall:
        ++rep.stall_cycles;
        if (--stalls_left == 0) phase = Phase::issue;
        break;
      case Phase::issue: {
        if (j.far_enabled && cfg.overlap_select && col == 0 && row + 1 < kTileDim) {
          next = synth_select_vector(row + 1, j.slice, j.valid_lanes);
          next_ready = true;
          ++rep.select_synthesis_cycles;
          ++rep.overlapped_select_cycles;
        }
        std::array<Fp16, kTileDim> column{};
        for (std::size_t l = 0; l < kTileDim; ++l) column[l] = j.act->at(col, l);
        const auto w = j.wt->row(row);
        std::array<Fp16, kTileDim> products;
        for (std::size_t l = 0; l < kTileDim; ++l) {
          const SelectEntry& s = current.lanes[l];
          const Fp16& shadow = s.weight == WeightSource::shadow ? j.shadow->values[s.shadow_addr] : zero;
          products[l] = fp16_mul(redirect_activation(column, s.activation), redirect_weight(s.weight, w[l], shadow, zero), cfg.mode);
        }
        pipe.push_back({cycle + cfg.pipeline_fill_cycles, job, row, col, detail::dpe_adder_tree(products, cfg.adder_tree_levels, cfg.mode)});
        if (++col == kTileDim) {
          col = 0;
          if (++row == kTileDim) {
            row = 0;
            next_ready = false;
            ++job;
            if (job == jobs.size()) {
              phase = Phase::drain;
            } else if (cfg.fill_per_tile) {
              phase = Phase::drain;
            } else {
              phase = enter_row();
            }
          } else {
            phase = enter_row();
          }
        }
        break;
      }
      case Phase::drain:
        // The next tile starts the cycle after the last retirement.
        if (pipe.empty()) phase = job == jobs.size() ? Phase::done : enter_row();
        break;
      case Phase::done:
        break;
    }
    ++cycle;
  }
  rep.total_cycles = cycle;
  rep.fill_cycles = rep.total_cycles - rep.dots_retired - rep.visible_select_cycles - rep.stall_cycles;
  return rep;
}

struct TileResult {
  TileF16 out;  // (sample, output row)
  CycleReport report;
};

inline TileResult run_tile(const TileF16& act, const TileF16& wt, std::span<const FarMapEntry> slice, const ShadowStore& shadow,
                           const DpeConfig& cfg, bool far_enabled = true, std::uint32_t valid_lanes = kTileDim) {
  const TileJob job{&act, &wt, slice, &shadow, far_enabled, valid_lanes};
  std::vector<TileF16> out;
  auto rep = simulate_tiles(std::span(&job, 1), cfg, out);
  return {out[0], rep};
}

/// Closed-form cycle count for `tiles` tiles; `mixed_rows` counts rows that
/// combine BASE and SHADOW sources (only relevant with single-port weights).
inline std::uint64_t closed_form_cycles(std::uint64_t tiles, bool far_enabled, std::uint64_t mixed_rows, const DpeConfig& cfg) {
  if (tiles == 0) return 0;
  const std::uint64_t issue = tiles * kTileDim * kTileDim;
  const std::uint64_t selects = far_enabled ? tiles * (cfg.overlap_select ? 1 : kTileDim) : 0;
  const std::uint64_t stalls = far_enabled && !cfg.dual_port_weights ? mixed_rows : 0;
  const std::uint64_t fills = (cfg.fill_per_tile ? tiles : 1) * cfg.pipeline_fill_cycles;
  return issue + selects + stalls + fills;
}

struct LayerRun {
  std::vector<Fp16> outputs;  // M x N, row-major
  CycleReport report;
};

/// Tiles an M x K activation matrix against a hardened K -> N layer. Output
/// tiles are visited (M-tile, N-tile) in order; K-tile partials are added in
/// ascending order and the bias is added last.
inline LayerRun run_layer(std::span<const Fp16> act, std::size_t m, const HardenedLayer& h, const DpeConfig& cfg) {
  check_hardened(h);
  const std::size_t k = h.dram.fan_in, n = h.dram.fan_out;
  if (act.size() != m * k) throw std::invalid_argument("activation matrix does not match M x fan_in");
  LayerRun run;
  run.outputs.assign(m * n, kFp16Zero);
  if (m == 0 || n == 0 || k == 0) return run;
  const std::size_t mt = (m + kTileDim - 1) / kTileDim, nt = (n + kTileDim - 1) / kTileDim, kt = (k + kTileDim - 1) / kTileDim;

  std::vector<TileF16> act_tiles(mt * kt), wt_tiles(nt * kt);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) act_tiles[(i / kTileDim) * kt + l / kTileDim].at(i % kTileDim, l % kTileDim) = act[i * k + l];
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t l = 0; l < k; ++l) {
      wt_tiles[(r / kTileDim) * kt + l / kTileDim].at(r % kTileDim, l % kTileDim) = h.dram.weight(static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(l));
    }
  }
  // Per (N-tile, K-tile) map slice in tile-local coordinates.
  std::vector<std::vector<FarMapEntry>> slices(nt * kt);
  if (h.enabled) {
    for (const auto& e : h.map.entries) {
      FarMapEntry local = e;
      local.row = static_cast<std::uint16_t>(e.row % kTileDim);
      local.lane = static_cast<std::uint16_t>(e.lane % kTileDim);
      if (e.action == FarAction::rewire) local.donor = static_cast<std::uint16_t>(e.donor % kTileDim);
      slices[(e.row / kTileDim) * kt + e.lane / kTileDim].push_back(local);
    }
  }

  std::vector<TileJob> jobs;
  for (std::size_t a = 0; a < mt; ++a) {
    for (std::size_t b = 0; b < nt; ++b) {
      for (std::size_t c = 0; c < kt; ++c) {
        const auto valid = static_cast<std::uint32_t>(std::min(kTileDim, k - c * kTileDim));
        jobs.push_back({&act_tiles[a * kt + c], &wt_tiles[b * kt + c], slices[b * kt + c], &h.shadow, h.enabled, valid});
      }
    }
  }
  std::vector<TileF16> partials;
  run.report = simulate_tiles(jobs, cfg, partials);

  for (std::size_t a = 0; a < mt; ++a) {
    for (std::size_t b = 0; b < nt; ++b) {
      for (std::size_t i = a * kTileDim; i < std::min(m, (a + 1) * kTileDim); ++i) {
        for (std::size_t r = b * kTileDim; r < std::min(n, (b + 1) * kTileDim); ++r) {
          Fp16 acc = kFp16Zero;
          for (std::size_t c = 0; c < kt; ++c) {
            const Fp16 p = partials[(a * nt + b) * kt + c].at(i % kTileDim, r % kTileDim);
            acc = c == 0 ? p : fp16_add(acc, p, cfg.mode);
          }
          run.outputs[i * n + r] = fp16_add(acc, h.dram.bias[r], cfg.mode);
        }
      }
    }
  }
  return run;
}

}  // namespace farbench
