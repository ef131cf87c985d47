//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "farbench/far_map.hpp"
#include "farbench/model.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace farbench {

/// Per-row lane ordering by saliency (descending, ties by lane) and per-lane
/// deadness (mean |activation| of the feeding neuron).
struct SensitivityRanking {
  std::uint32_t fan_in = 0;
  std::uint32_t fan_out = 0;
  std::vector<double> saliency;       // fan_out x fan_in
  std::vector<std::uint32_t> order;   // fan_out x fan_in lane indices
  std::vector<double> deadness;       // fan_in

  std::span<const std::uint32_t> row_order(std::uint32_t r) const {
    return std::span(order).subspan(std::size_t{r} * fan_in, fan_in);
  }
};

inline SensitivityRanking rank_sensitivity(const LayerGradients& stats, std::uint32_t fan_in, std::uint32_t fan_out) {
  if (stats.saliency.size() != std::size_t{fan_in} * fan_out || stats.mean_abs_activation.size() != fan_in) {
    throw std::invalid_argument("gradient statistics do not match the layer shape");
  }
  SensitivityRanking out{fan_in, fan_out, stats.saliency, {}, stats.mean_abs_activation};
  out.order.resize(out.saliency.size());
  for (std::uint32_t r = 0; r < fan_out; ++r) {
    auto row = std::span(out.order).subspan(std::size_t{r} * fan_in, fan_in);
    std::iota(row.begin(), row.end(), 0u);
    const double* s = out.saliency.data() + std::size_t{r} * fan_in;
    std::stable_sort(row.begin(), row.end(), [s](std::uint32_t a, std::uint32_t b) { return s[a] > s[b]; });
  }
  return out;
}

struct FarOptions {
  double budget_fraction = kFarBudgetFraction;
  std::uint8_t div = 2;
  /// A lane is dead when its mean |activation| is at most this fraction of
  /// the layer-wide mean.
  double dead_threshold = 0.01;
  bool skip_remaining = false;
  std::uint16_t layer_id = 0;
};

struct RowReport {
  std::uint32_t row = 0;
  std::uint32_t groups = 0;
  std::uint32_t skips = 0;
  std::string note;  // empty when hardened
};

struct CompileResult {
  HardenedLayer layer;
  std::vector<RowReport> rows;
  std::vector<std::uint32_t> dead_lanes;

  std::size_t hardened_rows() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const RowReport& r) { return r.groups > 0; }));
  }
};

inline std::vector<std::uint32_t> dead_lanes_of(const SensitivityRanking& ranking, double threshold) {
  const double mean = ranking.deadness.empty()
                          ? 0.0
                          : std::accumulate(ranking.deadness.begin(), ranking.deadness.end(), 0.0) / static_cast<double>(ranking.deadness.size());
  std::vector<std::uint32_t> dead;
  for (std::uint32_t l = 0; l < ranking.fan_in; ++l) {
    if (ranking.deadness[l] <= threshold * mean) dead.push_back(l);
  }
  std::stable_sort(dead.begin(), dead.end(), [&](std::uint32_t a, std::uint32_t b) { return ranking.deadness[a] < ranking.deadness[b]; });
  return dead;
}

/// Greedy per-row FaR compilation. Each REWIRE group pairs a critical lane
/// with div-1 dead lanes of the same 32-lane K-tile; W' copies the donor
/// weight into the victim slots.
inline CompileResult compile_far(const LinearLayer& layer, const SensitivityRanking& ranking, const FarOptions& opt = {}) {
  layer.validate();
  if (opt.div != 2 && opt.div != 3) throw std::invalid_argument("division factor must be 2 or 3");
  if (!(opt.budget_fraction >= 0.0 && opt.budget_fraction <= 1.0)) throw std::invalid_argument("budget fraction must lie in [0, 1]");
  if (layer.fan_in >= kNoLane || layer.fan_out >= kNoLane) throw std::invalid_argument("layer too large for 16-bit FaRMap indices");
  if (ranking.fan_in != layer.fan_in || ranking.fan_out != layer.fan_out) throw std::invalid_argument("ranking does not match the layer shape");

  CompileResult out;
  out.layer.dram = layer;
  out.layer.map = FarMap{opt.layer_id, static_cast<std::uint16_t>(layer.fan_in), static_cast<std::uint16_t>(layer.fan_out), {}};
  out.dead_lanes = dead_lanes_of(ranking, opt.dead_threshold);
  std::vector<std::uint8_t> is_dead(layer.fan_in, 0);
  for (auto l : out.dead_lanes) is_dead[l] = 1;

  const std::uint32_t budget = row_budget(layer.fan_in, opt.budget_fraction);
  std::unordered_map<std::uint16_t, std::uint16_t> shadow_addr;  // value bits -> address
  auto shadow_for = [&](Fp16 v) {
    auto [it, fresh] = shadow_addr.try_emplace(v.bits, static_cast<std::uint16_t>(out.layer.shadow.values.size()));
    if (fresh) {
      if (out.layer.shadow.values.size() >= kNoLane) throw std::length_error("shadow store exceeds 16-bit addressing");
      out.layer.shadow.values.push_back(v);
    }
    return it->second;
  };

  std::vector<std::uint8_t> used(layer.fan_in);
  for (std::uint32_t r = 0; r < layer.fan_out; ++r) {
    RowReport rep{r, 0, 0, {}};
    std::vector<FarMapEntry> row_entries;
    std::fill(used.begin(), used.end(), 0);
    if (out.dead_lanes.empty()) {
      rep.note = "no dead lanes";
    } else if (budget < opt.div) {
      rep.note = "budget below division factor";
    } else {
      for (std::uint32_t c : ranking.row_order(r)) {
        if (row_entries.size() + opt.div > budget) break;
        if (is_dead[c] || used[c]) continue;
        std::vector<std::uint32_t> victims;
        for (std::uint32_t v : out.dead_lanes) {
          if (victims.size() + 1 == opt.div) break;
          if (!used[v] && v / kTileLanes == c / kTileLanes) victims.push_back(v);
        }
        if (victims.size() + 1 != opt.div) continue;
        const Fp16 w = layer.weight(r, c);
        const auto addr = shadow_for(fp16_from_real(to_double(w) / opt.div));
        used[c] = 1;
        row_entries.push_back(FarMapEntry::rewire(static_cast<std::uint16_t>(r), static_cast<std::uint16_t>(c), static_cast<std::uint16_t>(c), opt.div, addr));
        for (std::uint32_t v : victims) {
          used[v] = 1;
          out.layer.dram.weight(r, v) = w;
          row_entries.push_back(FarMapEntry::rewire(static_cast<std::uint16_t>(r), static_cast<std::uint16_t>(v), static_cast<std::uint16_t>(c), opt.div, addr));
        }
        ++rep.groups;
      }
      if (rep.groups == 0) rep.note = "no critical lane shares a K-tile with enough dead lanes";
      if (opt.skip_remaining) {
        for (std::uint32_t v : out.dead_lanes) {
          if (row_entries.size() >= budget) break;
          if (used[v]) continue;
          used[v] = 1;
          row_entries.push_back(FarMapEntry::skip_lane(static_cast<std::uint16_t>(r), static_cast<std::uint16_t>(v)));
          ++rep.skips;
        }
      }
    }
    std::sort(row_entries.begin(), row_entries.end(), [](const FarMapEntry& a, const FarMapEntry& b) { return a.lane < b.lane; });
    out.layer.map.entries.insert(out.layer.map.entries.end(), row_entries.begin(), row_entries.end());
    out.rows.push_back(std::move(rep));
  }
  return out;
}

struct NetworkFarOptions {
  FarOptions layer;
  /// Layers to harden; empty hardens every layer.
  std::vector<std::size_t> layers;
};

/// Runs sensitivity analysis on `analysis` and hardens the selected layers.
/// Unselected layers are carried over with an empty, disabled map.
inline HardenedNetwork harden_network(const ToyNetwork& net, const Batch& analysis, const NetworkFarOptions& opt,
                                      std::vector<CompileResult>* reports = nullptr) {
  const auto stats = loss_and_gradients(net, analysis);
  HardenedNetwork out = wrap_baseline(net);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const bool selected = opt.layers.empty() || std::find(opt.layers.begin(), opt.layers.end(), i) != opt.layers.end();
    if (!selected) continue;
    const auto& L = net.layers[i];
    FarOptions lo = opt.layer;
    lo.layer_id = static_cast<std::uint16_t>(i);
    auto res = compile_far(L, rank_sensitivity(stats.layers[i], L.fan_in, L.fan_out), lo);
    out.layers[i] = res.layer;
    if (reports) reports->push_back(std::move(res));
  }
  return out;
}

}  // namespace farbench
