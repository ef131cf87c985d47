//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. `acceptance N` runs criterion N; no argument runs all.
// One line per criterion; exit status is nonzero when any selected one fails.
//

#include "farbench/accel_system.hpp"
#include "farbench/attack.hpp"
#include "farbench/bundled.hpp"
#include "farbench/dpe.hpp"
#include "farbench/far_compiler.hpp"
#include "farbench/far_reference.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace farbench;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <class... T>
std::string cat(const T&... parts) {
  std::ostringstream s;
  (s << ... << parts);
  return s.str();
}

Fp16 random_word(std::mt19937_64& rng) {
  const auto pick = rng() % 100;
  if (pick < 2) return Fp16(static_cast<std::uint16_t>(rng() & 0x83FF));
  if (pick < 3) return Fp16(static_cast<std::uint16_t>(0x7BFF | (rng() & 0x8000)));
  return fp16_from_real(std::normal_distribution<double>(0, 1)(rng));
}

struct RandomLayer {
  LinearLayer layer;
  SensitivityRanking ranking;
};

RandomLayer random_layer(std::mt19937_64& rng, std::uint32_t fan_in, std::uint32_t fan_out, double dead_share) {
  auto layer = LinearLayer::zeros(fan_in, fan_out);
  for (auto& w : layer.weights) w = random_word(rng);
  for (auto& b : layer.bias) b = random_word(rng);
  LayerGradients g;
  g.saliency.resize(std::size_t{fan_in} * fan_out);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& s : g.saliency) s = u(rng);
  g.mean_abs_activation.resize(fan_in);
  for (auto& d : g.mean_abs_activation) d = u(rng) < dead_share ? 0.0 : 0.5 + u(rng);
  return {layer, rank_sensitivity(g, fan_in, fan_out)};
}

HardenedLayer random_hardened(std::mt19937_64& rng, std::uint32_t fan_in, std::uint32_t fan_out, double budget) {
  const auto r = random_layer(rng, fan_in, fan_out, 0.25 + 0.5 * std::uniform_real_distribution<double>(0, 1)(rng));
  FarOptions opt;
  opt.div = rng() & 1 ? 2 : 3;
  opt.budget_fraction = budget;
  opt.skip_remaining = rng() % 3 == 0;
  return compile_far(r.layer, r.ranking, opt).layer;
}

std::vector<Fp16> random_acts(std::mt19937_64& rng, std::size_t n) {
  std::vector<Fp16> a(n);
  for (auto& v : a) v = random_word(rng);
  return a;
}

bool has_rewire(const FarMap& map, std::uint32_t row) {
  for (const auto& e : map.row_slice(row)) {
    if (e.action == FarAction::rewire) return true;
  }
  return false;
}

// ------------------------------------------------------------ criteria 1-3

Outcome baseline_tile() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  TileF16 act, wt;
  for (auto& c : act.cells) c = random_word(rng);
  for (auto& c : wt.cells) c = random_word(rng);
  const auto res = run_tile(act, wt, {}, ShadowStore{}, DpeConfig{}, false);
  const double secs = seconds_since(t0);
  const bool ok = res.report.total_cycles == 1036 && res.report.dots_retired == 1024 && res.report.fill_cycles == 12 && secs < 1.0;
  return {ok, cat(res.report.total_cycles, " cycles (", res.report.dots_retired, " dots + ", res.report.fill_cycles, " fill), ", secs, " s")};
}

Outcome far_tile_no_overlap() {
  std::mt19937_64 rng(2);
  DpeConfig cfg;
  cfg.overlap_select = false;
  std::set<std::uint64_t> seen;
  int maps = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const double budget = 0.15 * (trial % 16) / 15.0;
    const auto h = random_hardened(rng, 32, 32, budget);
    const auto act = random_acts(rng, 32 * 32);
    seen.insert(run_layer(act, 32, h, cfg).report.total_cycles);
    ++maps;
  }
  const std::uint64_t c = *seen.begin();
  const double overhead = 100.0 * (static_cast<double>(c) - 1036.0) / 1036.0;
  const bool ok = seen.size() == 1 && c == 1068 && std::abs(overhead - 3.09) < 0.005;
  return {ok, cat(maps, " maps, distinct cycle counts ", seen.size(), ", cycles ", c, ", overhead ", overhead, "%")};
}

Outcome far_tile_overlap() {
  std::mt19937_64 rng(3);
  DpeConfig cfg;
  std::uint64_t worst = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const double budget = 0.15 * (trial % 16) / 15.0;
    const auto h = random_hardened(rng, 32, 32, budget);
    worst = std::max(worst, run_layer(random_acts(rng, 32 * 32), 32, h, cfg).report.total_cycles);
  }
  SystemConfig sys;
  sys.dpe.overlap_select = true;
  FarSetting far{true, kFarBudgetFraction, 2};
  const auto report = model_latency_report(vit_model_shapes(), far, sys);
  const double matmul = report["totals"]["matmul_overhead_ratio"].get<double>();
  const bool ok = worst <= 1037 && matmul <= 1.03;
  return {ok, cat("worst tile ", worst, " cycles over 300 maps (budget 0..0.15), ViT matmul overhead ratio ", matmul)};
}

// ---------------------------------------------------------------- criterion 4

Outcome bit_exact() {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::uint32_t> dim(1, 32);
  int cases = 0, equal = 0;
  for (; cases < 10000; ++cases) {
    const std::uint32_t k = cases % 4 == 0 ? dim(rng) : 32, n = cases % 4 == 1 ? dim(rng) : 32, m = cases % 4 == 2 ? dim(rng) : 32;
    const double budget = std::uniform_real_distribution<double>(0.0, 0.15)(rng);
    auto h = random_hardened(rng, k, n, budget);
    if (cases % 50 == 0) h.enabled = false;
    const auto act = random_acts(rng, std::size_t{m} * k);
    DpeConfig cfg;
    cfg.overlap_select = rng() & 1;
    cfg.dual_port_weights = rng() & 1;
    const auto run = run_layer(act, m, h, cfg);
    const auto ops = effective_operands(h);
    bool same = true;
    for (std::uint32_t i = 0; i < m && same; ++i) {
      const auto y = far_linear_fp16(std::span(act).subspan(std::size_t{i} * k, k), h, ops);
      for (std::uint32_t o = 0; o < n; ++o) same = same && y[o].bits == run.outputs[std::size_t{i} * n + o].bits;
    }
    equal += same;
  }
  return {equal == cases, cat(equal, "/", cases, " (tile, FaRMap) cases bitwise equal")};
}

// ---------------------------------------------------------------- criterion 5

Outcome functional_preservation() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0, 1);
  int cases = 0, good = 0;
  double worst_rel = 0.0;
  for (; cases < 1000; ++cases) {
    const std::uint32_t fan_in = std::uniform_int_distribution<std::uint32_t>(3, 96)(rng), fan_out = std::uniform_int_distribution<std::uint32_t>(1, 12)(rng);
    const auto r = random_layer(rng, fan_in, fan_out, 0.35);
    FarOptions opt;
    opt.div = rng() & 1 ? 3 : 2;
    opt.budget_fraction = std::uniform_real_distribution<double>(0.15, 1.0)(rng);
    opt.skip_remaining = rng() % 3 == 0;
    const auto h = compile_far(r.layer, r.ranking, opt).layer;
    std::vector<double> x(fan_in);
    for (auto& v : x) v = nd(rng);
    const auto y = far_linear_exact(x, h);

    bool ok = true;
    std::vector<std::set<std::uint32_t>> dead(fan_out);
    for (std::uint32_t row = 0; row < fan_out; ++row) {
      for (const auto& e : h.map.row_slice(row)) {
        if (e.action == FarAction::skip || e.lane != e.donor) dead[row].insert(e.lane);
      }
      long double full = to_double(r.layer.bias[row]), lost = 0.0L, mag = std::fabs(full);
      for (std::uint32_t l = 0; l < fan_in; ++l) {
        const long double t = static_cast<long double>(to_double(r.layer.weight(row, l))) * x[l];
        full += t;
        mag += std::fabs(t);
        if (dead[row].count(l)) lost += t;
      }
      const double err = std::abs(static_cast<double>(static_cast<long double>(y[row]) - (full - lost)));
      const double tol = 1e-14 * static_cast<double>(mag) + 1e-300;
      worst_rel = std::max(worst_rel, err / static_cast<double>(mag));
      ok = ok && err <= tol;
    }
    for (std::uint32_t row = 0; row < fan_out; ++row) {
      for (auto l : dead[row]) x[l] = 0.0;
    }
    const auto y0 = far_linear_exact(x, h);
    for (std::uint32_t row = 0; row < fan_out; ++row) {
      double acc = 0.0;
      for (std::uint32_t l = 0; l < fan_in; ++l) acc += to_double(r.layer.weight(row, l)) * x[l];
      ok = ok && y0[row] == acc + to_double(r.layer.bias[row]);
    }
    good += ok;
  }
  return {good == cases, cat(good, "/", cases, " cases, worst relative residual ", worst_rel)};
}

// ---------------------------------------------------------------- criterion 6

Outcome accuracy_preservation() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (const auto& task : bundled_tasks()) {
    const auto t = train_bundled(task);
    const auto hard = harden_network(t.net, t.train, NetworkFarOptions{});
    const double base = accuracy(far_forward_fp16(wrap_baseline(t.net), t.held_out), t.held_out.labels);
    const double far = accuracy(far_forward_fp16(hard, t.held_out), t.held_out.labels);
    ok = ok && base - far <= 0.02;
    detail += cat(task.name, " ", base, " -> ", far, "; ");
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 60.0, cat(detail, secs, " s")};
}

// ---------------------------------------------------------------- criterion 7

// Independent statement of the FaRMap rules used to classify fuzzed blobs.
bool oracle_valid(const FarMap& m, const ShadowStore& s, const LinearLayer& dram) {
  if (m.fan_in != dram.fan_in || m.fan_out != dram.fan_out) return false;
  const std::uint32_t budget = 15u * m.fan_in / 100u;
  std::map<std::uint32_t, std::uint32_t> per_row;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<FarMapEntry>> groups;
  std::set<std::uint32_t> used;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    if (i > 0) {
      const auto& p = m.entries[i - 1];
      if (p.row > e.row || (p.row == e.row && p.lane >= e.lane)) return false;
    }
    if (e.row >= m.fan_out || e.lane >= m.fan_in) return false;
    if (++per_row[e.row] > budget) return false;
    if (e.action == FarAction::skip) {
      if (e.donor != 0xFFFF || e.div != 0 || e.shadow_addr != 0xFFFF) return false;
      continue;
    }
    if (e.action != FarAction::rewire) return false;
    if (e.donor >= m.fan_in || e.shadow_addr >= s.values.size() || (e.div != 2 && e.div != 3)) return false;
    if (e.lane / 32 != e.donor / 32) return false;
    groups[{e.row, e.donor}].push_back(e);
    used.insert(e.shadow_addr);
  }
  for (const auto& [key, g] : groups) {
    bool donor_lane = false;
    for (const auto& e : g) {
      if (e.div != g[0].div || e.shadow_addr != g[0].shadow_addr) return false;
      donor_lane = donor_lane || e.lane == key.second;
    }
    if (g.size() != g[0].div || !donor_lane) return false;
  }
  return used.size() == s.values.size();
}

void fix_crc(std::vector<std::uint8_t>& blob) {
  const std::size_t body = blob.size() - 4;
  const std::uint32_t crc = crc32_of(std::span(blob).first(body));
  for (int i = 0; i < 4; ++i) blob[body + i] = static_cast<std::uint8_t>(crc >> (8 * i));
}

// Rewrites one structural field and re-seals the blob, so only the
// structural validator stands between it and deployment.
void structural_mutation(std::mt19937_64& rng, FarMap& m, ShadowStore& s) {
  auto pick = [&] { return std::uniform_int_distribution<std::size_t>(0, m.entries.size() - 1)(rng); };
  switch (rng() % 12) {
    case 0: m.entries[pick()].row = static_cast<std::uint16_t>(m.fan_out + rng() % 4); break;
    case 1: m.entries[pick()].lane = static_cast<std::uint16_t>(m.fan_in + rng() % 4); break;
    case 2: m.entries[pick()].donor = static_cast<std::uint16_t>(rng() % 0xFFFF); break;
    case 3: m.entries[pick()].div = static_cast<std::uint8_t>(rng() % 6); break;
    case 4: m.entries[pick()].shadow_addr = static_cast<std::uint16_t>(s.values.size() + rng() % 3); break;
    case 5: m.entries[pick()].action = static_cast<FarAction>(rng() % 4); break;
    case 6: m.entries.erase(m.entries.begin() + static_cast<std::ptrdiff_t>(pick())); break;
    case 7: {
      const auto i = pick();
      m.entries.insert(m.entries.begin() + static_cast<std::ptrdiff_t>(i), m.entries[i]);
      break;
    }
    case 8: {
      const auto i = pick(), j = pick();
      std::swap(m.entries[i], m.entries[j]);
      break;
    }
    case 9: s.values.push_back(random_word(rng)); break;
    case 10: {
      // Fill one row beyond its budget with SKIP entries on unused lanes.
      const std::uint16_t row = m.entries[pick()].row;
      std::set<std::uint16_t> lanes;
      for (const auto& e : m.row_slice(row)) lanes.insert(e.lane);
      for (std::uint16_t l = 0; l < m.fan_in && lanes.size() <= row_budget(m.fan_in) + 1; ++l) {
        if (lanes.insert(l).second) m.entries.push_back(FarMapEntry::skip_lane(row, l));
      }
      std::stable_sort(m.entries.begin(), m.entries.end(), [](const FarMapEntry& a, const FarMapEntry& b) { return std::tie(a.row, a.lane) < std::tie(b.row, b.lane); });
      break;
    }
    default: m.fan_in = static_cast<std::uint16_t>(m.fan_in + 1 + rng() % 3); break;
  }
}

Outcome budget_and_fuzz() {
  std::mt19937_64 rng(7);
  // Emitted maps at the default budget never exceed floor(0.15 * fan_in) per row.
  std::size_t rows = 0, over = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::uint32_t fan_in = std::uniform_int_distribution<std::uint32_t>(1, 300)(rng), fan_out = std::uniform_int_distribution<std::uint32_t>(1, 8)(rng);
    const auto r = random_layer(rng, fan_in, fan_out, 0.5);
    FarOptions opt;
    opt.div = rng() & 1 ? 2 : 3;
    opt.skip_remaining = rng() & 1;
    const auto h = compile_far(r.layer, r.ranking, opt).layer;
    for (std::uint32_t row = 0; row < fan_out; ++row, ++rows) over += h.map.row_slice(row).size() > 15u * fan_in / 100u;
  }
  for (const auto& task : bundled_tasks()) {
    const auto t = train_bundled(task);
    for (const auto& l : harden_network(t.net, t.train, NetworkFarOptions{}).layers) {
      for (std::uint32_t row = 0; row < l.map.fan_out; ++row, ++rows) over += l.map.row_slice(row).size() > 15u * l.dram.fan_in / 100u;
    }
  }

  std::size_t corrupted = 0, false_accepts = 0, raw = 0, structural = 0, fallback_bad = 0;
  while (corrupted < 10000) {
    const std::uint32_t fan_in = std::uniform_int_distribution<std::uint32_t>(20, 96)(rng), fan_out = std::uniform_int_distribution<std::uint32_t>(1, 8)(rng);
    const auto r = random_layer(rng, fan_in, fan_out, 0.5);
    FarOptions opt;
    opt.div = rng() & 1 ? 2 : 3;
    opt.skip_remaining = rng() & 1;
    const auto h = compile_far(r.layer, r.ranking, opt).layer;
    if (h.map.entries.empty()) continue;
    const auto fmap0 = encode_fmap(h.map), fshd0 = encode_fshd(h.shadow);
    auto fmap = fmap0, fshd = fshd0;

    bool invalid = false;
    if (rng() & 1) {
      auto& blob = rng() % 4 == 0 ? fshd : fmap;
      switch (rng() % 4) {
        case 0: blob[rng() % blob.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8)); break;
        case 1: {
          const std::size_t at = rng() % blob.size(), len = 1 + rng() % 8;
          for (std::size_t i = at; i < std::min(blob.size(), at + len); ++i) blob[i] = static_cast<std::uint8_t>(rng());
          break;
        }
        case 2: blob.resize(rng() % blob.size()); break;
        default: blob.push_back(static_cast<std::uint8_t>(rng())); break;
      }
      invalid = fmap != fmap0 || fshd != fshd0;
      raw += invalid;
    } else {
      FarMap m = h.map;
      ShadowStore s = h.shadow;
      structural_mutation(rng, m, s);
      fmap = encode_fmap(m);
      fshd = encode_fshd(s);
      fix_crc(fmap);
      invalid = !oracle_valid(m, s, h.dram);
      structural += invalid;
    }
    if (!invalid) continue;
    ++corrupted;
    const auto d = validate_and_enable(h.dram, fmap, fshd);
    if (d.enabled) {
      ++false_accepts;
      continue;
    }
    if (corrupted % 97 == 0) {
      const auto act = random_acts(rng, std::size_t{4} * fan_in);
      const auto got = run_layer(act, 4, d.layer, DpeConfig{});
      HardenedLayer base = h;
      base.enabled = false;
      fallback_bad += d.layer.enabled || got.outputs != run_layer(act, 4, base, DpeConfig{}).outputs;
    }
  }
  const bool ok = over == 0 && false_accepts == 0 && fallback_bad == 0;
  return {ok, cat(rows, " rows within budget (", over, " over); ", corrupted, " corrupted blobs (", raw, " raw, ", structural, " re-sealed structural), ",
                  false_accepts, " false accepts, ", fallback_bad, " bad fallbacks")};
}

// ---------------------------------------------------------------- criterion 8

Outcome robustness_direction() {
  bool ok = true;
  std::string detail;
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  for (const auto& task : bundled_tasks()) {
    std::vector<double> base, hard;
    for (const auto seed : seeds) {
      const auto t = train_bundled(task, seed);
      const auto hn = harden_network(t.net, t.train, NetworkFarOptions{});
      AttackConfig cfg;
      cfg.seed = seed;
      base.push_back(static_cast<double>(run_attack(wrap_baseline(t.net), t.held_out, cfg).trace.censored_flips()));
      hard.push_back(static_cast<double>(run_attack(hn, t.held_out, cfg).trace.censored_flips()));
    }
    const auto row = summarize_robustness(task.name, base, hard);
    ok = ok && row.ratio >= 1.0;
    std::string b, h;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      b += cat(i ? "," : "", base[i]);
      h += cat(i ? "," : "", hard[i]);
    }
    detail += cat(task.name, " baseline [", b, "] hardened [", h, "] medians ", row.baseline_median, "/", row.hardened_median, " ratio ", row.ratio,
                  " (reference band 1.4-4.2); ");
  }
  return {ok, detail};
}

// ---------------------------------------------------------------- criterion 9

double linear_loss(const LinearLayer& L, const Batch& batch) {
  double total = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    std::vector<double> z(L.fan_out);
    for (std::uint32_t r = 0; r < L.fan_out; ++r) {
      z[r] = to_double(L.bias[r]);
      for (std::uint32_t k = 0; k < L.fan_in; ++k) z[r] += to_double(L.weight(r, k)) * batch.inputs[s * L.fan_in + k];
    }
    const double m = *std::max_element(z.begin(), z.end());
    double e = 0.0;
    for (double v : z) e += std::exp(v - m);
    total += m + std::log(e) - z[batch.labels[s]];
  }
  return total / static_cast<double>(batch.size());
}

Outcome pbs_oracle() {
  const auto t0 = Clock::now();
  int matched = 0, runs = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed, ++runs) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::normal_distribution<double> g(0, 1);
    ToyNetwork net;
    net.class_count = 4;
    auto L = LinearLayer::zeros(4, 4);
    for (auto& w : L.weights) w = fp16_from_real(u(rng));
    for (auto& b : L.bias) b = fp16_from_real(0.1 * u(rng));
    net.layers.push_back(L);
    Batch batch{4, {}, {}};
    for (std::size_t i = 0; i < 24; ++i) {
      for (int k = 0; k < 4; ++k) batch.inputs.push_back(g(rng));
      batch.labels.push_back(static_cast<std::uint32_t>(i % 4));
    }

    AttackConfig cfg;
    cfg.top_n = 4 * 4 * 16;
    cfg.flip_budget = 3;
    cfg.objective.accuracy_threshold = 0.0;
    const auto trace = run_attack(wrap_baseline(net), batch, cfg).trace;

    LinearLayer oracle = L;
    bool same = trace.flips.size() == 3;
    for (std::size_t it = 0; it < 3 && same; ++it) {
      const double before = linear_loss(oracle, batch);
      std::optional<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, double>> best;
      for (std::uint32_t r = 0; r < 4; ++r) {
        for (std::uint32_t k = 0; k < 4; ++k) {
          for (std::uint32_t bit = 0; bit < 16; ++bit) {
            LinearLayer t = oracle;
            Fp16& w = t.weights[r * 4 + k];
            w = flip_bit(w, bit);
            if (!std::isfinite(to_double(w))) continue;
            const double loss = linear_loss(t, batch);
            if (!best || loss > std::get<3>(*best)) best = std::tuple(r, k, bit, loss);
          }
        }
      }
      if (!best || !(std::get<3>(*best) > before)) {
        same = false;
        break;
      }
      const auto& f = trace.flips[it].flip;
      same = f.row == std::get<0>(*best) && f.lane == std::get<1>(*best) && f.bit == std::get<2>(*best);
      auto& w = oracle.weights[std::get<0>(*best) * 4 + std::get<1>(*best)];
      w = flip_bit(w, std::get<2>(*best));
    }
    matched += same;
  }
  const double secs = seconds_since(t0);
  return {matched == runs, cat(matched, "/", runs, " models match exhaustive greedy for 3 iterations, ", secs, " s")};
}

// --------------------------------------------------------------- criterion 10

Outcome port_structure() {
  std::mt19937_64 rng(10);
  int maps = 0, dual_stalls = 0, mixed = 0, mixed_without_stall = 0;
  for (; maps < 200; ++maps) {
    const auto h = random_hardened(rng, 32, 32, 0.15);
    const auto act = random_acts(rng, 32 * 32);
    DpeConfig cfg;
    dual_stalls += run_layer(act, 32, h, cfg).report.stall_cycles != 0;
    cfg.dual_port_weights = false;
    for (std::uint32_t row = 0; row < 32; ++row) {
      if (!has_rewire(h.map, row)) continue;
      ++mixed;
      // The row alone, as a one-output layer.
      HardenedLayer one;
      one.dram = LinearLayer::zeros(32, 1);
      for (std::uint32_t l = 0; l < 32; ++l) one.dram.weights[l] = h.dram.weight(row, l);
      one.dram.bias[0] = h.dram.bias[row];
      one.map = FarMap{0, 32, 1, {}};
      std::set<std::uint16_t> addrs;
      for (auto e : h.map.row_slice(row)) addrs.insert(e.shadow_addr);
      addrs.erase(kNoLane);
      std::map<std::uint16_t, std::uint16_t> remap;
      for (auto a : addrs) {
        remap[a] = static_cast<std::uint16_t>(one.shadow.values.size());
        one.shadow.values.push_back(h.shadow.values[a]);
      }
      for (auto e : h.map.row_slice(row)) {
        e.row = 0;
        if (e.action == FarAction::rewire) e.shadow_addr = remap[e.shadow_addr];
        one.map.entries.push_back(e);
      }
      mixed_without_stall += run_layer(std::span(act).first(32), 1, one, cfg).report.stall_cycles == 0;
    }
  }
  const bool ok = dual_stalls == 0 && mixed > 0 && mixed_without_stall == 0;
  return {ok, cat(maps, " maps: dual-port maps with stalls ", dual_stalls, "; single-port mixed rows ", mixed, ", without a stall ", mixed_without_stall)};
}

// --------------------------------------------------------------- criterion 11

Outcome metadata_footprint() {
  std::size_t shapes = 0, over = 0;
  double worst = 0.0;
  std::string worst_name;
  bool formula_ok = true;
  for (const auto& model : vit_model_shapes()) {
    for (const auto& s : model.layers) {
      for (std::uint32_t div : {2u, 3u}) {
        ++shapes;
        const std::uint32_t budget = 15u * s.k / 100u;
        const std::size_t groups = budget / div, entries = std::size_t{s.n} * groups * div, shadow = std::size_t{s.n} * groups;
        const std::size_t expect = entries == 0 ? 0 : (15 + 10 * entries + 4) + (9 + 2 * shadow + 4);
        const std::size_t got = shape_metadata_bytes(s, FarSetting{true, kFarBudgetFraction, static_cast<std::uint8_t>(div)});
        formula_ok = formula_ok && got == expect;
        const std::size_t weight_bytes = std::size_t{s.k} * s.n * 2;
        over += 100 * got > 2 * weight_bytes;
        const double share = static_cast<double>(got) / static_cast<double>(weight_bytes);
        if (share > worst) {
          worst = share;
          worst_name = cat(model.name, "/", s.name, " div ", div);
        }
      }
    }
  }
  // The shape-only count agrees with real serialized blobs.
  FarMap m{0, 64, 2, {}};
  ShadowStore sh;
  for (std::uint16_t r = 0; r < 2; ++r) {
    for (std::uint16_t g = 0; g < 4; ++g) {
      const auto addr = static_cast<std::uint16_t>(sh.values.size());
      sh.values.push_back(fp16_from_real(0.25 * (addr + 1)));
      m.entries.push_back(FarMapEntry::rewire(r, static_cast<std::uint16_t>(2 * g), static_cast<std::uint16_t>(2 * g), 2, addr));
      m.entries.push_back(FarMapEntry::rewire(r, static_cast<std::uint16_t>(2 * g + 1), static_cast<std::uint16_t>(2 * g), 2, addr));
    }
  }
  validate_far(m, sh);
  formula_ok = formula_ok && encode_fmap(m).size() + encode_fshd(sh).size() == shape_metadata_bytes(LayerShape{"probe", 1, 64, 2}, FarSetting{true, kFarBudgetFraction, 2});
  return {formula_ok && over == 0,
          cat(over, "/", shapes, " shapes above 2% of weight bytes; worst ", 100.0 * worst, "% (", worst_name, "); byte count cross-check ", formula_ok ? "ok" : "MISMATCH")};
}

struct Criterion {
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"baseline tile is 1036 cycles", baseline_tile},
      {"FaR tile without overlap is 1068 cycles", far_tile_no_overlap},
      {"FaR tile with overlap <= 1037 cycles, matmul ratio <= 1.03", far_tile_overlap},
      {"DPE bitwise equals the fp16 reference over 10^4 cases", bit_exact},
      {"wide-precision FaR drops exactly the dead-lane terms", functional_preservation},
      {"hardened toy models lose <= 2 points of accuracy", accuracy_preservation},
      {"row budget holds and 10^4 corrupted blobs are rejected", budget_and_fuzz},
      {"hardened median flips-to-objective >= baseline", robustness_direction},
      {"PBS equals exhaustive greedy on a 4x4 layer", pbs_oracle},
      {"dual-port never stalls, single-port stalls on mixed rows", port_structure},
      {"FMAP+FSHD <= 2% of weight bytes at the 15% budget", metadata_footprint},
  };
  std::vector<std::size_t> selected;
  if (argc > 1) {
    for (int i = 1; i < argc; ++i) {
      const int n = std::atoi(argv[i]);
      if (n < 1 || n > static_cast<int>(criteria.size())) {
        std::fprintf(stderr, "usage: acceptance [1-%zu ...]\n", criteria.size());
        return 2;
      }
      selected.push_back(static_cast<std::size_t>(n - 1));
    }
  } else {
    for (std::size_t i = 0; i < criteria.size(); ++i) selected.push_back(i);
  }
  int failed = 0;
  for (auto i : selected) {
    Outcome o{false, ""};
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, cat("exception: ", e.what())};
    }
    std::printf("criterion %02zu %s: %s -- %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].title, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
