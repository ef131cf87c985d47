//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "farbench/far_reference.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace farbench {

enum class AttackerView : std::uint8_t { vanilla_over_dram, far_aware };
enum class ObjectiveKind : std::uint8_t { accuracy, loss, targeted };
enum class AttackMode : std::uint8_t { pbs, random };

inline const char* view_name(AttackerView v) { return v == AttackerView::far_aware ? "far_aware" : "vanilla_over_dram"; }
inline const char* objective_name(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::accuracy: return "accuracy";
    case ObjectiveKind::loss: return "loss";
    case ObjectiveKind::targeted: return "targeted";
  }
  return "?";
}
inline const char* mode_name(AttackMode m) { return m == AttackMode::random ? "random" : "pbs"; }

struct AttackObjective {
  ObjectiveKind kind = ObjectiveKind::accuracy;
  /// Untargeted accuracy goal; unset means 1/classes + 0.1.
  std::optional<double> accuracy_threshold;
  double loss_target = 0.0;
  /// Targeted: push source-class samples to target_class while the accuracy
  /// on the other classes stays within other_tolerance of its start value.
  std::uint32_t source_class = 0;
  std::uint32_t target_class = 1;
  double targeted_success = 0.9;
  double other_tolerance = 0.05;
};

struct AttackConfig {
  std::uint32_t top_n = 10;
  std::uint32_t flip_budget = 100;
  AttackObjective objective{};
  AttackerView view = AttackerView::vanilla_over_dram;
  AttackMode mode = AttackMode::pbs;
  std::uint64_t seed = 1;
  std::uint16_t bit_mask = 0xFFFF;  // bit positions the attacker may flip

  void validate() const {
    if (top_n < 1) throw std::invalid_argument("top_n must be at least 1");
    if (bit_mask == 0) throw std::invalid_argument("bit_mask selects no bit");
    if (objective.kind == ObjectiveKind::targeted && objective.source_class == objective.target_class) {
      throw std::invalid_argument("targeted attack needs distinct source and target classes");
    }
  }
};

struct BitFlip {
  std::uint32_t layer = 0, row = 0, lane = 0, bit = 0;
  Fp16 pre{}, post{};

  friend bool operator==(const BitFlip&, const BitFlip&) = default;
  auto key() const { return std::tuple(layer, row, lane, bit); }
};

struct Candidate {
  BitFlip flip;
  double estimate = 0.0;  // gradient * value delta in the attacker's view
  double loss = 0.0;      // measured on the deployed model
};

struct PbsResult {
  double loss_before = 0.0;
  std::vector<Candidate> candidates;  // the loss set, in scan order
  std::optional<Candidate> best;
  bool saturated = false;
};

struct AttackEval {
  double loss = 0.0;      // the quantity PBS maximizes
  double accuracy = 0.0;  // top-1 on the attack batch
  double source_to_target = 0.0;
  double other_accuracy = 0.0;
};

struct CommittedFlip {
  BitFlip flip;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct AttackTrace {
  AttackConfig config;
  std::size_t batch_size = 0;
  AttackEval initial;
  std::vector<CommittedFlip> flips;
  std::size_t iterations = 0;
  bool success = false;
  bool saturated = false;
  std::string stop_reason;

  /// Flips needed to meet the objective, or budget + 1 when it was not met.
  std::size_t censored_flips() const { return success ? flips.size() : std::size_t{config.flip_budget} + 1; }
};

namespace detail {

struct AttackState {
  const HardenedNetwork* net;
  const Batch* batch;
  Batch loss_batch;  // relabelled for targeted attacks
  double loss_sign = 1.0;
  NetworkRoutes deployed;
  std::vector<WideLayer> wide;
  AttackEval initial;
};

inline double deployed_loss(const AttackState& s) {
  const auto fwd = forward_wide(s.wide, s.net->class_count, s.loss_batch, &s.deployed);
  return s.loss_sign * cross_entropy(fwd, s.loss_batch.labels);
}

inline AttackEval evaluate(const AttackState& s, const AttackObjective& obj) {
  const auto fwd = forward_wide(s.wide, s.net->class_count, *s.batch, &s.deployed);
  AttackEval e;
  e.accuracy = accuracy(fwd, s.batch->labels);
  e.loss = s.loss_sign * cross_entropy(s.loss_sign > 0 ? fwd : forward_wide(s.wide, s.net->class_count, s.loss_batch, &s.deployed),
                                       s.loss_batch.labels);
  if (obj.kind == ObjectiveKind::targeted) {
    std::size_t src = 0, moved = 0, other = 0, other_hits = 0;
    for (std::size_t i = 0; i < s.batch->size(); ++i) {
      const auto pred = argmax_class(fwd.sample_logits(i));
      if (s.batch->labels[i] == obj.source_class) {
        ++src;
        moved += pred == obj.target_class;
      } else {
        ++other;
        other_hits += pred == s.batch->labels[i];
      }
    }
    e.source_to_target = src ? static_cast<double>(moved) / static_cast<double>(src) : 0.0;
    e.other_accuracy = other ? static_cast<double>(other_hits) / static_cast<double>(other) : 0.0;
  }
  return e;
}

inline AttackState make_state(const HardenedNetwork& net, const Batch& batch, const AttackObjective& obj) {
  AttackState s{&net, &batch, batch, 1.0, deployed_routes(net), widen(net.dram_view()), {}};
  if (obj.kind == ObjectiveKind::targeted) {
    if (obj.source_class >= net.class_count || obj.target_class >= net.class_count) throw std::invalid_argument("targeted class out of range");
    for (auto& y : s.loss_batch.labels) {
      if (y == obj.source_class) y = obj.target_class;
    }
    s.loss_sign = -1.0;
  }
  return s;
}

inline bool finite_word(Fp16 w) { return std::isfinite(to_double(w)); }

/// Deployed loss with each candidate applied alone. A flip at (layer, row)
/// only changes that output, so the cached forward pass is patched there and
/// the later layers are re-run. Results land in candidate order.
inline void measure_candidates(const AttackState& s, std::vector<Candidate>& cands) {
  const std::size_t depth = s.wide.size();
  const std::uint32_t classes = s.net->class_count;
  const auto base = forward_wide(s.wide, classes, s.loss_batch, &s.deployed);
  const double before = s.loss_sign * cross_entropy(base, s.loss_batch.labels);
  std::vector<std::optional<RoutedOperands>> ops(depth);
  std::vector<NetworkRoutes> tail(depth + 1);
  for (std::size_t li = 0; li < depth; ++li) {
    if (const LayerRoutes* lr = routes_for(&s.deployed, li)) ops[li] = expand_routes(s.wide[li], *lr);
    if (!s.deployed.empty()) tail[li].assign(s.deployed.begin() + static_cast<std::ptrdiff_t>(li), s.deployed.end());
  }
  const std::size_t bs = s.loss_batch.size();
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      auto& c = cands[i];
      const std::size_t l = c.flip.layer;
      const auto& L = s.wide[l];
      const std::size_t idx = std::size_t{c.flip.row} * L.fan_in + c.flip.lane;
      if (ops[l] && !ops[l]->stored[idx]) {
        c.loss = before;  // the deployed datapath does not read this word
        continue;
      }
      const double scale = ops[l] ? ops[l]->scale[idx] : 1.0;
      const std::uint32_t src = ops[l] ? ops[l]->source[idx] : c.flip.lane;
      const double dw = to_double(c.flip.post) - L.w[idx];
      Batch y{L.fan_out, l + 1 < depth ? base.layer_inputs[l + 1] : base.logits, s.loss_batch.labels};
      for (std::size_t b = 0; b < bs; ++b) {
        const double pre = base.pre_activations[l][b * L.fan_out + c.flip.row] + dw * (scale * base.layer_inputs[l][b * L.fan_in + src]);
        y.inputs[b * L.fan_out + c.flip.row] = activate(L.activation, pre);
      }
      ForwardResult out;
      if (l + 1 < depth) {
        out = forward_wide(std::span(s.wide).subspan(l + 1), classes, y, &tail[l + 1]);
      } else {
        out.classes = classes;
        out.logits = std::move(y.inputs);
      }
      c.loss = s.loss_sign * cross_entropy(out, s.loss_batch.labels);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 16);
  const std::size_t chunk = std::max<std::size_t>(16, (cands.size() + workers - 1) / workers);
  std::vector<std::thread> pool;
  for (std::size_t lo = chunk; lo < cands.size(); lo += chunk) pool.emplace_back(work, lo, std::min(cands.size(), lo + chunk));
  work(0, std::min(chunk, cands.size()));
  for (auto& t : pool) t.join();
}

}  // namespace detail

inline double default_accuracy_threshold(std::uint32_t classes) { return 1.0 / classes + 0.1; }

inline bool objective_met(const AttackObjective& obj, const AttackEval& now, const AttackEval& start, std::uint32_t classes) {
  switch (obj.kind) {
    case ObjectiveKind::accuracy: return now.accuracy <= obj.accuracy_threshold.value_or(default_accuracy_threshold(classes));
    case ObjectiveKind::loss: return now.loss >= obj.loss_target;
    case ObjectiveKind::targeted:
      return now.source_to_target >= obj.targeted_success && start.other_accuracy - now.other_accuracy <= obj.other_tolerance;
  }
  return false;
}

/// Loss and accuracy of the deployed model on `batch`.
inline AttackEval evaluate_attack(const HardenedNetwork& net, const Batch& batch, const AttackObjective& obj = {}) {
  return detail::evaluate(detail::make_state(net, batch, obj), obj);
}

/// One PBS step. Bits are ranked per layer by the attacker-view estimate
/// grad * (flipped - stored); flips to NaN or infinity are never candidates.
/// The top_n per layer are flipped one at a time on the deployed model and the
/// loss set is measured. The best candidate is returned only if it raises the
/// loss.
inline PbsResult pbs_iteration(const HardenedNetwork& net, const Batch& batch, const AttackConfig& cfg) {
  cfg.validate();
  auto s = detail::make_state(net, batch, cfg.objective);
  PbsResult res;
  res.loss_before = detail::deployed_loss(s);

  const auto view_routes = cfg.view == AttackerView::far_aware ? s.deployed : attacker_routes(net);
  const auto grads = detail::backprop(s.wide, net.class_count, s.loss_batch, &view_routes, false);

  for (std::uint32_t li = 0; li < net.layers.size(); ++li) {
    const auto& L = net.layers[li].dram;
    const auto& g = grads.layers[li].weight_grad;
    std::vector<Candidate> ranked;
    for (std::uint32_t r = 0; r < L.fan_out; ++r) {
      for (std::uint32_t k = 0; k < L.fan_in; ++k) {
        const std::size_t i = std::size_t{r} * L.fan_in + k;
        const Fp16 pre = L.weights[i];
        for (std::uint32_t bit = 0; bit < 16; ++bit) {
          if (!(cfg.bit_mask >> bit & 1)) continue;
          const Fp16 post = flip_bit(pre, bit);
          if (!detail::finite_word(pre) || !detail::finite_word(post)) continue;
          const double est = s.loss_sign * g[i] * (to_double(post) - to_double(pre));
          ranked.push_back({{li, r, k, bit, pre, post}, est, 0.0});
        }
      }
    }
    const std::size_t n = std::min<std::size_t>(cfg.top_n, ranked.size());
    std::stable_sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) { return a.estimate > b.estimate; });
    ranked.resize(n);
    std::sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) { return a.flip.key() < b.flip.key(); });
    res.candidates.insert(res.candidates.end(), ranked.begin(), ranked.end());
  }
  detail::measure_candidates(s, res.candidates);
  for (const auto& c : res.candidates) {
    if (std::isnan(c.loss)) continue;
    if (!res.best || c.loss > res.best->loss) res.best = c;
  }
  if (!res.best || !(res.best->loss > res.loss_before)) {
    res.best.reset();
    res.saturated = true;
  }
  return res;
}

inline void apply_flip(HardenedNetwork& net, const BitFlip& f) {
  if (f.layer >= net.layers.size()) throw std::out_of_range("flip layer out of range");
  auto& L = net.layers[f.layer].dram;
  if (f.row >= L.fan_out || f.lane >= L.fan_in || f.bit > 15) throw std::out_of_range("flip position out of range");
  Fp16& w = L.weights[std::size_t{f.row} * L.fan_in + f.lane];
  if (w != f.pre || flip_bit(f.pre, f.bit) != f.post) throw std::invalid_argument("flip does not match the stored word");
  w = f.post;
}

namespace detail {

inline std::optional<BitFlip> random_flip(const HardenedNetwork& net, std::uint16_t mask, std::mt19937_64& rng) {
  std::vector<std::uint32_t> bits;
  for (std::uint32_t b = 0; b < 16; ++b) {
    if (mask >> b & 1) bits.push_back(b);
  }
  std::size_t total = 0;
  for (const auto& h : net.layers) total += h.dram.weights.size();
  if (total == 0) return std::nullopt;
  // Redraw flips that would produce NaN or infinity.
  for (int attempt = 0; attempt < 4096; ++attempt) {
    std::size_t pick = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
    const std::uint32_t bit = bits[std::uniform_int_distribution<std::size_t>(0, bits.size() - 1)(rng)];
    std::uint32_t li = 0;
    while (pick >= net.layers[li].dram.weights.size()) pick -= net.layers[li++].dram.weights.size();
    const auto& L = net.layers[li].dram;
    const Fp16 pre = L.weights[pick];
    const Fp16 post = flip_bit(pre, bit);
    if (!finite_word(pre) || !finite_word(post)) continue;
    return BitFlip{li, static_cast<std::uint32_t>(pick / L.fan_in), static_cast<std::uint32_t>(pick % L.fan_in), bit, pre, post};
  }
  return std::nullopt;
}

}  // namespace detail

struct AttackRun {
  AttackTrace trace;
  HardenedNetwork attacked;
};

/// Commits one flip per iteration into the DRAM weights until the objective
/// is met, the budget is spent or no candidate raises the loss. The FaRMap and
/// shadow store are never touched.
inline AttackRun run_attack(const HardenedNetwork& net, const Batch& batch, const AttackConfig& cfg) {
  cfg.validate();
  AttackRun run{{}, net};
  auto& t = run.trace;
  t.config = cfg;
  t.batch_size = batch.size();
  t.initial = evaluate_attack(net, batch, cfg.objective);
  std::mt19937_64 rng(cfg.seed);
  if (objective_met(cfg.objective, t.initial, t.initial, net.class_count)) {
    t.success = true;
    t.stop_reason = "objective";
    return run;
  }
  while (t.flips.size() < cfg.flip_budget) {
    ++t.iterations;
    std::optional<BitFlip> flip;
    if (cfg.mode == AttackMode::pbs) {
      const auto step = pbs_iteration(run.attacked, batch, cfg);
      if (step.saturated) {
        t.saturated = true;
        t.stop_reason = "saturated";
        return run;
      }
      flip = step.best->flip;
    } else {
      flip = detail::random_flip(run.attacked, cfg.bit_mask, rng);
      if (!flip) {
        t.saturated = true;
        t.stop_reason = "saturated";
        return run;
      }
    }
    apply_flip(run.attacked, *flip);
    const auto now = evaluate_attack(run.attacked, batch, cfg.objective);
    t.flips.push_back({*flip, now.loss, now.accuracy});
    if (objective_met(cfg.objective, now, t.initial, net.class_count)) {
      t.success = true;
      t.stop_reason = "objective";
      return run;
    }
  }
  t.stop_reason = "budget";
  return run;
}

/// Re-applies committed flips to a fresh copy of the attacked model.
inline HardenedNetwork replay_trace(const HardenedNetwork& net, const AttackTrace& trace) {
  HardenedNetwork out = net;
  for (const auto& f : trace.flips) apply_flip(out, f.flip);
  return out;
}

inline nlohmann::ordered_json config_json(const AttackConfig& c) {
  nlohmann::ordered_json o{{"kind", objective_name(c.objective.kind)}};
  if (c.objective.accuracy_threshold) o["accuracy_threshold"] = *c.objective.accuracy_threshold;
  o["loss_target"] = c.objective.loss_target;
  o["source_class"] = c.objective.source_class;
  o["target_class"] = c.objective.target_class;
  o["targeted_success"] = c.objective.targeted_success;
  o["other_tolerance"] = c.objective.other_tolerance;
  return {{"top_n", c.top_n},     {"flip_budget", c.flip_budget}, {"objective", o},         {"view", view_name(c.view)},
          {"mode", mode_name(c.mode)}, {"seed", c.seed},          {"bit_mask", c.bit_mask}};
}

inline AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig c;
  c.top_n = j.at("top_n");
  c.flip_budget = j.at("flip_budget");
  const auto& o = j.at("objective");
  const std::string kind = o.at("kind");
  c.objective.kind = kind == "loss" ? ObjectiveKind::loss : kind == "targeted" ? ObjectiveKind::targeted : ObjectiveKind::accuracy;
  if (o.contains("accuracy_threshold")) c.objective.accuracy_threshold = o["accuracy_threshold"].get<double>();
  c.objective.loss_target = o.at("loss_target");
  c.objective.source_class = o.at("source_class");
  c.objective.target_class = o.at("target_class");
  c.objective.targeted_success = o.at("targeted_success");
  c.objective.other_tolerance = o.at("other_tolerance");
  c.view = j.at("view") == "far_aware" ? AttackerView::far_aware : AttackerView::vanilla_over_dram;
  c.mode = j.at("mode") == "random" ? AttackMode::random : AttackMode::pbs;
  c.seed = j.at("seed");
  c.bit_mask = j.at("bit_mask");
  return c;
}

/// Header line with config and start state, then one line per committed flip.
inline std::string trace_to_jsonl(const AttackTrace& t) {
  std::ostringstream out;
  const nlohmann::ordered_json header{{"type", "header"},
                                      {"config", config_json(t.config)},
                                      {"batch_size", t.batch_size},
                                      {"initial_loss", t.initial.loss},
                                      {"initial_accuracy", t.initial.accuracy},
                                      {"iterations", t.iterations},
                                      {"success", t.success},
                                      {"saturated", t.saturated},
                                      {"stop_reason", t.stop_reason}};
  out << header.dump() << '\n';
  for (const auto& f : t.flips) {
    const nlohmann::ordered_json line{{"type", "flip"},      {"layer", f.flip.layer}, {"row", f.flip.row},     {"lane", f.flip.lane},
                                      {"bit", f.flip.bit},   {"pre", f.flip.pre.bits}, {"post", f.flip.post.bits},
                                      {"loss", f.loss},      {"accuracy", f.accuracy}};
    out << line.dump() << '\n';
  }
  return out.str();
}

inline AttackTrace trace_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  AttackTrace t;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.at("type") == "header") {
      t.config = attack_config_from_json(j.at("config"));
      t.batch_size = j.at("batch_size");
      t.initial.loss = j.at("initial_loss");
      t.initial.accuracy = j.at("initial_accuracy");
      t.iterations = j.at("iterations");
      t.success = j.at("success");
      t.saturated = j.at("saturated");
      t.stop_reason = j.at("stop_reason");
      header = true;
    } else {
      BitFlip f{j.at("layer"), j.at("row"), j.at("lane"), j.at("bit"), Fp16(j.at("pre").get<std::uint16_t>()),
                Fp16(j.at("post").get<std::uint16_t>())};
      t.flips.push_back({f, j.at("loss"), j.at("accuracy")});
    }
  }
  if (!header) throw std::invalid_argument("trace has no header line");
  return t;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

struct RobustnessRow {
  std::string mode;
  std::vector<double> baseline_flips;  // censored at budget + 1
  std::vector<double> hardened_flips;
  double baseline_median = 0.0;
  double hardened_median = 0.0;
  double ratio = 1.0;  // hardened / baseline
};

inline RobustnessRow summarize_robustness(std::string mode, std::vector<double> baseline, std::vector<double> hardened) {
  RobustnessRow r{std::move(mode), std::move(baseline), std::move(hardened), 0.0, 0.0, 1.0};
  r.baseline_median = median(r.baseline_flips);
  r.hardened_median = median(r.hardened_flips);
  r.ratio = r.baseline_median > 0 ? r.hardened_median / r.baseline_median : 1.0;
  return r;
}

/// Seeded subsample of `pool` in ascending index order; the whole pool when
/// it is smaller than `batch_size`.
inline Batch draw_attack_batch(const Batch& pool, std::uint64_t seed, std::size_t batch_size) {
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(batch_size, idx.size()));
  std::sort(idx.begin(), idx.end());
  return pool.subset(idx);
}

struct RobustnessReport {
  RobustnessRow pbs;
  RobustnessRow random;
};

/// Flips-to-objective for both models under PBS and uniform random flipping.
/// Each seed draws its own attack batch of `batch_size` samples from `pool`
/// (the whole pool when it is smaller) and seeds the random attacker.
inline RobustnessReport compare_robustness(const HardenedNetwork& baseline, const HardenedNetwork& hardened, const Batch& pool,
                                           const AttackConfig& cfg, std::span<const std::uint64_t> seeds, std::size_t batch_size = 256) {
  std::vector<double> pb, ph, rb, rh;
  for (const auto seed : seeds) {
    const Batch batch = draw_attack_batch(pool, seed, batch_size);
    AttackConfig c = cfg;
    c.seed = seed;
    c.mode = AttackMode::pbs;
    pb.push_back(static_cast<double>(run_attack(baseline, batch, c).trace.censored_flips()));
    ph.push_back(static_cast<double>(run_attack(hardened, batch, c).trace.censored_flips()));
    c.mode = AttackMode::random;
    rb.push_back(static_cast<double>(run_attack(baseline, batch, c).trace.censored_flips()));
    rh.push_back(static_cast<double>(run_attack(hardened, batch, c).trace.censored_flips()));
  }
  return {summarize_robustness("pbs", pb, ph), summarize_robustness("random", rb, rh)};
}

inline nlohmann::ordered_json robustness_json(const RobustnessRow& r) {
  return {{"mode", r.mode},
          {"baseline_flips", r.baseline_flips},
          {"hardened_flips", r.hardened_flips},
          {"baseline_median", r.baseline_median},
          {"hardened_median", r.hardened_median},
          {"ratio", r.ratio}};
}

}  // namespace farbench
