//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//
// farbench: gen / train / analyze / far-compile / validate / simulate / attack / report.
//

#include "farbench/accel_system.hpp"
#include "farbench/attack.hpp"
#include "farbench/bundled.hpp"
#include "farbench/dpe.hpp"
#include "farbench/far_compiler.hpp"
#include "farbench/far_reference.hpp"
#include "farbench/model_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace farbench;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct ExperimentConfig {
  std::string task = "mlp-relu";
  std::string out_dir = "farbench-out";
  std::uint64_t seed = 1;
  std::uint32_t epochs = 40;
  std::string analysis_split = "train";
  double dead_threshold = 0.01;

  double budget = kFarBudgetFraction;
  std::uint32_t div = 2;
  std::vector<std::size_t> layers;  // empty: every layer

  std::uint32_t m = 32, k = 32, n = 32;
  bool far = true;
  bool overlap = true;
  bool dual_port = true;
  bool fill_per_tile = true;

  std::uint32_t pe_count = 2;
  double dma_bytes_per_cycle = 16.0;
  std::uint32_t tile_buffer_depth = 2;

  std::string target = "both";
  std::string mode = "pbs";
  std::string objective = "accuracy";
  std::string view = "vanilla_over_dram";
  std::uint32_t top_n = 10;
  std::uint32_t flip_budget = 100;
  std::string bit_mask = "0xFFFF";
  std::uint32_t source_class = 0;
  std::uint32_t target_class = 1;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t attack_batch = 256;
};

/// Failure with a machine-readable diagnostic for stderr.
struct CliFailure {
  int code;
  ojson diagnostic;
};

[[noreturn]] void fail(int code, std::string error, ojson extra = ojson::object()) {
  ojson d{{"error", std::move(error)}};
  for (auto& [k, v] : extra.items()) d[k] = v;
  throw CliFailure{code, std::move(d)};
}

std::string path_in(const ExperimentConfig& c, const std::string& rel) { return (fs::path(c.out_dir) / rel).string(); }

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) fail(kExitFailure, "missing_file", {{"path", path}});
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(kExitFailure, "write_failed", {{"path", path}});
  out << text;
}

void write_json(const std::string& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_text(const std::string& path) {
  require_file(path);
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  fs::create_directories(fs::path(path).parent_path());
  write_file(path, bytes);
}

ToyNetwork load_network(const std::string& path) {
  require_file(path);
  try {
    return load_model(path);
  } catch (const ValidationError& e) {
    fail(kExitFailure, "invalid_model", {{"path", path}, {"reason", reason_name(e.reason())}, {"detail", e.what()}});
  }
}

BundledTask find_task(const ExperimentConfig& c) {
  for (auto& t : bundled_tasks()) {
    if (t.name == c.task) return t;
  }
  fail(kExitUsage, "unknown_task", {{"task", c.task}});
}

struct TaskData {
  BundledTask task;
  Batch train, held_out;
};

TaskData task_data(const ExperimentConfig& c) {
  TaskData d{find_task(c), {}, {}};
  DatasetSpec spec = d.task.data;
  spec.seed = c.seed;
  std::tie(d.train, d.held_out) = split_batch(synth_dataset(spec), d.task.train_fraction);
  return d;
}

void check_fits(const ToyNetwork& net, const Batch& b, const std::string& what) {
  if (net.layers.front().fan_in != b.features || net.class_count == 0) {
    fail(kExitFailure, "shape", {{"what", what}, {"model_inputs", net.layers.front().fan_in}, {"task_features", b.features}});
  }
}

double fp16_accuracy(const HardenedNetwork& net, const Batch& b) { return accuracy(far_forward_fp16(net, b), b.labels); }

std::string fmap_path(const ExperimentConfig& c, std::size_t i) { return path_in(c, "far/layer" + std::to_string(i) + ".fmap"); }
std::string fshd_path(const ExperimentConfig& c, std::size_t i) { return path_in(c, "far/layer" + std::to_string(i) + ".fshd"); }

struct LoadedHardened {
  HardenedNetwork net;
  ojson layers = ojson::array();
  bool all_valid = true;
};

/// Loads far/dram.fmdl plus per-layer blobs. Layers without blobs run the
/// baseline path; layers whose blobs fail validation fall back to it.
LoadedHardened load_hardened(const ExperimentConfig& c) {
  LoadedHardened out;
  const ToyNetwork dram = load_network(path_in(c, "far/dram.fmdl"));
  out.net = wrap_baseline(dram);
  for (std::size_t i = 0; i < dram.layers.size(); ++i) {
    const auto fm = fmap_path(c, i), fs_ = fshd_path(c, i);
    ojson row{{"layer", i}};
    if (!fs::exists(fm) && !fs::exists(fs_)) {
      row["status"] = "BASELINE";
      out.layers.push_back(row);
      continue;
    }
    const auto fmap = fs::exists(fm) ? read_file(fm) : std::vector<std::uint8_t>{};
    const auto fshd = fs::exists(fs_) ? read_file(fs_) : std::vector<std::uint8_t>{};
    auto d = validate_and_enable(dram.layers[i], fmap, fshd, c.budget);
    if (d.enabled) {
      row["status"] = "ENABLED";
      row["entries"] = d.layer.map.entries.size();
      row["shadow_values"] = d.layer.shadow.values.size();
    } else {
      row["status"] = "DISABLED";
      row["reason"] = d.reason;
      row["detail"] = d.detail;
      out.all_valid = false;
    }
    out.net.layers[i] = std::move(d.layer);
    out.layers.push_back(row);
  }
  return out;
}

AttackConfig attack_config(const ExperimentConfig& c) {
  AttackConfig a;
  a.top_n = c.top_n;
  a.flip_budget = c.flip_budget;
  a.mode = c.mode == "random" ? AttackMode::random : AttackMode::pbs;
  a.view = c.view == "far_aware" ? AttackerView::far_aware : AttackerView::vanilla_over_dram;
  a.objective.kind = c.objective == "loss" ? ObjectiveKind::loss : c.objective == "targeted" ? ObjectiveKind::targeted : ObjectiveKind::accuracy;
  a.objective.source_class = c.source_class;
  a.objective.target_class = c.target_class;
  try {
    std::size_t used = 0;
    const unsigned long mask = std::stoul(c.bit_mask, &used, 0);
    if (used != c.bit_mask.size() || mask > 0xFFFF) throw std::invalid_argument("range");
    a.bit_mask = static_cast<std::uint16_t>(mask);
    a.validate();
  } catch (const std::exception& e) {
    fail(kExitUsage, "config", {{"detail", std::string("attack configuration: ") + e.what()}});
  }
  return a;
}

// ---------------------------------------------------------------- commands

int cmd_gen(const ExperimentConfig& c) {
  const auto task = find_task(c);
  const auto net = init_network(task.dims, task.hidden, c.seed);
  const auto path = path_in(c, "init.fmdl");
  save_bytes(path, encode_model(net));
  std::cout << "wrote " << path << " (" << task.name << ", " << net.layers.size() << " layers)\n";
  return 0;
}

int cmd_train(const ExperimentConfig& c) {
  const auto d = task_data(c);
  const auto init = load_network(path_in(c, "init.fmdl"));
  check_fits(init, d.train, "init.fmdl");
  TrainOptions opt = d.task.train;
  opt.seed = c.seed;
  opt.epochs = c.epochs;
  const auto net = train_toy(init, d.train, opt);
  save_bytes(path_in(c, "model.fmdl"), encode_model(net));

  const auto base = wrap_baseline(net);
  const ojson report{{"task", d.task.name},
                     {"seed", c.seed},
                     {"epochs", c.epochs},
                     {"train_samples", d.train.size()},
                     {"held_out_samples", d.held_out.size()},
                     {"train_accuracy_fp16", fp16_accuracy(base, d.train)},
                     {"held_out_accuracy_fp16", fp16_accuracy(base, d.held_out)},
                     {"held_out_loss", cross_entropy(forward(net, d.held_out), d.held_out.labels)}};
  write_json(path_in(c, "train.json"), report);
  std::cout << "wrote " << path_in(c, "model.fmdl") << " held-out accuracy " << report["held_out_accuracy_fp16"].get<double>() << "\n";
  return 0;
}

const Batch& analysis_batch(const ExperimentConfig& c, const TaskData& d) { return c.analysis_split == "held-out" ? d.held_out : d.train; }

int cmd_analyze(const ExperimentConfig& c) {
  const auto d = task_data(c);
  const auto net = load_network(path_in(c, "model.fmdl"));
  const Batch& batch = analysis_batch(c, d);
  check_fits(net, batch, "model.fmdl");
  const auto stats = loss_and_gradients(net, batch);

  ojson layers = ojson::array();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& L = net.layers[i];
    const auto rank = rank_sensitivity(stats.layers[i], L.fan_in, L.fan_out);
    const auto dead = dead_lanes_of(rank, c.dead_threshold);
    std::vector<std::size_t> idx(rank.saliency.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t top = std::min<std::size_t>(8, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                      [&](std::size_t a, std::size_t b) { return rank.saliency[a] != rank.saliency[b] ? rank.saliency[a] > rank.saliency[b] : a < b; });
    ojson hot = ojson::array();
    for (std::size_t t = 0; t < top; ++t) {
      hot.push_back({{"row", idx[t] / L.fan_in}, {"lane", idx[t] % L.fan_in}, {"saliency", rank.saliency[idx[t]]}});
    }
    double total = 0.0;
    for (double s : rank.saliency) total += s;
    layers.push_back({{"layer", i},
                      {"fan_in", L.fan_in},
                      {"fan_out", L.fan_out},
                      {"activation", activation_name(L.activation)},
                      {"row_budget", row_budget(L.fan_in, c.budget)},
                      {"dead_lanes", dead},
                      {"mean_saliency", total / static_cast<double>(rank.saliency.size())},
                      {"top_saliency", hot}});
  }
  const ojson report{{"task", d.task.name},
                     {"seed", c.seed},
                     {"analysis_split", c.analysis_split},
                     {"analysis_samples", batch.size()},
                     {"loss", stats.loss},
                     {"dead_threshold", c.dead_threshold},
                     {"layers", layers}};
  write_json(path_in(c, "analysis.json"), report);
  std::cout << "wrote " << path_in(c, "analysis.json") << "\n";
  return 0;
}

int cmd_far_compile(const ExperimentConfig& c) {
  const auto d = task_data(c);
  const auto net = load_network(path_in(c, "model.fmdl"));
  const Batch& batch = analysis_batch(c, d);
  check_fits(net, batch, "model.fmdl");
  for (auto l : c.layers) {
    if (l >= net.layers.size()) fail(kExitUsage, "config", {{"detail", "layer index out of range"}, {"layer", l}});
  }

  NetworkFarOptions opt;
  opt.layer.budget_fraction = c.budget;
  opt.layer.div = static_cast<std::uint8_t>(c.div);
  opt.layer.dead_threshold = c.dead_threshold;
  opt.layers = c.layers;
  std::vector<CompileResult> results;
  const auto hardened = harden_network(net, batch, opt, &results);

  fs::remove_all(path_in(c, "far"));
  save_bytes(path_in(c, "far/dram.fmdl"), encode_model(hardened.dram_view()));
  ojson layers = ojson::array();
  for (const auto& r : results) {
    const auto& h = r.layer;
    const std::size_t i = h.map.layer_id;
    const auto fmap = encode_fmap(h.map);
    const auto fshd = encode_fshd(h.shadow);
    save_bytes(fmap_path(c, i), fmap);
    save_bytes(fshd_path(c, i), fshd);
    std::size_t groups = 0, skips = 0;
    ojson notes = ojson::array();
    for (const auto& row : r.rows) {
      groups += row.groups;
      skips += row.skips;
      if (!row.note.empty()) notes.push_back({{"row", row.row}, {"note", row.note}});
    }
    const std::size_t weight_bytes = h.dram.weights.size() * 2;
    layers.push_back({{"layer", i},
                      {"fan_in", h.dram.fan_in},
                      {"fan_out", h.dram.fan_out},
                      {"dead_lanes", r.dead_lanes.size()},
                      {"hardened_rows", r.hardened_rows()},
                      {"groups", groups},
                      {"skips", skips},
                      {"entries", h.map.entries.size()},
                      {"shadow_values", h.shadow.values.size()},
                      {"fmap_bytes", fmap.size()},
                      {"fshd_bytes", fshd.size()},
                      {"weight_bytes", weight_bytes},
                      {"metadata_to_weight", static_cast<double>(fmap.size() + fshd.size()) / static_cast<double>(weight_bytes)},
                      {"row_notes", notes}});
  }
  const double base_acc = fp16_accuracy(wrap_baseline(net), d.held_out);
  const double far_acc = fp16_accuracy(hardened, d.held_out);
  const ojson report{{"task", d.task.name},
                     {"seed", c.seed},
                     {"budget_fraction", c.budget},
                     {"div", c.div},
                     {"baseline_accuracy_fp16", base_acc},
                     {"hardened_accuracy_fp16", far_acc},
                     {"accuracy_drop", base_acc - far_acc},
                     {"layers", layers}};
  write_json(path_in(c, "far/compile.json"), report);
  std::cout << "wrote " << path_in(c, "far") << ": " << results.size() << " layers, held-out accuracy " << base_acc << " -> " << far_acc << "\n";
  return 0;
}

int cmd_validate(const ExperimentConfig& c) {
  const auto loaded = load_hardened(c);
  for (const auto& row : loaded.layers) {
    std::cout << "layer " << row["layer"].get<std::size_t>() << ": " << row["status"].get<std::string>();
    if (row.contains("entries")) std::cout << " (" << row["entries"].get<std::size_t>() << " entries, " << row["shadow_values"].get<std::size_t>() << " shadow values)";
    if (row.contains("reason")) std::cout << " (" << row["reason"].get<std::string>() << ")";
    std::cout << "\n";
  }
  if (!loaded.all_valid) fail(kExitFailure, "validation", {{"layers", loaded.layers}});
  return 0;
}

int cmd_simulate(const ExperimentConfig& c) {
  if (c.m == 0 || c.k == 0 || c.n == 0 || c.k >= kNoLane || c.n >= kNoLane) fail(kExitUsage, "config", {{"detail", "shape must be positive and below 65535"}});
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> wdist(-1.0, 1.0);

  LinearLayer layer;
  layer.fan_in = c.k;
  layer.fan_out = c.n;
  layer.weights.resize(std::size_t{c.k} * c.n);
  layer.bias.resize(c.n);
  for (auto& w : layer.weights) w = fp16_from_real(wdist(rng));
  for (auto& b : layer.bias) b = fp16_from_real(0.1 * wdist(rng));

  // A quarter of the input lanes carry no activation and donate their slots.
  std::vector<std::uint32_t> lanes(c.k);
  std::iota(lanes.begin(), lanes.end(), 0u);
  std::shuffle(lanes.begin(), lanes.end(), rng);
  std::vector<std::uint8_t> dead(c.k, 0);
  for (std::uint32_t i = 0; i < (c.k + 3) / 4; ++i) dead[lanes[i]] = 1;

  std::vector<Fp16> act(std::size_t{c.m} * c.k);
  for (std::size_t i = 0; i < act.size(); ++i) act[i] = dead[i % c.k] ? kFp16Zero : fp16_from_real(wdist(rng));

  HardenedLayer h;
  if (c.far) {
    LayerGradients g;
    g.saliency.resize(layer.weights.size());
    for (std::size_t i = 0; i < g.saliency.size(); ++i) g.saliency[i] = std::abs(to_double(layer.weights[i])) * (dead[i % c.k] ? 0.0 : 1.0);
    g.mean_abs_activation.resize(c.k);
    for (std::uint32_t l = 0; l < c.k; ++l) g.mean_abs_activation[l] = dead[l] ? 0.0 : 0.5;
    FarOptions opt;
    opt.budget_fraction = c.budget;
    opt.div = static_cast<std::uint8_t>(c.div);
    h = compile_far(layer, rank_sensitivity(g, c.k, c.n), opt).layer;
  } else {
    h = wrap_baseline(ToyNetwork{{layer}, c.n}).layers[0];
  }

  DpeConfig cfg;
  cfg.overlap_select = c.overlap;
  cfg.dual_port_weights = c.dual_port;
  cfg.fill_per_tile = c.fill_per_tile;
  const auto run = run_layer(act, c.m, h, cfg);
  const auto& r = run.report;

  const auto ops = effective_operands(h);
  bool exact = true;
  for (std::uint32_t i = 0; i < c.m && exact; ++i) {
    const auto y = far_linear_fp16(std::span(act).subspan(std::size_t{i} * c.k, c.k), h, ops);
    for (std::uint32_t o = 0; o < c.n; ++o) exact = exact && y[o].bits == run.outputs[std::size_t{i} * c.n + o].bits;
  }

  std::cout << "cycles: " << r.total_cycles << "\n";
  std::cout << "shape: " << c.m << "x" << c.k << "x" << c.n << " tiles " << r.tiles << "\n";
  std::cout << "far: " << (c.far ? "on" : "off") << " entries " << h.map.entries.size() << " overlap " << (c.overlap ? "on" : "off")
            << " weights " << (c.dual_port ? "dual-port" : "single-port") << "\n";
  std::cout << "dots: " << r.dots_retired << " fill: " << r.fill_cycles << " select: " << r.select_synthesis_cycles
            << " visible_select: " << r.visible_select_cycles << " stall: " << r.stall_cycles << "\n";
  std::cout << std::fixed << std::setprecision(4) << "issue_rate: " << r.steady_state_issue_rate() << "\n";
  std::cout << "matches_reference: " << (exact ? "yes" : "no") << "\n";
  if (!exact) fail(kExitFailure, "reference_mismatch");
  return 0;
}

std::string trace_name(const std::string& target, const AttackConfig& a) {
  return "attack/" + target + "-" + mode_name(a.mode) + "-seed" + std::to_string(a.seed) + ".jsonl";
}

int cmd_attack(const ExperimentConfig& c) {
  const auto d = task_data(c);
  const AttackConfig base_cfg = attack_config(c);
  std::vector<std::pair<std::string, HardenedNetwork>> targets;
  if (c.target != "hardened") {
    const auto net = load_network(path_in(c, "model.fmdl"));
    check_fits(net, d.held_out, "model.fmdl");
    targets.emplace_back("baseline", wrap_baseline(net));
  }
  if (c.target != "baseline") {
    auto loaded = load_hardened(c);
    if (!loaded.all_valid) std::cerr << ojson{{"warning", "fallback"}, {"layers", loaded.layers}}.dump() << "\n";
    check_fits(loaded.net.dram_view(), d.held_out, "far/dram.fmdl");
    targets.emplace_back("hardened", std::move(loaded.net));
  }
  for (const auto seed : c.seeds) {
    const Batch batch = draw_attack_batch(d.held_out, seed, c.attack_batch);
    AttackConfig a = base_cfg;
    a.seed = seed;
    for (const auto& [name, net] : targets) {
      const auto run = run_attack(net, batch, a);
      const auto path = path_in(c, trace_name(name, a));
      write_text(path, trace_to_jsonl(run.trace));
      std::cout << name << " seed " << seed << ": " << run.trace.flips.size() << " flips, " << (run.trace.success ? "objective met" : run.trace.stop_reason)
                << ", accuracy " << run.trace.initial.accuracy << " -> "
                << (run.trace.flips.empty() ? run.trace.initial.accuracy : run.trace.flips.back().accuracy) << "\n";
    }
  }
  return 0;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); }

int cmd_report(const ExperimentConfig& c) {
  SystemConfig sys;
  sys.pe_count = c.pe_count;
  sys.dma_bytes_per_cycle = c.dma_bytes_per_cycle;
  sys.tile_buffer_depth = c.tile_buffer_depth;
  try {
    sys.validate();
  } catch (const std::exception& e) {
    fail(kExitUsage, "config", {{"detail", e.what()}});
  }
  FarSetting far;
  far.enabled = true;
  far.budget_fraction = c.budget;
  far.div = c.div;
  const auto models = vit_model_shapes();
  SystemConfig off = sys, on = sys;
  off.dpe.overlap_select = false;
  on.dpe.overlap_select = true;
  const auto lat_off = model_latency_report(models, far, off);
  const auto lat_on = model_latency_report(models, far, on);

  std::ostringstream txt;
  txt << "FaR latency overhead (budget " << fmt(c.budget, 2) << ", div " << c.div << ", " << c.pe_count << " PEs, " << fmt(c.dma_bytes_per_cycle, 1)
      << " B/cycle per PE)\n";
  txt << pad("model", 14) << pad("baseline_cycles", 17) << pad("matmul_no_overlap", 19) << pad("matmul_overlap", 16) << pad("e2e_no_overlap", 16)
      << "e2e_overlap\n";
  ojson table = ojson::array();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& a = lat_off["models"][i];
    const auto& b = lat_on["models"][i];
    txt << pad(a["model"].get<std::string>(), 14) << pad(std::to_string(a["baseline_makespan"].get<std::uint64_t>()), 17)
        << pad(fmt(a["matmul_overhead_ratio"]), 19) << pad(fmt(b["matmul_overhead_ratio"]), 16) << pad(fmt(a["end_to_end_ratio"]), 16)
        << fmt(b["end_to_end_ratio"]) << "\n";
    table.push_back({{"model", a["model"]},
                     {"baseline_makespan", a["baseline_makespan"]},
                     {"matmul_overhead_no_overlap", a["matmul_overhead_ratio"]},
                     {"matmul_overhead_overlap", b["matmul_overhead_ratio"]},
                     {"end_to_end_no_overlap", a["end_to_end_ratio"]},
                     {"end_to_end_overlap", b["end_to_end_ratio"]}});
  }

  // Traces are grouped by mode; medians use every seed present for a target.
  std::map<std::string, std::map<std::string, std::map<std::uint64_t, double>>> flips;
  const auto dir = path_in(c, "attack");
  const std::regex name_re(R"((baseline|hardened)-(pbs|random)-seed(\d+)\.jsonl)");
  if (fs::is_directory(dir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      std::smatch m;
      const std::string fname = p.filename().string();
      if (!std::regex_match(fname, m, name_re)) continue;
      AttackTrace t;
      try {
        t = trace_from_jsonl(read_text(p.string()));
      } catch (const std::exception& e) {
        fail(kExitFailure, "invalid_trace", {{"path", p.string()}, {"detail", e.what()}});
      }
      flips[m[2]][m[1]][std::stoull(m[3])] = static_cast<double>(t.censored_flips());
    }
  }
  ojson robustness = ojson::array();
  txt << "\nRobustness (median flips to objective, censored at budget + 1)\n";
  txt << pad("mode", 8) << pad("seeds", 7) << pad("baseline", 10) << pad("hardened", 10) << pad("ratio", 8) << "ratio>=1\n";
  for (const auto& [mode, by_target] : flips) {
    if (!by_target.contains("baseline") || !by_target.contains("hardened")) continue;
    std::vector<double> b, h;
    for (const auto& [s, v] : by_target.at("baseline")) b.push_back(v);
    for (const auto& [s, v] : by_target.at("hardened")) h.push_back(v);
    const auto row = summarize_robustness(mode, b, h);
    auto j = robustness_json(row);
    j["ratio_at_least_one"] = row.ratio >= 1.0;
    j["reference_band"] = {1.4, 4.2};
    robustness.push_back(j);
    txt << pad(mode, 8) << pad(std::to_string(std::max(b.size(), h.size())), 7) << pad(fmt(row.baseline_median, 1), 10) << pad(fmt(row.hardened_median, 1), 10)
        << pad(fmt(row.ratio, 2), 8) << (row.ratio >= 1.0 ? "yes" : "no") << "\n";
  }
  if (robustness.empty()) txt << "(no paired baseline/hardened traces under " << dir << ")\n";

  const ojson report{{"latency", {{"overlap_off", lat_off}, {"overlap_on", lat_on}}}, {"latency_table", table}, {"robustness", robustness}};
  write_json(path_in(c, "report.json"), report);
  write_text(path_in(c, "report.txt"), txt.str());
  std::cout << txt.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  ExperimentConfig c;
  CLI::App app{"farbench: FaR hardening workbench for toy models and a DPE/accelerator model"};
  app.require_subcommand(1, 1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Flat key=value config file; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);

  app.add_option("--seed", c.seed, "Seed for data, initialization, training and synthetic tiles")->group("Common");
  app.add_option("--out-dir", c.out_dir, "Directory holding every artifact")->group("Common");
  app.add_option("--task", c.task, "Bundled task")->check(CLI::IsMember({"mlp-relu", "mlp-gelu"}))->group("Common");
  app.add_option("--budget", c.budget, "FaR budget as a fraction of fan-in")->check(CLI::Range(0.0, 1.0))->group("Common");
  app.add_option("--div", c.div, "FaR division factor")->check(CLI::IsMember({2, 3}))->group("Common");

  app.add_option("--epochs", c.epochs, "Training epochs")->check(CLI::PositiveNumber)->group("train");
  app.add_option("--analysis-split", c.analysis_split, "Batch used for sensitivity analysis")->check(CLI::IsMember({"train", "held-out"}))->group("analyze / far-compile");
  app.add_option("--dead-threshold", c.dead_threshold, "Mean |activation| below which a lane counts as dead")->check(CLI::NonNegativeNumber)->group("analyze / far-compile");
  app.add_option("--layers", c.layers, "Layer indices to harden (default: all)")->delimiter(',')->group("analyze / far-compile");

  app.add_option("--m", c.m, "Activation rows")->group("simulate");
  app.add_option("--k", c.k, "Fan-in")->group("simulate");
  app.add_option("--n", c.n, "Fan-out")->group("simulate");
  app.add_flag("--far,!--no-far", c.far, "Compile a FaRMap for the tile")->group("simulate");
  app.add_flag("--overlap,!--no-overlap", c.overlap, "Overlap select-vector synthesis with issue")->group("simulate / report");
  app.add_flag("--dual-port,!--single-port", c.dual_port, "Read BASE and SHADOW weights through independent ports")->group("simulate");
  app.add_flag("--fill-per-tile,!--fill-once", c.fill_per_tile, "Drain the pipeline between tiles")->group("simulate");

  app.add_option("--pe-count", c.pe_count, "Processing elements")->check(CLI::PositiveNumber)->group("report");
  app.add_option("--dma-bytes-per-cycle", c.dma_bytes_per_cycle, "DMA bandwidth per PE")->check(CLI::PositiveNumber)->group("report");
  app.add_option("--tile-buffer-depth", c.tile_buffer_depth, "Tile buffers per PE")->check(CLI::PositiveNumber)->group("report");

  app.add_option("--target", c.target, "Model to attack")->check(CLI::IsMember({"baseline", "hardened", "both"}))->group("attack");
  app.add_option("--mode", c.mode, "Attack search")->check(CLI::IsMember({"pbs", "random"}))->group("attack");
  app.add_option("--objective", c.objective, "Attack objective")->check(CLI::IsMember({"accuracy", "loss", "targeted"}))->group("attack");
  app.add_option("--view", c.view, "Attacker's model of the weights")->check(CLI::IsMember({"vanilla_over_dram", "far_aware"}))->group("attack");
  app.add_option("--top-n", c.top_n, "Candidates per layer per iteration")->check(CLI::PositiveNumber)->group("attack");
  app.add_option("--flip-budget", c.flip_budget, "Maximum committed flips")->group("attack");
  app.add_option("--bit-mask", c.bit_mask, "Flippable bit positions")->group("attack");
  app.add_option("--source-class", c.source_class, "Targeted attack source class")->group("attack");
  app.add_option("--target-class", c.target_class, "Targeted attack target class")->group("attack");
  app.add_option("--seeds", c.seeds, "Attack seeds")->delimiter(',')->group("attack");
  app.add_option("--attack-batch", c.attack_batch, "Samples drawn from the held-out split per seed")->check(CLI::PositiveNumber)->group("attack");

  using Cmd = int (*)(const ExperimentConfig&);
  const std::vector<std::tuple<const char*, const char*, Cmd>> commands{
      {"gen", "Write an initialized model to init.fmdl", cmd_gen},
      {"train", "Train init.fmdl on the task; writes model.fmdl and train.json", cmd_train},
      {"analyze", "Gradient saliency and dead lanes of model.fmdl; writes analysis.json", cmd_analyze},
      {"far-compile", "Harden model.fmdl; writes far/dram.fmdl, far/layer<i>.fmap/.fshd and far/compile.json", cmd_far_compile},
      {"validate", "Validate the FaR blobs under far/ and report which layers enable FaR", cmd_validate},
      {"simulate", "Cycle-level DPE run of one synthetic layer (default one 32x32 tile)", cmd_simulate},
      {"attack", "Bit-flip attack on model.fmdl and/or far/; writes attack/*.jsonl", cmd_attack},
      {"report", "Latency and robustness tables; writes report.json and report.txt", cmd_report},
  };
  Cmd selected = nullptr;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    sub->callback([&selected, fn = fn] { selected = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }
  try {
    return selected(c);
  } catch (const CliFailure& f) {
    std::cerr << f.diagnostic.dump() << "\n";
    return f.code;
  } catch (const ValidationError& e) {
    std::cerr << ojson{{"error", "validation"}, {"reason", reason_name(e.reason())}, {"detail", e.what()}}.dump() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << ojson{{"error", "internal"}, {"detail", e.what()}}.dump() << "\n";
    return kExitFailure;
  }
}
