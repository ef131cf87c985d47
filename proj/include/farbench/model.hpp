//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "farbench/half.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace farbench {

enum class Activation : std::uint8_t { identity = 0, relu = 1, gelu = 2 };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
  }
  return "?";
}

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

// GELU uses the tanh approximation.
inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0 ? x : 0.0;
    case Activation::gelu: {
      const double u = detail::kGeluC * (x + 0.044715 * x * x * x);
      return 0.5 * x * (1.0 + std::tanh(u));
    }
  }
  return x;
}

inline double activation_derivative(Activation a, double x) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return x > 0 ? 1.0 : 0.0;
    case Activation::gelu: {
      const double u = detail::kGeluC * (x + 0.044715 * x * x * x);
      const double t = std::tanh(u);
      const double du = detail::kGeluC * (1.0 + 3 * 0.044715 * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
  }
  return 1.0;
}

/// One fully connected layer with binary16 parameters. Weights are row-major,
/// one row per output neuron.
struct LinearLayer {
  std::uint32_t fan_in = 0;
  std::uint32_t fan_out = 0;
  std::vector<Fp16> weights;
  std::vector<Fp16> bias;
  Activation activation = Activation::identity;

  static LinearLayer zeros(std::uint32_t fan_in, std::uint32_t fan_out, Activation act = Activation::identity) {
    return {fan_in, fan_out, std::vector<Fp16>(std::size_t{fan_in} * fan_out), std::vector<Fp16>(fan_out), act};
  }

  Fp16 weight(std::uint32_t row, std::uint32_t lane) const { return weights[std::size_t{row} * fan_in + lane]; }
  Fp16& weight(std::uint32_t row, std::uint32_t lane) { return weights[std::size_t{row} * fan_in + lane]; }
  std::span<const Fp16> row(std::uint32_t r) const { return std::span(weights).subspan(std::size_t{r} * fan_in, fan_in); }

  void validate() const {
    if (weights.size() != std::size_t{fan_in} * fan_out) throw std::invalid_argument("layer weight count does not match fan_in x fan_out");
    if (bias.size() != fan_out) throw std::invalid_argument("layer bias length does not match fan_out");
  }

  friend bool operator==(const LinearLayer&, const LinearLayer&) = default;
};

struct ToyNetwork {
  std::vector<LinearLayer> layers;
  std::uint32_t class_count = 0;

  std::uint32_t input_size() const { return layers.empty() ? 0 : layers.front().fan_in; }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].validate();
      if (i + 1 < layers.size() && layers[i].fan_out != layers[i + 1].fan_in) {
        throw std::invalid_argument("layer " + std::to_string(i) + " fan_out does not match the next fan_in");
      }
    }
    if (layers.back().fan_out != class_count) throw std::invalid_argument("final fan_out must equal class_count");
  }

  friend bool operator==(const ToyNetwork&, const ToyNetwork&) = default;
};

/// Row-major sample matrix plus class labels.
struct Batch {
  std::uint32_t features = 0;
  std::vector<double> inputs;
  std::vector<std::uint32_t> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> sample(std::size_t i) const { return std::span(inputs).subspan(i * features, features); }

  Batch subset(std::span<const std::size_t> indices) const {
    Batch out{features, {}, {}};
    out.inputs.reserve(indices.size() * features);
    for (std::size_t i : indices) {
      const auto s = sample(i);
      out.inputs.insert(out.inputs.end(), s.begin(), s.end());
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  friend bool operator==(const Batch&, const Batch&) = default;
};

enum class ActivationArithmetic { wide, fp16 };

/// Operand override for one (row, lane) of a layer: the lane multiplies
/// `scale * x[source]` by either its stored weight or a fixed weight that does
/// not come from the stored matrix.
struct LaneRoute {
  std::uint32_t row = 0;
  std::uint32_t lane = 0;
  std::uint32_t source = 0;
  double scale = 1.0;
  std::optional<double> fixed_weight;
};

using LayerRoutes = std::vector<LaneRoute>;
/// Either empty (no routing anywhere) or one entry per layer.
using NetworkRoutes = std::vector<LayerRoutes>;

struct ForwardResult {
  std::uint32_t classes = 0;
  std::vector<std::vector<double>> layer_inputs;     // per layer: batch x fan_in
  std::vector<std::vector<double>> pre_activations;  // per layer: batch x fan_out
  std::vector<double> logits;                        // batch x classes

  std::span<const double> sample_logits(std::size_t i) const { return std::span(logits).subspan(i * classes, classes); }
};

struct LayerGradients {
  std::vector<double> weight_grad;          // d(mean loss)/dw, fan_out x fan_in
  std::vector<double> bias_grad;            // fan_out
  std::vector<double> saliency;             // mean over samples of |dL_b/dw|
  std::vector<double> mean_abs_activation;  // per input lane
};

struct GradientStats {
  double loss = 0.0;
  std::vector<LayerGradients> layers;
};

namespace detail {

struct WideLayer {
  std::uint32_t fan_in = 0;
  std::uint32_t fan_out = 0;
  std::vector<double> w;
  std::vector<double> b;
  Activation activation = Activation::identity;
};

inline std::vector<WideLayer> widen(const ToyNetwork& net) {
  std::vector<WideLayer> out;
  out.reserve(net.layers.size());
  for (const auto& l : net.layers) out.push_back({l.fan_in, l.fan_out, to_double(l.weights), to_double(l.bias), l.activation});
  return out;
}

// Dense per-(row, lane) operand table for a routed layer.
struct RoutedOperands {
  std::vector<double> weight;
  std::vector<double> scale;
  std::vector<std::uint32_t> source;
  std::vector<std::uint8_t> stored;  // 1 when the weight comes from the stored matrix
};

inline RoutedOperands expand_routes(const WideLayer& layer, const LayerRoutes& routes) {
  const std::size_t n = std::size_t{layer.fan_in} * layer.fan_out;
  RoutedOperands ops{layer.w, std::vector<double>(n, 1.0), std::vector<std::uint32_t>(n), std::vector<std::uint8_t>(n, 1)};
  for (std::uint32_t r = 0; r < layer.fan_out; ++r) {
    for (std::uint32_t l = 0; l < layer.fan_in; ++l) ops.source[std::size_t{r} * layer.fan_in + l] = l;
  }
  for (const auto& route : routes) {
    if (route.row >= layer.fan_out || route.lane >= layer.fan_in || route.source >= layer.fan_in) {
      throw std::out_of_range("lane route outside layer bounds");
    }
    const std::size_t idx = std::size_t{route.row} * layer.fan_in + route.lane;
    ops.source[idx] = route.source;
    ops.scale[idx] = route.scale;
    if (route.fixed_weight) {
      ops.weight[idx] = *route.fixed_weight;
      ops.stored[idx] = 0;
    }
  }
  return ops;
}

inline const LayerRoutes* routes_for(const NetworkRoutes* routes, std::size_t layer) {
  if (routes == nullptr || routes->empty()) return nullptr;
  if (routes->size() <= layer) throw std::invalid_argument("routes must cover every layer");
  return (*routes)[layer].empty() ? nullptr : &(*routes)[layer];
}

inline void check_batch(std::uint32_t input_size, const Batch& batch) {
  if (batch.features != input_size) throw std::invalid_argument("batch feature count does not match network input");
  if (batch.inputs.size() != batch.size() * batch.features) throw std::invalid_argument("batch input matrix has the wrong size");
}

inline ForwardResult forward_wide(std::span<const WideLayer> layers, std::uint32_t classes, const Batch& batch,
                                  const NetworkRoutes* routes) {
  const std::size_t bs = batch.size();
  ForwardResult out;
  out.classes = classes;
  std::vector<double> x = batch.inputs;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& L = layers[li];
    const LayerRoutes* lr = routes_for(routes, li);
    std::optional<RoutedOperands> ops;
    if (lr) ops = expand_routes(L, *lr);
    std::vector<double> pre(bs * L.fan_out);
    std::vector<double> post(bs * L.fan_out);
    for (std::size_t b = 0; b < bs; ++b) {
      const double* xb = x.data() + b * L.fan_in;
      for (std::uint32_t r = 0; r < L.fan_out; ++r) {
        const std::size_t row = std::size_t{r} * L.fan_in;
        double acc = 0.0;
        if (ops) {
          for (std::uint32_t l = 0; l < L.fan_in; ++l) {
            acc += ops->weight[row + l] * (ops->scale[row + l] * xb[ops->source[row + l]]);
          }
        } else {
          for (std::uint32_t l = 0; l < L.fan_in; ++l) acc += L.w[row + l] * xb[l];
        }
        acc += L.b[r];
        pre[b * L.fan_out + r] = acc;
        post[b * L.fan_out + r] = activate(L.activation, acc);
      }
    }
    out.layer_inputs.push_back(std::move(x));
    out.pre_activations.push_back(std::move(pre));
    x = std::move(post);
  }
  out.logits = std::move(x);
  return out;
}

inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline GradientStats backprop(std::span<const WideLayer> layers, std::uint32_t classes, const Batch& batch,
                              const NetworkRoutes* routes, bool with_saliency) {
  if (batch.empty()) throw std::invalid_argument("loss requires a non-empty batch");
  const ForwardResult fwd = forward_wide(layers, classes, batch, routes);
  const std::size_t bs = batch.size();
  const double inv_b = 1.0 / static_cast<double>(bs);

  GradientStats stats;
  stats.layers.resize(layers.size());
  std::vector<std::optional<RoutedOperands>> ops(layers.size());
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& L = layers[li];
    auto& g = stats.layers[li];
    g.weight_grad.assign(std::size_t{L.fan_in} * L.fan_out, 0.0);
    g.bias_grad.assign(L.fan_out, 0.0);
    if (with_saliency) g.saliency.assign(std::size_t{L.fan_in} * L.fan_out, 0.0);
    g.mean_abs_activation.assign(L.fan_in, 0.0);
    for (std::size_t b = 0; b < bs; ++b) {
      for (std::uint32_t l = 0; l < L.fan_in; ++l) g.mean_abs_activation[l] += std::fabs(fwd.layer_inputs[li][b * L.fan_in + l]);
    }
    for (auto& v : g.mean_abs_activation) v *= inv_b;
    if (const LayerRoutes* lr = routes_for(routes, li)) ops[li] = expand_routes(L, *lr);
  }

  std::vector<double> delta, delta_prev;
  for (std::size_t b = 0; b < bs; ++b) {
    const auto z = fwd.sample_logits(b);
    const std::uint32_t y = batch.labels[b];
    if (y >= classes) throw std::invalid_argument("label outside class range");
    const double lse = log_sum_exp(z);
    stats.loss += lse - z[y];
    // dL_b/d(output of last layer)
    delta.assign(classes, 0.0);
    for (std::uint32_t c = 0; c < classes; ++c) delta[c] = std::exp(z[c] - lse) - (c == y ? 1.0 : 0.0);

    for (std::size_t li = layers.size(); li-- > 0;) {
      const auto& L = layers[li];
      auto& g = stats.layers[li];
      const double* xb = fwd.layer_inputs[li].data() + b * L.fan_in;
      const double* pre = fwd.pre_activations[li].data() + b * L.fan_out;
      delta_prev.assign(L.fan_in, 0.0);
      for (std::uint32_t r = 0; r < L.fan_out; ++r) {
        const double d = delta[r] * activation_derivative(L.activation, pre[r]);
        g.bias_grad[r] += d * inv_b;
        if (d == 0.0) continue;
        const std::size_t row = std::size_t{r} * L.fan_in;
        for (std::uint32_t l = 0; l < L.fan_in; ++l) {
          double gw;
          if (ops[li]) {
            const auto& o = *ops[li];
            const double a = o.scale[row + l] * xb[o.source[row + l]];
            gw = o.stored[row + l] ? d * a : 0.0;
            delta_prev[o.source[row + l]] += d * o.weight[row + l] * o.scale[row + l];
          } else {
            gw = d * xb[l];
            delta_prev[l] += d * L.w[row + l];
          }
          g.weight_grad[row + l] += gw * inv_b;
          if (with_saliency) g.saliency[row + l] += std::fabs(gw) * inv_b;
        }
      }
      std::swap(delta, delta_prev);
    }
  }
  stats.loss *= inv_b;
  return stats;
}

}  // namespace detail

/// Forward pass. Weights are always binary16; `arithmetic` selects whether
/// activations and accumulation are wide or binary16 (32-lane tree reduction,
/// chunk partials accumulated in order, bias added after reduction).
inline ForwardResult forward(const ToyNetwork& net, const Batch& batch,
                             ActivationArithmetic arithmetic = ActivationArithmetic::wide,
                             const NetworkRoutes* routes = nullptr) {
  net.validate();
  detail::check_batch(net.input_size(), batch);
  if (arithmetic == ActivationArithmetic::wide) {
    const auto wide = detail::widen(net);
    return detail::forward_wide(wide, net.class_count, batch, routes);
  }
  if (routes && std::any_of(routes->begin(), routes->end(), [](const auto& r) { return !r.empty(); })) {
    throw std::invalid_argument("binary16 forward does not take lane routes; use the FaR reference operator");
  }
  ForwardResult out;
  out.classes = net.class_count;
  const std::size_t bs = batch.size();
  std::vector<double> x(batch.inputs.size());
  std::transform(batch.inputs.begin(), batch.inputs.end(), x.begin(), [](double v) { return to_double(fp16_from_real(v)); });
  for (const auto& L : net.layers) {
    std::vector<double> pre(bs * L.fan_out), post(bs * L.fan_out);
    std::vector<Fp16> xs(L.fan_in);
    for (std::size_t b = 0; b < bs; ++b) {
      for (std::uint32_t l = 0; l < L.fan_in; ++l) xs[l] = fp16_from_real(x[b * L.fan_in + l]);
      for (std::uint32_t r = 0; r < L.fan_out; ++r) {
        const Fp16 y = fp16_add(fp16_tiled_dot(xs, L.row(r)), L.bias[r]);
        pre[b * L.fan_out + r] = to_double(y);
        post[b * L.fan_out + r] = to_double(fp16_from_real(activate(L.activation, to_double(y))));
      }
    }
    out.layer_inputs.push_back(std::move(x));
    out.pre_activations.push_back(std::move(pre));
    x = std::move(post);
  }
  out.logits = std::move(x);
  return out;
}

/// Mean cross-entropy, wide-precision gradients for every weight, mean
/// per-sample |gradient| (saliency) and mean |activation| per input lane.
inline GradientStats loss_and_gradients(const ToyNetwork& net, const Batch& batch, const NetworkRoutes* routes = nullptr) {
  net.validate();
  detail::check_batch(net.input_size(), batch);
  const auto wide = detail::widen(net);
  return detail::backprop(wide, net.class_count, batch, routes, true);
}

inline std::uint32_t argmax_class(std::span<const double> logits) {
  return static_cast<std::uint32_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

inline double accuracy(const ForwardResult& fwd, std::span<const std::uint32_t> labels) {
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += argmax_class(fwd.sample_logits(i)) == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double cross_entropy(const ForwardResult& fwd, std::span<const std::uint32_t> labels) {
  if (labels.empty()) throw std::invalid_argument("loss requires a non-empty batch");
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto z = fwd.sample_logits(i);
    loss += detail::log_sum_exp(z) - z[labels[i]];
  }
  return loss / static_cast<double>(labels.size());
}

/// Uniform He initialization; hidden layers use `hidden`, the last layer is
/// identity. `dims` lists input size, hidden sizes, class count.
inline ToyNetwork init_network(std::span<const std::uint32_t> dims, Activation hidden, std::uint64_t seed) {
  if (dims.size() < 2) throw std::invalid_argument("network needs at least input and output dimensions");
  std::mt19937_64 rng(seed);
  ToyNetwork net;
  net.class_count = dims.back();
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    auto layer = LinearLayer::zeros(dims[i], dims[i + 1], last ? Activation::identity : hidden);
    const double limit = std::sqrt(6.0 / dims[i]);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : layer.weights) w = fp16_from_real(dist(rng));
    net.layers.push_back(std::move(layer));
  }
  return net;
}

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::uint32_t epochs = 40;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::uint32_t batch_size = 32;
  std::uint64_t seed = 1;
};

/// Mini-batch SGD with momentum on wide-precision master weights; the result
/// is re-quantized to binary16.
inline ToyNetwork train_toy(const ToyNetwork& net, const Batch& data, const TrainOptions& opt) {
  net.validate();
  detail::check_batch(net.input_size(), data);
  if (opt.epochs == 0 || data.empty()) return net;
  auto master = detail::widen(net);
  std::vector<std::vector<double>> vel_w, vel_b;
  for (const auto& L : master) {
    vel_w.emplace_back(L.w.size(), 0.0);
    vel_b.emplace_back(L.b.size(), 0.0);
  }
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::max<std::uint32_t>(1, opt.batch_size);
  for (std::uint32_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto idx = std::span(order).subspan(start, std::min(bs, order.size() - start));
      const Batch mb = data.subset(idx);
      const auto stats = detail::backprop(master, net.class_count, mb, nullptr, false);
      if (!std::isfinite(stats.loss)) throw TrainingDiverged("training loss became non-finite in epoch " + std::to_string(epoch));
      for (std::size_t li = 0; li < master.size(); ++li) {
        auto& L = master[li];
        const auto& g = stats.layers[li];
        for (std::size_t i = 0; i < L.w.size(); ++i) {
          vel_w[li][i] = opt.momentum * vel_w[li][i] - opt.learning_rate * g.weight_grad[i];
          L.w[i] += vel_w[li][i];
        }
        for (std::size_t i = 0; i < L.b.size(); ++i) {
          vel_b[li][i] = opt.momentum * vel_b[li][i] - opt.learning_rate * g.bias_grad[i];
          L.b[i] += vel_b[li][i];
        }
      }
    }
  }
  ToyNetwork out = net;
  for (std::size_t li = 0; li < master.size(); ++li) {
    out.layers[li].weights = to_fp16(master[li].w);
    out.layers[li].bias = to_fp16(master[li].b);
  }
  return out;
}

/// Gaussian-cluster classification task. Dead features are identically zero
/// and spread evenly across the feature vector.
struct DatasetSpec {
  std::uint32_t classes = 4;
  std::uint32_t informative = 24;
  std::uint32_t dead_features = 8;
  std::uint32_t samples_per_class = 250;
  double separation = 8.0;  // minimum distance between class means, in sigmas
  double sigma = 1.0;
  std::uint64_t seed = 1;

  std::uint32_t features() const { return informative + dead_features; }
};

inline std::vector<std::uint32_t> dead_feature_lanes(const DatasetSpec& spec) {
  std::vector<std::uint32_t> lanes;
  const std::uint64_t f = spec.features();
  for (std::uint64_t p = 0; p < f; ++p) {
    if ((p + 1) * spec.dead_features / f > p * spec.dead_features / f) lanes.push_back(static_cast<std::uint32_t>(p));
  }
  return lanes;
}

/// Returns the class means (classes x informative) used by synth_dataset.
inline std::vector<double> cluster_means(const DatasetSpec& spec) {
  std::mt19937_64 rng(spec.seed ^ 0x9E3779B97F4A7C15ull);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> means(std::size_t{spec.classes} * spec.informative);
  for (auto& m : means) m = normal(rng);
  if (spec.classes < 2 || spec.informative == 0) return means;
  double min_dist = INFINITY;
  for (std::uint32_t a = 0; a < spec.classes; ++a) {
    for (std::uint32_t b = a + 1; b < spec.classes; ++b) {
      double d2 = 0;
      for (std::uint32_t k = 0; k < spec.informative; ++k) {
        const double d = means[a * spec.informative + k] - means[b * spec.informative + k];
        d2 += d * d;
      }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  }
  const double scale = spec.separation * spec.sigma / min_dist;
  for (auto& m : means) m *= scale;
  return means;
}

inline Batch synth_dataset(const DatasetSpec& spec) {
  Batch out{spec.features(), {}, {}};
  const auto means = cluster_means(spec);
  const auto dead = dead_feature_lanes(spec);
  std::vector<char> is_dead(spec.features(), 0);
  for (auto l : dead) is_dead[l] = 1;

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.sigma);
  const std::size_t n = std::size_t{spec.classes} * spec.samples_per_class;
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i % spec.classes);
  std::shuffle(labels.begin(), labels.end(), rng);
  out.inputs.reserve(n * spec.features());
  for (std::uint32_t y : labels) {
    std::uint32_t k = 0;
    for (std::uint32_t p = 0; p < spec.features(); ++p) {
      if (is_dead[p]) {
        out.inputs.push_back(0.0);
      } else {
        out.inputs.push_back(means[std::size_t{y} * spec.informative + k] + noise(rng));
        ++k;
      }
    }
  }
  out.labels = std::move(labels);
  return out;
}

/// Deterministic head/tail split.
inline std::pair<Batch, Batch> split_batch(const Batch& data, double first_fraction) {
  const auto cut = static_cast<std::size_t>(std::floor(first_fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> a(cut), b(data.size() - cut);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), cut);
  return {data.subset(a), data.subset(b)};
}

}  // namespace farbench
