//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "farbench/far_map.hpp"
#include "farbench/half.hpp"
#include "farbench/model.hpp"

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace farbench {

enum class WeightSource : std::uint8_t { base, shadow, zero };

/// Dense (row, lane) operand table derived from a FaRMap.
struct EffectiveOperands {
  std::uint32_t fan_in = 0;
  std::uint32_t fan_out = 0;
  std::vector<WeightSource> weight;
  std::vector<std::uint16_t> shadow_addr;
  std::vector<std::uint32_t> activation;

  std::size_t at(std::uint32_t row, std::uint32_t lane) const { return std::size_t{row} * fan_in + lane; }
};

inline void check_hardened(const HardenedLayer& h) {
  h.dram.validate();
  if (h.map.fan_in != h.dram.fan_in || h.map.fan_out != h.dram.fan_out) {
    throw ValidationError(ValidationReason::shape, "FaRMap shape does not match the layer");
  }
  validate_far(h.map, h.shadow, 1.0);
}

/// A disabled layer yields the plain (BASE, self) table.
inline EffectiveOperands effective_operands(const HardenedLayer& h) {
  check_hardened(h);
  EffectiveOperands ops{h.dram.fan_in, h.dram.fan_out, {}, {}, {}};
  const std::size_t n = std::size_t{ops.fan_in} * ops.fan_out;
  ops.weight.assign(n, WeightSource::base);
  ops.shadow_addr.assign(n, 0);
  ops.activation.resize(n);
  for (std::uint32_t r = 0; r < ops.fan_out; ++r) {
    for (std::uint32_t l = 0; l < ops.fan_in; ++l) ops.activation[ops.at(r, l)] = l;
  }
  if (!h.enabled) return ops;
  for (const auto& e : h.map.entries) {
    const std::size_t i = ops.at(e.row, e.lane);
    if (e.action == FarAction::skip) {
      ops.weight[i] = WeightSource::zero;
    } else {
      ops.weight[i] = WeightSource::shadow;
      ops.shadow_addr[i] = e.shadow_addr;
      ops.activation[i] = e.donor;
    }
  }
  return ops;
}

/// Wide-precision FaR operator. REWIRE lanes contribute x[donor] * W'[donor]/div.
/// Lanes that share a donor are collected before multiplying, so a complete
/// group reproduces the donor term exactly.
inline std::vector<double> far_linear_exact(std::span<const double> x, const HardenedLayer& h) {
  const auto ops = effective_operands(h);
  if (x.size() != ops.fan_in) throw std::invalid_argument("activation length does not match fan_in");
  std::vector<double> y(ops.fan_out);
  std::vector<double> coef(ops.fan_in);
  std::vector<std::uint32_t> shares(ops.fan_in);
  std::vector<std::uint8_t> divs(ops.fan_in);
  for (std::uint32_t r = 0; r < ops.fan_out; ++r) {
    std::fill(coef.begin(), coef.end(), 0.0);
    std::fill(shares.begin(), shares.end(), 0u);
    for (std::uint32_t l = 0; l < ops.fan_in; ++l) {
      const std::size_t i = ops.at(r, l);
      if (ops.weight[i] == WeightSource::base) coef[l] += to_double(h.dram.weight(r, l));
      if (ops.weight[i] == WeightSource::shadow) ++shares[ops.activation[i]];
    }
    if (h.enabled) {
      for (const auto& e : h.map.row_slice(r)) {
        if (e.action == FarAction::rewire) divs[e.donor] = e.div;
      }
    }
    for (std::uint32_t l = 0; l < ops.fan_in; ++l) {
      if (shares[l] > 0) coef[l] += to_double(h.dram.weight(r, l)) * shares[l] / divs[l];
    }
    double acc = 0.0;
    for (std::uint32_t l = 0; l < ops.fan_in; ++l) acc += coef[l] * x[l];
    y[r] = acc + to_double(h.dram.bias[r]);
  }
  return y;
}

/// Strict binary16 FaR operator: per K-tile of `lanes` inputs, products are
/// reduced by the adjacent-pair tree, tile partials are added in ascending
/// K-tile order and the bias is added last.
inline std::vector<Fp16> far_linear_fp16(std::span<const Fp16> x, const HardenedLayer& h, const EffectiveOperands& ops,
                                         std::size_t lanes = kTileLanes, Fp16Mode mode = {}) {
  if (x.size() != ops.fan_in) throw std::invalid_argument("activation length does not match fan_in");
  std::vector<Fp16> y(ops.fan_out);
  std::vector<Fp16> products(lanes);
  for (std::uint32_t r = 0; r < ops.fan_out; ++r) {
    Fp16 acc = kFp16Zero;
    for (std::size_t base = 0; base < ops.fan_in; base += lanes) {
      for (std::size_t l = 0; l < lanes; ++l) {
        const std::size_t lane = base + l;
        if (lane >= ops.fan_in) {
          products[l] = fp16_mul(kFp16Zero, kFp16Zero, mode);
          continue;
        }
        const std::size_t i = ops.at(r, static_cast<std::uint32_t>(lane));
        Fp16 w = kFp16Zero;
        switch (ops.weight[i]) {
          case WeightSource::base: w = h.dram.weight(r, static_cast<std::uint32_t>(lane)); break;
          case WeightSource::shadow: w = h.shadow.values[ops.shadow_addr[i]]; break;
          case WeightSource::zero: break;
        }
        products[l] = fp16_mul(x[ops.activation[i]], w, mode);
      }
      const Fp16 partial = fp16_tree_sum(products, mode);
      acc = base == 0 ? partial : fp16_add(acc, partial, mode);
    }
    y[r] = fp16_add(acc, h.dram.bias[r], mode);
  }
  return y;
}

inline std::vector<Fp16> far_linear_fp16(std::span<const Fp16> x, const HardenedLayer& h, std::size_t lanes = kTileLanes,
                                         Fp16Mode mode = {}) {
  return far_linear_fp16(x, h, effective_operands(h), lanes, mode);
}

/// Binary16 network forward through the FaR operator; activations are
/// rounded to binary16 between layers exactly as in the plain fp16 forward.
inline ForwardResult far_forward_fp16(const HardenedNetwork& net, const Batch& batch) {
  net.dram_view().validate();
  detail::check_batch(net.layers.front().dram.fan_in, batch);
  ForwardResult out;
  out.classes = net.class_count;
  const std::size_t bs = batch.size();
  std::vector<double> x(batch.inputs.size());
  std::transform(batch.inputs.begin(), batch.inputs.end(), x.begin(), [](double v) { return to_double(fp16_from_real(v)); });
  for (const auto& h : net.layers) {
    const auto& L = h.dram;
    const auto ops = effective_operands(h);
    std::vector<double> pre(bs * L.fan_out), post(bs * L.fan_out);
    std::vector<Fp16> xs(L.fan_in);
    for (std::size_t b = 0; b < bs; ++b) {
      for (std::uint32_t l = 0; l < L.fan_in; ++l) xs[l] = fp16_from_real(x[b * L.fan_in + l]);
      const auto y = far_linear_fp16(xs, h, ops);
      for (std::uint32_t r = 0; r < L.fan_out; ++r) {
        pre[b * L.fan_out + r] = to_double(y[r]);
        post[b * L.fan_out + r] = to_double(fp16_from_real(activate(L.activation, to_double(y[r]))));
      }
    }
    out.layer_inputs.push_back(std::move(x));
    out.pre_activations.push_back(std::move(pre));
    x = std::move(post);
  }
  out.logits = std::move(x);
  return out;
}

/// Routes reproducing the deployed datapath in the wide-precision model:
/// REWIRE lanes multiply x[donor] by the shadow value, SKIP lanes by zero.
/// DRAM weights at these lanes are not read.
inline NetworkRoutes deployed_routes(const HardenedNetwork& net) {
  NetworkRoutes routes(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& h = net.layers[i];
    if (!h.enabled) continue;
    for (const auto& e : h.map.entries) {
      if (e.action == FarAction::skip) {
        routes[i].push_back({e.row, e.lane, e.lane, 1.0, 0.0});
      } else {
        routes[i].push_back({e.row, e.lane, e.donor, 1.0, to_double(h.shadow.values.at(e.shadow_addr))});
      }
    }
  }
  return routes;
}

/// The attacker's model of a hardened network: plain linear algebra over the
/// DRAM weights W' with the rewired activation split, x[donor] / div, feeding
/// every lane of a group, and skipped lanes contributing nothing.
inline NetworkRoutes attacker_routes(const HardenedNetwork& net) {
  NetworkRoutes routes(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& h = net.layers[i];
    if (!h.enabled) continue;
    for (const auto& e : h.map.entries) {
      if (e.action == FarAction::skip) {
        routes[i].push_back({e.row, e.lane, e.lane, 0.0, std::nullopt});
      } else {
        routes[i].push_back({e.row, e.lane, e.donor, 1.0 / e.div, std::nullopt});
      }
    }
  }
  return routes;
}

}  // namespace farbench
