//
// Copyright © 2026 The farbench Authors.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include "farbench/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace farbench {

/// A reproducible toy victim: dataset recipe, architecture and training run.
struct BundledTask {
  std::string name;
  DatasetSpec data;
  std::vector<std::uint32_t> dims;  // input, hidden..., classes
  Activation hidden = Activation::relu;
  TrainOptions train;
  double train_fraction = 0.7;
};

inline std::vector<BundledTask> bundled_tasks() {
  const DatasetSpec data{};
  return {
      {"mlp-relu", data, {data.features(), 32, data.classes}, Activation::relu, TrainOptions{}, 0.7},
      {"mlp-gelu", data, {data.features(), 24, data.classes}, Activation::gelu, TrainOptions{}, 0.7},
  };
}

struct TrainedTask {
  ToyNetwork net;
  Batch train;
  Batch held_out;
};

inline TrainedTask train_bundled(const BundledTask& task, std::uint64_t seed = 1) {
  DatasetSpec spec = task.data;
  spec.seed = seed;
  auto [train, held_out] = split_batch(synth_dataset(spec), task.train_fraction);
  TrainOptions opt = task.train;
  opt.seed = seed;
  auto net = train_toy(init_network(task.dims, task.hidden, seed), train, opt);
  return {std::move(net), std::move(train), std::move(held_out)};
}

}  // namespace farbench
