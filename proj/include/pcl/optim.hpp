// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "pcl/tensor.hpp"

namespace pcl {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Parameters without an accumulated
/// gradient are left untouched for that step.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig config_;
  std::size_t steps_ = 0;
};

/// Half-cosine decay from `base` at step 0 to 0 at `total_steps`.
double cosine_lr(double base, std::size_t step, std::size_t total_steps);

}  // namespace pcl
