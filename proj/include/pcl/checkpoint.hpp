// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint layout:
//   8 bytes  magic "PCLCKPT\0"
//   4 bytes  format version, little-endian
//   8 bytes  header length n, little-endian
//   n bytes  JSON header (config, tensor directory, pool tags, stage, rng)
//   payload  float32 little-endian tensors at the offsets named in the header

#pragma once

#include <cstdint>
#include <filesystem>

#include "pcl/config.hpp"
#include "pcl/prompt_pool.hpp"
#include "pcl/rng.hpp"
#include "pcl/vit.hpp"

namespace pcl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  VitBackbone<float> backbone;
  PromptPool<float> pool;
  ClassifierHead<float> head;
  int completed_stage = -1;  // -1: pretraining only
  Rng::State rng;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Throws InputError on a bad magic, unsupported version or truncated payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pcl
