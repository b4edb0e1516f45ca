// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration. Serialized as JSON; every field is optional on input
// (defaults below), unknown keys are rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "pcl/losses.hpp"
#include "pcl/optim.hpp"
#include "pcl/vit.hpp"

namespace pcl {

enum class QueryMode {
  cls,      // per-layer [CLS] query of the prompted pass
  refined,  // final [CLS] of a promptless reference pass, softmax weights
};

std::string to_string(QueryMode mode);
QueryMode parse_query_mode(const std::string& text);

struct DataConfig {
  std::string source = "synthetic";  // or "folders"
  std::size_t domains = 3;
  std::size_t samples_per_domain = 1000;
  double shift_scale = 1.0;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::vector<std::vector<double>> class_counts = {
      {1805, 1562, 295}, {6266, 5343, 913}, {5000, 8608, 708}};
  std::vector<std::string> folders;  // one per domain when source == "folders"
};

struct PretrainConfig {
  std::size_t samples = 1200;
  std::size_t epochs = 30;
  std::size_t patience = 5;
  double accuracy_floor = 0.8;
  double lr = 1e-3;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string run_dir = "runs/default";
  AdamWConfig optimizer;
  std::size_t epochs = 40;
  std::size_t patience = 5;
  std::size_t batch_size = 32;
  double lambda = 0.001;
  double expansion_ratio = 0.2;
  std::size_t base_prompts = 32;
  LsMode ls_mode = LsMode::raw_cosine;
  PStarSource p_star_source = PStarSource::aggregated_phi;
  QueryMode query_mode = QueryMode::cls;
  bool augment = true;
  ViTConfig vit;
  std::vector<std::size_t> stage_order = {0, 1, 2};
  DataConfig data;
  PretrainConfig pretrain;
  std::vector<double> sweep_ratios = {0.1, 0.2, 0.3};

  /// Throws InputError on inconsistent values.
  void validate() const;
  LossConfig loss() const { return {lambda, ls_mode, p_star_source}; }
};

nlohmann::json to_json(const RunConfig& config);
/// Missing fields keep their defaults; unknown keys or wrong types raise InputError.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

/// Output directory: $PCL_RUN_DIR when set, else config.run_dir.
std::filesystem::path resolve_run_dir(const RunConfig& config);

}  // namespace pcl
