// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Rehearsal-free domain-incremental driver: pretraining of the backbone,
// stage training of prompts and head, stage-wise evaluation over every
// task, and the run-directory artifacts.

#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcl/checkpoint.hpp"
#include "pcl/config.hpp"
#include "pcl/data.hpp"
#include "pcl/metrics.hpp"
#include "pcl/prompt_pool.hpp"
#include "pcl/vit.hpp"

namespace pcl {

/// Pretraining did not reach its accuracy floor.
class PretrainError : public std::runtime_error {
 public:
  PretrainError(const std::string& what, double best) : std::runtime_error(what), best_(best) {}
  double best_accuracy() const { return best_; }

 private:
  double best_;
};

struct Model {
  VitBackbone<float> backbone;
  PromptPool<float> pool;
  ClassifierHead<float> head;

  Model clone() const { return {backbone.clone(), pool.clone(), head.clone()}; }
};

struct Pretrained {
  VitBackbone<float> backbone;  // frozen
  ClassifierHead<float> head;
  double val_accuracy = 0.0;
  std::size_t epochs = 0;
};

struct EpochRecord {
  int stage = 0;
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  bool operator==(const EvalResult&) const = default;
};

/// Task datasets in stage order, built from the config's data section.
StageStream build_stream(const RunConfig& config);
/// Held-out pretraining data, disjoint from every stage.
DomainDataset build_pretrain_split(const RunConfig& config);

/// Trains backbone + head on the pretraining split until validation
/// accuracy stops improving, restores the best epoch and freezes the
/// backbone. Throws PretrainError when the floor is not reached.
Pretrained pretrain_backbone(const DomainDataset& split, const RunConfig& config);

/// Logits [B x C] for a batch; prompts per the config's query mode.
/// `p_star` (optional) receives the batch's normalized prompt vector.
Tensor forward_batch(const Model& model, const std::vector<const Image*>& images,
                     const RunConfig& config, Tensor* p_star = nullptr);

std::vector<int> predict(const Model& model, std::span<const Sample> samples,
                         const RunConfig& config);
EvalResult evaluate(const Model& model, std::span<const Sample> samples, const RunConfig& config);

/// Optimizes L_total over the non-frozen prompts and the head on the
/// current stage only, early-stopping on validation accuracy and keeping
/// the best epoch. Throws ContractError if the view carries a sample of
/// another stage.
std::vector<EpochRecord> train_stage(int stage, const StageView& view, Model& model,
                                     const RunConfig& config, Rng& rng);

struct ExperimentHooks {
  /// After the pool has been prepared for `stage` (post-expansion), before training.
  std::function<void(int stage, const Model&)> before_stage;
  std::function<void(int stage, const Model&)> after_stage;
};

struct ExperimentResult {
  AccuracyMatrix accuracy;
  AccuracyMatrix macro_f1;
  ClMetrics metrics;
  StageSimilarityMatrix similarity;
  std::vector<EpochRecord> log;
  Model model;
  Pretrained pretrained;
};

/// Full stage sequence, writing every artifact into `run_dir`. When
/// `pretrained` is given it replaces the pretraining step (it must come
/// from the same seed and pretraining section). On failure a status file
/// records the error and the exception propagates.
ExperimentResult run_experiment(const RunConfig& config, const std::filesystem::path& run_dir,
                                const Pretrained* pretrained = nullptr,
                                const ExperimentHooks& hooks = {});

struct SweepRow {
  double ratio = 0.0;
  std::size_t added_per_stage = 0;
  std::size_t final_pool_size = 0;
  ClMetrics metrics;
};

/// One experiment per sweep ratio under `run_dir/ratio_<r>`; writes
/// `run_dir/expansion_sweep.csv`.
std::vector<SweepRow> run_sweep(const RunConfig& config, const std::filesystem::path& run_dir);

void write_epoch_log(std::span<const EpochRecord> log, const std::filesystem::path& path);

}  // namespace pcl
