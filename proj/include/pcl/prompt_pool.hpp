// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Unified key/value prompt pool shared by every prompt-receiving layer.
//
// A query q selects phi = sum_m cos(q, k_m) * p_m over all entries. Each
// stage after the first freezes the whole pool and appends
// round(ratio * base_count) fresh entries tagged with the new stage id.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "pcl/rng.hpp"
#include "pcl/tensor.hpp"

namespace pcl {

template <typename T>
struct PromptEntry {
  BasicTensor<T> key;    // [1 x D]
  BasicTensor<T> value;  // [1 x D]
  int stage_id = 0;
  bool frozen = false;
};

template <typename T>
class PromptPool {
 public:
  PromptPool() = default;
  /// Stage-0 pool of `base_count` trainable entries.
  PromptPool(std::size_t base_count, std::size_t dim, double expansion_ratio, Rng& rng);

  /// round(ratio * base) with halves rounded up.
  static std::size_t expansion_count(std::size_t base_count, double ratio);

  std::size_t size() const { return entries_.size(); }
  std::size_t base_count() const { return base_count_; }
  std::size_t dim() const { return dim_; }
  double expansion_ratio() const { return expansion_ratio_; }
  int current_stage() const { return current_stage_; }
  const std::vector<PromptEntry<T>>& entries() const { return entries_; }

  /// Stacked keys / values, [M x D].
  BasicTensor<T> key_matrix() const;
  BasicTensor<T> value_matrix() const;
  /// Values of the entries added at `stage`, [n x D].
  BasicTensor<T> stage_values(int stage) const;

  /// Cosine-weighted aggregation of all values: [B x D] -> [B x D].
  BasicTensor<T> select(const BasicTensor<T>& query) const;

  /// Freezes every existing entry and appends the stage's new entries with
  /// keys and values uniform in [-1/sqrt(D), 1/sqrt(D)].
  void expand(int stage, Rng& rng);

  /// Rebuilds a pool from stored entries (checkpoint restore). Frozen flags
  /// and requires_grad follow `current_stage`.
  static PromptPool restore(std::size_t base_count, std::size_t dim, double expansion_ratio,
                            int current_stage, std::vector<PromptEntry<T>> entries);

  /// Value copy whose tensors are not shared with this pool.
  PromptPool clone() const;
  template <typename U>
  PromptPool<U> cast() const;

 private:
  template <typename U>
  friend class PromptPool;

  std::vector<PromptEntry<T>> entries_;
  std::size_t base_count_ = 0;
  std::size_t dim_ = 0;
  double expansion_ratio_ = 0.0;
  int current_stage_ = 0;
};

/// Softmax over per-key cosine similarities with references r [B x D];
/// returns [M x B] whose columns each sum to 1.
template <typename T>
BasicTensor<T> refined_weights(const BasicTensor<T>& reference, const BasicTensor<T>& keys);

/// Weighted sum of pool values for weights [M x B]; returns [B x D].
template <typename T>
BasicTensor<T> refined_select(const BasicTensor<T>& weights, const PromptPool<T>& pool);

/// S[i][j] = mean |cos(p_a, p_b)| over values a of stage i and b of stage j.
struct StageSimilarityMatrix {
  std::vector<int> stages;
  std::vector<double> values;  // row-major [stages x stages]

  std::size_t size() const { return stages.size(); }
  double operator()(std::size_t i, std::size_t j) const { return values[i * stages.size() + j]; }
  double mean_diagonal() const;
  /// Throws ContractError below two stages.
  double mean_off_diagonal() const;
  void write_csv(std::ostream& os) const;
};

template <typename T>
StageSimilarityMatrix stage_similarity(const PromptPool<T>& pool);

template <typename T>
template <typename U>
PromptPool<U> PromptPool<T>::cast() const {
  PromptPool<U> out;
  out.base_count_ = base_count_;
  out.dim_ = dim_;
  out.expansion_ratio_ = expansion_ratio_;
  out.current_stage_ = current_stage_;
  for (const auto& e : entries_) {
    out.entries_.push_back({e.key.template cast<U>(), e.value.template cast<U>(), e.stage_id,
                            e.frozen});
  }
  return out;
}

}  // namespace pcl
