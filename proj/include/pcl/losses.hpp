// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>

#include "pcl/tensor.hpp"

namespace pcl {

/// How per-key similarities z are formed before the (1 - z) penalty.
enum class LsMode {
  /// z = softmax of cosine similarities. Sums to one, so the loss is the
  /// constant (M - 1) / M and has no useful gradient. Kept for tests.
  literal_softmax,
  /// z = raw cosine similarities.
  raw_cosine,
};

/// What stands in for the normalized prompt vector p*.
enum class PStarSource {
  /// Per sample: mean over prompt layers of the L2-normalized prompts.
  aggregated_phi,
  /// Mean of the values added in the current stage (shared by the batch).
  new_prompt_values,
};

struct LossConfig {
  double lambda = 0.001;
  LsMode ls_mode = LsMode::raw_cosine;
  PStarSource p_star_source = PStarSource::aggregated_phi;
};

std::string to_string(LsMode mode);
std::string to_string(PStarSource source);
LsMode parse_ls_mode(const std::string& text);
PStarSource parse_p_star_source(const std::string& text);

/// Similarity regularizer over the full key matrix K [M x D]:
///   L_s = 1/(b*M) * sum_batch sum_m (1 - z_m).
/// `p_star` holds one row per sample, or a single row shared by all `batch`
/// samples. Throws ContractError for batch == 0 or a row-count mismatch.
template <typename T>
BasicTensor<T> loss_similarity(const BasicTensor<T>& p_star, const BasicTensor<T>& keys,
                               std::size_t batch, LsMode mode);

/// ce + lambda * ls.
template <typename T>
BasicTensor<T> loss_total(const BasicTensor<T>& ce, const BasicTensor<T>& ls, double lambda);

}  // namespace pcl
