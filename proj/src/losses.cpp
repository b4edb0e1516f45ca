// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pcl/losses.hpp"

#include "pcl/error.hpp"

namespace pcl {

std::string to_string(LsMode mode) {
  return mode == LsMode::literal_softmax ? "literal_softmax" : "raw_cosine";
}

std::string to_string(PStarSource source) {
  return source == PStarSource::aggregated_phi ? "aggregated_phi" : "new_prompt_values";
}

LsMode parse_ls_mode(const std::string& text) {
  if (text == "literal_softmax") return LsMode::literal_softmax;
  if (text == "raw_cosine") return LsMode::raw_cosine;
  throw InputError("unknown ls_mode '" + text + "'");
}

PStarSource parse_p_star_source(const std::string& text) {
  if (text == "aggregated_phi") return PStarSource::aggregated_phi;
  if (text == "new_prompt_values") return PStarSource::new_prompt_values;
  throw InputError("unknown p_star_source '" + text + "'");
}

template <typename T>
BasicTensor<T> loss_similarity(const BasicTensor<T>& p_star, const BasicTensor<T>& keys,
                               std::size_t batch, LsMode mode) {
  if (batch == 0) throw ContractError("loss_similarity: batch size must be positive");
  if (p_star.rank() != 2 || (p_star.dim(0) != batch && p_star.dim(0) != 1)) {
    throw ContractError("loss_similarity: p_star " + shape_str(p_star.shape()) +
                        " does not cover a batch of " + std::to_string(batch));
  }
  if (keys.rank() != 2 || keys.dim(0) == 0 || keys.dim(1) != p_star.dim(1)) {
    throw ContractError("loss_similarity: keys " + shape_str(keys.shape()) +
                        " incompatible with p_star " + shape_str(p_star.shape()));
  }
  auto z = cosine_matrix(p_star, keys);  // [rows x M]
  if (mode == LsMode::literal_softmax) z = softmax(z, 1);
  // A shared single row stands for `batch` identical rows; the mean is unchanged.
  const double cells = static_cast<double>(p_star.dim(0) * keys.dim(0));
  return add_scalar(scale(sum(z), -1.0 / cells), 1.0);
}

template <typename T>
BasicTensor<T> loss_total(const BasicTensor<T>& ce, const BasicTensor<T>& ls, double lambda) {
  if (lambda < 0.0) throw ContractError("loss_total: lambda must be non-negative");
  if (lambda == 0.0) return ce;
  return add(ce, scale(ls, lambda));
}

template BasicTensor<float> loss_similarity(const BasicTensor<float>&, const BasicTensor<float>&,
                                            std::size_t, LsMode);
template BasicTensor<double> loss_similarity(const BasicTensor<double>&,
                                             const BasicTensor<double>&, std::size_t, LsMode);
template BasicTensor<float> loss_total(const BasicTensor<float>&, const BasicTensor<float>&, double);
template BasicTensor<double> loss_total(const BasicTensor<double>&, const BasicTensor<double>&,
                                        double);

}  // namespace pcl
