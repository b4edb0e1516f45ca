// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pcl/prompt_pool.hpp"

#include <cmath>
#include <map>
#include <ostream>

#include "pcl/error.hpp"

namespace pcl {

namespace {

template <typename T>
BasicTensor<T> uniform_row(std::size_t dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<T> v(dim);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return BasicTensor<T>::row(std::move(v), true);
}

}  // namespace

template <typename T>
PromptPool<T>::PromptPool(std::size_t base_count, std::size_t dim, double expansion_ratio,
                          Rng& rng)
    : base_count_(base_count), dim_(dim), expansion_ratio_(expansion_ratio) {
  if (base_count == 0 || dim == 0) throw InputError("prompt pool: base count and width must be positive");
  if (expansion_ratio < 0.0) throw InputError("prompt pool: negative expansion ratio");
  entries_.reserve(base_count);
  for (std::size_t i = 0; i < base_count; ++i) {
    auto key = uniform_row<T>(dim, rng);
    auto value = uniform_row<T>(dim, rng);
    entries_.push_back({std::move(key), std::move(value), 0, false});
  }
}

template <typename T>
std::size_t PromptPool<T>::expansion_count(std::size_t base_count, double ratio) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(base_count) + 0.5));
}

template <typename T>
BasicTensor<T> PromptPool<T>::key_matrix() const {
  std::vector<BasicTensor<T>> keys;
  keys.reserve(entries_.size());
  for (const auto& e : entries_) keys.push_back(e.key);
  return concat(keys);
}

template <typename T>
BasicTensor<T> PromptPool<T>::value_matrix() const {
  std::vector<BasicTensor<T>> values;
  values.reserve(entries_.size());
  for (const auto& e : entries_) values.push_back(e.value);
  return concat(values);
}

template <typename T>
BasicTensor<T> PromptPool<T>::stage_values(int stage) const {
  std::vector<BasicTensor<T>> values;
  for (const auto& e : entries_) {
    if (e.stage_id == stage) values.push_back(e.value);
  }
  if (values.empty()) throw ContractError("prompt pool: no entries for stage " + std::to_string(stage));
  return concat(values);
}

template <typename T>
BasicTensor<T> PromptPool<T>::select(const BasicTensor<T>& query) const {
  if (entries_.empty()) throw ContractError("prompt pool: select on an empty pool");
  if (query.rank() != 2 || query.dim(1) != dim_) {
    throw ContractError("prompt pool: query " + shape_str(query.shape()) +
                        " does not match pool width " + std::to_string(dim_));
  }
  const auto weights = cosine_matrix(query, key_matrix());  // [B x M]
  return matmul(weights, value_matrix());
}

template <typename T>
void PromptPool<T>::expand(int stage, Rng& rng) {
  if (stage < 1) throw ContractError("prompt pool: expand requires stage >= 1");
  if (stage <= current_stage_) {
    throw ContractError("prompt pool: stage " + std::to_string(stage) +
                        " already expanded (current stage " + std::to_string(current_stage_) + ")");
  }
  for (auto& e : entries_) {
    e.frozen = true;
    e.key.set_requires_grad(false);
    e.value.set_requires_grad(false);
  }
  const std::size_t n = expansion_count(base_count_, expansion_ratio_);
  for (std::size_t i = 0; i < n; ++i) {
    auto key = uniform_row<T>(dim_, rng);
    auto value = uniform_row<T>(dim_, rng);
    entries_.push_back({std::move(key), std::move(value), stage, false});
  }
  current_stage_ = stage;
}

template <typename T>
PromptPool<T> PromptPool<T>::restore(std::size_t base_count, std::size_t dim,
                                     double expansion_ratio, int current_stage,
                                     std::vector<PromptEntry<T>> entries) {
  PromptPool pool;
  pool.base_count_ = base_count;
  pool.dim_ = dim;
  pool.expansion_ratio_ = expansion_ratio;
  pool.current_stage_ = current_stage;
  for (auto& e : entries) {
    if (e.key.numel() != dim || e.value.numel() != dim) {
      throw InputError("prompt pool: restored entry width does not match " + std::to_string(dim));
    }
    if (e.stage_id > current_stage) {
      throw InputError("prompt pool: restored entry from future stage " + std::to_string(e.stage_id));
    }
    e.frozen = e.stage_id < current_stage;
    e.key.set_requires_grad(!e.frozen);
    e.value.set_requires_grad(!e.frozen);
  }
  pool.entries_ = std::move(entries);
  return pool;
}

template <typename T>
PromptPool<T> PromptPool<T>::clone() const {
  PromptPool out = cast<T>();
  for (std::size_t i = 0; i < out.entries_.size(); ++i) {
    out.entries_[i].key.set_requires_grad(entries_[i].key.requires_grad());
    out.entries_[i].value.set_requires_grad(entries_[i].value.requires_grad());
  }
  return out;
}

template <typename T>
BasicTensor<T> refined_weights(const BasicTensor<T>& reference, const BasicTensor<T>& keys) {
  if (keys.rank() != 2 || reference.rank() != 2 || keys.dim(1) != reference.dim(1)) {
    throw ContractError("refined_weights: reference " + shape_str(reference.shape()) +
                        " incompatible with keys " + shape_str(keys.shape()));
  }
  // Row-wise norms on K make every logit a proper cosine.
  return softmax(cosine_matrix(keys, reference), 0);
}

template <typename T>
BasicTensor<T> refined_select(const BasicTensor<T>& weights, const PromptPool<T>& pool) {
  if (weights.rank() != 2 || weights.dim(0) != pool.size()) {
    throw ContractError("refined_select: weights " + shape_str(weights.shape()) +
                        " do not match pool of " + std::to_string(pool.size()) + " entries");
  }
  return matmul(transpose(weights), pool.value_matrix());
}

double StageSimilarityMatrix::mean_diagonal() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < size(); ++i) acc += (*this)(i, i);
  return acc / static_cast<double>(size());
}

double StageSimilarityMatrix::mean_off_diagonal() const {
  if (size() < 2) throw ContractError("stage similarity: off-diagonal needs two stages");
  double acc = 0.0;
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t j = 0; j < size(); ++j)
      if (i != j) acc += (*this)(i, j);
  return acc / static_cast<double>(size() * (size() - 1));
}

void StageSimilarityMatrix::write_csv(std::ostream& os) const {
  os << "stage";
  for (int s : stages) os << ",stage_" << s;
  os << '\n';
  const auto old_precision = os.precision(17);
  for (std::size_t i = 0; i < size(); ++i) {
    os << "stage_" << stages[i];
    for (std::size_t j = 0; j < size(); ++j) os << ',' << (*this)(i, j);
    os << '\n';
  }
  os.precision(old_precision);
}

template <typename T>
StageSimilarityMatrix stage_similarity(const PromptPool<T>& pool) {
  const int last = pool.current_stage();
  std::map<int, std::vector<std::vector<double>>> groups;
  for (const auto& e : pool.entries()) {
    std::vector<double> v(e.value.data().begin(), e.value.data().end());
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::max(std::sqrt(norm), kNormEps);
    for (double& x : v) x /= norm;
    groups[e.stage_id].push_back(std::move(v));
  }
  StageSimilarityMatrix out;
  for (int s = 0; s <= last; ++s) {
    if (groups[s].empty()) {
      throw ContractError("stage similarity: stage " + std::to_string(s) + " has no prompts");
    }
    out.stages.push_back(s);
  }
  const std::size_t t = out.stages.size();
  out.values.assign(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = i; j < t; ++j) {
      const auto& gi = groups[out.stages[i]];
      const auto& gj = groups[out.stages[j]];
      double acc = 0.0;
      for (const auto& a : gi)
        for (const auto& b : gj) {
          double dot = 0.0;
          for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
          acc += std::abs(dot);
        }
      const double m = acc / static_cast<double>(gi.size() * gj.size());
      out.values[i * t + j] = m;
      out.values[j * t + i] = m;
    }
  }
  return out;
}

template class PromptPool<float>;
template class PromptPool<double>;
template BasicTensor<float> refined_weights(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> refined_weights(const BasicTensor<double>&, const BasicTensor<double>&);
template BasicTensor<float> refined_select(const BasicTensor<float>&, const PromptPool<float>&);
template BasicTensor<double> refined_select(const BasicTensor<double>&, const PromptPool<double>&);
template StageSimilarityMatrix stage_similarity(const PromptPool<float>&);
template StageSimilarityMatrix stage_similarity(const PromptPool<double>&);

}  // namespace pcl
