// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a define-by-run gradient tape.
//
// Ops record a backward closure on the thread's active Tape when at least
// one input requires a gradient. With no active tape (or no grad-requiring
// inputs) ops are pure forward kernels. Reductions accumulate in double
// regardless of the element type.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pcl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value);
  /// Row vector [1 x n].
  static BasicTensor row(std::vector<T> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }
  /// Rank-2 accessors; throw DimensionError on other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return impl_->data; }
  /// Direct write access. Intended for leaves (initialization, optimizer
  /// steps); mutating a tensor already captured on a live tape corrupts
  /// its backward pass.
  std::span<T> mutable_data() { return impl_->data; }
  T at(std::size_t r, std::size_t c) const;
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value);
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated as zeros on first use.
  std::span<T> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  /// Value copy that is not connected to any tape.
  BasicTensor detach() const;
  template <typename U>
  BasicTensor<U> cast() const;

  bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<TensorStorage<T>>& storage() const { return impl_; }

 private:
  explicit BasicTensor(std::shared_ptr<TensorStorage<T>> impl) : impl_(std::move(impl)) {}
  template <typename U>
  friend class BasicTensor;

  std::shared_ptr<TensorStorage<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
template <typename U>
BasicTensor<U> BasicTensor<T>::cast() const {
  std::vector<U> out(impl_->data.begin(), impl_->data.end());
  return BasicTensor<U>(impl_->shape, std::move(out), impl_->requires_grad);
}

/// Ordered record of backward closures. Backward replays them in exact
/// reverse order and then discards them.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Backward fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  /// Seeds d(loss)=1 and runs every recorded rule in reverse.
  /// Throws ContractError when loss is not a scalar produced on a tape.
  void backward(const BasicTensor<T>& loss);

  static Tape* active();

 private:
  template <typename U>
  friend class TapeScope;
  static inline thread_local Tape* active_ = nullptr;
  std::vector<Backward> ops_;
};

/// Makes a tape the active one for the current thread for its lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
  ~TapeScope() { Tape<T>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Rank-2 unless noted.

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// x[m x n] + bias[1 x n] broadcast over rows.
template <typename T>
BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& bias);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor);
template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, double value);
/// Any rank; returns shape {1}.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

/// Any rank; max-subtracted, normalizes each slice along `axis`.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis);
/// Exact (erf) GELU, any rank.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);
/// Row-wise normalization with affine [1 x n] gamma/beta.
template <typename T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta);
/// Each row divided by max(||row||_2, eps).
template <typename T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x);
/// a . b / (max(||a||, eps) max(||b||, eps)) for [1 x D] inputs; shape {1}.
template <typename T>
BasicTensor<T> cosine_sim(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Pairwise row cosine similarities: [m x D], [n x D] -> [m x n].
template <typename T>
BasicTensor<T> cosine_matrix(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Concatenate rank-2 tensors along axis 0 (rows) or 1 (columns).
template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis = 0);
/// out[i] = x[index[i]]; repeated indices accumulate in backward.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> index);
template <typename T>
BasicTensor<T> row_at(const BasicTensor<T>& x, std::size_t r);

/// Mean negative log-likelihood of `labels` under softmax(logits); shape {1}.
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Multi-head self-attention over `batch` independent sequences of length
/// `seq`. qkv is [batch*seq x 3D] laid out as [Q | K | V]; result is
/// [batch*seq x D]. When `probs` is non-null it receives the post-softmax
/// attention weights laid out [batch][head][query][key].
template <typename T>
BasicTensor<T> self_attention(const BasicTensor<T>& qkv, std::size_t batch, std::size_t seq,
                              std::size_t heads, std::vector<T>* probs = nullptr);

inline constexpr double kNormEps = 1e-8;

}  // namespace pcl
