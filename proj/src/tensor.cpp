// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pcl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Core>

#include "pcl/error.hpp"

namespace pcl {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// BasicTensor

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<TensorStorage<T>>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor({1}, {value});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::row(std::vector<T> values, bool requires_grad) {
  const auto n = values.size();
  return BasicTensor({1, n}, std::move(values), requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::rows() const {
  if (rank() != 2) throw DimensionError("expected rank-2 tensor, got " + shape_str(shape()));
  return impl_->shape[0];
}

template <typename T>
std::size_t BasicTensor<T>::cols() const {
  if (rank() != 2) throw DimensionError("expected rank-2 tensor, got " + shape_str(shape()));
  return impl_->shape[1];
}

template <typename T>
T BasicTensor<T>::at(std::size_t r, std::size_t c) const {
  return impl_->data.at(r * cols() + c);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(impl_->shape, impl_->data, false);
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_;
}

template <typename T>
void Tape<T>::backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss was not produced on a gradient tape");
  }
  BasicTensor<T> seed = loss;
  seed.mutable_grad()[0] += T(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

namespace {

template <typename T>
using Impl = std::shared_ptr<TensorStorage<T>>;

template <typename T>
std::vector<T>& grad_of(const Impl<T>& s) {
  if (s->grad.empty()) s->grad.assign(s->data.size(), T(0));
  return s->grad;
}

// Returns the active tape when any input needs a gradient.
template <typename T>
Tape<T>* tape_for(std::initializer_list<const BasicTensor<T>*> inputs) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T>
BasicTensor<T> make_output(Shape shape, std::vector<T> data, Tape<T>* tape) {
  return BasicTensor<T>(std::move(shape), std::move(data), tape != nullptr);
}

void require_rank2(std::string_view op, const Shape& s) {
  if (s.size() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(s));
  }
}

void require_same(std::string_view op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using ConstMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
void store(const RowMajor& r, T* c, std::size_t m, std::size_t n, bool accumulate) {
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> out(
      c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (accumulate) {
    out = (out.template cast<double>() + r).template cast<T>();
  } else {
    out = r.template cast<T>();
  }
}

template <typename T>
RowMajor as_double(const T* a, std::size_t rows, std::size_t cols) {
  return ConstMap<T>(a, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))
      .template cast<double>();
}

// C[m x n] (+)= A[m x k] * B[k x n]; products and sums in double.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  RowMajor r = as_double(a, m, k) * as_double(b, k, n);
  store(r, c, m, n, accumulate);
}

// C[m x n] (+)= A^T * B with A stored [k x m], B [k x n].
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  RowMajor r = as_double(a, k, m).transpose() * as_double(b, k, n);
  store(r, c, m, n, accumulate);
}

template <typename T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

// C[m x n] (+)= A[m x k] * B^T with B stored [n x k].
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  RowMajor r = as_double(a, m, k) * as_double(b, n, k).transpose();
  store(r, c, m, n, accumulate);
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank2("matmul", a.shape());
  require_rank2("matmul", b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  auto* tape = tape_for({&a, &b});
  std::vector<T> out(m * n);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  auto result = make_output<T>({m, n}, std::move(out), tape);
  if (tape) {
    tape->record([sa = a.storage(), sb = b.storage(), so = result.storage(), m, k, n] {
      if (so->grad.empty()) return;
      if (sa->requires_grad) {
        gemm_nt(so->grad.data(), sb->data.data(), grad_of(sa).data(), m, n, k, true);
      }
      if (sb->requires_grad) {
        gemm_tn(sa->data.data(), so->grad.data(), grad_of(sb).data(), k, m, n, true);
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank2("transpose", a.shape());
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto* tape = tape_for({&a});
  auto result = make_output<T>({c, r}, transposed(a.data().data(), r, c), tape);
  if (tape) {
    tape->record([sa = a.storage(), so = result.storage(), r, c] {
      if (so->grad.empty() || !sa->requires_grad) return;
      auto& ga = grad_of(sa);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += so->grad[j * r + i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same("add", a.shape(), b.shape());
  auto* tape = tape_for({&a, &b});
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto result = make_output<T>(a.shape(), std::move(out), tape);
  if (tape) {
    tape->record([sa = a.storage(), sb = b.storage(), so = result.storage()] {
      if (so->grad.empty()) return;
      for (const auto& s : {sa, sb}) {
        if (!s->requires_grad) continue;
        auto& g = grad_of(s);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += so->grad[i];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same("sub", a.shape(), b.shape());
  auto* tape = tape_for({&a, &b});
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto result = make_output<T>(a.shape(), std::move(out), tape);
  if (tape) {
    tape->record([sa = a.storage(), sb = b.storage(), so = result.storage()] {
      if (so->grad.empty()) return;
      if (sa->requires_grad) {
        auto& g = grad_of(sa);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += so->grad[i];
      }
      if (sb->requires_grad) {
        auto& g = grad_of(sb);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= so->grad[i];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same("mul", a.shape(), b.shape());
  auto* tape = tape_for({&a, &b});
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto result = make_output<T>(a.shape(), std::move(out), tape);
  if (tape) {
    tape->record([sa = a.storage(), sb = b.storage(), so = result.storage()] {
      if (so->grad.empty()) return;
      if (sa->requires_grad) {
        auto& g = grad_of(sa);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += so->grad[i] * sb->data[i];
      }
      if (sb->requires_grad) {
        auto& g = grad_of(sb);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += so->grad[i] * sa->data[i];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> add_row(const BasicTensor<T>& x, const BasicTensor<T>& bias) {
  require_rank2("add_row", x.shape());
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  auto* tape = tape_for({&x, &bias});
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  auto result = make_output<T>(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record([sx = x.storage(), sb = bias.storage(), so = result.storage(), m, n] {
      if (so->grad.empty()) return;
      if (sx->requires_grad) {
        auto& g = grad_of(sx);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += so->grad[i];
      }
      if (sb->requires_grad) {
        std::vector<double> acc(n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) acc[j] += so->grad[i * n + j];
        auto& g = grad_of(sb);
        for (std::size_t j = 0; j < n; ++j) g[j] = static_cast<T>(g[j] + acc[j]);
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double factor) {
  auto* tape = tape_for({&x});
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(x.data()[i] * factor);
  auto result = make_output<T>(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record([sx = x.storage(), so = result.storage(), factor] {
      if (so->grad.empty()) return;
      auto& g = grad_of(sx);
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = static_cast<T>(g[i] + so->grad[i] * factor);
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& x, double value) {
  auto* tape = tape_for({&x});
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(x.data()[i] + value);
  auto result = make_output<T>(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record([sx = x.storage(), so = result.storage()] {
      if (so->grad.empty()) return;
      auto& g = grad_of(sx);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += so->grad[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  auto* tape = tape_for({&x});
  double acc = 0.0;
  for (auto v : x.data()) acc += v;
  auto result = make_output<T>({1}, {static_cast<T>(acc)}, tape);
  if (tape) {
    tape->record([sx = x.storage(), so = result.storage()] {
      if (so->grad.empty()) return;
      auto& g = grad_of(sx);
      for (auto& v : g) v += so->grad[0];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  if (len == 0) throw DimensionError("softmax: empty axis");

  auto* tape = tape_for({&x});
  const auto xs = x.data();
  std::vector<T> out(x.numel());
  std::vector<double> e(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = xs[base];
      for (std::size_t t = 1; t < len; ++t) mx = std::max(mx, static_cast<double>(xs[base + t * inner]));
      double total = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        e[t] = std::exp(static_cast<double>(xs[base + t * inner]) - mx);
        total += e[t];
      }
      for (std::size_t t = 0; t < len; ++t) out[base + t * inner] = static_cast<T>(e[t] / total);
    }
  }
  auto result = make_output<T>(shape, std::move(out), tape);
  if (tape) {
    tape->record([sx = x.storage(), so = result.storage(), outer, inner, len] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(sx);
      const auto& y = so->data;
      const auto& gy = so->grad;
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t t = 0; t < len; ++t) {
            const auto idx = base + t * inner;
            dot += static_cast<double>(gy[idx]) * y[idx];
          }
          for (std::size_t t = 0; t < len; ++t) {
            const auto idx = base + t * inner;
            gx[idx] = static_cast<T>(gx[idx] + y[idx] * (gy[idx] - dot));
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  auto* tape = tape_for({&x});
  std::vector<T> out(x.numel()), cdf(x.numel());
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    cdf[i] = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(v * inv_sqrt2));
    out[i] = v * cdf[i];
  }
  auto result = make_output<T>(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record([sx = x.storage(), so = result.storage(), cdf = std::move(cdf)] {
      if (so->grad.empty()) return;
      auto& g = grad_of(sx);
      const T inv_sqrt_2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = sx->data[i];
        const T pdf = inv_sqrt_2pi * std::exp(static_cast<T>(-0.5) * v * v);
        g[i] += so->grad[i] * (cdf[i] + v * pdf);
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& beta) {
  require_rank2("layernorm", x.shape());
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layernorm: affine parameters do not match " + shape_str(x.shape()));
  }
  auto* tape = tape_for({&x, &gamma, &beta});
  std::vector<T> out(m * n);
  std::vector<double> xhat(m * n), inv_std(m);
  const auto xs = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xs[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xs[i * n + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + kNormEps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xs[i * n + j] - mu) * inv_std[i];
      xhat[i * n + j] = h;
      out[i * n + j] = static_cast<T>(h * gamma.data()[j] + beta.data()[j]);
    }
  }
  auto result = make_output<T>(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record([sx = x.storage(), sg = gamma.storage(), sb = beta.storage(),
                  so = result.storage(), xhat = std::move(xhat), inv_std = std::move(inv_std), m,
                  n] {
      if (so->grad.empty()) return;
      const auto& gy = so->grad;
      if (sg->requires_grad || sb->requires_grad) {
        std::vector<double> dg(n, 0.0), db(n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            dg[j] += gy[i * n + j] * xhat[i * n + j];
            db[j] += gy[i * n + j];
          }
        if (sg->requires_grad) {
          auto& g = grad_of(sg);
          for (std::size_t j = 0; j < n; ++j) g[j] = static_cast<T>(g[j] + dg[j]);
        }
        if (sb->requires_grad) {
          auto& g = grad_of(sb);
          for (std::size_t j = 0; j < n; ++j) g[j] = static_cast<T>(g[j] + db[j]);
        }
      }
      if (sx->requires_grad) {
        auto& gx = grad_of(sx);
        std::vector<double> dh(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dh[j] = static_cast<double>(gy[i * n + j]) * sg->data[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * xhat[i * n + j];
          }
          mean_dh /= static_cast<double>(n);
          mean_dh_h /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const double d = inv_std[i] * (dh[j] - mean_dh - xhat[i * n + j] * mean_dh_h);
            gx[i * n + j] = static_cast<T>(gx[i * n + j] + d);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> l2_normalize_rows(const BasicTensor<T>& x) {
  require_rank2("l2_normalize_rows", x.shape());
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto* tape = tape_for({&x});
  std::vector<T> out(m * n);
  std::vector<double> norms(m);
  const auto xs = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += static_cast<double>(xs[i * n + j]) * xs[i * n + j];
    norms[i] = std::sqrt(ss);
    const double denom = std::max(norms[i], kNormEps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(xs[i * n + j] / denom);
  }
  auto result = make_output<T>(x.shape(), std::move(out), tape);
  if (tape) {
    tape->record([sx = x.storage(), so = result.storage(), norms = std::move(norms), m, n] {
      if (so->grad.empty()) return;
      auto& gx = grad_of(sx);
      const auto& gy = so->grad;
      for (std::size_t i = 0; i < m; ++i) {
        if (norms[i] <= kNormEps) {
          for (std::size_t j = 0; j < n; ++j)
            gx[i * n + j] = static_cast<T>(gx[i * n + j] + gy[i * n + j] / kNormEps);
          continue;
        }
        // Recompute y in double; so->data is rounded to T.
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j)
          dot += static_cast<double>(gy[i * n + j]) * (sx->data[i * n + j] / norms[i]);
        for (std::size_t j = 0; j < n; ++j) {
          const double y = sx->data[i * n + j] / norms[i];
          gx[i * n + j] = static_cast<T>(gx[i * n + j] + (gy[i * n + j] - y * dot) / norms[i]);
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> cosine_sim(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank2("cosine_sim", a.shape());
  if (a.dim(0) != 1) throw DimensionError("cosine_sim: expected [1xD], got " + shape_str(a.shape()));
  require_same("cosine_sim", a.shape(), b.shape());
  return sum(mul(l2_normalize_rows(a), l2_normalize_rows(b)));
}

template <typename T>
BasicTensor<T> cosine_matrix(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank2("cosine_matrix", a.shape());
  require_rank2("cosine_matrix", b.shape());
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("cosine_matrix: width mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const auto an = l2_normalize_rows(a);
  const auto bn = l2_normalize_rows(b);
  const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  auto* tape = tape_for({&an, &bn});
  std::vector<T> out(m * n);
  gemm_nt(an.data().data(), bn.data().data(), out.data(), m, d, n, false);
  auto result = make_output<T>({m, n}, std::move(out), tape);
  if (tape) {
    tape->record([sa = an.storage(), sb = bn.storage(), so = result.storage(), m, n, d] {
      if (so->grad.empty()) return;
      if (sa->requires_grad) gemm_nn(so->grad.data(), sb->data.data(), grad_of(sa).data(), m, n, d, true);
      if (sb->requires_grad) gemm_tn(so->grad.data(), sa->data.data(), grad_of(sb).data(), n, m, d, true);
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) require_rank2("concat", p.shape());
  const std::size_t fixed = parts[0].dim(1 - axis);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(1 - axis) != fixed) {
      throw DimensionError("concat: incompatible shapes " + shape_str(parts[0].shape()) +
                           " and " + shape_str(p.shape()));
    }
    total += p.dim(axis);
  }
  Tape<T>* tape = Tape<T>::active();
  bool any_grad = false;
  for (const auto& p : parts) any_grad = any_grad || p.requires_grad();
  if (!any_grad) tape = nullptr;

  Shape shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<T> out;
  out.reserve(total * fixed);
  if (axis == 0) {
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  } else {
    out.resize(total * fixed);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      for (std::size_t i = 0; i < fixed; ++i)
        std::copy_n(p.data().data() + i * w, w, out.data() + i * total + offset);
      offset += w;
    }
  }
  auto result = make_output<T>(std::move(shape), std::move(out), tape);
  if (tape) {
    std::vector<Impl<T>> storages;
    storages.reserve(parts.size());
    for (const auto& p : parts) storages.push_back(p.storage());
    tape->record([storages = std::move(storages), so = result.storage(), axis, fixed, total] {
      if (so->grad.empty()) return;
      std::size_t offset = 0;
      for (const auto& s : storages) {
        const std::size_t extent = s->shape[axis];
        if (s->requires_grad) {
          auto& g = grad_of(s);
          if (axis == 0) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += so->grad[offset * fixed + i];
          } else {
            for (std::size_t i = 0; i < fixed; ++i)
              for (std::size_t j = 0; j < extent; ++j)
                g[i * extent + j] += so->grad[i * total + offset + j];
          }
        }
        offset += extent;
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> index) {
  require_rank2("gather_rows", x.shape());
  const std::size_t m = x.dim(0), n = x.dim(1);
  for (auto r : index) {
    if (r >= m) {
      throw DimensionError("gather_rows: row " + std::to_string(r) + " out of range for " +
                           shape_str(x.shape()));
    }
  }
  auto* tape = tape_for({&x});
  std::vector<T> out(index.size() * n);
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(x.data().data() + index[i] * n, n, out.data() + i * n);
  auto result = make_output<T>({index.size(), n}, std::move(out), tape);
  if (tape) {
    tape->record([sx = x.storage(), so = result.storage(),
                  idx = std::vector<std::size_t>(index.begin(), index.end()), n] {
      if (so->grad.empty()) return;
      auto& g = grad_of(sx);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) g[idx[i] * n + j] += so->grad[i * n + j];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> row_at(const BasicTensor<T>& x, std::size_t r) {
  const std::size_t idx[1] = {r};
  return gather_rows(x, std::span<const std::size_t>(idx));
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank2("cross_entropy", logits.shape());
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(logits.shape()) + " logits");
  }
  if (b == 0) throw InputError("cross_entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw InputError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(c) + ")");
    }
  }
  auto* tape = tape_for({&logits});
  const auto xs = logits.data();
  std::vector<double> probs(b * c);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double mx = xs[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(xs[i * c + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(static_cast<double>(xs[i * c + j]) - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += (mx + std::log(z)) - xs[i * c + static_cast<std::size_t>(labels[i])];
  }
  auto result = make_output<T>({1}, {static_cast<T>(total / static_cast<double>(b))}, tape);
  if (tape) {
    tape->record([sx = logits.storage(), so = result.storage(), probs = std::move(probs),
                  ys = std::vector<int>(labels.begin(), labels.end()), b, c] {
      if (so->grad.empty()) return;
      auto& g = grad_of(sx);
      const double scale_by = static_cast<double>(so->grad[0]) / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          const double onehot = static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0;
          g[i * c + j] = static_cast<T>(g[i * c + j] + (probs[i * c + j] - onehot) * scale_by);
        }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Attention

template <typename T>
BasicTensor<T> self_attention(const BasicTensor<T>& qkv, std::size_t batch, std::size_t seq,
                              std::size_t heads, std::vector<T>* probs_out) {
  require_rank2("self_attention", qkv.shape());
  if (qkv.dim(0) != batch * seq || qkv.dim(1) % 3 != 0) {
    throw DimensionError("self_attention: qkv " + shape_str(qkv.shape()) + " inconsistent with " +
                         std::to_string(batch) + " sequences of length " + std::to_string(seq));
  }
  const std::size_t width = qkv.dim(1) / 3;
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("self_attention: width " + std::to_string(width) +
                         " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t dh = width / heads;
  const std::size_t stride = 3 * width;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto* tape = tape_for({&qkv});
  const T* src = qkv.data().data();

  std::vector<double> probs(batch * heads * seq * seq);
  std::vector<T> out(batch * seq * width);
  std::vector<double> acc(dh);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* base = src + b * seq * stride;
    for (std::size_t h = 0; h < heads; ++h) {
      double* p = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t s = 0; s < seq; ++s) {
        const T* q = base + s * stride + h * dh;
        double mx = -INFINITY;
        for (std::size_t t = 0; t < seq; ++t) {
          const T* k = base + t * stride + width + h * dh;
          double dot = 0.0;
          for (std::size_t d = 0; d < dh; ++d) dot += static_cast<double>(q[d]) * k[d];
          p[s * seq + t] = dot * inv_scale;
          mx = std::max(mx, p[s * seq + t]);
        }
        double z = 0.0;
        for (std::size_t t = 0; t < seq; ++t) {
          p[s * seq + t] = std::exp(p[s * seq + t] - mx);
          z += p[s * seq + t];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t t = 0; t < seq; ++t) {
          p[s * seq + t] /= z;
          const T* v = base + t * stride + 2 * width + h * dh;
          for (std::size_t d = 0; d < dh; ++d) acc[d] += p[s * seq + t] * v[d];
        }
        T* o = out.data() + (b * seq + s) * width + h * dh;
        for (std::size_t d = 0; d < dh; ++d) o[d] = static_cast<T>(acc[d]);
      }
    }
  }
  if (probs_out) probs_out->assign(probs.begin(), probs.end());
  auto result = make_output<T>({batch * seq, width}, std::move(out), tape);
  if (tape) {
    tape->record([sx = qkv.storage(), so = result.storage(), probs = std::move(probs), batch,
                  seq, heads, width, dh, stride, inv_scale] {
      if (so->grad.empty()) return;
      auto& g = grad_of(sx);
      const T* x = sx->data.data();
      const T* go = so->grad.data();
      std::vector<double> dp(seq), dq(dh);
      // dK and dV accumulate over all queries; keep them in double per head.
      std::vector<double> dk(seq * dh), dv(seq * dh);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* base = x + b * seq * stride;
        T* gbase = g.data() + b * seq * stride;
        for (std::size_t h = 0; h < heads; ++h) {
          const double* p = probs.data() + (b * heads + h) * seq * seq;
          std::fill(dk.begin(), dk.end(), 0.0);
          std::fill(dv.begin(), dv.end(), 0.0);
          for (std::size_t s = 0; s < seq; ++s) {
            const T* gos = go + (b * seq + s) * width + h * dh;
            double row_dot = 0.0;
            for (std::size_t t = 0; t < seq; ++t) {
              const T* v = base + t * stride + 2 * width + h * dh;
              double d = 0.0;
              for (std::size_t k = 0; k < dh; ++k) {
                d += static_cast<double>(gos[k]) * v[k];
                dv[t * dh + k] += p[s * seq + t] * gos[k];
              }
              dp[t] = d;
              row_dot += d * p[s * seq + t];
            }
            const T* q = base + s * stride + h * dh;
            std::fill(dq.begin(), dq.end(), 0.0);
            for (std::size_t t = 0; t < seq; ++t) {
              const double ds = p[s * seq + t] * (dp[t] - row_dot) * inv_scale;
              const T* k = base + t * stride + width + h * dh;
              for (std::size_t d = 0; d < dh; ++d) {
                dq[d] += ds * k[d];
                dk[t * dh + d] += ds * q[d];
              }
            }
            T* gq = gbase + s * stride + h * dh;
            for (std::size_t d = 0; d < dh; ++d) gq[d] = static_cast<T>(gq[d] + dq[d]);
          }
          for (std::size_t t = 0; t < seq; ++t) {
            T* gk = gbase + t * stride + width + h * dh;
            T* gv = gbase + t * stride + 2 * width + h * dh;
            for (std::size_t d = 0; d < dh; ++d) {
              gk[d] = static_cast<T>(gk[d] + dk[t * dh + d]);
              gv[d] = static_cast<T>(gv[d] + dv[t * dh + d]);
            }
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define PCL_INSTANTIATE_TENSOR(T)                                                              \
  template class BasicTensor<T>;                                                               \
  template class Tape<T>;                                                                      \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                    \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> add_row(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, double);                           \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                          \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                         \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                         \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> layernorm(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                    const BasicTensor<T>&);                                    \
  template BasicTensor<T> l2_normalize_rows(const BasicTensor<T>&);                            \
  template BasicTensor<T> cosine_sim(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> cosine_matrix(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);             \
  template BasicTensor<T> gather_rows(const BasicTensor<T>&, std::span<const std::size_t>);    \
  template BasicTensor<T> row_at(const BasicTensor<T>&, std::size_t);                          \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);          \
  template BasicTensor<T> self_attention(const BasicTensor<T>&, std::size_t, std::size_t,      \
                                         std::size_t, std::vector<T>*);

PCL_INSTANTIATE_TENSOR(float)
PCL_INSTANTIATE_TENSOR(double)

#undef PCL_INSTANTIATE_TENSOR

}  // namespace pcl
