// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations shared by the unit tests and the
// acceptance binary: central finite differences on the double path, and
// plain scalar loops for everything with a closed form.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "pcl/rng.hpp"
#include "pcl/tensor.hpp"

namespace pcl::oracle {

/// Gradients with magnitude below this are compared absolutely: central
/// differences at eps=1e-3 carry O(eps^2) truncation error, which swamps a
/// pure relative measure around zero crossings.
inline constexpr double kFdFloor = 1e-2;
inline constexpr double kFdEps = 1e-3;

inline double rel_err(double a, double b, double floor = kFdFloor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Tensor64 random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                              bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor64(shape, std::move(v), requires_grad);
}

/// Entries with |x| in [lo, hi] and random sign, so row norms stay away from
/// zero where normalization is ill-conditioned.
inline Tensor64 bounded_tensor(const Shape& shape, Rng& rng, double lo = 0.3, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return Tensor64(shape, std::move(v), true);
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

/// Compares autodiff gradients of the scalar `f()` against central
/// differences for every element of every tensor in `inputs`.
inline GradCheck check_gradients(std::vector<Tensor64> inputs,
                                 const std::function<Tensor64()>& f, double eps = kFdEps,
                                 double floor = kFdFloor) {
  for (auto& x : inputs) x.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const auto loss = f();
    tape.backward(loss);
  }
  GradCheck out;
  for (auto& x : inputs) {
    const std::vector<double> ad(x.grad().begin(), x.grad().end());
    auto data = x.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = f().item();
      data[i] = saved - eps;
      const double down = f().item();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double a = ad.empty() ? 0.0 : ad[i];
      out.max_rel = std::max(out.max_rel, rel_err(a, fd, floor));
      ++out.checked;
    }
    x.zero_grad();
  }
  return out;
}

using Case = std::pair<std::vector<Tensor64>, std::function<Tensor64()>>;

/// Worst gradient error over `trials` cases drawn by `make`, each from its
/// own split of `seed`.
template <typename Make>
double worst_fd(Make&& make, int trials = 100, std::uint64_t seed = 11) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Rng rng = Rng(seed).split(static_cast<std::uint64_t>(t));
    auto [inputs, f] = make(rng);
    worst = std::max(worst, check_gradients(inputs, f).max_rel);
  }
  return worst;
}

/// Reduces any tensor to a scalar with fixed random weights so that every
/// output element receives a distinct upstream gradient.
inline Tensor64 project(const Tensor64& y, const Tensor64& weights) {
  return sum(mul(y, weights));
}

// ---------------------------------------------------------------------------
// Scalar loops

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const Tensor64& t) {
  Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(na), 1e-8) * std::max(std::sqrt(nb), 1e-8));
}

/// phi_b = sum_m cos(q_b, k_m) v_m
inline Matrix select(const Matrix& q, const Matrix& keys, const Matrix& values) {
  Matrix out(q.size(), std::vector<double>(values[0].size(), 0.0));
  for (std::size_t b = 0; b < q.size(); ++b)
    for (std::size_t m = 0; m < keys.size(); ++m) {
      const double w = cosine(q[b], keys[m]);
      for (std::size_t d = 0; d < values[m].size(); ++d) out[b][d] += w * values[m][d];
    }
  return out;
}

/// [M x B] column-softmax of cosine similarities.
inline Matrix refined_weights(const Matrix& r, const Matrix& keys) {
  Matrix w(keys.size(), std::vector<double>(r.size()));
  for (std::size_t b = 0; b < r.size(); ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < keys.size(); ++m) mx = std::max(mx, cosine(keys[m], r[b]));
    double z = 0;
    for (std::size_t m = 0; m < keys.size(); ++m) z += std::exp(cosine(keys[m], r[b]) - mx);
    for (std::size_t m = 0; m < keys.size(); ++m) w[m][b] = std::exp(cosine(keys[m], r[b]) - mx) / z;
  }
  return w;
}

inline Matrix refined_select(const Matrix& w, const Matrix& values) {
  Matrix out(w[0].size(), std::vector<double>(values[0].size(), 0.0));
  for (std::size_t b = 0; b < w[0].size(); ++b)
    for (std::size_t m = 0; m < values.size(); ++m)
      for (std::size_t d = 0; d < values[m].size(); ++d) out[b][d] += w[m][b] * values[m][d];
  return out;
}

/// Raw-cosine regularizer over `batch` samples; a single p* row is shared.
inline double loss_similarity(const Matrix& p_star, const Matrix& keys, std::size_t batch) {
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& p = p_star.size() == 1 ? p_star[0] : p_star[b];
    for (const auto& k : keys) total += 1.0 - cosine(p, k);
  }
  return total / static_cast<double>(batch * keys.size());
}

inline double mean_abs_cos(const Matrix& a, const Matrix& b) {
  double total = 0;
  for (const auto& x : a)
    for (const auto& y : b) total += std::abs(cosine(x, y));
  return total / static_cast<double>(a.size() * b.size());
}

inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
  std::vector<std::vector<int>> confusion(classes, std::vector<int>(classes, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++confusion[truth[i]][pred[i]];
  double total = 0;
  for (int c = 0; c < classes; ++c) {
    const double tp = confusion[c][c];
    double col = 0, row = 0;
    for (int k = 0; k < classes; ++k) {
      col += confusion[k][c];
      row += confusion[c][k];
    }
    const double precision = col > 0 ? tp / col : 0.0;
    const double recall = row > 0 ? tp / row : 0.0;
    total += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return total / classes;
}

inline double avg_acc_seen(const Matrix& a) {
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double row = 0;
    for (std::size_t j = 0; j <= i; ++j) row += a[i][j];
    total += row / static_cast<double>(i + 1);
  }
  return total / static_cast<double>(a.size());
}

inline double avg_acc_diagonal(const Matrix& a) {
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) total += a[i][i];
  return total / static_cast<double>(a.size());
}

inline double faa(const Matrix& a) {
  double total = 0;
  for (double v : a.back()) total += v;
  return total / static_cast<double>(a.size());
}

inline double bwt(const Matrix& a) {
  const std::size_t t = a.size();
  double total = 0;
  for (std::size_t i = 0; i + 1 < t; ++i) total += a[t - 1][i] - a[i][i];
  return total / static_cast<double>(t - 1);
}

inline double avg_f(const Matrix& a) {
  const std::size_t t = a.size();
  double total = 0;
  for (std::size_t i = 0; i + 1 < t; ++i) {
    double best = -1;
    for (std::size_t k = 0; k + 1 < t; ++k) best = std::max(best, a[k][i]);
    total += best - a[t - 1][i];
  }
  return total / static_cast<double>(t - 1);
}

}  // namespace pcl::oracle
