// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace pcl {

/// Counter-based 64-bit generator. Every draw is a pure function of
/// (key, counter), so streams can be split by tag and resumed from a
/// two-word state without replaying history.
class Rng {
 public:
  struct State {
    std::uint64_t key = 0;
    std::uint64_t counter = 0;
  };

  explicit Rng(std::uint64_t seed = 0);

  static Rng from_state(State state);
  State state() const { return state_; }

  /// Independent child stream; does not advance this generator.
  Rng split(std::uint64_t tag) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal (Box-Muller, no cached second value).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  State state_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace pcl
