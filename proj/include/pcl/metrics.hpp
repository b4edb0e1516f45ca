// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Classification and continual-learning metrics. All arithmetic is double.
//
// BWT compares each earlier task's final accuracy with its accuracy right
// after it was trained (A[T-1][i] - A[i][i]); AvgACC averages, per stage,
// the accuracy over the tasks seen so far. For the three-stage matrix
// exercised in the metric tests this yields AvgACC 0.849, FAA 0.774,
// BWT -0.079 and AvgF 0.079. Averaged multi-seed summaries of the same
// experiment need not agree with a single matrix.

#pragma once

#include <cstddef>
#include <iosfwd>
#include <json.hpp>
#include <span>
#include <vector>

namespace pcl {

/// A[i][j] = accuracy on task j after training stage i.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  /// T x T matrix with every cell unset.
  explicit AccuracyMatrix(std::size_t stages);
  static AccuracyMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t stages() const { return stages_; }
  double operator()(std::size_t stage, std::size_t task) const;
  /// Throws InputError outside [0, 1].
  void set(std::size_t stage, std::size_t task, double accuracy);
  bool complete() const;
  /// Throws ContractError when any cell is unset.
  void require_complete() const;

  /// Header `task_0..task_{T-1}`, one `stage_i` row per stage.
  void write_csv(std::ostream& os) const;
  static AccuracyMatrix read_csv(std::istream& is);

  bool operator==(const AccuracyMatrix&) const;

 private:
  std::size_t stages_ = 0;
  std::vector<double> cells_;  // NaN marks unset
};

enum class AvgAccForm {
  /// Mean over stages of the mean accuracy on tasks seen so far.
  seen_tasks,
  /// Mean of the diagonal A[i][i].
  diagonal,
};

double avg_acc(const AccuracyMatrix& a, AvgAccForm form = AvgAccForm::seen_tasks);
/// Mean of the final row.
double faa(const AccuracyMatrix& a);
/// Mean over earlier tasks of (final accuracy - accuracy right after training it).
double bwt(const AccuracyMatrix& a);
/// Mean over earlier tasks of (best accuracy before the last stage - final accuracy).
double avg_f(const AccuracyMatrix& a);

struct ClMetrics {
  double avg_acc = 0.0;
  double faa = 0.0;
  double bwt = 0.0;
  double avg_f = 0.0;
};

ClMetrics compute_metrics(const AccuracyMatrix& a, AvgAccForm form = AvgAccForm::seen_tasks);
nlohmann::json to_json(const ClMetrics& m);

double accuracy(std::span<const int> preds, std::span<const int> truth);
/// Unweighted mean of per-class F1; a class with no support and no
/// predictions scores 0.
double macro_f1(std::span<const int> preds, std::span<const int> truth, std::size_t num_classes);

}  // namespace pcl
