// Copyright 2026 The pcl Authors
// SPDX-License-Identifier: Apache-2.0

#include "pcl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "pcl/error.hpp"

namespace pcl {

AccuracyMatrix::AccuracyMatrix(std::size_t stages)
    : stages_(stages), cells_(stages * stages, std::numeric_limits<double>::quiet_NaN()) {}

AccuracyMatrix AccuracyMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  AccuracyMatrix a(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) {
      throw InputError("accuracy matrix: row " + std::to_string(i) + " has " +
                       std::to_string(rows[i].size()) + " entries, expected " +
                       std::to_string(rows.size()));
    }
    for (std::size_t j = 0; j < rows.size(); ++j) a.set(i, j, rows[i][j]);
  }
  return a;
}

double AccuracyMatrix::operator()(std::size_t stage, std::size_t task) const {
  if (stage >= stages_ || task >= stages_) throw ContractError("accuracy matrix: index out of range");
  return cells_[stage * stages_ + task];
}

void AccuracyMatrix::set(std::size_t stage, std::size_t task, double value) {
  if (stage >= stages_ || task >= stages_) throw ContractError("accuracy matrix: index out of range");
  if (!(value >= 0.0 && value <= 1.0)) {
    throw InputError("accuracy matrix: value " + std::to_string(value) + " outside [0, 1]");
  }
  cells_[stage * stages_ + task] = value;
}

bool AccuracyMatrix::complete() const {
  return stages_ > 0 && std::none_of(cells_.begin(), cells_.end(), [](double v) { return std::isnan(v); });
}

void AccuracyMatrix::require_complete() const {
  if (!complete()) throw ContractError("accuracy matrix: metrics need every cell populated");
}

void AccuracyMatrix::write_csv(std::ostream& os) const {
  os << "stage";
  for (std::size_t j = 0; j < stages_; ++j) os << ",task_" << j;
  os << '\n';
  const auto old_precision = os.precision(17);
  for (std::size_t i = 0; i < stages_; ++i) {
    os << "stage_" << i;
    for (std::size_t j = 0; j < stages_; ++j) os << ',' << (*this)(i, j);
    os << '\n';
  }
  os.precision(old_precision);
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

}  // namespace

AccuracyMatrix AccuracyMatrix::read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InputError("accuracy matrix csv: missing header");
  auto header = split_csv(line);
  // A leading row-label column is optional.
  const bool labelled = !header.empty() && header[0].rfind("task_", 0) != 0;
  const std::size_t first = labelled ? 1 : 0;
  const std::size_t t = header.size() - first;
  for (std::size_t j = 0; j < t; ++j) {
    if (header[first + j] != "task_" + std::to_string(j)) {
      throw InputError("accuracy matrix csv: expected header task_" + std::to_string(j) +
                       ", got '" + header[first + j] + "'");
    }
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv(line);
    if (cells.size() != t + first) {
      throw InputError("accuracy matrix csv: row " + std::to_string(rows.size()) + " has " +
                       std::to_string(cells.size()) + " cells");
    }
    std::vector<double> row;
    for (std::size_t j = 0; j < t; ++j) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cells[first + j], &used));
        if (used != cells[first + j].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw InputError("accuracy matrix csv: unparsable cell '" + cells[first + j] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() != t) {
    throw InputError("accuracy matrix csv: " + std::to_string(rows.size()) + " rows for " +
                     std::to_string(t) + " tasks");
  }
  return from_rows(rows);
}

bool AccuracyMatrix::operator==(const AccuracyMatrix& other) const {
  if (stages_ != other.stages_) return false;
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const bool a = std::isnan(cells_[i]), b = std::isnan(other.cells_[i]);
    if (a != b || (!a && cells_[i] != other.cells_[i])) return false;
  }
  return true;
}

double avg_acc(const AccuracyMatrix& a, AvgAccForm form) {
  a.require_complete();
  const std::size_t t = a.stages();
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (form == AvgAccForm::diagonal) {
      total += a(i, i);
    } else {
      double row = 0.0;
      for (std::size_t j = 0; j <= i; ++j) row += a(i, j);
      total += row / static_cast<double>(i + 1);
    }
  }
  return total / static_cast<double>(t);
}

double faa(const AccuracyMatrix& a) {
  a.require_complete();
  const std::size_t t = a.stages();
  double total = 0.0;
  for (std::size_t j = 0; j < t; ++j) total += a(t - 1, j);
  return total / static_cast<double>(t);
}

double bwt(const AccuracyMatrix& a) {
  a.require_complete();
  const std::size_t t = a.stages();
  if (t < 2) throw ContractError("bwt: needs at least two stages");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < t; ++i) total += a(t - 1, i) - a(i, i);
  return total / static_cast<double>(t - 1);
}

double avg_f(const AccuracyMatrix& a) {
  a.require_complete();
  const std::size_t t = a.stages();
  if (t < 2) throw ContractError("avg_f: needs at least two stages");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < t; ++i) {
    double best = a(0, i);
    for (std::size_t k = 1; k + 1 < t; ++k) best = std::max(best, a(k, i));
    total += best - a(t - 1, i);
  }
  return total / static_cast<double>(t - 1);
}

ClMetrics compute_metrics(const AccuracyMatrix& a, AvgAccForm form) {
  ClMetrics m;
  m.avg_acc = avg_acc(a, form);
  m.faa = faa(a);
  if (a.stages() >= 2) {
    m.bwt = bwt(a);
    m.avg_f = avg_f(a);
  }
  return m;
}

nlohmann::json to_json(const ClMetrics& m) {
  return {{"avg_acc", m.avg_acc}, {"faa", m.faa}, {"bwt", m.bwt}, {"avg_f", m.avg_f}};
}

namespace {

void check_labels(std::span<const int> preds, std::span<const int> truth, std::size_t classes) {
  if (preds.empty()) throw ContractError("metrics: empty prediction set");
  if (preds.size() != truth.size()) throw ContractError("metrics: prediction/label count mismatch");
  for (std::span<const int> s : {preds, truth}) {
    for (int v : s) {
      if (v < 0 || static_cast<std::size_t>(v) >= classes) {
        throw InputError("metrics: label " + std::to_string(v) + " outside [0, " +
                         std::to_string(classes) + ")");
      }
    }
  }
}

}  // namespace

double accuracy(std::span<const int> preds, std::span<const int> truth) {
  if (preds.empty()) throw ContractError("metrics: empty prediction set");
  if (preds.size() != truth.size()) throw ContractError("metrics: prediction/label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double macro_f1(std::span<const int> preds, std::span<const int> truth, std::size_t num_classes) {
  check_labels(preds, truth, num_classes);
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto p = static_cast<std::size_t>(preds[i]);
    const auto y = static_cast<std::size_t>(truth[i]);
    if (p == y) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    if (denom > 0.0) total += 2.0 * static_cast<double>(tp[c]) / denom;
  }
  return total / static_cast<double>(num_classes);
}

}  // namespace pcl
