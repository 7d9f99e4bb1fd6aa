#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>

#include "serbench/error.hpp"

namespace serbench {

/// Entry (i, j) counts utterances of true class i predicted as class j.
using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

inline ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> truth,
                                        int n_classes) {
  if (predictions.size() != truth.size()) {
    throw DataError("confusion_matrix: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(truth.size()) + " labels");
  }
  ConfusionMatrix cm = ConfusionMatrix::Zero(n_classes, n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes || predictions[i] < 0 || predictions[i] >= n_classes) {
      throw DataError("confusion_matrix: label out of range at index " + std::to_string(i));
    }
    ++cm(truth[i], predictions[i]);
  }
  return cm;
}

/// Unweighted average recall: mean over classes of cm(i,i) / row_sum(i).
/// Every class must have at least one test sample.
template <typename Derived>
double uar(const Eigen::MatrixBase<Derived>& cm) {
  const Eigen::Index n = cm.rows();
  if (n == 0 || cm.cols() != n) throw DataError("uar: confusion matrix must be square and non-empty");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto support = cm.row(i).sum();
    if (support <= 0) throw DataError("uar: class " + std::to_string(i) + " has no test samples");
    total += static_cast<double>(cm(i, i)) / static_cast<double>(support);
  }
  return total / static_cast<double>(n);
}

/// Support-weighted mean of per-class F1; undefined precision/recall/F1
/// terms count as zero.
template <typename Derived>
double weighted_f1(const Eigen::MatrixBase<Derived>& cm) {
  const Eigen::Index n = cm.rows();
  if (n == 0 || cm.cols() != n) throw DataError("weighted_f1: confusion matrix must be square");
  const auto samples = cm.sum();
  if (samples <= 0) throw DataError("weighted_f1: empty confusion matrix");
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double tp = static_cast<double>(cm(i, i));
    const double support = static_cast<double>(cm.row(i).sum());
    const double predicted = static_cast<double>(cm.col(i).sum());
    const double precision = predicted > 0.0 ? tp / predicted : 0.0;
    const double recall = support > 0.0 ? tp / support : 0.0;
    const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    total += support / static_cast<double>(samples) * f1;
  }
  return total;
}

}  // namespace serbench
