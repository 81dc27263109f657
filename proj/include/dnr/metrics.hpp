// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dnr/error.hpp"

namespace dnr {

inline double accuracy(std::span<const int> preds, std::span<const int> truth) {
  require(preds.size() == truth.size(), "accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                                            std::to_string(truth.size()) + " labels");
  require(!truth.empty(), "accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Support-weighted mean of per-class F1. A class with no true positives
/// (including one never predicted and never present) scores F1 = 0.
inline double weighted_f1(std::span<const int> preds, std::span<const int> truth, std::size_t num_classes) {
  require(preds.size() == truth.size(), "weighted_f1: " + std::to_string(preds.size()) +
                                            " predictions vs " + std::to_string(truth.size()) + " labels");
  require(!truth.empty(), "weighted_f1: empty input");
  std::vector<std::size_t> tp(num_classes), predicted(num_classes), support(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(preds[i] >= 0 && static_cast<std::size_t>(preds[i]) < num_classes &&
                truth[i] >= 0 && static_cast<std::size_t>(truth[i]) < num_classes,
            "weighted_f1: label out of range");
    ++predicted[static_cast<std::size_t>(preds[i])];
    ++support[static_cast<std::size_t>(truth[i])];
    if (preds[i] == truth[i]) ++tp[static_cast<std::size_t>(truth[i])];
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (tp[c] == 0) continue;
    // F1 = 2 tp / (predicted + support)
    const double f1 = 2.0 * static_cast<double>(tp[c]) / static_cast<double>(predicted[c] + support[c]);
    total += static_cast<double>(support[c]) * f1;
  }
  return total / static_cast<double>(truth.size());
}

}  // namespace dnr
