#pragma once

// Direct TP/FP/FN counting, one pass per class, written without reference to
// the library's confusion-matrix code.

#include <optional>
#include <vector>

namespace pcdf::oracle {

struct ClassCounts {
  double precision, recall, f1;
  std::size_t support;
};

struct Metrics {
  double accuracy = 0;
  double macro_f1 = 0;
  std::size_t invalid = 0;
  std::vector<ClassCounts> per_class;
};

inline Metrics brute_metrics(const std::vector<std::optional<std::size_t>>& pred, const std::vector<std::size_t>& gold,
                             std::size_t k) {
  Metrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (!pred[i]) ++m.invalid;
    if (pred[i] && *pred[i] == gold[i]) ++correct;
  }
  m.accuracy = double(correct) / double(gold.size());
  double f1_sum = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool predicted_c = pred[i].has_value() && *pred[i] == c;
      if (predicted_c && gold[i] == c) ++tp;
      if (predicted_c && gold[i] != c) ++fp;
      if (!predicted_c && gold[i] == c) ++fn;
    }
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    m.per_class.push_back({p, r, f, tp + fn});
    f1_sum += f;
  }
  m.macro_f1 = f1_sum / double(k);
  return m;
}

}  // namespace pcdf::oracle
