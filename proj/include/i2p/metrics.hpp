#pragma once

#include "i2p/types.hpp"

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace i2p::metrics {

/// Row = true class, column = predicted class.
class Confusion {
 public:
  explicit Confusion(int classes) : classes_(classes), m_(std::size_t(classes) * classes, 0) {
    if (classes < 1) throw InvalidInput("confusion matrix needs at least one class");
  }

  void add(int truth, int pred, std::int64_t count = 1) {
    if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_)
      throw InvalidInput("confusion matrix: class id out of range");
    m_[std::size_t(truth) * classes_ + pred] += count;
  }

  std::int64_t at(int truth, int pred) const { return m_[std::size_t(truth) * classes_ + pred]; }
  int classes() const { return classes_; }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (std::int64_t v : m_) t += v;
    return t;
  }

 private:
  int classes_;
  std::vector<std::int64_t> m_;
};

inline double top1(const Confusion& c) {
  const std::int64_t n = c.total();
  if (n == 0) throw InvalidInput("top1: empty confusion matrix");
  std::int64_t hit = 0;
  for (int k = 0; k < c.classes(); ++k) hit += c.at(k, k);
  return double(hit) / double(n);
}

/// Intersection-over-union TP/(TP+FP+FN) per class; classes whose union is
/// zero (never true and never predicted) carry no value.
inline std::vector<std::optional<double>> per_class_iou(const Confusion& c) {
  std::vector<std::optional<double>> iou(static_cast<std::size_t>(c.classes()));
  for (int k = 0; k < c.classes(); ++k) {
    const std::int64_t tp = c.at(k, k);
    std::int64_t fp = 0, fn = 0;
    for (int j = 0; j < c.classes(); ++j) {
      if (j == k) continue;
      fp += c.at(j, k);
      fn += c.at(k, j);
    }
    const std::int64_t uni = tp + fp + fn;
    if (uni > 0) iou[static_cast<std::size_t>(k)] = double(tp) / double(uni);
  }
  return iou;
}

/// Mean IoU over the classes that have a defined value.
inline double miou(const Confusion& c) {
  const auto iou = per_class_iou(c);
  double sum = 0.0;
  int n = 0;
  for (const auto& v : iou)
    if (v) {
      sum += *v;
      ++n;
    }
  if (n == 0) throw InvalidInput("miou: all classes have zero union");
  return sum / n;
}

struct MetricReport {
  double top1 = 0.0;
  double miou = 0.0;                                 // segmentation only
  std::vector<std::optional<double>> per_class_iou;  // empty for classification
  std::vector<double> loss_curve;                    // mean train loss per epoch
  std::vector<double> metric_curve;                  // val top-1 or mIoU per epoch
  std::uint64_t seed = 0;
  std::string regime;
  double wall_time = 0.0;  // seconds
  bool is_seg = false;
};

std::string report_text(const MetricReport& r);

/// Per-epoch CSV: epoch, train loss, validation metric. Excludes wall time so
/// the file is bitwise reproducible.
std::string report_csv(const MetricReport& r);

}  // namespace i2p::metrics
