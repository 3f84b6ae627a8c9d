#include "geoseg/metrics.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "geoseg/error.hpp"

namespace geoseg {
namespace {

void check_pair(const LabelMap& pred, const LabelMap& truth) {
  if (pred.width != truth.width || pred.height != truth.height)
    throw ShapeError("metrics: prediction and truth extents differ");
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& truth) {
  check_pair(pred, truth);
  for (std::size_t p = 0; p < truth.labels.size(); ++p) {
    const auto t = truth.labels[p];
    if (t == kIgnore) continue;
    const auto q = pred.labels[p];
    if (t >= classes_ || q >= classes_)
      throw ShapeError("confusion matrix: label outside [0, " + std::to_string(classes_) + ")");
    ++counts_[t * classes_ + q];
  }
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

double accuracy(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths) {
  if (preds.size() != truths.size()) throw ShapeError("accuracy: image counts differ");
  double sum = 0.0;
  std::size_t images = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check_pair(preds[i], truths[i]);
    std::size_t valid = 0, correct = 0;
    for (std::size_t p = 0; p < truths[i].labels.size(); ++p) {
      if (truths[i].labels[p] == kIgnore) continue;
      ++valid;
      correct += preds[i].labels[p] == truths[i].labels[p];
    }
    if (!valid) continue;
    sum += static_cast<double>(correct) / static_cast<double>(valid);
    ++images;
  }
  if (!images) throw Error("accuracy: no image has a valid annotation");
  return sum / static_cast<double>(images);
}

IoUReport iou(const ConfusionMatrix& cm) {
  const int n = cm.classes();
  IoUReport report;
  report.per_class.assign(n, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int k = 0; k < n; ++k) {
      if (k == c) continue;
      fn += cm.at(c, k);
      fp += cm.at(k, c);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (!denom) continue;
    report.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += report.per_class[c];
    ++present;
  }
  report.mean = present ? sum / present : 0.0;
  return report;
}

IoUReport iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths,
              int num_classes) {
  if (preds.size() != truths.size()) throw ShapeError("iou: image counts differ");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], truths[i]);
  return iou(cm);
}

}  // namespace geoseg
