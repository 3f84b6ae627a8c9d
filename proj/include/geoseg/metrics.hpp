#pragma once

#include <cstdint>
#include <vector>

#include "geoseg/frame.hpp"

namespace geoseg {

/// counts(i, j): pixels with ground truth i predicted as j. Ignored pixels are excluded.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(const LabelMap& pred, const LabelMap& truth);
  std::uint64_t at(int truth, int pred) const { return counts_[truth * classes_ + pred]; }
  int classes() const noexcept { return classes_; }
  std::uint64_t total() const;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
};

/// Mean over images of (correct / annotated); images without annotated pixels are skipped.
/// Throws Error when no image has an annotated pixel.
double accuracy(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths);

struct IoUReport {
  std::vector<double> per_class;  // NaN for classes absent from prediction and truth
  double mean = 0;                // over classes that are present
};

/// Dataset-wide IoU per class, TP / (TP + FP + FN), from the aggregated confusion matrix.
IoUReport iou(const ConfusionMatrix& cm);
IoUReport iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths,
              int num_classes);

}  // namespace geoseg
