#pragma once

#include <vector>

#include "geoseg/camera.hpp"
#include "geoseg/frame.hpp"
#include "geoseg/segnet.hpp"
#include "geoseg/tensor.hpp"
#include "geoseg/warp.hpp"

namespace geoseg {

struct LossConfig {
  float lambda = 0.1f;               // weight of the consistency term
  std::vector<float> class_weights;  // empty = all ones
  int neighbor_count = 3;            // teacher frames per anchor
  double occl_threshold = kDefaultOcclusionThreshold;

  void validate(int num_classes) const;
  float weight(int cls) const { return class_weights.empty() ? 1.0f : class_weights[cls]; }
};

/// Probabilities are clamped to this floor before taking the log.
inline constexpr float kProbabilityFloor = 1e-7f;

struct CrossEntropy {
  Tensor loss;
  bool empty_supervision = false;
};

/// Weighted cross-entropy of `pred` ([B, C, H, W]) against one label map per batch entry.
/// Each sample contributes the mean over its annotated pixels of -w[a] log p[a]; the loss
/// is the mean over samples that have at least one annotated pixel. With no annotated
/// pixel at all the loss is zero and `empty_supervision` is set.
CrossEntropy cross_entropy(Tape& tape, const Tensor& pred, const std::vector<const LabelMap*>& targets,
                           const std::vector<float>& class_weights = {});

/// Mean over valid pixels and channels of |a - b| for [1, C, H, W] tensors; zero when no
/// pixel is valid.
Tensor masked_l1(Tape& tape, const Tensor& a, const Tensor& b, const ValidityMask& mask);

/// Consistency between the student prediction and the teacher prediction warped into the
/// student's view. The teacher is detached: no gradient reaches it.
Tensor geometric_consistency(Tape& tape, const Tensor& student_pred, const Tensor& teacher_pred,
                             const Frame& teacher_frame, const Frame& student_frame,
                             const Intrinsics& K, double occl_threshold);

/// Frames whose (possibly propagated) annotations feed the supervised term.
struct SupervisedBatch {
  std::vector<const Frame*> frames;
};

/// Anchor frame plus teacher frames from the same sequence.
struct ConsistencyGroup {
  const Frame* anchor = nullptr;
  std::vector<const Frame*> neighbors;
};

struct LossBreakdown {
  Tensor total;
  float supervised = 0;
  float consistency = 0;
  bool empty_supervision = false;
};

/// supervised + lambda * consistency. Returns `supervised` itself when lambda is zero.
Tensor combine_losses(Tape& tape, const Tensor& supervised, const Tensor& consistency, float lambda);

/// Full objective for one optimization step. Teacher predictions come from an inference
/// pass of the same network. Groups are skipped entirely when lambda is zero.
LossBreakdown total_loss(Tape& tape, const Network& net, const SupervisedBatch& supervised,
                         const std::vector<ConsistencyGroup>& consistency, const LossConfig& config,
                         const Intrinsics& K);

}  // namespace geoseg
