#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geoseg/dataset.hpp"
#include "geoseg/losses.hpp"
#include "geoseg/metrics.hpp"
#include "geoseg/segnet.hpp"

namespace geoseg {

struct TrainConfig {
  float lambda = 0.1f;
  float lr = 1e-4f;
  int supervised_batch = 4;
  int consistency_batch = 1;
  int neighbor_count = 3;
  int pretrain_steps = 200;
  int joint_steps = 200;
  int validate_every = 50;
  std::uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  double occl_threshold = kDefaultOcclusionThreshold;
  std::vector<float> class_weights;  // empty = uniform
  bool require_pretrain = true;      // train_joint refuses an un-pretrained state

  void validate() const;
  LossConfig loss_config() const;
};

/// Network parameters, Adam moments and model-selection bookkeeping.
struct TrainState {
  Network net;
  std::vector<std::vector<float>> m, v;  // per parameter, same order as net.parameters()
  std::uint64_t step = 0;                // optimization steps taken (both phases)
  std::uint64_t adam_steps = 0;          // bias-correction counter
  bool pretrained = false;
  Network best;
  double best_accuracy = -1.0;
  std::uint64_t best_step = 0;

  static TrainState fresh(const NetConfig& config, std::uint64_t init_seed);
};

/// One bias-corrected Adam update from the gradients currently stored on the parameters.
/// Throws TrainingError (leaving the state untouched) when a gradient is not finite.
void adam_step(TrainState& state, const TrainConfig& config);

/// Training frames in the form the optimizer consumes.
struct TrainingData {
  Intrinsics intrinsics;
  int num_classes = 0;
  std::vector<Frame> frames;      // training frames; annotation = manual or propagated
  std::vector<Frame> validation;  // annotated validation views
  std::vector<std::size_t> supervised;  // indices of frames with >= 1 annotated pixel
  std::vector<std::size_t> anchors;     // frames without manual annotation
  std::map<std::string, std::vector<std::size_t>> sequences;

  /// Builds the training view of `ds`. `propagated` (keyed by frame id) fills in the
  /// annotation of unlabeled frames when given; labeled frames keep their own.
  static TrainingData from(const Dataset& ds, const std::map<std::string, LabelMap>* propagated);
};

struct LogRecord {
  std::uint64_t step = 0;
  std::string phase;
  float supervised = 0, consistency = 0, total = 0;
  std::optional<double> val_accuracy, val_iou;
};
using LogSink = std::function<void(const LogRecord&)>;

struct Evaluation {
  double accuracy = 0;
  IoUReport iou;
  std::vector<std::uint64_t> predicted_histogram;  // over annotated pixels
  std::vector<std::uint64_t> truth_histogram;
};

/// Argmax predictions for `frames`.
std::vector<LabelMap> predict(const Network& net, const std::vector<const Frame*>& frames);
/// Accuracy and IoU of `net` against the frames' annotations.
Evaluation evaluate(const Network& net, const std::vector<const Frame*>& frames, int num_classes);

/// Empty when every class present in the truth is predicted on at least 1% of the
/// annotated pixels; otherwise a message describing the single-class collapse.
std::optional<std::string> detect_collapse(const Evaluation& eval);

/// Supervised-only steps until `state.step == config.pretrain_steps` (or `max_steps`
/// steps, whichever comes first).
void pretrain(TrainState& state, const TrainingData& data, const TrainConfig& config,
              const LogSink& sink = {}, std::optional<std::uint64_t> max_steps = std::nullopt);

/// Joint steps on L_S + lambda * L_G until `state.step == pretrain_steps + joint_steps`.
void train_joint(TrainState& state, const TrainingData& data, const TrainConfig& config,
                 const LogSink& sink = {}, std::optional<std::uint64_t> max_steps = std::nullopt);

/// Validates the current parameters and keeps the best snapshot.
Evaluation validate_and_select(TrainState& state, const TrainingData& data);

}  // namespace geoseg
