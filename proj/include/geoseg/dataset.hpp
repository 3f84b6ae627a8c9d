#pragma once

#include <map>
#include <string>
#include <vector>

#include "geoseg/camera.hpp"
#include "geoseg/frame.hpp"

namespace geoseg {

enum class Split { train, validation, test, generalization };

const char* to_string(Split split);
Split split_from_string(const std::string& name);

/// Registered RGB-D sequences split for semi-supervised training. Training frames with an
/// annotation form the labeled set S, the rest the unlabeled set U. Frames of the other
/// splits carry their ground truth as annotation and are only used for evaluation.
struct Dataset {
  Intrinsics intrinsics;
  std::vector<std::string> class_names;
  std::vector<Frame> train, validation, test, generalization;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<Frame>& split(Split s);
  const std::vector<Frame>& split(Split s) const;

  std::vector<const Frame*> labeled() const;
  std::vector<const Frame*> unlabeled() const;
  /// Training frames grouped by sequence id, in frame order.
  std::map<std::string, std::vector<const Frame*>> train_sequences() const;
};

}  // namespace geoseg
