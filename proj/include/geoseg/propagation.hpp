#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "geoseg/camera.hpp"
#include "geoseg/dataset.hpp"
#include "geoseg/frame.hpp"

namespace geoseg {

/// Per-pixel, per-class vote counts accumulated over warped annotations.
struct VoteGrid {
  int width = 0, height = 0, classes = 0;
  std::vector<std::uint32_t> counts;  // [pixel][class]

  VoteGrid() = default;
  VoteGrid(int w, int h, int c)
      : width(w), height(h), classes(c), counts(static_cast<std::size_t>(w) * h * c, 0) {}

  std::uint32_t& at(std::size_t pixel, int cls) { return counts[pixel * classes + cls]; }
  std::uint32_t at(std::size_t pixel, int cls) const { return counts[pixel * classes + cls]; }
  /// Adds one vote per annotated pixel of `labels`.
  void add(const LabelMap& labels);
};

/// Transfers the annotation of `source` onto the view of `target`: nearest-neighbour
/// label lookup at the occlusion-checked correspondence; everything else is kIgnore.
LabelMap warp_annotation(const Frame& source, const Frame& target, const Intrinsics& K,
                         double occl_threshold = kDefaultOcclusionThreshold);

/// Majority vote per pixel; ties are broken uniformly at random from `rng_seed`.
LabelMap merge_votes(const VoteGrid& votes, std::uint64_t rng_seed);

struct PropagationResult {
  std::map<std::string, LabelMap> labels;  // keyed by Frame::id()
  std::vector<std::string> uncovered;      // frames that received no label at all
};

/// Propagates the annotations of `labeled` onto every frame of `unlabeled`. All frames
/// must belong to one sequence. Each target frame draws its tie-break stream from
/// `rng_seed` and its own id, so the result does not depend on scheduling.
PropagationResult propagate_sequence(const std::vector<const Frame*>& labeled,
                                     const std::vector<const Frame*>& unlabeled,
                                     const Intrinsics& K, int num_classes,
                                     double occl_threshold, std::uint64_t rng_seed);

/// propagate_sequence over every training sequence of `ds`. Frames of sequences without
/// any annotated frame end up in `uncovered` with an all-ignore map.
PropagationResult propagate_dataset(const Dataset& ds, double occl_threshold, std::uint64_t rng_seed);

/// FNV-1a of a frame id, used to key per-frame random streams.
std::uint64_t stream_key(const std::string& id);

}  // namespace geoseg
