#pragma once

#include <cstdint>
#include <vector>

#include "geoseg/camera.hpp"
#include "geoseg/frame.hpp"
#include "geoseg/tensor.hpp"

namespace geoseg {

/// Per-pixel validity flags (1 = contributes to the consistency loss).
struct ValidityMask {
  int width = 0, height = 0;
  std::vector<std::uint8_t> valid;

  std::size_t count() const;
};

/// A warped probability map: tensor [1, C, H, W] plus the pixels that carry data.
struct WarpResult {
  Tensor probabilities;
  ValidityMask mask;
};

/// Bilinear gather of `maps` ([1, C, Hs, Ws]) at the field's coordinates. Recorded on
/// `tape` with gradients to `maps` only; invalid pixels are exact zeros.
WarpResult bilinear_sample(Tape& tape, const Tensor& maps, const CorrespondenceField& coords);

/// Warps a prediction made for `source_frame` into the view of `target_frame`.
WarpResult warp_probabilities(Tape& tape, const Tensor& source_pred, const Frame& target_frame,
                              const Frame& source_frame, const Intrinsics& K,
                              double occl_threshold = kDefaultOcclusionThreshold);

/// Correspondence from target pixels into the source frame. Rejects frames of different
/// sequences, which share no registration.
CorrespondenceField frame_correspondence(const Frame& target_frame, const Frame& source_frame,
                                         const Intrinsics& K, double occl_threshold);

}  // namespace geoseg
