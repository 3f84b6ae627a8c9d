#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geoseg/camera.hpp"

namespace geoseg {

/// Label value reserved for "no annotation".
inline constexpr std::uint8_t kIgnore = 255;

/// Per-pixel class index in [0, C) or kIgnore.
struct LabelMap {
  int width = 0, height = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int w, int h, std::uint8_t fill = kIgnore)
      : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t annotated_count() const;
  bool operator==(const LabelMap&) const = default;
};

/// Interleaved 8-bit RGB.
struct ColorImage {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  ColorImage() = default;
  ColorImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}
  bool operator==(const ColorImage&) const = default;
};

/// One registered RGB-D sample. `annotation` is what training may use (manual or
/// propagated); `truth` is the full ground truth when known (synthetic data, evaluation
/// splits) and is never read by the training losses.
struct Frame {
  std::string sequence;
  int index = 0;
  ColorImage color;
  DepthMap depth;
  RigidTransform pose;  // camera-to-world
  std::optional<LabelMap> annotation;
  std::optional<LabelMap> truth;

  std::string id() const { return sequence + "/" + std::to_string(index); }
  int width() const { return depth.width; }
  int height() const { return depth.height; }
};

}  // namespace geoseg
