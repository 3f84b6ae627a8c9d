#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geoseg/frame.hpp"
#include "geoseg/tensor.hpp"

namespace geoseg {

struct NetConfig {
  int levels = 3;         // resolution levels of the encoder (and decoder)
  int base_features = 8;  // channels at the first level, doubled per level
  int num_classes = 4;
  int height = 64, width = 64;

  /// Throws ConfigError on invalid values or extents not divisible by 2^(levels-1).
  void validate() const;
  int width_at(int level) const { return base_features << (level - 1); }  // level is 1-based
  bool operator==(const NetConfig&) const = default;
};

struct NamedParameter {
  std::string name;
  Tensor value;
};

/// U-Net style encoder/decoder. Each encoder level is two reflect-padded 3x3 conv + ReLU,
/// followed by 2x2 max-pooling except at the bottleneck. Each decoder level upsamples
/// (nearest neighbour), applies a 3x3 conv + ReLU, concatenates the matching encoder
/// features and applies two more 3x3 conv + ReLU. A 1x1 conv and a channel softmax
/// produce the class distribution.
class Network {
 public:
  Network() = default;
  /// He-uniform weights, zero biases.
  static Network build(const NetConfig& config, std::uint64_t init_seed);

  const NetConfig& config() const noexcept { return config_; }
  std::vector<NamedParameter>& parameters() noexcept { return params_; }
  const std::vector<NamedParameter>& parameters() const noexcept { return params_; }
  const Tensor& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Image batch [B, 3, H, W] -> probabilities [B, C, H, W].
  Tensor forward(Tape& tape, const Tensor& images) const;

  /// Deep copy with fresh parameter storage.
  Network clone() const;
  void zero_grad();

 private:
  NetConfig config_;
  std::vector<NamedParameter> params_;
};

/// Closed-form parameter count of the architecture for `config`.
std::size_t expected_parameter_count(const NetConfig& config);

/// Colour frames as a normalized [B, 3, H, W] tensor (x / 255 - 0.5).
Tensor image_tensor(const std::vector<const Frame*>& frames);

/// Per-pixel argmax of a [1, C, H, W] (or batch element `index` of [B, C, H, W]) tensor.
LabelMap argmax_labels(const Tensor& probabilities, int index = 0);

}  // namespace geoseg
