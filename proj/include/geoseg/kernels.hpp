#pragma once

// Optimized forward/backward kernels behind the tape operations. Loops are
// OpenMP-parallel over independent output elements only, so results do not depend on
// the thread count. Serial reference versions live in reference.hpp.

#include <cstdint>
#include <span>

#include "geoseg/tensor.hpp"

namespace geoseg::kernels {

struct Dims {
  int n = 1, c = 1, h = 1, w = 1;
  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
};

/// Applies GEOSEG_THREADS (if set) as the OpenMP thread cap and returns the thread count in
/// use. Throws ConfigError unless the variable is a positive integer.
int configure_threads();

/// Reflect-101 index: -1 -> 1, n -> n-2. Requires n >= 2.
inline int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

void conv2d_forward(std::span<const float> input, Dims in, std::span<const float> weight,
                    std::span<const float> bias, int out_channels, int ksize, PadMode pad,
                    std::span<float> output);

/// Accumulates (+=) into any non-empty gradient span.
void conv2d_backward(std::span<const float> input, Dims in, std::span<const float> weight,
                     int out_channels, int ksize, PadMode pad, std::span<const float> grad_out,
                     std::span<float> grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias);

/// `argmax` receives the flat input index chosen for every output element.
void maxpool2_forward(std::span<const float> input, Dims in, std::span<float> output,
                      std::span<std::int32_t> argmax);
void maxpool2_backward(std::span<const std::int32_t> argmax, std::span<const float> grad_out,
                       std::span<float> grad_input);

void upsample_nn_forward(std::span<const float> input, Dims in, std::span<float> output);
void upsample_nn_backward(std::span<const float> grad_out, Dims in, std::span<float> grad_input);

void softmax_channels_forward(std::span<const float> input, Dims in, std::span<float> output);
void softmax_channels_backward(std::span<const float> output, Dims in,
                               std::span<const float> grad_out, std::span<float> grad_input);

/// Bilinear gather from a [C, Hs, Ws] source at per-target-pixel coordinates.
/// Target pixels with `valid[p] == 0` produce zeros. Coordinates of valid pixels must
/// lie in [0, Ws-1] x [0, Hs-1].
void bilinear_forward(std::span<const float> source, int channels, int src_h, int src_w,
                      std::span<const float> u, std::span<const float> v,
                      std::span<const std::uint8_t> valid, std::span<float> output);
void bilinear_backward(std::span<const float> grad_out, int channels, int src_h, int src_w,
                       std::span<const float> u, std::span<const float> v,
                       std::span<const std::uint8_t> valid, std::span<float> grad_source);

}  // namespace geoseg::kernels
