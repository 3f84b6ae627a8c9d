#pragma once

// Serial, straightforward reference kernels. They are templated on the scalar type so
// tests can run them in double precision as an independent oracle for the optimized
// kernels and as the forward model for finite-difference gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "geoseg/kernels.hpp"

namespace geoseg::reference {

using kernels::Dims;

template <typename T>
std::vector<T> conv2d(const std::vector<T>& input, Dims in, const std::vector<T>& weight,
                      const std::vector<T>& bias, int out_channels, int ksize, PadMode pad) {
  const int r = ksize / 2;
  const int ph = in.h + 2 * r, pw = in.w + 2 * r;
  // Padded copy of each input plane; zero padding leaves the border at 0.
  std::vector<T> padded(static_cast<std::size_t>(in.n) * in.c * ph * pw, T(0));
  for (int p = 0; p < in.n * in.c; ++p)
    for (int y = -r; y < in.h + r; ++y)
      for (int x = -r; x < in.w + r; ++x) {
        int sy = y, sx = x;
        if (pad == PadMode::reflect) {
          sy = kernels::reflect_index(sy, in.h);
          sx = kernels::reflect_index(sx, in.w);
        } else if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) {
          continue;
        }
        padded[(static_cast<std::size_t>(p) * ph + y + r) * pw + x + r] =
            input[(static_cast<std::size_t>(p) * in.h + sy) * in.w + sx];
      }
  std::vector<T> out(static_cast<std::size_t>(in.n) * out_channels * in.h * in.w);
  for (int b = 0; b < in.n; ++b)
    for (int co = 0; co < out_channels; ++co) {
      T* o = out.data() + (static_cast<std::size_t>(b) * out_channels + co) * in.h * in.w;
      for (std::size_t i = 0; i < static_cast<std::size_t>(in.h) * in.w; ++i) o[i] = bias[co];
      for (int ci = 0; ci < in.c; ++ci) {
        const T* src = padded.data() + (static_cast<std::size_t>(b) * in.c + ci) * ph * pw;
        for (int ky = 0; ky < ksize; ++ky)
          for (int kx = 0; kx < ksize; ++kx) {
            const T wv = weight[((static_cast<std::size_t>(co) * in.c + ci) * ksize + ky) * ksize + kx];
            for (int y = 0; y < in.h; ++y)
              for (int x = 0; x < in.w; ++x)
                o[static_cast<std::size_t>(y) * in.w + x] += wv * src[(y + ky) * pw + x + kx];
          }
      }
    }
  return out;
}

template <typename T>
std::vector<T> relu(const std::vector<T>& input) {
  std::vector<T> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
std::vector<T> maxpool2(const std::vector<T>& input, Dims in) {
  const int oh = in.h / 2, ow = in.w / 2;
  std::vector<T> out(static_cast<std::size_t>(in.n) * in.c * oh * ow);
  for (int p = 0; p < in.n * in.c; ++p)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        T best = -std::numeric_limits<T>::infinity();
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            best = std::max(best,
                            input[(static_cast<std::size_t>(p) * in.h + 2 * y + dy) * in.w +
                                  2 * x + dx]);
        out[(static_cast<std::size_t>(p) * oh + y) * ow + x] = best;
      }
  return out;
}

template <typename T>
std::vector<T> upsample_nn(const std::vector<T>& input, Dims in) {
  std::vector<T> out(input.size() * 4);
  for (int p = 0; p < in.n * in.c; ++p)
    for (int y = 0; y < 2 * in.h; ++y)
      for (int x = 0; x < 2 * in.w; ++x)
        out[(static_cast<std::size_t>(p) * 2 * in.h + y) * 2 * in.w + x] =
            input[(static_cast<std::size_t>(p) * in.h + y / 2) * in.w + x / 2];
  return out;
}

template <typename T>
std::vector<T> softmax_channels(const std::vector<T>& input, Dims in) {
  std::vector<T> out(input.size());
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  for (int b = 0; b < in.n; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t base = static_cast<std::size_t>(b) * in.c * plane + p;
      T mx = input[base];
      for (int c = 1; c < in.c; ++c) mx = std::max(mx, input[base + c * plane]);
      T z = 0;
      for (int c = 0; c < in.c; ++c) z += std::exp(input[base + c * plane] - mx);
      for (int c = 0; c < in.c; ++c)
        out[base + c * plane] = std::exp(input[base + c * plane] - mx) / z;
    }
  return out;
}

template <typename T>
std::vector<T> concat_channels(const std::vector<T>& a, Dims da, const std::vector<T>& b,
                               Dims db) {
  std::vector<T> out;
  out.reserve(a.size() + b.size());
  const std::size_t pa = static_cast<std::size_t>(da.c) * da.h * da.w;
  const std::size_t pb = static_cast<std::size_t>(db.c) * db.h * db.w;
  for (int n = 0; n < da.n; ++n) {
    out.insert(out.end(), a.begin() + n * pa, a.begin() + (n + 1) * pa);
    out.insert(out.end(), b.begin() + n * pb, b.begin() + (n + 1) * pb);
  }
  return out;
}

/// Bilinear gather; same contract as kernels::bilinear_forward.
template <typename T>
std::vector<T> bilinear_sample(const std::vector<T>& source, int channels, int src_h, int src_w,
                               const std::vector<float>& u, const std::vector<float>& v,
                               const std::vector<std::uint8_t>& valid) {
  const std::size_t npix = u.size();
  std::vector<T> out(static_cast<std::size_t>(channels) * npix, T(0));
  for (std::size_t p = 0; p < npix; ++p) {
    if (!valid[p]) continue;
    const double x = u[p], y = v[p];
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double ax = x - x0, ay = y - y0;
    for (int c = 0; c < channels; ++c) {
      T acc = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double wgt = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay);
          if (wgt == 0.0) continue;
          const int sx = x0 + dx, sy = y0 + dy;
          acc += static_cast<T>(wgt) *
                 source[(static_cast<std::size_t>(c) * src_h + sy) * src_w + sx];
        }
      out[static_cast<std::size_t>(c) * npix + p] = acc;
    }
  }
  return out;
}

}  // namespace geoseg::reference
