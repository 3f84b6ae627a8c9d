#include "geoseg/kernels.hpp"

#include <omp.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include "geoseg/error.hpp"

namespace geoseg::kernels {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Column buffer for one image: rows are (ci, ky, kx), columns are output pixels.
void im2col(const float* image, int channels, int h, int w, int ksize, PadMode pad,
            float* col) {
  const int r = ksize / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < channels; ++ci) {
    const float* src = image + ci * plane;
    for (int ky = 0; ky < ksize; ++ky)
      for (int kx = 0; kx < ksize; ++kx) {
        float* dst = col + ((static_cast<std::size_t>(ci) * ksize + ky) * ksize + kx) * plane;
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - r;
          if (pad == PadMode::reflect) {
            sy = reflect_index(sy, h);
          } else if (sy < 0 || sy >= h) {
            std::fill(dst + y * w, dst + (y + 1) * w, 0.0f);
            continue;
          }
          const float* row = src + static_cast<std::size_t>(sy) * w;
          float* out = dst + static_cast<std::size_t>(y) * w;
          const int dx = kx - r;
          // interior columns are a shifted copy
          const int lo = std::max(0, -dx), hi = std::min(w, w - dx);
          for (int x = lo; x < hi; ++x) out[x] = row[x + dx];
          for (int x = 0; x < lo; ++x)
            out[x] = pad == PadMode::reflect ? row[reflect_index(x + dx, w)] : 0.0f;
          for (int x = hi; x < w; ++x)
            out[x] = pad == PadMode::reflect ? row[reflect_index(x + dx, w)] : 0.0f;
        }
      }
  }
}

// Adjoint of im2col: scatters column gradients back onto the (reflected) source pixels.
void col2im_add(const float* col, int channels, int h, int w, int ksize, PadMode pad,
                float* image_grad) {
  const int r = ksize / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < channels; ++ci) {
    float* dst = image_grad + ci * plane;
    for (int ky = 0; ky < ksize; ++ky)
      for (int kx = 0; kx < ksize; ++kx) {
        const float* src =
            col + ((static_cast<std::size_t>(ci) * ksize + ky) * ksize + kx) * plane;
        for (int y = 0; y < h; ++y) {
          int sy = y + ky - r;
          if (pad == PadMode::reflect) {
            sy = reflect_index(sy, h);
          } else if (sy < 0 || sy >= h) {
            continue;
          }
          float* row = dst + static_cast<std::size_t>(sy) * w;
          const float* g = src + static_cast<std::size_t>(y) * w;
          const int dx = kx - r;
          const int lo = std::max(0, -dx), hi = std::min(w, w - dx);
          for (int x = lo; x < hi; ++x) row[x + dx] += g[x];
          if (pad == PadMode::reflect) {
            for (int x = 0; x < lo; ++x) row[reflect_index(x + dx, w)] += g[x];
            for (int x = hi; x < w; ++x) row[reflect_index(x + dx, w)] += g[x];
          }
        }
      }
  }
}

}  // namespace

int configure_threads() {
  if (const char* env = std::getenv("GEOSEG_THREADS")) {
    int cap = 0;
    const std::string text(env);
    std::size_t used = 0;
    try {
      cap = std::stoi(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size() || cap < 1)
      throw ConfigError("GEOSEG_THREADS must be a positive integer, got '" + text + "'");
    omp_set_num_threads(cap);
  }
  Eigen::setNbThreads(1);
  return omp_get_max_threads();
}

void conv2d_forward(std::span<const float> input, Dims in, std::span<const float> weight,
                    std::span<const float> bias, int out_channels, int ksize, PadMode pad,
                    std::span<float> output) {
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  const int k = in.c * ksize * ksize;
  ConstMap wmat(weight.data(), out_channels, k);
  const Eigen::Map<const Eigen::VectorXf> bvec(bias.data(), out_channels);

#pragma omp parallel
  {
    FloatBuffer col(ksize == 1 ? 0 : static_cast<std::size_t>(k) * plane);
#pragma omp for schedule(static)
    for (int b = 0; b < in.n; ++b) {
      const float* image = input.data() + static_cast<std::size_t>(b) * in.c * plane;
      const float* cols = image;
      if (ksize != 1) {
        im2col(image, in.c, in.h, in.w, ksize, pad, col.data());
        cols = col.data();
      }
      MutMap out(output.data() + static_cast<std::size_t>(b) * out_channels * plane,
                 out_channels, static_cast<Eigen::Index>(plane));
      out.noalias() = wmat * ConstMap(cols, k, static_cast<Eigen::Index>(plane));
      out.colwise() += bvec;
    }
  }
}

void conv2d_backward(std::span<const float> input, Dims in, std::span<const float> weight,
                     int out_channels, int ksize, PadMode pad, std::span<const float> grad_out,
                     std::span<float> grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias) {
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  const int k = in.c * ksize * ksize;
  ConstMap wmat(weight.data(), out_channels, k);
  const bool want_w = !grad_weight.empty();
  const bool want_b = !grad_bias.empty();
  const bool want_x = !grad_input.empty();

  // Per-image weight/bias partials are reduced serially in batch order afterwards so the
  // result does not depend on the thread schedule.
  FloatBuffer wpart(want_w ? static_cast<std::size_t>(in.n) * out_channels * k : 0);
  FloatBuffer bpart(want_b ? static_cast<std::size_t>(in.n) * out_channels : 0);

#pragma omp parallel
  {
    FloatBuffer col(ksize == 1 ? 0 : static_cast<std::size_t>(k) * plane);
    FloatBuffer gcol(want_x && ksize != 1 ? static_cast<std::size_t>(k) * plane : 0);
#pragma omp for schedule(static)
    for (int b = 0; b < in.n; ++b) {
      const float* image = input.data() + static_cast<std::size_t>(b) * in.c * plane;
      ConstMap gout(grad_out.data() + static_cast<std::size_t>(b) * out_channels * plane,
                    out_channels, static_cast<Eigen::Index>(plane));
      if (want_w) {
        const float* cols = image;
        if (ksize != 1) {
          im2col(image, in.c, in.h, in.w, ksize, pad, col.data());
          cols = col.data();
        }
        MutMap gw(wpart.data() + static_cast<std::size_t>(b) * out_channels * k, out_channels,
                  k);
        gw.noalias() = gout * ConstMap(cols, k, static_cast<Eigen::Index>(plane)).transpose();
      }
      if (want_b) {
        Eigen::Map<Eigen::VectorXf> gb(bpart.data() + static_cast<std::size_t>(b) * out_channels,
                                       out_channels);
        gb = gout.rowwise().sum();
      }
      if (want_x) {
        float* gimg = grad_input.data() + static_cast<std::size_t>(b) * in.c * plane;
        if (ksize == 1) {
          MutMap gx(gimg, in.c, static_cast<Eigen::Index>(plane));
          gx.noalias() += wmat.transpose() * gout;
        } else {
          MutMap gc(gcol.data(), k, static_cast<Eigen::Index>(plane));
          gc.noalias() = wmat.transpose() * gout;
          col2im_add(gcol.data(), in.c, in.h, in.w, ksize, pad, gimg);
        }
      }
    }
  }
  for (int b = 0; b < in.n; ++b) {
    if (want_w) {
      const float* src = wpart.data() + static_cast<std::size_t>(b) * out_channels * k;
      for (std::size_t i = 0; i < grad_weight.size(); ++i) grad_weight[i] += src[i];
    }
    if (want_b) {
      const float* src = bpart.data() + static_cast<std::size_t>(b) * out_channels;
      for (int i = 0; i < out_channels; ++i) grad_bias[i] += src[i];
    }
  }
}

void maxpool2_forward(std::span<const float> input, Dims in, std::span<float> output,
                      std::span<std::int32_t> argmax) {
  const int oh = in.h / 2, ow = in.w / 2;
  const int planes = in.n * in.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const std::size_t ibase = static_cast<std::size_t>(p) * in.h * in.w;
    const std::size_t obase = static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        std::size_t best = ibase + static_cast<std::size_t>(2 * y) * in.w + 2 * x;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ibase + static_cast<std::size_t>(2 * y + dy) * in.w + 2 * x + dx;
            if (input[idx] > input[best]) best = idx;  // strict: earlier position wins ties
          }
        output[obase + static_cast<std::size_t>(y) * ow + x] = input[best];
        argmax[obase + static_cast<std::size_t>(y) * ow + x] = static_cast<std::int32_t>(best);
      }
  }
}

void maxpool2_backward(std::span<const std::int32_t> argmax, std::span<const float> grad_out,
                       std::span<float> grad_input) {
  // Windows do not overlap, so every input index receives at most one contribution.
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(grad_out.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) grad_input[argmax[i]] += grad_out[i];
}

void upsample_nn_forward(std::span<const float> input, Dims in, std::span<float> output) {
  const int planes = in.n * in.c;
  const int ow = 2 * in.w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const float* src = input.data() + static_cast<std::size_t>(p) * in.h * in.w;
    float* dst = output.data() + static_cast<std::size_t>(p) * 4 * in.h * in.w;
    for (int y = 0; y < in.h; ++y) {
      float* r0 = dst + static_cast<std::size_t>(2 * y) * ow;
      float* r1 = r0 + ow;
      for (int x = 0; x < in.w; ++x) {
        const float v = src[y * in.w + x];
        r0[2 * x] = r0[2 * x + 1] = r1[2 * x] = r1[2 * x + 1] = v;
      }
    }
  }
}

void upsample_nn_backward(std::span<const float> grad_out, Dims in, std::span<float> grad_input) {
  const int planes = in.n * in.c;
  const int ow = 2 * in.w;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const float* src = grad_out.data() + static_cast<std::size_t>(p) * 4 * in.h * in.w;
    float* dst = grad_input.data() + static_cast<std::size_t>(p) * in.h * in.w;
    for (int y = 0; y < in.h; ++y) {
      const float* r0 = src + static_cast<std::size_t>(2 * y) * ow;
      const float* r1 = r0 + ow;
      for (int x = 0; x < in.w; ++x)
        dst[y * in.w + x] += (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
    }
  }
}

void softmax_channels_forward(std::span<const float> input, Dims in, std::span<float> output) {
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  for (int b = 0; b < in.n; ++b) {
    const float* x = input.data() + static_cast<std::size_t>(b) * in.c * plane;
    float* y = output.data() + static_cast<std::size_t>(b) * in.c * plane;
    const std::ptrdiff_t np = static_cast<std::ptrdiff_t>(plane);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < np; ++p) {
      float mx = x[p];
      for (int c = 1; c < in.c; ++c) mx = std::max(mx, x[c * plane + p]);
      float z = 0.0f;
      for (int c = 0; c < in.c; ++c) {
        const float e = std::exp(x[c * plane + p] - mx);
        y[c * plane + p] = e;
        z += e;
      }
      const float inv = 1.0f / z;
      for (int c = 0; c < in.c; ++c) y[c * plane + p] *= inv;
    }
  }
}

void softmax_channels_backward(std::span<const float> output, Dims in,
                               std::span<const float> grad_out, std::span<float> grad_input) {
  const std::size_t plane = static_cast<std::size_t>(in.h) * in.w;
  for (int b = 0; b < in.n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * in.c * plane;
    const float* y = output.data() + base;
    const float* g = grad_out.data() + base;
    float* gi = grad_input.data() + base;
    const std::ptrdiff_t np = static_cast<std::ptrdiff_t>(plane);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < np; ++p) {
      float dot = 0.0f;
      for (int c = 0; c < in.c; ++c) dot += g[c * plane + p] * y[c * plane + p];
      for (int c = 0; c < in.c; ++c) gi[c * plane + p] += y[c * plane + p] * (g[c * plane + p] - dot);
    }
  }
}

void bilinear_forward(std::span<const float> source, int channels, int src_h, int src_w,
                      std::span<const float> u, std::span<const float> v,
                      std::span<const std::uint8_t> valid, std::span<float> output) {
  const std::ptrdiff_t npix = static_cast<std::ptrdiff_t>(u.size());
  const std::size_t splane = static_cast<std::size_t>(src_h) * src_w;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < npix; ++p) {
    if (!valid[p]) {
      for (int c = 0; c < channels; ++c) output[c * npix + p] = 0.0f;
      continue;
    }
    const int x0 = static_cast<int>(std::floor(u[p]));
    const int y0 = static_cast<int>(std::floor(v[p]));
    const float ax = u[p] - static_cast<float>(x0), ay = v[p] - static_cast<float>(y0);
    // Neighbours beyond the last row/column only occur with zero weight.
    const int x1 = std::min(x0 + 1, src_w - 1), y1 = std::min(y0 + 1, src_h - 1);
    const float w00 = (1 - ax) * (1 - ay), w01 = ax * (1 - ay);
    const float w10 = (1 - ax) * ay, w11 = ax * ay;
    const std::size_t i00 = static_cast<std::size_t>(y0) * src_w + x0;
    const std::size_t i01 = static_cast<std::size_t>(y0) * src_w + x1;
    const std::size_t i10 = static_cast<std::size_t>(y1) * src_w + x0;
    const std::size_t i11 = static_cast<std::size_t>(y1) * src_w + x1;
    for (int c = 0; c < channels; ++c) {
      const float* s = source.data() + c * splane;
      output[c * npix + p] = w00 * s[i00] + w01 * s[i01] + w10 * s[i10] + w11 * s[i11];
    }
  }
}

void bilinear_backward(std::span<const float> grad_out, int channels, int src_h, int src_w,
                       std::span<const float> u, std::span<const float> v,
                       std::span<const std::uint8_t> valid, std::span<float> grad_source) {
  // Scatter: several target pixels may hit the same source pixel, so parallelize over
  // channels and keep the pixel loop serial.
  const std::size_t npix = u.size();
  const std::size_t splane = static_cast<std::size_t>(src_h) * src_w;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    float* gs = grad_source.data() + c * splane;
    const float* g = grad_out.data() + c * npix;
    for (std::size_t p = 0; p < npix; ++p) {
      if (!valid[p]) continue;
      const int x0 = static_cast<int>(std::floor(u[p]));
      const int y0 = static_cast<int>(std::floor(v[p]));
      const float ax = u[p] - static_cast<float>(x0), ay = v[p] - static_cast<float>(y0);
      const int x1 = std::min(x0 + 1, src_w - 1), y1 = std::min(y0 + 1, src_h - 1);
      gs[static_cast<std::size_t>(y0) * src_w + x0] += (1 - ax) * (1 - ay) * g[p];
      gs[static_cast<std::size_t>(y0) * src_w + x1] += ax * (1 - ay) * g[p];
      gs[static_cast<std::size_t>(y1) * src_w + x0] += (1 - ax) * ay * g[p];
      gs[static_cast<std::size_t>(y1) * src_w + x1] += ax * ay * g[p];
    }
  }
}

}  // namespace geoseg::kernels
