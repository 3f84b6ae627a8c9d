#include <cmath>

#include "doctest.h"
#include "geoseg/error.hpp"
#include "geoseg/rng.hpp"
#include "geoseg/synth.hpp"
#include "geoseg/warp.hpp"
#include "oracles.hpp"

using namespace geoseg;

namespace {

CorrespondenceField random_field(Rng& rng, int w, int h, int src_w, int src_h) {
  CorrespondenceField f;
  f.width = w;
  f.height = h;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  f.u.resize(n);
  f.v.resize(n);
  f.depth.assign(n, 1.0f);
  f.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    f.u[i] = static_cast<float>(rng.uniform(0, src_w - 1));
    f.v[i] = static_cast<float>(rng.uniform(0, src_h - 1));
    f.valid[i] = rng.uniform() < 0.7;
  }
  return f;
}

// Bilinear interpolation written out from the four corner weights.
double bilinear(const std::vector<double>& plane, int w, int h, double u, double v) {
  const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
  const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double a = u - x0, b = v - y0;
  return (1 - a) * (1 - b) * plane[y0 * w + x0] + a * (1 - b) * plane[y0 * w + x1] +
         (1 - a) * b * plane[y1 * w + x0] + a * b * plane[y1 * w + x1];
}

}  // namespace

TEST_CASE("bilinear sampling matches the corner-weight formula; invalid pixels are zero") {
  Rng rng(1);
  const int c = 3, sh = 5, sw = 7;
  std::vector<float> maps(c * sh * sw);
  for (auto& x : maps) x = static_cast<float>(rng.uniform());
  const CorrespondenceField f = random_field(rng, 4, 6, sw, sh);
  Tape tape = Tape::inference();
  const WarpResult r = bilinear_sample(tape, Tensor::from({1, c, sh, sw}, maps), f);
  CHECK(r.probabilities.shape() == Shape{1, c, 6, 4});
  CHECK(r.mask.valid == f.valid);
  for (int ch = 0; ch < c; ++ch) {
    const std::vector<double> plane(maps.begin() + ch * sh * sw, maps.begin() + (ch + 1) * sh * sw);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      const float got = r.probabilities.data()[ch * f.u.size() + i];
      if (!f.valid[i]) {
        CHECK(got == 0.0f);
        continue;
      }
      CHECK(got == doctest::Approx(bilinear(plane, sw, sh, f.u[i], f.v[i])).epsilon(1e-6));
    }
  }
}

TEST_CASE("bilinear sampling gradient equals central differences") {
  Rng rng(2);
  const int c = 2, sh = 4, sw = 5;
  std::vector<float> maps(c * sh * sw);
  for (auto& x : maps) x = static_cast<float>(rng.uniform());
  const CorrespondenceField f = random_field(rng, 3, 3, sw, sh);
  std::vector<double> g(c * 9);
  for (auto& x : g) x = rng.uniform(-1, 1);
  Tensor m = Tensor::from({1, c, sh, sw}, maps, true);
  Tape tape;
  const WarpResult r = bilinear_sample(tape, m, f);
  tape.backward(tape.sum(tape.mul(r.probabilities, Tensor::from({1, c, 3, 3}, std::vector<float>(g.begin(), g.end())))));
  const auto loss = [&](const std::vector<double>& x) {
    double s = 0;
    for (int ch = 0; ch < c; ++ch) {
      const std::vector<double> plane(x.begin() + ch * sh * sw, x.begin() + (ch + 1) * sh * sw);
      for (std::size_t i = 0; i < 9; ++i)
        if (f.valid[i]) s += g[ch * 9 + i] * bilinear(plane, sw, sh, f.u[i], f.v[i]);
    }
    return s;
  };
  const auto num = oracle::numeric_gradient(loss, std::vector<double>(maps.begin(), maps.end()));
  for (std::size_t i = 0; i < num.size(); ++i) CHECK(m.grad()[i] == doctest::Approx(num[i]).epsilon(1e-4));
}

TEST_CASE("coordinates outside the source are rejected") {
  CorrespondenceField f;
  f.width = f.height = 1;
  f.u = {4.5f};
  f.v = {0.0f};
  f.depth = {1.0f};
  f.valid = {1};
  Tape tape = Tape::inference();
  CHECK_THROWS_AS(bilinear_sample(tape, Tensor::zeros({1, 2, 3, 4}), f), ShapeError);
  f.valid = {0};
  CHECK_NOTHROW(bilinear_sample(tape, Tensor::zeros({1, 2, 3, 4}), f));
  CHECK_THROWS_AS(bilinear_sample(tape, Tensor::zeros({2, 2, 3, 4}), f), ShapeError);
}

TEST_CASE("warped distributions still sum to one at valid pixels") {
  SceneSpec spec = make_room_scene("w", 5, 10);
  spec.intrinsics = {27.5, 27.5, 15.5, 15.5, 32, 32};
  const Frame a = render_frame(spec, 2), b = render_frame(spec, 5);
  Rng rng(3);
  std::vector<float> logits(4 * 32 * 32);
  for (auto& x : logits) x = static_cast<float>(rng.uniform(-5, 5));
  Tape tape = Tape::inference();
  const Tensor p = tape.softmax_channels(Tensor::from({1, 4, 32, 32}, logits));
  const WarpResult w = warp_probabilities(tape, p, a, b, spec.intrinsics);
  CHECK(w.mask.count() > 100);
  for (std::size_t q = 0; q < 32 * 32; ++q) {
    if (!w.mask.valid[q]) continue;
    double s = 0;
    for (int c = 0; c < 4; ++c) s += w.probabilities.data()[c * 1024 + q];
    CHECK(std::abs(s - 1.0) < 1e-5);
  }
}

TEST_CASE("frames of different sequences cannot be warped") {
  SceneSpec spec = make_room_scene("x", 6, 4);
  spec.intrinsics = {13.75, 13.75, 7.5, 7.5, 16, 16};
  Frame a = render_frame(spec, 0), b = render_frame(spec, 1);
  b.sequence = "other";
  CHECK_THROWS_AS(frame_correspondence(a, b, spec.intrinsics, 0.05), GeometryError);
  Tape tape = Tape::inference();
  CHECK_THROWS_AS(warp_probabilities(tape, Tensor::zeros({1, 4, 8, 8}), a, a, spec.intrinsics), ShapeError);
}
