#include <cmath>

#include "doctest.h"
#include "geoseg/error.hpp"
#include "geoseg/losses.hpp"
#include "geoseg/rng.hpp"
#include "geoseg/synth.hpp"

using namespace geoseg;

namespace {

Tensor random_probs(Rng& rng, int b, int c, int h, int w, bool grad) {
  std::vector<float> logits(static_cast<std::size_t>(b) * c * h * w);
  for (auto& x : logits) x = static_cast<float>(rng.uniform(-2, 2));
  Tape t = Tape::inference();
  return t.softmax_channels(Tensor::from({b, c, h, w}, logits)).clone(grad);
}

LabelMap random_labels(Rng& rng, int w, int h, int c, double ignore) {
  LabelMap l(w, h);
  for (auto& x : l.labels) x = rng.uniform() < ignore ? kIgnore : static_cast<std::uint8_t>(rng.index(c));
  return l;
}

}  // namespace

TEST_CASE("cross-entropy is the mean over samples of per-sample pixel means") {
  Rng rng(1);
  const int b = 3, c = 4, h = 5, w = 6;
  const Tensor p = random_probs(rng, b, c, h, w, false);
  std::vector<LabelMap> labels;
  for (int i = 0; i < b; ++i) labels.push_back(random_labels(rng, w, h, c, 0.3));
  labels[1] = LabelMap(w, h);  // no annotation: excluded from the mean
  const std::vector<float> weights = {1.0f, 2.0f, 0.5f, 1.5f};
  double total = 0;
  int samples = 0;
  for (int i = 0; i < b; ++i) {
    double s = 0;
    int n = 0;
    for (int q = 0; q < h * w; ++q) {
      const int a = labels[i].labels[q];
      if (a == kIgnore) continue;
      s += -weights[a] * std::log(std::max<double>(p.data()[(i * c + a) * h * w + q], kProbabilityFloor));
      ++n;
    }
    if (n) {
      total += s / n;
      ++samples;
    }
  }
  Tape tape = Tape::inference();
  const CrossEntropy ce = cross_entropy(tape, p, {&labels[0], &labels[1], &labels[2]}, weights);
  CHECK_FALSE(ce.empty_supervision);
  CHECK(ce.loss.item() == doctest::Approx(total / samples).epsilon(1e-6));
}

TEST_CASE("cross-entropy without annotated pixels is zero and flagged") {
  Rng rng(2);
  const Tensor p = random_probs(rng, 1, 3, 2, 2, true);
  const LabelMap none(2, 2);
  Tape tape;
  const CrossEntropy ce = cross_entropy(tape, p, {&none});
  CHECK(ce.empty_supervision);
  CHECK(ce.loss.item() == 0.0f);
}

TEST_CASE("cross-entropy floors tiny probabilities") {
  const Tensor p = Tensor::from({1, 2, 1, 1}, {0.0f, 1.0f});
  LabelMap l(1, 1, 0);
  Tape tape = Tape::inference();
  CHECK(cross_entropy(tape, p, {&l}).loss.item() == doctest::Approx(-std::log(1e-7)).epsilon(1e-5));
}

TEST_CASE("cross-entropy rejects mismatched targets") {
  Rng rng(3);
  const Tensor p = random_probs(rng, 2, 3, 2, 2, false);
  const LabelMap ok(2, 2, 0), wrong(3, 2, 0), bad_class(2, 2, 7);
  Tape tape = Tape::inference();
  CHECK_THROWS_AS(cross_entropy(tape, p, {&ok}), ShapeError);
  CHECK_THROWS_AS(cross_entropy(tape, p, {&ok, &wrong}), ShapeError);
  CHECK_THROWS_AS(cross_entropy(tape, p, {&ok, &bad_class}), Error);
}

TEST_CASE("masked L1 averages over valid pixels and channels") {
  const Tensor a = Tensor::from({1, 2, 1, 3}, {0.1f, 0.5f, 0.9f, 0.9f, 0.5f, 0.1f});
  const Tensor b = Tensor::from({1, 2, 1, 3}, {0.3f, 0.5f, 0.0f, 0.7f, 0.5f, 1.0f});
  ValidityMask m{3, 1, {1, 1, 0}};
  Tape tape = Tape::inference();
  CHECK(masked_l1(tape, a, b, m).item() == doctest::Approx((0.2 + 0 + 0.2 + 0) / 4).epsilon(1e-6));
  m.valid = {0, 0, 0};
  CHECK(masked_l1(tape, a, b, m).item() == 0.0f);
}

TEST_CASE("geometric consistency leaves the teacher without gradient") {
  SceneSpec spec = make_room_scene("g", 7, 8);
  spec.intrinsics = {13.75, 13.75, 7.5, 7.5, 16, 16};
  const Frame s = render_frame(spec, 3), t = render_frame(spec, 4);
  Rng rng(4);
  const Tensor sp = random_probs(rng, 1, 4, 16, 16, true), tp = random_probs(rng, 1, 4, 16, 16, true);
  Tape tape;
  const Tensor loss = geometric_consistency(tape, sp, tp, t, s, spec.intrinsics, 0.05);
  REQUIRE(loss.requires_grad());
  CHECK(loss.item() > 0);
  tape.backward(loss);
  bool student = false;
  for (float g : sp.grad()) student = student || g != 0;
  CHECK(student);
  if (tp.has_grad())
    for (float g : tp.grad()) CHECK(g == 0.0f);
}

TEST_CASE("combine_losses") {
  Tensor s = Tensor::from({1}, {2.0f}, true), g = Tensor::from({1}, {3.0f}, true);
  Tape tape;
  CHECK(combine_losses(tape, s, g, 0.5f).item() == 3.5f);
  CHECK(combine_losses(tape, s, g, 0.0f).id() == s.id());
}

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK_NOTHROW(c.validate(4));
  c.class_weights = {1, 1};
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c.class_weights = {1, 1, -1, 1};
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c.class_weights.clear();
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(4), ConfigError);
}
