#include <omp.h>

#include <cmath>
#include <vector>

#include "doctest.h"
#include "geoseg/error.hpp"
#include "geoseg/kernels.hpp"
#include "geoseg/rng.hpp"
#include "geoseg/tensor.hpp"
#include "oracles.hpp"

using namespace geoseg;

namespace {

std::vector<float> randv(Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

double max_abs_diff(std::span<const float> a, const std::vector<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < b.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("conv2d matches the direct-loop oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(2)), c = 1 + static_cast<int>(rng.index(5));
    const int h = 2 + static_cast<int>(rng.index(9)), w = 2 + static_cast<int>(rng.index(9));
    const int out = 1 + static_cast<int>(rng.index(6));
    const int k = rng.index(3) == 0 ? 1 : 3;
    const bool reflect = rng.index(2) == 0;
    const auto x = randv(rng, static_cast<std::size_t>(n) * c * h * w);
    const auto wt = randv(rng, static_cast<std::size_t>(out) * c * k * k);
    const auto b = randv(rng, out);
    Tape tape = Tape::inference();
    const Tensor y = tape.conv2d(Tensor::from({n, c, h, w}, x), Tensor::from({out, c, k, k}, wt),
                                 Tensor::from({out}, b), reflect ? PadMode::reflect : PadMode::zero);
    CHECK(y.shape() == Shape{n, out, h, w});
    const auto want = oracle::conv2d(to_double(x), n, c, h, w, to_double(wt), to_double(b), out, k, reflect);
    CHECK(max_abs_diff(y.data(), want) < 1e-5);
  }
}

TEST_CASE("reflect-101 padding mirrors without repeating the border") {
  // 1x1 input channel, kernel picks the left neighbour: column 0 must read column 1.
  std::vector<float> wt(9, 0.0f);
  wt[3] = 1.0f;  // (dy, dx) = (1, 0)
  Tape tape = Tape::inference();
  const Tensor y = tape.conv2d(Tensor::from({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6}), Tensor::from({1, 1, 3, 3}, wt),
                               Tensor::zeros({1}), PadMode::reflect);
  CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{2, 1, 2, 5, 4, 5});
  CHECK(kernels::reflect_index(-1, 5) == 1);
  CHECK(kernels::reflect_index(5, 5) == 3);
}

TEST_CASE("conv2d gradients match central differences of the oracle") {
  Rng rng(2);
  const int n = 2, c = 2, h = 4, w = 5, out = 3;
  for (const int k : {1, 3}) {
    const auto x = randv(rng, n * c * h * w), wt = randv(rng, out * c * k * k), b = randv(rng, out);
    const auto g = randv(rng, n * out * h * w);  // upstream gradient, loss = <g, y>
    Tensor tx = Tensor::from({n, c, h, w}, x, true), tw = Tensor::from({out, c, k, k}, wt, true),
           tb = Tensor::from({out}, b, true);
    Tape tape;
    const Tensor y = tape.conv2d(tx, tw, tb, PadMode::reflect);
    tape.backward(tape.sum(tape.mul(y, Tensor::from(y.shape(), g))));
    const auto loss = [&](const std::vector<double>& xs, const std::vector<double>& ws, const std::vector<double>& bs) {
      const auto yy = oracle::conv2d(xs, n, c, h, w, ws, bs, out, k, true);
      double s = 0;
      for (std::size_t i = 0; i < yy.size(); ++i) s += yy[i] * g[i];
      return s;
    };
    const auto dx = oracle::numeric_gradient([&](const auto& v) { return loss(v, to_double(wt), to_double(b)); }, to_double(x));
    const auto dw = oracle::numeric_gradient([&](const auto& v) { return loss(to_double(x), v, to_double(b)); }, to_double(wt));
    const auto db = oracle::numeric_gradient([&](const auto& v) { return loss(to_double(x), to_double(wt), v); }, to_double(b));
    CHECK(max_abs_diff(tx.grad(), dx) < 1e-4);
    CHECK(max_abs_diff(tw.grad(), dw) < 1e-4);
    CHECK(max_abs_diff(tb.grad(), db) < 1e-4);
  }
}

TEST_CASE("maxpool2 sends ties to the first position in scan order") {
  Tensor x = Tensor::from({1, 1, 2, 4}, {1, 1, 3, 0, 1, 0, 3, 3}, true);
  Tape tape;
  const Tensor y = tape.maxpool2(x);
  CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{1, 3});
  tape.backward(tape.sum(y));
  CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{1, 0, 1, 0, 0, 0, 0, 0});
  Tape t2 = Tape::inference();
  CHECK_THROWS_AS(t2.maxpool2(Tensor::zeros({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("upsample_nn copies each value to a 2x2 block and sums gradients back") {
  Tensor x = Tensor::from({1, 1, 1, 2}, {4, 7}, true);
  Tape tape;
  const Tensor y = tape.upsample_nn(x);
  CHECK(y.shape() == Shape{1, 1, 2, 4});
  CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{4, 4, 7, 7, 4, 4, 7, 7});
  tape.backward(tape.sum(tape.scale(y, 2.0f)));
  CHECK(x.grad()[0] == 8.0f);
  CHECK(x.grad()[1] == 8.0f);
}

TEST_CASE("softmax over channels is a distribution and stable for large logits") {
  Rng rng(3);
  auto logits = randv(rng, 2 * 5 * 3 * 3, -50, 50);
  logits[0] = 1e4f;
  Tape tape = Tape::inference();
  const Tensor p = tape.softmax_channels(Tensor::from({2, 5, 3, 3}, logits));
  for (int b = 0; b < 2; ++b)
    for (int q = 0; q < 9; ++q) {
      double s = 0;
      for (int c = 0; c < 5; ++c) {
        const float v = p.data()[(b * 5 + c) * 9 + q];
        CHECK(std::isfinite(v));
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  CHECK(p.data()[0] == 1.0f);
  CHECK_THROWS_AS(tape.softmax_channels(Tensor::zeros({1, 1, 2, 2})), ShapeError);
}

TEST_CASE("concat and slice route gradients to their sources") {
  Tensor a = Tensor::from({2, 1, 1, 2}, {1, 2, 3, 4}, true), b = Tensor::from({2, 2, 1, 2}, {5, 6, 7, 8, 9, 10, 11, 12}, true);
  Tape tape;
  const Tensor c = tape.concat_channels(a, b);
  CHECK(c.shape() == Shape{2, 3, 1, 2});
  CHECK(std::vector<float>(c.data().begin(), c.data().end()) ==
        std::vector<float>{1, 2, 5, 6, 7, 8, 3, 4, 9, 10, 11, 12});
  const Tensor s = tape.slice_batch(c, 1);
  tape.backward(tape.sum(s));
  CHECK(std::vector<float>(a.grad().begin(), a.grad().end()) == std::vector<float>{0, 0, 1, 1});
  CHECK(std::vector<float>(b.grad().begin(), b.grad().end()) == std::vector<float>{0, 0, 0, 0, 1, 1, 1, 1});
  Tape t2 = Tape::inference();
  CHECK_THROWS_AS(t2.slice_batch(a, 2), ShapeError);
  CHECK_THROWS_AS(t2.concat_channels(a, Tensor::zeros({1, 1, 1, 2})), ShapeError);
}

TEST_CASE("gradients accumulate over every use of a tensor") {
  Tensor x = Tensor::from({3}, {1, -2, 3}, true);
  Tape tape;
  // L = sum(x * x) + 3 sum(x) -> dL/dx = 2x + 3
  tape.backward(tape.add(tape.sum(tape.mul(x, x)), tape.scale(tape.sum(x), 3.0f)));
  CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{5, -1, 9});
}

TEST_CASE("relu passes gradient only where the input is positive") {
  Tensor x = Tensor::from({4}, {-1, 0.5, 0, 2}, true);
  Tape tape;
  const Tensor y = tape.relu(x);
  tape.backward(tape.sum(y));
  CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{0, 0.5, 0, 2});
  CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{0, 1, 0, 1});
}

TEST_CASE("tape misuse raises TapeError") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  const Tensor s = tape.sum(x);
  CHECK_THROWS_AS(tape.backward(x), TapeError);  // not a scalar
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), TapeError);
  CHECK_THROWS_AS(tape.sum(x), TapeError);
  tape.reset();
  CHECK_NOTHROW(tape.backward(tape.sum(x)));
  Tape t3;
  CHECK_THROWS_AS(t3.backward(t3.sum(Tensor::from({1}, {1}))), TapeError);  // nothing requires grad
  CHECK_THROWS_AS(Tensor().data(), TapeError);
}

TEST_CASE("inference tapes record nothing and detached tensors stop gradients") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape inf = Tape::inference();
  (void)inf.sum(inf.mul(x, x));
  CHECK(inf.entries().empty());
  Tape tape;
  const Tensor d = detach(x);
  CHECK_FALSE(d.requires_grad());
  tape.backward(tape.add(tape.sum(x), tape.sum(tape.mul(d, d))));
  CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{1, 1});
}

TEST_CASE("kernels give bitwise identical results for any thread count") {
  Rng rng(4);
  const int n = 2, c = 6, h = 16, w = 16, out = 8;
  const auto x = randv(rng, n * c * h * w), wt = randv(rng, out * c * 9), b = randv(rng, out);
  const auto g = randv(rng, n * out * h * w);
  const auto run = [&](int threads) {
    omp_set_num_threads(threads);
    Tensor tx = Tensor::from({n, c, h, w}, x, true), tw = Tensor::from({out, c, 3, 3}, wt, true);
    Tape tape;
    const Tensor y = tape.softmax_channels(tape.conv2d(tx, tw, Tensor::from({out}, b), PadMode::reflect));
    tape.backward(tape.sum(tape.mul(tape.maxpool2(y), Tensor::from({n, out, h / 2, w / 2}, std::vector<float>(g.begin(), g.begin() + n * out * h * w / 4)))));
    std::vector<float> all(y.data().begin(), y.data().end());
    all.insert(all.end(), tx.grad().begin(), tx.grad().end());
    all.insert(all.end(), tw.grad().begin(), tw.grad().end());
    return all;
  };
  const auto one = run(1);
  CHECK(run(3) == one);
  CHECK(run(8) == one);
  omp_set_num_threads(1);
}
