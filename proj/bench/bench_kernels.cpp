// Serial reference kernels against the OpenMP kernels on desk-scale layer shapes.
// Prints time per call and the largest absolute difference between the two.
//
//   geoseg_bench [repeats]      (GEOSEG_THREADS caps the OpenMP threads)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "geoseg/kernels.hpp"
#include "geoseg/reference.hpp"
#include "geoseg/rng.hpp"
#include "geoseg/segnet.hpp"

using namespace geoseg;
using kernels::Dims;

namespace {

std::vector<float> random_vector(Rng& rng, std::size_t n, double lo = -1, double hi = 1) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

double seconds_per_call(int repeats, const std::function<void()>& fn) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / repeats;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(double(a[i]) - b[i]));
  return d;
}

void row(const std::string& name, double serial, double parallel, double diff) {
  std::printf("%-34s %10.3f %10.3f %8.2fx %12.3g\n", name.c_str(), serial * 1e3, parallel * 1e3, serial / parallel,
              diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
  int threads = 1;
  try {
    threads = kernels::configure_threads();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "geoseg_bench: %s\n", e.what());
    return 2;
  }
  std::printf("threads %d, repeats %d\n", threads, repeats);
  std::printf("%-34s %10s %10s %9s %12s\n", "kernel", "serial ms", "omp ms", "speedup", "max |diff|");
  Rng rng(7);

  struct ConvCase {
    int n, c, h, w, out, k;
  };
  for (const ConvCase cc : {ConvCase{4, 3, 64, 64, 8, 3}, ConvCase{4, 8, 64, 64, 8, 3}, ConvCase{4, 16, 32, 32, 16, 3},
                            ConvCase{4, 32, 16, 16, 32, 3}, ConvCase{4, 8, 64, 64, 4, 1}}) {
    const Dims d{cc.n, cc.c, cc.h, cc.w};
    const auto x = random_vector(rng, d.size());
    const auto wt = random_vector(rng, static_cast<std::size_t>(cc.out) * cc.c * cc.k * cc.k);
    const auto b = random_vector(rng, cc.out);
    std::vector<float> ref, out(static_cast<std::size_t>(cc.n) * cc.out * cc.h * cc.w);
    const double ts = seconds_per_call(repeats, [&] { ref = reference::conv2d(x, d, wt, b, cc.out, cc.k, PadMode::reflect); });
    const double tp = seconds_per_call(repeats, [&] {
      kernels::conv2d_forward(x, d, wt, b, cc.out, cc.k, PadMode::reflect, out);
    });
    row("conv" + std::to_string(cc.k) + "x" + std::to_string(cc.k) + " " + std::to_string(cc.c) + "->" +
            std::to_string(cc.out) + " @" + std::to_string(cc.h) + " B" + std::to_string(cc.n),
        ts, tp, max_abs_diff(ref, out));
  }

  {
    const Dims d{4, 16, 64, 64};
    const auto x = random_vector(rng, d.size());
    std::vector<float> ref, out(d.size() / 4);
    std::vector<std::int32_t> arg(out.size());
    const double ts = seconds_per_call(repeats, [&] { ref = reference::maxpool2(x, d); });
    const double tp = seconds_per_call(repeats, [&] { kernels::maxpool2_forward(x, d, out, arg); });
    row("maxpool2 16ch @64 B4", ts, tp, max_abs_diff(ref, out));
  }
  {
    const Dims d{4, 16, 32, 32};
    const auto x = random_vector(rng, d.size());
    std::vector<float> ref, out(d.size() * 4);
    const double ts = seconds_per_call(repeats, [&] { ref = reference::upsample_nn(x, d); });
    const double tp = seconds_per_call(repeats, [&] { kernels::upsample_nn_forward(x, d, out); });
    row("upsample_nn 16ch @32 B4", ts, tp, max_abs_diff(ref, out));
  }
  {
    const Dims d{4, 4, 64, 64};
    const auto x = random_vector(rng, d.size(), -4, 4);
    std::vector<float> ref, out(d.size());
    const double ts = seconds_per_call(repeats, [&] { ref = reference::softmax_channels(x, d); });
    const double tp = seconds_per_call(repeats, [&] { kernels::softmax_channels_forward(x, d, out); });
    row("softmax 4ch @64 B4", ts, tp, max_abs_diff(ref, out));
  }
  {
    const int c = 4, h = 64, w = 64;
    const auto src = random_vector(rng, static_cast<std::size_t>(c) * h * w, 0, 1);
    const auto u = random_vector(rng, static_cast<std::size_t>(h) * w, 0, w - 1);
    const auto v = random_vector(rng, static_cast<std::size_t>(h) * w, 0, h - 1);
    std::vector<std::uint8_t> valid(u.size());
    for (auto& m : valid) m = rng.uniform(0, 1) < 0.8;
    std::vector<float> ref, out(src.size());
    const double ts = seconds_per_call(repeats * 10, [&] { ref = reference::bilinear_sample(src, c, h, w, u, v, valid); });
    const double tp = seconds_per_call(repeats * 10, [&] { kernels::bilinear_forward(src, c, h, w, u, v, valid, out); });
    row("bilinear 4ch @64", ts, tp, max_abs_diff(ref, out));
  }
  {
    // Whole-network forward and backward: OpenMP path only; there is no serial network.
    const NetConfig nc;
    const Network net = Network::build(nc, 1);
    const Tensor images = Tensor::from({4, 3, nc.height, nc.width}, random_vector(rng, 4 * 3 * nc.height * nc.width, 0, 1));
    Network train_net = net.clone();
    const double tf = seconds_per_call(repeats, [&] {
      Tape tape = Tape::inference();
      (void)net.forward(tape, images);
    });
    const double tb = seconds_per_call(repeats, [&] {
      train_net.zero_grad();
      Tape tape;
      const Tensor probs = train_net.forward(tape, images);
      tape.backward(tape.sum(probs));
    });
    std::printf("network forward B4: %.3f ms, forward+backward: %.3f ms\n", tf * 1e3, tb * 1e3);
  }
  return 0;
}
