#include "geoseg/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>

#include "geoseg/error.hpp"
#include "geoseg/losses.hpp"
#include "geoseg/reference.hpp"
#include "geoseg/rng.hpp"
#include "geoseg/segnet.hpp"
#include "geoseg/synth.hpp"
#include "geoseg/warp.hpp"

namespace geoseg {
namespace {

using Vec = std::vector<double>;
using kernels::Dims;

// Discrete decisions taken by the reference forward. A finite difference whose two
// evaluations disagree with the unperturbed pattern straddles a kink.
using Pattern = std::vector<std::uint8_t>;

struct Input {
  Shape shape;
  std::vector<float> values;
  bool check = true;          // compare gradients of this input
  bool requires_grad = true;  // record it on the tape
};

using TapeFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;
using RefFn = std::function<double(const std::vector<Vec>&, Pattern&)>;

std::vector<float> uniform(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

Vec widen(std::span<const float> v) { return Vec(v.begin(), v.end()); }

Dims dims_of(const Shape& s) { return {s[0], s[1], s[2], s[3]}; }

// Scalar functional sum(r * out) so every output entry reaches the inputs.
Tensor weighted_sum(Tape& tape, const Tensor& out, const std::vector<float>& r) {
  return tape.sum(tape.mul(out, Tensor::from(out.shape(), r)));
}
double weighted_sum(const Vec& out, const std::vector<float>& r) {
  double acc = 0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out[i] * r[i];
  return acc;
}

std::vector<Tensor> compare(OpCheck& result, const std::vector<Input>& inputs, const TapeFn& tape_fn,
                            const RefFn& ref_fn, const GradCheckOptions& opt, Rng& rng) {
  std::vector<Tensor> tensors;
  for (const auto& in : inputs) tensors.push_back(Tensor::from(in.shape, in.values, in.requires_grad));
  Tape tape;
  const Tensor loss = tape_fn(tape, tensors);
  tape.backward(loss);

  std::vector<Vec> x;
  for (const auto& in : inputs) x.emplace_back(in.values.begin(), in.values.end());
  Pattern base;
  ref_fn(x, base);
  const double h = opt.step;

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].check) continue;
    const std::size_t n = x[k].size();
    std::vector<std::size_t> entries(n);
    std::iota(entries.begin(), entries.end(), 0);
    if (opt.max_entries && opt.max_entries < n) {
      for (std::size_t j = 0; j < opt.max_entries; ++j) std::swap(entries[j], entries[j + rng.index(n - j)]);
      entries.resize(opt.max_entries);
    }
    const bool has = tensors[k].has_grad();
    for (std::size_t i : entries) {
      const double orig = x[k][i];
      Pattern pp, pm;
      x[k][i] = orig + h;
      const double lp = ref_fn(x, pp);
      x[k][i] = orig - h;
      const double lm = ref_fn(x, pm);
      x[k][i] = orig;
      if (pp != base || pm != base) {
        ++result.excluded;
        continue;
      }
      const double numeric = (lp - lm) / (2 * h);
      const double analytic = has ? tensors[k].grad()[i] : 0.0;
      const double mag = std::max(std::abs(numeric), std::abs(analytic));
      if (mag <= opt.min_magnitude) continue;
      const double rel = std::abs(numeric - analytic) / mag;
      result.max_rel_error = std::max(result.max_rel_error, rel);
      if (mag > 10 * opt.min_magnitude) result.max_rel_error_large = std::max(result.max_rel_error_large, rel);
      ++result.compared;
    }
  }
  ++result.instances;
  return tensors;
}

// ---- 64-bit reference pieces -------------------------------------------------------

Vec ref_relu(const Vec& x, Pattern& pat) {
  for (double v : x) pat.push_back(v > 0);
  return reference::relu(x);
}

Vec ref_maxpool(const Vec& x, Dims d, Pattern& pat) {
  for (int p = 0; p < d.n * d.c; ++p)
    for (int y = 0; y < d.h / 2; ++y)
      for (int xx = 0; xx < d.w / 2; ++xx) {
        int best = 0;
        double bv = -INFINITY;
        for (int q = 0; q < 4; ++q) {
          const double v = x[(static_cast<std::size_t>(p) * d.h + 2 * y + q / 2) * d.w + 2 * xx + q % 2];
          if (v > bv) bv = v, best = q;
        }
        pat.push_back(static_cast<std::uint8_t>(best));
      }
  return reference::maxpool2(x, d);
}

Vec ref_network(const NetConfig& c, const std::vector<Vec>& params, std::size_t first, const Vec& images,
                int batch, Pattern& pat) {
  std::size_t next = first;
  Dims d{batch, 3, c.height, c.width};
  auto conv = [&](const Vec& in, Dims& dd) {
    const Vec& w = params[next];
    const Vec& b = params[next + 1];
    next += 2;
    const int cout = static_cast<int>(b.size());
    const int k = w.size() == static_cast<std::size_t>(cout) * dd.c * 9 ? 3 : 1;
    Vec out = reference::conv2d(in, dd, w, b, cout, k, PadMode::reflect);
    dd.c = cout;
    return out;
  };
  std::vector<std::pair<Vec, Dims>> skips;
  Vec x = images;
  for (int l = 1; l <= c.levels; ++l) {
    x = ref_relu(conv(x, d), pat);
    x = ref_relu(conv(x, d), pat);
    if (l < c.levels) {
      skips.emplace_back(x, d);
      x = ref_maxpool(x, d, pat);
      d.h /= 2;
      d.w /= 2;
    }
  }
  for (int l = c.levels - 1; l >= 1; --l) {
    x = reference::upsample_nn(x, d);
    d.h *= 2;
    d.w *= 2;
    x = ref_relu(conv(x, d), pat);
    const auto& [skip, sd] = skips[l - 1];
    x = reference::concat_channels(skip, sd, x, d);
    d.c += sd.c;
    x = ref_relu(conv(x, d), pat);
    x = ref_relu(conv(x, d), pat);
  }
  x = conv(x, d);
  return reference::softmax_channels(x, d);
}

double ref_cross_entropy(const Vec& p, int batch, int channels, std::size_t plane,
                         const std::vector<const LabelMap*>& targets, Pattern& pat,
                         const std::vector<float>& weights = {}) {
  double total = 0;
  int supervised = 0;
  for (int b = 0; b < batch; ++b) {
    double sample = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      const auto l = targets[b]->labels[i];
      if (l == kIgnore) continue;
      const double prob = p[(static_cast<std::size_t>(b) * channels + l) * plane + i];
      pat.push_back(prob < kProbabilityFloor);
      const double wl = weights.empty() ? 1.0 : weights[l];
      sample -= wl * std::log(std::max(prob, static_cast<double>(kProbabilityFloor)));
      ++count;
    }
    if (count) {
      total += sample / static_cast<double>(count);
      ++supervised;
    }
  }
  return supervised ? total / supervised : 0.0;
}

double ref_masked_l1(const Vec& a, const Vec& b, const std::vector<std::uint8_t>& valid, int channels,
                     Pattern& pat) {
  const std::size_t plane = valid.size();
  std::size_t count = 0;
  for (auto v : valid) count += v != 0;
  if (!count) return 0.0;
  double acc = 0;
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      if (!valid[p]) continue;
      const double d = a[c * plane + p] - b[c * plane + p];
      pat.push_back(d > 0);
      acc += std::abs(d);
    }
  return acc / static_cast<double>(count * channels);
}

// ---- Small registered scenes for the warp-based suites ---------------------------------

struct TinyScene {
  Intrinsics K;
  std::vector<Frame> frames;
};

TinyScene tiny_scene(std::uint64_t seed) {
  SceneSpec spec = make_room_scene("tiny", seed, 30);
  spec.intrinsics = Intrinsics{7.0, 7.0, 3.5, 3.5, 8, 8};
  TinyScene s{spec.intrinsics, {}};
  Rng rng(derive_seed(seed, {7}));
  for (int i = 0; i < spec.trajectory.frames; ++i) {
    Frame f = render_frame(spec, i);
    LabelMap ann = *f.truth;
    for (auto& l : ann.labels)
      if (rng.uniform() < 0.2) l = kIgnore;
    f.annotation = ann;
    s.frames.push_back(std::move(f));
  }
  return s;
}

std::vector<float> probabilities(Rng& rng, int channels, std::size_t plane) {
  std::vector<float> p(channels * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    double z = 0;
    std::vector<double> e(channels);
    for (int c = 0; c < channels; ++c) z += e[c] = std::exp(rng.uniform(-2.0, 2.0));
    for (int c = 0; c < channels; ++c) p[c * plane + i] = static_cast<float>(e[c] / z);
  }
  return p;
}

// ---- Suites ---------------------------------------------------------------------------

using Suite = std::function<void(OpCheck&, const GradCheckOptions&, Rng&)>;

Suite conv_suite(int ksize, PadMode pad) {
  return [ksize, pad](OpCheck& r, const GradCheckOptions& o, Rng& rng) {
    const int n = 1 + static_cast<int>(rng.index(2)), ci = 1 + static_cast<int>(rng.index(3));
    const int co = 1 + static_cast<int>(rng.index(3));
    const int h = 3 + static_cast<int>(rng.index(6)), w = 3 + static_cast<int>(rng.index(6));
    const Shape xs{n, ci, h, w}, ws{co, ci, ksize, ksize}, bs{co};
    const auto rw = uniform(rng, numel({n, co, h, w}));
    compare(
        r, {{xs, uniform(rng, numel(xs))}, {ws, uniform(rng, numel(ws))}, {bs, uniform(rng, co)}},
        [&](Tape& t, const std::vector<Tensor>& in) { return weighted_sum(t, t.conv2d(in[0], in[1], in[2], pad), rw); },
        [&](const std::vector<Vec>& x, Pattern&) {
          return weighted_sum(reference::conv2d(x[0], dims_of(xs), x[1], x[2], co, ksize, pad), rw);
        },
        o, rng);
  };
}

Suite unary_suite(bool even, std::function<Tensor(Tape&, const Tensor&)> op,
                  std::function<Vec(const Vec&, Dims, Pattern&)> ref, Shape (*out_shape)(const Shape&)) {
  return [=](OpCheck& r, const GradCheckOptions& o, Rng& rng) {
    const int n = 1 + static_cast<int>(rng.index(2)), c = 2 + static_cast<int>(rng.index(2));
    int h = 2 + static_cast<int>(rng.index(6)), w = 2 + static_cast<int>(rng.index(6));
    if (even) h += h % 2, w += w % 2;
    const Shape xs{n, c, h, w};
    const auto rw = uniform(rng, numel(out_shape(xs)));
    compare(
        r, {{xs, uniform(rng, numel(xs), -2.0, 2.0)}},
        [&](Tape& t, const std::vector<Tensor>& in) { return weighted_sum(t, op(t, in[0]), rw); },
        [&](const std::vector<Vec>& x, Pattern& p) { return weighted_sum(ref(x[0], dims_of(xs), p), rw); }, o, rng);
  };
}

Shape same(const Shape& s) { return s; }
Shape halved(const Shape& s) { return {s[0], s[1], s[2] / 2, s[3] / 2}; }
Shape doubled(const Shape& s) { return {s[0], s[1], s[2] * 2, s[3] * 2}; }

void concat_suite(OpCheck& r, const GradCheckOptions& o, Rng& rng) {
  const int n = 1 + static_cast<int>(rng.index(2)), h = 2 + static_cast<int>(rng.index(5));
  const int w = 2 + static_cast<int>(rng.index(5));
  const Shape as{n, 1 + static_cast<int>(rng.index(3)), h, w}, bs{n, 1 + static_cast<int>(rng.index(3)), h, w};
  const auto rw = uniform(rng, numel(as) + numel(bs));
  compare(
      r, {{as, uniform(rng, numel(as))}, {bs, uniform(rng, numel(bs))}},
      [&](Tape& t, const std::vector<Tensor>& in) { return weighted_sum(t, t.concat_channels(in[0], in[1]), rw); },
      [&](const std::vector<Vec>& x, Pattern&) {
        return weighted_sum(reference::concat_channels(x[0], dims_of(as), x[1], dims_of(bs)), rw);
      },
      o, rng);
}

void slice_suite(OpCheck& r, const GradCheckOptions& o, Rng& rng) {
  const Shape xs{2 + static_cast<int>(rng.index(3)), 2, 3, 4};
  const int index = static_cast<int>(rng.index(xs[0]));
  const std::size_t per = numel(xs) / xs[0];
  const auto rw = uniform(rng, per);
  compare(
      r, {{xs, uniform(rng, numel(xs))}},
      [&](Tape& t, const std::vector<Tensor>& in) { return weighted_sum(t, t.slice_batch(in[0], index), rw); },
      [&](const std::vector<Vec>& x, Pattern&) {
        return weighted_sum(Vec(x[0].begin() + index * per, x[0].begin() + (index + 1) * per), rw);
      },
      o, rng);
}

void elementwise_suite(OpCheck& r, const GradCheckOptions& o, Rng& rng) {
  const Shape s{1, 2, 3, 1 + static_cast<int>(rng.index(5))};
  const float factor = static_cast<float>(rng.uniform(-2.0, 2.0));
  const auto rw = uniform(rng, numel(s));
  // add(a * b, scale(a, f)) exercises mul, add and scale together.
  compare(
      r, {{s, uniform(rng, numel(s))}, {s, uniform(rng, numel(s))}},
      [&](Tape& t, const std::vector<Tensor>& in) {
        return weighted_sum(t, t.add(t.mul(in[0], in[1]), t.scale(in[0], factor)), rw);
      },
      [&](const std::vector<Vec>& x, Pattern&) {
        Vec out(x[0].size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[0][i] * x[1][i] + x[0][i] * static_cast<double>(factor);
        return weighted_sum(out, rw);
      },
      o, rng);
}

void bilinear_suite(OpCheck& r, const GradCheckOptions& o, Rng& rng) {
  const int c = 1 + static_cast<int>(rng.index(3)), hs = 2 + static_cast<int>(rng.index(6));
  const int ws = 2 + static_cast<int>(rng.index(6)), ht = 2 + static_cast<int>(rng.index(5));
  const int wt = 2 + static_cast<int>(rng.index(5));
  CorrespondenceField f;
  f.width = wt;
  f.height = ht;
  const std::size_t npix = static_cast<std::size_t>(wt) * ht;
  for (std::size_t p = 0; p < npix; ++p) {
    float u = static_cast<float>(rng.uniform(0.0, ws - 1.0)), v = static_cast<float>(rng.uniform(0.0, hs - 1.0));
    if (rng.uniform() < 0.15) u = static_cast<float>(rng.index(ws));  // on a sample column
    f.u.push_back(u);
    f.v.push_back(v);
    f.depth.push_back(1.0f);
    f.valid.push_back(rng.uniform() < 0.8);
  }
  const Shape ms{1, c, hs, ws};
  const auto rw = uniform(rng, static_cast<std::size_t>(c) * npix);
  compare(
      r, {{ms, uniform(rng, numel(ms))}},
      [&](Tape& t, const std::vector<Tensor>& in) { return weighted_sum(t, bilinear_sample(t, in[0], f).probabilities, rw); },
      [&](const std::vector<Vec>& x, Pattern&) {
        return weighted_sum(reference::bilinear_sample(x[0], c, hs, ws, f.u, f.v, f.valid), rw);
      },
      o, rng);
}

// Finite differences act on logits through the softmax: on raw probabilities the
// central-difference truncation error of -log p grows like h^2 / (3 p^2) and exceeds the
// tolerance for p below ~0.02, which would measure the oracle rather than the gradient.
void cross_entropy_suite(OpCheck& r, const GradCheckOptions& o, Rng& rng) {
  const int b = 1 + static_cast<int>(rng.index(3)), c = 2 + static_cast<int>(rng.index(3));
  const int h = 2 + static_cast<int>(rng.index(5)), w = 2 + static_cast<int>(rng.index(5));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<LabelMap> labels;
  for (int i = 0; i < b; ++i) {
    LabelMap m(w, h);
    const bool empty = b > 1 && i == b - 1 && rng.uniform() < 0.5;  // a sample with no annotation
    for (auto& l : m.labels)
      l = empty || rng.uniform() < 0.25 ? kIgnore : static_cast<std::uint8_t>(rng.index(c));
    labels.push_back(m);
  }
  if (labels[0].annotated_count() == 0) labels[0].labels[0] = 0;
  std::vector<float> weights;
  if (rng.uniform() < 0.5) weights = uniform(rng, c, 0.1, 1.0);
  std::vector<const LabelMap*> targets;
  for (const auto& l : labels) targets.push_back(&l);
  const Shape s{b, c, h, w};
  compare(
      r, {{s, uniform(rng, numel(s), -4.0, 4.0)}},
      [&](Tape& t, const std::vector<Tensor>& in) {
        return cross_entropy(t, t.softmax_channels(in[0]), targets, weights).loss;
      },
      [&](const std::vector<Vec>& x, Pattern& pat) {
        return ref_cross_entropy(reference::softmax_channels(x[0], dims_of(s)), b, c, plane, targets, pat, weights);
      },
      o, rng);
}

void masked_l1_suite(OpCheck& r, const GradCheckOptions& o, Rng& rng) {
  const int c = 1 + static_cast<int>(rng.index(4)), h = 2 + static_cast<int>(rng.index(6));
  const int w = 2 + static_cast<int>(rng.index(6));
  ValidityMask mask{w, h, {}};
  for (int i = 0; i < w * h; ++i) mask.valid.push_back(rng.uniform() < 0.7);
  mask.valid[0] = 1;
  const Shape s{1, c, h, w};
  compare(
      r, {{s, uniform(rng, numel(s))}, {s, uniform(rng, numel(s))}},
      [&](Tape& t, const std::vector<Tensor>& in) { return masked_l1(t, in[0], in[1], mask); },
      [&](const std::vector<Vec>& x, Pattern& pat) { return ref_masked_l1(x[0], x[1], mask.valid, c, pat); }, o, rng);
}

// Consistency term on a registered pair: gradients reach the student only.
void consistency_suite(OpCheck& r, const GradCheckOptions& o, Rng& rng) {
  const TinyScene scene = tiny_scene(rng.index(1u << 30));
  const int c = 4;
  const std::size_t a = 1 + rng.index(scene.frames.size() - 2);
  const Frame& student = scene.frames[a];
  const Frame& teacher = scene.frames[rng.uniform() < 0.5 ? a - 1 : a + 1];
  const CorrespondenceField f = frame_correspondence(student, teacher, scene.K, kDefaultOcclusionThreshold);
  const std::size_t plane = 64;
  const Shape s{1, c, 8, 8};
  const auto tensors = compare(
      r, {{s, probabilities(rng, c, plane)}, {s, probabilities(rng, c, plane), false, true}},
      [&](Tape& t, const std::vector<Tensor>& in) {
        return geometric_consistency(t, in[0], in[1], teacher, student, scene.K, kDefaultOcclusionThreshold);
      },
      [&](const std::vector<Vec>& x, Pattern& pat) {
        const Vec warped = reference::bilinear_sample(x[1], c, 8, 8, f.u, f.v, f.valid);
        return ref_masked_l1(x[0], warped, f.valid, c, pat);
      },
      o, rng);
  if (tensors[1].has_grad())
    for (float g : tensors[1].grad()) r.max_abs_teacher_grad = std::max(r.max_abs_teacher_grad, std::abs(double(g)));
}

NetConfig tiny_net() { return NetConfig{2, 4, 4, 8, 8}; }

std::vector<Input> parameter_inputs(const Network& net) {
  std::vector<Input> in;
  for (const auto& p : net.parameters())
    in.push_back({p.value.shape(), std::vector<float>(p.value.data().begin(), p.value.data().end())});
  return in;
}

// Network + cross-entropy, gradients wrt every parameter tensor.
void network_suite(OpCheck& r, const GradCheckOptions& o, Rng& rng) {
  const NetConfig cfg = tiny_net();
  const Network net = Network::build(cfg, rng.index(1u << 30));
  const int b = 2;
  const Shape is{b, 3, cfg.height, cfg.width};
  const auto images = uniform(rng, numel(is), -0.5, 0.5);
  std::vector<LabelMap> labels;
  for (int i = 0; i < b; ++i) {
    LabelMap m(cfg.width, cfg.height);
    for (auto& l : m.labels) l = rng.uniform() < 0.2 ? kIgnore : static_cast<std::uint8_t>(rng.index(cfg.num_classes));
    labels.push_back(m);
  }
  std::vector<const LabelMap*> targets{&labels[0], &labels[1]};
  const std::size_t plane = static_cast<std::size_t>(cfg.height) * cfg.width;
  const Vec img(images.begin(), images.end());
  compare(
      r, parameter_inputs(net),
      [&](Tape& t, const std::vector<Tensor>& params) {
        Network n = net.clone();
        for (std::size_t k = 0; k < params.size(); ++k) n.parameters()[k].value = params[k];
        return cross_entropy(t, n.forward(t, Tensor::from(is, images)), targets).loss;
      },
      [&](const std::vector<Vec>& x, Pattern& pat) {
        const Vec p = ref_network(cfg, x, 0, img, b, pat);
        return ref_cross_entropy(p, b, cfg.num_classes, plane, targets, pat);
      },
      o, rng);
}

// total_loss: L_S over two annotated frames plus lambda times the consistency of an
// anchor against two neighbours, through network, softmax, warp and the masked l1.
void full_chain_suite(OpCheck& r, const GradCheckOptions& o, Rng& rng) {
  const TinyScene scene = tiny_scene(rng.index(1u << 30));
  const NetConfig cfg = tiny_net();
  const Network net = Network::build(cfg, rng.index(1u << 30));
  const std::size_t n = scene.frames.size();
  const std::size_t a = 1 + rng.index(n - 3);
  SupervisedBatch batch{{&scene.frames[rng.index(n)], &scene.frames[rng.index(n)]}};
  ConsistencyGroup group{&scene.frames[a], {&scene.frames[a - 1], &scene.frames[a + 1], &scene.frames[a + 2]}};
  LossConfig lc;
  lc.lambda = static_cast<float>(rng.uniform(0.1, 2.0));
  const int c = cfg.num_classes;
  const std::size_t plane = static_cast<std::size_t>(cfg.height) * cfg.width;

  // Teachers are constants of the objective: fixed at the unperturbed parameters.
  Tape inference = Tape::inference();
  const Tensor teachers = net.forward(inference, image_tensor(group.neighbors));
  std::vector<Vec> warped;
  std::vector<std::vector<std::uint8_t>> masks;
  for (std::size_t i = 0; i < group.neighbors.size(); ++i) {
    const auto f = frame_correspondence(*group.anchor, *group.neighbors[i], scene.K, lc.occl_threshold);
    const Vec t(teachers.data().begin() + i * c * plane, teachers.data().begin() + (i + 1) * c * plane);
    warped.push_back(reference::bilinear_sample(t, c, cfg.height, cfg.width, f.u, f.v, f.valid));
    masks.push_back(f.valid);
  }
  const Vec sup_images = widen(image_tensor(batch.frames).data());
  const Vec anchor_image = widen(image_tensor({group.anchor}).data());
  std::vector<const LabelMap*> targets{&*batch.frames[0]->annotation, &*batch.frames[1]->annotation};

  compare(
      r, parameter_inputs(net),
      [&](Tape& t, const std::vector<Tensor>& params) {
        Network m = net.clone();
        for (std::size_t k = 0; k < params.size(); ++k) m.parameters()[k].value = params[k];
        return total_loss(t, m, batch, {group}, lc, scene.K).total;
      },
      [&](const std::vector<Vec>& x, Pattern& pat) {
        const Vec p = ref_network(cfg, x, 0, sup_images, 2, pat);
        double loss = ref_cross_entropy(p, 2, c, plane, targets, pat);
        const Vec s = ref_network(cfg, x, 0, anchor_image, 1, pat);
        double lg = 0;
        for (std::size_t i = 0; i < warped.size(); ++i) lg += ref_masked_l1(s, warped[i], masks[i], c, pat);
        return loss + static_cast<double>(lc.lambda) * lg;
      },
      o, rng);
}

struct NamedSuite {
  std::string name;
  Suite run;
};

const std::vector<NamedSuite>& suites() {
  static const std::vector<NamedSuite> all = {
      {"conv2d_3x3_reflect", conv_suite(3, PadMode::reflect)},
      {"conv2d_3x3_zero", conv_suite(3, PadMode::zero)},
      {"conv2d_1x1", conv_suite(1, PadMode::reflect)},
      {"relu", unary_suite(false, [](Tape& t, const Tensor& x) { return t.relu(x); },
                           [](const Vec& x, Dims, Pattern& p) { return ref_relu(x, p); }, same)},
      {"maxpool2", unary_suite(true, [](Tape& t, const Tensor& x) { return t.maxpool2(x); },
                               [](const Vec& x, Dims d, Pattern& p) { return ref_maxpool(x, d, p); }, halved)},
      {"upsample_nn", unary_suite(false, [](Tape& t, const Tensor& x) { return t.upsample_nn(x); },
                                  [](const Vec& x, Dims d, Pattern&) { return reference::upsample_nn(x, d); }, doubled)},
      {"softmax_channels",
       unary_suite(false, [](Tape& t, const Tensor& x) { return t.softmax_channels(x); },
                   [](const Vec& x, Dims d, Pattern&) { return reference::softmax_channels(x, d); }, same)},
      {"concat_channels", concat_suite},
      {"slice_batch", slice_suite},
      {"add_scale_mul", elementwise_suite},
      {"bilinear_sample", bilinear_suite},
      {"cross_entropy", cross_entropy_suite},
      {"masked_l1", masked_l1_suite},
      {"geometric_consistency", consistency_suite},
      {"network", network_suite},
      {"full_chain", full_chain_suite},
  };
  return all;
}

}  // namespace

double GradCheckReport::max_rel_error() const {
  double m = 0;
  for (const auto& op : ops) m = std::max(m, op.max_rel_error);
  return m;
}

bool GradCheckReport::passed(double tolerance) const {
  for (const auto& op : ops)
    if (!(op.max_rel_error < tolerance) || op.compared == 0 || op.max_abs_teacher_grad != 0.0) return false;
  return !ops.empty();
}

const std::vector<std::string>& gradcheck_ops() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& s : suites()) n.push_back(s.name);
    return n;
  }();
  return names;
}

GradCheckReport run_gradcheck(const GradCheckOptions& options, const std::vector<std::string>& ops) {
  if (!(options.step > 0) || options.instances < 1) throw ConfigError("gradcheck: step must be > 0 and instances >= 1");
  for (const auto& name : ops)
    if (std::find(gradcheck_ops().begin(), gradcheck_ops().end(), name) == gradcheck_ops().end())
      throw ConfigError("gradcheck: unknown op '" + name + "'");
  GradCheckReport report;
  std::uint64_t key = 0;
  for (const auto& suite : suites()) {
    ++key;
    if (!ops.empty() && std::find(ops.begin(), ops.end(), suite.name) == ops.end()) continue;
    OpCheck r;
    r.op = suite.name;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < options.instances; ++i) {
      Rng rng(derive_seed(options.seed, {key, static_cast<std::uint64_t>(i)}));
      suite.run(r, options, rng);
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.ops.push_back(r);
  }
  return report;
}

}  // namespace geoseg
