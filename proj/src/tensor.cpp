#include "geoseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>

#include "geoseg/error.hpp"
#include "geoseg/kernels.hpp"

namespace geoseg {
namespace {

std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

kernels::Dims dims4(const Tensor& t, const char* op) {
  if (t.rank() != 4)
    throw ShapeError(std::string(op) + ": expected a 4-d tensor, got " + to_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::maxpool2: return "maxpool2";
    case OpKind::upsample_nn: return "upsample_nn";
    case OpKind::softmax_channels: return "softmax_channels";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::slice_batch: return "slice_batch";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::mul: return "mul";
    case OpKind::sum: return "sum";
    case OpKind::bilinear_sample: return "bilinear_sample";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::masked_l1: return "masked_l1";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::filled(Shape shape, float value, bool requires_grad) {
  for (int d : shape)
    if (d <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  auto impl = std::make_shared<Impl>();
  impl->data.assign(geoseg::numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  impl->id = next_id();
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (values.size() != geoseg::numel(shape))
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + to_string(shape));
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data.assign(values.begin(), values.end());
  impl->requires_grad = requires_grad;
  impl->id = next_id();
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw TapeError("use of an undefined tensor");
  return *impl_;
}

Tensor::Impl& Tensor::impl() {
  if (!impl_) throw TapeError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }
int Tensor::dim(std::size_t axis) const { return impl().shape.at(axis); }
std::size_t Tensor::numel() const { return impl().data.size(); }
std::span<const float> Tensor::data() const { return impl().data; }
std::span<float> Tensor::mutable_data() { return impl().data; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on a tensor of shape " + to_string(shape()));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
bool Tensor::has_grad() const { return !impl().grad.empty(); }
std::span<const float> Tensor::grad() const { return impl().grad; }

std::span<float> Tensor::mutable_grad() {
  auto& im = impl();
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0f);
  return im.grad;
}

void Tensor::zero_grad() {
  auto& im = impl();
  std::fill(im.grad.begin(), im.grad.end(), 0.0f);
}

std::uint64_t Tensor::id() const { return impl().id; }

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), std::vector<float>(data().begin(), data().end()), requires_grad);
}

Tensor detach(const Tensor& t) { return t.clone(false); }

// ---------------------------------------------------------------------------- Tape

bool Tape::needs_grad(std::initializer_list<const Tensor*> inputs) const {
  if (!recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

Tensor Tape::record(OpKind kind, std::vector<Tensor> inputs, Tensor output,
                    std::function<void(const Tensor&)> backward) {
  if (consumed_) throw TapeError("recording on a tape that already ran backward; call reset()");
  const bool any = recording() && std::any_of(inputs.begin(), inputs.end(),
                                              [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return output;
  output.impl().requires_grad = true;
  TapeEntry entry;
  entry.kind = kind;
  for (const auto& t : inputs) entry.inputs.push_back(t.id());
  entry.output = output.id();
  entry.saved = std::move(inputs);
  entry.backward = std::move(backward);
  entry.output_tensor = output;
  entries_.push_back(std::move(entry));
  return output;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward() called twice on the same tape without reset()");
  if (loss.numel() != 1)
    throw TapeError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw TapeError("loss does not depend on any tensor requiring grad");
  consumed_ = true;
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output_tensor.has_grad()) continue;  // not on a path to the loss
    it->backward(it->output_tensor);
  }
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

Tensor Tape::conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, PadMode pad) {
  const auto in = dims4(input, "conv2d");
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3) ||
      (weight.dim(2) != 1 && weight.dim(2) != 3))
    throw ShapeError("conv2d: weight must be [Cout,Cin,k,k] with k in {1,3}, got " +
                     to_string(weight.shape()));
  if (weight.dim(1) != in.c)
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels but weight expects " +
                     std::to_string(weight.dim(1)));
  const int cout = weight.dim(0), k = weight.dim(2);
  if (bias.numel() != static_cast<std::size_t>(cout))
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) + " != Cout " +
                     std::to_string(cout));
  if (k == 3 && pad == PadMode::reflect && (in.h < 2 || in.w < 2))
    throw ShapeError("conv2d: reflect padding needs H,W >= 2");

  Tensor out = Tensor::zeros({in.n, cout, in.h, in.w});
  kernels::conv2d_forward(input.data(), in, weight.data(), bias.data(), cout, k, pad,
                          out.mutable_data());
  if (!needs_grad({&input, &weight, &bias})) return out;
  return record(OpKind::conv2d, {input, weight, bias}, out,
                [input, weight, bias, in, cout, k, pad](const Tensor& o) {
                  Tensor x = input, w = weight, b = bias;
                  kernels::conv2d_backward(
                      x.data(), in, w.data(), cout, k, pad, o.grad(),
                      x.requires_grad() ? x.mutable_grad() : std::span<float>{},
                      w.requires_grad() ? w.mutable_grad() : std::span<float>{},
                      b.requires_grad() ? b.mutable_grad() : std::span<float>{});
                });
}

Tensor Tape::relu(const Tensor& input) {
  Tensor out = Tensor::zeros(input.shape());
  auto x = input.data();
  auto y = out.mutable_data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  if (!needs_grad({&input})) return out;
  return record(OpKind::relu, {input}, out, [input](const Tensor& o) {
    Tensor x = input;
    auto gx = x.mutable_grad();
    auto xv = x.data();
    auto g = o.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0f) gx[i] += g[i];  // subgradient 0 at x == 0
  });
}

Tensor Tape::maxpool2(const Tensor& input) {
  const auto in = dims4(input, "maxpool2");
  if (in.h % 2 || in.w % 2)
    throw ShapeError("maxpool2: extents must be even, got " + to_string(input.shape()));
  Tensor out = Tensor::zeros({in.n, in.c, in.h / 2, in.w / 2});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(out.numel());
  kernels::maxpool2_forward(input.data(), in, out.mutable_data(), *argmax);
  if (!needs_grad({&input})) return out;
  return record(OpKind::maxpool2, {input}, out, [input, argmax](const Tensor& o) {
    Tensor x = input;
    kernels::maxpool2_backward(*argmax, o.grad(), x.mutable_grad());
  });
}

Tensor Tape::upsample_nn(const Tensor& input) {
  const auto in = dims4(input, "upsample_nn");
  Tensor out = Tensor::zeros({in.n, in.c, in.h * 2, in.w * 2});
  kernels::upsample_nn_forward(input.data(), in, out.mutable_data());
  if (!needs_grad({&input})) return out;
  return record(OpKind::upsample_nn, {input}, out, [input, in](const Tensor& o) {
    Tensor x = input;
    kernels::upsample_nn_backward(o.grad(), in, x.mutable_grad());
  });
}

Tensor Tape::softmax_channels(const Tensor& input) {
  const auto in = dims4(input, "softmax_channels");
  if (in.c < 2) throw ShapeError("softmax_channels: needs at least 2 channels");
  Tensor out = Tensor::zeros(input.shape());
  kernels::softmax_channels_forward(input.data(), in, out.mutable_data());
  if (!needs_grad({&input})) return out;
  return record(OpKind::softmax_channels, {input}, out, [input, in](const Tensor& o) {
    Tensor x = input;
    kernels::softmax_channels_backward(o.data(), in, o.grad(), x.mutable_grad());
  });
}

Tensor Tape::concat_channels(const Tensor& a, const Tensor& b) {
  const auto da = dims4(a, "concat_channels");
  const auto db = dims4(b, "concat_channels");
  if (da.n != db.n || da.h != db.h || da.w != db.w)
    throw ShapeError("concat_channels: incompatible " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  Tensor out = Tensor::zeros({da.n, da.c + db.c, da.h, da.w});
  const std::size_t pa = static_cast<std::size_t>(da.c) * da.h * da.w;
  const std::size_t pb = static_cast<std::size_t>(db.c) * db.h * db.w;
  auto y = out.mutable_data();
  for (int n = 0; n < da.n; ++n) {
    std::copy_n(a.data().begin() + n * pa, pa, y.begin() + n * (pa + pb));
    std::copy_n(b.data().begin() + n * pb, pb, y.begin() + n * (pa + pb) + pa);
  }
  if (!needs_grad({&a, &b})) return out;
  return record(OpKind::concat_channels, {a, b}, out, [a, b, pa, pb, n = da.n](const Tensor& o) {
    Tensor ta = a, tb = b;
    auto g = o.grad();
    if (ta.requires_grad()) {
      auto ga = ta.mutable_grad();
      for (int i = 0; i < n; ++i)
        for (std::size_t j = 0; j < pa; ++j) ga[i * pa + j] += g[i * (pa + pb) + j];
    }
    if (tb.requires_grad()) {
      auto gb = tb.mutable_grad();
      for (int i = 0; i < n; ++i)
        for (std::size_t j = 0; j < pb; ++j) gb[i * pb + j] += g[i * (pa + pb) + pa + j];
    }
  });
}

Tensor Tape::slice_batch(const Tensor& input, int index) {
  if (input.rank() < 1 || index < 0 || index >= input.dim(0))
    throw ShapeError("slice_batch: index " + std::to_string(index) + " out of range for " +
                     to_string(input.shape()));
  Shape shape = input.shape();
  shape[0] = 1;
  const std::size_t len = numel(shape);
  auto src = input.data().subspan(static_cast<std::size_t>(index) * len, len);
  Tensor out = Tensor::from(shape, std::vector<float>(src.begin(), src.end()));
  if (!needs_grad({&input})) return out;
  return record(OpKind::slice_batch, {input}, out, [input, index, len](const Tensor& o) {
    Tensor x = input;
    auto gx = x.mutable_grad().subspan(static_cast<std::size_t>(index) * len, len);
    auto g = o.grad();
    for (std::size_t i = 0; i < len; ++i) gx[i] += g[i];
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  if (!needs_grad({&a, &b})) return out;
  return record(OpKind::add, {a, b}, out, [a, b](const Tensor& o) {
    for (Tensor t : {a, b}) {
      if (!t.requires_grad()) continue;
      auto gt = t.mutable_grad();
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += o.grad()[i];
    }
  });
}

Tensor Tape::scale(const Tensor& a, float factor) {
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * factor;
  if (!needs_grad({&a})) return out;
  return record(OpKind::scale, {a}, out, [a, factor](const Tensor& o) {
    Tensor t = a;
    auto gt = t.mutable_grad();
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += o.grad()[i] * factor;
  });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  if (!needs_grad({&a, &b})) return out;
  return record(OpKind::mul, {a, b}, out, [a, b](const Tensor& o) {
    Tensor ta = a, tb = b;
    if (ta.requires_grad()) {
      auto g = ta.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad()[i] * tb.data()[i];
    }
    if (tb.requires_grad()) {
      auto g = tb.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad()[i] * ta.data()[i];
    }
  });
}

Tensor Tape::sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (!needs_grad({&a})) return out;
  return record(OpKind::sum, {a}, out, [a](const Tensor& o) {
    Tensor t = a;
    const float g = o.grad()[0];
    for (float& v : t.mutable_grad()) v += g;
  });
}

}  // namespace geoseg
