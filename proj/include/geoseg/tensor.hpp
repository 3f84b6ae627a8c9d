#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace geoseg {

using Shape = std::vector<int>;

/// 64-byte aligned storage. Eigen's vectorized paths peel unaligned heads, so buffer
/// alignment would otherwise leak into the summation order and break bitwise repeatability.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};
using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float tensor. Copies are shallow handles onto shared storage, the way
/// autodiff frameworks expose activations; use `clone()` for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  int dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const float> data() const;
  /// Writable view. Only leaves that are not yet recorded on a tape should be mutated
  /// (optimizer updates, test perturbations).
  std::span<float> mutable_data();
  float item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const float> grad() const;
  /// Allocates a zero gradient buffer on first access.
  std::span<float> mutable_grad();
  void zero_grad();

  /// Unique identity of the storage; used as the node id on the tape.
  std::uint64_t id() const;

  Tensor clone(bool requires_grad = false) const;

 private:
  struct Impl {
    Shape shape;
    FloatBuffer data;
    FloatBuffer grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
  };
  friend class Tape;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
  const Impl& impl() const;
  Impl& impl();

  std::shared_ptr<Impl> impl_;
};

/// Value-identical copy that is a leaf of no graph: gradients never flow through it.
Tensor detach(const Tensor& t);

enum class PadMode { reflect, zero };

enum class OpKind {
  conv2d,
  relu,
  maxpool2,
  upsample_nn,
  softmax_channels,
  concat_channels,
  slice_batch,
  add,
  scale,
  mul,
  sum,
  bilinear_sample,
  cross_entropy,
  masked_l1,
};

const char* to_string(OpKind kind);

struct TapeEntry {
  OpKind kind;
  std::vector<std::uint64_t> inputs;
  std::uint64_t output = 0;
  std::vector<Tensor> saved;
  /// Reads the output gradient and accumulates into the gradients of the saved inputs.
  std::function<void(const Tensor& output)> backward;
  Tensor output_tensor;
};

/// Reverse-mode tape. Operations are methods so every result is either recorded here or,
/// for an inference tape, computed without bookkeeping.
///
/// An op is recorded only when at least one input requires a gradient. Backward may run
/// once; `reset()` clears the tape for reuse.
class Tape {
 public:
  enum class Mode { record, inference };

  explicit Tape(Mode mode = Mode::record) : mode_(mode) {}
  static Tape inference() { return Tape(Mode::inference); }

  bool recording() const noexcept { return mode_ == Mode::record; }

  /// Stride-1 same-size cross-correlation. `weight` is [Cout, Cin, k, k] with k in {1, 3}.
  Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, PadMode pad);
  Tensor relu(const Tensor& input);
  /// 2x2 non-overlapping max; ties go to the first position in scan order.
  Tensor maxpool2(const Tensor& input);
  Tensor upsample_nn(const Tensor& input);
  Tensor softmax_channels(const Tensor& input);
  Tensor concat_channels(const Tensor& a, const Tensor& b);
  /// Batch element `index` of a [B, ...] tensor as a [1, ...] tensor.
  Tensor slice_batch(const Tensor& input, int index);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, float factor);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor sum(const Tensor& a);

  /// Records an operation implemented outside the engine. `backward` receives the
  /// output (whose gradient is populated) and must accumulate into the gradients of the
  /// inputs that require one. Returns `output`, marked as requiring grad when recorded.
  Tensor record(OpKind kind, std::vector<Tensor> inputs, Tensor output,
                std::function<void(const Tensor& output)> backward);

  void backward(const Tensor& loss);
  void reset();

  std::span<const TapeEntry> entries() const noexcept { return entries_; }

 private:
  bool needs_grad(std::initializer_list<const Tensor*> inputs) const;

  Mode mode_;
  bool consumed_ = false;
  std::vector<TapeEntry> entries_;
};

}  // namespace geoseg
